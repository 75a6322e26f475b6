use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gluon_mvr::config::{self, Config};
use gluon_mvr::csv::{self as out, SummaryRow};
use gluon_mvr::{analysis, harness, norms, oracles, Error, Matrix, NormKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "gluon-mvr", version, about = "LMO optimizers with momentum variance reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file; without it every documented default applies.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Number of seeds (overrides harness.seeds).
    #[arg(long, value_name = "N")]
    seeds: Option<usize>,
    /// Override a config entry, e.g. `--set method.K=1000`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// One run with the configured method and the first seed.
    Run(Common),
    /// Grid over eta x beta x q, every cell over all seeds.
    Sweep(Common),
    /// Theorem-schedule runs over the harness budgets and a log-log rate fit.
    Rate(Common),
    /// Evaluate the geometric-sum lemmas on their grids.
    VerifyLemmas(Common),
    /// Run the LMO property suite.
    CheckLmo {
        #[command(flatten)]
        common: Common,
        /// Random matrices per norm kind.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Largest row or column count.
        #[arg(long, default_value_t = 64)]
        max_dim: usize,
        /// Test fixture: run the suite against a max-entry rule with a flipped sign.
        #[arg(long, hide = true)]
        perturb_sign_rule: bool,
    },
    /// Monte-Carlo estimates of the problem constants.
    EstimateConstants(Common),
}

enum Failure {
    Usage(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load(common: &Common) -> Result<Config, Error> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?,
        None => "[method]\n[problem]\n".to_string(),
    };
    let mut cfg = config::parse_config_with(&text, &common.set)?;
    if let Some(n) = common.seeds {
        if n == 0 {
            return Err(Error::invalid("--seeds must be at least 1"));
        }
        cfg.harness.seeds = n;
    }
    Ok(cfg)
}

/// Parses the config and checks the output directory before any work starts.
fn prepare(common: &Common) -> Result<Config, Error> {
    let cfg = load(common)?;
    out::ensure_writable_dir(&common.out)?;
    Ok(cfg)
}

fn run(common: &Common) -> Outcome {
    let cfg = prepare(common)?;
    let exp = cfg.experiment()?;
    let opt = cfg.optimizer(&exp.problem)?;
    out::write_file(&common.out, "config.resolved", &cfg.snapshot(Some(&opt)))?;
    let seed = cfg.harness.first_seed;
    let record = harness::run_experiment(&opt, &exp, seed, cfg.harness.instrument)?;
    out::write_file(&common.out, &out::trace_file_name(seed), &out::trace_csv(&record))?;
    println!(
        "{} on {}: K={} seed={} min_metric={:.6e} final_f={:.6e} f_min={:.6e} ({})",
        opt.method.as_str(),
        record.problem,
        opt.budget,
        seed,
        record.min_metric(),
        record.final_f,
        record.f_min,
        exp.f_min_source.as_str()
    );
    if let Some(trace) = &record.trace {
        let gap = analysis::recursion_discrepancy(trace, &opt)?;
        println!("momentum recursion discrepancy: {gap:.3e}");
        if !analysis::check_momentum_recursion(trace, &opt)? {
            return Err(Failure::Verification(format!("momentum recursion discrepancy {gap:.3e}")));
        }
    }
    if let Some(msg) = &record.aborted {
        return Err(Failure::Verification(format!("run aborted: {msg}")));
    }
    Ok(())
}

fn sweep(common: &Common) -> Outcome {
    let cfg = prepare(common)?;
    let exp = cfg.experiment()?;
    let grid = cfg.sweep_grid(&exp.problem)?;
    out::write_file(&common.out, "config.resolved", &cfg.snapshot(None))?;
    let records = harness::sweep(&grid, &exp, &cfg.harness.seed_list(), cfg.harness.threads())?;
    for (i, cell) in grid.iter().enumerate() {
        let dir = common.out.join(format!("cell_{i:03}"));
        for r in records.iter().filter(|r| r.config == *cell) {
            out::write_file(&dir, &out::trace_file_name(r.seed), &out::trace_csv(r))?;
        }
    }
    let cells = harness::summarize(&records);
    let rows: Vec<SummaryRow> = cells.iter().map(SummaryRow::from_cell).collect();
    out::write_file(&common.out, "summary.csv", &out::summary_csv(&rows))?;
    let aborted: usize = cells.iter().map(|c| c.aborted).sum();
    println!("{} cells x {} seeds, {aborted} aborted runs", grid.len(), cfg.harness.seeds);
    Ok(())
}

fn rate(common: &Common) -> Outcome {
    let cfg = prepare(common)?;
    let exp = cfg.experiment()?;
    let constants = cfg.schedule_constants(&exp.problem)?;
    out::write_file(&common.out, "config.resolved", &cfg.snapshot(None))?;
    let (fit, records) = harness::rate_experiment(
        cfg.method.method,
        &exp,
        &cfg.harness.budgets,
        &cfg.harness.seed_list(),
        &constants,
        cfg.harness.threads(),
    )?;
    for r in &records {
        let dir = common.out.join(format!("K_{}", r.config.budget));
        out::write_file(&dir, &out::trace_file_name(r.seed), &out::trace_csv(r))?;
    }
    out::write_file(&common.out, "summary.csv", &out::summary_csv(&out::rate_rows(&records, &fit)))?;
    println!(
        "{}: slope {:.4} +/- {:.4} over K = {:?}",
        cfg.method.method.as_str(), fit.slope, fit.stderr, fit.budgets
    );
    Ok(())
}

fn verify_lemmas(common: &Common) -> Outcome {
    out::ensure_writable_dir(&common.out)?;
    let reports = analysis::lemma_grid()?;
    out::write_file(&common.out, "lemmas.csv", &out::lemma_csv(&reports))?;
    let mut failed = 0;
    for lemma in [
        analysis::LemmaId::SumAlpha,
        analysis::LemmaId::SumT,
        analysis::LemmaId::GeomV,
        analysis::LemmaId::GeomDecay,
    ] {
        let rows: Vec<_> = reports.iter().filter(|r| r.lemma == lemma).collect();
        let bad = rows.iter().filter(|r| !r.holds).count();
        println!("{}: {}/{} hold", lemma.as_str(), rows.len() - bad, rows.len());
        failed += bad;
    }
    if failed > 0 {
        return Err(Failure::Verification(format!("{failed} lemma instances fail")));
    }
    Ok(())
}

/// Max-entry rule with the sign flipped on negative entries.
fn perturbed_direction(kind: NormKind, m: &Matrix) -> gluon_mvr::Result<Matrix> {
    match kind {
        NormKind::MaxEntry => Ok(m.map(|v| if v == 0.0 { 0.0 } else { 1.0 })),
        _ => norms::lmo_direction(kind, m),
    }
}

fn check_lmo(common: &Common, trials: usize, max_dim: usize, perturb: bool) -> Outcome {
    let seed = if common.config.is_some() || !common.set.is_empty() {
        load(common)?.harness.first_seed
    } else {
        0
    };
    out::ensure_writable_dir(&common.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = if perturb {
        norms::lmo_property_suite(trials, max_dim, &mut rng, perturbed_direction)?
    } else {
        norms::lmo_property_suite(trials, max_dim, &mut rng, norms::lmo_direction)?
    };
    out::write_file(&common.out, "lmo_checks.csv", &out::lmo_csv(&checks))?;
    let mut failed = 0;
    for c in &checks {
        println!(
            "{:<10} {:<20} {}  max violation {:.3e}",
            c.kind.as_str(),
            c.name,
            if c.passed() { "ok" } else { "FAIL" },
            c.max_violation
        );
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        return Err(Failure::Verification(format!("{failed} LMO checks fail")));
    }
    Ok(())
}

fn estimate_constants(common: &Common) -> Outcome {
    let cfg = prepare(common)?;
    let problem = cfg.build_problem()?;
    out::write_file(&common.out, "config.resolved", &cfg.snapshot(None))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.harness.first_seed);
    let c = oracles::estimate_constants(
        &problem,
        cfg.harness.constants_samples,
        cfg.harness.constants_pairs,
        &mut rng,
    )?;
    out::write_file(&common.out, "constants.csv", &out::constants_csv(&c))?;
    println!(
        "sigma_hat={:.4e} D={:.4e} L_hat={:.4e} l0={:?} l1={:?}",
        c.sigma_hat, c.d, c.l_hat, c.l0_hat, c.l1_hat
    );
    if c.degenerate {
        eprintln!("warning: every probed gradient vanished; constants are zero");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(c) => run(c),
        Command::Sweep(c) => sweep(c),
        Command::Rate(c) => rate(c),
        Command::VerifyLemmas(c) => verify_lemmas(c),
        Command::CheckLmo {
            common,
            trials,
            max_dim,
            perturb_sign_rule,
        } => check_lmo(common, *trials, *max_dim, *perturb_sign_rule),
        Command::EstimateConstants(c) => estimate_constants(c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
