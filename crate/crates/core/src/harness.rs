//! Experiment runner: seeded runs, sweeps over configurations, the
//! stationarity metric and empirical rate fits.

use std::time::Instant;

use rayon::prelude::*;

use crate::analysis::{self, MomentumErrorTrace};
use crate::optimizers::{self, Method, OptimizerConfig};
use crate::oracles::{ParamVector, Problem, ProblemConstants};
use crate::{Error, Result};

/// Number of gradient steps in the reference run that estimates `inf f`.
pub const REFERENCE_STEPS: usize = 3_000;

/// Where `f_min` came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FMinSource {
    Analytic,
    ReferenceRun,
}

impl FMinSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FMinSource::Analytic => "analytic",
            FMinSource::ReferenceRun => "reference_run",
        }
    }
}

/// A problem with a fixed starting point and a baseline for `Delta^0`.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub problem: Problem,
    pub x0: ParamVector,
    pub f_min: f64,
    pub f_min_source: FMinSource,
}

impl Experiment {
    /// Uses `problem.initial_point(init_seed)` and the analytic minimum when
    /// known, else the best value of a deterministic reference run.
    pub fn new(problem: Problem, init_seed: u64) -> Result<Self> {
        let x0 = problem.initial_point(init_seed);
        Experiment::with_start(problem, x0)
    }

    pub fn with_start(problem: Problem, x0: ParamVector) -> Result<Self> {
        problem.shape().check(&x0)?;
        let (f_min, f_min_source) = match problem.known_minimum() {
            Some(v) => (v, FMinSource::Analytic),
            None => (reference_minimum(&problem, &x0, REFERENCE_STEPS)?, FMinSource::ReferenceRun),
        };
        Ok(Experiment { problem, x0, f_min, f_min_source })
    }
}

/// Lowest value reached by full-gradient descent with Armijo backtracking.
pub fn reference_minimum(problem: &Problem, x0: &ParamVector, steps: usize) -> Result<f64> {
    let mut x = x0.clone();
    let mut f = problem.value(&x)?;
    let mut lr = 1.0;
    for _ in 0..steps {
        let g = problem.full_grad(&x)?;
        let gg = g.sq_norm();
        if gg == 0.0 {
            break;
        }
        lr *= 2.0;
        loop {
            let mut y = x.clone();
            y.axpy(-lr, &g);
            let fy = problem.value(&y)?;
            if fy <= f - 0.5 * lr * gg {
                x = y;
                f = fy;
                break;
            }
            lr *= 0.5;
            if lr < 1e-16 {
                return Ok(f);
            }
        }
    }
    Ok(f)
}

/// `sum_i t_i ||grad_i f(X)||_(i)*` with the per-layer dual norms.
pub fn stationarity_metric_parts(problem: &Problem, x: &ParamVector) -> Result<(f64, Vec<f64>)> {
    metric_from_grad(problem, &problem.full_grad(x)?)
}

fn metric_from_grad(problem: &Problem, g: &ParamVector) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut parts = Vec::with_capacity(g.len());
    for (layer, b) in problem.shape().layers().iter().zip(&g.blocks) {
        let d = crate::norms::dual_norm(layer.norm, b)?;
        total += layer.t * d;
        parts.push(d);
    }
    Ok((total, parts))
}

pub fn stationarity_metric(problem: &Problem, x: &ParamVector) -> Result<f64> {
    Ok(stationarity_metric_parts(problem, x)?.0)
}

/// One iterate's measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub f_value: f64,
    pub metric: f64,
    pub min_metric: f64,
    pub layer_dual_norms: Vec<f64>,
    /// `||M^k - grad f(X^k)||_2^2` for the momentum used at step `k`.
    pub momentum_error_sq: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: OptimizerConfig,
    pub problem: String,
    pub seed: u64,
    /// Rows for `k = 0, ..., K - 1` (fewer if the run aborted).
    pub rows: Vec<TraceRow>,
    /// `f(X^K)` after the last step.
    pub final_f: f64,
    /// `f(X^0) - f_min`.
    pub delta0: f64,
    pub f_min: f64,
    /// Largest `||X_i^{k+1} - X_i^k|| - radius_i` over all steps.
    pub max_ball_excess: f64,
    pub aborted: Option<String>,
    pub wall_time_secs: f64,
    pub trace: Option<MomentumErrorTrace>,
}

impl RunRecord {
    /// `min_k metric` over the recorded rows.
    pub fn min_metric(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.min_metric)
    }

    pub fn f_gap(&self) -> f64 {
        self.final_f - self.f_min
    }
}

/// Runs `config.budget` steps from the experiment's start point.
///
/// A non-finite iterate stops the run; the record keeps the rows so far and
/// the diagnostic in `aborted`.
pub fn run_experiment(config: &OptimizerConfig, exp: &Experiment, seed: u64, instrument: bool) -> Result<RunRecord> {
    let started = Instant::now();
    let problem = &exp.problem;
    let mut state = optimizers::init_state(config, problem, exp.x0.clone(), seed)?;
    let f0 = problem.value(&exp.x0)?;
    let mut rows = Vec::with_capacity(config.budget);
    let mut trace_steps = Vec::new();
    let mut min_metric = f64::INFINITY;
    let mut max_ball_excess = f64::NEG_INFINITY;
    let mut aborted = None;

    for _ in 0..config.budget {
        let (x_k, x_prev) = (state.x.clone(), state.x_prev.clone());
        let f_value = problem.value(&x_k)?;
        let grad = problem.full_grad(&x_k)?;
        let (metric, layer_dual_norms) = metric_from_grad(problem, &grad)?;
        let report = match optimizers::step(&mut state, config, problem) {
            Ok(r) => r,
            Err(Error::NonFinite(k)) => {
                aborted = Some(format!("non-finite iterate at step {k}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if !(f_value.is_finite() && metric.is_finite()) {
            aborted = Some(format!("non-finite objective at step {}", report.k));
            break;
        }
        min_metric = min_metric.min(metric);
        max_ball_excess = max_ball_excess.max(report.ball_excess());
        let momentum_error_sq = state.momentum.sub(&grad).sq_norm();
        rows.push(TraceRow {
            k: report.k,
            f_value,
            metric,
            min_metric,
            layer_dual_norms,
            momentum_error_sq,
        });
        if instrument {
            trace_steps.push(analysis::trace_step(
                problem,
                config,
                report.k,
                &x_k,
                &x_prev,
                &report.sample,
                &state.momentum,
                state.estimator.as_ref(),
            )?);
        }
    }

    let final_f = if aborted.is_none() { problem.value(&state.x)? } else { f64::NAN };
    Ok(RunRecord {
        config: config.clone(),
        problem: problem.name().to_string(),
        seed,
        rows,
        final_f,
        delta0: f0 - exp.f_min,
        f_min: exp.f_min,
        max_ball_excess,
        aborted,
        wall_time_secs: started.elapsed().as_secs_f64(),
        trace: instrument.then(|| MomentumErrorTrace { method: config.method, steps: trace_steps }),
    })
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

/// Runs every `(config, seed)` pair with at most `parallelism` concurrent runs.
///
/// Records come back cell-major in grid order and seed order, independent of
/// scheduling. A failing cell is recorded as aborted.
pub fn sweep(grid: &[OptimizerConfig], exp: &Experiment, seeds: &[u64], parallelism: usize) -> Result<Vec<RunRecord>> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one config and one seed"));
    }
    let tasks: Vec<(&OptimizerConfig, u64)> = grid
        .iter()
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = pool(parallelism)?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|&(cfg, seed)| {
                run_experiment(cfg, exp, seed, false).unwrap_or_else(|e| RunRecord {
                    config: cfg.clone(),
                    problem: exp.problem.name().to_string(),
                    seed,
                    rows: Vec::new(),
                    final_f: f64::NAN,
                    delta0: f64::NAN,
                    f_min: exp.f_min,
                    max_ball_excess: f64::NAN,
                    aborted: Some(e.to_string()),
                    wall_time_secs: 0.0,
                    trace: None,
                })
            })
            .collect()
    }))
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregate of one sweep cell over its seeds.
#[derive(Clone, Debug)]
pub struct CellSummary {
    pub config: OptimizerConfig,
    pub seed_count: usize,
    pub aborted: usize,
    pub mean_min_metric: f64,
    pub std_min_metric: f64,
    pub mean_final_f: f64,
    pub std_final_f: f64,
}

/// Groups records by configuration (first-seen order) and summarises them.
pub fn summarize(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut cells: Vec<(OptimizerConfig, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match cells.iter_mut().find(|(c, _)| *c == r.config) {
            Some((_, v)) => v.push(r),
            None => cells.push((r.config.clone(), vec![r])),
        }
    }
    cells
        .into_iter()
        .map(|(config, rs)| {
            let ok: Vec<&&RunRecord> = rs.iter().filter(|r| r.aborted.is_none()).collect();
            let mins: Vec<f64> = ok.iter().map(|r| r.min_metric()).collect();
            let finals: Vec<f64> = ok.iter().map(|r| r.final_f).collect();
            let (mean_min_metric, std_min_metric) = mean_std(&mins);
            let (mean_final_f, std_final_f) = mean_std(&finals);
            CellSummary {
                config,
                seed_count: rs.len(),
                aborted: rs.len() - ok.len(),
                mean_min_metric,
                std_min_metric,
                mean_final_f,
                std_final_f,
            }
        })
        .collect()
}

/// Least-squares exponent of `mean min-metric ~ c K^slope`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateFit {
    pub budgets: Vec<usize>,
    pub metric_at_k: Vec<f64>,
    pub std_at_k: Vec<f64>,
    pub seeds: Vec<usize>,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// Fits `log(mean) = intercept + slope log K` over per-budget seed values.
pub fn fit_rate(groups: &[(usize, Vec<f64>)]) -> Result<RateFit> {
    let mut budgets: Vec<usize> = groups.iter().map(|g| g.0).collect();
    budgets.sort_unstable();
    budgets.dedup();
    if budgets.len() < 3 || budgets.len() != groups.len() {
        return Err(Error::invalid("rate fit needs at least 3 distinct budgets"));
    }
    if groups.iter().any(|g| g.1.len() < 5) {
        return Err(Error::invalid("rate fit needs at least 5 seeds per budget"));
    }
    let mut sorted: Vec<&(usize, Vec<f64>)> = groups.iter().collect();
    sorted.sort_by_key(|g| g.0);
    let mut metric_at_k = Vec::new();
    let mut std_at_k = Vec::new();
    for g in &sorted {
        let (m, s) = mean_std(&g.1);
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::invalid(format!("budget {}: mean metric must be positive", g.0)));
        }
        metric_at_k.push(m);
        std_at_k.push(s);
    }
    let xs: Vec<f64> = budgets.iter().map(|&k| (k as f64).ln()).collect();
    let ys: Vec<f64> = metric_at_k.iter().map(|m| m.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(RateFit {
        budgets,
        metric_at_k,
        std_at_k,
        seeds: sorted.iter().map(|g| g.1.len()).collect(),
        slope,
        intercept,
        stderr,
    })
}

/// Runs `method` with its theorem schedule at every budget and fits the rate.
pub fn rate_experiment(
    method: Method,
    exp: &Experiment,
    budgets: &[usize],
    seeds: &[u64],
    constants: &ProblemConstants,
    parallelism: usize,
) -> Result<(RateFit, Vec<RunRecord>)> {
    let grid = budgets
        .iter()
        .map(|&k| optimizers::theorem_schedule(method, k, constants, exp.problem.shape()))
        .collect::<Result<Vec<_>>>()?;
    let records = sweep(&grid, exp, seeds, parallelism)?;
    if let Some(bad) = records.iter().find(|r| r.aborted.is_some()) {
        return Err(Error::invalid(format!(
            "run K={} seed={} aborted: {}",
            bad.config.budget,
            bad.seed,
            bad.aborted.as_deref().unwrap_or("")
        )));
    }
    let groups: Vec<(usize, Vec<f64>)> = budgets
        .iter()
        .map(|&k| {
            (
                k,
                records
                    .iter()
                    .filter(|r| r.config.budget == k)
                    .map(RunRecord::min_metric)
                    .collect(),
            )
        })
        .collect();
    Ok((fit_rate(&groups)?, records))
}

/// Mean over records of `||M^k - grad f(X^k)||_2^2` at step `k`.
pub fn mean_momentum_error(records: &[RunRecord], k: usize) -> Result<f64> {
    let vals: Vec<f64> = records
        .iter()
        .map(|r| {
            r.rows
                .get(k)
                .map(|row| row.momentum_error_sq)
                .ok_or_else(|| Error::invalid(format!("run seed {} has no row {k}", r.seed)))
        })
        .collect::<Result<_>>()?;
    Ok(mean_std(&vals).0)
}
