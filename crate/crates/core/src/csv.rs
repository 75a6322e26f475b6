//! CSV outputs: per-run traces, sweep/rate summaries, lemma reports,
//! LMO checks and problem constants.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), so reading a
//! file back reproduces every value bit for bit. Lines end in `\n`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::analysis::LemmaReport;
use crate::harness::{CellSummary, RateFit, RunRecord};
use crate::norms::PropertyCheck;
use crate::oracles::ProblemConstants;
use crate::{Error, Result};

pub const TRACE_FIXED_COLUMNS: [&str; 4] = ["k", "f_value", "metric", "min_metric"];
pub const SUMMARY_HEADER: &str = "method,eta,beta,q,K,seed_count,mean_min_metric,std,slope,stderr";
pub const LEMMA_HEADER: &str = "lemma,params,lhs,rhs,holds,margin";
pub const LMO_HEADER: &str = "kind,check,trials,max_violation,passed";
pub const CONSTANTS_HEADER: &str = "quantity,layer,value";

/// Formats `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// `trace_<seed>.csv` contents: header then one row per iterate.
pub fn trace_csv(record: &RunRecord) -> String {
    let layers = record.rows.first().map_or(0, |r| r.layer_dual_norms.len());
    let mut s = TRACE_FIXED_COLUMNS.join(",");
    for i in 0..layers {
        let _ = write!(s, ",layer_dual_norm_{i}");
    }
    s.push('\n');
    for r in &record.rows {
        let _ = write!(s, "{},{},{},{}", r.k, fmt_f64(r.f_value), fmt_f64(r.metric), fmt_f64(r.min_metric));
        for d in &r.layer_dual_norms {
            let _ = write!(s, ",{}", fmt_f64(*d));
        }
        s.push('\n');
    }
    s
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_{seed}.csv")
}

/// One parsed trace row.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceCsvRow {
    pub k: usize,
    pub f_value: f64,
    pub metric: f64,
    pub min_metric: f64,
    pub layer_dual_norms: Vec<f64>,
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, column: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::invalid(format!("line {line}: bad {column} value `{field}`")))
}

/// Parses a trace file produced by [`trace_csv`].
pub fn parse_trace(text: &str) -> Result<Vec<TraceCsvRow>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::invalid("empty trace"))?
        .split(',')
        .collect();
    if header.len() < 4 || header[..4] != TRACE_FIXED_COLUMNS {
        return Err(Error::invalid("trace header must start with k,f_value,metric,min_metric"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::invalid(format!(
                "line {n}: expected {} fields, found {}",
                header.len(),
                fields.len()
            )));
        }
        rows.push(TraceCsvRow {
            k: parse_field(fields[0], n, "k")?,
            f_value: parse_field(fields[1], n, "f_value")?,
            metric: parse_field(fields[2], n, "metric")?,
            min_metric: parse_field(fields[3], n, "min_metric")?,
            layer_dual_norms: fields[4..]
                .iter()
                .map(|f| parse_field(f, n, "layer_dual_norm"))
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// One row of `summary.csv`; empty cells are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub q: Option<f64>,
    pub budget: Option<usize>,
    pub seed_count: usize,
    pub mean_min_metric: Option<f64>,
    pub std: Option<f64>,
    pub slope: Option<f64>,
    pub stderr: Option<f64>,
}

impl SummaryRow {
    pub fn from_cell(c: &CellSummary) -> Self {
        SummaryRow {
            method: c.config.method.as_str().to_string(),
            eta: Some(c.config.eta),
            beta: Some(c.config.beta),
            q: Some(c.config.q),
            budget: Some(c.config.budget),
            seed_count: c.seed_count,
            mean_min_metric: Some(c.mean_min_metric),
            std: Some(c.std_min_metric),
            slope: None,
            stderr: None,
        }
    }

    /// The closing row of a rate summary: fitted slope and its standard error.
    pub fn fit_row(method: &str, fit: &RateFit) -> Self {
        SummaryRow {
            method: method.to_string(),
            eta: None,
            beta: None,
            q: None,
            budget: None,
            seed_count: fit.seeds.iter().sum(),
            mean_min_metric: None,
            std: None,
            slope: Some(fit.slope),
            stderr: Some(fit.stderr),
        }
    }

    pub fn is_fit_row(&self) -> bool {
        self.slope.is_some()
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            fmt_opt(r.eta),
            fmt_opt(r.beta),
            fmt_opt(r.q),
            r.budget.map(|k| k.to_string()).unwrap_or_default(),
            r.seed_count,
            fmt_opt(r.mean_min_metric),
            fmt_opt(r.std),
            fmt_opt(r.slope),
            fmt_opt(r.stderr),
        );
    }
    s
}

fn opt<T: std::str::FromStr>(field: &str, line: usize, column: &str) -> Result<Option<T>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_field(field, line, column).map(Some)
    }
}

pub fn parse_summary(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(Error::invalid(format!("summary header must be `{SUMMARY_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::invalid(format!("line {n}: expected 10 fields, found {}", f.len())));
        }
        rows.push(SummaryRow {
            method: f[0].to_string(),
            eta: opt(f[1], n, "eta")?,
            beta: opt(f[2], n, "beta")?,
            q: opt(f[3], n, "q")?,
            budget: opt(f[4], n, "K")?,
            seed_count: parse_field(f[5], n, "seed_count")?,
            mean_min_metric: opt(f[6], n, "mean_min_metric")?,
            std: opt(f[7], n, "std")?,
            slope: opt(f[8], n, "slope")?,
            stderr: opt(f[9], n, "stderr")?,
        });
    }
    Ok(rows)
}

/// Rows of a rate summary: one per budget plus the fit row.
pub fn rate_rows(records: &[RunRecord], fit: &RateFit) -> Vec<SummaryRow> {
    let cells = crate::harness::summarize(records);
    let mut rows: Vec<SummaryRow> = fit
        .budgets
        .iter()
        .zip(&fit.metric_at_k)
        .zip(&fit.std_at_k)
        .map(|((&k, &m), &sd)| {
            let cell = cells.iter().find(|c| c.config.budget == k);
            SummaryRow {
                method: cell.map_or("", |c| c.config.method.as_str()).to_string(),
                eta: cell.map(|c| c.config.eta),
                beta: cell.map(|c| c.config.beta),
                q: cell.map(|c| c.config.q),
                budget: Some(k),
                seed_count: cell.map_or(0, |c| c.seed_count),
                mean_min_metric: Some(m),
                std: Some(sd),
                slope: None,
                stderr: None,
            }
        })
        .collect();
    let method = records.first().map_or("", |r| r.config.method.as_str());
    rows.push(SummaryRow::fit_row(method, fit));
    rows
}

pub fn lemma_csv(reports: &[LemmaReport]) -> String {
    let mut s = String::from(LEMMA_HEADER);
    s.push('\n');
    for r in reports {
        let params = r
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v:?}"))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.lemma.as_str(),
            params,
            fmt_f64(r.lhs),
            fmt_f64(r.rhs),
            r.holds,
            fmt_f64(r.margin)
        );
    }
    s
}

pub fn lmo_csv(checks: &[PropertyCheck]) -> String {
    let mut s = String::from(LMO_HEADER);
    s.push('\n');
    for c in checks {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            c.kind.as_str(),
            c.name,
            c.trials,
            fmt_f64(c.max_violation),
            c.passed()
        );
    }
    s
}

pub fn constants_csv(c: &ProblemConstants) -> String {
    let mut s = String::from(CONSTANTS_HEADER);
    s.push('\n');
    for (name, v) in [("sigma_hat", c.sigma_hat), ("d", c.d), ("l_hat", c.l_hat)] {
        let _ = writeln!(s, "{name},,{}", fmt_f64(v));
    }
    let _ = writeln!(s, "degenerate,,{}", u8::from(c.degenerate));
    for (name, v) in [
        ("sigma", &c.sigma_per_layer),
        ("delta", &c.delta_hat),
        ("rho", &c.rho),
        ("l0", &c.l0_hat),
        ("l1", &c.l1_hat),
    ] {
        for (i, x) in v.iter().enumerate() {
            let _ = writeln!(s, "{name},{i},{}", fmt_f64(*x));
        }
    }
    s
}

/// Creates `dir` and proves it writable by creating and removing a probe file.
pub fn ensure_writable_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}
