//! Line-oriented `key = value` configuration with `[method]`, `[problem]`
//! and `[harness]` sections.
//!
//! ```text
//! [method]
//! method = gluon_mvr2
//! eta = 3.6e-4
//! beta = 0.2
//! q = 0.7
//! K = 5000
//!
//! [problem]
//! problem = logistic
//! norm = spectral
//! ```
//!
//! `#` starts a comment. `[method]` and `[problem]` are required; `[harness]`
//! is optional. Unknown keys, duplicate keys, keys that do not apply to the
//! selected problem and out-of-range values are errors carrying the line
//! number.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::harness::Experiment;
use crate::norms::NormKind;
use crate::optimizers::{self, Method, OptimizerConfig};
use crate::oracles::{
    LogisticRegression, LogisticSpec, MatrixFactorization, NoisyQuadratic, Problem, ProblemConstants, TwoLayerMlp,
};
use crate::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.9;
pub const DEFAULT_Q: f64 = 0.7;
pub const DEFAULT_BUDGET: usize = 5000;
pub const DEFAULT_SEEDS: usize = 10;
/// Muon-MVR momentum parameter when `eta` is explicit and `alpha` unset.
pub const DEFAULT_MUON_ALPHA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaSetting {
    /// Take `eta` (and unset `beta`, `alpha`, `q`) from the theorem schedule for `K`.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSection {
    pub method: Method,
    pub eta: EtaSetting,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub q: Option<f64>,
    pub budget: usize,
    /// `L1` used for the schedule cap under `eta = auto`.
    pub l1: f64,
    /// Distance bound `D` for the Muon-MVR schedule; derived from the problem when unset.
    pub d: Option<f64>,
}

impl Default for MethodSection {
    fn default() -> Self {
        MethodSection {
            method: Method::GluonMvr1,
            eta: EtaSetting::Fixed(3.6e-4),
            beta: None,
            alpha: None,
            q: None,
            budget: DEFAULT_BUDGET,
            l1: 0.0,
            d: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Logistic,
    Quadratic,
    Factorization,
    Mlp,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Logistic => "logistic",
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Factorization => "factorization",
            ProblemKind::Mlp => "mlp",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            ProblemKind::Logistic => &["n_points", "dim", "classes", "batch", "feature_scale", "teacher_scale", "reg"],
            ProblemKind::Quadratic => &["layers", "sigma", "eig_min", "eig_max"],
            ProblemKind::Factorization => &["rows", "cols", "rank", "n_points", "batch"],
            ProblemKind::Mlp => &["n_points", "dim", "hidden", "classes", "batch"],
        }
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ProblemKind::Logistic),
            "quadratic" => Ok(ProblemKind::Quadratic),
            "factorization" => Ok(ProblemKind::Factorization),
            "mlp" => Ok(ProblemKind::Mlp),
            _ => Err(Error::invalid(format!("unknown problem `{s}`"))),
        }
    }
}

const PROBLEM_COMMON_KEYS: &[&str] = &["problem", "norm", "t", "seed", "init_seed"];

/// Construction parameters of a synthetic problem; fields outside
/// `kind`'s key set are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub norm: NormKind,
    /// Radius scales `t_i`; a single value applies to every layer.
    pub t: Vec<f64>,
    /// Seed of the synthetic data.
    pub seed: u64,
    /// Seed of the starting point.
    pub init_seed: u64,
    pub n_points: usize,
    /// `None` means full batch.
    pub batch: Option<usize>,
    pub dim: usize,
    pub classes: usize,
    pub hidden: usize,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub layers: Vec<(usize, usize)>,
    pub sigma: f64,
    pub eig_min: f64,
    pub eig_max: f64,
    pub feature_scale: f64,
    pub teacher_scale: f64,
    pub reg: f64,
}

impl ProblemSpec {
    pub fn defaults(kind: ProblemKind) -> Self {
        let logistic = LogisticSpec::default();
        let (n_points, dim, classes) = match kind {
            ProblemKind::Factorization => (256, 0, 0),
            ProblemKind::Mlp => (512, 8, 3),
            _ => (logistic.n_points, logistic.dim, logistic.classes),
        };
        ProblemSpec {
            kind,
            norm: NormKind::Spectral,
            t: vec![1.0],
            seed: 0,
            init_seed: 0,
            n_points,
            batch: logistic.batch,
            dim,
            classes,
            hidden: 16,
            rows: 8,
            cols: 8,
            rank: 4,
            layers: vec![(8, 8), (4, 8)],
            sigma: 0.1,
            eig_min: 0.1,
            eig_max: 1.0,
            feature_scale: logistic.feature_scale,
            teacher_scale: logistic.teacher_scale,
            reg: logistic.reg,
        }
    }

    pub fn build(&self) -> Result<Problem> {
        let p = match self.kind {
            ProblemKind::Logistic => Problem::Logistic(LogisticRegression::synthetic(&LogisticSpec {
                n_points: self.n_points,
                dim: self.dim,
                classes: self.classes,
                feature_scale: self.feature_scale,
                teacher_scale: self.teacher_scale,
                reg: self.reg,
                batch: self.batch,
                norm: self.norm,
                t: 1.0,
                seed: self.seed,
            })?),
            ProblemKind::Quadratic => Problem::NoisyQuadratic(NoisyQuadratic::random(
                &self.layers,
                self.norm,
                self.sigma,
                self.eig_min,
                self.eig_max,
                self.seed,
            )?),
            ProblemKind::Factorization => Problem::Factorization(MatrixFactorization::synthetic(
                self.rows,
                self.cols,
                self.rank,
                self.n_points,
                self.batch,
                self.norm,
                self.seed,
            )?),
            ProblemKind::Mlp => Problem::Mlp(TwoLayerMlp::synthetic(
                self.n_points,
                self.dim,
                self.hidden,
                self.classes,
                self.batch,
                self.norm,
                self.seed,
            )?),
        };
        let p_len = p.shape().len();
        let t = match self.t.len() {
            1 => vec![self.t[0]; p_len],
            n if n == p_len => self.t.clone(),
            n => return Err(Error::invalid(format!("t lists {n} values for {p_len} layers"))),
        };
        let shape = p.shape().with_radius_scales(&t)?;
        p.with_shape(shape)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarnessSection {
    pub seeds: usize,
    pub first_seed: u64,
    /// Concurrent runs; 0 uses every available core.
    pub parallelism: usize,
    /// Budgets of the `rate` pipeline.
    pub budgets: Vec<usize>,
    /// Sweep grid axes; `None` uses the single value of the method section.
    pub sweep_beta: Vec<f64>,
    pub sweep_eta: Option<Vec<f64>>,
    pub sweep_q: Option<Vec<f64>>,
    pub instrument: bool,
    pub constants_samples: usize,
    pub constants_pairs: usize,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            seeds: DEFAULT_SEEDS,
            first_seed: 0,
            parallelism: 0,
            budgets: vec![500, 1000, 2000, 4000, 8000],
            sweep_beta: (1..=9).map(|i| i as f64 / 10.0).collect(),
            sweep_eta: None,
            sweep_q: None,
            instrument: false,
            constants_samples: 64,
            constants_pairs: 16,
        }
    }
}

impl HarnessSection {
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.first_seed + i).collect()
    }

    pub fn threads(&self) -> usize {
        if self.parallelism == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.parallelism
        }
    }
}

/// A parsed configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub method: MethodSection,
    pub problem: ProblemSpec,
    pub harness: HarnessSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            method: MethodSection::default(),
            problem: ProblemSpec::defaults(ProblemKind::Logistic),
            harness: HarnessSection::default(),
        }
    }
}

/// One `key = value` line after section resolution.
#[derive(Clone, Debug)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: Option<usize>,
}

fn parse_entries(text: &str) -> Result<(Vec<Entry>, Vec<String>)> {
    let mut entries = Vec::new();
    let mut sections: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::config(Some(line), "unterminated section header"))?
                .trim();
            if !matches!(name, "method" | "problem" | "harness") {
                return Err(Error::config(Some(line), format!("unknown section [{name}]")));
            }
            if sections.iter().any(|s| s == name) {
                return Err(Error::config(Some(line), format!("duplicate section [{name}]")));
            }
            sections.push(name.to_string());
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::config(Some(line), "expected `key = value`"))?;
        let section = current
            .clone()
            .ok_or_else(|| Error::config(Some(line), "key outside of any section"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::config(Some(line), "empty key"));
        }
        entries.push(Entry {
            section,
            key: key.to_string(),
            value: value.to_string(),
            line: Some(line),
        });
    }
    Ok((entries, sections))
}

fn num<T: FromStr>(e: &Entry) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| Error::config(e.line, format!("{}: cannot parse `{}`", e.key, e.value)))
}

fn float(e: &Entry) -> Result<f64> {
    let v: f64 = num(e)?;
    if !v.is_finite() {
        return Err(Error::config(e.line, format!("{} must be finite", e.key)));
    }
    Ok(v)
}

fn check(e: &Entry, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(e.line, format!("{} {what}, got {}", e.key, e.value)))
    }
}

fn positive(e: &Entry) -> Result<f64> {
    let v = float(e)?;
    check(e, v > 0.0, "must be positive")?;
    Ok(v)
}

fn count(e: &Entry) -> Result<usize> {
    let v: usize = num(e)?;
    check(e, v >= 1, "must be at least 1")?;
    Ok(v)
}

fn list<T>(e: &Entry, f: impl Fn(&Entry) -> Result<T>) -> Result<Vec<T>> {
    let out = e
        .value
        .split(',')
        .map(|s| {
            f(&Entry {
                value: s.trim().to_string(),
                ..e.clone()
            })
        })
        .collect::<Result<Vec<T>>>()?;
    check(e, !out.is_empty(), "must list at least one value")?;
    Ok(out)
}

fn boolean(e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(e.line, format!("{}: expected true or false", e.key))),
    }
}

fn dims(e: &Entry) -> Result<(usize, usize)> {
    let (r, c) = e
        .value
        .split_once('x')
        .ok_or_else(|| Error::config(e.line, format!("{}: expected ROWSxCOLS, got `{}`", e.key, e.value)))?;
    let sub = |s: &str| Entry { value: s.trim().to_string(), ..e.clone() };
    Ok((count(&sub(r))?, count(&sub(c))?))
}

fn apply_method(m: &mut MethodSection, e: &Entry) -> Result<()> {
    match e.key.as_str() {
        "method" => m.method = e.value.parse().map_err(|err: Error| Error::config(e.line, err.to_string()))?,
        "eta" => {
            m.eta = if e.value == "auto" {
                EtaSetting::Auto
            } else {
                EtaSetting::Fixed(positive(e)?)
            }
        }
        "beta" => {
            let v = float(e)?;
            check(e, (0.0..1.0).contains(&v), "must lie in [0, 1)")?;
            m.beta = Some(v);
        }
        "alpha" | "q" => {
            let v = float(e)?;
            check(e, v > 0.0 && v <= 1.0, "must lie in (0, 1]")?;
            if e.key == "q" {
                m.q = Some(v);
            } else {
                m.alpha = Some(v);
            }
        }
        "K" => m.budget = count(e)?,
        "l1" => {
            let v = float(e)?;
            check(e, v >= 0.0, "must be nonnegative")?;
            m.l1 = v;
        }
        "D" => m.d = Some(positive(e)?),
        _ => return Err(unknown(e)),
    }
    Ok(())
}

fn apply_problem(p: &mut ProblemSpec, e: &Entry) -> Result<()> {
    if !PROBLEM_COMMON_KEYS.contains(&e.key.as_str()) && !p.kind.keys().contains(&e.key.as_str()) {
        let known = ALL_PROBLEM_KEYS.contains(&e.key.as_str());
        return Err(if known {
            Error::config(e.line, format!("key `{}` does not apply to problem {}", e.key, p.kind.as_str()))
        } else {
            unknown(e)
        });
    }
    match e.key.as_str() {
        "problem" => {}
        "norm" => p.norm = e.value.parse().map_err(|err: Error| Error::config(e.line, err.to_string()))?,
        "t" => p.t = list(e, positive)?,
        "seed" => p.seed = num(e)?,
        "init_seed" => p.init_seed = num(e)?,
        "n_points" => p.n_points = count(e)?,
        "batch" => p.batch = if e.value == "full" { None } else { Some(count(e)?) },
        "dim" => p.dim = count(e)?,
        "classes" => {
            p.classes = num(e)?;
            check(e, p.classes >= 2, "must be at least 2")?;
        }
        "hidden" => p.hidden = count(e)?,
        "rows" => p.rows = count(e)?,
        "cols" => p.cols = count(e)?,
        "rank" => p.rank = count(e)?,
        "layers" => p.layers = list(e, dims)?,
        "sigma" => {
            p.sigma = float(e)?;
            check(e, p.sigma >= 0.0, "must be nonnegative")?;
        }
        "eig_min" => p.eig_min = positive(e)?,
        "eig_max" => p.eig_max = positive(e)?,
        "feature_scale" => p.feature_scale = positive(e)?,
        "teacher_scale" => {
            p.teacher_scale = float(e)?;
            check(e, p.teacher_scale >= 0.0, "must be nonnegative")?;
        }
        "reg" => {
            p.reg = float(e)?;
            check(e, p.reg >= 0.0, "must be nonnegative")?;
        }
        _ => return Err(unknown(e)),
    }
    Ok(())
}

const ALL_PROBLEM_KEYS: &[&str] = &[
    "n_points",
    "dim",
    "classes",
    "batch",
    "feature_scale",
    "teacher_scale",
    "reg",
    "layers",
    "sigma",
    "eig_min",
    "eig_max",
    "rows",
    "cols",
    "rank",
    "hidden",
];

fn apply_harness(h: &mut HarnessSection, e: &Entry) -> Result<()> {
    let unit = |e: &Entry| -> Result<f64> {
        let v = float(e)?;
        check(e, v > 0.0 && v <= 1.0, "must lie in (0, 1]")?;
        Ok(v)
    };
    match e.key.as_str() {
        "seeds" => h.seeds = count(e)?,
        "first_seed" => h.first_seed = num(e)?,
        "parallelism" => h.parallelism = num(e)?,
        "budgets" => h.budgets = list(e, count)?,
        "sweep_beta" => {
            h.sweep_beta = list(e, |e| {
                let v = float(e)?;
                check(e, (0.0..1.0).contains(&v), "must lie in [0, 1)")?;
                Ok(v)
            })?
        }
        "sweep_eta" => h.sweep_eta = Some(list(e, positive)?),
        "sweep_q" => h.sweep_q = Some(list(e, unit)?),
        "instrument" => h.instrument = boolean(e)?,
        "constants_samples" => h.constants_samples = count(e)?,
        "constants_pairs" => h.constants_pairs = count(e)?,
        _ => return Err(unknown(e)),
    }
    Ok(())
}

fn unknown(e: &Entry) -> Error {
    Error::config(e.line, format!("unknown key `{}` in [{}]", e.key, e.section))
}

/// Parses configuration text; see [`parse_config_with`] for overrides.
pub fn parse_config(text: &str) -> Result<Config> {
    parse_config_with(text, &[])
}

/// Parses `text`, then applies `section.key=value` overrides on top.
///
/// Overrides replace a key given in the text and may introduce keys or
/// sections of their own.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<Config> {
    let (mut entries, mut sections) = parse_entries(text)?;
    let n_lines = text.lines().count();

    let mut seen: Vec<(&str, &str, Option<usize>)> = Vec::new();
    for e in &entries {
        if let Some(prev) = seen.iter().find(|s| s.0 == e.section && s.1 == e.key) {
            return Err(Error::config(
                e.line,
                format!("duplicate key `{}` (first set at line {})", e.key, prev.2.unwrap_or(0)),
            ));
        }
        seen.push((&e.section, &e.key, e.line));
    }

    for o in overrides {
        let (path, value) = o
            .split_once('=')
            .ok_or_else(|| Error::config(None, format!("override `{o}`: expected section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::config(None, format!("override `{o}`: expected section.key=value")))?;
        if !matches!(section, "method" | "problem" | "harness") {
            return Err(Error::config(None, format!("override `{o}`: unknown section [{section}]")));
        }
        entries.retain(|e| !(e.section == section && e.key == key));
        entries.push(Entry {
            section: section.to_string(),
            key: key.to_string(),
            value: value.trim().to_string(),
            line: None,
        });
        if !sections.iter().any(|s| s == section) {
            sections.push(section.to_string());
        }
    }

    for required in ["method", "problem"] {
        if !sections.iter().any(|s| s == required) {
            return Err(Error::config(Some(n_lines.max(1)), format!("missing required section [{required}]")));
        }
    }

    let mut cfg = Config::default();
    let kind = match entries.iter().find(|e| e.section == "problem" && e.key == "problem") {
        Some(e) => e.value.parse().map_err(|err: Error| Error::config(e.line, err.to_string()))?,
        None => ProblemKind::Logistic,
    };
    cfg.problem = ProblemSpec::defaults(kind);
    for e in &entries {
        match e.section.as_str() {
            "method" => apply_method(&mut cfg.method, e)?,
            "problem" => apply_problem(&mut cfg.problem, e)?,
            _ => apply_harness(&mut cfg.harness, e)?,
        }
    }
    if cfg.problem.eig_min > cfg.problem.eig_max {
        return Err(Error::config(None, "eig_min must not exceed eig_max"));
    }
    Ok(cfg)
}

impl Config {
    pub fn build_problem(&self) -> Result<Problem> {
        self.problem.build()
    }

    pub fn experiment(&self) -> Result<Experiment> {
        Experiment::new(self.build_problem()?, self.problem.init_seed)
    }

    /// Constants consumed by `theorem_schedule` under `eta = auto`: `l1` on
    /// every layer and `D` as configured or `max(||X0||, ||X*||)`.
    pub fn schedule_constants(&self, problem: &Problem) -> Result<ProblemConstants> {
        let shape = problem.shape();
        let mut c = ProblemConstants::zeros(shape.len());
        c.l1_hat = vec![self.method.l1; shape.len()];
        c.d = match self.method.d {
            Some(d) => d,
            None => {
                let x0 = problem.initial_point(self.problem.init_seed);
                let mut d = shape.product_norm(&x0)?;
                if let Some(xs) = problem.known_minimizer() {
                    d = d.max(shape.product_norm(&xs)?);
                }
                d
            }
        };
        Ok(c)
    }

    /// The optimizer configuration for the configured budget.
    pub fn optimizer(&self, problem: &Problem) -> Result<OptimizerConfig> {
        self.optimizer_for_budget(problem, self.method.budget)
    }

    /// The optimizer configuration at `budget`; `eta = auto` re-derives the
    /// schedule for that budget, explicit `beta`/`alpha`/`q` still win.
    pub fn optimizer_for_budget(&self, problem: &Problem, budget: usize) -> Result<OptimizerConfig> {
        let m = &self.method;
        let cfg = match m.eta {
            EtaSetting::Fixed(eta) => match m.method {
                Method::MuonMvr => OptimizerConfig::muon_mvr(
                    eta,
                    m.alpha.unwrap_or(DEFAULT_MUON_ALPHA),
                    m.beta.unwrap_or(0.0),
                    budget,
                ),
                method => {
                    OptimizerConfig::new(method, eta, m.beta.unwrap_or(DEFAULT_BETA), m.q.unwrap_or(DEFAULT_Q), budget)
                }
            },
            EtaSetting::Auto => {
                let constants = self.schedule_constants(problem)?;
                let mut cfg = optimizers::theorem_schedule(m.method, budget, &constants, problem.shape())?;
                if let Some(b) = m.beta {
                    cfg.beta = b;
                    if m.method != Method::MuonMvr {
                        cfg.alpha = 1.0 - b;
                    }
                }
                if let (Some(a), Method::MuonMvr) = (m.alpha, m.method) {
                    cfg.alpha = a;
                }
                if let Some(q) = m.q {
                    cfg.q = q;
                }
                cfg
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Text that parses back to this configuration.
    ///
    /// Unset optional method keys stay unset so `eta = auto` resolves the
    /// same way; `resolved` is appended as comments.
    pub fn snapshot(&self, resolved: Option<&OptimizerConfig>) -> String {
        let mut s = String::new();
        let m = &self.method;
        let _ = writeln!(s, "[method]");
        let _ = writeln!(s, "method = {}", m.method.as_str());
        match m.eta {
            EtaSetting::Auto => {
                let _ = writeln!(s, "eta = auto");
            }
            EtaSetting::Fixed(v) => {
                let _ = writeln!(s, "eta = {v:?}");
            }
        }
        for (k, v) in [("beta", m.beta), ("alpha", m.alpha), ("q", m.q), ("D", m.d)] {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} = {v:?}");
            }
        }
        let _ = writeln!(s, "K = {}", m.budget);
        let _ = writeln!(s, "l1 = {:?}", m.l1);
        if let Some(r) = resolved {
            let _ = writeln!(
                s,
                "# resolved: eta = {:?}, beta = {:?}, alpha = {:?}, q = {:?}, K = {}",
                r.eta, r.beta, r.alpha, r.q, r.budget
            );
        }

        let p = &self.problem;
        let _ = writeln!(s, "\n[problem]");
        let _ = writeln!(s, "problem = {}", p.kind.as_str());
        let _ = writeln!(s, "norm = {}", p.norm.as_str());
        let _ = writeln!(s, "t = {}", join(&p.t));
        let _ = writeln!(s, "seed = {}", p.seed);
        let _ = writeln!(s, "init_seed = {}", p.init_seed);
        for &key in p.kind.keys() {
            let value = match key {
                "n_points" => p.n_points.to_string(),
                "batch" => p.batch.map_or("full".to_string(), |b| b.to_string()),
                "dim" => p.dim.to_string(),
                "classes" => p.classes.to_string(),
                "hidden" => p.hidden.to_string(),
                "rows" => p.rows.to_string(),
                "cols" => p.cols.to_string(),
                "rank" => p.rank.to_string(),
                "layers" => p.layers.iter().map(|(r, c)| format!("{r}x{c}")).collect::<Vec<_>>().join(","),
                "sigma" => format!("{:?}", p.sigma),
                "eig_min" => format!("{:?}", p.eig_min),
                "eig_max" => format!("{:?}", p.eig_max),
                "feature_scale" => format!("{:?}", p.feature_scale),
                "teacher_scale" => format!("{:?}", p.teacher_scale),
                "reg" => format!("{:?}", p.reg),
                _ => unreachable!("every problem key is serialised"),
            };
            let _ = writeln!(s, "{key} = {value}");
        }

        let h = &self.harness;
        let _ = writeln!(s, "\n[harness]");
        let _ = writeln!(s, "seeds = {}", h.seeds);
        let _ = writeln!(s, "first_seed = {}", h.first_seed);
        let _ = writeln!(s, "parallelism = {}", h.parallelism);
        let _ = writeln!(
            s,
            "budgets = {}",
            h.budgets.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "sweep_beta = {}", join(&h.sweep_beta));
        if let Some(v) = &h.sweep_eta {
            let _ = writeln!(s, "sweep_eta = {}", join(v));
        }
        if let Some(v) = &h.sweep_q {
            let _ = writeln!(s, "sweep_q = {}", join(v));
        }
        let _ = writeln!(s, "instrument = {}", h.instrument);
        let _ = writeln!(s, "constants_samples = {}", h.constants_samples);
        let _ = writeln!(s, "constants_pairs = {}", h.constants_pairs);
        s
    }

    /// The sweep grid: `sweep_eta x sweep_beta x sweep_q` at the configured budget.
    pub fn sweep_grid(&self, problem: &Problem) -> Result<Vec<OptimizerConfig>> {
        let base = self.optimizer(problem)?;
        let etas = self.harness.sweep_eta.clone().unwrap_or_else(|| vec![base.eta]);
        let qs = self.harness.sweep_q.clone().unwrap_or_else(|| vec![base.q]);
        let mut grid = Vec::new();
        for &eta in &etas {
            for &beta in &self.harness.sweep_beta {
                for &q in &qs {
                    let mut c = base.clone();
                    c.eta = eta;
                    c.beta = beta;
                    if c.method != Method::MuonMvr {
                        c.alpha = 1.0 - beta;
                    }
                    c.q = q;
                    c.validate()?;
                    grid.push(c);
                }
            }
        }
        Ok(grid)
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}
