//! Numeric checks of the geometric-sum lemmas and of the closed-form
//! momentum-error expansions used in the convergence proofs.

use std::collections::BTreeMap;
use std::fmt;

use crate::oracles::{ParamVector, Problem, Sample};
use crate::optimizers::{self, Method, OptimizerConfig};
use crate::{Error, Result};

/// Slack in `holds = lhs <= rhs + HOLDS_SLACK`.
pub const HOLDS_SLACK: f64 = 1e-12;

/// Largest `k` for which the quadratic-time cross-check is run.
pub const NAIVE_CHECK_MAX_K: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LemmaId {
    SumAlpha,
    SumT,
    GeomV,
    GeomDecay,
}

impl LemmaId {
    pub fn as_str(self) -> &'static str {
        match self {
            LemmaId::SumAlpha => "sum_alpha",
            LemmaId::SumT => "sum_t",
            LemmaId::GeomV => "geom_v",
            LemmaId::GeomDecay => "geom_decay",
        }
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaReport {
    pub lemma: LemmaId,
    pub params: BTreeMap<String, f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub margin: f64,
}

impl LemmaReport {
    fn new(lemma: LemmaId, params: &[(&str, f64)], lhs: f64, rhs: f64) -> Self {
        LemmaReport {
            lemma,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            lhs,
            rhs,
            holds: lhs <= rhs + HOLDS_SLACK,
            margin: rhs - lhs,
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Sum that is either plain or compensated, chosen at run time.
struct Acc {
    plain: f64,
    comp: Compensated,
    compensated: bool,
}

impl Acc {
    fn new(compensated: bool) -> Self {
        Acc { plain: 0.0, comp: Compensated::default(), compensated }
    }

    fn add(&mut self, v: f64) {
        if self.compensated {
            self.comp.add(v);
        } else {
            self.plain += v;
        }
    }

    fn value(&self) -> f64 {
        if self.compensated {
            self.comp.value()
        } else {
            self.plain
        }
    }
}

fn two_thirds_power_inv(n: usize) -> f64 {
    let c = crate::optimizers::exact_cbrt(n as f64);
    1.0 / (c * c)
}

fn log_bound(k: usize) -> f64 {
    12.0 + (2.0 * std::f64::consts::E.powi(3)).sqrt() * (k as f64).ln()
}

/// `sum_{k<K} (k+1)^{-2/3} sqrt(sum_{tau=first}^{k} (beta^{(tau+1):k} a^tau)^2)`
/// with `a^tau = (tau+1)^{-2/3}` and `beta^k = 1 - (k+1)^{-2/3}`.
fn decreasing_sum(budget: usize, first: usize, compensated: bool) -> f64 {
    let mut inner = 0.0;
    let mut outer = Acc::new(compensated);
    for k in 0..budget {
        let a = two_thirds_power_inv(k + 1);
        let beta = 1.0 - a;
        inner *= beta * beta;
        if k >= first {
            inner += a * a;
        }
        outer.add(a * inner.sqrt());
    }
    outer.value()
}

/// Same quantity with every product and inner sum recomputed from scratch.
#[cfg(test)]
fn decreasing_sum_naive(budget: usize, first: usize) -> f64 {
    let beta = |k: usize| 1.0 - two_thirds_power_inv(k + 1);
    let mut total = 0.0;
    for k in 0..budget {
        let mut inner = 0.0;
        for tau in first..=k {
            let prod: f64 = ((tau + 1)..=k).map(beta).product();
            inner += (prod * two_thirds_power_inv(tau + 1)).powi(2);
        }
        total += two_thirds_power_inv(k + 1) * inner.sqrt();
    }
    total
}

/// Decreasing-step weight sum against `12 + sqrt(2 e^3) ln K`.
pub fn verify_lemma_sum_alpha(budget: usize) -> Result<LemmaReport> {
    sum_alpha_with(budget, false)
}

fn sum_alpha_with(budget: usize, compensated: bool) -> Result<LemmaReport> {
    if budget == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let lhs = decreasing_sum(budget, 0, compensated);
    Ok(LemmaReport::new(LemmaId::SumAlpha, &[("K", budget as f64)], lhs, log_bound(budget)))
}

/// Radius-weighted sum (inner sum from `tau = 1`) against `t (12 + sqrt(2 e^3) ln K)`.
pub fn verify_lemma_sum_t(budget: usize, t: f64) -> Result<LemmaReport> {
    sum_t_with(budget, t, false)
}

fn sum_t_with(budget: usize, t: f64, compensated: bool) -> Result<LemmaReport> {
    if budget == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid("t must be positive"));
    }
    let lhs = t * decreasing_sum(budget, 1, compensated);
    Ok(LemmaReport::new(
        LemmaId::SumT,
        &[("K", budget as f64), ("t", t)],
        lhs,
        t * log_bound(budget),
    ))
}

fn check_alpha_q(alpha: f64, q: f64, k: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid("q must lie in (0, 1]"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(())
}

/// `sum_j a^2 b^{2k-2j} c^j + 2 sum_{j<s} a^2 b^{2k-2j} v^{s-j} c^j` with
/// `b = 1 - alpha`, `v = (1-q)/b`; `c = 1` gives the first lemma, `c = 1 - q`
/// the second. Terms are evaluated as `b^{2(k-s)} (b(1-q))^{s-j} c^j` so no
/// intermediate power of `v` can overflow.
fn geom_lhs(alpha: f64, q: f64, k: usize, c: f64, compensated: bool) -> f64 {
    let beta = 1.0 - alpha;
    let r = beta * (1.0 - q);
    let mut diag = Acc::new(compensated);
    let mut cross = Acc::new(compensated);
    // tail = sum_{j<s} r^{s-j} c^j, carried from s to s+1.
    let mut tail = 0.0;
    let mut c_pow = 1.0;
    for s in 1..=k {
        c_pow *= c;
        let w = beta.powi(2 * (k - s) as i32);
        diag.add(w * c_pow);
        cross.add(w * tail);
        tail = r * (tail + c_pow);
    }
    alpha * alpha * (diag.value() + 2.0 * cross.value())
}

#[cfg(test)]
fn geom_lhs_naive(alpha: f64, q: f64, k: usize, c: f64) -> f64 {
    let beta = 1.0 - alpha;
    let v = (1.0 - q) / beta;
    let mut total = 0.0;
    for j in 1..=k {
        let base = alpha * alpha * beta.powi(2 * (k - j) as i32) * c.powi(j as i32);
        total += base;
        for s in (j + 1)..=k {
            total += 2.0 * base * v.powi((s - j) as i32);
        }
    }
    total
}

/// Double geometric sum against `2 alpha / ((2 - alpha)(alpha + beta q))`.
pub fn verify_lemma_geom_v(alpha: f64, q: f64, k: usize) -> Result<LemmaReport> {
    geom_v_with(alpha, q, k, false)
}

fn geom_v_with(alpha: f64, q: f64, k: usize, compensated: bool) -> Result<LemmaReport> {
    check_alpha_q(alpha, q, k)?;
    let beta = 1.0 - alpha;
    let lhs = geom_lhs(alpha, q, k, 1.0, compensated);
    let rhs = 2.0 * alpha / ((2.0 - alpha) * (alpha + beta * q));
    Ok(LemmaReport::new(LemmaId::GeomV, &[("alpha", alpha), ("q", q), ("k", k as f64)], lhs, rhs))
}

/// `(1-q)^j`-weighted double sum against `2 alpha (1-q)^{k+1} / (v + alpha - 1)`.
///
/// Requires `q < alpha < 1`.
pub fn verify_lemma_geom_decay(alpha: f64, q: f64, k: usize) -> Result<LemmaReport> {
    geom_decay_with(alpha, q, k, false)
}

fn geom_decay_with(alpha: f64, q: f64, k: usize, compensated: bool) -> Result<LemmaReport> {
    check_alpha_q(alpha, q, k)?;
    if q >= alpha {
        return Err(Error::invalid("geom_decay requires q < alpha"));
    }
    let beta = 1.0 - alpha;
    let v = (1.0 - q) / beta;
    let lhs = geom_lhs(alpha, q, k, 1.0 - q, compensated);
    let rhs = 2.0 * alpha * (1.0 - q).powi(k as i32 + 1) / (v + alpha - 1.0);
    Ok(LemmaReport::new(LemmaId::GeomDecay, &[("alpha", alpha), ("q", q), ("k", k as f64)], lhs, rhs))
}

/// Budgets used by the `sum_alpha` / `sum_t` grids.
pub const LEMMA_BUDGETS: [usize; 5] = [1, 10, 100, 1_000, 10_000];
/// Inner indices used by the geometric-sum grids.
pub const LEMMA_KS: [usize; 3] = [1, 10, 100];

/// `0.05, 0.10, ..., 0.95`.
pub fn alpha_q_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

/// Every report of the four lemma grids, in a fixed order.
pub fn lemma_grid() -> Result<Vec<LemmaReport>> {
    let mut out = Vec::new();
    for &k in &LEMMA_BUDGETS {
        out.push(verify_lemma_sum_alpha(k)?);
    }
    for &k in &LEMMA_BUDGETS {
        out.push(verify_lemma_sum_t(k, 1.0)?);
    }
    let grid = alpha_q_grid();
    for &k in &LEMMA_KS {
        for &a in &grid {
            for &q in &grid {
                out.push(verify_lemma_geom_v(a, q, k)?);
            }
        }
    }
    for &k in &LEMMA_KS {
        for &a in &grid {
            for &q in grid.iter().filter(|&&q| q < a) {
                out.push(verify_lemma_geom_decay(a, q, k)?);
            }
        }
    }
    Ok(out)
}

/// Error quantities of one optimizer step `k`.
///
/// With `e(X) = grad f_xi(X) - grad f(X)` under the step's sample:
/// `mu = M^k - grad f(X^k)`, `fresh = e(X^k)`, `gamma` is the estimator error
/// `g^k - grad f(X^k)` for MVR-2/3 and `fresh` otherwise,
/// `z = e(X^k) - e(X^{k-1})`, `s = grad f(X^{k-1}) - grad f(X^k)` and
/// `delta = e(X^k) - (1 - alpha) e(X^{k-1})`. At `k = 0` only `mu` and
/// `gamma = mu` are set.
#[derive(Clone, Debug)]
pub struct TraceStep {
    pub k: usize,
    pub mu: ParamVector,
    pub fresh: ParamVector,
    pub gamma: ParamVector,
    pub z: ParamVector,
    pub s: ParamVector,
    pub delta: ParamVector,
}

#[derive(Clone, Debug)]
pub struct MomentumErrorTrace {
    pub method: Method,
    pub steps: Vec<TraceStep>,
}

/// Computes the [`TraceStep`] of step `k` from the points, the sample and the
/// momentum/estimator that the step produced.
#[allow(clippy::too_many_arguments)]
pub fn trace_step(
    problem: &Problem,
    config: &OptimizerConfig,
    k: usize,
    x_k: &ParamVector,
    x_prev: &ParamVector,
    sample: &Sample,
    momentum: &ParamVector,
    estimator: Option<&ParamVector>,
) -> Result<TraceStep> {
    let full_k = problem.full_grad(x_k)?;
    let mu = momentum.sub(&full_k);
    let zero = ParamVector::zeros(problem.shape());
    if k == 0 {
        let gamma = estimator.map_or_else(|| mu.clone(), |g| g.sub(&full_k));
        return Ok(TraceStep {
            k,
            mu,
            fresh: zero.clone(),
            gamma,
            z: zero.clone(),
            s: zero.clone(),
            delta: zero,
        });
    }
    let full_prev = problem.full_grad(x_prev)?;
    let fresh = problem.stoch_grad(sample, x_k)?.sub(&full_k);
    let stale = problem.stoch_grad(sample, x_prev)?.sub(&full_prev);
    let gamma = match estimator {
        Some(g) => g.sub(&full_k),
        None => fresh.clone(),
    };
    let z = fresh.sub(&stale);
    let s = full_prev.sub(&full_k);
    let mut delta = fresh.clone();
    delta.axpy(-(1.0 - config.alpha), &stale);
    Ok(TraceStep { k, mu, fresh, gamma, z, s, delta })
}

/// Runs `config` for `config.budget` steps, recording every step's errors.
pub fn momentum_error_trace(
    config: &OptimizerConfig,
    problem: &Problem,
    x0: ParamVector,
    seed: u64,
) -> Result<MomentumErrorTrace> {
    let mut state = optimizers::init_state(config, problem, x0, seed)?;
    let mut steps = Vec::with_capacity(config.budget);
    for _ in 0..config.budget {
        let (x_k, x_prev) = (state.x.clone(), state.x_prev.clone());
        let report = optimizers::step(&mut state, config, problem)?;
        steps.push(trace_step(
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
    Ok(MomentumErrorTrace { method: config.method, steps })
}

/// Largest entrywise gap between the recorded `mu^k` and its closed-form
/// expansion (and, for MVR-2/3, between `gamma^k` and its recursion).
pub fn recursion_discrepancy(trace: &MomentumErrorTrace, config: &OptimizerConfig) -> Result<f64> {
    if trace.method != config.method {
        return Err(Error::invalid(format!(
            "trace of {} checked against a {} config",
            trace.method, config.method
        )));
    }
    if trace.steps.is_empty() {
        return Err(Error::invalid("empty trace"));
    }
    if trace.steps.iter().enumerate().any(|(i, s)| s.k != i) {
        return Err(Error::invalid("trace steps must be consecutive from k = 0"));
    }
    let steps = &trace.steps;
    let mu0 = &steps[0].mu;
    let mut worst = 0.0_f64;

    for k in 0..steps.len() {
        let closed = match config.method {
            Method::Gluon | Method::GluonMvr2 => {
                let (b, a) = (config.beta, 1.0 - config.beta);
                let mut m = mu0.scale(b.powi(k as i32));
                for tau in 1..=k {
                    m.axpy(b.powi((k - tau) as i32) * a, &steps[tau].gamma);
                    m.axpy(b.powi((k + 1 - tau) as i32), &steps[tau].s);
                }
                m
            }
            Method::GluonMvr1 | Method::GluonMvr3 => {
                let (b, a) = (config.beta, 1.0 - config.beta);
                let mut m = mu0.scale(b.powi(k as i32));
                for tau in 1..=k {
                    m.axpy(b.powi((k - tau) as i32) * a, &steps[tau].gamma);
                    m.axpy(b.powi((k + 1 - tau) as i32), &steps[tau].z);
                }
                m
            }
            Method::GluonMvr1Decreasing => {
                let prod = |from: usize, to: usize| -> f64 { (from..=to).map(|j| config.beta_at(j)).product() };
                let mut m = mu0.scale(prod(1, k));
                for tau in 1..=k {
                    let a = 1.0 - config.beta_at(tau);
                    m.axpy(prod(tau + 1, k) * a, &steps[tau].gamma);
                    m.axpy(prod(tau, k), &steps[tau].z);
                }
                m
            }
            Method::MuonMvr => {
                let b = 1.0 - config.alpha;
                let mut m = mu0.scale(b.powi(k as i32));
                for i in 1..=k {
                    m.axpy(b.powi((k - i) as i32), &steps[i].delta);
                }
                m
            }
        };
        worst = worst.max(closed.max_abs_diff(&steps[k].mu));

        if config.method.uses_estimator() && k >= 1 {
            let q = config.q;
            let mut g = steps[k].fresh.scale(q);
            g.axpy(1.0 - q, &steps[k - 1].gamma.add(&steps[k].z));
            worst = worst.max(g.max_abs_diff(&steps[k].gamma));
        }
    }
    if !worst.is_finite() {
        return Err(Error::invalid("trace contains non-finite values"));
    }
    Ok(worst)
}

/// `true` iff the closed-form expansion matches the recorded errors within `1e-9`.
pub fn check_momentum_recursion(trace: &MomentumErrorTrace, config: &OptimizerConfig) -> Result<bool> {
    Ok(recursion_discrepancy(trace, config)? <= 1e-9)
}
