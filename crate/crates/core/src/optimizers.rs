//! LMO-based optimizers with vanilla or variance-reduced momentum.
//!
//! Every method follows the same loop: at step `k` draw `xi^k` (except at
//! `k = 0`, which uses the momentum from [`init_state`]), update the momentum
//! from stochastic gradients at `X^k` and, for the MVR variants, at `X^{k-1}`
//! under the same sample, then move to the LMO point of a per-layer ball of
//! radius `t_i * eta` around `X^k`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::norms;
use crate::oracles::{ModelShape, ParamVector, Problem, ProblemConstants, Sample};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Gluon,
    GluonMvr1,
    GluonMvr1Decreasing,
    GluonMvr2,
    GluonMvr3,
    MuonMvr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Gluon,
        Method::GluonMvr1,
        Method::GluonMvr1Decreasing,
        Method::GluonMvr2,
        Method::GluonMvr3,
        Method::MuonMvr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gluon => "gluon",
            Method::GluonMvr1 => "gluon_mvr1",
            Method::GluonMvr1Decreasing => "gluon_mvr1_decreasing",
            Method::GluonMvr2 => "gluon_mvr2",
            Method::GluonMvr3 => "gluon_mvr3",
            Method::MuonMvr => "muon_mvr",
        }
    }

    /// Methods that carry the separate MVR estimator `g`.
    pub fn uses_estimator(self) -> bool {
        matches!(self, Method::GluonMvr2 | Method::GluonMvr3)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}`")))
    }
}

/// Step size, momentum and MVR parameters for one run.
///
/// `beta` is the momentum decay for the Gluon family and the weight decay for
/// [`Method::MuonMvr`]; `alpha` is `1 - beta` for the Gluon family and the
/// Muon-MVR momentum parameter. `q` is only read by MVR-2/3.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    pub eta: f64,
    pub beta: f64,
    pub alpha: f64,
    pub q: f64,
    pub budget: usize,
    /// Whether the `L1 > 0` branch of the theorem schedule was applied.
    pub l1_capped: bool,
}

impl OptimizerConfig {
    /// Gluon-family configuration with `alpha = 1 - beta`.
    pub fn new(method: Method, eta: f64, beta: f64, q: f64, budget: usize) -> Self {
        OptimizerConfig {
            method,
            eta,
            beta,
            alpha: 1.0 - beta,
            q,
            budget,
            l1_capped: false,
        }
    }

    /// Muon-MVR configuration: momentum parameter `alpha`, weight decay `weight_decay`.
    pub fn muon_mvr(eta: f64, alpha: f64, weight_decay: f64, budget: usize) -> Self {
        OptimizerConfig {
            method: Method::MuonMvr,
            eta,
            beta: weight_decay,
            alpha,
            q: 1.0,
            budget,
            l1_capped: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::invalid("iteration budget must be at least 1"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid("eta must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::invalid("beta must lie in [0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1]"));
        }
        if self.method.uses_estimator() && !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::invalid("q must lie in (0, 1]"));
        }
        if self.method == Method::MuonMvr && self.alpha < self.beta {
            return Err(Error::invalid("muon_mvr requires alpha >= beta"));
        }
        Ok(())
    }

    /// Momentum decay used at step `k`.
    pub fn beta_at(&self, k: usize) -> f64 {
        match self.method {
            Method::GluonMvr1Decreasing => 1.0 - decreasing_factor(k),
            _ => self.beta,
        }
    }

    /// Per-layer radius multiplier at step `k`; radius_i = t_i * this.
    pub fn radius_at(&self, k: usize) -> f64 {
        match self.method {
            Method::GluonMvr1Decreasing => decreasing_factor(k),
            _ => self.eta,
        }
    }
}

/// `cbrt` that returns the integer root of a perfect cube.
pub(crate) fn exact_cbrt(k: f64) -> f64 {
    let c = k.cbrt();
    let r = c.round();
    if r * r * r == k {
        r
    } else {
        c
    }
}

/// `(k + 1)^(-2/3)`.
fn decreasing_factor(k: usize) -> f64 {
    let c = exact_cbrt((k + 1) as f64);
    1.0 / (c * c)
}

/// `K^(-2/3)` through an exact cube root, so perfect cubes give exact powers of ten.
fn inv_two_thirds(k: f64) -> f64 {
    let c = exact_cbrt(k);
    1.0 / (c * c)
}

/// Gluon-family config that keeps the schedule's `alpha` exactly.
fn from_alpha(method: Method, eta: f64, alpha: f64, q: f64, budget: usize) -> OptimizerConfig {
    OptimizerConfig {
        alpha,
        ..OptimizerConfig::new(method, eta, 1.0 - alpha, q, budget)
    }
}

/// Step size and momentum parameters prescribed by the convergence theorems.
///
/// When some `L1_i > 0` the corresponding cap on `eta` (or `eta / alpha`) is
/// applied and recorded in `l1_capped`. Muon-MVR uses `eta = beta * D` with
/// `alpha = beta = 2 ln K / K`; `K = 1` is treated as `K = 2` since the
/// formula vanishes there.
pub fn theorem_schedule(
    method: Method,
    budget: usize,
    constants: &ProblemConstants,
    shape: &ModelShape,
) -> Result<OptimizerConfig> {
    if budget == 0 {
        return Err(Error::invalid("iteration budget must be at least 1"));
    }
    let k = budget as f64;
    let l1_cap = shape
        .layers()
        .iter()
        .zip(constants.l1_hat.iter().chain(std::iter::repeat(&0.0)))
        .filter(|(_, &l1)| l1 > 0.0)
        .map(|(l, &l1)| 1.0 / (l1 * l.t))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));

    let mut cfg = match method {
        Method::Gluon => {
            let alpha = 1.0 / k.sqrt();
            let mut eta = 1.0 / k.sqrt().sqrt().powi(3);
            if let Some(cap) = l1_cap {
                eta = eta.min(alpha * cap / 5.0);
            }
            from_alpha(method, eta, alpha, 1.0, budget)
        }
        Method::GluonMvr1 => {
            let alpha = inv_two_thirds(k);
            let mut eta = alpha;
            if let Some(cap) = l1_cap {
                eta = eta.min(cap);
            }
            from_alpha(method, eta, alpha, 1.0, budget)
        }
        Method::GluonMvr1Decreasing => OptimizerConfig::new(method, 1.0, 0.0, 1.0, budget),
        Method::GluonMvr2 => {
            let q = inv_two_thirds(k);
            let alpha = 1.0 / exact_cbrt(k);
            let mut eta = q;
            if let Some(cap) = l1_cap {
                eta = eta.min(alpha * cap / 5.0);
            }
            from_alpha(method, eta, alpha, q, budget)
        }
        Method::GluonMvr3 => {
            let alpha = inv_two_thirds(k);
            let mut eta = alpha;
            if let Some(cap) = l1_cap {
                eta = eta.min(cap);
            }
            from_alpha(method, eta, alpha, alpha, budget)
        }
        Method::MuonMvr => {
            if !(constants.d.is_finite() && constants.d > 0.0) {
                return Err(Error::invalid("muon_mvr schedule needs a positive distance bound D"));
            }
            let kk = k.max(2.0);
            let beta = 2.0 * kk.ln() / kk;
            OptimizerConfig::muon_mvr(beta * constants.d, beta, beta, budget)
        }
    };
    cfg.l1_capped = l1_cap.is_some() && method != Method::GluonMvr1Decreasing && method != Method::MuonMvr;
    cfg.validate()?;
    Ok(cfg)
}

/// Iterate, previous iterate, momentum and sampler of one run.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    /// Index of the next step to take.
    pub k: usize,
    pub x: ParamVector,
    pub x_prev: ParamVector,
    /// Momentum used by the most recent step (the initial `M^0` before any step).
    pub momentum: ParamVector,
    /// MVR estimator `g`, MVR-2/3 only.
    pub estimator: Option<ParamVector>,
    /// The sample `xi^0` that produced `M^0`.
    pub init_sample: Sample,
    pub rng: ChaCha8Rng,
}

/// What a single step did.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub k: usize,
    /// `xi^k`; for `k = 0` this is `xi^0` from initialisation.
    pub sample: Sample,
    pub radii: Vec<f64>,
    /// `||X_i^{k+1} - X_i^k||_(i)` before any weight decay.
    pub displacement: Vec<f64>,
}

impl StepReport {
    /// Largest `displacement_i - radius_i`.
    pub fn ball_excess(&self) -> f64 {
        self.displacement
            .iter()
            .zip(&self.radii)
            .map(|(d, r)| d - r)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `k = 0`, `M = grad f_{xi^0}(X0)`, `g = M` where used, `X_prev = X0`.
pub fn init_state(config: &OptimizerConfig, problem: &Problem, x0: ParamVector, seed: u64) -> Result<OptimizerState> {
    config.validate()?;
    problem.shape().check(&x0)?;
    if !x0.is_finite() {
        return Err(Error::invalid("initial point must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_sample = problem.draw_sample(&mut rng);
    let momentum = problem.stoch_grad(&init_sample, &x0)?;
    let estimator = config.method.uses_estimator().then(|| momentum.clone());
    Ok(OptimizerState {
        k: 0,
        x_prev: x0.clone(),
        x: x0,
        momentum,
        estimator,
        init_sample,
        rng,
    })
}

/// `X_i' = X_i - radius_i * lmo_direction(norm_i, M_i)` for every layer.
pub fn lmo_step(shape: &ModelShape, x: &ParamVector, m: &ParamVector, radii: &[f64]) -> Result<ParamVector> {
    shape.check(x)?;
    shape.check(m)?;
    if radii.len() != shape.len() || radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::invalid("one positive radius per layer required"));
    }
    let mut out = x.clone();
    for ((b, mi), (layer, &r)) in out.blocks.iter_mut().zip(&m.blocks).zip(shape.layers().iter().zip(radii)) {
        *b -= norms::lmo_direction(layer.norm, mi)? * r;
    }
    Ok(out)
}

/// Advances `state` by one step of `config.method`.
pub fn step(state: &mut OptimizerState, config: &OptimizerConfig, problem: &Problem) -> Result<StepReport> {
    match config.method {
        Method::Gluon => step_gluon(state, config, problem),
        Method::GluonMvr1 => step_gluon_mvr1(state, config, problem),
        Method::GluonMvr1Decreasing => step_gluon_mvr1_decreasing(state, config, problem),
        Method::GluonMvr2 => step_gluon_mvr2(state, config, problem),
        Method::GluonMvr3 => step_gluon_mvr3(state, config, problem),
        Method::MuonMvr => step_muon_mvr(state, config, problem),
    }
}

/// `M^k = beta M^{k-1} + (1 - beta) grad f_xi(X^k)`.
pub fn step_gluon(state: &mut OptimizerState, config: &OptimizerConfig, problem: &Problem) -> Result<StepReport> {
    let beta = config.beta;
    advance(state, config, problem, 0.0, |st, sample| {
        let g = problem.stoch_grad(sample, &st.x)?;
        st.momentum = st.momentum.scale(beta);
        st.momentum.axpy(1.0 - beta, &g);
        Ok(())
    })
}

/// `M^k = grad f_xi(X^k) + beta (M^{k-1} - grad f_xi(X^{k-1}))`.
pub fn step_gluon_mvr1(state: &mut OptimizerState, config: &OptimizerConfig, problem: &Problem) -> Result<StepReport> {
    mvr1_with(state, config, problem, config.beta)
}

/// Gluon-MVR-1 with `beta^k = 1 - (k+1)^(-2/3)` and radius `t_i (k+1)^(-2/3)`.
pub fn step_gluon_mvr1_decreasing(
    state: &mut OptimizerState,
    config: &OptimizerConfig,
    problem: &Problem,
) -> Result<StepReport> {
    mvr1_with(state, config, problem, config.beta_at(state.k))
}

fn mvr1_with(state: &mut OptimizerState, config: &OptimizerConfig, problem: &Problem, beta: f64) -> Result<StepReport> {
    advance(state, config, problem, 0.0, |st, sample| {
        let g_new = problem.stoch_grad(sample, &st.x)?;
        let g_old = problem.stoch_grad(sample, &st.x_prev)?;
        let mut m = st.momentum.sub(&g_old).scale(beta);
        m.axpy(1.0, &g_new);
        st.momentum = m;
        Ok(())
    })
}

/// `g^k = grad f_xi(X^k) + (1 - q)(g^{k-1} - grad f_xi(X^{k-1}))`,
/// `M^k = beta M^{k-1} + (1 - beta) g^k`.
pub fn step_gluon_mvr2(state: &mut OptimizerState, config: &OptimizerConfig, problem: &Problem) -> Result<StepReport> {
    mvr_estimator_step(state, config, problem, false)
}

/// As Gluon-MVR-2 plus `beta (grad f_xi(X^k) - grad f_xi(X^{k-1}))` in the momentum.
pub fn step_gluon_mvr3(state: &mut OptimizerState, config: &OptimizerConfig, problem: &Problem) -> Result<StepReport> {
    mvr_estimator_step(state, config, problem, true)
}

fn mvr_estimator_step(
    state: &mut OptimizerState,
    config: &OptimizerConfig,
    problem: &Problem,
    correction: bool,
) -> Result<StepReport> {
    let (beta, q) = (config.beta, config.q);
    advance(state, config, problem, 0.0, |st, sample| {
        let g_new = problem.stoch_grad(sample, &st.x)?;
        let g_old = problem.stoch_grad(sample, &st.x_prev)?;
        let prev = st
            .estimator
            .take()
            .unwrap_or_else(|| st.momentum.clone());
        let mut g = prev.sub(&g_old).scale(1.0 - q);
        g.axpy(1.0, &g_new);
        let mut m = st.momentum.scale(beta);
        m.axpy(1.0 - beta, &g);
        if correction {
            m.axpy(beta, &g_new.sub(&g_old));
        }
        st.momentum = m;
        st.estimator = Some(g);
        Ok(())
    })
}

/// `M^k = (1 - alpha)(M^{k-1} - grad f_xi(X^{k-1})) + grad f_xi(X^k)`, then
/// `X^{k+1} = (1 - beta)(X^k - eta t_i D_i(M^k))`.
///
/// This is the Muon-MVR loop with the momentum update of iteration `k - 1`
/// moved to the start of iteration `k`; both gradients are taken under the
/// same fresh sample, and `X^k` is the decayed point.
pub fn step_muon_mvr(state: &mut OptimizerState, config: &OptimizerConfig, problem: &Problem) -> Result<StepReport> {
    let alpha = config.alpha;
    advance(state, config, problem, config.beta, |st, sample| {
        let g_new = problem.stoch_grad(sample, &st.x)?;
        let g_old = problem.stoch_grad(sample, &st.x_prev)?;
        let mut m = st.momentum.sub(&g_old).scale(1.0 - alpha);
        m.axpy(1.0, &g_new);
        st.momentum = m;
        Ok(())
    })
}

/// Shared step skeleton: momentum update (skipped at `k = 0`), LMO move,
/// optional multiplicative decay, bookkeeping.
fn advance<F>(
    state: &mut OptimizerState,
    config: &OptimizerConfig,
    problem: &Problem,
    decay: f64,
    update: F,
) -> Result<StepReport>
where
    F: FnOnce(&mut OptimizerState, &Sample) -> Result<()>,
{
    let shape = problem.shape();
    let k = state.k;
    let sample = if k == 0 {
        state.init_sample.clone()
    } else {
        let s = problem.draw_sample(&mut state.rng);
        update(state, &s)?;
        s
    };

    let scale = config.radius_at(k);
    let radii: Vec<f64> = shape.layers().iter().map(|l| l.t * scale).collect();
    let moved = lmo_step(shape, &state.x, &state.momentum, &radii)?;
    let mut displacement = Vec::with_capacity(radii.len());
    for (layer, (a, b)) in shape.layers().iter().zip(moved.blocks.iter().zip(&state.x.blocks)) {
        displacement.push(norms::norm(layer.norm, &(a - b))?);
    }
    let next = if decay > 0.0 { moved.scale(1.0 - decay) } else { moved };
    if !next.is_finite() || !state.momentum.is_finite() {
        return Err(Error::NonFinite(k));
    }
    state.x_prev = std::mem::replace(&mut state.x, next);
    state.k += 1;
    Ok(StepReport { k, sample, radii, displacement })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::{Matrix, NormKind};
    use crate::oracles::{
        LayerSpec, LogisticRegression, LogisticSpec, MatrixFactorization, NoisyQuadratic,
    };
    use proptest::prelude::*;
    use rand::Rng;

    fn quad(sigma: f64, norm: NormKind) -> Problem {
        Problem::NoisyQuadratic(NoisyQuadratic::random(&[(4, 3), (3, 3)], norm, sigma, 0.5, 2.0, 17).unwrap())
    }

    fn start(p: &Problem) -> ParamVector {
        let xs = p.known_minimizer().unwrap();
        xs.scale(-1.0)
    }

    fn run(cfg: &OptimizerConfig, p: &Problem, x0: ParamVector, seed: u64, steps: usize) -> Vec<OptimizerState> {
        let mut st = init_state(cfg, p, x0, seed).unwrap();
        let mut out = vec![st.clone()];
        for _ in 0..steps {
            let rep = step(&mut st, cfg, p).unwrap();
            assert!(rep.ball_excess() <= 1e-9);
            out.push(st.clone());
        }
        out
    }

    fn max_traj_gap(a: &[OptimizerState], b: &[OptimizerState]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(s, t)| s.x.max_abs_diff(&t.x).max(s.momentum.max_abs_diff(&t.momentum)))
            .fold(0.0, f64::max)
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("Gluon-MVR2".parse::<Method>().unwrap(), Method::GluonMvr2);
        assert!("adam".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::new(Method::GluonMvr2, 0.1, 0.9, 0.0, 10).validate().is_err());
        assert!(OptimizerConfig::new(Method::GluonMvr2, 0.1, 0.9, 1.5, 10).validate().is_err());
        assert!(OptimizerConfig::new(Method::GluonMvr1, 0.1, 0.9, 0.0, 10).validate().is_ok());
        assert!(OptimizerConfig::new(Method::Gluon, 0.1, 1.0, 1.0, 10).validate().is_err());
        assert!(OptimizerConfig::new(Method::Gluon, 0.0, 0.5, 1.0, 10).validate().is_err());
        assert!(OptimizerConfig::new(Method::Gluon, 0.1, 0.5, 1.0, 0).validate().is_err());
        assert!(OptimizerConfig::muon_mvr(0.1, 0.1, 0.2, 10).validate().is_err());
        assert!(OptimizerConfig::muon_mvr(0.1, 0.2, 0.2, 10).validate().is_ok());
    }

    fn shape1() -> ModelShape {
        ModelShape::new(vec![LayerSpec::new(3, 3, NormKind::Spectral, 1.0)]).unwrap()
    }

    #[test]
    fn theorem_schedule_examples() {
        let c = ProblemConstants::zeros(1);
        let s = shape1();
        let mvr1 = theorem_schedule(Method::GluonMvr1, 1000, &c, &s).unwrap();
        assert_eq!(mvr1.eta, 1e-2);
        assert_eq!(mvr1.alpha, 1e-2);
        assert!(!mvr1.l1_capped);

        let gluon = theorem_schedule(Method::Gluon, 10_000, &c, &s).unwrap();
        assert_eq!(gluon.eta, 1e-3);
        assert_eq!(gluon.alpha, 1e-2);
        assert_eq!(gluon.beta, 0.99);

        let mvr2 = theorem_schedule(Method::GluonMvr2, 1000, &c, &s).unwrap();
        assert_eq!(mvr2.eta, 1e-2);
        assert_eq!(mvr2.q, 1e-2);
        assert_eq!(mvr2.alpha, 0.1);

        let mvr3 = theorem_schedule(Method::GluonMvr3, 1000, &c, &s).unwrap();
        assert_eq!((mvr3.eta, mvr3.alpha, mvr3.q), (1e-2, 1e-2, 1e-2));

        assert!(theorem_schedule(Method::Gluon, 0, &c, &s).is_err());
    }

    #[test]
    fn theorem_schedule_applies_l1_caps() {
        let mut c = ProblemConstants::zeros(1);
        c.l1_hat = vec![50.0];
        let s = shape1().with_radius_scales(&[2.0]).unwrap();
        let mvr1 = theorem_schedule(Method::GluonMvr1, 1000, &c, &s).unwrap();
        assert_eq!(mvr1.eta, 1.0 / 100.0);
        let mvr1 = theorem_schedule(Method::GluonMvr1, 8, &c, &s).unwrap();
        assert_eq!(mvr1.eta, 1.0 / 100.0);
        assert!(mvr1.l1_capped);
        let gluon = theorem_schedule(Method::Gluon, 16, &c, &s).unwrap();
        assert!((gluon.eta - 0.25 / 500.0).abs() < 1e-18);
        let mvr2 = theorem_schedule(Method::GluonMvr2, 1000, &c, &s).unwrap();
        assert!(mvr2.eta / mvr2.alpha <= 1.0 / 500.0 * (1.0 + 1e-12));
    }

    #[test]
    fn muon_schedule() {
        let mut c = ProblemConstants::zeros(1);
        assert!(theorem_schedule(Method::MuonMvr, 100, &c, &shape1()).is_err());
        c.d = 3.0;
        let m = theorem_schedule(Method::MuonMvr, 100, &c, &shape1()).unwrap();
        let b = 2.0 * 100f64.ln() / 100.0;
        assert_eq!((m.alpha, m.beta), (b, b));
        assert!((m.eta - 3.0 * b).abs() < 1e-15);
        let m1 = theorem_schedule(Method::MuonMvr, 1, &c, &shape1()).unwrap();
        assert!((m1.beta - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn init_state_examples() {
        let p = quad(0.0, NormKind::Spectral);
        let cfg = OptimizerConfig::new(Method::GluonMvr2, 0.1, 0.5, 0.5, 10);
        let x0 = start(&p);
        let st = init_state(&cfg, &p, x0.clone(), 3).unwrap();
        assert_eq!(st.k, 0);
        assert_eq!(st.momentum, p.full_grad(&x0).unwrap());
        assert_eq!(st.estimator.as_ref(), Some(&st.momentum));
        assert_eq!(st.x_prev, x0);

        let noisy = quad(1.0, NormKind::Spectral);
        let a = init_state(&cfg, &noisy, x0.clone(), 9).unwrap();
        let b = init_state(&cfg, &noisy, x0, 9).unwrap();
        assert_eq!(a.momentum, b.momentum);
        assert_eq!(a.init_sample, b.init_sample);

        let at_min = init_state(&cfg, &p, p.known_minimizer().unwrap(), 1).unwrap();
        assert!(at_min.momentum.blocks.iter().all(|b| b.amax() == 0.0));

        assert!(init_state(&cfg, &p, ParamVector::new(vec![Matrix::zeros(1, 1)]), 1).is_err());
    }

    #[test]
    fn lmo_step_zero_momentum_is_noop() {
        let p = quad(0.0, NormKind::Spectral);
        let x = start(&p);
        let m = ParamVector::zeros(p.shape());
        assert_eq!(lmo_step(p.shape(), &x, &m, &[0.3, 0.3]).unwrap(), x);
        assert!(lmo_step(p.shape(), &x, &m, &[0.3]).is_err());
        assert!(lmo_step(p.shape(), &x, &m, &[0.3, 0.0]).is_err());
    }

    #[test]
    fn euclidean_lmo_step_is_normalized_gradient_descent() {
        let p = quad(0.0, NormKind::Euclidean);
        let x = start(&p);
        let g = p.full_grad(&x).unwrap();
        let r = 1e-3;
        let y = lmo_step(p.shape(), &x, &g, &[r, r]).unwrap();
        for (i, b) in y.blocks.iter().enumerate() {
            let expected = &x.blocks[i] - &g.blocks[i] * (r / g.blocks[i].norm());
            assert!((b - expected).amax() < 1e-15);
        }
        assert!(p.value(&y).unwrap() < p.value(&x).unwrap());
    }

    #[test]
    fn spectral_lmo_step_beats_random_ball_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = crate::oracles::gaussian_matrix(&mut rng, 3, 3, 1.0).qr().q();
        let v = crate::oracles::gaussian_matrix(&mut rng, 3, 3, 1.0).qr().q();
        let m = &u * Matrix::from_diagonal(&nalgebra::dvector![3.0, 1.5, 0.5]) * v.transpose();
        let shape = shape1();
        let x = ParamVector::new(vec![crate::oracles::gaussian_matrix(&mut rng, 3, 3, 1.0)]);
        let r = 0.7;
        let mp = ParamVector::new(vec![m.clone()]);
        let y = lmo_step(&shape, &x, &mp, &[r]).unwrap();
        let expected = &x.blocks[0] - &u * v.transpose() * r;
        assert!((&y.blocks[0] - expected).amax() < 1e-10);
        let lmo_val = m.dot(&y.blocks[0]);
        for _ in 0..100_000 {
            let z = crate::oracles::gaussian_matrix(&mut rng, 3, 3, 1.0);
            let s = norms::norm(NormKind::Spectral, &z).unwrap();
            let radius: f64 = r * rng.random::<f64>();
            let point = &x.blocks[0] + z * (radius / s);
            assert!(m.dot(&point) >= lmo_val - 1e-12);
        }
    }

    #[test]
    fn gluon_without_momentum_is_normalized_sgd() {
        let p = quad(0.5, NormKind::Spectral);
        let cfg = OptimizerConfig::new(Method::Gluon, 0.05, 0.0, 1.0, 10);
        let mut st = init_state(&cfg, &p, start(&p), 4).unwrap();
        for _ in 0..5 {
            let x = st.x.clone();
            let rep = step(&mut st, &cfg, &p).unwrap();
            let g = p.stoch_grad(&rep.sample, &x).unwrap();
            assert!(st.momentum.max_abs_diff(&g) < 1e-15);
        }
    }

    #[test]
    fn gluon_two_steps_by_hand() {
        let shape = ModelShape::new(vec![LayerSpec::new(2, 1, NormKind::Euclidean, 1.0)]).unwrap();
        let q = NoisyQuadratic::new(
            shape,
            vec![nalgebra::dmatrix![2.0, 0.0; 0.0, 1.0]],
            ParamVector::new(vec![nalgebra::dmatrix![0.0; 0.0]]),
            0.0,
        )
        .unwrap();
        let p = Problem::NoisyQuadratic(q);
        let (eta, beta) = (0.1, 0.6);
        let cfg = OptimizerConfig::new(Method::Gluon, eta, beta, 1.0, 2);
        let x0 = ParamVector::new(vec![nalgebra::dmatrix![1.0; 2.0]]);
        let mut st = init_state(&cfg, &p, x0, 0).unwrap();
        step(&mut st, &cfg, &p).unwrap();
        step(&mut st, &cfg, &p).unwrap();

        let grad = |x: [f64; 2]| [2.0 * x[0], x[1]];
        let unit = |m: [f64; 2]| {
            let n = (m[0] * m[0] + m[1] * m[1]).sqrt();
            [m[0] / n, m[1] / n]
        };
        let x0 = [1.0, 2.0];
        let m0 = grad(x0);
        let d0 = unit(m0);
        let x1 = [x0[0] - eta * d0[0], x0[1] - eta * d0[1]];
        let g1 = grad(x1);
        let m1 = [beta * m0[0] + (1.0 - beta) * g1[0], beta * m0[1] + (1.0 - beta) * g1[1]];
        let d1 = unit(m1);
        let x2 = [x1[0] - eta * d1[0], x1[1] - eta * d1[1]];
        assert!((st.x.blocks[0][0] - x2[0]).abs() < 1e-12);
        assert!((st.x.blocks[0][1] - x2[1]).abs() < 1e-12);
        assert!((st.momentum.blocks[0][0] - m1[0]).abs() < 1e-12);
    }

    #[test]
    fn minimiser_is_a_fixed_point() {
        let p = quad(0.0, NormKind::Spectral);
        let xs = p.known_minimizer().unwrap();
        for m in Method::ALL {
            let cfg = if m == Method::MuonMvr {
                OptimizerConfig::muon_mvr(0.1, 0.5, 0.0, 5)
            } else {
                OptimizerConfig::new(m, 0.1, 0.5, 0.5, 5)
            };
            let traj = run(&cfg, &p, xs.clone(), 1, 5);
            let last = traj.last().unwrap();
            assert_eq!(last.x, xs, "{m}");
        }
    }

    fn factorization() -> Problem {
        Problem::Factorization(MatrixFactorization::synthetic(4, 5, 3, 30, None, NormKind::Spectral, 2).unwrap())
    }

    #[test]
    fn deterministic_oracle_momentum_is_exact() {
        let p = factorization();
        let x0 = p.initial_point(3);
        for m in [Method::GluonMvr1, Method::GluonMvr1Decreasing, Method::GluonMvr3, Method::MuonMvr] {
            let cfg = match m {
                Method::MuonMvr => OptimizerConfig::muon_mvr(0.05, 0.3, 0.1, 40),
                Method::GluonMvr1Decreasing => OptimizerConfig::new(m, 1.0, 0.0, 1.0, 40),
                _ => OptimizerConfig::new(m, 0.05, 0.8, 0.4, 40),
            };
            for st in run(&cfg, &p, x0.clone(), 5, 40).iter().skip(1) {
                let g = p.full_grad(&st.x_prev).unwrap();
                assert!(st.momentum.max_abs_diff(&g) <= 1e-10, "{m}");
            }
        }
        let cfg = OptimizerConfig::new(Method::GluonMvr2, 0.05, 0.7, 0.4, 40);
        let traj = run(&cfg, &p, x0, 5, 40);
        // only the first step also equals beta grad f(X^0) + (1 - beta) grad f(X^1)
        let first = p
            .full_grad(&traj[0].x_prev)
            .unwrap()
            .scale(0.7)
            .add(&p.full_grad(&traj[1].x_prev).unwrap().scale(0.3));
        assert!(traj[1].momentum.max_abs_diff(&first) <= 1e-10);
        let later = p
            .full_grad(&traj[9].x_prev)
            .unwrap()
            .scale(0.7)
            .add(&p.full_grad(&traj[10].x_prev).unwrap().scale(0.3));
        assert!(traj[10].momentum.max_abs_diff(&later) > 1e-6);
        for w in traj.windows(2).skip(1) {
            let (before, after) = (&w[0], &w[1]);
            let expected = before.momentum.scale(0.7).add(&p.full_grad(&after.x_prev).unwrap().scale(0.3));
            assert!(after.momentum.max_abs_diff(&expected) <= 1e-10);
            let g = p.full_grad(&after.x_prev).unwrap();
            assert!(after.estimator.as_ref().unwrap().max_abs_diff(&g) <= 1e-10);
        }
    }

    #[test]
    fn reduction_identities() {
        let p = quad(0.7, NormKind::Spectral);
        let x0 = start(&p);
        let n = 20;

        let gluon0 = run(&OptimizerConfig::new(Method::Gluon, 0.05, 0.0, 1.0, n), &p, x0.clone(), 8, n);
        let mvr1_0 = run(&OptimizerConfig::new(Method::GluonMvr1, 0.05, 0.0, 1.0, n), &p, x0.clone(), 8, n);
        assert!(max_traj_gap(&gluon0, &mvr1_0) <= 1e-12);

        let mvr2_q1 = run(&OptimizerConfig::new(Method::GluonMvr2, 0.05, 0.6, 1.0, n), &p, x0.clone(), 8, n);
        let gluon = run(&OptimizerConfig::new(Method::Gluon, 0.05, 0.6, 1.0, n), &p, x0.clone(), 8, n);
        assert!(max_traj_gap(&mvr2_q1, &gluon) <= 1e-12);

        let mvr2_b0 = run(&OptimizerConfig::new(Method::GluonMvr2, 0.05, 0.0, 0.3, n), &p, x0.clone(), 8, n);
        let mvr1 = run(&OptimizerConfig::new(Method::GluonMvr1, 0.05, 0.7, 1.0, n), &p, x0.clone(), 8, n);
        assert!(max_traj_gap(&mvr2_b0, &mvr1) <= 1e-10);

        let mvr3_b0 = run(&OptimizerConfig::new(Method::GluonMvr3, 0.05, 0.0, 0.3, n), &p, x0.clone(), 8, n);
        assert!(max_traj_gap(&mvr3_b0, &mvr2_b0) <= 1e-12);

        let mvr3_q1 = run(&OptimizerConfig::new(Method::GluonMvr3, 0.05, 0.6, 1.0, n), &p, x0.clone(), 8, n);
        let mvr1_b = run(&OptimizerConfig::new(Method::GluonMvr1, 0.05, 0.6, 1.0, n), &p, x0.clone(), 8, n);
        assert!(max_traj_gap(&mvr3_q1, &mvr1_b) <= 1e-10);

        let muon = run(&OptimizerConfig::muon_mvr(0.05, 1.0, 0.0, n), &p, x0.clone(), 8, n);
        assert!(max_traj_gap(&muon, &gluon0) <= 1e-12);
    }

    #[test]
    fn decreasing_schedule_values() {
        let cfg = OptimizerConfig::new(Method::GluonMvr1Decreasing, 1.0, 0.0, 1.0, 10);
        assert_eq!(cfg.beta_at(0), 0.0);
        assert_eq!(cfg.radius_at(0), 1.0);
        assert_eq!(cfg.beta_at(7), 0.75);
        assert_eq!(cfg.radius_at(7), 0.25);

        let p = quad(0.0, NormKind::Spectral).with_shape(quad(0.0, NormKind::Spectral).shape().with_radius_scales(&[2.0, 0.5]).unwrap()).unwrap();
        let mut st = init_state(&cfg, &p, start(&p), 0).unwrap();
        for k in 0..8 {
            let rep = step(&mut st, &cfg, &p).unwrap();
            let f = 1.0 / ((k + 1) as f64).powf(2.0 / 3.0);
            assert!((rep.radii[0] - 2.0 * f).abs() < 1e-15 && (rep.radii[1] - 0.5 * f).abs() < 1e-15);
        }
    }

    #[test]
    fn mvr1_reduces_momentum_error_against_gluon() {
        let p = quad(0.5, NormKind::Spectral);
        let x0 = start(&p).scale(3.0);
        let k = 50;
        let mean_err = |method: Method| {
            let cfg = OptimizerConfig::new(method, 0.1, 0.9, 1.0, k);
            let mut total = 0.0;
            for seed in 0..30 {
                let traj = run(&cfg, &p, x0.clone(), 100 + seed, k);
                let st = &traj[k];
                total += st.momentum.sub(&p.full_grad(&st.x_prev).unwrap()).sq_norm();
            }
            total / 30.0
        };
        let mvr = mean_err(Method::GluonMvr1);
        let gluon = mean_err(Method::Gluon);
        assert!(mvr < gluon, "mvr {mvr} gluon {gluon}");
    }

    #[test]
    fn muon_without_decay_or_memory_is_plain_descent() {
        let p = quad(0.4, NormKind::Spectral);
        let cfg = OptimizerConfig::muon_mvr(0.05, 1.0, 0.0, 5);
        let mut st = init_state(&cfg, &p, start(&p), 2).unwrap();
        for _ in 0..5 {
            let x = st.x.clone();
            let rep = step(&mut st, &cfg, &p).unwrap();
            let g = p.stoch_grad(&rep.sample, &x).unwrap();
            let expected = lmo_step(p.shape(), &x, &g, &rep.radii).unwrap();
            assert!(st.x.max_abs_diff(&expected) < 1e-15);
        }
    }

    #[test]
    fn muon_applies_weight_decay_after_the_lmo_move() {
        let p = quad(0.0, NormKind::Spectral);
        let cfg = OptimizerConfig::muon_mvr(0.05, 0.5, 0.2, 5);
        let x0 = start(&p);
        let mut st = init_state(&cfg, &p, x0.clone(), 2).unwrap();
        let m0 = st.momentum.clone();
        step(&mut st, &cfg, &p).unwrap();
        let expected = lmo_step(p.shape(), &x0, &m0, &[0.05, 0.05]).unwrap().scale(0.8);
        assert!(st.x.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn logistic_runs_are_seed_deterministic() {
        let p = Problem::Logistic(
            LogisticRegression::synthetic(&LogisticSpec { n_points: 64, dim: 4, classes: 3, ..Default::default() }).unwrap(),
        );
        for m in Method::ALL {
            let cfg = if m == Method::MuonMvr {
                OptimizerConfig::muon_mvr(0.05, 0.3, 0.1, 10)
            } else {
                OptimizerConfig::new(m, 0.05, 0.7, 0.5, 10)
            };
            let a = run(&cfg, &p, p.initial_point(0), 21, 10);
            let b = run(&cfg, &p, p.initial_point(0), 21, 10);
            assert_eq!(max_traj_gap(&a, &b), 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn steps_stay_in_the_ball(
            method in prop::sample::select(Method::ALL.to_vec()),
            norm in prop::sample::select(NormKind::ALL.to_vec()),
            eta in 1e-3f64..1.0,
            beta in 0.0f64..0.95,
            q in 0.05f64..1.0,
            seed in any::<u64>(),
        ) {
            let p = quad(0.3, norm);
            let cfg = if method == Method::MuonMvr {
                OptimizerConfig::muon_mvr(eta, (beta + 0.01).min(1.0), beta, 15)
            } else {
                OptimizerConfig::new(method, eta, beta, q, 15)
            };
            let mut st = init_state(&cfg, &p, start(&p), seed).unwrap();
            for _ in 0..15 {
                let rep = step(&mut st, &cfg, &p).unwrap();
                prop_assert!(rep.ball_excess() <= 1e-9);
                prop_assert!(st.x.is_finite() && st.momentum.is_finite());
            }
        }
    }
}
