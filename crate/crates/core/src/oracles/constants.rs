use rand::Rng;

use super::{gaussian_matrix, ParamVector, Problem};
use crate::norms::{self, Matrix};
use crate::{Error, Result};

/// Monte-Carlo estimates of the smoothness and noise constants.
///
/// Every field is a maximum over sampled probes, hence a lower bound on the
/// true supremum the assumptions refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConstants {
    /// `max_i sigma_i`.
    pub sigma_hat: f64,
    pub sigma_per_layer: Vec<f64>,
    pub delta_hat: Vec<f64>,
    pub rho: Vec<f64>,
    pub l0_hat: Vec<f64>,
    pub l1_hat: Vec<f64>,
    /// `max(||X0||, ||X*||)` in the product norm (`||X0||` when `X*` is unknown).
    pub d: f64,
    pub l_hat: f64,
    /// Set when every probed gradient vanished, i.e. the objective looks constant.
    pub degenerate: bool,
}

impl ProblemConstants {
    /// All-zero constants for `p` layers; selects the `L1 = 0` schedule branches.
    pub fn zeros(p: usize) -> Self {
        ProblemConstants {
            sigma_hat: 0.0,
            sigma_per_layer: vec![0.0; p],
            delta_hat: vec![0.0; p],
            rho: vec![0.0; p],
            l0_hat: vec![0.0; p],
            l1_hat: vec![0.0; p],
            d: 0.0,
            l_hat: 0.0,
            degenerate: false,
        }
    }
}

const POWER_ITERS: usize = 20;

/// Estimates the problem constants from `n_pairs` probe points and
/// `n_samples` stochastic gradients per probe.
///
/// Probes are the problem's initial point plus Gaussian offsets of growing
/// size, so the gradient dual norm varies across probes and the `L1` slope is
/// identifiable. Layer-wise quantities perturb one layer at a time. `L0/L1`
/// pairs are refined by a nonlinear power method that replaces the
/// perturbation direction with the LMO direction of the gradient difference.
pub fn estimate_constants<R: Rng + ?Sized>(
    problem: &Problem,
    n_samples: usize,
    n_pairs: usize,
    rng: &mut R,
) -> Result<ProblemConstants> {
    if n_samples == 0 || n_pairs == 0 {
        return Err(Error::invalid("n_samples and n_pairs must be positive"));
    }
    let shape = problem.shape().clone();
    let p = shape.len();
    let x0 = problem.initial_point(rng.next_u64());

    let probes: Vec<ParamVector> = (0..n_pairs)
        .map(|j| {
            let spread = 0.25 * (1.0 + j as f64);
            let mut x = x0.clone();
            for (b, l) in x.blocks.iter_mut().zip(shape.layers()) {
                *b += gaussian_matrix(rng, l.rows, l.cols, spread / (l.cols as f64).sqrt());
            }
            x
        })
        .collect();

    let mut out = ProblemConstants::zeros(p);
    out.rho = shape
        .layers()
        .iter()
        .map(|l| norms::rho_bound(l.norm, l.rows, l.cols))
        .collect();
    out.d = shape.product_norm(&x0)?;
    if let Some(xs) = problem.known_minimizer() {
        out.d = out.d.max(shape.product_norm(&xs)?);
    }

    let mut any_gradient = false;
    let mut l_points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); p];

    for x in &probes {
        let full = problem.full_grad(x)?;
        any_gradient |= full.sq_norm() > 0.0;
        let samples: Vec<_> = (0..n_samples).map(|_| problem.draw_sample(rng)).collect();

        let mut sq = vec![0.0; p];
        for s in &samples {
            let err = problem.stoch_grad(s, x)?.sub(&full);
            for (acc, b) in sq.iter_mut().zip(&err.blocks) {
                *acc += b.norm_squared();
            }
        }
        for (i, acc) in sq.iter().enumerate() {
            out.sigma_per_layer[i] = out.sigma_per_layer[i].max((acc / n_samples as f64).sqrt());
        }

        for (i, layer) in shape.layers().iter().enumerate() {
            let eps = 0.1 * (1.0 + norms::norm(layer.norm, &x.blocks[i])?);
            let dir = unit_direction(layer.norm, gaussian_matrix(rng, layer.rows, layer.cols, 1.0))?;
            let y = perturb(x, i, &dir, eps);
            let dist = norms::norm(layer.norm, &(&y.blocks[i] - &x.blocks[i]))?;
            let full_y = problem.full_grad(&y)?;
            any_gradient |= full_y.sq_norm() > 0.0;
            let full_diff = &full.blocks[i] - &full_y.blocks[i];
            let mut hv = 0.0;
            for s in &samples {
                let d = &problem.stoch_grad(s, x)?.blocks[i] - &problem.stoch_grad(s, &y)?.blocks[i];
                hv += (d - &full_diff).norm_squared();
            }
            if dist > 0.0 {
                let delta = (hv / n_samples as f64).sqrt() / dist;
                out.delta_hat[i] = out.delta_hat[i].max(delta);
            }

            let g_x = norms::dual_norm(layer.norm, &full.blocks[i])?;
            let ratio = refine_lipschitz_ratio(problem, x, i, dir, eps)?;
            l_points[i].push((g_x, ratio));
        }

        let mut joint = x.clone();
        for (b, l) in joint.blocks.iter_mut().zip(shape.layers()) {
            let eps = 0.1 * l.t;
            *b += unit_direction(l.norm, gaussian_matrix(rng, l.rows, l.cols, 1.0))? * eps;
        }
        let dist = shape.product_norm(&joint.sub(x))?;
        if dist > 0.0 {
            let mut acc = 0.0;
            for s in &samples {
                let d = problem.stoch_grad(s, x)?.sub(&problem.stoch_grad(s, &joint)?);
                acc += shape.product_dual_norm(&d)?.powi(2);
            }
            out.l_hat = out.l_hat.max((acc / n_samples as f64).sqrt() / dist);
        }
    }

    for (i, pts) in l_points.iter().enumerate() {
        let (l0, l1) = fit_l0_l1(pts);
        out.l0_hat[i] = l0;
        out.l1_hat[i] = l1;
    }
    out.sigma_hat = out.sigma_per_layer.iter().copied().fold(0.0, f64::max);

    if !any_gradient && out.sigma_hat == 0.0 {
        let mut zero = ProblemConstants::zeros(p);
        zero.rho = out.rho;
        zero.d = out.d;
        zero.degenerate = true;
        return Ok(zero);
    }
    Ok(out)
}

fn unit_direction(kind: norms::NormKind, m: Matrix) -> Result<Matrix> {
    let n = norms::norm(kind, &m)?;
    Ok(if n > 0.0 { m / n } else { m })
}

fn perturb(x: &ParamVector, layer: usize, dir: &Matrix, eps: f64) -> ParamVector {
    let mut y = x.clone();
    y.blocks[layer] += dir * eps;
    y
}

/// Largest `||grad_i f(X) - grad_i f(Y)||_* / ||X_i - Y_i||` seen while
/// iterating `d <- lmo_direction(grad_i f(X + eps d) - grad_i f(X))`.
fn refine_lipschitz_ratio(problem: &Problem, x: &ParamVector, i: usize, mut dir: Matrix, eps: f64) -> Result<f64> {
    let kind = problem.shape().layers()[i].norm;
    let base = problem.full_grad(x)?;
    let mut best = 0.0_f64;
    for _ in 0..POWER_ITERS {
        let y = perturb(x, i, &dir, eps);
        let dist = norms::norm(kind, &(&y.blocks[i] - &x.blocks[i]))?;
        if dist == 0.0 {
            break;
        }
        let diff = &problem.full_grad(&y)?.blocks[i] - &base.blocks[i];
        best = best.max(norms::dual_norm(kind, &diff)? / dist);
        let next = norms::lmo_direction(kind, &diff)?;
        if norms::norm(kind, &next)? == 0.0 {
            break;
        }
        dir = next;
    }
    Ok(best)
}

/// Least-squares line `ratio ~ L0 + L1 * g` with `L1 >= 0`, then `L0` raised
/// so the line lies above every observed point.
fn fit_l0_l1(points: &[(f64, f64)]) -> (f64, f64) {
    if points.is_empty() {
        return (0.0, 0.0);
    }
    let n = points.len() as f64;
    let mg = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mr = points.iter().map(|p| p.1).sum::<f64>() / n;
    let var: f64 = points.iter().map(|p| (p.0 - mg).powi(2)).sum();
    let cov: f64 = points.iter().map(|p| (p.0 - mg) * (p.1 - mr)).sum();
    let spread = points.iter().map(|p| p.1).fold(0.0, f64::max);
    let mut l1 = if var > 0.0 { (cov / var).max(0.0) } else { 0.0 };
    // Slopes that only fit rounding noise in the ratios are dropped.
    let ratio_range = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if ratio_range <= 1e-9 * (1.0 + spread) {
        l1 = 0.0;
    }
    let l0 = points
        .iter()
        .map(|p| p.1 - l1 * p.0)
        .fold(0.0, f64::max);
    (l0, l1)
}
