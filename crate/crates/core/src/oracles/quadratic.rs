use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gaussian_matrix, LayerSpec, ModelShape, ParamVector, Sample};
use crate::norms::{Matrix, NormKind};
use crate::{Error, Result};

/// `f(X) = sum_i 1/2 tr((X_i - X*_i)^T P_i (X_i - X*_i))` with additive
/// Gaussian gradient noise of entrywise standard deviation `sigma`.
#[derive(Clone, Debug)]
pub struct NoisyQuadratic {
    pub(super) shape: ModelShape,
    operators: Vec<Matrix>,
    pub(super) x_star: ParamVector,
    pub(super) sigma: f64,
}

impl NoisyQuadratic {
    /// `operators[i]` must be symmetric positive definite of size `rows_i`.
    pub fn new(shape: ModelShape, operators: Vec<Matrix>, x_star: ParamVector, sigma: f64) -> Result<Self> {
        shape.check(&x_star)?;
        if operators.len() != shape.len() {
            return Err(Error::invalid("one operator per layer required"));
        }
        for (i, (p, l)) in operators.iter().zip(shape.layers()).enumerate() {
            if p.shape() != (l.rows, l.rows) {
                return Err(Error::ShapeMismatch(format!("operator {i} must be {0}x{0}", l.rows)));
            }
            let asym = (p - p.transpose()).amax();
            if asym > 1e-12 * (1.0 + p.amax()) {
                return Err(Error::invalid(format!("operator {i} is not symmetric")));
            }
            if p.clone().cholesky().is_none() {
                return Err(Error::invalid(format!("operator {i} is not positive definite")));
            }
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid("noise level must be nonnegative"));
        }
        if !x_star.is_finite() {
            return Err(Error::invalid("minimiser must be finite"));
        }
        Ok(NoisyQuadratic { shape, operators, x_star, sigma })
    }

    /// Random instance: each `P_i = Q diag(lambda) Q^T` with eigenvalues spread
    /// geometrically over `[eig_min, eig_max]`, and `X*` entries `N(0, 1/cols)`.
    pub fn random(
        dims: &[(usize, usize)],
        norm: NormKind,
        sigma: f64,
        eig_min: f64,
        eig_max: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(eig_min > 0.0 && eig_max >= eig_min) {
            return Err(Error::invalid("eigenvalue range must satisfy 0 < min <= max"));
        }
        let shape = ModelShape::new(dims.iter().map(|&(r, c)| LayerSpec::new(r, c, norm, 1.0)).collect())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut operators = Vec::new();
        let mut blocks = Vec::new();
        for &(r, c) in dims {
            let q = gaussian_matrix(&mut rng, r, r, 1.0).qr().q();
            let eigs = nalgebra::DVector::from_fn(r, |i, _| {
                if r == 1 {
                    eig_max
                } else {
                    eig_min * (eig_max / eig_min).powf(i as f64 / (r - 1) as f64)
                }
            });
            let p = &q * Matrix::from_diagonal(&eigs) * q.transpose();
            operators.push((&p + p.transpose()) * 0.5);
            blocks.push(gaussian_matrix(&mut rng, r, c, 1.0 / (c as f64).sqrt()));
        }
        NoisyQuadratic::new(shape, operators, ParamVector::new(blocks), sigma)
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn operators(&self) -> &[Matrix] {
        &self.operators
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub(super) fn value(&self, x: &ParamVector) -> f64 {
        self.operators
            .iter()
            .zip(x.blocks.iter().zip(&self.x_star.blocks))
            .map(|(p, (xi, si))| {
                let d = xi - si;
                0.5 * d.dot(&(p * &d))
            })
            .sum()
    }

    pub(super) fn full_grad(&self, x: &ParamVector) -> ParamVector {
        ParamVector::new(
            self.operators
                .iter()
                .zip(x.blocks.iter().zip(&self.x_star.blocks))
                .map(|(p, (xi, si))| p * (xi - si))
                .collect(),
        )
    }

    pub(super) fn stoch_grad(&self, sample: &Sample, x: &ParamVector) -> ParamVector {
        let mut g = self.full_grad(x);
        if self.sigma > 0.0 {
            let mut rng = sample.rng();
            for b in &mut g.blocks {
                *b += gaussian_matrix(&mut rng, b.nrows(), b.ncols(), self.sigma);
            }
        }
        g
    }

    /// The origin; it satisfies `||X0|| <= ||X*||` in every geometry.
    pub(super) fn initial_point(&self, _rng: &mut ChaCha8Rng) -> ParamVector {
        ParamVector::zeros(&self.shape)
    }
}
