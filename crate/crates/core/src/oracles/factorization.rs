use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gaussian_matrix, select_columns, LayerSpec, ModelShape, ParamVector};
use crate::norms::{Matrix, NormKind};
use crate::{Error, Result};

/// Two-layer linear model `f(W1, W2) = 1/(2N) ||W2 W1 A - B||_F^2` with
/// minibatches of columns of `A`. Targets are an exact fit, so `inf f = 0`.
#[derive(Clone, Debug)]
pub struct MatrixFactorization {
    pub(super) shape: ModelShape,
    inputs: Matrix,
    outputs: Matrix,
    pub(super) target: ParamVector,
    pub(super) batch: Option<usize>,
}

impl MatrixFactorization {
    /// Layers are `W1: rank x inputs.nrows()` and `W2: B.nrows() x rank`;
    /// `B = W2* W1* A` is built from the supplied factors.
    pub fn new(inputs: Matrix, w1: Matrix, w2: Matrix, batch: Option<usize>, norm: NormKind) -> Result<Self> {
        if inputs.ncols() == 0 {
            return Err(Error::invalid("need at least one data column"));
        }
        if w1.ncols() != inputs.nrows() || w2.ncols() != w1.nrows() {
            return Err(Error::ShapeMismatch("factor shapes do not chain".into()));
        }
        if batch == Some(0) {
            return Err(Error::invalid("minibatch size must be positive"));
        }
        for m in [&inputs, &w1, &w2] {
            crate::norms::ensure_finite(m)?;
        }
        let shape = ModelShape::new(vec![
            LayerSpec::new(w1.nrows(), w1.ncols(), norm, 1.0),
            LayerSpec::new(w2.nrows(), w2.ncols(), norm, 1.0),
        ])?;
        let outputs = &w2 * &w1 * &inputs;
        Ok(MatrixFactorization {
            shape,
            inputs,
            outputs,
            target: ParamVector::new(vec![w1, w2]),
            batch,
        })
    }

    /// Gaussian inputs and planted factors of shapes `rank x n` and `m x rank`.
    pub fn synthetic(
        m: usize,
        n: usize,
        rank: usize,
        n_points: usize,
        batch: Option<usize>,
        norm: NormKind,
        seed: u64,
    ) -> Result<Self> {
        if m == 0 || n == 0 || rank == 0 || n_points == 0 {
            return Err(Error::invalid("factorization dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = gaussian_matrix(&mut rng, n, n_points, 1.0);
        let w1 = gaussian_matrix(&mut rng, rank, n, 1.0 / (n as f64).sqrt());
        let w2 = gaussian_matrix(&mut rng, m, rank, 1.0 / (rank as f64).sqrt());
        MatrixFactorization::new(inputs, w1, w2, batch, norm)
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.ncols() == 0
    }

    pub(super) fn value(&self, x: &ParamVector) -> f64 {
        let r = &x.blocks[1] * &x.blocks[0] * &self.inputs - &self.outputs;
        0.5 * r.norm_squared() / self.len() as f64
    }

    pub(super) fn full_grad(&self, x: &ParamVector) -> ParamVector {
        self.grad_on(x, None)
    }

    pub(super) fn grad_on(&self, x: &ParamVector, idx: Option<&[usize]>) -> ParamVector {
        let (w1, w2) = (&x.blocks[0], &x.blocks[1]);
        let (a, b) = match idx {
            Some(idx) => (select_columns(&self.inputs, idx), select_columns(&self.outputs, idx)),
            None => (self.inputs.clone(), self.outputs.clone()),
        };
        let n = a.ncols() as f64;
        let hidden = w1 * &a;
        let resid = (w2 * &hidden - b) / n;
        let g2 = &resid * hidden.transpose();
        let g1 = w2.transpose() * resid * a.transpose();
        ParamVector::new(vec![g1, g2])
    }

    /// Factors of entry scale `0.5 / sqrt(fan_in)`.
    pub(super) fn initial_point(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        ParamVector::new(
            self.shape
                .layers()
                .iter()
                .map(|l| gaussian_matrix(rng, l.rows, l.cols, 0.5 / (l.cols as f64).sqrt()))
                .collect(),
        )
    }
}
