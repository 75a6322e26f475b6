//! Layer-structured objectives with exact full gradients and replayable
//! stochastic gradients.

mod constants;
mod factorization;
mod logistic;
mod mlp;
mod quadratic;

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::norms::{self, Matrix, NormKind};
use crate::{Error, Result};

pub use constants::{estimate_constants, ProblemConstants};
pub use factorization::MatrixFactorization;
pub use logistic::{LogisticRegression, LogisticSpec};
pub use mlp::TwoLayerMlp;
pub use quadratic::NoisyQuadratic;

/// One parameter block: its shape, geometry and radius multiplier `t_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub rows: usize,
    pub cols: usize,
    pub norm: NormKind,
    pub t: f64,
}

impl LayerSpec {
    pub fn new(rows: usize, cols: usize, norm: NormKind, t: f64) -> Self {
        LayerSpec { rows, cols, norm, t }
    }
}

/// Ordered list of layers; the product space the optimizers act on.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelShape {
    layers: Vec<LayerSpec>,
}

impl ModelShape {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.rows == 0 || l.cols == 0 {
                return Err(Error::invalid(format!("layer {i} has an empty dimension")));
            }
            if !(l.t.is_finite() && l.t > 0.0) {
                return Err(Error::invalid(format!("layer {i} radius multiplier must be positive")));
            }
        }
        Ok(ModelShape { layers })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Same shape with every `t_i` replaced.
    pub fn with_radius_scales(&self, t: &[f64]) -> Result<Self> {
        if t.len() != self.layers.len() {
            return Err(Error::invalid("one radius multiplier per layer required"));
        }
        let layers = self
            .layers
            .iter()
            .zip(t)
            .map(|(l, &t)| LayerSpec { t, ..l.clone() })
            .collect();
        ModelShape::new(layers)
    }

    /// Same shape with every layer switched to `norm`.
    pub fn with_norm(&self, norm: NormKind) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerSpec { norm, ..l.clone() })
            .collect();
        ModelShape { layers }
    }

    pub fn check(&self, x: &ParamVector) -> Result<()> {
        if x.blocks.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} blocks, got {}",
                self.layers.len(),
                x.blocks.len()
            )));
        }
        for (i, (l, b)) in self.layers.iter().zip(&x.blocks).enumerate() {
            if b.shape() != (l.rows, l.cols) {
                return Err(Error::ShapeMismatch(format!(
                    "block {i}: expected {}x{}, got {}x{}",
                    l.rows,
                    l.cols,
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        Ok(())
    }

    /// Product norm `max_i ||X_i||_(i) / t_i`.
    pub fn product_norm(&self, x: &ParamVector) -> Result<f64> {
        self.check(x)?;
        let mut out = 0.0_f64;
        for (l, b) in self.layers.iter().zip(&x.blocks) {
            out = out.max(norms::norm(l.norm, b)? / l.t);
        }
        Ok(out)
    }

    /// Dual of the product norm: `sum_i t_i ||G_i||_(i)*`.
    pub fn product_dual_norm(&self, g: &ParamVector) -> Result<f64> {
        self.check(g)?;
        let mut out = 0.0;
        for (l, b) in self.layers.iter().zip(&g.blocks) {
            out += l.t * norms::dual_norm(l.norm, b)?;
        }
        Ok(out)
    }
}

/// The point `X = [X_1, ..., X_p]`, one dense block per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub blocks: Vec<Matrix>,
}

impl ParamVector {
    pub fn new(blocks: Vec<Matrix>) -> Self {
        ParamVector { blocks }
    }

    pub fn zeros(shape: &ModelShape) -> Self {
        ParamVector {
            blocks: shape
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn add(&self, other: &ParamVector) -> ParamVector {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> ParamVector {
        ParamVector {
            blocks: self.blocks.iter().map(|b| b * s).collect(),
        }
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &ParamVector) {
        for (s, b) in self.blocks.iter_mut().zip(&x.blocks) {
            *s += b * a;
        }
    }

    fn zip_map(&self, other: &ParamVector, f: impl Fn(&Matrix, &Matrix) -> Matrix) -> ParamVector {
        assert_eq!(self.blocks.len(), other.blocks.len(), "block count mismatch");
        ParamVector {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    /// Squared Euclidean norm summed over blocks.
    pub fn sq_norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    /// Largest entrywise absolute difference across all blocks.
    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Replayable randomness handle `xi`.
///
/// Every random quantity of a stochastic gradient is derived from `seed`, so
/// the same sample can be evaluated at any number of points. Minibatch
/// problems may carry the drawn index set explicitly.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sample {
    pub seed: u64,
    pub indices: Option<Vec<usize>>,
}

impl Sample {
    pub fn from_seed(seed: u64) -> Self {
        Sample { seed, indices: None }
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Fresh sample from the caller's generator; advancing it is the only side effect.
pub fn draw_sample<R: RngCore + ?Sized>(rng: &mut R) -> Sample {
    Sample::from_seed(rng.next_u64())
}

/// `n` indices in `0..len`, uniform with replacement, derived from `seed`.
pub(crate) fn indices_from_seed(seed: u64, len: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..len)).collect()
}

/// Gathers the selected columns of `data`.
pub(crate) fn select_columns(data: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(data.nrows(), idx.len(), |r, c| data[(r, idx[c])])
}

/// Column-wise softmax, stabilised by the column max.
pub(crate) fn softmax_columns(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut col in out.column_iter_mut() {
        let max = col.max();
        col.apply(|v| *v = (*v - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    out
}

/// Mean cross-entropy of column-wise softmax against integer labels.
pub(crate) fn mean_cross_entropy(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (j, col) in logits.column_iter().enumerate() {
        let max = col.max();
        let lse = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - col[labels[j]];
    }
    total / labels.len() as f64
}

/// `(softmax(logits) - onehot(labels)) / b`, the logit gradient of the mean loss.
pub(crate) fn cross_entropy_logit_grad(logits: &Matrix, labels: &[usize]) -> Matrix {
    let mut p = softmax_columns(logits);
    for (j, &y) in labels.iter().enumerate() {
        p[(y, j)] -= 1.0;
    }
    p / labels.len() as f64
}

/// Labels drawn from `softmax(logits)` column by column.
pub(crate) fn sample_labels<R: Rng + ?Sized>(logits: &Matrix, rng: &mut R) -> Vec<usize> {
    let probs = softmax_columns(logits);
    probs
        .column_iter()
        .map(|col| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (c, p) in col.iter().enumerate() {
                acc += p;
                if u < acc {
                    return c;
                }
            }
            col.len() - 1
        })
        .collect()
}

pub(crate) fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Matrix {
    use rand_distr::{Distribution, StandardNormal};
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(&mut *rng);
        std * z
    })
}

/// The objective `f(X) = E_xi f_xi(X)` of a synthetic problem.
#[derive(Clone, Debug)]
pub enum Problem {
    NoisyQuadratic(NoisyQuadratic),
    Logistic(LogisticRegression),
    Factorization(MatrixFactorization),
    Mlp(TwoLayerMlp),
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Problem::NoisyQuadratic(_) => "quadratic",
            Problem::Logistic(_) => "logistic",
            Problem::Factorization(_) => "factorization",
            Problem::Mlp(_) => "mlp",
        }
    }

    pub fn shape(&self) -> &ModelShape {
        match self {
            Problem::NoisyQuadratic(p) => p.shape(),
            Problem::Logistic(p) => p.shape(),
            Problem::Factorization(p) => p.shape(),
            Problem::Mlp(p) => p.shape(),
        }
    }

    /// Copy of the problem with a different geometry/radius layout of the same block shapes.
    pub fn with_shape(&self, shape: ModelShape) -> Result<Problem> {
        let old = self.shape();
        if shape.len() != old.len()
            || shape
                .layers()
                .iter()
                .zip(old.layers())
                .any(|(a, b)| (a.rows, a.cols) != (b.rows, b.cols))
        {
            return Err(Error::ShapeMismatch("block shapes must be unchanged".into()));
        }
        let mut p = self.clone();
        match &mut p {
            Problem::NoisyQuadratic(q) => q.shape = shape,
            Problem::Logistic(q) => q.shape = shape,
            Problem::Factorization(q) => q.shape = shape,
            Problem::Mlp(q) => q.shape = shape,
        }
        Ok(p)
    }

    pub fn value(&self, x: &ParamVector) -> Result<f64> {
        self.shape().check(x)?;
        Ok(match self {
            Problem::NoisyQuadratic(p) => p.value(x),
            Problem::Logistic(p) => p.value(x),
            Problem::Factorization(p) => p.value(x),
            Problem::Mlp(p) => p.value(x),
        })
    }

    pub fn full_grad(&self, x: &ParamVector) -> Result<ParamVector> {
        self.shape().check(x)?;
        Ok(match self {
            Problem::NoisyQuadratic(p) => p.full_grad(x),
            Problem::Logistic(p) => p.full_grad(x),
            Problem::Factorization(p) => p.full_grad(x),
            Problem::Mlp(p) => p.full_grad(x),
        })
    }

    pub fn stoch_grad(&self, sample: &Sample, x: &ParamVector) -> Result<ParamVector> {
        self.shape().check(x)?;
        let idx = match &sample.indices {
            Some(idx) => Some(std::borrow::Cow::Borrowed(idx.as_slice())),
            None => self.minibatch_indices(sample.seed).map(std::borrow::Cow::Owned),
        };
        if let (Some(idx), Some(len)) = (&idx, self.dataset_len()) {
            if idx.iter().any(|&i| i >= len) {
                return Err(Error::invalid("minibatch index out of range"));
            }
        }
        Ok(match self {
            Problem::NoisyQuadratic(p) => p.stoch_grad(sample, x),
            Problem::Logistic(p) => p.grad_on(x, idx.as_deref()),
            Problem::Factorization(p) => p.grad_on(x, idx.as_deref()),
            Problem::Mlp(p) => p.grad_on(x, idx.as_deref()),
        })
    }

    /// Number of data points for minibatch problems.
    pub fn dataset_len(&self) -> Option<usize> {
        match self {
            Problem::NoisyQuadratic(_) => None,
            Problem::Logistic(p) => Some(p.len()),
            Problem::Factorization(p) => Some(p.len()),
            Problem::Mlp(p) => Some(p.len()),
        }
    }

    /// Minibatch size, `None` when the oracle is not subsampled.
    pub fn batch_size(&self) -> Option<usize> {
        let (batch, len) = match self {
            Problem::NoisyQuadratic(_) => return None,
            Problem::Logistic(p) => (p.batch, p.len()),
            Problem::Factorization(p) => (p.batch, p.len()),
            Problem::Mlp(p) => (p.batch, p.len()),
        };
        batch.filter(|&b| b < len)
    }

    /// Index set that `seed` selects; `None` means the full dataset (or no data).
    pub fn minibatch_indices(&self, seed: u64) -> Option<Vec<usize>> {
        let b = self.batch_size()?;
        Some(indices_from_seed(seed, self.dataset_len()?, b))
    }

    /// Draws a sample and materialises its index set.
    pub fn draw_sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Sample {
        let seed = rng.next_u64();
        Sample {
            seed,
            indices: self.minibatch_indices(seed),
        }
    }

    /// `true` when `stoch_grad` equals `full_grad` for every sample.
    pub fn is_deterministic(&self) -> bool {
        match self {
            Problem::NoisyQuadratic(p) => p.sigma == 0.0,
            _ => self.batch_size().is_none(),
        }
    }

    /// Problem-specific starting point derived from `seed`.
    pub fn initial_point(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Problem::NoisyQuadratic(p) => p.initial_point(&mut rng),
            Problem::Logistic(p) => ParamVector::zeros(p.shape()),
            Problem::Factorization(p) => p.initial_point(&mut rng),
            Problem::Mlp(p) => p.initial_point(&mut rng),
        }
    }

    /// Analytic `inf f` when known.
    pub fn known_minimum(&self) -> Option<f64> {
        match self {
            Problem::NoisyQuadratic(_) | Problem::Factorization(_) => Some(0.0),
            _ => None,
        }
    }

    /// A known minimiser when one exists in closed form.
    pub fn known_minimizer(&self) -> Option<ParamVector> {
        match self {
            Problem::NoisyQuadratic(p) => Some(p.x_star.clone()),
            Problem::Factorization(p) => Some(p.target.clone()),
            _ => None,
        }
    }
}
