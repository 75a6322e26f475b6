use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    cross_entropy_logit_grad, gaussian_matrix, mean_cross_entropy, sample_labels, select_columns,
    LayerSpec, ModelShape, ParamVector,
};
use crate::norms::{Matrix, NormKind};
use crate::{Error, Result};

/// Parameters of a synthetic multinomial logistic-regression instance.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticSpec {
    pub n_points: usize,
    pub dim: usize,
    pub classes: usize,
    /// Standard deviation of the Gaussian features.
    pub feature_scale: f64,
    /// Entry scale of the teacher weights that generate the labels.
    pub teacher_scale: f64,
    /// Ridge coefficient `lambda` in `lambda/2 ||W||_F^2`.
    pub reg: f64,
    /// Minibatch size; `None` (or `>= n_points`) uses the whole dataset.
    pub batch: Option<usize>,
    pub norm: NormKind,
    pub t: f64,
    pub seed: u64,
}

impl Default for LogisticSpec {
    fn default() -> Self {
        LogisticSpec {
            n_points: 1024,
            dim: 16,
            classes: 4,
            feature_scale: 1.0,
            teacher_scale: 1.0,
            reg: 1e-3,
            batch: Some(8),
            norm: NormKind::Spectral,
            t: 1.0,
            seed: 0,
        }
    }
}

/// Softmax regression `W in R^{C x d}` with labels drawn from a teacher
/// model, so the data are not separable and the minimum is attained.
#[derive(Clone, Debug)]
pub struct LogisticRegression {
    pub(super) shape: ModelShape,
    features: Matrix,
    labels: Vec<usize>,
    reg: f64,
    pub(super) batch: Option<usize>,
}

impl LogisticRegression {
    /// `features` holds one data point per column.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        classes: usize,
        reg: f64,
        batch: Option<usize>,
        norm: NormKind,
        t: f64,
    ) -> Result<Self> {
        if features.ncols() == 0 || features.ncols() != labels.len() {
            return Err(Error::invalid("need one label per data column"));
        }
        if classes < 2 || labels.iter().any(|&y| y >= classes) {
            return Err(Error::invalid("labels must lie in 0..classes with classes >= 2"));
        }
        if !(reg.is_finite() && reg >= 0.0) {
            return Err(Error::invalid("regularisation must be nonnegative"));
        }
        if batch == Some(0) {
            return Err(Error::invalid("minibatch size must be positive"));
        }
        crate::norms::ensure_finite(&features)?;
        let shape = ModelShape::new(vec![LayerSpec::new(classes, features.nrows(), norm, t)])?;
        Ok(LogisticRegression { shape, features, labels, reg, batch })
    }

    pub fn synthetic(spec: &LogisticSpec) -> Result<Self> {
        if spec.n_points == 0 || spec.dim == 0 {
            return Err(Error::invalid("dataset must be nonempty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let features = gaussian_matrix(&mut rng, spec.dim, spec.n_points, spec.feature_scale);
        let teacher = gaussian_matrix(&mut rng, spec.classes, spec.dim, spec.teacher_scale);
        let labels = sample_labels(&(&teacher * &features), &mut rng);
        LogisticRegression::new(features, labels, spec.classes, spec.reg, spec.batch, spec.norm, spec.t)
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub(super) fn value(&self, x: &ParamVector) -> f64 {
        let w = &x.blocks[0];
        mean_cross_entropy(&(w * &self.features), &self.labels) + 0.5 * self.reg * w.norm_squared()
    }

    pub(super) fn full_grad(&self, x: &ParamVector) -> ParamVector {
        self.grad_on(x, None)
    }

    pub(super) fn grad_on(&self, x: &ParamVector, idx: Option<&[usize]>) -> ParamVector {
        let w = &x.blocks[0];
        let (a, labels) = match idx {
            Some(idx) => (
                select_columns(&self.features, idx),
                idx.iter().map(|&i| self.labels[i]).collect::<Vec<_>>(),
            ),
            None => (self.features.clone(), self.labels.clone()),
        };
        let d = cross_entropy_logit_grad(&(w * &a), &labels);
        ParamVector::new(vec![d * a.transpose() + w * self.reg])
    }
}
