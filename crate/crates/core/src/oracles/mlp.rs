use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    cross_entropy_logit_grad, gaussian_matrix, mean_cross_entropy, sample_labels, select_columns,
    LayerSpec, ModelShape, ParamVector,
};
use crate::norms::{Matrix, NormKind};
use crate::{Error, Result};

/// Classifier `softmax(W2 tanh(W1 a))` trained with mean cross-entropy.
#[derive(Clone, Debug)]
pub struct TwoLayerMlp {
    pub(super) shape: ModelShape,
    features: Matrix,
    labels: Vec<usize>,
    pub(super) batch: Option<usize>,
}

impl TwoLayerMlp {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        hidden: usize,
        classes: usize,
        batch: Option<usize>,
        norm: NormKind,
    ) -> Result<Self> {
        if features.ncols() == 0 || features.ncols() != labels.len() {
            return Err(Error::invalid("need one label per data column"));
        }
        if classes < 2 || labels.iter().any(|&y| y >= classes) {
            return Err(Error::invalid("labels must lie in 0..classes with classes >= 2"));
        }
        if batch == Some(0) {
            return Err(Error::invalid("minibatch size must be positive"));
        }
        crate::norms::ensure_finite(&features)?;
        let shape = ModelShape::new(vec![
            LayerSpec::new(hidden, features.nrows(), norm, 1.0),
            LayerSpec::new(classes, hidden, norm, 1.0),
        ])?;
        Ok(TwoLayerMlp { shape, features, labels, batch })
    }

    /// Gaussian inputs labelled by sampling from a random teacher network.
    pub fn synthetic(
        n_points: usize,
        dim: usize,
        hidden: usize,
        classes: usize,
        batch: Option<usize>,
        norm: NormKind,
        seed: u64,
    ) -> Result<Self> {
        if n_points == 0 || dim == 0 || hidden == 0 {
            return Err(Error::invalid("mlp dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = gaussian_matrix(&mut rng, dim, n_points, 1.0);
        let t1 = gaussian_matrix(&mut rng, hidden, dim, 1.0 / (dim as f64).sqrt());
        let t2 = gaussian_matrix(&mut rng, classes, hidden, 2.0 / (hidden as f64).sqrt());
        let logits = t2 * (t1 * &features).map(f64::tanh);
        let labels = sample_labels(&logits, &mut rng);
        TwoLayerMlp::new(features, labels, hidden, classes, batch, norm)
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
        let h = (&x.blocks[0] * &self.features).map(f64::tanh);
        mean_cross_entropy(&(&x.blocks[1] * h), &self.labels)
    }

    pub(super) fn full_grad(&self, x: &ParamVector) -> ParamVector {
        self.grad_on(x, None)
    }

    pub(super) fn grad_on(&self, x: &ParamVector, idx: Option<&[usize]>) -> ParamVector {
        let (w1, w2) = (&x.blocks[0], &x.blocks[1]);
        let (a, labels) = match idx {
            Some(idx) => (
                select_columns(&self.features, idx),
                idx.iter().map(|&i| self.labels[i]).collect::<Vec<_>>(),
            ),
            None => (self.features.clone(), self.labels.clone()),
        };
        let h = (w1 * &a).map(f64::tanh);
        let d2 = cross_entropy_logit_grad(&(w2 * &h), &labels);
        let g2 = &d2 * h.transpose();
        let d1 = (w2.transpose() * d2).component_mul(&h.map(|v| 1.0 - v * v));
        let g1 = d1 * a.transpose();
        ParamVector::new(vec![g1, g2])
    }

    pub(super) fn initial_point(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        ParamVector::new(
            self.shape
                .layers()
                .iter()
                .map(|l| gaussian_matrix(rng, l.rows, l.cols, 1.0 / (l.cols as f64).sqrt()))
                .collect(),
        )
    }
}
