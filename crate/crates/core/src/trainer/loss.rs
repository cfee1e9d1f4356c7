//! Per-example differentiable losses.

use crate::kernels::Dataset;

/// A loss `l(x_i, theta)` with its gradient in `theta`, evaluated on row `i`
/// of a dataset.
pub trait LossModel: Send + Sync {
    /// Number of parameters.
    fn dimension(&self) -> usize;

    fn loss(&self, data: &Dataset, i: usize, params: &[f64]) -> f64;

    fn gradient(&self, data: &Dataset, i: usize, params: &[f64]) -> Vec<f64>;

    /// Predicted class, for models that classify.
    fn predict(&self, _data: &Dataset, _i: usize, _params: &[f64]) -> Option<usize> {
        None
    }

    fn initial_params(&self) -> Vec<f64> {
        vec![0.0; self.dimension()]
    }
}

/// `l = 1/2 ||x - theta||^2`, minimized by the (weighted) mean of the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadraticLoss {
    pub dim: usize,
}

impl QuadraticLoss {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl LossModel for QuadraticLoss {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn loss(&self, data: &Dataset, i: usize, params: &[f64]) -> f64 {
        0.5 * data.features.row(i).iter().zip(params).map(|(x, t)| (x - t).powi(2)).sum::<f64>()
    }

    fn gradient(&self, data: &Dataset, i: usize, params: &[f64]) -> Vec<f64> {
        data.features.row(i).iter().zip(params).map(|(x, t)| t - x).collect()
    }
}

/// Multinomial logistic regression with cross-entropy loss.
///
/// Parameters form a `(d + 1) x M` weight matrix stored row-major (feature
/// `f`, class `c` at `f * M + c`); the last row multiplies a constant 1 when
/// `intercept` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftmaxRegression {
    pub num_features: usize,
    pub num_classes: usize,
    pub intercept: bool,
}

impl SoftmaxRegression {
    pub fn new(num_features: usize, num_classes: usize) -> Self {
        Self { num_features, num_classes, intercept: true }
    }

    pub fn for_dataset(data: &Dataset) -> Self {
        Self::new(data.dim(), data.num_classes())
    }

    fn inputs(&self) -> usize {
        self.num_features + usize::from(self.intercept)
    }

    fn augmented(&self, data: &Dataset, i: usize) -> Vec<f64> {
        let mut x: Vec<f64> = data.features.row(i).iter().copied().collect();
        if self.intercept {
            x.push(1.0);
        }
        x
    }

    /// Class probabilities `softmax(W^T x)`.
    pub fn probabilities(&self, data: &Dataset, i: usize, params: &[f64]) -> Vec<f64> {
        let m = self.num_classes;
        let x = self.augmented(data, i);
        let mut logits = vec![0.0; m];
        for (f, xf) in x.iter().enumerate() {
            for (c, z) in logits.iter_mut().enumerate() {
                *z += params[f * m + c] * xf;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for z in logits.iter_mut() {
            *z = (*z - max).exp();
            total += *z;
        }
        logits.iter_mut().for_each(|z| *z /= total);
        logits
    }

    fn label(data: &Dataset, i: usize) -> usize {
        data.label(i).expect("softmax regression needs labels")
    }
}

impl LossModel for SoftmaxRegression {
    fn dimension(&self) -> usize {
        self.inputs() * self.num_classes
    }

    fn loss(&self, data: &Dataset, i: usize, params: &[f64]) -> f64 {
        let m = self.num_classes;
        let x = self.augmented(data, i);
        let mut logits = vec![0.0; m];
        for (f, xf) in x.iter().enumerate() {
            for (c, z) in logits.iter_mut().enumerate() {
                *z += params[f * m + c] * xf;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        lse - logits[Self::label(data, i)]
    }

    fn gradient(&self, data: &Dataset, i: usize, params: &[f64]) -> Vec<f64> {
        let m = self.num_classes;
        let mut residual = self.probabilities(data, i, params);
        residual[Self::label(data, i)] -= 1.0;
        let x = self.augmented(data, i);
        let mut g = vec![0.0; self.dimension()];
        for (f, xf) in x.iter().enumerate() {
            for (c, r) in residual.iter().enumerate() {
                g[f * m + c] = r * xf;
            }
        }
        g
    }

    fn predict(&self, data: &Dataset, i: usize, params: &[f64]) -> Option<usize> {
        let p = self.probabilities(data, i, params);
        (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
    }
}
