//! Labelled Gaussian blobs with controllable class imbalance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::Dataset;
use crate::rng::SeedPath;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassBlob {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
    pub class: usize,
}

impl ClassBlob {
    /// Isotropic blob with covariance `variance * I`.
    pub fn isotropic(mean: Vec<f64>, variance: f64, count: usize, class: usize) -> Self {
        let d = mean.len();
        Self { mean, covariance: DMatrix::identity(d, d) * variance, count, class }
    }
}

/// Three overlapping 2-D classes with 300, 50 and 10 points.
pub fn synthetic_preset() -> Vec<ClassBlob> {
    vec![
        ClassBlob::isotropic(vec![0.0, 0.0], 1.0, 300, 0),
        ClassBlob::isotropic(vec![2.5, 0.0], 1.0, 50, 1),
        ClassBlob::isotropic(vec![1.25, 2.0], 1.0, 10, 2),
    ]
}

/// The same blobs with `per_class` points each, for held-out evaluation.
pub fn balanced_counterpart(blobs: &[ClassBlob], per_class: usize) -> Vec<ClassBlob> {
    blobs.iter().map(|b| ClassBlob { count: per_class, ..b.clone() }).collect()
}

/// `A` with `A A^T = cov`, from the eigendecomposition.
fn covariance_root(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    if cov.ncols() != d {
        return Err(Error::InvalidConfig("covariance must be square".into()));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("covariance has non-finite entries".into()));
    }
    let asym = (cov - cov.transpose()).amax();
    let scale = cov.amax().max(1.0);
    if asym > 1e-12 * scale {
        return Err(Error::InvalidConfig(format!("covariance is not symmetric (max asymmetry {asym:e})")));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let mut roots = DVector::zeros(d);
    for (r, &l) in roots.iter_mut().zip(eig.eigenvalues.iter()) {
        if l < -1e-12 * scale {
            return Err(Error::InvalidConfig(format!("covariance is not positive semidefinite (eigenvalue {l:e})")));
        }
        *r = l.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Rows are grouped by blob in the given order; blob `b` draws from stream
/// `b` of `seed`.
pub fn generate_imbalanced_gaussians(blobs: &[ClassBlob], seed: u64) -> Result<Dataset> {
    generate(blobs, SeedPath::root(seed))
}

/// `per_class` fresh points from each blob, on streams disjoint from
/// [`generate_imbalanced_gaussians`] with the same seed.
pub fn generate_held_out(blobs: &[ClassBlob], per_class: usize, seed: u64) -> Result<Dataset> {
    generate(&balanced_counterpart(blobs, per_class), SeedPath::new(seed, 1))
}

fn generate(blobs: &[ClassBlob], root: SeedPath) -> Result<Dataset> {
    let d = blobs.first().map(|b| b.mean.len()).ok_or_else(|| Error::InvalidConfig("no blobs".into()))?;
    if d == 0 {
        return Err(Error::InvalidConfig("blobs must have at least one dimension".into()));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (b, blob) in blobs.iter().enumerate() {
        if blob.mean.len() != d || blob.covariance.nrows() != d {
            return Err(Error::DimensionMismatch(format!("blob {b} is not {d}-dimensional")));
        }
        if blob.count == 0 {
            return Err(Error::InvalidConfig(format!("blob {b} has count 0")));
        }
        let factor = covariance_root(&blob.covariance)?;
        let mean = DVector::from_column_slice(&blob.mean);
        let mut rng = root.split(b as u64).rng();
        for _ in 0..blob.count {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            rows.push((&mean + &factor * z).iter().copied().collect());
            labels.push(blob.class);
        }
    }
    let m = blobs.iter().map(|b| b.class + 1).max().unwrap_or(0);
    Dataset::from_rows(&rows, Some(labels), None)?.with_num_classes(m)
}
