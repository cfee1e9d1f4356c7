//! Inclusion statistics of the k-DPP: subset probabilities, first-order
//! marginals `b_i = E[m_i]`, pair inclusions `E[m_i m_j]` and the normalized
//! correlation `C_ij = E[m_i m_j] / (b_i b_j) - 1`.

use itertools::Itertools;
use nalgebra::DMatrix;

use crate::eigen::EigenDecomposition;
use crate::error::{Error, Result};
use crate::kdpp::enumerate::check_budget;
use crate::kdpp::esp::ElementarySymmetricTable;
use crate::kdpp::sampler::sample_minibatch;
use crate::kernels::SimilarityKernel;
use crate::rng::SeedPath;

/// Relative pivot size below which a principal submatrix counts as singular.
const SINGULAR_PIVOT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalVector {
    pub values: Vec<f64>,
    pub k: usize,
}

impl MarginalVector {
    pub fn new(values: Vec<f64>, k: usize) -> Self {
        Self { values, k }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// `log det(L_Y)` by Cholesky with diagonal pivoting, `-inf` when a pivot
/// falls below `SINGULAR_PIVOT` times the largest diagonal entry.
pub fn log_det_psd(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a = m.clone();
    let scale = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut log_det = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[(x, x)].total_cmp(&a[(y, y)])).unwrap();
        a.swap_rows(c, p);
        a.swap_columns(c, p);
        let pivot = a[(c, c)];
        if pivot <= SINGULAR_PIVOT * scale {
            return f64::NEG_INFINITY;
        }
        log_det += pivot.ln();
        for i in c + 1..n {
            let f = a[(i, c)] / pivot;
            for j in c + 1..n {
                a[(i, j)] -= f * a[(c, j)];
            }
        }
    }
    log_det
}

/// `log P(Y) = log det(L_Y) - log e_k^N`.
pub fn subset_log_probability(kernel: &SimilarityKernel, esp: &ElementarySymmetricTable, k: usize, subset: &[usize]) -> Result<f64> {
    if subset.len() != k {
        return Err(Error::SubsetSize { got: subset.len(), expected: k });
    }
    let n = kernel.len();
    if let Some(&bad) = subset.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, n });
    }
    if !esp.is_feasible(k) {
        return Err(Error::RankDeficient { k, effective_rank: esp.eigenvalues().iter().filter(|&&l| l > 0.0).count() });
    }
    if subset.iter().duplicates().next().is_some() {
        return Ok(f64::NEG_INFINITY);
    }
    let sub = DMatrix::from_fn(k, k, |a, b| kernel.matrix[(subset[a], subset[b])]);
    Ok(log_det_psd(&sub) - esp.log_normalizer(k))
}

/// Analytic first-order marginals
/// `b_i = sum_n v_{n,i}^2 lambda_n e_{k-1}^{(-n)} / e_k^N`.
pub fn marginal_probabilities(decomp: &EigenDecomposition, esp: &ElementarySymmetricTable, k: usize) -> Result<MarginalVector> {
    if k == 0 || k > esp.k() {
        return Err(Error::InvalidBatchSize { k, n: esp.len() });
    }
    if !esp.is_feasible(k) {
        return Err(Error::RankDeficient { k, effective_rank: esp.eigenvalues().iter().filter(|&&l| l > 0.0).count() });
    }
    let weights = esp.leave_one_out_ratios(k);
    let v = &decomp.eigenvectors;
    let values = (0..decomp.len())
        .map(|i| {
            weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(|(n, w)| v[(i, n)] * v[(i, n)] * w)
                .sum::<f64>()
                .min(1.0)
        })
        .collect();
    Ok(MarginalVector::new(values, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    ExactEnumeration,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairInclusions {
    /// `E[m_i m_j]`; the diagonal is `E[m_i] = b_i`.
    pub mean: DMatrix<f64>,
    /// Standard error of each entry in Monte Carlo mode.
    pub std_error: Option<DMatrix<f64>>,
}

pub fn pair_inclusion_probabilities(
    kernel: &SimilarityKernel,
    decomp: &EigenDecomposition,
    esp: &ElementarySymmetricTable,
    k: usize,
    mode: PairMode,
) -> Result<PairInclusions> {
    let n = kernel.len();
    let mut mean = DMatrix::zeros(n, n);
    match mode {
        PairMode::ExactEnumeration => {
            check_budget(n, k)?;
            for subset in (0..n).combinations(k) {
                let p = subset_log_probability(kernel, esp, k, &subset)?.exp();
                if p == 0.0 {
                    continue;
                }
                for &i in &subset {
                    for &j in &subset {
                        mean[(i, j)] += p;
                    }
                }
            }
            Ok(PairInclusions { mean, std_error: None })
        }
        PairMode::MonteCarlo { draws, seed } => {
            if draws == 0 {
                return Err(Error::InvalidConfig("Monte Carlo mode needs at least one draw".into()));
            }
            for t in 0..draws {
                let mut rng = SeedPath::root(seed).split(t as u64).rng();
                let batch = sample_minibatch(decomp, esp, k, &mut rng)?;
                for &i in &batch.indices {
                    for &j in &batch.indices {
                        mean[(i, j)] += 1.0;
                    }
                }
            }
            let d = draws as f64;
            mean /= d;
            let std_error = mean.map(|p: f64| (p * (1.0 - p) / d).sqrt());
            Ok(PairInclusions { mean, std_error: Some(std_error) })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    /// `C_ij = E[m_i m_j] / (b_i b_j) - 1`, diagonal `1/b_i - 1`. Rows and
    /// columns of items with `b_i = 0` are NaN.
    pub values: DMatrix<f64>,
    /// Items whose correlation is undefined because `b_i = 0`.
    pub undefined: Vec<usize>,
}

pub fn correlation_matrix(marginals: &MarginalVector, pairs: &PairInclusions) -> Result<CorrelationMatrix> {
    let n = marginals.len();
    if pairs.mean.nrows() != n || pairs.mean.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} marginals, {}x{} pair table",
            n,
            pairs.mean.nrows(),
            pairs.mean.ncols()
        )));
    }
    let b = &marginals.values;
    let undefined: Vec<usize> = (0..n).filter(|&i| !(b[i] > 0.0)).collect();
    let values = DMatrix::from_fn(n, n, |i, j| {
        if !(b[i] > 0.0 && b[j] > 0.0) {
            f64::NAN
        } else if i == j {
            1.0 / b[i] - 1.0
        } else {
            pairs.mean[(i, j)] / (b[i] * b[j]) - 1.0
        }
    });
    Ok(CorrelationMatrix { values, undefined })
}
