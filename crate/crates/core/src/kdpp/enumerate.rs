//! Exhaustive k-subset enumeration, used as a reference distribution.

use itertools::Itertools;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::SimilarityKernel;

/// Largest `C(N, k)` any enumeration will attempt.
pub const ENUMERATION_BUDGET: u128 = 2_000_000;

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

pub(crate) fn check_budget(n: usize, k: usize) -> Result<()> {
    let count = binomial(n, k);
    if count > ENUMERATION_BUDGET {
        return Err(Error::EnumerationBudget { n, k, count, budget: ENUMERATION_BUDGET });
    }
    Ok(())
}

/// All k-subsets of a kernel with their k-DPP probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetDistribution {
    pub n: usize,
    pub k: usize,
    /// Ascending index lists in lexicographic order.
    pub subsets: Vec<Vec<usize>>,
    pub probabilities: Vec<f64>,
}

impl SubsetDistribution {
    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.subsets.iter().map(Vec::as_slice).zip(self.probabilities.iter().copied())
    }

    pub fn probability_of(&self, subset: &[usize]) -> Option<f64> {
        let mut key = subset.to_vec();
        key.sort_unstable();
        self.subsets.binary_search(&key).ok().map(|i| self.probabilities[i])
    }

    /// `E[f(Y)]` under this distribution.
    pub fn expectation<F: FnMut(&[usize]) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(s, p)| p * f(s)).sum()
    }

    pub fn marginals(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.n];
        for (s, p) in self.iter() {
            for &i in s {
                b[i] += p;
            }
        }
        b
    }

    /// `E[m_i m_j]`; the diagonal holds the marginals.
    pub fn pair_inclusions(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (s, p) in self.iter() {
            for &i in s {
                for &j in s {
                    m[(i, j)] += p;
                }
            }
        }
        m
    }

    /// Total variation distance to an empirical frequency table.
    pub fn total_variation<'a>(&self, empirical: impl IntoIterator<Item = (&'a [usize], f64)>) -> f64 {
        let mut seen = vec![0.0; self.subsets.len()];
        let mut outside = 0.0;
        for (s, f) in empirical {
            match self.subsets.binary_search_by(|probe| probe.as_slice().cmp(s)) {
                Ok(i) => seen[i] += f,
                Err(_) => outside += f,
            }
        }
        let inside: f64 = seen.iter().zip(&self.probabilities).map(|(f, p)| (f - p).abs()).sum();
        0.5 * (inside + outside)
    }
}

/// Every k-subset weighted by `det(L_Y)` and normalized by the sum of
/// determinants. Determinants come from an LU factorization of each
/// submatrix; slightly negative values from rounding are set to zero.
pub fn brute_force_subset_distribution(kernel: &SimilarityKernel, k: usize) -> Result<SubsetDistribution> {
    let n = kernel.len();
    if k == 0 || k > n {
        return Err(Error::InvalidBatchSize { k, n });
    }
    check_budget(n, k)?;
    let subsets: Vec<Vec<usize>> = (0..n).combinations(k).collect();
    let mut weights: Vec<f64> = subsets
        .iter()
        .map(|s| {
            let sub = DMatrix::from_fn(k, k, |a, b| kernel.matrix[(s[a], s[b])]);
            sub.determinant().max(0.0)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::RankDeficient { k, effective_rank: 0 });
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(SubsetDistribution { n, k, subsets, probabilities: weights })
}
