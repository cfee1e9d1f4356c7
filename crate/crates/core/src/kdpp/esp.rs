//! Elementary symmetric polynomials of the kernel spectrum.
//!
//! `e_l^n` is the sum over all `l`-subsets of the first `n` eigenvalues of
//! their products; `e_k^N` normalizes the k-DPP. Entries are stored as natural
//! logarithms so that tables for large `N` and `k` neither overflow nor
//! underflow; every quantity the sampler needs is a ratio and is formed by
//! subtracting logs.

use crate::error::{Error, Result};

/// Downdated leave-one-out values that lost more than this many decimal
/// digits to cancellation are recomputed from scratch.
const MAX_DIGITS_LOST: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ElementarySymmetricTable {
    eigenvalues: Vec<f64>,
    k: usize,
    /// `(k + 1) x (N + 1)`, row-major by level `l`.
    log_table: Vec<f64>,
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn elementary_symmetric_polynomials(eigenvalues: &[f64], k: usize) -> Result<ElementarySymmetricTable> {
    let n = eigenvalues.len();
    if k == 0 || k > n {
        return Err(Error::InvalidBatchSize { k, n });
    }
    if let Some(&bad) = eigenvalues.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::NegativeEigenvalue(bad));
    }
    let cols = n + 1;
    let mut log_table = vec![f64::NEG_INFINITY; (k + 1) * cols];
    log_table[..cols].fill(0.0);
    for l in 1..=k {
        for col in 1..=n {
            let skip = log_table[l * cols + col - 1];
            let take = eigenvalues[col - 1].ln() + log_table[(l - 1) * cols + col - 1];
            log_table[l * cols + col] = log_add(skip, take);
        }
    }
    Ok(ElementarySymmetricTable { eigenvalues: eigenvalues.to_vec(), k, log_table })
}

impl ElementarySymmetricTable {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of eigenvalues `N`.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `ln e_l^n`, where `n` counts eigenvalues (0..=N).
    pub fn log_value(&self, l: usize, n: usize) -> f64 {
        assert!(l <= self.k && n <= self.len(), "e_{l}^{n} outside table");
        self.log_table[l * (self.len() + 1) + n]
    }

    pub fn value(&self, l: usize, n: usize) -> f64 {
        self.log_value(l, n).exp()
    }

    /// `ln e_l^N` for the full spectrum.
    pub fn log_normalizer(&self, l: usize) -> f64 {
        self.log_value(l, self.len())
    }

    /// Whether `e_l^N > 0`, i.e. at least `l` eigenvalues are nonzero.
    pub fn is_feasible(&self, l: usize) -> bool {
        l <= self.k && self.log_normalizer(l) > f64::NEG_INFINITY
    }

    /// Probability of keeping eigenvalue `n` (zero-based) while `l` picks
    /// remain and eigenvalues `n+1..N` have already been scanned:
    /// `lambda_n e_{l-1}^{n-1} / e_l^n` in one-based notation.
    pub fn inclusion_ratio(&self, l: usize, n: usize) -> f64 {
        let lambda = self.eigenvalues[n];
        if lambda == 0.0 {
            return 0.0;
        }
        let den = self.log_value(l, n + 1);
        if den == f64::NEG_INFINITY {
            return 0.0;
        }
        (lambda.ln() + self.log_value(l - 1, n) - den).exp()
    }

    /// `lambda_n e_{l-1}^{(-n)} / e_l^N` for every eigenvalue `n`, where
    /// `e^{(-n)}` omits `lambda_n`. For `l = k` this is the probability that
    /// eigenvector `n` is selected by the first sampling phase.
    ///
    /// Uses the downdating recurrence `e'_j = e_j - lambda_n e'_{j-1}` in
    /// ratio form, falling back to a fresh recurrence without `lambda_n` when
    /// cancellation eats more than six digits.
    pub fn leave_one_out_ratios(&self, l: usize) -> Vec<f64> {
        self.leave_one_out_with_stats(l).0
    }

    pub(crate) fn leave_one_out_with_stats(&self, l: usize) -> (Vec<f64>, usize) {
        assert!(l >= 1 && l <= self.k);
        let n = self.len();
        let log_full: Vec<f64> = (0..=l).map(|j| self.log_normalizer(j)).collect();
        let mut fallbacks = 0;
        let ratios = (0..n)
            .map(|idx| {
                let lambda = self.eigenvalues[idx];
                if lambda == 0.0 || log_full[l] == f64::NEG_INFINITY {
                    return 0.0;
                }
                match self.downdate(idx, l, &log_full) {
                    Some(r) => r,
                    None => {
                        fallbacks += 1;
                        let log_without = log_esp_excluding(&self.eigenvalues, idx, l - 1);
                        (lambda.ln() + log_without - log_full[l]).exp()
                    }
                }
            })
            .collect();
        (ratios, fallbacks)
    }

    /// Ratio form of the downdate. With `q_j = e'_j / e_j`,
    /// `q_j = 1 - q_{j-1} rho_j` and `rho_j = lambda e_{j-1} / e_j`, and the
    /// result is `q_{l-1} rho_l`.
    fn downdate(&self, idx: usize, l: usize, log_full: &[f64]) -> Option<f64> {
        let log_lambda = self.eigenvalues[idx].ln();
        let rho = |j: usize| (log_lambda + log_full[j - 1] - log_full[j]).exp();
        let mut q = 1.0;
        for j in 1..l {
            let t = q * rho(j);
            let next = 1.0 - t;
            if next <= 0.0 || (t / next).log10() > MAX_DIGITS_LOST {
                return None;
            }
            q = next;
        }
        Some(q * rho(l))
    }
}

/// `ln e_l` over all eigenvalues except `skip`.
fn log_esp_excluding(eigenvalues: &[f64], skip: usize, l: usize) -> f64 {
    let mut col = vec![f64::NEG_INFINITY; l + 1];
    col[0] = 0.0;
    for (idx, &lambda) in eigenvalues.iter().enumerate() {
        if idx == skip {
            continue;
        }
        let ll = lambda.ln();
        for j in (1..=l).rev() {
            col[j] = log_add(col[j], ll + col[j - 1]);
        }
    }
    col[l]
}
