//! Variance of the unweighted mini-batch gradient `g* = (1/k) sum_{i in B} g_i`
//! around its mean `g^F = (1/k) sum_i b_i g_i`.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kdpp::enumerate::check_budget;
use crate::kdpp::{subset_log_probability, CorrelationMatrix, KdppSampler, MarginalVector};
use crate::kernels::{Dataset, SimilarityKernel};
use crate::rng::SeedPath;
use crate::trainer::LossModel;

/// Pairs `i != j` whose cross term `C_ij g_i^T g_j` is not negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientCondition {
    pub pairs: usize,
    pub violating_pairs: usize,
    /// `(1/k^2) sum |C_ij b_i b_j g_i^T g_j|` over the violating pairs.
    pub violation_mass: f64,
}

impl SufficientCondition {
    pub fn holds(&self) -> bool {
        self.violating_pairs == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloVariance {
    pub value: f64,
    /// `None` with a single draw.
    pub std_error: Option<f64>,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub k: usize,
    pub variance_mc: Option<MonteCarloVariance>,
    pub variance_exact: Option<f64>,
    pub variance_closed_form: f64,
    /// `(1/k^2) sum_i (b_i - b_i^2) ||g_i||^2`
    pub term_diagonal: f64,
    /// `(1/k^2) sum_{i != j} C_ij b_i b_j g_i^T g_j`
    pub term_cross: f64,
    /// Variance of the mean of `k` i.i.d. draws with `P(i) = b_i / k`, which
    /// has the same expectation `g^F` and, for uniform `b`, is plain uniform
    /// sampling with replacement.
    pub uniform_reference: f64,
    pub condition: SufficientCondition,
}

impl VarianceReport {
    /// `1 - closed_form / uniform_reference`.
    pub fn reduction(&self) -> f64 {
        if self.uniform_reference > 0.0 {
            1.0 - self.variance_closed_form / self.uniform_reference
        } else {
            0.0
        }
    }

    pub fn to_csv(&self) -> String {
        let mut rows = vec![
            ("k".to_string(), self.k.to_string()),
            ("variance_closed_form".into(), fmt(self.variance_closed_form)),
            ("term_diagonal".into(), fmt(self.term_diagonal)),
            ("term_cross".into(), fmt(self.term_cross)),
            ("uniform_reference".into(), fmt(self.uniform_reference)),
            ("reduction".into(), fmt(self.reduction())),
            ("condition_pairs".into(), self.condition.pairs.to_string()),
            ("condition_violating_pairs".into(), self.condition.violating_pairs.to_string()),
            ("condition_violation_mass".into(), fmt(self.condition.violation_mass)),
        ];
        if let Some(v) = self.variance_exact {
            rows.push(("variance_exact".into(), fmt(v)));
        }
        if let Some(mc) = self.variance_mc {
            rows.push(("variance_mc".into(), fmt(mc.value)));
            rows.push(("variance_mc_std_error".into(), mc.std_error.map(fmt).unwrap_or_else(|| "undefined".into())));
            rows.push(("variance_mc_draws".into(), mc.draws.to_string()));
        }
        let mut out = String::from("quantity,value\n");
        for (k, v) in rows {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "k = {}\nclosed form variance = {:.12e} (diagonal {:.6e}, cross {:.6e})\n",
            self.k, self.variance_closed_form, self.term_diagonal, self.term_cross
        );
        s.push_str(&format!(
            "i.i.d. reference variance = {:.12e} ({:+.2}% reduction)\n",
            self.uniform_reference,
            100.0 * self.reduction()
        ));
        s.push_str(&format!(
            "negative-correlation condition: {} of {} pairs violate it, mass {:.6e}\n",
            self.condition.violating_pairs, self.condition.pairs, self.condition.violation_mass
        ));
        if let Some(v) = self.variance_exact {
            let diff = (v - self.variance_closed_form).abs();
            s.push_str(&format!("exact variance = {v:.12e}; |closed form - exact| = {diff:.3e}\n"));
        }
        if let Some(mc) = self.variance_mc {
            match mc.std_error {
                Some(se) => s.push_str(&format!("monte carlo variance = {:.6e} +/- {se:.2e} ({} draws)\n", mc.value, mc.draws)),
                None => s.push_str(&format!("monte carlo variance = {:.6e} (1 draw, standard error undefined)\n", mc.value)),
            }
        }
        s
    }
}

fn fmt(v: f64) -> String {
    crate::io::fmt_f64(v)
}

/// Rows are `g_i = grad l(x_i, theta)`.
pub fn per_example_gradients<M: LossModel + ?Sized>(data: &Dataset, model: &M, params: &[f64]) -> Result<DMatrix<f64>> {
    let d = model.dimension();
    let mut g = DMatrix::zeros(data.len(), d);
    for i in 0..data.len() {
        let gi = model.gradient(data, i, params);
        if gi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
        for (c, v) in gi.into_iter().enumerate() {
            g[(i, c)] = v;
        }
    }
    Ok(g)
}

/// `g^F = (1/k) sum_i b_i g_i`
pub fn expected_gradient(gradients: &DMatrix<f64>, marginals: &MarginalVector) -> DVector<f64> {
    let b = DVector::from_column_slice(&marginals.values);
    gradients.tr_mul(&b) / marginals.k as f64
}

fn batch_mean(gradients: &DMatrix<f64>, batch: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(gradients.ncols());
    for &i in batch {
        m += gradients.row(i).transpose();
    }
    m / batch.len() as f64
}

/// Closed-form decomposition of `Var(g*)` from marginals and correlations.
pub fn gradient_variance_closed_form<M: LossModel + ?Sized>(
    data: &Dataset,
    model: &M,
    params: &[f64],
    marginals: &MarginalVector,
    correlations: &CorrelationMatrix,
    k: usize,
) -> Result<VarianceReport> {
    let n = data.len();
    if marginals.len() != n || correlations.values.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} rows, {} marginals, {} correlation rows",
            marginals.len(),
            correlations.values.nrows()
        )));
    }
    let g = per_example_gradients(data, model, params)?;
    let gram = &g * g.transpose();
    let b = &marginals.values;
    let kk = (k * k) as f64;

    let mut diag = 0.0;
    let mut cross = 0.0;
    let mut condition = SufficientCondition { pairs: 0, violating_pairs: 0, violation_mass: 0.0 };
    for i in 0..n {
        if b[i] <= 0.0 {
            continue;
        }
        diag += (b[i] - b[i] * b[i]) * gram[(i, i)];
        for j in 0..n {
            if j == i || b[j] <= 0.0 {
                continue;
            }
            let c = correlations.values[(i, j)];
            let term = c * b[i] * b[j] * gram[(i, j)];
            cross += term;
            condition.pairs += 1;
            if c * gram[(i, j)] >= 0.0 {
                condition.violating_pairs += 1;
                condition.violation_mass += term.abs() / kk;
            }
        }
    }
    let term_diagonal = diag / kk;
    let term_cross = cross / kk;

    let g_f = expected_gradient(&g, marginals);
    let weighted_sq: f64 = (0..n).map(|i| b[i] / k as f64 * gram[(i, i)]).sum();
    let uniform_reference = ((weighted_sq - g_f.norm_squared()) / k as f64).max(0.0);

    Ok(VarianceReport {
        k,
        variance_mc: None,
        variance_exact: None,
        variance_closed_form: term_diagonal + term_cross,
        term_diagonal,
        term_cross,
        uniform_reference,
        condition,
    })
}

/// `sum_Y P(Y) ||g*(Y) - g^F||^2` by enumerating every size-`k` subset, with
/// `g^F` taken from the same enumeration.
pub fn gradient_variance_exact<M: LossModel + ?Sized>(
    data: &Dataset,
    model: &M,
    params: &[f64],
    kernel: &SimilarityKernel,
    k: usize,
) -> Result<f64> {
    let n = data.len();
    if kernel.len() != n {
        return Err(Error::DimensionMismatch(format!("kernel has {} rows, data has {n}", kernel.len())));
    }
    check_budget(n, k)?;
    let decomp = crate::eigen::symmetric_eigendecomposition(kernel)?;
    let esp = crate::kdpp::elementary_symmetric_polynomials(&decomp.eigenvalues, k)?;
    let g = per_example_gradients(data, model, params)?;

    let mut support = Vec::new();
    let mut total = 0.0;
    for subset in (0..n).combinations(k) {
        let p = subset_log_probability(kernel, &esp, k, &subset)?.exp();
        if p > 0.0 {
            total += p;
            support.push((batch_mean(&g, &subset), p));
        }
    }
    if support.is_empty() {
        return Err(Error::RankDeficient { k, effective_rank: crate::eigen::effective_rank(&decomp) });
    }
    let mut mean = DVector::zeros(g.ncols());
    for (est, p) in &support {
        mean += est * (*p / total);
    }
    Ok(support.iter().map(|(est, p)| p / total * (est - &mean).norm_squared()).sum())
}

/// `(1/T) sum_t ||g*(B_t) - g^F||^2` with `g^F` from analytic marginals.
pub fn gradient_variance_monte_carlo<M: LossModel + ?Sized>(
    data: &Dataset,
    model: &M,
    params: &[f64],
    sampler: &KdppSampler,
    marginals: &MarginalVector,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloVariance> {
    if draws == 0 {
        return Err(Error::InvalidConfig("Monte Carlo variance needs at least one draw".into()));
    }
    if sampler.len() != data.len() || marginals.len() != data.len() {
        return Err(Error::DimensionMismatch("sampler, marginals and data disagree on N".into()));
    }
    let g = per_example_gradients(data, model, params)?;
    let g_f = expected_gradient(&g, marginals);
    let root = SeedPath::root(seed);
    let samples: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|t| {
            let batch = sampler.sample_at(root.split(t as u64))?;
            Ok((batch_mean(&g, &batch.indices) - &g_f).norm_squared())
        })
        .collect::<Result<_>>()?;
    let d = draws as f64;
    let value = samples.iter().sum::<f64>() / d;
    let std_error = (draws > 1).then(|| {
        let var = samples.iter().map(|s| (s - value).powi(2)).sum::<f64>() / (d - 1.0);
        (var / d).sqrt()
    });
    Ok(MonteCarloVariance { value, std_error, draws })
}
