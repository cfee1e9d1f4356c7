use crate::error::{Error, Result};
use crate::kdpp::MarginalVector;
use crate::kernels::Dataset;
use crate::trainer::loss::LossModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskReport {
    pub empirical_risk: f64,
    pub diversified_risk: f64,
}

/// `(1/N) sum_i l(x_i, theta)`
pub fn empirical_risk<M: LossModel + ?Sized>(data: &Dataset, model: &M, params: &[f64]) -> f64 {
    (0..data.len()).map(|i| model.loss(data, i, params)).sum::<f64>() / data.len() as f64
}

/// Expected mini-batch loss under the k-DPP, `(1/k) sum_i b_i l(x_i, theta)`.
pub fn diversified_risk<M: LossModel + ?Sized>(
    data: &Dataset,
    marginals: &MarginalVector,
    model: &M,
    params: &[f64],
) -> Result<f64> {
    if marginals.len() != data.len() {
        return Err(Error::DimensionMismatch(format!("{} marginals for {} rows", marginals.len(), data.len())));
    }
    let total: f64 = marginals
        .values
        .iter()
        .enumerate()
        .filter(|(_, b)| **b != 0.0)
        .map(|(i, b)| b * model.loss(data, i, params))
        .sum();
    Ok(total / marginals.k as f64)
}

pub fn risk_report<M: LossModel + ?Sized>(
    data: &Dataset,
    marginals: &MarginalVector,
    model: &M,
    params: &[f64],
) -> Result<RiskReport> {
    Ok(RiskReport {
        empirical_risk: empirical_risk(data, model, params),
        diversified_risk: diversified_risk(data, marginals, model, params)?,
    })
}

/// Recall of each class on `data`; `None` for classes with no examples.
pub fn per_class_recall<M: LossModel + ?Sized>(data: &Dataset, model: &M, params: &[f64]) -> Vec<Option<f64>> {
    let m = data.num_classes();
    let mut hits = vec![0usize; m];
    let mut totals = vec![0usize; m];
    for i in 0..data.len() {
        let Some(y) = data.label(i) else { continue };
        totals[y] += 1;
        if model.predict(data, i, params) == Some(y) {
            hits[y] += 1;
        }
    }
    hits.iter().zip(&totals).map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64)).collect()
}

/// Mean recall over classes that occur in `data`.
pub fn balanced_accuracy<M: LossModel + ?Sized>(data: &Dataset, model: &M, params: &[f64]) -> Option<f64> {
    let recalls: Vec<f64> = per_class_recall(data, model, params).into_iter().flatten().collect();
    (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64)
}
