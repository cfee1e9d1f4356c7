//! Class frequencies of a dataset versus the multiset union of its sampled
//! mini-batches.

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::kdpp::MiniBatch;
use crate::kernels::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceHistogram {
    pub original_counts: Vec<usize>,
    /// Occurrences in all batches, with multiplicity.
    pub balanced_counts: Vec<usize>,
    pub original_freq: Vec<f64>,
    pub balanced_freq: Vec<f64>,
}

/// `max / min` over entries, infinite when some entry is zero.
pub fn imbalance_factor(freq: &[f64]) -> f64 {
    let max = freq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = freq.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn normalize(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts.iter().map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 }).collect()
}

impl BalanceHistogram {
    pub fn num_classes(&self) -> usize {
        self.original_counts.len()
    }

    /// Over classes present in the dataset.
    pub fn original_imbalance(&self) -> f64 {
        imbalance_factor(&self.present(&self.original_freq))
    }

    /// Over classes present in the dataset.
    pub fn balanced_imbalance(&self) -> f64 {
        imbalance_factor(&self.present(&self.balanced_freq))
    }

    fn present(&self, freq: &[f64]) -> Vec<f64> {
        freq.iter().zip(&self.original_counts).filter(|(_, &c)| c > 0).map(|(f, _)| *f).collect()
    }

    /// `class,original_count,balanced_count,original_freq,balanced_freq`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,original_count,balanced_count,original_freq,balanced_freq\n");
        for c in 0..self.num_classes() {
            out.push_str(&format!(
                "{c},{},{},{},{}\n",
                self.original_counts[c],
                self.balanced_counts[c],
                fmt_f64(self.original_freq[c]),
                fmt_f64(self.balanced_freq[c])
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in 0..self.num_classes() {
            s.push_str(&format!(
                "class {c}: original {:.4} ({}), balanced {:.4} ({})\n",
                self.original_freq[c], self.original_counts[c], self.balanced_freq[c], self.balanced_counts[c]
            ));
        }
        s.push_str(&format!(
            "imbalance factor: original {:.4}, balanced {:.4}\n",
            self.original_imbalance(),
            self.balanced_imbalance()
        ));
        s
    }
}

pub fn balance_histogram(data: &Dataset, batches: &[MiniBatch]) -> Result<BalanceHistogram> {
    let labels = data
        .labels
        .as_ref()
        .ok_or(Error::MissingColumn { kind: "balance histogram", what: "a label column" })?;
    let m = data.num_classes();
    let mut original_counts = vec![0; m];
    for &y in labels {
        original_counts[y] += 1;
    }
    let mut balanced_counts = vec![0; m];
    for batch in batches {
        for &i in &batch.indices {
            let y = *labels.get(i).ok_or(Error::IndexOutOfRange { index: i, n: data.len() })?;
            balanced_counts[y] += 1;
        }
    }
    Ok(BalanceHistogram {
        original_freq: normalize(&original_counts),
        balanced_freq: normalize(&balanced_counts),
        original_counts,
        balanced_counts,
    })
}
