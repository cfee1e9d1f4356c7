//! Exact k-DPP sampling in two phases: pick `k` eigenvectors using the
//! elementary symmetric polynomials, then pick `k` items from the projection
//! DPP those eigenvectors span.

use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::Rng;
use rayon::prelude::*;

use crate::eigen::{effective_rank, EigenDecomposition};
use crate::error::{Error, Result};
use crate::kdpp::esp::{elementary_symmetric_polynomials, ElementarySymmetricTable};
use crate::rng::SeedPath;

/// Allowed drift of the item-selection distribution away from summing to one.
const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;
const DEGENERATE_NORM: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    /// Distinct zero-based item indices, ascending.
    pub indices: Vec<usize>,
    pub seed_path: Option<SeedPath>,
    pub log_probability: Option<f64>,
}

impl MiniBatch {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        Self { indices, seed_path: None, log_probability: None }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Checks `|indices| = k`, distinctness and range.
    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        if self.indices.len() != k {
            return Err(Error::SubsetSize { got: self.indices.len(), expected: k });
        }
        for w in self.indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidConfig(format!("mini-batch index {} repeated or unsorted", w[1])));
            }
        }
        match self.indices.last() {
            Some(&last) if last >= n => Err(Error::IndexOutOfRange { index: last, n }),
            _ => Ok(()),
        }
    }
}

/// Phase one: choose `k` eigenvector indices (zero-based), scanning from the
/// last eigenvalue to the first and keeping index `n` with probability
/// `lambda_n e_{l-1}^{n-1} / e_l^n` while `l` picks remain.
pub fn sample_eigenvector_indices<R: Rng + ?Sized>(
    esp: &ElementarySymmetricTable,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k == 0 || k > esp.k() {
        return Err(Error::InvalidBatchSize { k, n: esp.len() });
    }
    if !esp.is_feasible(k) {
        return Err(Error::RankDeficient { k, effective_rank: esp.eigenvalues().iter().filter(|&&l| l > 0.0).count() });
    }
    let mut chosen = Vec::with_capacity(k);
    let mut remaining = k;
    for n in (0..esp.len()).rev() {
        if remaining == 0 {
            break;
        }
        let u: f64 = rng.random();
        if u < esp.inclusion_ratio(remaining, n) {
            chosen.push(n);
            remaining -= 1;
        }
    }
    if remaining > 0 {
        return Err(Error::Numerical(format!(
            "eigenvector scan ended with {remaining} of {k} picks unfilled; elementary symmetric table is corrupt"
        )));
    }
    Ok(chosen)
}

/// Phase two: sample one item per selected eigenvector from the projection
/// DPP they span. Returns distinct item indices in selection order.
pub fn sample_items<R: Rng + ?Sized>(decomp: &EigenDecomposition, selected: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    let n = decomp.len();
    let mut basis: Vec<Vec<f64>> = selected
        .iter()
        .map(|&c| {
            if c >= n {
                return Err(Error::IndexOutOfRange { index: c, n });
            }
            if decomp.eigenvalues[c] <= 0.0 {
                return Err(Error::Numerical(format!("eigenvector {c} has zero eigenvalue")));
            }
            Ok(decomp.eigenvectors.column(c).iter().copied().collect())
        })
        .collect::<Result<_>>()?;

    let mut items = Vec::with_capacity(basis.len());
    let mut probs = vec![0.0; n];
    while !basis.is_empty() {
        let mut total = selection_probabilities(&basis, &mut probs);
        if (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            orthonormalize(&mut basis)?;
            total = selection_probabilities(&basis, &mut probs);
            if (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
                return Err(Error::Numerical(format!(
                    "item probabilities sum to {total} after re-orthogonalization"
                )));
            }
        }
        let u: f64 = rng.random();
        let item = inverse_cdf(&probs, u * total);
        items.push(item);

        let pivot = (0..basis.len())
            .max_by(|&a, &b| basis[a][item].abs().total_cmp(&basis[b][item].abs()).then(b.cmp(&a)))
            .expect("non-empty basis");
        let pivot_vec = basis.remove(pivot);
        for v in &mut basis {
            let f = v[item] / pivot_vec[item];
            for (x, p) in v.iter_mut().zip(&pivot_vec) {
                *x -= f * p;
            }
            v[item] = 0.0;
        }
        orthonormalize(&mut basis)?;
    }
    Ok(items)
}

fn selection_probabilities(basis: &[Vec<f64>], probs: &mut [f64]) -> f64 {
    let m = basis.len() as f64;
    probs.fill(0.0);
    for v in basis {
        for (p, x) in probs.iter_mut().zip(v) {
            *p += x * x;
        }
    }
    let mut total = 0.0;
    for p in probs.iter_mut() {
        *p /= m;
        total += *p;
    }
    total
}

/// First index whose cumulative mass exceeds `target`; rounding residue past
/// the last bucket lands on the last index with positive mass.
fn inverse_cdf(probs: &[f64], target: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = i;
            if cum > target {
                return i;
            }
        }
    }
    last_positive
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
fn orthonormalize(basis: &mut [Vec<f64>]) -> Result<()> {
    for c in 0..basis.len() {
        let (done, rest) = basis.split_at_mut(c);
        let v = &mut rest[0];
        for _pass in 0..2 {
            for b in done.iter() {
                let d = dot(v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
        }
        let norm = dot(v, v).sqrt();
        if norm < DEGENERATE_NORM {
            return Err(Error::Numerical(format!("basis vector {c} collapsed during orthogonalization")));
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sample_minibatch<R: Rng + ?Sized>(
    decomp: &EigenDecomposition,
    esp: &ElementarySymmetricTable,
    k: usize,
    rng: &mut R,
) -> Result<MiniBatch> {
    let selected = sample_eigenvector_indices(esp, k, rng)?;
    let items = sample_items(decomp, &selected, rng)?;
    Ok(MiniBatch::new(items))
}

/// A decomposition and polynomial table bundled for repeated draws of size `k`.
#[derive(Debug, Clone)]
pub struct KdppSampler {
    decomp: Arc<EigenDecomposition>,
    esp: ElementarySymmetricTable,
    k: usize,
}

impl KdppSampler {
    /// Fails with [`Error::RankDeficient`] when `k` exceeds the effective rank.
    pub fn new(decomp: impl Into<Arc<EigenDecomposition>>, k: usize) -> Result<Self> {
        let decomp = decomp.into();
        let n = decomp.len();
        if k == 0 || k > n {
            return Err(Error::InvalidBatchSize { k, n });
        }
        let rank = effective_rank(&decomp);
        if k > rank {
            return Err(Error::RankDeficient { k, effective_rank: rank });
        }
        let esp = elementary_symmetric_polynomials(&decomp.eigenvalues, k)?;
        Ok(Self { decomp, esp, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.decomp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decomp.is_empty()
    }

    pub fn decomposition(&self) -> &EigenDecomposition {
        &self.decomp
    }

    pub fn esp(&self) -> &ElementarySymmetricTable {
        &self.esp
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MiniBatch> {
        sample_minibatch(&self.decomp, &self.esp, self.k, rng)
    }

    /// Draw from a fresh stream at `path`; the batch records the path.
    pub fn sample_at(&self, path: SeedPath) -> Result<MiniBatch> {
        let mut batch = self.sample(&mut path.rng())?;
        batch.seed_path = Some(path);
        Ok(batch)
    }

    /// Batch `t` of the schedule seeded by `master`.
    pub fn schedule_path(master: u64, t: usize) -> SeedPath {
        SeedPath::root(master).split(t as u64)
    }

    /// Draw `count` batches in parallel, each from its own split stream.
    /// The result is ordered by batch index and independent of thread count.
    pub fn presample(&self, master: u64, count: usize) -> Result<Vec<MiniBatch>> {
        (0..count).into_par_iter().map(|t| self.sample_at(Self::schedule_path(master, t))).collect()
    }
}

/// Fill a bounded FIFO with the batches [`KdppSampler::presample`] would
/// produce, from a background thread. Dropping the receiver stops the
/// producer.
pub fn spawn_producer(
    sampler: Arc<KdppSampler>,
    master: u64,
    count: usize,
    capacity: usize,
) -> (Receiver<Result<MiniBatch>>, JoinHandle<()>) {
    let (tx, rx) = sync_channel(capacity.max(1));
    let handle = std::thread::spawn(move || {
        for t in 0..count {
            let batch = sampler.sample_at(KdppSampler::schedule_path(master, t));
            let failed = batch.is_err();
            if tx.send(batch).is_err() || failed {
                break;
            }
        }
    });
    (rx, handle)
}
