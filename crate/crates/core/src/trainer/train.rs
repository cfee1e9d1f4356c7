//! SGD loops over k-DPP, stratified and uniform mini-batches.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::eigen::symmetric_eigendecomposition;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_string};
use crate::kdpp::{marginal_probabilities, KdppSampler, MarginalVector, MiniBatch, Schedule};
use crate::kernels::{build_kernel, Dataset, KernelKind, KernelSpec, SimilarityKernel};
use crate::rng::SeedPath;
use crate::trainer::loss::LossModel;
use crate::trainer::risk::{balanced_accuracy, empirical_risk};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    /// `rho_t = (tau0 + t)^(-kappa)`
    Decaying { tau0: f64, kappa: f64 },
    Constant(f64),
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate::Decaying { tau0: 1.0, kappa: 0.6 }
    }
}

impl LearningRate {
    pub fn rate(&self, t: usize) -> f64 {
        match *self {
            LearningRate::Decaying { tau0, kappa } => (tau0 + t as f64).powf(-kappa),
            LearningRate::Constant(r) => r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LearningRate::Decaying { tau0, kappa } => {
                if !(tau0 > 0.0) {
                    return Err(Error::InvalidConfig(format!("tau0 = {tau0} must be positive")));
                }
                if !(kappa > 0.5 && kappa <= 1.0) {
                    return Err(Error::InvalidConfig(format!("kappa = {kappa} outside (0.5, 1]")));
                }
                Ok(())
            }
            LearningRate::Constant(r) if !(r >= 0.0 && r.is_finite()) => {
                Err(Error::InvalidConfig(format!("constant rate {r} must be non-negative")))
            }
            LearningRate::Constant(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    DmSgd,
    DmSgdUnbiased,
    UniformSgd,
    StratifiedSgd,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::DmSgd => "dm",
            TrainMode::DmSgdUnbiased => "dm-unbiased",
            TrainMode::UniformSgd => "uniform",
            TrainMode::StratifiedSgd => "stratified",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dm" | "dm_sgd" => Ok(TrainMode::DmSgd),
            "dm-unbiased" | "dm_sgd_unbiased" => Ok(TrainMode::DmSgdUnbiased),
            "uniform" | "uniform_sgd" => Ok(TrainMode::UniformSgd),
            "stratified" | "stratified_sgd" => Ok(TrainMode::StratifiedSgd),
            _ => Err(Error::InvalidConfig(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub steps: usize,
    pub learning_rate: LearningRate,
    pub mode: TrainMode,
    pub master_seed: u64,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, k: usize, steps: usize, master_seed: u64) -> Self {
        Self { k, steps, learning_rate: LearningRate::default(), mode, master_seed }
    }

    pub fn with_learning_rate(mut self, lr: LearningRate) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        self.learning_rate.validate()
    }
}

/// Steps needed for one effective pass over `n` examples with batch size `k`.
pub fn steps_per_pass(n: usize, k: usize) -> usize {
    n.div_ceil(k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub rate: f64,
    pub batch: Vec<usize>,
    pub grad_norm: f64,
    pub train_risk: f64,
    pub balanced_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<StepRecord>,
    pub params: Vec<f64>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `step,rate,grad_norm,train_risk[,balanced_accuracy]`
    pub fn to_csv(&self) -> String {
        let with_acc = self.records.iter().any(|r| r.balanced_accuracy.is_some());
        let mut out = String::from("step,rate,grad_norm,train_risk");
        if with_acc {
            out.push_str(",balanced_accuracy");
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}", r.step, fmt_f64(r.rate), fmt_f64(r.grad_norm), fmt_f64(r.train_risk)));
            if with_acc {
                out.push(',');
                out.push_str(&r.balanced_accuracy.map(fmt_f64).unwrap_or_default());
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_csv())
    }

    pub fn write_params(&self, path: &Path) -> Result<()> {
        let mut out = String::from("index,value\n");
        for (i, v) in self.params.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", fmt_f64(*v)));
        }
        write_string(path, &out)
    }
}

/// `(1/k) sum_{i in B} w_i g(theta, x_i)`, with `w_i = 1` when unweighted.
pub fn gradient_estimate<M: LossModel + ?Sized>(
    data: &Dataset,
    model: &M,
    params: &[f64],
    batch: &[usize],
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; model.dimension()];
    for &i in batch {
        if i >= data.len() {
            return Err(Error::IndexOutOfRange { index: i, n: data.len() });
        }
        let w = weights.map_or(1.0, |w| w[i]);
        let gi = model.gradient(data, i, params);
        if gi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
        for (acc, v) in g.iter_mut().zip(gi) {
            *acc += w * v;
        }
    }
    let k = batch.len() as f64;
    g.iter_mut().for_each(|v| *v /= k);
    Ok(g)
}

fn apply(params: &[f64], grad: &[f64], rate: f64) -> Vec<f64> {
    params.iter().zip(grad).map(|(p, g)| p - rate * g).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `theta' = theta - rate (1/k) sum_{i in B} g(theta, x_i)`
pub fn dm_sgd_step<M: LossModel + ?Sized>(
    params: &[f64],
    batch: &MiniBatch,
    data: &Dataset,
    model: &M,
    rate: f64,
) -> Result<Vec<f64>> {
    let g = gradient_estimate(data, model, params, &batch.indices, None)?;
    Ok(apply(params, &g, rate))
}

fn inverse_marginals(marginals: &MarginalVector, batch: &[usize]) -> Result<Vec<f64>> {
    for &i in batch {
        if i >= marginals.len() {
            return Err(Error::IndexOutOfRange { index: i, n: marginals.len() });
        }
        if !(marginals.values[i] > 0.0) {
            return Err(Error::ZeroMarginal(i));
        }
    }
    Ok(marginals.values.iter().map(|&b| if b > 0.0 { 1.0 / b } else { 0.0 }).collect())
}

/// `theta' = theta - rate (1/k) sum_{i in B} g(theta, x_i) / b_i`
pub fn unbiased_dm_sgd_step<M: LossModel + ?Sized>(
    params: &[f64],
    batch: &MiniBatch,
    marginals: &MarginalVector,
    data: &Dataset,
    model: &M,
    rate: f64,
) -> Result<Vec<f64>> {
    let w = inverse_marginals(marginals, &batch.indices)?;
    let g = gradient_estimate(data, model, params, &batch.indices, Some(&w))?;
    Ok(apply(params, &g, rate))
}

/// `k` indices uniformly without replacement.
pub fn uniform_batch<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<MiniBatch> {
    if k == 0 || k > n {
        return Err(Error::InvalidBatchSize { k, n });
    }
    Ok(MiniBatch::new(rand::seq::index::sample(rng, n, k).into_vec()))
}

/// Plain mini-batch SGD step; returns the new parameters and the batch used.
pub fn uniform_sgd_step<M: LossModel + ?Sized, R: Rng + ?Sized>(
    params: &[f64],
    data: &Dataset,
    model: &M,
    k: usize,
    rng: &mut R,
    rate: f64,
) -> Result<(Vec<f64>, MiniBatch)> {
    let batch = uniform_batch(data.len(), k, rng)?;
    let next = dm_sgd_step(params, &batch, data, model, rate)?;
    Ok((next, batch))
}

/// Where the k-DPP batches come from.
#[derive(Debug, Clone, Copy)]
pub enum BatchSource<'a> {
    /// Build a sampler from this kernel.
    Kernel(&'a SimilarityKernel),
    Sampler(&'a KdppSampler),
    /// Consume a pre-sampled schedule, cycling if it is shorter than the run.
    Schedule { schedule: &'a Schedule, marginals: Option<&'a MarginalVector> },
    /// Only valid for uniform mode, or stratified mode which builds its own kernel.
    None,
}

/// Partition used by stratified mode: strata if present, else labels.
pub fn stratification_kernel(data: &Dataset) -> Result<SimilarityKernel> {
    let strata = data
        .strata
        .clone()
        .or_else(|| data.labels.clone())
        .ok_or(Error::MissingColumn { kind: "stratified", what: "a stratum or label column" })?;
    let grouped = Dataset::new(data.features.clone(), None, Some(strata))?;
    build_kernel(&grouped, &KernelSpec::new(KernelKind::BlockStratified))
}

enum Draw<'a> {
    Uniform,
    Sampler(std::borrow::Cow<'a, KdppSampler>),
    Schedule(&'a Schedule),
}

pub fn train<M: LossModel + ?Sized>(
    data: &Dataset,
    source: BatchSource<'_>,
    model: &M,
    config: &TrainConfig,
    eval: Option<&Dataset>,
) -> Result<TrainTrace> {
    use std::borrow::Cow;

    config.validate()?;
    let n = data.len();
    if config.k > n {
        return Err(Error::InvalidBatchSize { k: config.k, n });
    }
    let from_kernel = |kernel: &SimilarityKernel| -> Result<KdppSampler> {
        if kernel.len() != n {
            return Err(Error::DimensionMismatch(format!("kernel is {}x{}, data has {n} rows", kernel.len(), kernel.len())));
        }
        KdppSampler::new(symmetric_eigendecomposition(kernel)?, config.k)
    };

    let draw = match (config.mode, source) {
        (TrainMode::UniformSgd, _) => Draw::Uniform,
        (_, BatchSource::Schedule { schedule, .. }) => {
            if schedule.n != n || schedule.k != config.k {
                return Err(Error::ScheduleMismatch(format!(
                    "schedule has N={} k={}, run has N={n} k={}",
                    schedule.n, schedule.k, config.k
                )));
            }
            if schedule.is_empty() {
                return Err(Error::ScheduleMismatch("schedule has no batches".into()));
            }
            Draw::Schedule(schedule)
        }
        (_, BatchSource::Sampler(s)) => {
            if s.len() != n || s.k() != config.k {
                return Err(Error::ScheduleMismatch(format!(
                    "sampler has N={} k={}, run has N={n} k={}",
                    s.len(),
                    s.k(),
                    config.k
                )));
            }
            Draw::Sampler(Cow::Borrowed(s))
        }
        (_, BatchSource::Kernel(kernel)) => Draw::Sampler(Cow::Owned(from_kernel(kernel)?)),
        (TrainMode::StratifiedSgd, BatchSource::None) => Draw::Sampler(Cow::Owned(from_kernel(&stratification_kernel(data)?)?)),
        (mode, BatchSource::None) => {
            return Err(Error::InvalidConfig(format!("mode `{mode}` needs a kernel or a schedule")));
        }
    };

    let weights = if config.mode == TrainMode::DmSgdUnbiased {
        let marginals = match (&draw, source) {
            (_, BatchSource::Schedule { marginals: Some(b), .. }) => b.clone(),
            (Draw::Sampler(s), _) => marginal_probabilities(s.decomposition(), s.esp(), s.k())?,
            _ => return Err(Error::InvalidConfig("unbiased mode needs marginals alongside a schedule".into())),
        };
        if marginals.len() != n {
            return Err(Error::DimensionMismatch(format!("{} marginals for {n} rows", marginals.len())));
        }
        Some(marginals)
    } else {
        None
    };

    let mut params = model.initial_params();
    let mut records = Vec::with_capacity(config.steps);
    for t in 0..config.steps {
        let path = KdppSampler::schedule_path(config.master_seed, t);
        let batch = match &draw {
            Draw::Uniform => uniform_batch(n, config.k, &mut path.rng())?,
            Draw::Sampler(s) => s.sample_at(path)?,
            Draw::Schedule(s) => s.batches[t % s.len()].clone(),
        };
        let inverse = match &weights {
            Some(b) => Some(inverse_marginals(b, &batch.indices)?),
            None => None,
        };
        let rate = config.learning_rate.rate(t);
        let g = gradient_estimate(data, model, &params, &batch.indices, inverse.as_deref())?;
        params = apply(&params, &g, rate);
        records.push(StepRecord {
            step: t,
            rate,
            grad_norm: norm(&g),
            train_risk: empirical_risk(data, model, &params),
            balanced_accuracy: eval.and_then(|e| balanced_accuracy(e, model, &params)),
            batch: batch.indices,
        });
    }
    Ok(TrainTrace { records, params })
}

/// The seed path of step `t`, shared by all modes.
pub fn step_path(master: u64, t: usize) -> SeedPath {
    KdppSampler::schedule_path(master, t)
}
