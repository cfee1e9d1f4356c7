//! Similarity kernels over a dataset.
//!
//! A kernel `L` is a symmetric positive-semidefinite `N x N` matrix whose
//! entry `L[i][j]` measures how alike examples `i` and `j` are. The k-DPP
//! sampler draws mini-batches with probability proportional to principal
//! minors of `L`, so similar examples rarely share a batch.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest number of rows used by the median bandwidth heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 1000;

/// Relative diagonal jitter applied by default: `1e-10 * trace(L) / N`.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N x d` feature matrix, one row per example.
    pub features: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
    pub strata: Option<Vec<usize>>,
    num_classes: usize,
    num_strata: usize,
}

impl Dataset {
    pub fn new(
        features: DMatrix<f64>,
        labels: Option<Vec<usize>>,
        strata: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 || features.ncols() == 0 {
            return Err(Error::InvalidDataset(format!(
                "need at least one row and one feature column, got {}x{}",
                n,
                features.ncols()
            )));
        }
        for (name, col) in [("labels", &labels), ("strata", &strata)] {
            if let Some(v) = col {
                if v.len() != n {
                    return Err(Error::InvalidDataset(format!(
                        "{name} has {} entries for {n} rows",
                        v.len()
                    )));
                }
            }
        }
        let num_classes = labels.as_ref().map_or(0, |l| l.iter().max().map_or(0, |m| m + 1));
        let num_strata = strata.as_ref().map_or(0, |s| s.iter().max().map_or(0, |m| m + 1));
        Ok(Self { features, labels, strata, num_classes, num_strata })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<usize>>, strata: Option<Vec<usize>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidDataset("ragged feature rows".into()));
        }
        let features = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(features, labels, strata)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of classes `M` (one past the largest label), 0 without labels.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_strata(&self) -> usize {
        self.num_strata
    }

    /// Declare more classes than the labels reveal, e.g. when a class is
    /// absent from a split.
    pub fn with_num_classes(mut self, m: usize) -> Result<Self> {
        if m < self.num_classes {
            return Err(Error::InvalidDataset(format!(
                "cannot declare {m} classes, labels reach {}",
                self.num_classes
            )));
        }
        self.num_classes = m;
        Ok(self)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn check_finite(&self) -> Result<()> {
        for j in 0..self.dim() {
            for i in 0..self.len() {
                let value = self.features[(i, j)];
                if !value.is_finite() {
                    return Err(Error::NonFinite { row: i, col: j, value });
                }
            }
        }
        Ok(())
    }

    /// Rows restricted to `indices`, keeping labels and strata.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select_rows(indices);
        let pick = |v: &Option<Vec<usize>>| v.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect());
        let mut out = Self::new(features, pick(&self.labels), pick(&self.strata))?;
        out.num_classes = self.num_classes;
        out.num_strata = self.num_strata;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    Identity,
    Linear,
    AnnealedLinear,
    Rbf,
    LabelWeightedLinear,
    LabelWeightedRbf,
    BlockStratified,
}

impl KernelKind {
    pub const ALL: [KernelKind; 7] = [
        KernelKind::Identity,
        KernelKind::Linear,
        KernelKind::AnnealedLinear,
        KernelKind::Rbf,
        KernelKind::LabelWeightedLinear,
        KernelKind::LabelWeightedRbf,
        KernelKind::BlockStratified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Identity => "identity",
            KernelKind::Linear => "linear",
            KernelKind::AnnealedLinear => "annealed_linear",
            KernelKind::Rbf => "rbf",
            KernelKind::LabelWeightedLinear => "label_weighted_linear",
            KernelKind::LabelWeightedRbf => "label_weighted_rbf",
            KernelKind::BlockStratified => "block_stratified",
        }
    }

    fn is_label_weighted(self) -> bool {
        matches!(self, KernelKind::LabelWeightedLinear | KernelKind::LabelWeightedRbf)
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::InvalidKernelSpec(format!("unknown kernel kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Fixed(s) => write!(f, "{s}"),
            Bandwidth::MedianHeuristic => f.write_str("median"),
        }
    }
}

impl FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" | "median-heuristic" => Ok(Bandwidth::MedianHeuristic),
            _ => s
                .parse::<f64>()
                .map(Bandwidth::Fixed)
                .map_err(|_| Error::InvalidKernelSpec(format!("bad bandwidth `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Jitter {
    /// `factor * trace(L) / N`
    Relative(f64),
    Absolute(f64),
}

impl Jitter {
    pub const NONE: Jitter = Jitter::Absolute(0.0);
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter::Relative(DEFAULT_RELATIVE_JITTER)
    }
}

impl fmt::Display for Jitter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Jitter::Relative(r) => write!(f, "relative:{r}"),
            Jitter::Absolute(a) => write!(f, "{a}"),
        }
    }
}

impl FromStr for Jitter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidKernelSpec(format!("bad jitter `{s}`"));
        if s == "auto" {
            return Ok(Jitter::default());
        }
        match s.strip_prefix("relative:") {
            Some(r) => r.parse().map(Jitter::Relative).map_err(|_| bad()),
            None => s.parse().map(Jitter::Absolute).map_err(|_| bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub anneal_exponent: f64,
    pub bandwidth: Bandwidth,
    pub label_weight: f64,
    pub jitter: Jitter,
}

impl KernelSpec {
    /// Defaults for `kind`. Structured kernels (identity, block) carry no
    /// jitter so their zero minors stay exactly zero; data-derived kernels get
    /// the relative default.
    pub fn new(kind: KernelKind) -> Self {
        let jitter = match kind {
            KernelKind::Identity | KernelKind::BlockStratified => Jitter::NONE,
            _ => Jitter::default(),
        };
        Self {
            kind,
            anneal_exponent: 0.1,
            bandwidth: Bandwidth::MedianHeuristic,
            label_weight: 0.5,
            jitter,
        }
    }

    pub fn with_label_weight(mut self, w: f64) -> Self {
        self.label_weight = w;
        self
    }

    pub fn with_anneal_exponent(mut self, rho: f64) -> Self {
        self.anneal_exponent = rho;
        self
    }

    pub fn with_bandwidth(mut self, bandwidth: Bandwidth) -> Self {
        self.bandwidth = bandwidth;
        self
    }

    pub fn with_jitter(mut self, jitter: Jitter) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidKernelSpec(m));
        if !(self.anneal_exponent > 0.0 && self.anneal_exponent <= 1.0) {
            return bad(format!("anneal_exponent {} outside (0, 1]", self.anneal_exponent));
        }
        if !(0.0..=1.0).contains(&self.label_weight) {
            return bad(format!("label_weight {} outside [0, 1]", self.label_weight));
        }
        if let Bandwidth::Fixed(s) = self.bandwidth {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("bandwidth {s} must be positive"));
            }
        }
        match self.jitter {
            Jitter::Relative(j) | Jitter::Absolute(j) if !(j >= 0.0 && j.is_finite()) => {
                bad(format!("jitter {j} must be non-negative"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityKernel {
    pub matrix: DMatrix<f64>,
    pub spec: KernelSpec,
}

impl SimilarityKernel {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// Wrap an explicit matrix, e.g. a hand-written test kernel.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&matrix, 0.0)?;
        Ok(Self { matrix, spec: KernelSpec::new(KernelKind::Linear).with_jitter(Jitter::NONE) })
    }
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!("kernel is {}x{}", m.nrows(), m.ncols())));
    }
    for i in 0..m.nrows() {
        for j in 0..i {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if !a.is_finite() {
                return Err(Error::NonFinite { row: i, col: j, value: a });
            }
            let diff = (a - b).abs();
            if diff > tol * a.abs().max(b.abs()).max(1.0) || diff.is_nan() {
                return Err(Error::NotSymmetric { i, j, diff });
            }
        }
        if !m[(i, i)].is_finite() {
            return Err(Error::NonFinite { row: i, col: i, value: m[(i, i)] });
        }
    }
    Ok(())
}

pub fn build_kernel(data: &Dataset, spec: &KernelSpec) -> Result<SimilarityKernel> {
    spec.validate()?;
    data.check_finite()?;
    let n = data.len();
    let mut l = match spec.kind {
        KernelKind::Identity => DMatrix::identity(n, n),
        KernelKind::Linear => gram(&data.features),
        KernelKind::AnnealedLinear => {
            for j in 0..data.dim() {
                for i in 0..n {
                    let value = data.features[(i, j)];
                    if value < 0.0 {
                        return Err(Error::NegativeFeature { row: i, col: j, value });
                    }
                }
            }
            let powered = data.features.map(|x| x.powf(spec.anneal_exponent));
            gram(&powered)
        }
        KernelKind::Rbf => {
            let sigma = resolve_bandwidth(&data.features, spec.bandwidth)?;
            rbf(&data.features, sigma)
        }
        KernelKind::LabelWeightedLinear | KernelKind::LabelWeightedRbf => {
            let f = label_weighted_features(data, spec.label_weight, spec.kind)?;
            if spec.kind == KernelKind::LabelWeightedLinear {
                gram(&f)
            } else {
                let sigma = resolve_bandwidth(&f, spec.bandwidth)?;
                rbf(&f, sigma)
            }
        }
        KernelKind::BlockStratified => {
            let strata = data.strata.as_ref().ok_or(Error::MissingColumn {
                kind: KernelKind::BlockStratified.name(),
                what: "a stratum column",
            })?;
            DMatrix::from_fn(n, n, |i, j| if strata[i] == strata[j] { 1.0 } else { 0.0 })
        }
    };

    let jitter = match spec.jitter {
        Jitter::Absolute(a) => a,
        Jitter::Relative(r) => r * l.trace() / n as f64,
    };
    if jitter > 0.0 {
        for i in 0..n {
            l[(i, i)] += jitter;
        }
    }
    Ok(SimilarityKernel { matrix: l, spec: spec.clone() })
}

/// Row-wise concatenation `[(1 - w) x_i, w onehot(label_i)]`.
fn label_weighted_features(data: &Dataset, w: f64, kind: KernelKind) -> Result<DMatrix<f64>> {
    debug_assert!(kind.is_label_weighted());
    let labels = data.labels.as_ref().ok_or(Error::MissingColumn { kind: kind.name(), what: "a label column" })?;
    let (n, d, m) = (data.len(), data.dim(), data.num_classes());
    Ok(DMatrix::from_fn(n, d + m, |i, j| {
        if j < d {
            (1.0 - w) * data.features[(i, j)]
        } else if labels[i] == j - d {
            w
        } else {
            0.0
        }
    }))
}

/// `X X^T`, computed on the lower triangle and mirrored so the result is
/// exactly symmetric.
fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = x.row(i).dot(&x.row(j));
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    l
}

fn rbf(x: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let n = x.nrows();
    let denom = 2.0 * sigma * sigma;
    let mut l = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = (-sq_dist(x, i, j) / denom).exp();
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    l
}

fn sq_dist(x: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..x.ncols()).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum()
}

fn resolve_bandwidth(x: &DMatrix<f64>, bandwidth: Bandwidth) -> Result<f64> {
    match bandwidth {
        Bandwidth::Fixed(s) => Ok(s),
        Bandwidth::MedianHeuristic => median_pairwise_distance(x),
    }
}

/// Median pairwise Euclidean distance of the feature rows, the default RBF
/// bandwidth. At most [`MEDIAN_SUBSAMPLE`] rows are used, taken at an even
/// stride. Falls back to `1.0` when every point coincides.
pub fn median_heuristic_bandwidth(data: &Dataset) -> Result<f64> {
    median_pairwise_distance(&data.features)
}

fn median_pairwise_distance(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidDataset(format!("median heuristic needs at least 2 rows, got {n}")));
    }
    let m = n.min(MEDIAN_SUBSAMPLE);
    let rows: Vec<usize> = (0..m).map(|t| t * n / m).collect();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[..a] {
            dists.push(sq_dist(x, i, j).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let len = dists.len();
    let median = if len % 2 == 1 { dists[len / 2] } else { 0.5 * (dists[len / 2 - 1] + dists[len / 2]) };
    Ok(if median > 0.0 { median } else { 1.0 })
}
