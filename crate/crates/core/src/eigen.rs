//! Symmetric eigendecomposition of a similarity kernel.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{check_symmetric, SimilarityKernel};

/// Eigenvalues in `[-CLAMP_TOLERANCE * max, 0)` are treated as rounding noise.
pub const CLAMP_TOLERANCE: f64 = 1e-8;
/// Eigenvalues at or below `RANK_TOLERANCE * max` do not count toward rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Magnitudes within this relative distance count as tied for the sign rule.
const TIE_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 10_000;
const CACHE_MAGIC: &[u8; 8] = b"KDPPEIG\0";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    /// Descending, clamped to be non-negative.
    pub eigenvalues: Vec<f64>,
    /// Descending, as returned by the solver.
    pub raw_eigenvalues: Vec<f64>,
    /// Column `n` is the unit eigenvector paired with `eigenvalues[n]`.
    pub eigenvectors: DMatrix<f64>,
    pub clamped_count: usize,
}

impl EigenDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    /// `V diag(raw) V^T`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * self.raw_eigenvalues[j]);
        scaled * v.transpose()
    }

    /// `log det(L + I) = sum log(1 + lambda_n)`, the DPP normalizer.
    pub fn log_det_plus_identity(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.ln_1p()).sum()
    }
}

pub fn symmetric_eigendecomposition(kernel: &SimilarityKernel) -> Result<EigenDecomposition> {
    decompose_matrix(&kernel.matrix)
}

pub fn decompose_matrix(m: &DMatrix<f64>) -> Result<EigenDecomposition> {
    check_symmetric(m, 1e-12)?;
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, MAX_SWEEPS)
        .ok_or(Error::NoConvergence { iterations: MAX_SWEEPS })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let raw: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() * (1.0 + TIE_TOLERANCE) {
                pivot = i;
            }
        }
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(col, &v);
    }

    let max = raw.first().copied().unwrap_or(0.0).max(0.0);
    let tolerance = CLAMP_TOLERANCE * max;
    let mut clamped_count = 0;
    let mut eigenvalues = Vec::with_capacity(n);
    for &l in &raw {
        if l < -tolerance {
            return Err(Error::NotPositiveSemidefinite { eigenvalue: l, tolerance: -tolerance });
        }
        if l < 0.0 {
            clamped_count += 1;
            eigenvalues.push(0.0);
        } else {
            eigenvalues.push(l);
        }
    }

    Ok(EigenDecomposition { eigenvalues, raw_eigenvalues: raw, eigenvectors: vectors, clamped_count })
}

/// Number of eigenvalues strictly above `RANK_TOLERANCE * lambda_max`.
pub fn effective_rank(decomp: &EigenDecomposition) -> usize {
    let threshold = RANK_TOLERANCE * decomp.max_eigenvalue();
    decomp.eigenvalues.iter().filter(|&&l| l > threshold && l > 0.0).count()
}

/// SHA-256 over the dimension and the little-endian column-major entries.
pub fn kernel_hash(m: &DMatrix<f64>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_le_bytes());
    }
    let mut out = [0u8; 32];
    out.copy_from_slice(&h.finalize());
    out
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Path of the cache entry for `kernel` under `dir`.
pub fn cache_path(dir: &Path, kernel: &SimilarityKernel) -> PathBuf {
    dir.join(format!("eigen-{}.bin", &hex(&kernel_hash(&kernel.matrix))[..16]))
}

pub fn write_cache(path: &Path, kernel: &SimilarityKernel, decomp: &EigenDecomposition) -> Result<()> {
    let n = decomp.len();
    let mut buf = Vec::with_capacity(64 + 8 * n * (n + 2));
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&kernel_hash(&kernel.matrix));
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(decomp.clamped_count as u64).to_le_bytes());
    for v in decomp.raw_eigenvalues.iter().chain(&decomp.eigenvalues).chain(decomp.eigenvectors.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Load a cached decomposition. Returns `Ok(None)` when the file is for a
/// different kernel.
pub fn read_cache(path: &Path, kernel: &SimilarityKernel) -> Result<Option<EigenDecomposition>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    if cur.take(8)? != CACHE_MAGIC {
        return Err(Error::parse(path, "bad magic header"));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::parse(path, format!("unsupported cache version {version}")));
    }
    if cur.take(32)? != kernel_hash(&kernel.matrix) {
        return Ok(None);
    }
    let n = cur.u64()? as usize;
    let clamped_count = cur.u64()? as usize;
    let raw_eigenvalues = cur.f64s(n)?;
    let eigenvalues = cur.f64s(n)?;
    let eigenvectors = DMatrix::from_vec(n, n, cur.f64s(n * n)?);
    if cur.pos != bytes.len() {
        return Err(Error::parse(path, "trailing bytes"));
    }
    Ok(Some(EigenDecomposition { eigenvalues, raw_eigenvalues, eigenvectors, clamped_count }))
}

/// Decompose `kernel`, reusing a cache entry in `dir` when one matches.
pub fn decompose_cached(kernel: &SimilarityKernel, dir: &Path) -> Result<EigenDecomposition> {
    let path = cache_path(dir, kernel);
    if path.exists() {
        if let Some(d) = read_cache(&path, kernel)? {
            return Ok(d);
        }
    }
    let d = symmetric_eigendecomposition(kernel)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_cache(&path, kernel, &d)?;
    Ok(d)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(Error::parse(self.path, "truncated cache file"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_kernel, Dataset, KernelKind, KernelSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn decomp(rows: usize, entries: &[f64]) -> EigenDecomposition {
        decompose_matrix(&DMatrix::from_row_slice(rows, rows, entries)).unwrap()
    }

    fn check_invariants(m: &DMatrix<f64>, d: &EigenDecomposition) {
        let n = m.nrows();
        let vtv = d.eigenvectors.transpose() * &d.eigenvectors;
        assert!((vtv - DMatrix::identity(n, n)).amax() <= 1e-8);
        let scale = m.amax().max(1.0);
        assert!((d.reconstruct() - m).amax() <= 1e-6 * scale);
        assert!(d.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(d.eigenvalues.iter().all(|&l| l >= 0.0));
        for c in 0..n {
            let col = d.eigenvectors.column(c);
            let p = col.iamax();
            assert!(col[p] > 0.0);
        }
    }

    #[test]
    fn identity_three() {
        let m = DMatrix::identity(3, 3);
        let d = decompose_matrix(&m).unwrap();
        assert_eq!(d.eigenvalues.len(), 3);
        for l in &d.eigenvalues {
            assert!((l - 1.0).abs() < 1e-14);
        }
        check_invariants(&m, &d);
    }

    #[test]
    fn diagonal_axis_aligned() {
        let d = decomp(2, &[1.0, 0.0, 0.0, 4.0]);
        assert!((d.eigenvalues[0] - 4.0).abs() < 1e-14);
        assert!((d.eigenvalues[1] - 1.0).abs() < 1e-14);
        assert!((d.eigenvectors[(1, 0)] - 1.0).abs() < 1e-14);
        assert!((d.eigenvectors[(0, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_by_two_by_hand() {
        let d = decomp(2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((d.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((d.eigenvalues[1] - 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d.eigenvectors[(0, 0)].abs() - s).abs() < 1e-12);
        assert!((d.eigenvectors[(1, 0)] - d.eigenvectors[(0, 0)]).abs() < 1e-12);
        assert!((d.eigenvectors[(0, 1)] + d.eigenvectors[(1, 1)]).abs() < 1e-12);
    }

    #[test]
    fn tie_breaks_on_lowest_index() {
        let d = decomp(2, &[2.0, 1.0, 1.0, 2.0]);
        // the (1,-1)/sqrt2 vector has equal magnitudes; index 0 must be positive
        assert!(d.eigenvectors[(0, 1)] > 0.0);
    }

    #[test]
    fn indefinite_rejected_and_noise_clamped() {
        let err = decompose_matrix(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveSemidefinite { .. }));

        let d = decomp(2, &[1.0, 0.0, 0.0, -1e-12]);
        assert_eq!(d.clamped_count, 1);
        assert_eq!(d.eigenvalues, vec![1.0, 0.0]);
        assert_eq!(d.raw_eigenvalues[1], -1e-12);
    }

    #[test]
    fn asymmetric_rejected() {
        let err = decompose_matrix(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric { .. }));
    }

    #[test]
    fn effective_rank_examples() {
        let d = decomp(3, &[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(effective_rank(&d), 2);
        assert_eq!(effective_rank(&decompose_matrix(&DMatrix::identity(5, 5)).unwrap()), 5);

        let data = Dataset::from_rows(&[vec![0.0], vec![0.0], vec![0.0]], None, Some(vec![0, 0, 1])).unwrap();
        let k = build_kernel(&data, &KernelSpec::new(KernelKind::BlockStratified)).unwrap();
        let d = symmetric_eigendecomposition(&k).unwrap();
        assert!((d.eigenvalues[0] - 2.0).abs() < 1e-12);
        assert!((d.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert_eq!(effective_rank(&d), 2);
    }

    #[test]
    fn det_plus_identity_matches_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let l = &a * a.transpose();
            let d = decompose_matrix(&l).unwrap();
            let direct = (l + DMatrix::identity(5, 5)).determinant();
            let spectral = d.log_det_plus_identity().exp();
            assert!((spectral - direct).abs() <= 1e-8 * direct.abs());
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = Dataset::from_rows(&[vec![1.0, 2.0], vec![0.5, 0.1], vec![3.0, 1.0]], None, None).unwrap();
        let k = build_kernel(&data, &KernelSpec::new(KernelKind::Rbf)).unwrap();
        let first = decompose_cached(&k, dir.path()).unwrap();
        let path = cache_path(dir.path(), &k);
        assert!(path.exists());
        let again = read_cache(&path, &k).unwrap().unwrap();
        assert_eq!(first, again);

        let other = build_kernel(&data, &KernelSpec::new(KernelKind::Identity)).unwrap();
        assert_eq!(read_cache(&path, &other).unwrap(), None);

        fs::write(&path, b"garbage!").unwrap();
        assert!(matches!(read_cache(&path, &k), Err(Error::Parse { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn random_psd_invariants(seed in 0u64..10_000, n in 1usize..12, rank in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(n, rank.min(n), |_, _| rng.random_range(-2.0..2.0));
            let l = &a * a.transpose();
            let d = decompose_matrix(&l).unwrap();
            check_invariants(&l, &d);
        }
    }
}
