//! Dense linear algebra, Cholesky solves and seeded Gaussian sampling.
//!
//! Everything here is 64-bit. Matrices are stored row-major but all callers go
//! through `(row, col)` accessors.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("DenseMatrix::from_row_major", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must share one length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("DenseMatrix::from_rows", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        check_dim("DenseMatrix::matmul", self.cols, other.rows)?;
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim("DenseMatrix::matvec", self.cols, v.len())?;
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim("DenseMatrix::add rows", self.rows, other.rows)?;
        check_dim("DenseMatrix::add cols", self.cols, other.cols)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { data, ..*self })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dim("DenseMatrix::sub rows", self.rows, other.rows)?;
        check_dim("DenseMatrix::sub cols", self.cols, other.cols)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { data, ..*self })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|a| a * s).collect(),
            ..*self
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest |a_ij - a_ji| relative to the largest |a_ij|.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 || !self.is_square() {
            return 0.0;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        Self::from_fn(self.rows * other.rows, self.cols * other.cols, |r, c| {
            self[(r / other.rows, c / other.cols)] * other[(r % other.rows, c % other.cols)]
        })
    }

    /// Eigenvalues of the symmetric part `(A + Aᵀ)/2`, ascending.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<f64>> {
        check_dim("DenseMatrix::symmetric_eigenvalues", self.rows, self.cols)?;
        let n = self.rows;
        let m = nalgebra::DMatrix::from_fn(n, n, |r, c| 0.5 * (self[(r, c)] + self[(c, r)]));
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const SYMMETRY_TOL: f64 = 1e-10;

/// Cholesky factor `L` of `a + jitter·I`.
pub fn cholesky(a: &DenseMatrix, jitter: f64) -> Result<DenseMatrix> {
    check_dim("cholesky", a.rows, a.cols)?;
    if jitter < 0.0 || !jitter.is_finite() {
        return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {jitter}")));
    }
    if a.asymmetry() > SYMMETRY_TOL {
        return Err(Error::InvalidArgument("cholesky input is not symmetric".into()));
    }
    let n = a.rows;
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let lj = &l.data[j * n..j * n + j];
        let pivot = a[(j, j)] + jitter - dot(lj, lj);
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite {
                index: j,
                pivot,
                jitter,
            });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let s = {
                let (li, lj) = (&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
                dot(li, lj)
            };
            l[(i, j)] = (a[(i, j)] - s) / d;
        }
    }
    Ok(l)
}

/// Cholesky with automatic jitter: an exact attempt first, then
/// `1e-8·trace/n` escalated ×10 up to three times.
pub fn cholesky_with_retry(a: &DenseMatrix) -> Result<(DenseMatrix, f64)> {
    let n = a.rows.max(1) as f64;
    let base = (1e-8 * a.trace() / n).abs().max(f64::MIN_POSITIVE);
    let mut last = None;
    for jitter in [0.0, base, base * 10.0, base * 100.0, base * 1000.0] {
        match cholesky(a, jitter) {
            Ok(l) => {
                if jitter > 0.0 {
                    log::debug!("cholesky succeeded with jitter {jitter:e}");
                }
                return Ok((l, jitter));
            }
            Err(e @ Error::NotPositiveDefinite { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_dim("solve_lower", l.rows, b.len())?;
    let n = l.rows;
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s = dot(&l.row(i)[..i], &x[..i]);
        x[i] = (b[i] - s) / l[(i, i)];
    }
    Ok(x)
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_dim("solve_lower_transpose", l.rows, b.len())?;
    let n = l.rows;
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        x[i] /= l[(i, i)];
        let xi = x[i];
        for k in 0..i {
            x[k] -= l[(i, k)] * xi;
        }
    }
    Ok(x)
}

/// Solves `(L Lᵀ) x = b`.
pub fn cholesky_solve(l: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let y = solve_lower(l, b)?;
    solve_lower_transpose(l, &y)
}

/// Seeded, splittable random stream.
///
/// Backed by ChaCha8 keyed by `seed`; independent streams share the key and
/// differ in the 64-bit stream id, so they never overlap.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Child stream `index` of this stream. The child depends only on
    /// `(seed, stream, index)`, never on how much of the parent was consumed.
    pub fn split(&self, index: u64) -> Self {
        let child = splitmix64(splitmix64(self.stream ^ 0xD6E8_FEB8_6659_FD93).wrapping_add(index));
        Self::with_stream(self.seed, child)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Matrix with i.i.d. `N(0, variance)` entries, filled row by row.
pub fn gaussian_matrix(rng: &mut SeededRng, rows: usize, cols: usize, variance: f64) -> Result<DenseMatrix> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!("variance must be positive, got {variance}")));
    }
    let sd = variance.sqrt();
    Ok(DenseMatrix::from_fn(rows, cols, |_, _| sd * rng.normal()))
}

/// Order-preserving map over `0..n`, parallel when the `parallel` feature is on.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = SeededRng::new(seed);
        let g = gaussian_matrix(&mut rng, n, n, 1.0).unwrap();
        let mut a = g.matmul(&g.transpose()).unwrap();
        for i in 0..n {
            a[(i, i)] += n as f64 * 1e-3;
        }
        a
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&DenseMatrix::identity(3), 0.0).unwrap();
        assert_eq!(l, DenseMatrix::identity(3));
    }

    #[test]
    fn cholesky_two_by_two() {
        let a = DenseMatrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let l = cholesky(&a, 0.0).unwrap();
        assert_eq!(l[(0, 0)], 2.0);
        assert_eq!(l[(0, 1)], 0.0);
        assert_eq!(l[(1, 0)], 1.0);
        assert_relative_eq!(l[(1, 1)], 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        for (n, seed) in [(20, 7), (200, 8), (500, 9)] {
            let a = random_spd(n, seed);
            let l = cholesky(&a, 0.0).unwrap();
            let err = l.matmul(&l.transpose()).unwrap().sub(&a).unwrap().frobenius_norm();
            assert!(err / a.frobenius_norm() <= 1e-10, "n={n} err={err}");
        }
    }

    #[test]
    fn cholesky_applies_jitter() {
        let a = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a, 0.0), Err(Error::NotPositiveDefinite { index: 1, .. })));
        let l = cholesky(&a, 0.5).unwrap();
        let recon = l.matmul(&l.transpose()).unwrap();
        let target = a.add(&DenseMatrix::identity(2).scale(0.5)).unwrap();
        assert!(recon.sub(&target).unwrap().frobenius_norm() / target.frobenius_norm() < 1e-8);
    }

    #[test]
    fn cholesky_rejects_bad_shapes() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(cholesky(&a, 0.0), Err(Error::DimensionMismatch { .. })));
        let b = DenseMatrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(cholesky(&b, 0.0).is_err());
    }

    #[test]
    fn retry_escalates_for_singular_gram() {
        let a = DenseMatrix::from_fn(4, 4, |_, _| 1.0);
        let (l, jitter) = cholesky_with_retry(&a).unwrap();
        assert!(jitter > 0.0);
        assert!(l.all_finite());
    }

    #[test]
    fn triangular_solves_recover_rhs() {
        let a = random_spd(60, 3);
        let l = cholesky(&a, 0.0).unwrap();
        let mut rng = SeededRng::new(4);
        let b: Vec<f64> = (0..60).map(|_| rng.normal()).collect();
        let x = cholesky_solve(&l, &b).unwrap();
        let back = a.matvec(&x).unwrap();
        let num: f64 = back.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 1e-8);

        let y = solve_lower(&l, &b).unwrap();
        let ly = l.matvec(&y).unwrap();
        for (u, v) in ly.iter().zip(&b) {
            assert_relative_eq!(u, v, epsilon = 1e-10, max_relative = 1e-8);
        }
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = SeededRng::new(11);
        let m = gaussian_matrix(&mut rng, 1000, 1000, 0.1).unwrap();
        let n = 1e6;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 3.0 * (0.1f64 / n).sqrt(), "mean {mean}");
        assert!((var - 0.1).abs() <= 0.001, "var {var}");
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = gaussian_matrix(&mut SeededRng::new(5), 4, 7, 2.0).unwrap();
        let b = gaussian_matrix(&mut SeededRng::new(5), 4, 7, 2.0).unwrap();
        assert_eq!(a, b);
        assert!(gaussian_matrix(&mut SeededRng::new(5), 2, 2, 0.0).is_err());
    }

    #[test]
    fn split_streams_are_distinct_and_stable() {
        let mut parent = SeededRng::new(1);
        let a1: Vec<u64> = (0..4).map({
            let mut c = parent.split(0);
            move |_| c.next_u64()
        }).collect();
        parent.next_u64();
        let a2: Vec<u64> = (0..4).map({
            let mut c = parent.split(0);
            move |_| c.next_u64()
        }).collect();
        let b: Vec<u64> = (0..4).map({
            let mut c = parent.split(1);
            move |_| c.next_u64()
        }).collect();
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
    }

    #[test]
    fn symmetric_eigenvalues_of_diagonal() {
        let a = DenseMatrix::from_rows(&[[3.0, 0.0], [0.0, -1.0]]).unwrap();
        assert_eq!(a.symmetric_eigenvalues().unwrap(), vec![-1.0, 3.0]);
    }

    #[test]
    fn kron_of_identity() {
        let b = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let k = DenseMatrix::identity(2).kron(&b);
        assert_eq!(k[(2, 3)], 2.0);
        assert_eq!(k[(0, 2)], 0.0);
    }
}
