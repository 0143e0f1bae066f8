//! Dense row-major `f64` matrices and a seeded random stream.
//!
//! Every product walks its reduction index in ascending order, so repeated
//! runs on the same inputs are bit-identical regardless of how callers
//! schedule work. Products skip exact zeros in the left operand, which keeps
//! sparse inputs such as MNIST pixels cheap without changing the summation
//! order of the remaining terms.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("empty sampling range [{lo}, {hi})")]
    EmptyRange { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = LinalgError;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        Matrix::from_vec(r.rows, r.cols, r.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(LinalgError::NonFinite { index, value });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Panics on ragged input; intended for literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn column(data: &[f64]) -> Self {
        Matrix {
            rows: data.len(),
            cols: 1,
            data: data.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// `self · b`.
    pub fn matmul(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.rows {
            return Err(LinalgError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let n = b.cols;
        let mut out = Matrix::zeros(self.rows, n);
        let mut nz = vec![0; self.cols];
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * n..(i + 1) * n];
            let count = nonzero_positions(a_row, &mut nz);
            for &k in &nz[..count] {
                axpy(o_row, a_row[k], &b.data[k * n..(k + 1) * n]);
            }
        }
        Ok(out)
    }

    /// `selfᵀ · b` without materialising the transpose.
    pub fn t_matmul(&self, b: &Matrix) -> Result<Matrix> {
        if self.rows != b.rows {
            return Err(LinalgError::ShapeMismatch {
                op: "t_matmul",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let n = b.cols;
        let mut out = Matrix::zeros(self.cols, n);
        let mut nz = vec![0; self.cols];
        for i in 0..self.rows {
            let a_row = self.row(i);
            let b_row = b.row(i);
            let count = nonzero_positions(a_row, &mut nz);
            for &k in &nz[..count] {
                axpy(&mut out.data[k * n..(k + 1) * n], a_row[k], b_row);
            }
        }
        Ok(out)
    }

    /// `self · bᵀ` without materialising the transpose.
    pub fn matmul_t(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.cols {
            return Err(LinalgError::ShapeMismatch {
                op: "matmul_t",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..b.rows {
                out.data[i * b.rows + j] = dot(a_row, b.row(j));
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn hadamard(&self, b: &Matrix) -> Result<Matrix> {
        self.check_same_shape(b, "hadamard")?;
        Ok(self.zip_map(b, |x, y| x * y))
    }

    pub fn add(&self, b: &Matrix) -> Result<Matrix> {
        self.check_same_shape(b, "add")?;
        Ok(self.zip_map(b, |x, y| x + y))
    }

    pub fn sub(&self, b: &Matrix) -> Result<Matrix> {
        self.check_same_shape(b, "sub")?;
        Ok(self.zip_map(b, |x, y| x - y))
    }

    /// In place `self += alpha · b`.
    pub fn add_scaled(&mut self, alpha: f64, b: &Matrix) -> Result<()> {
        self.check_same_shape(b, "add_scaled")?;
        axpy(&mut self.data, alpha, &b.data);
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        self.map(|x| alpha * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_map(&self, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| f(x, y))
                .collect(),
        }
    }

    /// Frobenius inner product, summed in row-major order.
    pub fn frobenius_inner(&self, b: &Matrix) -> Result<f64> {
        self.check_same_shape(b, "frobenius_inner")?;
        Ok(dot(&self.data, &b.data))
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// Entrywise sign with zero mapped to `-1`, so the result has no zero
    /// entries.
    pub fn sign_of(&self) -> Matrix {
        self.map(sign)
    }

    pub fn max_abs_diff(&self, b: &Matrix) -> Result<f64> {
        self.check_same_shape(b, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Left-to-right dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Row-compressed copy of a mostly-zero matrix. Worth building when the same
/// left operand is multiplied many times, as a training set is. Products add
/// terms in the same order as the dense kernels, so results are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn from_dense(m: &Matrix) -> Self {
        let mut offsets = Vec::with_capacity(m.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for i in 0..m.rows {
            for (k, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(k);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        SparseRows {
            rows: m.rows,
            cols: m.cols,
            offsets,
            indices,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Fraction of stored entries.
    pub fn density(&self) -> f64 {
        if self.rows * self.cols == 0 {
            return 0.0;
        }
        self.values.len() as f64 / (self.rows * self.cols) as f64
    }

    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.offsets[i]..self.offsets[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    /// `self · b`.
    pub fn matmul(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.rows {
            return Err(LinalgError::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, b.cols);
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: AVX2 support was checked just above.
            unsafe { avx2::sparse_matmul(self, b, &mut out) };
            return Ok(out);
        }
        sparse_matmul(self, b, &mut out);
        Ok(out)
    }

    /// `selfᵀ · b`.
    pub fn t_matmul(&self, b: &Matrix) -> Result<Matrix> {
        if self.rows != b.rows {
            return Err(LinalgError::ShapeMismatch {
                op: "t_matmul",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, b.cols);
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: AVX2 support was checked just above.
            unsafe { avx2::sparse_t_matmul(self, b, &mut out) };
            return Ok(out);
        }
        sparse_t_matmul(self, b, &mut out);
        Ok(out)
    }
}

#[inline(always)]
fn sparse_matmul(a: &SparseRows, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    for i in 0..a.rows {
        let o_row = &mut out.data[i * n..(i + 1) * n];
        let (ks, vs) = a.row(i);
        for (&k, &v) in ks.iter().zip(vs) {
            axpy(o_row, v, &b.data[k * n..(k + 1) * n]);
        }
    }
}

#[inline(always)]
fn sparse_t_matmul(a: &SparseRows, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    for i in 0..a.rows {
        let b_row = b.row(i);
        let (ks, vs) = a.row(i);
        for (&k, &v) in ks.iter().zip(vs) {
            axpy(&mut out.data[k * n..(k + 1) * n], v, b_row);
        }
    }
}

/// The sparse kernels recompiled for AVX2. FMA stays off, so every product
/// and sum rounds exactly as in the portable build.
#[cfg(target_arch = "x86_64")]
mod avx2 {
    use super::{Matrix, SparseRows};

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn sparse_matmul(a: &SparseRows, b: &Matrix, out: &mut Matrix) {
        super::sparse_matmul(a, b, out)
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn sparse_t_matmul(a: &SparseRows, b: &Matrix, out: &mut Matrix) {
        super::sparse_t_matmul(a, b, out)
    }
}

/// Indices of the nonzero entries of `row`, written without a data-dependent
/// branch. MNIST rows are about 80% zeros in no predictable pattern, and the
/// mispredicted skips used to cost more than the arithmetic.
fn nonzero_positions(row: &[f64], out: &mut Vec<usize>) -> usize {
    if out.len() < row.len() {
        out.resize(row.len(), 0);
    }
    let mut count = 0;
    for (k, &v) in row.iter().enumerate() {
        out[count] = k;
        count += usize::from(v != 0.0);
    }
    count
}

#[inline(always)]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Seeded ChaCha8 stream. The same seed yields the same samples on every
/// platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, e.g. one per replicate or per purpose.
    pub fn fork(&mut self, tag: u64) -> Rng {
        let s = self.inner.next_u64() ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Rng::new(s)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Rejection sampling keeps the draw unbiased.
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn uniform(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Result<Matrix> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(LinalgError::EmptyRange { lo, hi });
        }
        let width = hi - lo;
        let data = (0..rows * cols)
            .map(|_| {
                let v = lo + width * self.next_f64();
                // Rounding can land exactly on `hi` for tiny ranges.
                if v < hi {
                    v
                } else {
                    lo
                }
            })
            .collect();
        Ok(Matrix { rows, cols, data })
    }

    pub fn gaussian(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| std * self.normal()).collect();
        Matrix { rows, cols, data }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn identity_product() {
        let m = Matrix::from_rows(&[&[1.5, -2.0], &[0.25, 7.0]]);
        assert_eq!(Matrix::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[&[1.0, 2.0]]);
        let b = Matrix::from_rows(&[&[3.0], &[4.0]]);
        assert_eq!(a.matmul(&b).unwrap(), Matrix::from_rows(&[&[11.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(7);
        let a = rng.uniform(5, 7, -1.0, 1.0).unwrap();
        let b = rng.uniform(7, 3, -1.0, 1.0).unwrap();
        let fast = a.matmul(&b).unwrap();
        assert_eq!(fast.shape(), (5, 3));
        assert!(fast.max_abs_diff(&naive_matmul(&a, &b)).unwrap() < 1e-12);
    }

    #[test]
    fn transposed_products_match() {
        let mut rng = Rng::new(8);
        let a = rng.uniform(6, 4, -1.0, 1.0).unwrap();
        let b = rng.uniform(6, 5, -1.0, 1.0).unwrap();
        let c = rng.uniform(3, 4, -1.0, 1.0).unwrap();
        let tn = a.t_matmul(&b).unwrap();
        assert!(tn.max_abs_diff(&naive_matmul(&a.transpose(), &b)).unwrap() < 1e-12);
        let nt = a.matmul_t(&c).unwrap();
        assert!(nt.max_abs_diff(&naive_matmul(&a, &c.transpose())).unwrap() < 1e-12);
    }

    #[test]
    fn sparse_rows_reproduce_dense_products_bit_for_bit() {
        let mut rng = Rng::new(9);
        let mut a = rng.uniform(9, 13, -1.0, 1.0).unwrap();
        for (i, v) in a.as_mut_slice().iter_mut().enumerate() {
            if i % 3 != 0 {
                *v = 0.0;
            }
        }
        a.set(4, 0, 0.0);
        let xs = SparseRows::from_dense(&a);
        assert_eq!(xs.shape(), (9, 13));
        assert!((xs.density() - 0.30).abs() < 0.05);
        let b = rng.uniform(13, 37, -1.0, 1.0).unwrap();
        let c = rng.uniform(9, 37, -1.0, 1.0).unwrap();
        assert_eq!(xs.matmul(&b).unwrap(), a.matmul(&b).unwrap());
        assert_eq!(xs.t_matmul(&c).unwrap(), a.t_matmul(&c).unwrap());
        assert!(xs.matmul(&c).is_err());
        assert!(xs.t_matmul(&b).is_err());
    }

    #[test]
    fn sparse_rows_of_empty_and_zero_matrices() {
        let z = SparseRows::from_dense(&Matrix::zeros(3, 4));
        assert_eq!(z.density(), 0.0);
        assert_eq!(z.matmul(&Matrix::ones(4, 2)).unwrap(), Matrix::zeros(3, 2));
        assert_eq!(SparseRows::from_dense(&Matrix::zeros(0, 4)).density(), 0.0);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3)).unwrap_err();
        assert_eq!(
            err,
            LinalgError::ShapeMismatch {
                op: "matmul",
                left: (2, 3),
                right: (2, 3)
            }
        );
        assert!(err.to_string().contains("(2, 3)"));
    }

    #[test]
    fn hadamard_cases() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(m.hadamard(&Matrix::ones(2, 2)).unwrap(), m);
        assert_eq!(m.hadamard(&Matrix::zeros(2, 2)).unwrap(), Matrix::zeros(2, 2));
        let b = Matrix::from_rows(&[&[2.0, 0.0], &[1.0, -1.0]]);
        assert_eq!(
            m.hadamard(&b).unwrap(),
            Matrix::from_rows(&[&[2.0, 0.0], &[3.0, -4.0]])
        );
        assert!(m.hadamard(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn frobenius_cases() {
        let ones = Matrix::ones(2, 2);
        assert_eq!(ones.frobenius_inner(&ones).unwrap(), 4.0);
        assert_eq!(Matrix::zeros(3, 3).frobenius_norm(), 0.0);
        let mut rng = Rng::new(11);
        let a = rng.uniform(10, 10, -1.0, 1.0).unwrap();
        let b = rng.uniform(10, 10, -1.0, 1.0).unwrap();
        let flat: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x * y)
            .sum();
        assert!((a.frobenius_inner(&b).unwrap() - flat).abs() < 1e-12);
        assert!(a.frobenius_inner(&Matrix::zeros(10, 9)).is_err());
    }

    #[test]
    fn sign_convention_maps_zero_to_minus_one() {
        let m = Matrix::from_rows(&[&[3.0, 0.0], &[-2.0, 1.0]]);
        let s = m.sign_of();
        assert_eq!(s, Matrix::from_rows(&[&[1.0, -1.0], &[-1.0, 1.0]]));
        assert_eq!(s.sign_of(), s);
        assert_eq!(Matrix::filled(2, 3, 0.5).sign_of(), Matrix::ones(2, 3));
    }

    #[test]
    fn uniform_is_deterministic_and_in_range() {
        let a = Rng::new(42).uniform(4, 5, -0.1, 0.1).unwrap();
        let b = Rng::new(42).uniform(4, 5, -0.1, 0.1).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|&v| (-0.1..0.1).contains(&v)));
        assert!(Rng::new(1).uniform(1, 1, 1.0, 1.0).is_err());
        assert!(Rng::new(1).uniform(1, 1, 2.0, 1.0).is_err());
    }

    #[test]
    fn uniform_mean_concentrates() {
        let m = Rng::new(3).uniform(1, 100_000, 2.0, 5.0).unwrap();
        let mean = m.as_slice().iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 3.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn from_vec_validates() {
        assert!(matches!(
            Matrix::from_vec(2, 2, vec![1.0; 3]),
            Err(LinalgError::DataLength { .. })
        ));
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn sample_indices_are_distinct() {
        let mut rng = Rng::new(5);
        let mut idx = rng.sample_indices(50, 20);
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 20);
        assert!(idx.iter().all(|&i| i < 50));
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matmul_is_associative(
            (a, b, c) in (1usize..6, 1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(p, q, r, s)| {
                (small_matrix(p, q), small_matrix(q, r), small_matrix(r, s))
            })
        ) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-9 * scale);
        }

        #[test]
        fn inner_product_is_symmetric(
            (a, b) in (1usize..8, 1usize..8).prop_flat_map(|(r, c)| (small_matrix(r, c), small_matrix(r, c)))
        ) {
            prop_assert_eq!(a.frobenius_inner(&b).unwrap(), b.frobenius_inner(&a).unwrap());
            prop_assert!(a.frobenius_inner(&a).unwrap() >= 0.0);
        }

        #[test]
        fn sign_entries_are_plus_or_minus_one(a in (1usize..8, 1usize..8).prop_flat_map(|(r, c)| small_matrix(r, c))) {
            prop_assert!(a.sign_of().as_slice().iter().all(|&v| v == 1.0 || v == -1.0));
        }
    }
}
