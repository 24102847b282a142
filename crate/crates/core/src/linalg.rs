//! Dense row-major matrices and the handful of kernels the mixer needs.
//!
//! Summation order inside every kernel is fixed (ascending inner index), so
//! results are reproducible bit-for-bit across runs and thread counts.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};

/// Pivots smaller than this are treated as exact zeros.
pub const SINGULAR_PIVOT: f64 = 1e-12;

/// Scalar types the generic kernels run on. `f32` exists for benchmarks only.
pub trait Real:
    Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

const BLOCK: usize = 64;

/// `out = a · b` for row-major slices, `a` is `m×k`, `b` is `k×n`.
///
/// Blocked over the inner and column dimensions. Each output element still
/// accumulates its `k` products in ascending order.
pub fn matmul_into<R: Real>(a: &[R], b: &[R], out: &mut [R], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|x| *x = R::ZERO);
    for kb in (0..k).step_by(BLOCK) {
        let kend = (kb + BLOCK).min(k);
        for jb in (0..n).step_by(BLOCK) {
            let jend = (jb + BLOCK).min(n);
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                let orow = &mut out[i * n + jb..i * n + jend];
                for p in kb..kend {
                    let aip = arow[p];
                    if aip == R::ZERO {
                        continue;
                    }
                    let brow = &b[p * n + jb..p * n + jend];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += aip * bv;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        DenseMatrix { rows, cols, data: vec![value; rows * cols] }
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "from_vec" });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::ShapeMismatch { op: "from_rows", left: (r, c), right: (1, row.len()) });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    /// Column vector.
    pub fn column(values: &[f64]) -> Self {
        DenseMatrix { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn scalar(v: f64) -> Self {
        DenseMatrix { rows: 1, cols: 1, data: vec![v] }
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch { op: "matmul", left: self.shape(), right: other.shape() });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        matmul_into(&self.data, &other.data, &mut out.data, self.rows, self.cols, other.cols);
        Ok(out)
    }

    fn zip_with(&self, other: &DenseMatrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch { op, left: self.shape(), right: other.shape() });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(DenseMatrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch { op: "add_assign", left: self.shape(), right: other.shape() });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `I - self`.
    pub fn identity_minus(&self) -> Result<DenseMatrix> {
        if !self.is_square() {
            return Err(Error::ShapeMismatch { op: "identity_minus", left: self.shape(), right: self.shape() });
        }
        let mut out = self.scale(-1.0);
        for i in 0..self.rows {
            out.data[i * self.cols + i] += 1.0;
        }
        Ok(out)
    }

    /// `I + self`.
    pub fn identity_plus(&self) -> Result<DenseMatrix> {
        if !self.is_square() {
            return Err(Error::ShapeMismatch { op: "identity_plus", left: self.shape(), right: self.shape() });
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + i] += 1.0;
        }
        Ok(out)
    }

    /// `A^k` by repeated squaring; `A^0 = I`.
    pub fn matrix_power(&self, k: u32) -> Result<DenseMatrix> {
        if !self.is_square() {
            return Err(Error::ShapeMismatch { op: "matrix_power", left: self.shape(), right: self.shape() });
        }
        let mut result = Self::identity(self.rows);
        let mut base = self.clone();
        let mut e = k;
        let mut first = true;
        while e > 0 {
            if e & 1 == 1 {
                result = if first { base.clone() } else { result.matmul(&base)? };
                first = false;
            }
            e >>= 1;
            if e > 0 {
                base = base.matmul(&base)?;
            }
        }
        Ok(result)
    }

    /// Induced infinity norm: the largest absolute row sum.
    pub fn max_row_abs_sum(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `max |self - other|`, or infinity on shape mismatch.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Inverse via LU factorization with partial pivoting.
    pub fn inverse(&self) -> Result<DenseMatrix> {
        if !self.is_square() {
            return Err(Error::ShapeMismatch { op: "inverse", left: self.shape(), right: self.shape() });
        }
        let lu = LuFactors::factor(self)?;
        lu.solve(&Self::identity(self.rows))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> DenseMatrix {
        let mut out = Self::zeros(self.rows, len);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..start + len]);
        }
        out
    }

    pub fn concat_cols(parts: &[DenseMatrix]) -> Result<DenseMatrix> {
        let rows = parts.first().map_or(0, |p| p.rows);
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            if p.rows != rows {
                return Err(Error::ShapeMismatch { op: "concat_cols", left: (rows, cols), right: p.shape() });
            }
            for i in 0..rows {
                out.row_mut(i)[offset..offset + p.cols].copy_from_slice(p.row(i));
            }
            offset += p.cols;
        }
        Ok(out)
    }

    /// Relabels rows and columns: `out[i][j] = self[perm[i]][perm[j]]`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> DenseMatrix {
        DenseMatrix::from_fn(perm.len(), perm.len(), |i, j| self[(perm[i], perm[j])])
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    a.matmul(b)
}

pub fn inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    a.inverse()
}

pub fn hadamard(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    a.hadamard(b)
}

pub fn matrix_power(a: &DenseMatrix, k: u32) -> Result<DenseMatrix> {
    a.matrix_power(k)
}

pub fn max_row_abs_sum(a: &DenseMatrix) -> f64 {
    a.max_row_abs_sum()
}

/// `P·A = L·U` with unit-lower `L` and upper `U` packed into one matrix.
struct LuFactors {
    n: usize,
    packed: DenseMatrix,
    perm: Vec<usize>,
}

impl LuFactors {
    fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.rows;
        let mut m = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = m[(k, k)].abs();
            for i in k + 1..n {
                let v = m[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < SINGULAR_PIVOT {
                return Err(Error::Singular { column: k, pivot: best });
            }
            if p != k {
                for j in 0..n {
                    m.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = m[(k, k)];
            for i in k + 1..n {
                let factor = m[(i, k)] / pivot;
                if factor == 0.0 {
                    continue;
                }
                m[(i, k)] = factor;
                for j in k + 1..n {
                    let u = m.data[k * n + j];
                    m.data[i * n + j] -= factor * u;
                }
            }
        }
        Ok(LuFactors { n, packed: m, perm })
    }

    fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        let n = self.n;
        let cols = b.cols;
        let mut x = DenseMatrix::zeros(n, cols);
        for (i, &p) in self.perm.iter().enumerate() {
            x.row_mut(i).copy_from_slice(b.row(p));
        }
        // forward, unit diagonal
        for i in 0..n {
            for k in 0..i {
                let l = self.packed[(i, k)];
                if l == 0.0 {
                    continue;
                }
                for c in 0..cols {
                    let v = x.data[k * cols + c];
                    x.data[i * cols + c] -= l * v;
                }
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let u = self.packed[(i, k)];
                if u == 0.0 {
                    continue;
                }
                for c in 0..cols {
                    let v = x.data[k * cols + c];
                    x.data[i * cols + c] -= u * v;
                }
            }
            let d = self.packed[(i, i)];
            for c in 0..cols {
                x.data[i * cols + c] /= d;
            }
        }
        Ok(x)
    }
}

/// Column-compressed pattern of the strictly lower part of a triangular
/// matrix: for column `j`, the rows `i > j` holding nonzeros.
#[derive(Clone, Debug, Default)]
pub struct LowerSparsity {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl LowerSparsity {
    /// Builds the pattern from per-column row lists.
    pub fn from_columns(columns: &[Vec<usize>]) -> Self {
        let mut col_ptr = Vec::with_capacity(columns.len() + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in columns {
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        LowerSparsity { col_ptr, row_idx }
    }

    /// Scans a dense lower-triangular matrix for its strictly-lower nonzeros.
    pub fn of_matrix(l: &DenseMatrix) -> Self {
        let n = l.rows();
        let columns: Vec<Vec<usize>> =
            (0..n).map(|j| (j + 1..n).filter(|&i| l[(i, j)] != 0.0).collect()).collect();
        Self::from_columns(&columns)
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    fn column(&self, j: usize) -> &[usize] {
        &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]]
    }
}

/// Solves `L X = B` for lower-triangular `L` by column-oriented forward
/// substitution.
///
/// With a sparsity pattern only the listed entries of each column are
/// touched, so the cost per right-hand side is `O(n + nnz)`.
pub fn solve_lower_triangular(
    l: &DenseMatrix,
    b: &DenseMatrix,
    sparsity: Option<&LowerSparsity>,
) -> Result<DenseMatrix> {
    let n = l.rows();
    if !l.is_square() || b.rows() != n {
        return Err(Error::ShapeMismatch { op: "solve_lower_triangular", left: l.shape(), right: b.shape() });
    }
    if let Some(s) = sparsity {
        if s.col_ptr.len() != n + 1 {
            return Err(Error::ShapeMismatch {
                op: "solve_lower_triangular",
                left: l.shape(),
                right: (s.col_ptr.len().saturating_sub(1), 0),
            });
        }
    }
    let m = b.cols();
    let mut x = b.clone();
    let mut xj = vec![0.0; m];
    for j in 0..n {
        let d = l[(j, j)];
        if d == 0.0 {
            return Err(Error::ZeroDiagonal { row: j });
        }
        for c in 0..m {
            x.data[j * m + c] /= d;
        }
        xj.copy_from_slice(x.row(j));
        let mut eliminate = |i: usize| {
            let lij = l[(i, j)];
            if lij != 0.0 {
                let row = &mut x.data[i * m..(i + 1) * m];
                for (r, &v) in row.iter_mut().zip(&xj) {
                    *r -= lij * v;
                }
            }
        };
        match sparsity {
            Some(s) => s.column(j).iter().for_each(|&i| eliminate(i)),
            None => (j + 1..n).for_each(eliminate),
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn naive(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a[(i, k)] * b[(k, j)];
            }
            s
        })
    }

    fn random(rng: &mut SeededRng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn identity_times_x() {
        let mut rng = SeededRng::new(1);
        let x = random(&mut rng, 3, 3);
        assert_eq!(DenseMatrix::identity(3).matmul(&x).unwrap(), x);
        let p = DenseMatrix::scalar(2.0).matmul(&DenseMatrix::scalar(3.0)).unwrap();
        assert_eq!(p.as_slice(), &[6.0]);
    }

    #[test]
    fn matmul_matches_naive_loop() {
        let mut rng = SeededRng::new(2);
        let a = random(&mut rng, 5, 5);
        let b = random(&mut rng, 5, 5);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-13);
        // exercise the blocked path
        let a = random(&mut rng, 70, 130);
        let b = random(&mut rng, 130, 90);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_shape_error() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(DenseMatrix::identity(4).inverse().unwrap(), DenseMatrix::identity(4));
        let d = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let inv = d.inverse().unwrap();
        assert_eq!(inv.as_slice(), &[0.5, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn inverse_residual_random() {
        let mut rng = SeededRng::new(3);
        for _ in 0..10 {
            let mut a = random(&mut rng, 8, 8);
            for i in 0..8 {
                a[(i, i)] += 4.0;
            }
            let x = a.inverse().unwrap();
            let r = a.matmul(&x).unwrap().sub(&DenseMatrix::identity(8)).unwrap();
            assert!(r.max_abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_singular() {
        let s = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(s.inverse(), Err(Error::Singular { .. })));
        assert!(matches!(DenseMatrix::zeros(2, 3).inverse(), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(matches!(DenseMatrix::from_vec(1, 1, vec![f64::NAN]), Err(Error::NonFinite { .. })));
        assert!(DenseMatrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn triangular_examples() {
        let mut rng = SeededRng::new(4);
        let b = random(&mut rng, 3, 2);
        let x = solve_lower_triangular(&DenseMatrix::identity(3), &b, None).unwrap();
        assert_eq!(x, b);

        let a = 0.37;
        let l = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![-a, 1.0]]).unwrap();
        let x = solve_lower_triangular(&l, &DenseMatrix::column(&[1.0, 0.0]), None).unwrap();
        assert_eq!(x.as_slice(), &[1.0, a]);

        let z = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let rhs = DenseMatrix::column(&[1.0, 1.0]);
        assert!(matches!(solve_lower_triangular(&z, &rhs, None), Err(Error::ZeroDiagonal { row: 0 })));
    }

    #[test]
    fn triangular_matches_dense_inverse() {
        let mut rng = SeededRng::new(5);
        for trial in 0..20 {
            let n = 10;
            let l = DenseMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    1.0
                } else if i > j && rng.uniform(0.0, 1.0) < 0.4 {
                    rng.uniform(-1.0, 1.0)
                } else {
                    0.0
                }
            });
            let b = random(&mut rng, n, 3);
            let dense = l.inverse().unwrap().matmul(&b).unwrap();
            let pattern = LowerSparsity::of_matrix(&l);
            let sparse = solve_lower_triangular(&l, &b, Some(&pattern)).unwrap();
            let plain = solve_lower_triangular(&l, &b, None).unwrap();
            assert!(sparse.max_abs_diff(&dense) < 1e-12, "trial {trial}");
            assert_eq!(sparse, plain);
        }
    }

    #[test]
    fn hadamard_power_norm() {
        let mut rng = SeededRng::new(6);
        let a = random(&mut rng, 4, 4);
        assert_eq!(a.hadamard(&DenseMatrix::filled(4, 4, 1.0)).unwrap(), a);
        assert_eq!(a.matrix_power(0).unwrap(), DenseMatrix::identity(4));
        assert!(a.matrix_power(3).unwrap().max_abs_diff(&naive(&naive(&a, &a), &a)) < 1e-14);

        let n = 7;
        let s = DenseMatrix::from_fn(n, n, |i, j| if i > j { rng.uniform(0.1, 1.0) } else { 0.0 });
        let p = s.matrix_power(n as u32).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.0));

        let m = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.25]]).unwrap();
        assert_eq!(m.max_row_abs_sum(), 3.0);
        assert!(matches!(a.hadamard(&DenseMatrix::zeros(2, 2)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn f32_kernel_matches_f64() {
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [0.5f32, -1.0, 2.0, 0.0];
        let mut out = [0.0f32; 4];
        matmul_into(&a, &b, &mut out, 2, 2, 2);
        assert_eq!(out, [4.5, -1.0, 9.5, -3.0]);
    }
}
