//! Dense linear algebra: row-major matrices, products, column norms and
//! Cholesky-based SPD solves.
//!
//! Values are held as `f64` in memory. Checkpoint files store `f32`, and the
//! widening conversion is exact, so a load/save cycle is lossless.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry pre-check before factorization.
pub const SYMMETRY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-column matrix has no row storage.
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
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

    /// Returns the flat index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot subtract {:?} from {:?}",
                other.shape(),
                self.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rounds every entry through `f32`, the on-disk precision.
    pub fn round_to_f32(&self) -> Self {
        self.map(|v| v as f32 as f64)
    }

    pub fn count_zeros(&self) -> usize {
        self.data.iter().filter(|v| **v == 0.0).count()
    }
}

/// Which norm to take over each column of an activation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
    Linf,
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(NormKind::L1),
            "l2" => Ok(NormKind::L2),
            "linf" => Ok(NormKind::Linf),
            other => Err(Error::Argument(format!("unknown norm `{other}`"))),
        }
    }
}

/// Dot product with eight independent accumulators so the compiler can
/// vectorize the reduction.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let base = c * 8;
        let (xa, xb) = (&a[base..base + 8], &b[base..base + 8]);
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    let mut tail = 0.0;
    for k in chunks * 8..n {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    if b.cols == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(b.cols)
        .zip(a.data.par_chunks(a.cols.max(1)))
        .for_each(|(out_row, a_row)| {
            for (k, &aik) in a_row.iter().enumerate() {
                if aik != 0.0 {
                    axpy(aik, b.row(k), out_row);
                }
            }
        });
    Ok(out)
}

/// Product `a · bᵀ`, computed with contiguous row dot products.
pub fn matmul_transposed(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(Error::Shape(format!(
            "matmul_transposed of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.rows);
    if b.rows == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(b.rows)
        .enumerate()
        .for_each(|(i, out_row)| {
            let a_row = a.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a_row, b.row(j));
            }
        });
    Ok(out)
}

/// Gram matrix `xᵀ · x` (shape `cols × cols`), accumulated in `f64`.
pub fn gram(x: &DenseMatrix) -> DenseMatrix {
    let n = x.cols;
    let xt = x.transpose();
    let mut out = DenseMatrix::zeros(n, n);
    if n == 0 {
        return out;
    }
    // Fill the lower triangle row by row, then mirror.
    out.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = xt.row(i);
        for (j, o) in row.iter_mut().enumerate().take(i + 1) {
            *o = dot(xi, xt.row(j));
        }
    });
    for i in 0..n {
        for j in 0..i {
            out.data[j * n + i] = out.data[i * n + j];
        }
    }
    out
}

/// Per-column norm of `x`; entry `j` aggregates column `j` over all rows.
pub fn column_norms(x: &DenseMatrix, kind: NormKind) -> Result<Vec<f64>> {
    if x.rows == 0 {
        return Err(Error::Shape("column norms of a matrix with no rows".into()));
    }
    let mut acc = vec![0.0f64; x.cols];
    for row in x.rows_iter() {
        for (a, &v) in acc.iter_mut().zip(row) {
            match kind {
                NormKind::L1 => *a += v.abs(),
                NormKind::L2 => *a += v * v,
                NormKind::Linf => *a = a.max(v.abs()),
            }
        }
    }
    if kind == NormKind::L2 {
        acc.iter_mut().for_each(|a| *a = a.sqrt());
    }
    Ok(acc)
}

fn check_square(h: &DenseMatrix) -> Result<()> {
    if h.rows != h.cols {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {:?}",
            h.shape()
        )));
    }
    Ok(())
}

/// Checks `|h_ij - h_ji| <= tol * max|h|` for every pair.
pub fn check_symmetric(h: &DenseMatrix, tol: f64) -> Result<()> {
    check_square(h)?;
    let scale = h.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..h.rows {
        for j in 0..i {
            let deviation = (h.get(i, j) - h.get(j, i)).abs();
            if deviation > tol * scale {
                return Err(Error::NotSymmetric {
                    row: i,
                    col: j,
                    deviation,
                });
            }
        }
    }
    Ok(())
}

/// Lower-triangular Cholesky factor `L` with `h = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    pub fn factor(h: &DenseMatrix) -> Result<Self> {
        check_symmetric(h, SYMMETRY_TOL)?;
        let n = h.rows;
        let mut l = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s = h.get(i, j) - dot(&l.row(i)[..j], &l.row(j)[..j]);
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::Singular { pivot: i, value: s });
                    }
                    l.set(i, i, s.sqrt());
                } else {
                    let v = s / l.get(j, j);
                    l.set(i, j, v);
                }
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn factor_matrix(&self) -> &DenseMatrix {
        &self.l
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(Error::Shape(format!(
                "rhs length {} does not match dimension {n}",
                rhs.len()
            )));
        }
        // L y = rhs
        let mut y = rhs.to_vec();
        for i in 0..n {
            let s = y[i] - dot(&self.l.row(i)[..i], &y[..i]);
            y[i] = s / self.l.get(i, i);
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l.get(k, i) * y[k];
            }
            y[i] = s / self.l.get(i, i);
        }
        Ok(y)
    }

    /// `L⁻¹`, lower triangular, built one row at a time.
    fn inverse_factor(&self) -> DenseMatrix {
        let n = self.dim();
        let mut inv = DenseMatrix::zeros(n, n);
        let mut row = vec![0.0f64; n];
        for i in 0..n {
            row.iter_mut().for_each(|v| *v = 0.0);
            row[i] = 1.0;
            let li = self.l.row(i);
            for k in 0..i {
                let c = li[k];
                if c != 0.0 {
                    axpy(-c, &inv.row(k)[..=k], &mut row[..=k]);
                }
            }
            let d = li[i];
            for (dst, v) in inv.row_mut(i)[..=i].iter_mut().zip(&row[..=i]) {
                *dst = v / d;
            }
        }
        inv
    }

    /// Diagonal of `h⁻¹` without forming the full inverse.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.dim();
        let linv = self.inverse_factor();
        // h⁻¹ = L⁻ᵀ L⁻¹, so (h⁻¹)_jj is the squared norm of column j of L⁻¹.
        let mut diag = vec![0.0f64; n];
        for i in 0..n {
            for (d, v) in diag.iter_mut().zip(&linv.row(i)[..=i]) {
                *d += v * v;
            }
        }
        diag
    }

    pub fn inverse(&self) -> DenseMatrix {
        let n = self.dim();
        let linv = self.inverse_factor();
        let lt = linv.transpose();
        // (L⁻ᵀ L⁻¹)_ij = Σ_k L⁻¹_ki L⁻¹_kj = dot of columns i and j of L⁻¹.
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&lt.row(i)[i..], &lt.row(j)[i..]);
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }
}

/// Solves `h · v = rhs` for symmetric positive definite `h`.
pub fn spd_solve(h: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    Cholesky::factor(h)?.solve(rhs)
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(h: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(Cholesky::factor(h)?.inverse())
}
