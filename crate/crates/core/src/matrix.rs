//! Dense row-major matrices and the symmetric positive-definite solves
//! behind the ridge head.
//!
//! Everything here is plain `Vec<Real>` storage with explicit shapes. The
//! only factorization is Cholesky: the ridge normal matrix `A'A + lambda*I`
//! is symmetric positive definite whenever lambda > 0, and the factorization
//! is reused across right-hand sides.

use crate::error::{Error, Result};

/// Scalar type. 64-bit by default; the `f32` feature switches the whole
/// crate to 32-bit for throughput experiments (correctness tests assume f64).
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Real>,
}

impl std::fmt::Debug for Matrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.rows * self.cols <= 36 {
            for i in 0..self.rows {
                write!(f, "\n  {:?}", &self.data[i * self.cols..(i + 1) * self.cols])?;
            }
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from row-major data. Panics if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Real>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "data length {} != {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<Real>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    /// Column vector (n x 1).
    pub fn column(data: Vec<Real>) -> Self {
        let rows = data.len();
        Matrix { rows, cols: 1, data }
    }

    /// 1x1 matrix; scalars on the tape are stored this way.
    pub fn scalar(v: Real) -> Self {
        Matrix { rows: 1, cols: 1, data: vec![v] }
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

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    /// Value of a 1x1 matrix.
    pub fn as_scalar(&self) -> Real {
        assert!(self.is_scalar(), "not a scalar: {}x{}", self.rows, self.cols);
        self.data[0]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Real {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Real) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[Real] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Matrix product. Parallelized over output rows for large products;
    /// each output row is computed sequentially, so results do not depend
    /// on the thread schedule.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0 as Real; n * m];

        let kernel = |i: usize, out_row: &mut [Real]| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        };

        if n * k * m >= 1 << 17 {
            use rayon::prelude::*;
            out.par_chunks_mut(m)
                .enumerate()
                .for_each(|(i, row)| kernel(i, row));
        } else {
            for (i, row) in out.chunks_mut(m).enumerate() {
                kernel(i, row);
            }
        }
        Matrix::from_vec(n, m, out)
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b, "add")
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b, "sub")
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a * b, "hadamard")
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(Real, Real) -> Real, op: &'static str) -> Matrix {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op} shape mismatch: {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, k: Real) -> Matrix {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Add `other` scaled by `k` into self.
    pub fn axpy(&mut self, k: Real, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += k * b;
        }
    }

    /// Column sums as a 1 x cols matrix.
    pub fn col_sums(&self) -> Matrix {
        let mut out = vec![0.0 as Real; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self.data[i * self.cols + j];
            }
        }
        Matrix::from_vec(1, self.cols, out)
    }

    /// A'A without materializing the transpose. Entry sums run over rows in
    /// ascending order, matching `self.transpose().matmul(self)` bit for bit.
    pub fn gram(&self) -> Matrix {
        let (n, j) = (self.rows, self.cols);
        let mut out = vec![0.0 as Real; j * j];
        let fill_row = |jj: usize, row: &mut [Real]| {
            for i in 0..n {
                let a_row = &self.data[i * j..(i + 1) * j];
                let aij = a_row[jj];
                if aij == 0.0 {
                    continue;
                }
                for (o, &v) in row[..=jj].iter_mut().zip(a_row[..=jj].iter()) {
                    *o += aij * v;
                }
            }
        };
        if n * j * j >= 1 << 18 {
            use rayon::prelude::*;
            out.par_chunks_mut(j)
                .enumerate()
                .for_each(|(jj, row)| fill_row(jj, row));
        } else {
            for (jj, row) in out.chunks_mut(j).enumerate() {
                fill_row(jj, row);
            }
        }
        // mirror the strict lower triangle
        for a in 0..j {
            for b in (a + 1)..j {
                out[a * j + b] = out[b * j + a];
            }
        }
        Matrix::from_vec(j, j, out)
    }

    /// A'B without materializing the transpose; bit-identical to
    /// `self.transpose().matmul(other)`.
    pub fn tr_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, other.rows,
            "tr_matmul shape mismatch: {}x{} vs {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (n, j, k) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0 as Real; j * k];
        let fill_row = |jj: usize, row: &mut [Real]| {
            for i in 0..n {
                let aij = self.data[i * j + jj];
                if aij == 0.0 {
                    continue;
                }
                let b_row = &other.data[i * k..(i + 1) * k];
                for (o, &v) in row.iter_mut().zip(b_row.iter()) {
                    *o += aij * v;
                }
            }
        };
        if n * j * k >= 1 << 18 {
            use rayon::prelude::*;
            out.par_chunks_mut(k)
                .enumerate()
                .for_each(|(jj, row)| fill_row(jj, row));
        } else {
            for (jj, row) in out.chunks_mut(k).enumerate() {
                fill_row(jj, row);
            }
        }
        Matrix::from_vec(j, k, out)
    }

    /// Copy of columns `start..start+len`.
    pub fn col_slice(&self, start: usize, len: usize) -> Matrix {
        assert!(start + len <= self.cols, "col_slice out of range");
        let mut out = Matrix::zeros(self.rows, len);
        for i in 0..self.rows {
            let src = &self.data[i * self.cols + start..i * self.cols + start + len];
            out.data[i * len..(i + 1) * len].copy_from_slice(src);
        }
        out
    }

    /// Horizontal concatenation of column blocks.
    pub fn hcat(blocks: &[&Matrix]) -> Matrix {
        assert!(!blocks.is_empty());
        let rows = blocks[0].rows;
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            assert_eq!(b.rows, rows, "hcat row mismatch");
            for i in 0..rows {
                out.data[i * cols + off..i * cols + off + b.cols]
                    .copy_from_slice(&b.data[i * b.cols..(i + 1) * b.cols]);
            }
            off += b.cols;
        }
        out
    }

    /// Rows `idx` gathered into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.data[r * self.cols..(r + 1) * self.cols]
                .copy_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
        }
        out
    }

    pub fn trace(&self) -> Real {
        assert_eq!(self.rows, self.cols, "trace of non-square matrix");
        (0..self.rows).map(|i| self.data[i * self.cols + i]).sum()
    }

    pub fn frobenius_norm(&self) -> Real {
        self.data.iter().map(|v| v * v).sum::<Real>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Real {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max)
    }

    /// Largest deviation from symmetry, |M - M'| entrywise.
    pub fn asymmetry(&self) -> Real {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0 as Real;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Only the lower triangle of the input is read.
pub struct CholeskyFactor {
    l: Matrix,
}

impl CholeskyFactor {
    fn try_new(m: &Matrix) -> Option<Self> {
        let n = m.rows;
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = m.get(i, j);
                for p in 0..j {
                    s -= l.get(i, p) * l.get(j, p);
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l.set(i, i, s.sqrt());
                } else {
                    l.set(i, j, s / l.get(j, j));
                }
            }
        }
        Some(CholeskyFactor { l })
    }

    pub fn size(&self) -> usize {
        self.l.rows
    }

    /// Solve M X = B for all columns of B.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        let n = self.l.rows;
        assert_eq!(b.rows, n, "solve rhs row mismatch");
        let k = b.cols;
        let mut x = b.clone();
        let l = self.l.data();
        let data = x.data_mut();
        // forward: L y = b
        for i in 0..n {
            let (head, tail) = data.split_at_mut(i * k);
            let xi = &mut tail[..k];
            for p in 0..i {
                let lip = l[i * n + p];
                if lip == 0.0 {
                    continue;
                }
                let xp = &head[p * k..(p + 1) * k];
                for (o, &v) in xi.iter_mut().zip(xp.iter()) {
                    *o -= lip * v;
                }
            }
            let d = l[i * n + i];
            for o in xi.iter_mut() {
                *o /= d;
            }
        }
        // backward: L' x = y
        for i in (0..n).rev() {
            let (head, tail) = data.split_at_mut((i + 1) * k);
            let xi = &mut head[i * k..];
            for p in (i + 1)..n {
                let lpi = l[p * n + i];
                if lpi == 0.0 {
                    continue;
                }
                let xp = &tail[(p - i - 1) * k..(p - i) * k];
                for (o, &v) in xi.iter_mut().zip(xp.iter()) {
                    *o -= lpi * v;
                }
            }
            let d = l[i * n + i];
            for o in xi.iter_mut() {
                *o /= d;
            }
        }
        x
    }
}

/// Factor a symmetric positive-definite matrix, retrying once with a small
/// diagonal jitter (1e-10 * trace / n) before giving up.
pub fn spd_factor(m: &Matrix) -> Result<CholeskyFactor> {
    assert_eq!(m.rows, m.cols, "spd_factor needs a square matrix");
    debug_assert!(
        m.asymmetry() <= 1e-8 * (1.0 + m.frobenius_norm()),
        "spd_factor input is not symmetric"
    );
    if let Some(f) = CholeskyFactor::try_new(m) {
        return Ok(f);
    }
    let n = m.rows;
    let jitter = 1e-10 * m.trace() / n as Real;
    let mut shifted = m.clone();
    for i in 0..n {
        let v = shifted.get(i, i);
        shifted.set(i, i, v + jitter);
    }
    CholeskyFactor::try_new(&shifted).ok_or_else(|| Error::NotPositiveDefinite {
        size: n,
        detail: format!("factorization failed after jitter {jitter:.3e}"),
    })
}

/// Solve M X = B for symmetric positive-definite M.
pub fn spd_solve(m: &Matrix, b: &Matrix) -> Result<Matrix> {
    Ok(spd_factor(m)?.solve(b))
}

/// Ridge projector of the activation matrix `a` (n x J):
/// P = (A'A + lambda I)^-1 A'  and  H = A P.
pub fn ridge_projector(a: &Matrix, lambda: Real) -> Result<(Matrix, Matrix)> {
    assert!(lambda > 0.0, "ridge_projector requires lambda > 0");
    let at = a.transpose();
    let mut gram = at.matmul(a);
    for j in 0..gram.rows() {
        let v = gram.get(j, j);
        gram.set(j, j, v + lambda);
    }
    let p = spd_factor(&gram)?.solve(&at);
    let h = a.matmul(&p);
    Ok((p, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// Explicit dense inverse by Gauss-Jordan elimination with partial
    /// pivoting. Test oracle only.
    fn gauss_jordan_inverse(m: &Matrix) -> Matrix {
        let n = m.rows();
        let mut a = m.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            let mut pivot = col;
            for r in (col + 1)..n {
                if a.get(r, col).abs() > a.get(pivot, col).abs() {
                    pivot = r;
                }
            }
            if pivot != col {
                for j in 0..n {
                    let (x, y) = (a.get(col, j), a.get(pivot, j));
                    a.set(col, j, y);
                    a.set(pivot, j, x);
                    let (x, y) = (inv.get(col, j), inv.get(pivot, j));
                    inv.set(col, j, y);
                    inv.set(pivot, j, x);
                }
            }
            let d = a.get(col, col);
            assert!(d.abs() > 1e-14, "singular matrix in oracle");
            for j in 0..n {
                a.set(col, j, a.get(col, j) / d);
                inv.set(col, j, inv.get(col, j) / d);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.get(r, col);
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a.set(r, j, a.get(r, j) - f * a.get(col, j));
                    inv.set(r, j, inv.get(r, j) - f * inv.get(col, j));
                }
            }
        }
        inv
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let b = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = spd_solve(&Matrix::identity(3), &b).unwrap();
        assert_eq!(x.data(), b.data());
    }

    #[test]
    fn solve_diagonal() {
        let m = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 4.0]);
        let b = Matrix::column(vec![2.0, 4.0]);
        let x = spd_solve(&m, &b).unwrap();
        assert!(x.max_abs_diff(&Matrix::column(vec![1.0, 1.0])) < 1e-14);
    }

    #[test]
    fn solve_matches_explicit_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 10, 4);
        let mut m = a.transpose().matmul(&a);
        for i in 0..4 {
            let v = m.get(i, i);
            m.set(i, i, v + 0.5);
        }
        let y = random_matrix(&mut rng, 10, 1);
        let b = a.transpose().matmul(&y);
        let x = spd_solve(&m, &b).unwrap();
        let x_oracle = gauss_jordan_inverse(&m).matmul(&b);
        assert!(x.max_abs_diff(&x_oracle) < 1e-10);
    }

    #[test]
    fn solve_oracle_up_to_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=16usize {
            let a = random_matrix(&mut rng, n + 4, n);
            let mut m = a.transpose().matmul(&a);
            for i in 0..n {
                let v = m.get(i, i);
                m.set(i, i, v + 0.3);
            }
            let b = random_matrix(&mut rng, n, 3);
            let x = spd_solve(&m, &b).unwrap();
            let oracle = gauss_jordan_inverse(&m).matmul(&b);
            let rel = x.sub(&oracle).frobenius_norm() / oracle.frobenius_norm().max(1e-30);
            assert!(rel < 1e-9, "n={n}: rel error {rel:.3e}");
        }
    }

    #[test]
    fn solve_residual_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 12, 6);
        let mut m = a.transpose().matmul(&a);
        for i in 0..6 {
            let v = m.get(i, i);
            m.set(i, i, v + 0.1);
        }
        let b = random_matrix(&mut rng, 6, 4);
        let x = spd_solve(&m, &b).unwrap();
        let resid = m.matmul(&x).sub(&b).frobenius_norm() / b.frobenius_norm();
        assert!(resid < 1e-8, "residual {resid:.3e}");
    }

    #[test]
    fn not_positive_definite_is_reported() {
        let m = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, -1.0]);
        let b = Matrix::column(vec![1.0, 1.0]);
        match spd_solve(&m, &b) {
            Err(Error::NotPositiveDefinite { size, .. }) => assert_eq!(size, 2),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn projector_identity_limit() {
        // A = I, lambda -> 0: H -> I.
        let a = Matrix::identity(4);
        let (_, h) = ridge_projector(&a, 1e-12).unwrap();
        assert!(h.max_abs_diff(&Matrix::identity(4)) < 1e-6);
    }

    #[test]
    fn projector_scalar_shrinkage() {
        // A = I, lambda = 1: H = 0.5 I.
        let a = Matrix::identity(5);
        let (_, h) = ridge_projector(&a, 1.0).unwrap();
        assert!(h.max_abs_diff(&Matrix::identity(5).scale(0.5)) < 1e-12);
    }

    #[test]
    fn projector_h_is_a_times_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 12, 5);
        let (p, h) = ridge_projector(&a, 0.7).unwrap();
        assert_eq!(p.shape(), (5, 12));
        assert_eq!(h.shape(), (12, 12));
        assert!(h.asymmetry() < 1e-10);
        // H = A P reproduced from parts.
        assert!(a.matmul(&p).max_abs_diff(&h) == 0.0);
    }

    #[test]
    fn trace_h_decreases_with_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(&mut rng, 10, 6);
        let mut prev = Real::INFINITY;
        for lambda in [0.1, 1.0, 10.0, 100.0, 1e4] {
            let (_, h) = ridge_projector(&a, lambda).unwrap();
            let t = h.trace();
            assert!(t < prev + 1e-6, "trace not decreasing at lambda={lambda}");
            assert!(t <= 6.0 + 1e-6);
            prev = t;
        }
    }

    #[test]
    fn matmul_parallel_matches_serial() {
        // Big enough to take the parallel path.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_matrix(&mut rng, 80, 70);
        let b = random_matrix(&mut rng, 70, 60);
        let big = a.matmul(&b);
        // Row-by-row serial reference.
        for i in 0..80 {
            let row = a.select_rows(&[i]).matmul(&b);
            for j in 0..60 {
                assert_eq!(row.get(0, j), big.get(i, j), "row {i} col {j}");
            }
        }
    }

    #[test]
    fn transpose_and_slices() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.transpose().data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(m.col_slice(1, 2).data(), &[2.0, 3.0, 5.0, 6.0]);
        assert_eq!(m.col_sums().data(), &[5.0, 7.0, 9.0]);
        let c = Matrix::hcat(&[&m.col_slice(0, 1), &m.col_slice(1, 2)]);
        assert_eq!(c.data(), m.data());
    }
}
