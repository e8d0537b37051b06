//! Oracles for the acceptance suite, independent of the library's solve
//! and projector code paths: Jacobi eigendecomposition, explicit
//! Gauss-Jordan inversion, and spectral reconstructions built on them.

use mlr_core::{Matrix, Real};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvector columns), unsorted.
pub fn jacobi_eigen(m: &Matrix) -> (Vec<Real>, Matrix) {
    let n = m.rows();
    assert_eq!(n, m.cols());
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let scale: Real = m.data().iter().map(|x| x.abs()).fold(0.0, Real::max);
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }
    for _sweep in 0..200 {
        let mut off = 0.0 as Real;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(a.get(i, j).abs());
            }
        }
        if off <= scale * 1e-15 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= scale * 1e-18 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let eig = (0..n).map(|i| a.get(i, i)).collect();
    (eig, v)
}

/// Spectral oracle for the ridge projector: H = U diag(s^2/(s^2+lambda)) U'
/// with U, s^2 from the eigendecomposition of A A'.
pub fn hat_oracle_spectral(a: &Matrix, lambda: Real) -> Matrix {
    let n = a.rows();
    let aat = a.matmul(&a.transpose());
    let (s2, u) = jacobi_eigen(&aat);
    let mut h = Matrix::zeros(n, n);
    for (k, &sk2) in s2.iter().enumerate() {
        // numerically tiny negative eigenvalues of A A' are zeros
        let sk2 = sk2.max(0.0);
        let w = sk2 / (sk2 + lambda);
        for i in 0..n {
            let uik = u.get(i, k);
            if uik == 0.0 {
                continue;
            }
            for j in 0..n {
                let cur = h.get(i, j);
                h.set(i, j, cur + w * uik * u.get(j, k));
            }
        }
    }
    h
}

/// Explicit dense inverse by Gauss-Jordan with partial pivoting.
pub fn gauss_jordan_inverse(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if a.get(r, col).abs() > a.get(piv, col).abs() {
                piv = r;
            }
        }
        for j in 0..n {
            let (x, y) = (a.get(col, j), a.get(piv, j));
            a.set(col, j, y);
            a.set(piv, j, x);
            let (x, y) = (inv.get(col, j), inv.get(piv, j));
            inv.set(col, j, y);
            inv.set(piv, j, x);
        }
        let d = a.get(col, col);
        assert!(d.abs() > 1e-300, "oracle hit a singular matrix");
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

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<Real> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Random symmetric positive-definite matrix A'A + shift I.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: Real) -> Matrix {
    let a = random_matrix(rng, n + 3, n);
    let mut m = a.transpose().matmul(&a);
    for i in 0..n {
        let v = m.get(i, i);
        m.set(i, i, v + shift);
    }
    m
}
