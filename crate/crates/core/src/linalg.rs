//! Small dense linear algebra on row-major square matrices: LU with partial
//! pivoting for determinants, inverses and solves, plus orthogonal
//! initialization. Matrix sizes here are channel counts (tens at most).

use crate::error::{FlowError, Result};
use crate::scalar::Scalar;

/// LU factorization with partial pivoting. Returns (lu, perm, sign).
fn lu_decompose<T: Scalar>(a: &[T], n: usize) -> (Vec<T>, Vec<usize>, f64) {
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for col in 0..n {
        let mut pivot = col;
        let mut best = lu[col * n + col].abs();
        for row in col + 1..n {
            let v = lu[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if pivot != col {
            for j in 0..n {
                lu.swap(col * n + j, pivot * n + j);
            }
            perm.swap(col, pivot);
            sign = -sign;
        }
        let diag = lu[col * n + col];
        if diag == T::zero() {
            continue;
        }
        for row in col + 1..n {
            let factor = lu[row * n + col] / diag;
            lu[row * n + col] = factor;
            for j in col + 1..n {
                lu[row * n + j] = lu[row * n + j] - factor * lu[col * n + j];
            }
        }
    }
    (lu, perm, sign)
}

/// Signed determinant of a row-major n x n matrix.
pub fn det<T: Scalar>(a: &[T], n: usize) -> f64 {
    let (lu, _, sign) = lu_decompose(a, n);
    let mut d = sign;
    for i in 0..n {
        d *= lu[i * n + i].as_f64();
    }
    d
}

/// log|det A| together with the sign of det A.
pub fn log_abs_det<T: Scalar>(a: &[T], n: usize, context: &str) -> Result<(f64, f64)> {
    let (lu, _, sign) = lu_decompose(a, n);
    let mut log = 0.0;
    let mut s = sign;
    for i in 0..n {
        let d = lu[i * n + i].as_f64();
        if d.abs() < 1e-300 {
            return Err(FlowError::SingularMatrix {
                context: context.into(),
                det: 0.0,
            });
        }
        log += d.abs().ln();
        if d < 0.0 {
            s = -s;
        }
    }
    Ok((log, s))
}

/// Solve A X = B where B holds `cols` right-hand sides laid out as an
/// n x cols row-major matrix.
pub fn solve<T: Scalar>(a: &[T], n: usize, b: &[T], cols: usize, context: &str) -> Result<Vec<T>> {
    let d = det(a, n);
    if d.abs() < 1e-12 {
        return Err(FlowError::SingularMatrix {
            context: context.into(),
            det: d,
        });
    }
    let (lu, perm, _) = lu_decompose(a, n);
    let mut x = vec![T::zero(); n * cols];
    // apply row permutation to B
    for i in 0..n {
        for c in 0..cols {
            x[i * cols + c] = b[perm[i] * cols + c];
        }
    }
    // forward substitution (L has unit diagonal)
    for i in 0..n {
        for k in 0..i {
            let f = lu[i * n + k];
            for c in 0..cols {
                let t = x[k * cols + c];
                x[i * cols + c] = x[i * cols + c] - f * t;
            }
        }
    }
    // back substitution
    for i in (0..n).rev() {
        for k in i + 1..n {
            let f = lu[i * n + k];
            for c in 0..cols {
                let t = x[k * cols + c];
                x[i * cols + c] = x[i * cols + c] - f * t;
            }
        }
        let diag = lu[i * n + i];
        for c in 0..cols {
            x[i * cols + c] = x[i * cols + c] / diag;
        }
    }
    Ok(x)
}

/// Matrix inverse via LU solve against the identity.
pub fn inverse<T: Scalar>(a: &[T], n: usize, context: &str) -> Result<Vec<T>> {
    let mut eye = vec![T::zero(); n * n];
    for i in 0..n {
        eye[i * n + i] = T::one();
    }
    solve(a, n, &eye, n, context)
}

/// Random orthogonal n x n matrix: QR of a Gaussian matrix by modified
/// Gram-Schmidt, with the sign convention that diagonal R entries are
/// positive.
pub fn random_orthogonal<T: Scalar>(n: usize, rng: &mut impl rand::Rng) -> Vec<T> {
    use rand_distr::{Distribution, StandardNormal};
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..n {
        for k in 0..j {
            let dot: f64 = (0..n).map(|i| cols[j][i] * cols[k][i]).sum();
            for i in 0..n {
                cols[j][i] -= dot * cols[k][i];
            }
        }
        let norm: f64 = (0..n).map(|i| cols[j][i] * cols[j][i]).sum::<f64>().sqrt();
        let norm = if norm < 1e-12 { 1.0 } else { norm };
        for i in 0..n {
            cols[j][i] /= norm;
        }
    }
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = T::from_f64(cols[j][i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn det_of_known_matrices() {
        let eye = [1.0, 0.0, 0.0, 1.0];
        assert!((det(&eye, 2) - 1.0).abs() < 1e-12);
        let perm = [0.0, 1.0, 1.0, 0.0];
        assert!((det(&perm, 2) + 1.0).abs() < 1e-12);
        let a = [2.0, 1.0, 1.0, 3.0];
        assert!((det(&a, 2) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_round_trip() {
        let a = [2.0, 1.0, 0.5, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0];
        let inv = inverse(&a, 3, "test").unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(inverse(&a, 2, "test").is_err());
    }

    #[test]
    fn orthogonal_init_has_unit_det() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for n in [2usize, 4, 8] {
            let q: Vec<f64> = random_orthogonal(n, &mut rng);
            assert!((det(&q, n).abs() - 1.0).abs() < 1e-8, "n={n}");
        }
    }
}
