//! Dense symmetric helpers on row-major slices: Cholesky and a Jacobi
//! eigenvalue sweep for the PSD diagnostic. Matrices here are small
//! (grid-node lattices), so simplicity beats a heavyweight dependency and
//! both routines stay generic over the scalar type.

use crate::error::{FgError, Result};
use crate::scalar::Scalar;

/// Lower Cholesky factor of a symmetric `n x n` matrix (row-major).
/// Returns the failing row on a non-positive pivot.
pub fn cholesky<T: Scalar>(a: &[T], n: usize) -> std::result::Result<Vec<T>, usize> {
    assert_eq!(a.len(), n * n);
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= T::zero() {
                    return Err(i);
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Cholesky with one diagonal-jitter retry. Returns `(factor, jitter_used)`.
pub fn cholesky_with_jitter<T: Scalar>(a: &[T], n: usize, eps: T) -> Result<(Vec<T>, T)> {
    match cholesky(a, n) {
        Ok(l) => Ok((l, T::zero())),
        Err(_) => {
            let trace: T = (0..n).map(|i| a[i * n + i]).sum();
            let jitter = eps * trace / T::of_usize(n.max(1));
            let mut b = a.to_vec();
            for i in 0..n {
                b[i * n + i] = b[i * n + i] + jitter;
            }
            match cholesky(&b, n) {
                Ok(l) => Ok((l, jitter)),
                Err(_) => Err(FgError::NotPsd),
            }
        }
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix by cyclic Jacobi.
pub fn sym_eigen_extremes<T: Scalar>(a: &[T], n: usize) -> (T, T) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    for _sweep in 0..60 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + m[p * n + q].sq();
            }
        }
        let scale: T = (0..n).map(|i| m[i * n + i].sq()).sum();
        if off <= T::of(1e-28) * (scale + T::of(1e-300)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = {
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    sign / (theta.abs() + (theta.sq() + T::one()).sqrt())
                };
                let c = T::one() / (t.sq() + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut lo = m[0];
    let mut hi = m[0];
    for i in 0..n {
        let d = m[i * n + i];
        if d < lo {
            lo = d;
        }
        if d > hi {
            hi = d;
        }
    }
    (lo, hi)
}
