//! Deterministic dense numeric kernels shared by the whole crate:
//! similarity, stable softmax, small-matrix SVD, orthogonal sampling, and
//! seedable randomness. All operations are pure; `Rng` is single-owner state.

mod matrix;
mod rng;
mod svd;

pub use matrix::{dot, norm, Matrix};
pub use rng::Rng;
pub use svd::{svd_small, Svd};

use crate::error::{DsnError, Result};
use crate::Scalar;

/// Cosine similarity `u.v / (|u||v|)`, clamped to `[-1, 1]` against rounding.
///
/// Zero-norm inputs are an explicit error, never NaN.
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(DsnError::DimMismatch {
            context: "cosine",
            expected: u.len(),
            got: v.len(),
        });
    }
    let mut d = T::zero();
    let mut nu = T::zero();
    let mut nv = T::zero();
    for (&a, &b) in u.iter().zip(v) {
        d += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == T::zero() || nv == T::zero() {
        return Err(DsnError::ZeroNorm("cosine"));
    }
    let c = d / (nu.sqrt() * nv.sqrt());
    Ok(c.min(T::one()).max(-T::one()))
}

/// Log of the softmax of `x / tau`, evaluated with max subtraction so large
/// scores cannot overflow. Exponentiated outputs sum to 1 within 1e-12.
pub fn log_softmax_row<T: Scalar>(x: &[T], tau: T) -> Vec<T> {
    assert!(tau > T::zero(), "temperature must be positive");
    assert!(!x.is_empty(), "log_softmax_row of empty slice");
    let scaled: Vec<T> = x.iter().map(|&v| v / tau).collect();
    let m = scaled.iter().fold(scaled[0], |a, &b| a.max(b));
    let lse = m + scaled.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    scaled.into_iter().map(|v| v - lse).collect()
}

/// Uniformly random orthogonal matrix via twice-iterated Gram-Schmidt on a
/// Gaussian sample. `R^T R = I` holds within 1e-10.
pub fn random_orthogonal<T: Scalar>(d: usize, rng: &mut Rng) -> Matrix<T> {
    assert!(d >= 1, "dimension must be at least 1");
    let mut q = Matrix::<T>::zeros(d, d);
    for j in 0..d {
        loop {
            let mut col: Vec<T> = (0..d).map(|_| rng.normal()).collect();
            // Two passes keep orthogonality at machine precision.
            for _ in 0..2 {
                for prev in 0..j {
                    let proj: T = (0..d).map(|i| q.get(i, prev) * col[i]).sum();
                    for (i, c) in col.iter_mut().enumerate() {
                        *c = *c - proj * q.get(i, prev);
                    }
                }
            }
            let nrm = norm(&col);
            // A Gaussian draw landing in the span of previous columns has
            // measure zero; resample on the degenerate branch anyway.
            if nrm > T::from_f64_c(1e-6) {
                for (i, c) in col.iter().enumerate() {
                    q.set(i, j, *c / nrm);
                }
                break;
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_identical_vectors() {
        let c = cosine::<f64>(&[0.6, 0.8], &[0.6, 0.8]).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_orthogonal() {
        let c = cosine::<f64>(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn cosine_hand_case() {
        // dot = 8, |u| = |v| = 3.
        let c = cosine::<f64>(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_norm_is_error() {
        assert!(matches!(
            cosine::<f64>(&[0.0, 0.0], &[1.0, 0.0]),
            Err(DsnError::ZeroNorm(_))
        ));
    }

    #[test]
    fn cosine_scale_invariant() {
        let u = [0.3, -1.2, 2.0];
        let v = [1.0, 0.4, -0.2];
        let base = cosine(&u, &v).unwrap();
        let us: Vec<f64> = u.iter().map(|x| x * 3.7).collect();
        let vs: Vec<f64> = v.iter().map(|x| x * 0.01).collect();
        assert!((cosine(&us, &vs).unwrap() - base).abs() < 1e-12);
        assert!((cosine(&v, &u).unwrap() - base).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_uniform() {
        let out = log_softmax_row::<f64>(&[0.0, 0.0], 1.0);
        for v in out {
            assert!((v + std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_no_overflow() {
        let out = log_softmax_row::<f64>(&[1000.0, 0.0], 1.0);
        assert!(out[0].abs() < 1e-12);
        assert!((out[1] + 1000.0).abs() < 1e-9);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn log_softmax_matches_ln1p_route() {
        // Two-element case admits the independent formulation
        // ls_1 = -ln(1 + exp((x2-x1)/tau)).
        let (x1, x2, tau) = (1.0f64, 2.0f64, 0.07f64);
        let out = log_softmax_row(&[x1, x2], tau);
        let expect0 = -((x2 - x1) / tau).exp().ln_1p();
        let expect1 = -((x1 - x2) / tau).exp().ln_1p();
        assert!((out[0] - expect0).abs() < 1e-10);
        assert!((out[1] - expect1).abs() < 1e-10);
    }

    #[test]
    fn log_softmax_sums_to_one() {
        let mut rng = Rng::from_seed(3);
        for _ in 0..200 {
            let n = 1 + rng.below(12);
            let x: Vec<f64> = (0..n).map(|_| rng.normal::<f64>() * 50.0).collect();
            let tau = 0.05 + rng.uniform();
            let s: f64 = log_softmax_row(&x, tau).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_orthogonal_d1_is_sign() {
        let mut rng = Rng::from_seed(0);
        let m = random_orthogonal::<f64>(1, &mut rng);
        assert!((m.get(0, 0).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_orthogonal_defect_and_determinism() {
        for d in [1usize, 2, 8, 64] {
            let mut rng = Rng::from_seed(42);
            let m = random_orthogonal::<f64>(d, &mut rng);
            assert!(m.orthogonality_defect() < 1e-10, "d = {d}");
            let mut rng2 = Rng::from_seed(42);
            let m2 = random_orthogonal::<f64>(d, &mut rng2);
            assert_eq!(m.data(), m2.data());
        }
    }
}
