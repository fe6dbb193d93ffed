//! One-sided Jacobi SVD for small square matrices.
//!
//! Right-rotations orthogonalize the columns of a working copy `A`; the
//! accumulated rotations form `V`, the column norms are the singular values,
//! and the normalized columns form `U`, giving `A = U diag(sigma) V^T`.

use crate::error::{DsnError, Result};
use crate::numkit::matrix::{norm, Matrix};
use crate::Scalar;

const MAX_SWEEPS: usize = 100;
const OFFDIAG_TOL: f64 = 1e-12;

pub struct Svd<T> {
    pub u: Matrix<T>,
    /// Nonnegative, descending.
    pub sigma: Vec<T>,
    pub v: Matrix<T>,
}

/// SVD of a square matrix with dimension at most 512.
pub fn svd_small<T: Scalar>(m: &Matrix<T>) -> Result<Svd<T>> {
    let n = m.rows();
    if m.cols() != n {
        return Err(DsnError::DimMismatch {
            context: "svd_small (square input)",
            expected: n,
            got: m.cols(),
        });
    }
    assert!(n <= 512, "svd_small supports dim <= 512");
    if n == 0 {
        return Ok(Svd {
            u: Matrix::zeros(0, 0),
            sigma: vec![],
            v: Matrix::zeros(0, 0),
        });
    }

    let tol = T::from_f64_c(OFFDIAG_TOL);
    let mut a = m.clone();
    let mut v = Matrix::identity(n);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                // Column moments of the (p, q) pair.
                let mut alpha = T::zero();
                let mut beta = T::zero();
                let mut gamma = T::zero();
                for i in 0..n {
                    let ap = a.get(i, p);
                    let aq = a.get(i, q);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                let denom = (alpha * beta).sqrt();
                if denom == T::zero() || gamma.abs() <= tol * denom {
                    continue;
                }
                // Deflation guard: a column whose norm sits at rounding level
                // relative to its partner is numerically null; rotating it
                // chases noise and never converges. Norm ratio 1e-14.
                if alpha.min(beta) <= alpha.max(beta) * T::from_f64_c(1e-28) {
                    continue;
                }
                rotated = true;
                // Hestenes rotation annihilating the p/q column correlation.
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = {
                    let s = if zeta >= T::zero() { T::one() } else { -T::one() };
                    s / (zeta.abs() + (T::one() + zeta * zeta).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let ap = a.get(i, p);
                    let aq = a.get(i, q);
                    a.set(i, p, c * ap - s * aq);
                    a.set(i, q, s * ap + c * aq);
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(DsnError::SvdNoConvergence(MAX_SWEEPS));
    }

    // Column norms are the singular values; sort descending (stable).
    let mut sigma: Vec<T> = (0..n).map(|j| norm(&a.column(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));

    let mut u = Matrix::zeros(n, n);
    let mut v_sorted = Matrix::zeros(n, n);
    let sigma_max = sigma[order[0]];
    let tiny = T::from_f64_c(1e-300).max(sigma_max * T::from_f64_c(1e-14));
    for (new_j, &old_j) in order.iter().enumerate() {
        let s = sigma[old_j];
        if s > tiny {
            for i in 0..n {
                u.set(i, new_j, a.get(i, old_j) / s);
            }
        }
        for i in 0..n {
            v_sorted.set(i, new_j, v.get(i, old_j));
        }
    }
    sigma.sort_by(|x, y| y.partial_cmp(x).unwrap());
    // Null columns (zero singular value) get a deterministic orthonormal fill.
    complete_basis(&mut u, &sigma, tiny);

    Ok(Svd {
        u,
        sigma,
        v: v_sorted,
    })
}

/// Replace columns belonging to (near-)zero singular values with unit vectors
/// orthogonal to the established ones, trying basis vectors in index order.
fn complete_basis<T: Scalar>(u: &mut Matrix<T>, sigma: &[T], tiny: T) {
    let n = u.rows();
    let half = T::from_f64_c(0.5);
    for j in 0..n {
        if sigma[j] > tiny {
            continue;
        }
        'candidates: for k in 0..n {
            let mut cand = vec![T::zero(); n];
            cand[k] = T::one();
            // Two Gram-Schmidt passes against all other columns.
            for _ in 0..2 {
                for other in 0..n {
                    if other == j {
                        continue;
                    }
                    if other > j && !(sigma[other] > tiny) {
                        continue; // not yet filled
                    }
                    let proj: T = (0..n).map(|i| u.get(i, other) * cand[i]).sum();
                    for (i, c) in cand.iter_mut().enumerate() {
                        *c = *c - proj * u.get(i, other);
                    }
                }
            }
            let nrm = norm(&cand);
            if nrm > half {
                for (i, c) in cand.iter().enumerate() {
                    u.set(i, j, *c / nrm);
                }
                break 'candidates;
            }
        }
    }
}
