//! The four training loss terms and their analytic gradients with respect to
//! the vectors and logits they consume.
//!
//! Reduction conventions (recorded in run metadata): the contrastive and
//! cross-entropy losses are summed over the batch, the memory loss is
//! averaged over contributing images.

use std::collections::BTreeMap;

use crate::error::{DsnError, Result};
use crate::membank::MemoryBank;
use crate::numkit::{norm, Matrix};
use crate::Scalar;

/// Weights of the total objective. `lambda3` scales the sum of the
/// classifier and teacher-signal terms.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights<T> {
    pub lambda1: T,
    pub lambda2: T,
    pub lambda3: T,
}

impl<T: Scalar> LossWeights<T> {
    pub fn new(lambda1: T, lambda2: T, lambda3: T) -> Self {
        Self {
            lambda1,
            lambda2,
            lambda3,
        }
    }
}

/// Multiview contrastive batch: the projected, unit-norm vectors of every
/// augmented view (both modalities), with their category labels.
///
/// Invariants owned by the batch sampler: at least two rows, unit-norm rows,
/// and at least one same-label partner for every row.
pub struct ContrastiveBatch<'a, T> {
    pub vectors: &'a Matrix<T>,
    pub labels: &'a [u32],
    pub tau: T,
}

/// Supervised multiview contrastive loss, summed over anchors.
///
/// For each anchor i: `-(1/|P(i)|) * sum_{p in P(i)} log( exp(s_ip/tau) /
/// sum_{a != i} exp(s_ia/tau) )` where `P(i)` are the same-label rows (any
/// modality, any view) and `s` is the pairwise dot-product matrix. Returns
/// the loss and its gradient with respect to every input row.
pub fn cmcm_loss<T: Scalar>(batch: &ContrastiveBatch<'_, T>) -> Result<(T, Matrix<T>)> {
    let v = batch.vectors;
    let m = v.rows();
    if batch.labels.len() != m {
        return Err(DsnError::CountMismatch(format!(
            "{} labels for {} contrastive rows",
            batch.labels.len(),
            m
        )));
    }
    if m < 2 {
        return Err(DsnError::InvalidConfig(
            "contrastive batch needs at least two rows".into(),
        ));
    }
    let tau = batch.tau;
    assert!(tau > T::zero(), "temperature must be positive");

    // Pairwise scaled scores.
    let scores = {
        let mut s = v.matmul_nt(v);
        s.scale(T::one() / tau);
        s
    };

    let mut loss = T::zero();
    // c[i][j] = d loss / d scores_ij (zero diagonal); gradient w.r.t. rows
    // follows as (C + C^T) V since scores are symmetric dot products.
    let mut coeff = Matrix::<T>::zeros(m, m);

    for i in 0..m {
        let row = scores.row(i);
        let positives: Vec<usize> = (0..m)
            .filter(|&j| j != i && batch.labels[j] == batch.labels[i])
            .collect();
        if positives.is_empty() {
            return Err(DsnError::EmptyPositiveSet(i));
        }

        // Stable log-sum-exp over a != i.
        let mut mx = T::neg_infinity();
        for (a, &x) in row.iter().enumerate() {
            if a != i {
                mx = mx.max(x);
            }
        }
        let mut z = T::zero();
        for (a, &x) in row.iter().enumerate() {
            if a != i {
                z += (x - mx).exp();
            }
        }
        let log_z = mx + z.ln();

        let inv_p = T::one() / T::from_f64_c(positives.len() as f64);
        let mut mean_pos = T::zero();
        for &p in &positives {
            mean_pos += row[p];
        }
        mean_pos *= inv_p;
        loss += log_z - mean_pos;

        let inv_tau = T::one() / tau;
        for a in 0..m {
            if a == i {
                continue;
            }
            let q = (row[a] - log_z).exp();
            let mut c = q * inv_tau;
            if batch.labels[a] == batch.labels[i] {
                c -= inv_p * inv_tau;
            }
            coeff.set(i, a, c);
        }
    }

    // grad = (C + C^T) V, accumulated in fixed index order.
    let mut sym = coeff.transpose();
    sym.add_assign(&coeff);
    let grad = sym.matmul(v);
    Ok((loss, grad))
}

/// Memory loss: mean over images whose category has a nonempty bank of
/// `-cosine(f_img, prototype)`. Prototypes are constants; gradient flows
/// only into the image embeddings. With every bank empty the loss is zero.
pub fn memory_loss<T: Scalar>(
    f_img: &Matrix<T>,
    labels: &[u32],
    bank: &MemoryBank<T>,
) -> Result<(T, Matrix<T>)> {
    memory_loss_with_prototypes(f_img, labels, &bank.prototypes())
}

/// Same as [`memory_loss`] but against an explicit prototype table, which is
/// how the training step consumes it (prototypes frozen before backward).
pub fn memory_loss_with_prototypes<T: Scalar>(
    f_img: &Matrix<T>,
    labels: &[u32],
    prototypes: &BTreeMap<u32, Vec<T>>,
) -> Result<(T, Matrix<T>)> {
    if f_img.rows() != labels.len() {
        return Err(DsnError::CountMismatch(format!(
            "{} labels for {} image rows",
            labels.len(),
            f_img.rows()
        )));
    }
    let mut grad = Matrix::zeros(f_img.rows(), f_img.cols());
    let mut total = T::zero();
    let mut contributing = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let Some(proto) = prototypes.get(&y) else {
            continue;
        };
        let u = f_img.row(i);
        let nu = norm(u);
        let np = norm(proto);
        if nu == T::zero() || np == T::zero() {
            return Err(DsnError::ZeroNorm("memory loss cosine"));
        }
        let mut d = T::zero();
        for (&a, &b) in u.iter().zip(proto) {
            d += a * b;
        }
        let c = d / (nu * np);
        total += -c;
        contributing += 1;
        // d(-cos)/du = (d/(nu^2)) * u/(nu*np) - p/(nu*np)
        let inv = T::one() / (nu * np);
        let s = d / (nu * nu);
        for ((g, &uv), &pv) in grad.row_mut(i).iter_mut().zip(u).zip(proto) {
            *g = (s * uv - pv) * inv;
        }
    }
    if contributing == 0 {
        return Ok((T::zero(), grad));
    }
    let inv_m = T::one() / T::from_f64_c(contributing as f64);
    grad.scale(inv_m);
    Ok((total * inv_m, grad))
}

/// Summed cross-entropy over seen-class logits. Gradient per row is
/// `softmax - onehot`.
pub fn cls_loss<T: Scalar>(logits: &Matrix<T>, labels: &[u32]) -> Result<(T, Matrix<T>)> {
    if logits.rows() != labels.len() {
        return Err(DsnError::CountMismatch(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let classes = logits.cols();
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(logits.rows(), classes);
    for (i, &label) in labels.iter().enumerate() {
        let y = label as usize;
        if y >= classes {
            return Err(DsnError::LabelOutOfRange { label: y, classes });
        }
        let row = logits.row(i);
        let (log_z, mx) = log_sum_exp(row);
        loss += log_z - row[y];
        let g = grad.row_mut(i);
        for (j, (&x, slot)) in row.iter().zip(g.iter_mut()).enumerate() {
            let q = (x - mx - (log_z - mx)).exp();
            *slot = if j == y { q - T::one() } else { q };
        }
    }
    Ok((loss, grad))
}

/// Soft-target cross-entropy against teacher distributions, summed over
/// rows. Gradient per row is `softmax - teacher`.
pub fn ask_loss<T: Scalar>(logits: &Matrix<T>, teacher: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    if logits.rows() != teacher.rows() || logits.cols() != teacher.cols() {
        return Err(DsnError::CountMismatch(format!(
            "logits {}x{} vs teacher {}x{}",
            logits.rows(),
            logits.cols(),
            teacher.rows(),
            teacher.cols()
        )));
    }
    let tol = T::from_f64_c(1e-8);
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let p = teacher.row(i);
        let row_sum: T = p.iter().copied().sum();
        if (row_sum - T::one()).abs() > tol {
            return Err(DsnError::TeacherRowNotNormalized {
                row: i,
                sum: row_sum.to_f64().unwrap_or(f64::NAN),
            });
        }
        let row = logits.row(i);
        let (log_z, mx) = log_sum_exp(row);
        let mut dot = T::zero();
        for (&pv, &x) in p.iter().zip(row) {
            dot += pv * x;
        }
        loss += log_z - dot;
        let g = grad.row_mut(i);
        for ((&x, &pv), slot) in row.iter().zip(p).zip(g.iter_mut()) {
            *slot = (x - mx - (log_z - mx)).exp() - pv;
        }
    }
    Ok((loss, grad))
}

/// Total objective: `l1 * cmcm + l2 * ml + l3 * (cls + ask)`.
pub fn total_loss<T: Scalar>(cmcm: T, ml: T, cls: T, ask: T, w: &LossWeights<T>) -> T {
    w.lambda1 * cmcm + w.lambda2 * ml + w.lambda3 * (cls + ask)
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> (T, T) {
    let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let z: T = row.iter().map(|&x| (x - mx).exp()).sum();
    (mx + z.ln(), mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    fn unit_rows(m: usize, d: usize, rng: &mut Rng) -> Matrix<f64> {
        let mut v = Matrix::from_fn(m, d, |_, _| rng.normal::<f64>());
        for i in 0..m {
            let n = norm(v.row(i));
            for x in v.row_mut(i) {
                *x /= n;
            }
        }
        v
    }

    /// Literal double-loop evaluation of the contrastive convention, with a
    /// loop-wise analytic gradient accumulated pair by pair.
    pub(crate) fn cmcm_brute_force(
        v: &Matrix<f64>,
        labels: &[u32],
        tau: f64,
    ) -> (f64, Matrix<f64>) {
        let m = v.rows();
        let mut loss = 0.0;
        let mut grad = Matrix::<f64>::zeros(m, v.cols());
        let dot = |a: usize, b: usize| {
            v.row(a).iter().zip(v.row(b)).map(|(x, y)| x * y).sum::<f64>()
        };
        for i in 0..m {
            let pos: Vec<usize> = (0..m)
                .filter(|&j| j != i && labels[j] == labels[i])
                .collect();
            assert!(!pos.is_empty());
            let z: f64 = (0..m)
                .filter(|&a| a != i)
                .map(|a| (dot(i, a) / tau).exp())
                .sum();
            for &p in &pos {
                loss += -((dot(i, p) / tau).exp() / z).ln() / pos.len() as f64;
            }
            // Gradient of anchor i's term, accumulated per pair.
            let inv_p = 1.0 / pos.len() as f64;
            for &p in &pos {
                for c in 0..v.cols() {
                    grad.set(p, c, grad.get(p, c) - inv_p / tau * v.get(i, c));
                    grad.set(i, c, grad.get(i, c) - inv_p / tau * v.get(p, c));
                }
            }
            for a in 0..m {
                if a == i {
                    continue;
                }
                let q = (dot(i, a) / tau).exp() / z;
                for c in 0..v.cols() {
                    grad.set(a, c, grad.get(a, c) + q / tau * v.get(i, c));
                    grad.set(i, c, grad.get(i, c) + q / tau * v.get(a, c));
                }
            }
        }
        (loss, grad)
    }

    #[test]
    fn cmcm_matches_double_loop_hand_case() {
        let mut rng = Rng::from_seed(2);
        let v = unit_rows(4, 8, &mut rng);
        let labels = [0u32, 0, 1, 1];
        let batch = ContrastiveBatch {
            vectors: &v,
            labels: &labels,
            tau: 0.07,
        };
        let (loss, grad) = cmcm_loss(&batch).unwrap();
        let (bl, bg) = cmcm_brute_force(&v, &labels, 0.07);
        assert!((loss - bl).abs() < 1e-10);
        for (a, b) in grad.data().iter().zip(bg.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn cmcm_identical_vectors_closed_form() {
        for m in [2usize, 4, 7] {
            let mut v = Matrix::<f64>::zeros(m, 3);
            for i in 0..m {
                v.set(i, 0, 1.0);
            }
            let labels = vec![5u32; m];
            let batch = ContrastiveBatch {
                vectors: &v,
                labels: &labels,
                tau: 0.07,
            };
            let (loss, _) = cmcm_loss(&batch).unwrap();
            let expect = m as f64 * ((m - 1) as f64).ln();
            assert!((loss - expect).abs() < 1e-10, "m = {m}");
        }
    }

    #[test]
    fn cmcm_permutation_symmetry() {
        let mut rng = Rng::from_seed(8);
        let v = unit_rows(6, 5, &mut rng);
        let labels = [0u32, 1, 0, 2, 1, 2];
        let (loss, _) = cmcm_loss(&ContrastiveBatch {
            vectors: &v,
            labels: &labels,
            tau: 0.1,
        })
        .unwrap();

        let perm = [3usize, 0, 5, 1, 4, 2];
        let vp = Matrix::from_fn(6, 5, |i, j| v.get(perm[i], j));
        let lp: Vec<u32> = perm.iter().map(|&i| labels[i]).collect();
        let (loss_p, _) = cmcm_loss(&ContrastiveBatch {
            vectors: &vp,
            labels: &lp,
            tau: 0.1,
        })
        .unwrap();
        assert!((loss - loss_p).abs() < 1e-10);
    }

    #[test]
    fn cmcm_nonnegative_on_seeded_batches() {
        for seed in 0..50 {
            let mut rng = Rng::from_seed(seed);
            let m = 2 + 2 * rng.below(7);
            let v = unit_rows(m, 6, &mut rng);
            let labels: Vec<u32> = (0..m).map(|i| (i / 2) as u32).collect();
            let (loss, _) = cmcm_loss(&ContrastiveBatch {
                vectors: &v,
                labels: &labels,
                tau: 0.07,
            })
            .unwrap();
            assert!(loss >= 0.0, "seed {seed}");
        }
    }

    #[test]
    fn cmcm_decreases_when_positive_similarity_rises() {
        // Two labels, four vectors on the circle; rotating one positive
        // toward its anchor (other dot products held fixed is approximated
        // by direct evaluation of both configurations).
        let build = |theta: f64| {
            let rows = [
                vec![1.0, 0.0],
                vec![theta.cos(), theta.sin()],
                vec![0.0, 1.0],
                vec![-1.0, 0.0],
            ];
            Matrix::from_rows(&rows).unwrap()
        };
        let labels = [0u32, 0, 1, 1];
        let eval = |theta: f64| {
            cmcm_loss(&ContrastiveBatch {
                vectors: &build(theta),
                labels: &labels,
                tau: 0.5,
            })
            .unwrap()
            .0
        };
        assert!(eval(0.3) < eval(0.6));
    }

    #[test]
    fn cmcm_empty_positive_set_is_error() {
        let v = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let labels = [0u32, 1];
        assert!(matches!(
            cmcm_loss(&ContrastiveBatch {
                vectors: &v,
                labels: &labels,
                tau: 0.07,
            }),
            Err(DsnError::EmptyPositiveSet(0))
        ));
    }

    #[test]
    fn memory_loss_identical_direction() {
        let f = Matrix::<f64>::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let mut protos = BTreeMap::new();
        protos.insert(0u32, vec![1.0, 1.0]);
        let (loss, _) = memory_loss_with_prototypes(&f, &[0], &protos).unwrap();
        assert!((loss + 1.0).abs() < 1e-12);
    }

    #[test]
    fn memory_loss_orthogonal() {
        let f = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let mut protos = BTreeMap::new();
        protos.insert(0u32, vec![0.0, 1.0]);
        let (loss, _) = memory_loss_with_prototypes(&f, &[0], &protos).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn memory_loss_empty_banks() {
        let f = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let protos = BTreeMap::new();
        let (loss, grad) = memory_loss_with_prototypes(&f, &[0, 1], &protos).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn memory_loss_bounded() {
        let mut rng = Rng::from_seed(13);
        for _ in 0..100 {
            let f = Matrix::from_fn(3, 4, |_, _| rng.normal::<f64>());
            let mut protos = BTreeMap::new();
            for c in 0..2u32 {
                protos.insert(c, (0..4).map(|_| rng.normal()).collect());
            }
            let labels = [0u32, 1, 2]; // label 2 has no prototype
            let (loss, _) = memory_loss_with_prototypes(&f, &labels, &protos).unwrap();
            assert!((-1.0..=1.0).contains(&loss));
        }
    }

    #[test]
    fn memory_loss_through_bank() {
        use crate::membank::MemoryBank;
        let mut bank = MemoryBank::<f64>::new(2, 2);
        let imgs = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        bank.update(&[2.0, 0.0], 0, &imgs, &[0]).unwrap();
        let f = Matrix::from_rows(&[vec![3.0, 0.0]]).unwrap();
        let (loss, _) = memory_loss(&f, &[0], &bank).unwrap();
        assert!((loss + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cls_uniform_and_sharp() {
        let logits = Matrix::<f64>::zeros(1, 4);
        let (loss, grad) = cls_loss(&logits, &[0]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        assert!((grad.get(0, 0) - (0.25 - 1.0)).abs() < 1e-12);

        let logits = Matrix::from_rows(&[vec![10.0, -10.0]]).unwrap();
        let (loss, _) = cls_loss(&logits, &[0]).unwrap();
        let expect = (-20.0f64).exp().ln_1p();
        assert!((loss - expect).abs() < 1e-15);
    }

    #[test]
    fn cls_sum_reduction_doubles() {
        let one = Matrix::<f64>::from_rows(&[vec![0.3, -0.7, 1.1]]).unwrap();
        let two = Matrix::from_rows(&[vec![0.3, -0.7, 1.1], vec![0.3, -0.7, 1.1]]).unwrap();
        let (l1, _) = cls_loss(&one, &[2]).unwrap();
        let (l2, _) = cls_loss(&two, &[2, 2]).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn cls_label_out_of_range() {
        let logits = Matrix::<f64>::zeros(1, 3);
        assert!(matches!(
            cls_loss(&logits, &[3]),
            Err(DsnError::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn ask_one_hot_reduces_to_cls() {
        let logits = Matrix::<f64>::from_rows(&[vec![0.2, -1.0, 0.5]]).unwrap();
        let teacher = Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        let (la, ga) = ask_loss(&logits, &teacher).unwrap();
        let (lc, gc) = cls_loss(&logits, &[1]).unwrap();
        assert!((la - lc).abs() < 1e-12);
        for (a, b) in ga.data().iter().zip(gc.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ask_uniform_teacher_zero_logits() {
        let n = 3;
        let c = 5;
        let logits = Matrix::<f64>::zeros(n, c);
        let teacher = Matrix::from_fn(n, c, |_, _| 1.0 / c as f64);
        let (loss, _) = ask_loss(&logits, &teacher).unwrap();
        assert!((loss - n as f64 * (c as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn ask_equals_entropy_at_match() {
        // When student softmax equals the teacher row, the loss is the sum
        // of teacher entropies.
        let p = [0.6f64, 0.3, 0.1];
        let logits = Matrix::from_rows(&[p.iter().map(|v| v.ln()).collect()]).unwrap();
        let teacher = Matrix::from_rows(&[p.to_vec()]).unwrap();
        let (loss, _) = ask_loss(&logits, &teacher).unwrap();
        let entropy: f64 = p.iter().map(|v| -v * v.ln()).sum();
        assert!((loss - entropy).abs() < 1e-12);
    }

    #[test]
    fn ask_rejects_unnormalized_teacher() {
        let logits = Matrix::<f64>::zeros(1, 2);
        let teacher = Matrix::from_rows(&[vec![0.7, 0.7]]).unwrap();
        assert!(matches!(
            ask_loss(&logits, &teacher),
            Err(DsnError::TeacherRowNotNormalized { .. })
        ));
    }

    #[test]
    fn total_loss_weighting() {
        let w = LossWeights::<f64>::new(0.0, 0.0, 1.0);
        assert_eq!(total_loss(9.0, 9.0, 2.0, 3.0, &w), 5.0);

        let w = LossWeights::<f64>::new(0.1, 1.0, 1.0);
        let t1 = total_loss(1.0, 2.0, 3.0, 4.0, &w);
        let w2 = LossWeights::<f64>::new(0.2, 2.0, 2.0);
        let t2 = total_loss(1.0, 2.0, 3.0, 4.0, &w2);
        assert!((t2 - 2.0 * t1).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Each loss against central differences on its immediate inputs.
        let mut rng = Rng::from_seed(17);
        let h = 1e-6;
        let rel = |a: f64, fd: f64| (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);

        // cmcm
        let v = unit_rows(6, 4, &mut rng);
        let labels = [0u32, 0, 1, 1, 2, 2];
        let (_, grad) = cmcm_loss(&ContrastiveBatch {
            vectors: &v,
            labels: &labels,
            tau: 0.07,
        })
        .unwrap();
        for idx in 0..v.rows() * v.cols() {
            let mut vp = v.clone();
            vp.data_mut()[idx] += h;
            let mut vm = v.clone();
            vm.data_mut()[idx] -= h;
            let lp = cmcm_loss(&ContrastiveBatch {
                vectors: &vp,
                labels: &labels,
                tau: 0.07,
            })
            .unwrap()
            .0;
            let lm = cmcm_loss(&ContrastiveBatch {
                vectors: &vm,
                labels: &labels,
                tau: 0.07,
            })
            .unwrap()
            .0;
            let fd = (lp - lm) / (2.0 * h);
            assert!(rel(grad.data()[idx], fd) < 1e-5, "cmcm entry {idx}");
        }

        // memory
        let f = Matrix::from_fn(3, 4, |_, _| rng.normal::<f64>());
        let mut protos = BTreeMap::new();
        protos.insert(0u32, (0..4).map(|_| rng.normal()).collect());
        protos.insert(1u32, (0..4).map(|_| rng.normal()).collect());
        let labels = [0u32, 1, 0];
        let (_, grad) = memory_loss_with_prototypes(&f, &labels, &protos).unwrap();
        for idx in 0..f.rows() * f.cols() {
            let mut fp = f.clone();
            fp.data_mut()[idx] += h;
            let mut fm = f.clone();
            fm.data_mut()[idx] -= h;
            let lp = memory_loss_with_prototypes(&fp, &labels, &protos).unwrap().0;
            let lm = memory_loss_with_prototypes(&fm, &labels, &protos).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!(rel(grad.data()[idx], fd) < 1e-5, "ml entry {idx}");
        }

        // cls and ask share the softmax-minus-target structure.
        let logits = Matrix::from_fn(4, 5, |_, _| rng.normal::<f64>());
        let labels = [0u32, 3, 2, 4];
        let (_, grad) = cls_loss(&logits, &labels).unwrap();
        let mut teacher = Matrix::from_fn(4, 5, |_, _| rng.uniform() + 0.1);
        for i in 0..4 {
            let s: f64 = teacher.row(i).iter().sum();
            for v in teacher.row_mut(i) {
                *v /= s;
            }
        }
        let (_, grad_ask) = ask_loss(&logits, &teacher).unwrap();
        for idx in 0..logits.rows() * logits.cols() {
            let mut lp = logits.clone();
            lp.data_mut()[idx] += h;
            let mut lm = logits.clone();
            lm.data_mut()[idx] -= h;
            let fd_cls = (cls_loss(&lp, &labels).unwrap().0 - cls_loss(&lm, &labels).unwrap().0)
                / (2.0 * h);
            assert!(rel(grad.data()[idx], fd_cls) < 1e-5, "cls entry {idx}");
            let fd_ask = (ask_loss(&lp, &teacher).unwrap().0
                - ask_loss(&lm, &teacher).unwrap().0)
                / (2.0 * h);
            assert!(rel(grad_ask.data()[idx], fd_ask) < 1e-5, "ask entry {idx}");
        }
    }
}
