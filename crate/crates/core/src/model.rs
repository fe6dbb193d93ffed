//! Trainable feature-level networks: a one-hidden-layer encoder, an
//! L2-normalized two-layer projection head, two linear classifier heads, and
//! a frozen affine-softmax teacher. Forward passes plus analytic gradients of
//! the composite objective (no autodiff).

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::atomic_write;
use crate::error::{DsnError, Result};
use crate::losses::{
    ask_loss, cls_loss, cmcm_loss, memory_loss_with_prototypes, total_loss, ContrastiveBatch,
    LossWeights,
};
use crate::numkit::{dot, norm, Matrix, Rng};
use crate::Scalar;

/// Output dimension of the projection head (the contrastive vectors).
pub const PROJ_DIM: usize = 128;

const CHECKPOINT_MAGIC: [u8; 4] = *b"DSNC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub d_in: usize,
    pub hidden: usize,
    pub d_emb: usize,
    pub proj_hidden: usize,
    pub c_seen: usize,
    pub c_teacher: usize,
}

/// All trainable parameters. Weight matrices are stored `out x in`; biases
/// are `1 x out` rows. Declared (and serialized) order: w1, b1, w2, b2, p1,
/// c1, p2, c2, alpha, beta, gamma, delta.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub dims: ModelDims,
    pub w1: Matrix<T>,
    pub b1: Matrix<T>,
    pub w2: Matrix<T>,
    pub b2: Matrix<T>,
    pub p1: Matrix<T>,
    pub c1: Matrix<T>,
    pub p2: Matrix<T>,
    pub c2: Matrix<T>,
    pub alpha: Matrix<T>,
    pub beta: Matrix<T>,
    pub gamma: Matrix<T>,
    pub delta: Matrix<T>,
}

/// Per-parameter gradients, mirroring [`ModelParams`] shapes exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle<T> {
    pub w1: Matrix<T>,
    pub b1: Matrix<T>,
    pub w2: Matrix<T>,
    pub b2: Matrix<T>,
    pub p1: Matrix<T>,
    pub c1: Matrix<T>,
    pub p2: Matrix<T>,
    pub c2: Matrix<T>,
    pub alpha: Matrix<T>,
    pub beta: Matrix<T>,
    pub gamma: Matrix<T>,
    pub delta: Matrix<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// He-style initialization: Gaussian with scale sqrt(2 / fan_in), biases
    /// zero. Draw order is fixed (w1, w2, p1, p2, alpha, gamma).
    pub fn init(dims: ModelDims, rng: &mut Rng) -> Self {
        let he = |rows: usize, cols: usize, rng: &mut Rng| {
            let scale = T::from_f64_c((2.0 / cols as f64).sqrt());
            Matrix::from_fn(rows, cols, |_, _| rng.normal::<T>() * scale)
        };
        let w1 = he(dims.hidden, dims.d_in, rng);
        let w2 = he(dims.d_emb, dims.hidden, rng);
        let p1 = he(dims.proj_hidden, dims.d_emb, rng);
        let p2 = he(PROJ_DIM, dims.proj_hidden, rng);
        let alpha = he(dims.c_seen, dims.d_emb, rng);
        let gamma = he(dims.c_teacher, dims.d_emb, rng);
        Self {
            b1: Matrix::zeros(1, dims.hidden),
            b2: Matrix::zeros(1, dims.d_emb),
            c1: Matrix::zeros(1, dims.proj_hidden),
            c2: Matrix::zeros(1, PROJ_DIM),
            beta: Matrix::zeros(1, dims.c_seen),
            delta: Matrix::zeros(1, dims.c_teacher),
            w1,
            w2,
            p1,
            p2,
            alpha,
            gamma,
            dims,
        }
    }

    pub fn tensors(&self) -> [&Matrix<T>; 12] {
        [
            &self.w1, &self.b1, &self.w2, &self.b2, &self.p1, &self.c1, &self.p2, &self.c2,
            &self.alpha, &self.beta, &self.gamma, &self.delta,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 12] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.p1,
            &mut self.c1,
            &mut self.p2,
            &mut self.c2,
            &mut self.alpha,
            &mut self.beta,
            &mut self.gamma,
            &mut self.delta,
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = &self.dims;
        let mut buf = Vec::new();
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [
            d.d_in,
            d.hidden,
            d.d_emb,
            d.proj_hidden,
            PROJ_DIM,
            d.c_seen,
            d.c_teacher,
        ] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for t in self.tensors() {
            for &x in t.data() {
                buf.extend_from_slice(&x.to_f64().expect("finite parameter").to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take4 = |pos: &mut usize, what: &'static str| -> Result<[u8; 4]> {
            if *pos + 4 > bytes.len() {
                return Err(DsnError::Truncated(what));
            }
            let mut out = [0u8; 4];
            out.copy_from_slice(&bytes[*pos..*pos + 4]);
            *pos += 4;
            Ok(out)
        };
        let mut pos = 0usize;
        let magic = take4(&mut pos, "checkpoint magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(DsnError::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let version = u32::from_le_bytes(take4(&mut pos, "checkpoint version")?);
        if version != CHECKPOINT_VERSION {
            return Err(DsnError::UnsupportedVersion(version));
        }
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = u32::from_le_bytes(take4(&mut pos, "checkpoint dims")?) as usize;
        }
        if dims[4] != PROJ_DIM {
            return Err(DsnError::CountMismatch(format!(
                "checkpoint projection dim {} != {}",
                dims[4], PROJ_DIM
            )));
        }
        let md = ModelDims {
            d_in: dims[0],
            hidden: dims[1],
            d_emb: dims[2],
            proj_hidden: dims[3],
            c_seen: dims[5],
            c_teacher: dims[6],
        };
        let shapes = [
            (md.hidden, md.d_in),
            (1, md.hidden),
            (md.d_emb, md.hidden),
            (1, md.d_emb),
            (md.proj_hidden, md.d_emb),
            (1, md.proj_hidden),
            (PROJ_DIM, md.proj_hidden),
            (1, PROJ_DIM),
            (md.c_seen, md.d_emb),
            (1, md.c_seen),
            (md.c_teacher, md.d_emb),
            (1, md.c_teacher),
        ];
        let mut mats = Vec::with_capacity(12);
        for (rows, cols) in shapes {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                if pos + 8 > bytes.len() {
                    return Err(DsnError::Truncated("checkpoint payload"));
                }
                let mut b = [0u8; 8];
                b.copy_from_slice(&bytes[pos..pos + 8]);
                pos += 8;
                data.push(T::from_f64_c(f64::from_le_bytes(b)));
            }
            mats.push(Matrix::from_vec(rows, cols, data)?);
        }
        if pos != bytes.len() {
            return Err(DsnError::TrailingData);
        }
        let mut it = mats.into_iter();
        Ok(Self {
            dims: md,
            w1: it.next().unwrap(),
            b1: it.next().unwrap(),
            w2: it.next().unwrap(),
            b2: it.next().unwrap(),
            p1: it.next().unwrap(),
            c1: it.next().unwrap(),
            p2: it.next().unwrap(),
            c2: it.next().unwrap(),
            alpha: it.next().unwrap(),
            beta: it.next().unwrap(),
            gamma: it.next().unwrap(),
            delta: it.next().unwrap(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl<T: Scalar> GradientBundle<T> {
    pub fn zeros(dims: &ModelDims) -> Self {
        Self {
            w1: Matrix::zeros(dims.hidden, dims.d_in),
            b1: Matrix::zeros(1, dims.hidden),
            w2: Matrix::zeros(dims.d_emb, dims.hidden),
            b2: Matrix::zeros(1, dims.d_emb),
            p1: Matrix::zeros(dims.proj_hidden, dims.d_emb),
            c1: Matrix::zeros(1, dims.proj_hidden),
            p2: Matrix::zeros(PROJ_DIM, dims.proj_hidden),
            c2: Matrix::zeros(1, PROJ_DIM),
            alpha: Matrix::zeros(dims.c_seen, dims.d_emb),
            beta: Matrix::zeros(1, dims.c_seen),
            gamma: Matrix::zeros(dims.c_teacher, dims.d_emb),
            delta: Matrix::zeros(1, dims.c_teacher),
        }
    }

    pub fn tensors(&self) -> [&Matrix<T>; 12] {
        [
            &self.w1, &self.b1, &self.w2, &self.b2, &self.p1, &self.c1, &self.p2, &self.c2,
            &self.alpha, &self.beta, &self.gamma, &self.delta,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 12] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.p1,
            &mut self.c1,
            &mut self.p2,
            &mut self.c2,
            &mut self.alpha,
            &mut self.beta,
            &mut self.gamma,
            &mut self.delta,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Embed raw features: `relu(x W1^T + b1) W2^T + b2`.
pub fn encode<T: Scalar>(p: &ModelParams<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    Ok(encode_cached(p, x)?.f)
}

struct EncCache<T> {
    h_pre: Matrix<T>,
    h: Matrix<T>,
    f: Matrix<T>,
}

fn encode_cached<T: Scalar>(p: &ModelParams<T>, x: &Matrix<T>) -> Result<EncCache<T>> {
    if x.cols() != p.dims.d_in {
        return Err(DsnError::DimMismatch {
            context: "encode input",
            expected: p.dims.d_in,
            got: x.cols(),
        });
    }
    let mut h_pre = x.matmul_nt(&p.w1);
    h_pre.add_row_broadcast(p.b1.row(0));
    let h = h_pre.map(|v| v.max(T::zero()));
    let mut f = h.matmul_nt(&p.w2);
    f.add_row_broadcast(p.b2.row(0));
    Ok(EncCache { h_pre, h, f })
}

/// Map embeddings to unit-norm contrastive vectors through the two-layer
/// projection head. A zero pre-normalization row is a hard error.
pub fn project<T: Scalar>(p: &ModelParams<T>, f: &Matrix<T>) -> Result<Matrix<T>> {
    Ok(project_cached(p, f)?.v)
}

struct ProjCache<T> {
    q_pre: Matrix<T>,
    q: Matrix<T>,
    norms: Vec<T>,
    v: Matrix<T>,
}

fn project_cached<T: Scalar>(p: &ModelParams<T>, f: &Matrix<T>) -> Result<ProjCache<T>> {
    if f.cols() != p.dims.d_emb {
        return Err(DsnError::DimMismatch {
            context: "project input",
            expected: p.dims.d_emb,
            got: f.cols(),
        });
    }
    let mut q_pre = f.matmul_nt(&p.p1);
    q_pre.add_row_broadcast(p.c1.row(0));
    let q = q_pre.map(|v| v.max(T::zero()));
    let mut z = q.matmul_nt(&p.p2);
    z.add_row_broadcast(p.c2.row(0));

    let mut norms = Vec::with_capacity(z.rows());
    let mut v = z.clone();
    for i in 0..z.rows() {
        let n = norm(z.row(i));
        if n == T::zero() {
            return Err(DsnError::ZeroNorm("projection row"));
        }
        for x in v.row_mut(i) {
            *x = *x / n;
        }
        norms.push(n);
    }
    Ok(ProjCache { q_pre, q, norms, v })
}

/// Feature-space augmentation: Gaussian jitter of the given strength, then
/// each coordinate independently zeroed with probability 0.1.
pub fn augment<T: Scalar>(x: &Matrix<T>, rng: &mut Rng, strength: T) -> Matrix<T> {
    augment_with(x, rng, strength, 0.1)
}

/// [`augment`] with an explicit masking probability (tests force it to 0).
pub fn augment_with<T: Scalar>(
    x: &Matrix<T>,
    rng: &mut Rng,
    strength: T,
    mask_prob: f64,
) -> Matrix<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += strength * rng.normal::<T>();
    }
    for v in out.data_mut() {
        if rng.uniform() < mask_prob {
            *v = T::zero();
        }
    }
    out
}

/// Seen-class logits `f alpha^T + beta` (no softmax).
pub fn classify_seen<T: Scalar>(p: &ModelParams<T>, f: &Matrix<T>) -> Result<Matrix<T>> {
    affine_head(f, &p.alpha, &p.beta, "classify_seen input", p.dims.d_emb)
}

/// Teacher-space logits `f gamma^T + delta` (no softmax).
pub fn classify_teacher_space<T: Scalar>(p: &ModelParams<T>, f: &Matrix<T>) -> Result<Matrix<T>> {
    affine_head(f, &p.gamma, &p.delta, "classify_teacher input", p.dims.d_emb)
}

fn affine_head<T: Scalar>(
    f: &Matrix<T>,
    w: &Matrix<T>,
    b: &Matrix<T>,
    context: &'static str,
    d_emb: usize,
) -> Result<Matrix<T>> {
    if f.cols() != d_emb {
        return Err(DsnError::DimMismatch {
            context,
            expected: d_emb,
            got: f.cols(),
        });
    }
    let mut logits = f.matmul_nt(w);
    logits.add_row_broadcast(b.row(0));
    Ok(logits)
}

/// Frozen affine-softmax teacher over raw input features. Parameters are
/// drawn once from the run seed and never updated.
#[derive(Clone, Debug)]
pub struct TeacherModel<T> {
    pub weights: Matrix<T>,
    pub bias: Matrix<T>,
}

impl<T: Scalar> TeacherModel<T> {
    pub fn init(d_in: usize, classes: usize, rng: &mut Rng) -> Self {
        let scale = T::from_f64_c((1.0 / d_in as f64).sqrt());
        Self {
            weights: Matrix::from_fn(classes, d_in, |_, _| rng.normal::<T>() * scale),
            bias: Matrix::zeros(1, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    /// Softmax of the frozen affine map; rows sum to 1.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.weights.cols() {
            return Err(DsnError::DimMismatch {
                context: "teacher input",
                expected: self.weights.cols(),
                got: x.cols(),
            });
        }
        let mut logits = x.matmul_nt(&self.weights);
        logits.add_row_broadcast(self.bias.row(0));
        for i in 0..logits.rows() {
            let row = logits.row_mut(i);
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v = *v / z;
            }
        }
        Ok(logits)
    }
}

/// Augmented contrastive views: two views per sample, image block first,
/// rows aligned with `labels`.
#[derive(Clone, Debug)]
pub struct AugmentedViews<T> {
    pub inputs: Matrix<T>,
    pub labels: Vec<u32>,
}

/// Everything the composite loss consumes for one step. Prototypes and
/// teacher distributions are constants: no gradient flows into them.
#[derive(Clone, Debug)]
pub struct TrainBatch<T> {
    pub x_img: Matrix<T>,
    pub x_ske: Matrix<T>,
    /// Image-row category ids (prototype lookup).
    pub y_img: Vec<u32>,
    /// Class indices in `[0, c_seen)` for all rows, image block then sketch block.
    pub class_idx: Vec<u32>,
    pub teacher_probs: Matrix<T>,
    pub views: Option<AugmentedViews<T>>,
    pub prototypes: BTreeMap<u32, Vec<T>>,
    pub tau: T,
}

/// Component values of the composite objective for one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossParts<T> {
    pub cmcm: T,
    pub ml: T,
    pub cls: T,
    pub ask: T,
    pub total: T,
}

/// Loss value only (used by finite-difference checks and logging).
pub fn forward_loss<T: Scalar>(
    p: &ModelParams<T>,
    batch: &TrainBatch<T>,
    w: &LossWeights<T>,
) -> Result<LossParts<T>> {
    Ok(composite(p, batch, w, false)?.0)
}

/// Composite loss and analytic gradients for every parameter.
pub fn backward<T: Scalar>(
    p: &ModelParams<T>,
    batch: &TrainBatch<T>,
    w: &LossWeights<T>,
) -> Result<(LossParts<T>, GradientBundle<T>)> {
    let (parts, grads) = composite(p, batch, w, true)?;
    Ok((parts, grads.expect("gradients requested")))
}

fn composite<T: Scalar>(
    p: &ModelParams<T>,
    batch: &TrainBatch<T>,
    w: &LossWeights<T>,
    with_grad: bool,
) -> Result<(LossParts<T>, Option<GradientBundle<T>>)> {
    let zero = T::zero();
    let n_img = batch.x_img.rows();
    let n_all = n_img + batch.x_ske.rows();
    if batch.class_idx.len() != n_all {
        return Err(DsnError::CountMismatch(format!(
            "{} class indices for {} rows",
            batch.class_idx.len(),
            n_all
        )));
    }

    let mut grads = with_grad.then(|| GradientBundle::zeros(&p.dims));
    let mut parts = LossParts {
        cmcm: zero,
        ml: zero,
        cls: zero,
        ask: zero,
        total: zero,
    };

    let use_dl = w.lambda3 != zero;
    let use_ml = w.lambda2 != zero;
    let use_cmcm = w.lambda1 != zero && batch.views.is_some();

    // Clean forward feeds the classifier heads and the memory loss.
    if use_dl || use_ml {
        let x_all = Matrix::vstack(&[&batch.x_img, &batch.x_ske]);
        let enc = encode_cached(p, &x_all)?;
        let mut g_f_acc = Matrix::zeros(n_all, p.dims.d_emb);

        if use_dl {
            let logits_s = classify_seen(p, &enc.f)?;
            let (cls, g_s) = cls_loss(&logits_s, &batch.class_idx)?;
            parts.cls = cls;
            let logits_t = classify_teacher_space(p, &enc.f)?;
            let (ask, g_t) = ask_loss(&logits_t, &batch.teacher_probs)?;
            parts.ask = ask;

            if let Some(g) = grads.as_mut() {
                let mut d_alpha = g_s.matmul_tn(&enc.f);
                d_alpha.scale(w.lambda3);
                g.alpha.add_assign(&d_alpha);
                for (acc, v) in g.beta.row_mut(0).iter_mut().zip(g_s.col_sums()) {
                    *acc += w.lambda3 * v;
                }
                let mut d_gamma = g_t.matmul_tn(&enc.f);
                d_gamma.scale(w.lambda3);
                g.gamma.add_assign(&d_gamma);
                for (acc, v) in g.delta.row_mut(0).iter_mut().zip(g_t.col_sums()) {
                    *acc += w.lambda3 * v;
                }
                let mut from_s = g_s.matmul(&p.alpha);
                from_s.scale(w.lambda3);
                g_f_acc.add_assign(&from_s);
                let mut from_t = g_t.matmul(&p.gamma);
                from_t.scale(w.lambda3);
                g_f_acc.add_assign(&from_t);
            }
        }

        if use_ml {
            let mut f_img = Matrix::zeros(n_img, p.dims.d_emb);
            for i in 0..n_img {
                f_img.row_mut(i).copy_from_slice(enc.f.row(i));
            }
            let (ml, g_ml) =
                memory_loss_with_prototypes(&f_img, &batch.y_img, &batch.prototypes)?;
            parts.ml = ml;
            if grads.is_some() {
                for i in 0..n_img {
                    for (acc, &v) in g_f_acc.row_mut(i).iter_mut().zip(g_ml.row(i)) {
                        *acc += w.lambda2 * v;
                    }
                }
            }
        }

        if let Some(g) = grads.as_mut() {
            encoder_backward(p, &x_all, &enc, &g_f_acc, g);
        }
    }

    // Contrastive path runs on the augmented views only.
    if use_cmcm {
        let views = batch.views.as_ref().unwrap();
        let enc = encode_cached(p, &views.inputs)?;
        let proj = project_cached(p, &enc.f)?;
        let (cmcm, g_v) = cmcm_loss(&ContrastiveBatch {
            vectors: &proj.v,
            labels: &views.labels,
            tau: batch.tau,
        })?;
        parts.cmcm = cmcm;

        if let Some(g) = grads.as_mut() {
            // Through the row normalization: g_z = (g_v - (g_v . v) v) / |z|.
            let m = proj.v.rows();
            let mut g_z = Matrix::zeros(m, PROJ_DIM);
            for i in 0..m {
                let gv = g_v.row(i);
                let vi = proj.v.row(i);
                let gdotv = dot(gv, vi);
                let inv_n = w.lambda1 / proj.norms[i];
                for ((slot, &gx), &vx) in g_z.row_mut(i).iter_mut().zip(gv).zip(vi) {
                    *slot = (gx - gdotv * vx) * inv_n;
                }
            }
            g.p2.add_assign(&g_z.matmul_tn(&proj.q));
            for (acc, v) in g.c2.row_mut(0).iter_mut().zip(g_z.col_sums()) {
                *acc += v;
            }
            let g_q = g_z.matmul(&p.p2);
            let mut g_q_pre = g_q;
            for (slot, &pre) in g_q_pre.data_mut().iter_mut().zip(proj.q_pre.data()) {
                if pre <= T::zero() {
                    *slot = T::zero();
                }
            }
            g.p1.add_assign(&g_q_pre.matmul_tn(&enc.f));
            for (acc, v) in g.c1.row_mut(0).iter_mut().zip(g_q_pre.col_sums()) {
                *acc += v;
            }
            let g_f_aug = g_q_pre.matmul(&p.p1);
            encoder_backward(p, &views.inputs, &enc, &g_f_aug, g);
        }
    }

    parts.total = total_loss(parts.cmcm, parts.ml, parts.cls, parts.ask, w);
    Ok((parts, grads))
}

fn encoder_backward<T: Scalar>(
    p: &ModelParams<T>,
    x: &Matrix<T>,
    cache: &EncCache<T>,
    g_f: &Matrix<T>,
    g: &mut GradientBundle<T>,
) {
    g.w2.add_assign(&g_f.matmul_tn(&cache.h));
    for (acc, v) in g.b2.row_mut(0).iter_mut().zip(g_f.col_sums()) {
        *acc += v;
    }
    let g_h = g_f.matmul(&p.w2);
    let mut g_h_pre = g_h;
    for (slot, &pre) in g_h_pre.data_mut().iter_mut().zip(cache.h_pre.data()) {
        if pre <= T::zero() {
            *slot = T::zero();
        }
    }
    g.w1.add_assign(&g_h_pre.matmul_tn(x));
    for (acc, v) in g.b1.row_mut(0).iter_mut().zip(g_h_pre.col_sums()) {
        *acc += v;
    }
}
