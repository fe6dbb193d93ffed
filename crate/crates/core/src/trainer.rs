//! Batch sampling, Adam with per-step geometric learning-rate decay, and the
//! training loop composing all loss terms.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{FeatureSet, ZeroShotSplit};
use crate::error::{DsnError, Result};
use crate::losses::LossWeights;
use crate::membank::MemoryBank;
use crate::model::{
    augment, backward, encode, AugmentedViews, GradientBundle, ModelDims, ModelParams,
    TeacherModel, TrainBatch,
};
use crate::numkit::{Matrix, Rng};
use crate::Scalar;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

// Deterministic RNG stream ids per pipeline role.
const STREAM_MODEL_INIT: u64 = 2;
const STREAM_TEACHER_INIT: u64 = 3;
const STREAM_SAMPLING: u64 = 4;
const STREAM_AUGMENT: u64 = 5;

/// Training hyperparameters. Defaults: batch 96, 10 epochs, learning rate
/// 1e-4 decaying to 1e-7, temperature 0.07, bank capacity 10, loss weights
/// (0.1, 1, 1).
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub tau: f64,
    pub bank_capacity: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub augment_strength: f64,
    pub seed: u64,
    /// Ablation flag: contrastive term on/off.
    pub use_cmcm: bool,
    /// Ablation flag: memory bank and memory loss on/off.
    pub use_ml: bool,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub proj_hidden_dim: usize,
    pub teacher_classes: usize,
    /// Global-norm gradient clipping; `None` disables (the default).
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 96,
            epochs: 10,
            lr_initial: 1e-4,
            lr_final: 1e-7,
            tau: 0.07,
            bank_capacity: 10,
            lambda1: 0.1,
            lambda2: 1.0,
            lambda3: 1.0,
            augment_strength: 0.1,
            seed: 0,
            use_cmcm: true,
            use_ml: true,
            hidden_dim: 64,
            embed_dim: 64,
            proj_hidden_dim: 64,
            teacher_classes: 16,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(DsnError::InvalidConfig(
                "batch_size must be even and at least 2".into(),
            ));
        }
        if !(self.lr_initial > 0.0 && self.lr_final > 0.0) {
            return Err(DsnError::InvalidConfig(
                "learning rates must be positive".into(),
            ));
        }
        if self.lr_final > self.lr_initial {
            return Err(DsnError::InvalidConfig(
                "lr_final must not exceed lr_initial".into(),
            ));
        }
        if self.tau <= 0.0 {
            return Err(DsnError::InvalidConfig("tau must be positive".into()));
        }
        if self.bank_capacity < 1 {
            return Err(DsnError::InvalidConfig("k must be at least 1".into()));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("augment_strength", self.augment_strength),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DsnError::InvalidConfig(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        if self.hidden_dim < 1
            || self.embed_dim < 1
            || self.proj_hidden_dim < 1
            || self.teacher_classes < 2
        {
            return Err(DsnError::InvalidConfig(
                "network dimensions must be >= 1 (teacher_classes >= 2)".into(),
            ));
        }
        Ok(())
    }
}

/// Geometric interpolation from `lr_initial` (step 0) to `lr_final`
/// (step = total_steps).
pub fn lr_at(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    assert!(total_steps >= 1, "total_steps must be >= 1");
    assert!(step <= total_steps, "step beyond schedule");
    let frac = step as f64 / total_steps as f64;
    cfg.lr_initial * (cfg.lr_final / cfg.lr_initial).powf(frac)
}

/// Adam moment accumulators; shapes mirror the parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: GradientBundle<T>,
    pub v: GradientBundle<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(dims: &ModelDims) -> Self {
        Self {
            m: GradientBundle::zeros(dims),
            v: GradientBundle::zeros(dims),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Fails on non-finite gradients.
pub fn adam_step<T: Scalar>(
    params: &ModelParams<T>,
    grads: &GradientBundle<T>,
    state: &AdamState<T>,
    lr: f64,
) -> Result<(ModelParams<T>, AdamState<T>)> {
    if !grads.is_finite() {
        return Err(DsnError::NonFinite {
            what: "gradient",
            step: state.step as usize,
        });
    }
    let mut new_params = params.clone();
    let mut new_state = state.clone();
    new_state.step += 1;
    let t = new_state.step as i32;

    let b1 = T::from_f64_c(ADAM_BETA1);
    let b2 = T::from_f64_c(ADAM_BETA2);
    let eps = T::from_f64_c(ADAM_EPS);
    let lr = T::from_f64_c(lr);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);

    let p_ts = new_params.tensors_mut();
    let m_ts = new_state.m.tensors_mut();
    let v_ts = new_state.v.tensors_mut();
    let g_ts = grads.tensors();
    for (((p_t, m_t), v_t), g_t) in p_ts.into_iter().zip(m_ts).zip(v_ts).zip(g_ts) {
        let p = p_t.data_mut();
        let m = m_t.data_mut();
        let v = v_t.data_mut();
        let g = g_t.data();
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok((new_params, new_state))
}

/// Indices of one sampled batch: equally many images and sketches, where
/// each slot pairs an image and a sketch of the same category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub image_indices: Vec<usize>,
    pub sketch_indices: Vec<usize>,
}

/// Category-paired sampling with replacement. Every sampled sketch category
/// also appears among the sampled images (and vice versa), so the memory
/// bank's reference mean and every contrastive positive set are well-defined.
pub fn sample_batch<T: Scalar>(
    img: &FeatureSet<T>,
    ske: &FeatureSet<T>,
    rng: &mut Rng,
    batch_size: usize,
) -> Result<Batch> {
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(DsnError::InvalidConfig(
            "batch_size must be even and at least 2".into(),
        ));
    }
    if img.is_empty() || ske.is_empty() {
        return Err(DsnError::InvalidConfig(
            "both modalities must be nonempty".into(),
        ));
    }
    let cats_img = img.categories();
    let cats_ske = ske.categories();
    if cats_img != cats_ske {
        let only: Vec<u32> = cats_img.symmetric_difference(&cats_ske).copied().collect();
        return Err(DsnError::Pairing(format!(
            "categories present in only one modality: {only:?}"
        )));
    }
    if cats_img.len() < 2 {
        return Err(DsnError::InvalidConfig(
            "at least two categories required".into(),
        ));
    }

    let mut img_pool: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &y) in img.labels().iter().enumerate() {
        img_pool.entry(y).or_default().push(i);
    }
    let mut ske_pool: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &y) in ske.labels().iter().enumerate() {
        ske_pool.entry(y).or_default().push(i);
    }
    let cats: Vec<u32> = cats_img.into_iter().collect();

    let half = batch_size / 2;
    let mut image_indices = Vec::with_capacity(half);
    let mut sketch_indices = Vec::with_capacity(half);
    for _ in 0..half {
        let c = cats[rng.below(cats.len())];
        let ip = &img_pool[&c];
        let sp = &ske_pool[&c];
        image_indices.push(ip[rng.below(ip.len())]);
        sketch_indices.push(sp[rng.below(sp.len())]);
    }
    Ok(Batch {
        image_indices,
        sketch_indices,
    })
}

/// Per-step loss component record.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub l_cmcm: f64,
    pub l_ml: f64,
    pub l_cls: f64,
    pub l_ask: f64,
    pub total: f64,
}

/// Loss trace plus the fixed conventions a reader needs to interpret it.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub conventions: Vec<(String, String)>,
}

impl TrainLog {
    pub fn standard_conventions() -> Vec<(String, String)> {
        vec![
            ("rng".into(), Rng::ALGORITHM.into()),
            (
                "adam".into(),
                format!("beta1={ADAM_BETA1} beta2={ADAM_BETA2} eps={ADAM_EPS}"),
            ),
            (
                "loss_reduction".into(),
                "cmcm=sum cls=sum ask=sum ml=mean".into(),
            ),
            ("lr_schedule".into(), "per-step geometric".into()),
        ]
    }

    /// CSV body: header then one line per step.
    pub fn csv_records(&self) -> String {
        let mut out = String::from("step,lr,l_cmcm,l_ml,l_cls,l_ask,total\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step, r.lr, r.l_cmcm, r.l_ml, r.l_cls, r.l_ask, r.total
            );
        }
        out
    }
}

pub struct TrainOutput<T> {
    pub params: ModelParams<T>,
    pub teacher: TeacherModel<T>,
    pub bank: MemoryBank<T>,
    pub log: TrainLog,
}

/// Full training run. Datasets must already be restricted to the seen
/// categories of `split`. Deterministic: a seed fixes the whole trajectory.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    img: &FeatureSet<T>,
    ske: &FeatureSet<T>,
    split: &ZeroShotSplit,
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    if img.dim() != ske.dim() {
        return Err(DsnError::DimMismatch {
            context: "train modality dims",
            expected: img.dim(),
            got: ske.dim(),
        });
    }
    for fs in [img, ske] {
        if let Some(&bad) = fs.labels().iter().find(|l| !split.seen.contains(l)) {
            return Err(DsnError::InvalidConfig(format!(
                "training data contains non-seen category {bad}"
            )));
        }
    }

    let seen_sorted: Vec<u32> = split.seen.iter().copied().collect();
    let class_of: BTreeMap<u32, u32> = seen_sorted
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i as u32))
        .collect();

    let dims = ModelDims {
        d_in: img.dim(),
        hidden: cfg.hidden_dim,
        d_emb: cfg.embed_dim,
        proj_hidden: cfg.proj_hidden_dim,
        c_seen: seen_sorted.len(),
        c_teacher: cfg.teacher_classes,
    };

    let mut init_rng = Rng::with_stream(cfg.seed, STREAM_MODEL_INIT);
    let mut teacher_rng = Rng::with_stream(cfg.seed, STREAM_TEACHER_INIT);
    let mut sample_rng = Rng::with_stream(cfg.seed, STREAM_SAMPLING);
    let mut aug_rng = Rng::with_stream(cfg.seed, STREAM_AUGMENT);

    let mut params = ModelParams::<T>::init(dims, &mut init_rng);
    let teacher = TeacherModel::<T>::init(dims.d_in, dims.c_teacher, &mut teacher_rng);
    let mut bank = MemoryBank::<T>::new(cfg.bank_capacity, dims.d_emb);
    let mut adam = AdamState::<T>::new(&dims);
    let mut log = TrainLog {
        records: Vec::new(),
        conventions: TrainLog::standard_conventions(),
    };

    let half = cfg.batch_size / 2;
    let steps_per_epoch = (img.len().min(ske.len()) / half).max(1);
    let total_steps = cfg.epochs * steps_per_epoch;
    if total_steps == 0 {
        return Ok(TrainOutput {
            params,
            teacher,
            bank,
            log,
        });
    }

    let weights = LossWeights::new(
        T::from_f64_c(if cfg.use_cmcm { cfg.lambda1 } else { 0.0 }),
        T::from_f64_c(if cfg.use_ml { cfg.lambda2 } else { 0.0 }),
        T::from_f64_c(cfg.lambda3),
    );
    let strength = T::from_f64_c(cfg.augment_strength);

    for step in 0..total_steps {
        let lr = lr_at(cfg, step, total_steps);
        let idx = sample_batch(img, ske, &mut sample_rng, cfg.batch_size)?;

        let gather = |fs: &FeatureSet<T>, rows: &[usize]| {
            let mut m = Matrix::zeros(rows.len(), fs.dim());
            let mut y = Vec::with_capacity(rows.len());
            for (out, &r) in rows.iter().enumerate() {
                m.row_mut(out).copy_from_slice(fs.features().row(r));
                y.push(fs.labels()[r]);
            }
            (m, y)
        };
        let (x_img, y_img) = gather(img, &idx.image_indices);
        let (x_ske, y_ske) = gather(ske, &idx.sketch_indices);

        let class_idx: Vec<u32> = y_img
            .iter()
            .chain(&y_ske)
            .map(|c| class_of[c])
            .collect();
        let x_all = Matrix::vstack(&[&x_img, &x_ske]);
        let teacher_probs = teacher.predict(&x_all)?;

        // Two augmented views per sample feed the contrastive term.
        let views = if cfg.use_cmcm {
            let img_v1 = augment(&x_img, &mut aug_rng, strength);
            let img_v2 = augment(&x_img, &mut aug_rng, strength);
            let ske_v1 = augment(&x_ske, &mut aug_rng, strength);
            let ske_v2 = augment(&x_ske, &mut aug_rng, strength);
            let labels: Vec<u32> = y_img
                .iter()
                .chain(&y_img)
                .chain(&y_ske)
                .chain(&y_ske)
                .copied()
                .collect();
            Some(AugmentedViews {
                inputs: Matrix::vstack(&[&img_v1, &img_v2, &ske_v1, &ske_v2]),
                labels,
            })
        } else {
            None
        };

        // Bank update precedes the memory loss within the step; stored
        // embeddings are detached copies of the current forward pass.
        let prototypes = if cfg.use_ml {
            let f_img = encode(&params, &x_img)?;
            let f_ske = encode(&params, &x_ske)?;
            bank.update_batch(&f_ske, &y_ske, &f_img, &y_img)?;
            bank.prototypes()
        } else {
            BTreeMap::new()
        };

        let batch = TrainBatch {
            x_img,
            x_ske,
            y_img,
            class_idx,
            teacher_probs,
            views,
            prototypes,
            tau: T::from_f64_c(cfg.tau),
        };

        let (parts, mut grads) = backward(&params, &batch, &weights)?;
        if !parts.total.is_finite() {
            return Err(DsnError::NonFinite {
                what: "loss",
                step,
            });
        }
        if let Some(limit) = cfg.grad_clip {
            clip_global_norm(&mut grads, limit);
        }
        let (next_params, next_adam) = adam_step(&params, &grads, &adam, lr)?;
        params = next_params;
        adam = next_adam;

        log.records.push(StepRecord {
            step,
            lr,
            l_cmcm: parts.cmcm.to_f64().unwrap_or(f64::NAN),
            l_ml: parts.ml.to_f64().unwrap_or(f64::NAN),
            l_cls: parts.cls.to_f64().unwrap_or(f64::NAN),
            l_ask: parts.ask.to_f64().unwrap_or(f64::NAN),
            total: parts.total.to_f64().unwrap_or(f64::NAN),
        });
    }

    Ok(TrainOutput {
        params,
        teacher,
        bank,
        log,
    })
}

fn clip_global_norm<T: Scalar>(grads: &mut GradientBundle<T>, limit: f64) {
    let mut sq = T::zero();
    for t in grads.tensors() {
        for &g in t.data() {
            sq += g * g;
        }
    }
    let nrm = sq.sqrt();
    let limit = T::from_f64_c(limit);
    if nrm > limit && nrm > T::zero() {
        let s = limit / nrm;
        for t in grads.tensors_mut() {
            t.scale(s);
        }
    }
}
