//! The four-configuration ablation pipeline: one dataset and split, four
//! training runs toggling the contrastive and memory terms, each evaluated
//! with binary-code retrieval on the unseen categories.

use dsn_core::data::{generate_synthetic, make_zero_shot_split, SynthConfig};
use dsn_core::model::encode;
use dsn_core::numkit::Rng;
use dsn_core::retrieval::{evaluate, itq_fit, RetrievalMetric, RetrievalReport};
use dsn_core::trainer::{train, TrainConfig};
use dsn_core::{DsnError, Result};

// Stream ids continue the trainer's numbering (0 = data, 2..=5 trainer).
const STREAM_SPLIT: u64 = 1;
const STREAM_ITQ: u64 = 6;

pub const CONFIG_NAMES: [&str; 4] = ["baseline", "baseline+cmcm", "baseline+ml", "full"];

#[derive(Clone, Debug)]
pub struct AblationConfig {
    pub synth: SynthConfig,
    pub n_unseen: usize,
    pub train: TrainConfig,
    pub bits: usize,
    pub itq_iters: usize,
}

pub struct AblationOutcome {
    /// Reports in `CONFIG_NAMES` order.
    pub reports: Vec<RetrievalReport>,
}

/// Run all four configurations on one generated dataset and split.
pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationOutcome> {
    let (img, ske) = generate_synthetic::<f64>(&cfg.synth)?;
    let mut split_rng = Rng::with_stream(cfg.synth.seed, STREAM_SPLIT);
    let split = make_zero_shot_split(&img.categories(), cfg.n_unseen, &mut split_rng)?;

    let seen_img = img.restrict(&split.seen);
    let seen_ske = ske.restrict(&split.seen);
    let unseen_img = img.restrict(&split.unseen);
    let unseen_ske = ske.restrict(&split.unseen);

    let toggles = [(false, false), (true, false), (false, true), (true, true)];
    let mut reports = Vec::with_capacity(4);
    for (use_cmcm, use_ml) in toggles {
        let tcfg = TrainConfig {
            use_cmcm,
            use_ml,
            ..cfg.train.clone()
        };
        let out = train(&tcfg, &seen_img, &seen_ske, &split)?;
        // Zero-shot hygiene: the binary encoder is fit on seen-category
        // embeddings only, then applied to both unseen sides.
        let fit_embeddings = encode(&out.params, seen_img.features())?;
        let mut itq_rng = Rng::with_stream(tcfg.seed, STREAM_ITQ);
        let (itq, _) = itq_fit(&fit_embeddings, cfg.bits, cfg.itq_iters, &mut itq_rng)?;
        let report = evaluate(
            &out.params,
            &unseen_ske,
            &unseen_img,
            RetrievalMetric::Hamming,
            Some(&itq),
        )?;
        reports.push(report);
    }
    Ok(AblationOutcome { reports })
}

/// Aligned text table over the four reports plus pairwise ordering verdicts.
pub fn emit_ablation_table(reports: &[RetrievalReport]) -> Result<String> {
    if reports.len() != 4 {
        return Err(DsnError::CountMismatch(format!(
            "ablation table needs exactly 4 reports, got {}",
            reports.len()
        )));
    }
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16}{:<22}{:<22}\n",
        "config", "mAP@all", "Prec@100"
    ));
    for (name, r) in CONFIG_NAMES.iter().zip(reports) {
        out.push_str(&format!(
            "{:<16}{:<22}{:<22}\n",
            name, r.map_all, r.prec_at_100
        ));
    }
    out.push('\n');
    let map = |i: usize| reports[i].map_all;
    for (a, b) in [(3usize, 1usize), (3, 2), (1, 0), (2, 0)] {
        let verdict = if map(a) > map(b) {
            format!("{} > {}", CONFIG_NAMES[a], CONFIG_NAMES[b])
        } else if map(a) < map(b) {
            format!("{} < {}", CONFIG_NAMES[a], CONFIG_NAMES[b])
        } else {
            "tie".to_string()
        };
        out.push_str(&format!(
            "verdict {} vs {}: {}\n",
            CONFIG_NAMES[a], CONFIG_NAMES[b], verdict
        ));
    }
    Ok(out)
}
