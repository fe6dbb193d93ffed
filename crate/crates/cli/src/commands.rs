//! Subcommand implementations. Every command validates its paths before any
//! compute, stages outputs in memory, and writes them atomically at the end,
//! so no failure leaves a partial file behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;

use dsn_core::data::{
    atomic_write, generate_synthetic, load_features, load_features_csv, load_split,
    make_zero_shot_split, save_features, save_split, FeatureSet, Modality,
};
use dsn_core::model::encode;
use dsn_core::numkit::Rng;
use dsn_core::retrieval::{
    evaluate, itq_encode, itq_fit, similarity_matrix, similarity_matrix_csv, RetrievalMetric,
};
use dsn_core::trainer::train;
use dsn_core::{ModelParams64, Result as CoreResult};

use crate::ablation::{emit_ablation_table, run_ablation, AblationConfig, CONFIG_NAMES};
use crate::config::{keysets, OverrideArgs, Params, Source};
use crate::CliError;

const STREAM_SPLIT: u64 = 1;
const STREAM_ITQ: u64 = 6;

type CliResult<T> = Result<T, CliError>;

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output path for the image feature file.
    #[arg(long)]
    pub out_images: PathBuf,
    /// Output path for the sketch feature file.
    #[arg(long)]
    pub out_sketches: PathBuf,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Output path for the split file.
    #[arg(long)]
    pub out: PathBuf,
    /// Take the category universe from a feature file instead of 0..categories.
    #[arg(long)]
    pub from_features: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Image feature file (.dsnf, or .csv imported as images).
    #[arg(long)]
    pub images: PathBuf,
    /// Sketch feature file (.dsnf, or .csv imported as sketches).
    #[arg(long)]
    pub sketches: PathBuf,
    /// Zero-shot split file.
    #[arg(long)]
    pub split: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Output training-log CSV path.
    #[arg(long)]
    pub out_log: PathBuf,
    /// Optional memory-bank snapshot CSV.
    #[arg(long)]
    pub bank_out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Query sketch features.
    #[arg(long)]
    pub queries: PathBuf,
    /// Gallery image features.
    #[arg(long)]
    pub gallery: PathBuf,
    /// Features the ITQ encoder is fit on (required for hamming).
    #[arg(long)]
    pub fit_features: Option<PathBuf>,
    /// Output report CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Args, Debug)]
pub struct ItqArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Features the ITQ encoder is fit on.
    #[arg(long)]
    pub fit_features: PathBuf,
    /// Features to encode (defaults to the fit set).
    #[arg(long)]
    pub encode_features: Option<PathBuf>,
    /// Output codes CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Args, Debug)]
pub struct SimmatArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sketch features.
    #[arg(long)]
    pub sketches: PathBuf,
    /// Image features.
    #[arg(long)]
    pub images: PathBuf,
    /// Output similarity-matrix CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Output comparison-table path.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for the four per-configuration report CSVs.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

fn require_input(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "input path does not exist: {}",
            path.display()
        )))
    }
}

fn require_out_dir(path: &Path) -> CliResult<()> {
    match path.parent() {
        None => Ok(()),
        Some(p) if p.as_os_str().is_empty() || p.is_dir() => Ok(()),
        Some(p) => Err(CliError::Config(format!(
            "output directory does not exist: {}",
            p.display()
        ))),
    }
}

fn load_features_auto(path: &Path, modality: Modality) -> CoreResult<FeatureSet<f64>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        load_features_csv(path, modality)
    } else {
        load_features(path)
    }
}

fn metadata_block(
    command: &str,
    cfg: &[(String, String, Source)],
    extra: &[(String, String)],
) -> String {
    let mut out = format!("# dsn-{command} v1\n");
    for (k, v, s) in cfg {
        let _ = writeln!(out, "# cfg {k}={v} source={s}");
    }
    for (k, v) in extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    out
}

fn print_block(block: &str, written: &[&Path]) {
    print!("{block}");
    for p in written {
        println!("wrote {}", p.display());
    }
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let params = Params::resolve(&args.overrides)?;
    require_out_dir(&args.out_images)?;
    require_out_dir(&args.out_sketches)?;
    let cfg = params.synth_config();
    let (img, ske) = generate_synthetic::<f64>(&cfg)?;
    save_features(&img, &args.out_images)?;
    save_features(&ske, &args.out_sketches)?;
    let block = metadata_block(
        "synth",
        &params.provenance(keysets::SYNTH),
        &[("rng".into(), Rng::ALGORITHM.into())],
    );
    print_block(&block, &[&args.out_images, &args.out_sketches]);
    Ok(())
}

pub fn cmd_split(args: &SplitArgs) -> CliResult<()> {
    let params = Params::resolve(&args.overrides)?;
    require_out_dir(&args.out)?;
    let universe = match &args.from_features {
        Some(path) => {
            require_input(path)?;
            load_features_auto(path, Modality::Image)?.categories()
        }
        None => (0..params.categories.value as u32).collect(),
    };
    let mut rng = Rng::with_stream(params.seed.value, STREAM_SPLIT);
    let split = make_zero_shot_split(&universe, params.unseen.value, &mut rng)?;
    save_split(&split, &args.out)?;
    let block = metadata_block(
        "split",
        &params.provenance(keysets::SPLIT),
        &[("rng".into(), Rng::ALGORITHM.into())],
    );
    print_block(&block, &[&args.out]);
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let params = Params::resolve(&args.overrides)?;
    for p in [&args.images, &args.sketches, &args.split] {
        require_input(p)?;
    }
    require_out_dir(&args.out_checkpoint)?;
    require_out_dir(&args.out_log)?;
    if let Some(p) = &args.bank_out {
        require_out_dir(p)?;
    }

    let img = load_features_auto(&args.images, Modality::Image)?;
    let ske = load_features_auto(&args.sketches, Modality::Sketch)?;
    let split = load_split(&args.split)?;
    let seen_img = img.restrict(&split.seen);
    let seen_ske = ske.restrict(&split.seen);
    let cfg = params.train_config();
    let out = train(&cfg, &seen_img, &seen_ske, &split)?;

    let mut extra: Vec<(String, String)> = out.log.conventions.clone();
    extra.push(("seen_categories".into(), split.seen.len().to_string()));
    let mut log_text = metadata_block("train-log", &params.provenance(keysets::TRAIN), &extra);
    log_text.push_str(&out.log.csv_records());

    out.params.save(&args.out_checkpoint)?;
    atomic_write(&args.out_log, log_text.as_bytes())?;
    let mut written: Vec<&Path> = vec![&args.out_checkpoint, &args.out_log];
    if let Some(bank_path) = &args.bank_out {
        atomic_write(bank_path, out.bank.export_csv().as_bytes())?;
        written.push(bank_path);
    }
    let block = metadata_block("train", &params.provenance(keysets::TRAIN), &extra);
    print_block(&block, &written);
    Ok(())
}

fn parse_metric(name: &str) -> CliResult<RetrievalMetric> {
    match name {
        "cosine" => Ok(RetrievalMetric::Cosine),
        "hamming" => Ok(RetrievalMetric::Hamming),
        other => Err(CliError::Config(format!(
            "unknown metric {other:?} (expected cosine or hamming)"
        ))),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let params = Params::resolve(&args.overrides)?;
    for p in [&args.checkpoint, &args.queries, &args.gallery] {
        require_input(p)?;
    }
    require_out_dir(&args.out)?;
    let metric = parse_metric(&params.metric.value)?;

    let model = ModelParams64::load(&args.checkpoint)?;
    let queries = load_features_auto(&args.queries, Modality::Sketch)?;
    let gallery = load_features_auto(&args.gallery, Modality::Image)?;

    let itq = match metric {
        RetrievalMetric::Cosine => None,
        RetrievalMetric::Hamming => {
            let fit_path = args.fit_features.as_ref().ok_or_else(|| {
                CliError::Config("--fit-features is required for hamming evaluation".into())
            })?;
            require_input(fit_path)?;
            let fit = load_features_auto(fit_path, Modality::Image)?;
            let embeddings = encode(&model, fit.features())?;
            let mut rng = Rng::with_stream(params.seed.value, STREAM_ITQ);
            let (itq, _) = itq_fit(
                &embeddings,
                params.bits.value,
                params.itq_iters.value,
                &mut rng,
            )?;
            Some(itq)
        }
    };

    let report = evaluate(&model, &queries, &gallery, metric, itq.as_ref())?;
    let mut text = metadata_block("eval", &params.provenance(keysets::EVAL), &[]);
    text.push_str(&report.to_csv());
    atomic_write(&args.out, text.as_bytes())?;
    print_block(
        &format!(
            "{}# result map_all={} prec100={}\n",
            metadata_block("eval", &params.provenance(keysets::EVAL), &[]),
            report.map_all,
            report.prec_at_100
        ),
        &[&args.out],
    );
    Ok(())
}

pub fn cmd_itq(args: &ItqArgs) -> CliResult<()> {
    let params = Params::resolve(&args.overrides)?;
    require_input(&args.checkpoint)?;
    require_input(&args.fit_features)?;
    if let Some(p) = &args.encode_features {
        require_input(p)?;
    }
    require_out_dir(&args.out)?;

    let model = ModelParams64::load(&args.checkpoint)?;
    let fit = load_features_auto(&args.fit_features, Modality::Image)?;
    let fit_embeddings = encode(&model, fit.features())?;
    let mut rng = Rng::with_stream(params.seed.value, STREAM_ITQ);
    let (itq, trace) = itq_fit(
        &fit_embeddings,
        params.bits.value,
        params.itq_iters.value,
        &mut rng,
    )?;

    let target = match &args.encode_features {
        Some(p) => load_features_auto(p, Modality::Image)?,
        None => fit,
    };
    let embeddings = encode(&model, target.features())?;
    let codes = itq_encode(&itq, &embeddings)?;

    let final_loss = trace.quant_loss.last().copied().unwrap_or(0.0);
    let extra = vec![
        ("quant_loss_final".into(), final_loss.to_string()),
        (
            "quant_loss_initial".into(),
            trace.quant_loss.first().copied().unwrap_or(0.0).to_string(),
        ),
    ];
    let mut text = metadata_block("itq-codes", &params.provenance(keysets::ITQ), &extra);
    text.push_str("index,label,code\n");
    for i in 0..codes.len() {
        let mut bits = String::with_capacity(codes.bits());
        for b in 0..codes.bits() {
            bits.push(if codes.get_bit(i, b) { '1' } else { '0' });
        }
        let _ = writeln!(text, "{},{},{}", i, target.labels()[i], bits);
    }
    atomic_write(&args.out, text.as_bytes())?;
    print_block(
        &metadata_block("itq", &params.provenance(keysets::ITQ), &extra),
        &[&args.out],
    );
    Ok(())
}

pub fn cmd_simmat(args: &SimmatArgs) -> CliResult<()> {
    let params = Params::resolve(&args.overrides)?;
    for p in [&args.checkpoint, &args.sketches, &args.images] {
        require_input(p)?;
    }
    require_out_dir(&args.out)?;

    let model = ModelParams64::load(&args.checkpoint)?;
    let sketches = load_features_auto(&args.sketches, Modality::Sketch)?;
    let images = load_features_auto(&args.images, Modality::Image)?;
    let (cats, m) = similarity_matrix(&model, &sketches, &images)?;

    let mut text = metadata_block("simmat", &params.provenance(&["seed"]), &[]);
    text.push_str(&similarity_matrix_csv(&cats, &m));
    atomic_write(&args.out, text.as_bytes())?;
    print_block(
        &metadata_block("simmat", &params.provenance(&["seed"]), &[]),
        &[&args.out],
    );
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> CliResult<()> {
    let params = Params::resolve(&args.overrides)?;
    require_out_dir(&args.out)?;
    if let Some(dir) = &args.report_dir {
        if !dir.is_dir() {
            return Err(CliError::Config(format!(
                "report directory does not exist: {}",
                dir.display()
            )));
        }
    }

    let cfg = AblationConfig {
        synth: params.synth_config(),
        n_unseen: params.unseen.value,
        train: params.train_config(),
        bits: params.bits.value,
        itq_iters: params.itq_iters.value,
    };
    let outcome = run_ablation(&cfg)?;

    let extra = vec![
        ("rng".into(), Rng::ALGORITHM.into()),
        (
            "loss_reduction".into(),
            "cmcm=sum cls=sum ask=sum ml=mean".into(),
        ),
    ];
    let cfg_rows = params.provenance(keysets::ABLATE);
    let mut table = metadata_block("ablation", &cfg_rows, &extra);
    table.push_str(&emit_ablation_table(&outcome.reports)?);
    atomic_write(&args.out, table.as_bytes())?;
    let mut written: Vec<PathBuf> = vec![args.out.clone()];

    if let Some(dir) = &args.report_dir {
        for (name, report) in CONFIG_NAMES.iter().zip(&outcome.reports) {
            let path = dir.join(format!("report_{}.csv", name.replace('+', "_")));
            let mut text = metadata_block("ablation-report", &cfg_rows, &[(
                "configuration".into(),
                (*name).into(),
            )]);
            text.push_str(&report.to_csv());
            atomic_write(&path, text.as_bytes())?;
            written.push(path);
        }
    }
    let refs: Vec<&Path> = written.iter().map(PathBuf::as_path).collect();
    print_block(&metadata_block("ablate", &cfg_rows, &extra), &refs);
    Ok(())
}
