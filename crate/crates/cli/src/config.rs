//! Run configuration: defaults mirroring the standard training setup, a
//! plain-text `key=value` config file, CLI flag overrides, and per-key
//! provenance recorded into every run's metadata.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use dsn_core::data::SynthConfig;
use dsn_core::trainer::TrainConfig;

use crate::CliError;

/// Where a configuration value came from. Precedence: flag > file > env > default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    Env,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::Env => "env",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Setting<V> {
    pub value: V,
    pub source: Source,
}

impl<V> Setting<V> {
    fn new(value: V) -> Self {
        Self {
            value,
            source: Source::Default,
        }
    }
}

/// Every recognized configuration key, in the order they are reported.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "categories",
    "dim",
    "samples",
    "gap",
    "image_noise",
    "sketch_noise",
    "unseen",
    "batch_size",
    "epochs",
    "lr_initial",
    "lr_final",
    "tau",
    "k",
    "lambda1",
    "lambda2",
    "lambda3",
    "augment_strength",
    "use_cmcm",
    "use_ml",
    "hidden",
    "embed",
    "proj_hidden",
    "teacher_classes",
    "grad_clip",
    "bits",
    "itq_iters",
    "metric",
];

/// CLI flag overrides; every flag mirrors a config-file key one-to-one.
#[derive(clap::Args, Clone, Debug, Default)]
pub struct OverrideArgs {
    /// Plain-text key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Samples per category per modality.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Norm of the fixed sketch/image offset vector.
    #[arg(long)]
    pub gap: Option<f64>,
    #[arg(long)]
    pub image_noise: Option<f64>,
    #[arg(long)]
    pub sketch_noise: Option<f64>,
    /// Unseen category count for zero-shot splits.
    #[arg(long)]
    pub unseen: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_initial: Option<f64>,
    #[arg(long)]
    pub lr_final: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Memory-bank capacity per category.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub augment_strength: Option<f64>,
    #[arg(long)]
    pub use_cmcm: Option<bool>,
    #[arg(long)]
    pub use_ml: Option<bool>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long)]
    pub proj_hidden: Option<usize>,
    #[arg(long)]
    pub teacher_classes: Option<usize>,
    /// Global-norm gradient clip; 0 disables.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Binary code length for ITQ.
    #[arg(long)]
    pub bits: Option<usize>,
    #[arg(long)]
    pub itq_iters: Option<usize>,
    /// Retrieval metric: cosine or hamming.
    #[arg(long)]
    pub metric: Option<String>,
}

/// Fully resolved run configuration with provenance per key.
#[derive(Clone, Debug)]
pub struct Params {
    pub seed: Setting<u64>,
    pub categories: Setting<usize>,
    pub dim: Setting<usize>,
    pub samples: Setting<usize>,
    pub gap: Setting<f64>,
    pub image_noise: Setting<f64>,
    pub sketch_noise: Setting<f64>,
    pub unseen: Setting<usize>,
    pub batch_size: Setting<usize>,
    pub epochs: Setting<usize>,
    pub lr_initial: Setting<f64>,
    pub lr_final: Setting<f64>,
    pub tau: Setting<f64>,
    pub k: Setting<usize>,
    pub lambda1: Setting<f64>,
    pub lambda2: Setting<f64>,
    pub lambda3: Setting<f64>,
    pub augment_strength: Setting<f64>,
    pub use_cmcm: Setting<bool>,
    pub use_ml: Setting<bool>,
    pub hidden: Setting<usize>,
    pub embed: Setting<usize>,
    pub proj_hidden: Setting<usize>,
    pub teacher_classes: Setting<usize>,
    pub grad_clip: Setting<f64>,
    pub bits: Setting<usize>,
    pub itq_iters: Setting<usize>,
    pub metric: Setting<String>,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            seed: Setting::new(0),
            categories: Setting::new(25),
            dim: Setting::new(64),
            samples: Setting::new(60),
            gap: Setting::new(2.0),
            image_noise: Setting::new(0.15),
            sketch_noise: Setting::new(0.3),
            unseen: Setting::new(5),
            batch_size: Setting::new(96),
            epochs: Setting::new(10),
            lr_initial: Setting::new(1e-4),
            lr_final: Setting::new(1e-7),
            tau: Setting::new(0.07),
            k: Setting::new(10),
            lambda1: Setting::new(0.1),
            lambda2: Setting::new(1.0),
            lambda3: Setting::new(1.0),
            augment_strength: Setting::new(0.1),
            use_cmcm: Setting::new(true),
            use_ml: Setting::new(true),
            hidden: Setting::new(64),
            embed: Setting::new(64),
            proj_hidden: Setting::new(64),
            teacher_classes: Setting::new(16),
            grad_clip: Setting::new(0.0),
            bits: Setting::new(64),
            itq_iters: Setting::new(50),
            metric: Setting::new("cosine".to_string()),
        }
    }
}

impl Params {
    /// Defaults, then `DSN_SEED`, then the config file, then flags.
    pub fn resolve(flags: &OverrideArgs) -> Result<Params, CliError> {
        let mut p = Params::default();

        if let Ok(env_seed) = std::env::var("DSN_SEED") {
            let v: u64 = env_seed.trim().parse().map_err(|_| {
                CliError::Config(format!("DSN_SEED is not a valid seed: {env_seed:?}"))
            })?;
            p.seed = Setting {
                value: v,
                source: Source::Env,
            };
        }

        if let Some(path) = &flags.config {
            let file = parse_kv_file(path)?;
            for (key, raw) in &file {
                p.apply(key, raw, Source::File)?;
            }
        }

        macro_rules! flag {
            ($field:ident) => {
                if let Some(v) = &flags.$field {
                    p.$field = Setting {
                        value: v.clone(),
                        source: Source::Flag,
                    };
                }
            };
        }
        flag!(seed);
        flag!(categories);
        flag!(dim);
        flag!(samples);
        flag!(gap);
        flag!(image_noise);
        flag!(sketch_noise);
        flag!(unseen);
        flag!(batch_size);
        flag!(epochs);
        flag!(lr_initial);
        flag!(lr_final);
        flag!(tau);
        flag!(k);
        flag!(lambda1);
        flag!(lambda2);
        flag!(lambda3);
        flag!(augment_strength);
        flag!(use_cmcm);
        flag!(use_ml);
        flag!(hidden);
        flag!(embed);
        flag!(proj_hidden);
        flag!(teacher_classes);
        flag!(grad_clip);
        flag!(bits);
        flag!(itq_iters);
        flag!(metric);
        Ok(p)
    }

    fn apply(&mut self, key: &str, raw: &str, source: Source) -> Result<(), CliError> {
        fn parse<V: std::str::FromStr>(key: &str, raw: &str) -> Result<V, CliError> {
            raw.parse().map_err(|_| {
                CliError::Config(format!("bad value for {key}: {raw:?}"))
            })
        }
        match key {
            "seed" => self.seed = Setting { value: parse(key, raw)?, source },
            "categories" => self.categories = Setting { value: parse(key, raw)?, source },
            "dim" => self.dim = Setting { value: parse(key, raw)?, source },
            "samples" => self.samples = Setting { value: parse(key, raw)?, source },
            "gap" => self.gap = Setting { value: parse(key, raw)?, source },
            "image_noise" => self.image_noise = Setting { value: parse(key, raw)?, source },
            "sketch_noise" => self.sketch_noise = Setting { value: parse(key, raw)?, source },
            "unseen" => self.unseen = Setting { value: parse(key, raw)?, source },
            "batch_size" => self.batch_size = Setting { value: parse(key, raw)?, source },
            "epochs" => self.epochs = Setting { value: parse(key, raw)?, source },
            "lr_initial" => self.lr_initial = Setting { value: parse(key, raw)?, source },
            "lr_final" => self.lr_final = Setting { value: parse(key, raw)?, source },
            "tau" => self.tau = Setting { value: parse(key, raw)?, source },
            "k" => self.k = Setting { value: parse(key, raw)?, source },
            "lambda1" => self.lambda1 = Setting { value: parse(key, raw)?, source },
            "lambda2" => self.lambda2 = Setting { value: parse(key, raw)?, source },
            "lambda3" => self.lambda3 = Setting { value: parse(key, raw)?, source },
            "augment_strength" => {
                self.augment_strength = Setting { value: parse(key, raw)?, source }
            }
            "use_cmcm" => self.use_cmcm = Setting { value: parse(key, raw)?, source },
            "use_ml" => self.use_ml = Setting { value: parse(key, raw)?, source },
            "hidden" => self.hidden = Setting { value: parse(key, raw)?, source },
            "embed" => self.embed = Setting { value: parse(key, raw)?, source },
            "proj_hidden" => self.proj_hidden = Setting { value: parse(key, raw)?, source },
            "teacher_classes" => {
                self.teacher_classes = Setting { value: parse(key, raw)?, source }
            }
            "grad_clip" => self.grad_clip = Setting { value: parse(key, raw)?, source },
            "bits" => self.bits = Setting { value: parse(key, raw)?, source },
            "itq_iters" => self.itq_iters = Setting { value: parse(key, raw)?, source },
            "metric" => self.metric = Setting { value: raw.to_string(), source },
            other => {
                return Err(unknown_key_error(other));
            }
        }
        Ok(())
    }

    /// `(key, value, source)` rows for the requested keys, for metadata blocks.
    pub fn provenance(&self, keys: &[&str]) -> Vec<(String, String, Source)> {
        keys.iter()
            .map(|&key| {
                let (value, source) = match key {
                    "seed" => (self.seed.value.to_string(), self.seed.source),
                    "categories" => (self.categories.value.to_string(), self.categories.source),
                    "dim" => (self.dim.value.to_string(), self.dim.source),
                    "samples" => (self.samples.value.to_string(), self.samples.source),
                    "gap" => (self.gap.value.to_string(), self.gap.source),
                    "image_noise" => (self.image_noise.value.to_string(), self.image_noise.source),
                    "sketch_noise" => {
                        (self.sketch_noise.value.to_string(), self.sketch_noise.source)
                    }
                    "unseen" => (self.unseen.value.to_string(), self.unseen.source),
                    "batch_size" => (self.batch_size.value.to_string(), self.batch_size.source),
                    "epochs" => (self.epochs.value.to_string(), self.epochs.source),
                    "lr_initial" => (self.lr_initial.value.to_string(), self.lr_initial.source),
                    "lr_final" => (self.lr_final.value.to_string(), self.lr_final.source),
                    "tau" => (self.tau.value.to_string(), self.tau.source),
                    "k" => (self.k.value.to_string(), self.k.source),
                    "lambda1" => (self.lambda1.value.to_string(), self.lambda1.source),
                    "lambda2" => (self.lambda2.value.to_string(), self.lambda2.source),
                    "lambda3" => (self.lambda3.value.to_string(), self.lambda3.source),
                    "augment_strength" => (
                        self.augment_strength.value.to_string(),
                        self.augment_strength.source,
                    ),
                    "use_cmcm" => (self.use_cmcm.value.to_string(), self.use_cmcm.source),
                    "use_ml" => (self.use_ml.value.to_string(), self.use_ml.source),
                    "hidden" => (self.hidden.value.to_string(), self.hidden.source),
                    "embed" => (self.embed.value.to_string(), self.embed.source),
                    "proj_hidden" => {
                        (self.proj_hidden.value.to_string(), self.proj_hidden.source)
                    }
                    "teacher_classes" => (
                        self.teacher_classes.value.to_string(),
                        self.teacher_classes.source,
                    ),
                    "grad_clip" => (self.grad_clip.value.to_string(), self.grad_clip.source),
                    "bits" => (self.bits.value.to_string(), self.bits.source),
                    "itq_iters" => (self.itq_iters.value.to_string(), self.itq_iters.source),
                    "metric" => (self.metric.value.clone(), self.metric.source),
                    other => unreachable!("unknown provenance key {other}"),
                };
                (key.to_string(), value, source)
            })
            .collect()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_categories: self.categories.value,
            dim: self.dim.value,
            samples_per_category_per_modality: self.samples.value,
            domain_gap_magnitude: self.gap.value,
            image_noise_scale: self.image_noise.value,
            sketch_noise_scale: self.sketch_noise.value,
            seed: self.seed.value,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size.value,
            epochs: self.epochs.value,
            lr_initial: self.lr_initial.value,
            lr_final: self.lr_final.value,
            tau: self.tau.value,
            bank_capacity: self.k.value,
            lambda1: self.lambda1.value,
            lambda2: self.lambda2.value,
            lambda3: self.lambda3.value,
            augment_strength: self.augment_strength.value,
            seed: self.seed.value,
            use_cmcm: self.use_cmcm.value,
            use_ml: self.use_ml.value,
            hidden_dim: self.hidden.value,
            embed_dim: self.embed.value,
            proj_hidden_dim: self.proj_hidden.value,
            teacher_classes: self.teacher_classes.value,
            grad_clip: (self.grad_clip.value > 0.0).then_some(self.grad_clip.value),
        }
    }
}

/// Parse a `key=value` config file. Blank lines and `#` comments are
/// ignored; unknown keys are rejected with a nearest-key suggestion.
pub fn parse_kv_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!(
                "config line {} is not key=value: {line:?}",
                lineno + 1
            ))
        })?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(unknown_key_error(key));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn unknown_key_error(key: &str) -> CliError {
    let suggestion = KNOWN_KEYS
        .iter()
        .map(|k| (edit_distance(key, k), *k))
        .min()
        .filter(|(d, _)| *d <= 2)
        .map(|(_, k)| format!(" (did you mean {k:?}?)"))
        .unwrap_or_default();
    CliError::Config(format!("unknown config key {key:?}{suggestion}"))
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Keys relevant to each subcommand's metadata block.
pub mod keysets {
    pub const SYNTH: &[&str] = &[
        "seed",
        "categories",
        "dim",
        "samples",
        "gap",
        "image_noise",
        "sketch_noise",
    ];
    pub const SPLIT: &[&str] = &["seed", "categories", "unseen"];
    pub const TRAIN: &[&str] = &[
        "seed",
        "batch_size",
        "epochs",
        "lr_initial",
        "lr_final",
        "tau",
        "k",
        "lambda1",
        "lambda2",
        "lambda3",
        "augment_strength",
        "use_cmcm",
        "use_ml",
        "hidden",
        "embed",
        "proj_hidden",
        "teacher_classes",
        "grad_clip",
    ];
    pub const EVAL: &[&str] = &["seed", "metric", "bits", "itq_iters"];
    pub const ITQ: &[&str] = &["seed", "bits", "itq_iters"];
    pub const ABLATE: &[&str] = &[
        "seed",
        "categories",
        "dim",
        "samples",
        "gap",
        "image_noise",
        "sketch_noise",
        "unseen",
        "batch_size",
        "epochs",
        "lr_initial",
        "lr_final",
        "tau",
        "k",
        "lambda1",
        "lambda2",
        "lambda3",
        "augment_strength",
        "hidden",
        "embed",
        "proj_hidden",
        "teacher_classes",
        "grad_clip",
        "bits",
        "itq_iters",
    ];
}
