//! Two-modality feature data: synthetic generation, file ingestion and
//! serialization, and zero-shot category splitting.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{DsnError, Result};
use crate::numkit::{Matrix, Rng};
use crate::Scalar;

const FEATURE_MAGIC: [u8; 4] = *b"DSNF";
const FEATURE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Image,
    Sketch,
}

impl Modality {
    pub fn as_byte(self) -> u8 {
        match self {
            Modality::Image => 0,
            Modality::Sketch => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Modality::Image),
            1 => Ok(Modality::Sketch),
            other => Err(DsnError::BadModality(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Sketch => "sketch",
        }
    }
}

/// A batch of feature vectors with per-row category labels and a modality tag.
///
/// Immutable after creation. Feature values always lie on the `f32` grid
/// (generation and import quantize through `f32`) so the binary file format
/// below round-trips bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet<T> {
    features: Matrix<T>,
    labels: Vec<u32>,
    modality: Modality,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(features: Matrix<T>, labels: Vec<u32>, modality: Modality) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(DsnError::CountMismatch(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        Ok(Self {
            features,
            labels,
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn categories(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }

    /// Rows whose label lies in `categories`, original order preserved.
    pub fn restrict(&self, categories: &BTreeSet<u32>) -> FeatureSet<T> {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| categories.contains(&self.labels[i]))
            .collect();
        let mut m = Matrix::zeros(keep.len(), self.dim());
        let mut labels = Vec::with_capacity(keep.len());
        for (out_row, &src_row) in keep.iter().enumerate() {
            m.row_mut(out_row).copy_from_slice(self.features.row(src_row));
            labels.push(self.labels[src_row]);
        }
        FeatureSet {
            features: m,
            labels,
            modality: self.modality,
        }
    }
}

/// Disjoint seen/unseen category sets covering a declared universe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZeroShotSplit {
    pub seen: BTreeSet<u32>,
    pub unseen: BTreeSet<u32>,
}

impl ZeroShotSplit {
    pub fn new(seen: BTreeSet<u32>, unseen: BTreeSet<u32>) -> Result<Self> {
        if !seen.is_disjoint(&unseen) {
            return Err(DsnError::InvalidConfig(
                "seen and unseen categories overlap".into(),
            ));
        }
        if seen.is_empty() || unseen.is_empty() {
            return Err(DsnError::InvalidConfig(
                "both seen and unseen sets must be nonempty".into(),
            ));
        }
        Ok(Self { seen, unseen })
    }
}

/// Uniformly choose `n_unseen` categories as the test-side of the split.
pub fn make_zero_shot_split(
    category_ids: &BTreeSet<u32>,
    n_unseen: usize,
    rng: &mut Rng,
) -> Result<ZeroShotSplit> {
    if n_unseen < 1 || n_unseen >= category_ids.len() {
        return Err(DsnError::InvalidConfig(format!(
            "n_unseen = {} must satisfy 1 <= n_unseen < {}",
            n_unseen,
            category_ids.len()
        )));
    }
    let mut ids: Vec<u32> = category_ids.iter().copied().collect();
    rng.shuffle(&mut ids);
    let unseen: BTreeSet<u32> = ids[..n_unseen].iter().copied().collect();
    let seen: BTreeSet<u32> = ids[n_unseen..].iter().copied().collect();
    ZeroShotSplit::new(seen, unseen)
}

/// Synthetic two-modality generator configuration.
///
/// The defaults describe the desk-scale zero-shot benchmark: 25 categories,
/// 64 dimensions, 60 samples per category per modality, a fixed cross-modal
/// offset of norm 2, and sketch noise at twice the image noise.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n_categories: usize,
    pub dim: usize,
    pub samples_per_category_per_modality: usize,
    /// Norm of the fixed offset vector added to every sketch (the modality gap).
    pub domain_gap_magnitude: f64,
    pub image_noise_scale: f64,
    /// Must be positive; larger than `image_noise_scale` models the higher
    /// intra-class diversity of sketches.
    pub sketch_noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_categories: 25,
            dim: 64,
            samples_per_category_per_modality: 60,
            domain_gap_magnitude: 2.0,
            image_noise_scale: 0.15,
            sketch_noise_scale: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_categories < 1 || self.dim < 1 || self.samples_per_category_per_modality < 1 {
            return Err(DsnError::InvalidConfig(
                "n_categories, dim, samples must all be >= 1".into(),
            ));
        }
        if self.image_noise_scale <= 0.0 || self.sketch_noise_scale <= 0.0 {
            return Err(DsnError::InvalidConfig("noise scales must be > 0".into()));
        }
        if self.domain_gap_magnitude < 0.0 {
            return Err(DsnError::InvalidConfig(
                "domain_gap_magnitude must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-coordinate scale of the category means. Together with the default
/// noise scales this keeps the default gap vector comparable to the
/// between-class separation, so the cross-modal offset genuinely hurts
/// retrieval until a model learns to cancel it.
const CATEGORY_MEAN_SCALE: f64 = 0.3;

// TEMP sweep hook, removed after calibration.
fn mean_scale() -> f64 {
    std::env::var("DSN_SWEEP_MEAN").ok().and_then(|v| v.parse().ok()).unwrap_or(CATEGORY_MEAN_SCALE)
}

/// Generate paired image/sketch feature sets.
///
/// Per category a mean is drawn once; image rows are `mean + image noise`,
/// sketch rows are `mean + gap offset + sketch noise` with one gap vector
/// shared by all categories. Deterministic for a given seed; values are
/// quantized through `f32` so the feature-file round-trip is lossless.
pub fn generate_synthetic<T: Scalar>(cfg: &SynthConfig) -> Result<(FeatureSet<T>, FeatureSet<T>)> {
    cfg.validate()?;
    let mut rng = Rng::from_seed(cfg.seed);
    let d = cfg.dim;
    let per = cfg.samples_per_category_per_modality;
    let n = cfg.n_categories * per;

    // Fixed modality offset with the requested norm.
    let mut gap: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let raw_norm = gap.iter().map(|v| v * v).sum::<f64>().sqrt();
    if cfg.domain_gap_magnitude > 0.0 && raw_norm > 0.0 {
        let s = cfg.domain_gap_magnitude / raw_norm;
        for g in &mut gap {
            *g *= s;
        }
    } else {
        gap.iter_mut().for_each(|g| *g = 0.0);
    }

    let means: Vec<Vec<f64>> = (0..cfg.n_categories)
        .map(|_| {
            (0..d)
                .map(|_| mean_scale() * rng.normal::<f64>())
                .collect()
        })
        .collect();

    let quantize = |v: f64| T::from_f64_c(v as f32 as f64);

    let mut img = Matrix::<T>::zeros(n, d);
    let mut img_labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for s in 0..per {
            let row = img.row_mut(c * per + s);
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = quantize(mean[j] + cfg.image_noise_scale * rng.normal::<f64>());
            }
            img_labels.push(c as u32);
        }
    }

    let mut ske = Matrix::<T>::zeros(n, d);
    let mut ske_labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for s in 0..per {
            let row = ske.row_mut(c * per + s);
            for (j, slot) in row.iter_mut().enumerate() {
                *slot =
                    quantize(mean[j] + gap[j] + cfg.sketch_noise_scale * rng.normal::<f64>());
            }
            ske_labels.push(c as u32);
        }
    }

    Ok((
        FeatureSet::new(img, img_labels, Modality::Image)?,
        FeatureSet::new(ske, ske_labels, Modality::Sketch)?,
    ))
}

/// Binary feature file, little-endian:
/// magic `DSNF`, u32 version = 1, u8 modality (0 image / 1 sketch), u32 N,
/// u32 D, N*D f32 row-major, N u32 labels.
pub fn save_features<T: Scalar>(fs: &FeatureSet<T>, path: &Path) -> Result<()> {
    let n = fs.len();
    let d = fs.dim();
    let mut buf = Vec::with_capacity(17 + n * d * 4 + n * 4);
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.push(fs.modality().as_byte());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in fs.features().data() {
        let f = v.to_f32().ok_or(DsnError::NonFiniteData("feature value"))?;
        buf.extend_from_slice(&f.to_le_bytes());
    }
    for &l in fs.labels() {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    atomic_write(path, &buf)
}

pub fn load_features<T: Scalar>(path: &Path) -> Result<FeatureSet<T>> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor::new(&bytes);

    let magic = cur.take4("magic")?;
    if magic != FEATURE_MAGIC {
        return Err(DsnError::BadMagic {
            expected: FEATURE_MAGIC,
            found: magic,
        });
    }
    let version = cur.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(DsnError::UnsupportedVersion(version));
    }
    let modality = Modality::from_byte(cur.u8("modality")?)?;
    let n = cur.u32("row count")? as usize;
    let d = cur.u32("dim")? as usize;

    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        let v = f32::from_le_bytes(cur.take4("feature payload")?);
        data.push(T::from_f64_c(v as f64));
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(u32::from_le_bytes(cur.take4("label payload")?));
    }
    if !cur.at_end() {
        return Err(DsnError::TrailingData);
    }
    FeatureSet::new(Matrix::from_vec(n, d, data)?, labels, modality)
}

/// CSV import: one row per sample; first column integer label, remaining
/// columns the feature values. The modality is supplied by the caller.
pub fn load_features_csv<T: Scalar>(path: &Path, modality: Modality) -> Result<FeatureSet<T>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let label: u32 = fields
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| DsnError::Malformed(format!("line {}: bad label", lineno + 1)))?;
        let values: Vec<T> = fields
            .map(|f| {
                f.trim()
                    .parse::<f32>()
                    .map(|v| T::from_f64_c(v as f64))
                    .map_err(|_| DsnError::Malformed(format!("line {}: bad float", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(DsnError::CountMismatch(format!(
                    "line {}: {} values, expected {}",
                    lineno + 1,
                    values.len(),
                    d
                )))
            }
            _ => {}
        }
        labels.push(label);
        rows.push(values);
    }
    FeatureSet::new(Matrix::from_rows(&rows)?, labels, modality)
}

/// Plain-text split file: `seen=` / `unseen=` comma-separated ids.
pub fn save_split(split: &ZeroShotSplit, path: &Path) -> Result<()> {
    let fmt = |s: &BTreeSet<u32>| {
        s.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let text = format!(
        "# dsn-split v1\nseen={}\nunseen={}\n",
        fmt(&split.seen),
        fmt(&split.unseen)
    );
    atomic_write(path, text.as_bytes())
}

pub fn load_split(path: &Path) -> Result<ZeroShotSplit> {
    let text = fs::read_to_string(path)?;
    let mut seen = None;
    let mut unseen = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| DsnError::Malformed(format!("split line without '=': {line}")))?;
        let ids: BTreeSet<u32> = value
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| DsnError::Malformed(format!("bad category id: {s}")))
            })
            .collect::<Result<_>>()?;
        match key.trim() {
            "seen" => seen = Some(ids),
            "unseen" => unseen = Some(ids),
            other => return Err(DsnError::Malformed(format!("unknown split key: {other}"))),
        }
    }
    match (seen, unseen) {
        (Some(s), Some(u)) => ZeroShotSplit::new(s, u),
        _ => Err(DsnError::Malformed(
            "split file must define both seen= and unseen=".into(),
        )),
    }
}

/// Write a full buffer to `path` via a temp sibling and rename, so failures
/// never leave a partial file behind.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take4(&mut self, what: &'static str) -> Result<[u8; 4]> {
        if self.pos + 4 > self.bytes.len() {
            return Err(DsnError::Truncated(what));
        }
        let mut out = [0u8; 4];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + 4]);
        self.pos += 4;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take4(what)?))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        if self.pos >= self.bytes.len() {
            return Err(DsnError::Truncated(what));
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
