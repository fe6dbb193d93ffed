//! Zero-shot retrieval evaluation: cosine ranking on real-valued embeddings,
//! ITQ binarization with Hamming ranking, AP / mAP@all / Prec@100 scoring,
//! and the per-category similarity-matrix export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::FeatureSet;
use crate::error::{DsnError, Result};
use crate::model::{encode, ModelParams};
use crate::numkit::{cosine, random_orthogonal, svd_small, Matrix, Rng};
use crate::Scalar;

/// AP convention recorded in report metadata: precision at each relevant
/// hit, averaged over the total number of relevant gallery items.
pub const AP_VARIANT: &str = "precision-at-relevant-hits/total-relevant";
/// Prec@100 divides by 100 even when the gallery holds fewer items.
pub const PREC_DIVISOR_NOTE: &str = "prec@k divides by k regardless of gallery size";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetrievalMetric {
    Cosine,
    Hamming,
}

impl RetrievalMetric {
    pub fn name(self) -> &'static str {
        match self {
            RetrievalMetric::Cosine => "cosine",
            RetrievalMetric::Hamming => "hamming",
        }
    }
}

/// Packed binary codes, one row per sample, little bit-endian within words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitCodes {
    n: usize,
    bits: usize,
    words_per_row: usize,
    data: Vec<u64>,
}

impl BitCodes {
    pub fn zeros(n: usize, bits: usize) -> Self {
        let words_per_row = bits.div_ceil(64);
        Self {
            n,
            bits,
            words_per_row,
            data: vec![0; n * words_per_row],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn set_bit(&mut self, row: usize, bit: usize) {
        self.data[row * self.words_per_row + bit / 64] |= 1u64 << (bit % 64);
    }

    pub fn get_bit(&self, row: usize, bit: usize) -> bool {
        self.data[row * self.words_per_row + bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn row(&self, row: usize) -> &[u64] {
        &self.data[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    /// Hamming distance between row `i` of `self` and row `j` of `other`.
    pub fn hamming(&self, i: usize, other: &BitCodes, j: usize) -> u32 {
        debug_assert_eq!(self.bits, other.bits);
        self.row(i)
            .iter()
            .zip(other.row(j))
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// Gallery indices by descending cosine similarity to the query, ties broken
/// by ascending index.
pub fn rank_gallery_cosine<T: Scalar>(query: &[T], gallery: &Matrix<T>) -> Result<Vec<usize>> {
    if gallery.cols() != query.len() {
        return Err(DsnError::DimMismatch {
            context: "rank_gallery query",
            expected: gallery.cols(),
            got: query.len(),
        });
    }
    let mut sims = Vec::with_capacity(gallery.rows());
    for i in 0..gallery.rows() {
        sims.push(cosine(query, gallery.row(i))?);
    }
    let mut order: Vec<usize> = (0..gallery.rows()).collect();
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
    Ok(order)
}

/// Gallery indices by ascending Hamming distance, ties broken by ascending index.
pub fn rank_gallery_hamming(
    queries: &BitCodes,
    query_row: usize,
    gallery: &BitCodes,
) -> Result<Vec<usize>> {
    if queries.bits() != gallery.bits() {
        return Err(DsnError::DimMismatch {
            context: "rank_gallery code width",
            expected: gallery.bits(),
            got: queries.bits(),
        });
    }
    let dists: Vec<u32> = (0..gallery.len())
        .map(|i| queries.hamming(query_row, gallery, i))
        .collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| dists[a].cmp(&dists[b]).then(a.cmp(&b)));
    Ok(order)
}

/// Average precision over a full ranking: mean of precision-at-hit over
/// `total_relevant`. `total_relevant` counts every relevant gallery item,
/// retrieved or not.
pub fn average_precision(relevance: &[bool], total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(DsnError::InvalidConfig(
            "average_precision with zero relevant items".into(),
        ));
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank0, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            acc += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(acc / total_relevant as f64)
}

/// Fraction of relevant items among the top `k`; the divisor is always `k`.
pub fn precision_at_k(relevance: &[bool], k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let top = relevance.len().min(k);
    let hits = relevance[..top].iter().filter(|&&r| r).count();
    hits as f64 / k as f64
}

/// One evaluated query.
#[derive(Clone, Debug)]
pub struct QueryResult {
    pub index: usize,
    pub category: u32,
    pub ap: f64,
    pub prec100: f64,
}

/// Retrieval scores plus the conventions needed to interpret them.
#[derive(Clone, Debug)]
pub struct RetrievalReport {
    pub per_query: Vec<QueryResult>,
    pub map_all: f64,
    pub prec_at_100: f64,
    pub metric: RetrievalMetric,
    /// Code length (bits) for Hamming, embedding dimension for cosine.
    pub dimension: usize,
    pub metadata: Vec<(String, String)>,
}

impl RetrievalReport {
    /// CSV serialization: metadata as `#` comments, a summary line, then one
    /// row per query.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# dsn-retrieval-report v1\n");
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(
            out,
            "# summary metric={} dimension={} queries={} map_all={} prec100={}",
            self.metric.name(),
            self.dimension,
            self.per_query.len(),
            self.map_all,
            self.prec_at_100
        );
        out.push_str("query_index,category,average_precision,prec100\n");
        for q in &self.per_query {
            let _ = writeln!(out, "{},{},{},{}", q.index, q.category, q.ap, q.prec100);
        }
        out
    }
}

/// Full evaluation: embed queries and gallery with the encoder, optionally
/// ITQ-encode, rank every query against the whole gallery, and score AP over
/// the full ranking plus Prec@100. Relevance is exact label match.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    query_sketches: &FeatureSet<T>,
    gallery_images: &FeatureSet<T>,
    metric: RetrievalMetric,
    itq: Option<&ItqModel<T>>,
) -> Result<RetrievalReport> {
    if query_sketches.is_empty() || gallery_images.is_empty() {
        return Err(DsnError::InvalidConfig(
            "evaluation needs nonempty query and gallery sets".into(),
        ));
    }
    let emb_q = encode(params, query_sketches.features())?;
    let emb_g = encode(params, gallery_images.features())?;

    let codes = match metric {
        RetrievalMetric::Cosine => None,
        RetrievalMetric::Hamming => {
            let model = itq.ok_or_else(|| {
                DsnError::InvalidConfig("hamming evaluation requires an ITQ model".into())
            })?;
            Some((itq_encode(model, &emb_q)?, itq_encode(model, &emb_g)?))
        }
    };

    let gallery_labels = gallery_images.labels();
    let mut per_query = Vec::with_capacity(query_sketches.len());
    let mut map_acc = 0.0;
    let mut prec_acc = 0.0;
    for qi in 0..query_sketches.len() {
        let category = query_sketches.labels()[qi];
        let total_relevant = gallery_labels.iter().filter(|&&l| l == category).count();
        if total_relevant == 0 {
            return Err(DsnError::QueryCategoryMissing {
                query: qi,
                category,
            });
        }
        let order = match (&codes, metric) {
            (None, _) => rank_gallery_cosine(emb_q.row(qi), &emb_g)?,
            (Some((cq, cg)), _) => rank_gallery_hamming(cq, qi, cg)?,
        };
        let relevance: Vec<bool> = order.iter().map(|&g| gallery_labels[g] == category).collect();
        let ap = average_precision(&relevance, total_relevant)?;
        let prec100 = precision_at_k(&relevance, 100);
        map_acc += ap;
        prec_acc += prec100;
        per_query.push(QueryResult {
            index: qi,
            category,
            ap,
            prec100,
        });
    }
    let nq = per_query.len() as f64;

    let dimension = match metric {
        RetrievalMetric::Cosine => emb_q.cols(),
        RetrievalMetric::Hamming => itq.unwrap().bits,
    };
    Ok(RetrievalReport {
        map_all: map_acc / nq,
        prec_at_100: prec_acc / nq,
        metric,
        dimension,
        metadata: vec![
            ("ap_variant".into(), AP_VARIANT.into()),
            ("prec_divisor".into(), PREC_DIVISOR_NOTE.into()),
        ],
        per_query,
    })
}

/// Learned binary encoder: center, project onto the top principal
/// components, rotate, take signs.
#[derive(Clone, Debug)]
pub struct ItqModel<T> {
    pub mean: Vec<T>,
    /// `d_emb x bits`, orthonormal columns.
    pub projection: Matrix<T>,
    /// `bits x bits`, orthogonal.
    pub rotation: Matrix<T>,
    pub bits: usize,
}

/// Per-iteration diagnostics of an ITQ fit.
#[derive(Clone, Debug)]
pub struct ItqTrace<T> {
    /// Quantization loss `|B - V R|_F` after each iteration; non-increasing.
    pub quant_loss: Vec<T>,
    /// `max |(R^T R - I)_{ij}|` after each iteration.
    pub rotation_orthogonality: Vec<T>,
}

impl<T> Default for ItqTrace<T> {
    fn default() -> Self {
        Self {
            quant_loss: Vec::new(),
            rotation_orthogonality: Vec::new(),
        }
    }
}

/// Fit an ITQ model: PCA to `bits` components, then alternate sign
/// quantization and orthogonal-Procrustes rotation updates.
pub fn itq_fit<T: Scalar>(
    features: &Matrix<T>,
    bits: usize,
    iters: usize,
    rng: &mut Rng,
) -> Result<(ItqModel<T>, ItqTrace<T>)> {
    if features.rows() <= bits {
        return Err(DsnError::InvalidConfig(format!(
            "need more than {bits} samples to fit {bits} bits, got {}",
            features.rows()
        )));
    }
    if features.cols() < bits {
        return Err(DsnError::RankDeficient {
            rank: features.cols(),
            bits,
        });
    }

    let mean = features.col_means();
    let mut centered = features.clone();
    for i in 0..centered.rows() {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v = *v - *m;
        }
    }

    // Eigenvectors of the (unscaled) covariance via the symmetric SVD.
    let cov = centered.matmul_tn(&centered);
    let svd = svd_small(&cov)?;
    let usable = svd
        .sigma
        .iter()
        .filter(|&&s| s > svd.sigma[0] * T::from_f64_c(1e-10) && s > T::zero())
        .count();
    if usable < bits {
        return Err(DsnError::RankDeficient {
            rank: usable,
            bits,
        });
    }
    let projection = Matrix::from_fn(features.cols(), bits, |i, j| svd.u.get(i, j));

    let v = centered.matmul(&projection);
    let r0 = random_orthogonal::<T>(bits, rng);
    let (rotation, trace) = itq_iterate(&v, r0, iters)?;

    Ok((
        ItqModel {
            mean,
            projection,
            rotation,
            bits,
        },
        trace,
    ))
}

/// Rotation refinement loop on already-projected data `v` (`n x bits`).
/// Each iteration takes `B = sign(v R)` and then re-solves the orthogonal
/// Procrustes problem for `R`; the recorded quantization loss never rises.
pub fn itq_iterate<T: Scalar>(
    v: &Matrix<T>,
    r0: Matrix<T>,
    iters: usize,
) -> Result<(Matrix<T>, ItqTrace<T>)> {
    let bits = v.cols();
    if r0.rows() != bits || r0.cols() != bits {
        return Err(DsnError::DimMismatch {
            context: "itq rotation init",
            expected: bits,
            got: r0.rows(),
        });
    }
    let mut rotation = r0;
    let mut trace = ItqTrace::default();
    for _ in 0..iters {
        let vr = v.matmul(&rotation);
        let b = vr.map(|x| if x >= T::zero() { T::one() } else { -T::one() });
        // Procrustes: B^T V = S Omega Shat^T  =>  R = Shat S^T.
        let btv = b.matmul_tn(v);
        let svd = svd_small(&btv)?;
        rotation = svd.v.matmul_nt(&svd.u);

        let vr = v.matmul(&rotation);
        let mut diff = vr;
        for (d, &bv) in diff.data_mut().iter_mut().zip(b.data()) {
            *d = bv - *d;
        }
        trace.quant_loss.push(diff.frobenius_norm());
        trace
            .rotation_orthogonality
            .push(rotation.orthogonality_defect());
    }
    Ok((rotation, trace))
}

/// Binary codes for `features` under a fitted model; `sign(0)` maps to 1.
pub fn itq_encode<T: Scalar>(model: &ItqModel<T>, features: &Matrix<T>) -> Result<BitCodes> {
    if features.cols() != model.mean.len() {
        return Err(DsnError::DimMismatch {
            context: "itq_encode input",
            expected: model.mean.len(),
            got: features.cols(),
        });
    }
    let mut centered = features.clone();
    for i in 0..centered.rows() {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&model.mean) {
            *v = *v - *m;
        }
    }
    let projected = centered.matmul(&model.projection).matmul(&model.rotation);
    let mut codes = BitCodes::zeros(features.rows(), model.bits);
    for i in 0..projected.rows() {
        for (j, &x) in projected.row(i).iter().enumerate() {
            if x >= T::zero() {
                codes.set_bit(i, j);
            }
        }
    }
    Ok(codes)
}

/// Cosine similarity between per-category mean sketch embeddings (rows) and
/// per-category mean image embeddings (columns). Returns the sorted category
/// ids with the matrix.
pub fn similarity_matrix<T: Scalar>(
    params: &ModelParams<T>,
    sketches: &FeatureSet<T>,
    images: &FeatureSet<T>,
) -> Result<(Vec<u32>, Matrix<T>)> {
    let mut cats: BTreeMap<u32, ()> = BTreeMap::new();
    for &c in sketches.labels().iter().chain(images.labels()) {
        cats.insert(c, ());
    }
    let cats: Vec<u32> = cats.into_keys().collect();
    if cats.is_empty() {
        return Err(DsnError::InvalidConfig("no categories to compare".into()));
    }

    let mean_embedding = |fs: &FeatureSet<T>, c: u32| -> Result<Vec<T>> {
        let sub = fs.restrict(&[c].into_iter().collect());
        if sub.is_empty() {
            return Err(DsnError::EmptyCategory(c));
        }
        Ok(encode(params, sub.features())?.col_means())
    };

    let sketch_means: Vec<Vec<T>> = cats
        .iter()
        .map(|&c| mean_embedding(sketches, c))
        .collect::<Result<_>>()?;
    let image_means: Vec<Vec<T>> = cats
        .iter()
        .map(|&c| mean_embedding(images, c))
        .collect::<Result<_>>()?;

    let mut m = Matrix::zeros(cats.len(), cats.len());
    for (i, s) in sketch_means.iter().enumerate() {
        for (j, g) in image_means.iter().enumerate() {
            m.set(i, j, cosine(s, g)?);
        }
    }
    Ok((cats, m))
}

/// Similarity matrix as CSV with a category header row/column.
pub fn similarity_matrix_csv<T: Scalar>(cats: &[u32], m: &Matrix<T>) -> String {
    let mut out = String::from("sketch_category\\image_category");
    for c in cats {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for (i, c) in cats.iter().enumerate() {
        let _ = write!(out, "{c}");
        for j in 0..m.cols() {
            let _ = write!(out, ",{}", m.get(i, j));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;
    use crate::model::ModelDims;

    fn mat(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rank_cosine_self_first_and_scale_invariant() {
        let gallery = mat(&[&[0.0, 1.0], &[1.0, 1.0], &[1.0, 0.0]]);
        let order = rank_gallery_cosine(&[1.0, 0.0], &gallery).unwrap();
        assert_eq!(order[0], 2);
        let scaled = rank_gallery_cosine(&[5.0, 0.0], &gallery).unwrap();
        assert_eq!(order, scaled);
    }

    #[test]
    fn rank_hamming_ties_by_index() {
        let mut codes = BitCodes::zeros(3, 8);
        // All identical codes: ranking must be the identity permutation.
        for r in 0..3 {
            codes.set_bit(r, 1);
        }
        let order = rank_gallery_hamming(&codes, 0, &codes).unwrap();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn rank_matches_brute_force_sort() {
        let mut rng = Rng::from_seed(31);
        let gallery = Matrix::from_fn(5, 4, |_, _| rng.normal::<f64>());
        let query: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let order = rank_gallery_cosine(&query, &gallery).unwrap();
        let mut expect: Vec<(f64, usize)> = (0..5)
            .map(|i| (cosine(&query, gallery.row(i)).unwrap(), i))
            .collect();
        expect.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expect: Vec<usize> = expect.into_iter().map(|(_, i)| i).collect();
        assert_eq!(order, expect);
    }

    #[test]
    fn ap_hand_cases() {
        let ap = average_precision(&[true, false, true], 2).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);

        // All relevant first.
        let ap = average_precision(&[true, true, false, false], 2).unwrap();
        assert_eq!(ap, 1.0);

        // Single relevant at rank r gives 1/r.
        for r in 1..=6usize {
            let mut rel = vec![false; 6];
            rel[r - 1] = true;
            let ap = average_precision(&rel, 1).unwrap();
            assert!((ap - 1.0 / r as f64).abs() < 1e-15);
        }

        assert!(average_precision(&[false, false], 0).is_err());
    }

    #[test]
    fn ap_monotone_under_rank_improvement() {
        // Moving one relevant item earlier never decreases AP.
        let worse = [false, false, true, false, true];
        let better = [false, true, true, false, false];
        let a = average_precision(&worse, 2).unwrap();
        let b = average_precision(&better, 2).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn prec_at_k_cases() {
        let all = vec![true; 100];
        assert_eq!(precision_at_k(&all, 100), 1.0);
        let none = vec![false; 120];
        assert_eq!(precision_at_k(&none, 100), 0.0);
        let mut mixed = vec![false; 100];
        for r in mixed.iter_mut().take(40) {
            *r = true;
        }
        assert_eq!(precision_at_k(&mixed, 100), 0.4);
        // Short gallery still divides by k.
        assert_eq!(precision_at_k(&[true, true], 100), 0.02);
    }

    fn toy_params(d: usize) -> ModelParams<f64> {
        // Identity encoder: embeddings equal inputs.
        let dims = ModelDims {
            d_in: d,
            hidden: d,
            d_emb: d,
            proj_hidden: 2,
            c_seen: 2,
            c_teacher: 2,
        };
        let mut p = ModelParams::<f64>::init(dims, &mut Rng::from_seed(1));
        p.w1 = Matrix::identity(d);
        p.b1 = Matrix::zeros(1, d);
        p.w2 = Matrix::identity(d);
        p.b2 = Matrix::zeros(1, d);
        p
    }

    #[test]
    fn evaluate_separable_case_is_perfect() {
        let params = toy_params(2);
        // Nonnegative inputs so the identity encoder is exact.
        let queries = FeatureSet::new(
            mat(&[&[1.0, 0.0], &[0.0, 1.0]]),
            vec![0, 1],
            Modality::Sketch,
        )
        .unwrap();
        let gallery = FeatureSet::new(
            mat(&[&[2.0, 0.1], &[0.1, 2.0], &[1.5, 0.2], &[0.2, 1.5]]),
            vec![0, 1, 0, 1],
            Modality::Image,
        )
        .unwrap();
        let report = evaluate(&params, &queries, &gallery, RetrievalMetric::Cosine, None).unwrap();
        assert_eq!(report.map_all, 1.0);
        assert_eq!(report.per_query.len(), 2);
        assert!((report.prec_at_100 - 2.0 / 100.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_rejects_missing_category() {
        let params = toy_params(2);
        let queries = FeatureSet::new(mat(&[&[1.0, 0.0]]), vec![9], Modality::Sketch).unwrap();
        let gallery = FeatureSet::new(mat(&[&[1.0, 0.0]]), vec![0], Modality::Image).unwrap();
        assert!(matches!(
            evaluate(&params, &queries, &gallery, RetrievalMetric::Cosine, None),
            Err(DsnError::QueryCategoryMissing { query: 0, category: 9 })
        ));
    }

    #[test]
    fn evaluate_shuffled_labels_approach_class_prior() {
        // Under label permutation the expected AP approaches the class
        // prior for large galleries.
        let d = 4;
        let params = toy_params(d);
        let mut rng = Rng::from_seed(55);
        let n = 300;
        // Positive offset keeps every row nonzero through the ReLU identity.
        let gallery_feats = Matrix::from_fn(n, d, |_, _| rng.normal::<f64>() + 3.0);
        let mut labels: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
        rng.shuffle(&mut labels);
        let gallery = FeatureSet::new(gallery_feats, labels, Modality::Image).unwrap();
        let queries = FeatureSet::new(
            Matrix::from_fn(30, d, |_, _| rng.normal::<f64>() + 3.0),
            (0..30).map(|i| (i % 3) as u32).collect(),
            Modality::Sketch,
        )
        .unwrap();
        let report = evaluate(&params, &queries, &gallery, RetrievalMetric::Cosine, None).unwrap();
        assert!((report.map_all - 1.0 / 3.0).abs() < 0.08, "{}", report.map_all);
    }

    #[test]
    fn itq_iterate_fixpoint_stays_zero() {
        // +-1 data with orthogonal columns and identity init: already a
        // perfect binary embedding, loss 0 from the first iteration.
        let b = 4;
        let n = 16;
        let v = Matrix::from_fn(n, b, |i, j| if i >> j & 1 == 1 { 1.0 } else { -1.0 });
        let (rot, trace) = itq_iterate(&v, Matrix::identity(b), 5).unwrap();
        for &l in &trace.quant_loss {
            assert!(l < 1e-9, "loss {l}");
        }
        assert!(rot.orthogonality_defect() < 1e-10);
    }

    #[test]
    fn itq_fit_properties() {
        let mut rng = Rng::from_seed(3);
        let features = Matrix::from_fn(200, 16, |_, _| rng.normal::<f64>());
        let (model, trace) = itq_fit(&features, 8, 50, &mut rng).unwrap();
        assert_eq!(trace.quant_loss.len(), 50);
        for w in trace.quant_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss rose: {} -> {}", w[0], w[1]);
        }
        for &o in &trace.rotation_orthogonality {
            assert!(o < 1e-6);
        }
        assert!(model.projection.orthogonality_defect() < 1e-6);

        // Encoding the fit data twice is identical.
        let a = itq_encode(&model, &features).unwrap();
        let b = itq_encode(&model, &features).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn itq_encode_antisymmetry() {
        let mut rng = Rng::from_seed(9);
        let features = Matrix::from_fn(120, 8, |_, _| rng.normal::<f64>());
        let (model, _) = itq_fit(&features, 4, 20, &mut rng).unwrap();
        let x = Matrix::from_fn(1, 8, |_, _| rng.normal::<f64>());
        // Reflect about the data mean: projected coordinates negate.
        let mirrored = Matrix::from_fn(1, 8, |_, j| 2.0 * model.mean[j] - x.get(0, j));
        let cx = itq_encode(&model, &x).unwrap();
        let cm = itq_encode(&model, &mirrored).unwrap();
        let centered = Matrix::from_fn(1, 8, |_, j| x.get(0, j) - model.mean[j]);
        let proj = centered.matmul(&model.projection).matmul(&model.rotation);
        for bit in 0..4 {
            if proj.get(0, bit) != 0.0 {
                assert_ne!(cx.get_bit(0, bit), cm.get_bit(0, bit));
            }
        }
    }

    #[test]
    fn itq_fit_rejects_rank_deficiency() {
        let mut rng = Rng::from_seed(4);
        // Only 3 informative dimensions, but 6 bits requested.
        let base = Matrix::from_fn(100, 3, |_, _| rng.normal::<f64>());
        let features = Matrix::from_fn(100, 6, |i, j| base.get(i, j % 3));
        assert!(matches!(
            itq_fit(&features, 6, 10, &mut rng),
            Err(DsnError::RankDeficient { .. })
        ));
    }

    #[test]
    fn hamming_eval_matches_cosine_on_separable_data() {
        // Widely separated clusters aligned with axes: binary codes keep the
        // ranking perfect, matching the cosine path's mAP of 1.
        let d = 8;
        let params = toy_params(d);
        let mut rng = Rng::from_seed(21);
        let center = |c: usize| -> Vec<f64> {
            (0..d)
                .map(|j| if j == c { 6.0 } else { 0.5 })
                .collect()
        };
        let make = |rng: &mut Rng, per: usize, modality| {
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for c in 0..3usize {
                for _ in 0..per {
                    let mu = center(c);
                    rows.push(
                        (0..d)
                            .map(|j| (mu[j] + 0.05 * rng.normal::<f64>()).max(0.0))
                            .collect::<Vec<f64>>(),
                    );
                    labels.push(c as u32);
                }
            }
            FeatureSet::new(Matrix::from_rows(&rows).unwrap(), labels, modality).unwrap()
        };
        let fit_set = make(&mut rng, 20, Modality::Image);
        let gallery = make(&mut rng, 10, Modality::Image);
        let queries = make(&mut rng, 5, Modality::Sketch);

        let cos = evaluate(&params, &queries, &gallery, RetrievalMetric::Cosine, None).unwrap();
        let emb_fit = encode(&params, fit_set.features()).unwrap();
        let (itq, _) = itq_fit(&emb_fit, 6, 50, &mut rng).unwrap();
        let ham = evaluate(
            &params,
            &queries,
            &gallery,
            RetrievalMetric::Hamming,
            Some(&itq),
        )
        .unwrap();
        assert_eq!(cos.map_all, 1.0);
        assert_eq!(ham.map_all, 1.0);
    }

    #[test]
    fn similarity_matrix_identity_case() {
        let d = 3;
        let params = toy_params(d);
        // Same nonneg features per category in both modalities.
        let feats = mat(&[&[1.0, 0.0, 0.5], &[0.0, 2.0, 0.5], &[0.3, 0.3, 1.5]]);
        let sketches = FeatureSet::new(feats.clone(), vec![0, 1, 2], Modality::Sketch).unwrap();
        let images = FeatureSet::new(feats, vec![0, 1, 2], Modality::Image).unwrap();
        let (cats, m) = similarity_matrix(&params, &sketches, &images).unwrap();
        assert_eq!(cats, vec![0, 1, 2]);
        for i in 0..3 {
            assert!((m.get(i, i) - 1.0).abs() < 1e-12);
            for j in 0..3 {
                assert!(m.get(i, j) <= 1.0 && m.get(i, j) >= -1.0);
            }
        }
        let csv = similarity_matrix_csv(&cats, &m);
        assert!(csv.lines().count() == 4);
    }

    #[test]
    fn similarity_matrix_matches_direct_recomputation() {
        let d = 4;
        let params = toy_params(d);
        let mut rng = Rng::from_seed(14);
        let make = |rng: &mut Rng, modality| {
            let feats = Matrix::from_fn(9, d, |_, _| rng.normal::<f64>());
            FeatureSet::new(feats, (0..9).map(|i| (i % 3) as u32).collect(), modality).unwrap()
        };
        let sketches = make(&mut rng, Modality::Sketch);
        let images = make(&mut rng, Modality::Image);
        let (cats, m) = similarity_matrix(&params, &sketches, &images).unwrap();
        for (i, &ci) in cats.iter().enumerate() {
            for (j, &cj) in cats.iter().enumerate() {
                let ms = encode(
                    &params,
                    sketches.restrict(&[ci].into_iter().collect()).features(),
                )
                .unwrap()
                .col_means();
                let mi = encode(
                    &params,
                    images.restrict(&[cj].into_iter().collect()).features(),
                )
                .unwrap()
                .col_means();
                let expect = cosine(&ms, &mi).unwrap();
                assert!((m.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_matrix_empty_category_error() {
        let d = 2;
        let params = toy_params(d);
        let sketches =
            FeatureSet::new(mat(&[&[1.0, 0.0]]), vec![0], Modality::Sketch).unwrap();
        let images = FeatureSet::new(mat(&[&[1.0, 0.0]]), vec![1], Modality::Image).unwrap();
        assert!(matches!(
            similarity_matrix(&params, &sketches, &images),
            Err(DsnError::EmptyCategory(_))
        ));
    }
}
