//! Contrastive losses over a batch of paired view embeddings, with exact
//! analytic gradients.
//!
//! All three contrastive objectives share one shape: for an anchor view `a`,
//! candidates are every other in-batch view `A(a)`, a softmax over
//! `dot(z_a, z_k) / T` is formed with max-subtracted log-sum-exp, and the
//! anchor term is a weighted average of `-log softmax` over a positive set.
//! They differ only in how the positive set and its weights are chosen:
//!
//! * `info_nce`     — the partner view only, weight 1.
//! * `supcon`       — same-class views, weight 1.
//! * `mulsupcon`    — views whose label Jaccard similarity is at least `τ`,
//!   weighted by that similarity.
//!
//! Anchors with an empty positive set are skipped and the batch value is the
//! mean over the anchors actually used; `anchors_used` reports the count.
//! Per-anchor terms are accumulated in ascending anchor order so results are
//! bit-reproducible.

use thiserror::Error;

use crate::label::MultiHotLabel;
use crate::mat::{axpy, dot, Mat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("batch has no images")]
    DegenerateBatch,
    #[error("view {view} has L2 norm {norm}, expected 1 within 1e-6")]
    NotUnitNorm { view: usize, norm: f64 },
    #[error("image {image} appears {count} times in image_of, expected exactly 2")]
    BadPairing { image: usize, count: usize },
    #[error("embedding dimension {0} is below the minimum of 2")]
    DimTooSmall(usize),
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("threshold must lie in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error("target class {target} out of range for {classes} classes")]
    BadTarget { target: usize, classes: usize },
}

/// Temperature and positive-set threshold for the multi-label loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    pub threshold: f64,
}

impl LossConfig {
    pub fn new(temperature: f64, threshold: f64) -> Result<Self, LossError> {
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(LossError::BadTemperature(temperature));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(LossError::BadThreshold(threshold));
        }
        Ok(Self {
            temperature,
            threshold,
        })
    }
}

/// 2N unit-norm view embeddings plus the view -> image pairing.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    views: Mat,
    image_of: Vec<usize>,
    partner: Vec<usize>,
    n_images: usize,
}

impl EmbeddingBatch {
    /// Validates unit norms (within 1e-6), exactly two views per image, and
    /// embedding dimension >= 2.
    pub fn new(views: Mat, image_of: Vec<usize>) -> Result<Self, LossError> {
        for v in 0..views.rows() {
            let norm = crate::mat::l2_norm(views.row(v));
            if (norm - 1.0).abs() > 1e-6 {
                return Err(LossError::NotUnitNorm { view: v, norm });
            }
        }
        Self::new_unchecked(views, image_of)
    }

    /// Skips the unit-norm check but keeps all structural checks.
    ///
    /// Intended for numerical testing (finite-difference probes perturb
    /// coordinates off the unit sphere); the losses themselves are well
    /// defined for arbitrary vectors.
    pub fn new_unchecked(views: Mat, image_of: Vec<usize>) -> Result<Self, LossError> {
        if views.rows() == 0 {
            return Err(LossError::DegenerateBatch);
        }
        if views.cols() < 2 {
            return Err(LossError::DimTooSmall(views.cols()));
        }
        if image_of.len() != views.rows() {
            return Err(LossError::ShapeMismatch {
                what: "image_of length",
                expected: views.rows(),
                got: image_of.len(),
            });
        }
        if views.rows() % 2 == 1 {
            return Err(LossError::ShapeMismatch {
                what: "view count (two views per image)",
                expected: views.rows() + 1,
                got: views.rows(),
            });
        }
        let n_images = views.rows() / 2;
        let mut counts = vec![0usize; n_images];
        for &img in &image_of {
            if img >= n_images {
                return Err(LossError::BadPairing {
                    image: img,
                    count: 0,
                });
            }
            counts[img] += 1;
        }
        if let Some(image) = counts.iter().position(|&c| c != 2) {
            return Err(LossError::BadPairing {
                image,
                count: counts[image],
            });
        }
        let mut partner = vec![usize::MAX; image_of.len()];
        for v in 0..image_of.len() {
            for u in 0..image_of.len() {
                if u != v && image_of[u] == image_of[v] {
                    partner[v] = u;
                }
            }
        }
        Ok(Self {
            views,
            image_of,
            partner,
            n_images,
        })
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    pub fn n_views(&self) -> usize {
        self.views.rows()
    }

    pub fn dim(&self) -> usize {
        self.views.cols()
    }

    pub fn views(&self) -> &Mat {
        &self.views
    }

    pub fn image_of(&self) -> &[usize] {
        &self.image_of
    }

    /// The other view of the same image.
    pub fn partner(&self, view: usize) -> usize {
        self.partner[view]
    }
}

/// Scalar loss, gradient w.r.t. every view embedding, and the number of
/// anchors that contributed.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub value: f64,
    pub grad: Mat,
    pub anchors_used: usize,
}

/// Symmetric 2N x 2N matrix of pairwise label similarities between the
/// owning images of each view pair.
#[derive(Debug, Clone)]
pub struct PairWeightMatrix {
    w: Mat,
}

impl PairWeightMatrix {
    pub fn matrix(&self) -> &Mat {
        &self.w
    }

    pub fn at(&self, a: usize, p: usize) -> f64 {
        self.w.at(a, p)
    }

    pub fn n_views(&self) -> usize {
        self.w.rows()
    }
}

/// Boolean positive mask: `at(a, p)` is true iff `p != a` and `w[a][p] >= τ`.
#[derive(Debug, Clone)]
pub struct PositiveMask {
    n: usize,
    mask: Vec<bool>,
}

impl PositiveMask {
    pub fn at(&self, a: usize, p: usize) -> bool {
        self.mask[a * self.n + p]
    }

    pub fn n_views(&self) -> usize {
        self.n
    }

    pub fn positives_of(&self, a: usize) -> usize {
        (0..self.n).filter(|&p| self.at(a, p)).count()
    }
}

/// Pairwise dot products of all view embeddings.
pub fn similarity_matrix(batch: &EmbeddingBatch) -> Mat {
    let n = batch.n_views();
    let mut sim = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sim.set(i, j, dot(batch.views().row(i), batch.views().row(j)));
        }
    }
    sim
}

/// Pair weights `w[a][p] = jaccard(label(image(a)), label(image(p)))`.
pub fn jaccard_weights(
    labels: &[MultiHotLabel],
    image_of: &[usize],
) -> Result<PairWeightMatrix, LossError> {
    let n = image_of.len();
    if let Some(&img) = image_of.iter().find(|&&img| img >= labels.len()) {
        return Err(LossError::ShapeMismatch {
            what: "labels length",
            expected: img + 1,
            got: labels.len(),
        });
    }
    let mut w = Mat::zeros(n, n);
    for a in 0..n {
        for p in 0..n {
            w.set(a, p, labels[image_of[a]].jaccard(&labels[image_of[p]]));
        }
    }
    Ok(PairWeightMatrix { w })
}

/// Thresholded positive mask; self-pairs are always excluded.
pub fn positive_mask(w: &PairWeightMatrix, tau: f64) -> PositiveMask {
    let n = w.n_views();
    let mut mask = vec![false; n * n];
    for a in 0..n {
        for p in 0..n {
            mask[a * n + p] = a != p && w.at(a, p) >= tau;
        }
    }
    PositiveMask { n, mask }
}

/// Per-anchor positive set: candidate view index and pair weight.
type Positives = Vec<Vec<(usize, f64)>>;

/// Shared kernel: weighted average of `-log softmax` over each anchor's
/// positive set, averaged over anchors with a non-empty set.
///
/// For anchor `a` with positives `P` and weights `w_p`, writing
/// `l_k = dot(z_a, z_k)/T` and `lse = logsumexp_{k in A(a)} l_k`:
///
/// ```text
/// L_a        = (1/|P|) * sum_{p in P} w_p * (lse - l_p)
/// dL_a/dl_k  = (W/|P|) * q_k - w_k * [k in P] / |P|,   W = sum w_p, q = softmax
/// ```
///
/// and the gradient flows to embeddings through `l_k = dot(z_a, z_k)/T`.
fn weighted_contrastive(
    batch: &EmbeddingBatch,
    positives: &Positives,
    temperature: f64,
) -> LossResult {
    let n = batch.n_views();
    let d = batch.dim();
    let sim = similarity_matrix(batch);
    let mut grad = Mat::zeros(n, d);
    let mut total = 0.0;
    let mut anchors_used = 0usize;

    let mut logits = vec![0.0; n];
    let mut softmax = vec![0.0; n];
    // Per-anchor positive weight lookup; -1 marks non-positives.
    let mut pos_weight = vec![-1.0; n];
    for (a, pos) in positives.iter().enumerate() {
        if pos.is_empty() {
            continue;
        }
        anchors_used += 1;
        for &(p, w) in pos {
            pos_weight[p] = w;
        }

        // Max-subtracted log-sum-exp over candidates A(a) = all views but a.
        let mut max_l = f64::NEG_INFINITY;
        for (k, l) in logits.iter_mut().enumerate() {
            if k == a {
                continue;
            }
            *l = sim.at(a, k) / temperature;
            max_l = max_l.max(*l);
        }
        let mut sum_exp = 0.0;
        for (k, s) in softmax.iter_mut().enumerate() {
            if k == a {
                continue;
            }
            *s = (logits[k] - max_l).exp();
            sum_exp += *s;
        }
        let lse = max_l + sum_exp.ln();
        for (k, s) in softmax.iter_mut().enumerate() {
            if k == a {
                continue;
            }
            *s /= sum_exp;
        }

        let p_count = pos.len() as f64;
        let mut anchor_value = 0.0;
        let mut weight_sum = 0.0;
        for &(p, w) in pos {
            anchor_value += w * (lse - logits[p]);
            weight_sum += w;
        }
        total += anchor_value / p_count;

        // dL_a/ds_{ak} for every candidate k, then chain into z_a and z_k.
        for (k, &q_k) in softmax.iter().enumerate() {
            if k == a {
                continue;
            }
            let mut coef = weight_sum / p_count * q_k;
            if pos_weight[k] >= 0.0 {
                coef -= pos_weight[k] / p_count;
            }
            coef /= temperature;
            if coef != 0.0 {
                axpy(grad.row_mut(a), coef, batch.views().row(k));
                axpy(grad.row_mut(k), coef, batch.views().row(a));
            }
        }
        for &(p, _) in pos {
            pos_weight[p] = -1.0;
        }
    }

    if anchors_used == 0 {
        return LossResult {
            value: 0.0,
            grad,
            anchors_used: 0,
        };
    }
    let scale = 1.0 / anchors_used as f64;
    grad.scale(scale);
    LossResult {
        value: total * scale,
        grad,
        anchors_used,
    }
}

/// InfoNCE: the positive of each anchor is its partner view.
pub fn info_nce(batch: &EmbeddingBatch, temperature: f64) -> Result<LossResult, LossError> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(LossError::BadTemperature(temperature));
    }
    let positives: Positives = (0..batch.n_views())
        .map(|a| vec![(batch.partner(a), 1.0)])
        .collect();
    Ok(weighted_contrastive(batch, &positives, temperature))
}

/// Supervised contrastive loss with one class id per image.
pub fn supcon(
    batch: &EmbeddingBatch,
    classes: &[usize],
    temperature: f64,
) -> Result<LossResult, LossError> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(LossError::BadTemperature(temperature));
    }
    if classes.len() != batch.n_images() {
        return Err(LossError::ShapeMismatch {
            what: "classes length",
            expected: batch.n_images(),
            got: classes.len(),
        });
    }
    let n = batch.n_views();
    let positives: Positives = (0..n)
        .map(|a| {
            let ca = classes[batch.image_of()[a]];
            (0..n)
                .filter(|&p| p != a && classes[batch.image_of()[p]] == ca)
                .map(|p| (p, 1.0))
                .collect()
        })
        .collect();
    Ok(weighted_contrastive(batch, &positives, temperature))
}

/// Jaccard-weighted multi-label supervised contrastive loss.
///
/// Positives are the views whose label similarity to the anchor reaches the
/// threshold, and each positive's log-softmax term is scaled by that
/// similarity. Note that with `τ = 0` pairs of weight exactly zero still
/// enter the positive set (they satisfy `w >= 0`): they contribute nothing to
/// the sum but do inflate the `1/|P|` normalizer, which is what the formula
/// as written prescribes.
pub fn mulsupcon(
    batch: &EmbeddingBatch,
    labels: &[MultiHotLabel],
    cfg: &LossConfig,
) -> Result<LossResult, LossError> {
    if labels.len() != batch.n_images() {
        return Err(LossError::ShapeMismatch {
            what: "labels length",
            expected: batch.n_images(),
            got: labels.len(),
        });
    }
    let weights = jaccard_weights(labels, batch.image_of())?;
    let mask = positive_mask(&weights, cfg.threshold);
    let n = batch.n_views();
    let positives: Positives = (0..n)
        .map(|a| {
            (0..n)
                .filter(|&p| mask.at(a, p))
                .map(|p| (p, weights.at(a, p)))
                .collect()
        })
        .collect();
    Ok(weighted_contrastive(batch, &positives, cfg.temperature))
}

/// Mean softmax cross-entropy over a batch of logit rows, with the exact
/// gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Mat, targets: &[usize]) -> Result<LossResult, LossError> {
    let b = logits.rows();
    let c = logits.cols();
    if b == 0 {
        return Err(LossError::DegenerateBatch);
    }
    if c < 2 {
        return Err(LossError::ShapeMismatch {
            what: "class count",
            expected: 2,
            got: c,
        });
    }
    if targets.len() != b {
        return Err(LossError::ShapeMismatch {
            what: "targets length",
            expected: b,
            got: targets.len(),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(LossError::BadTarget {
            target: t,
            classes: c,
        });
    }
    let mut grad = Mat::zeros(b, c);
    let mut total = 0.0;
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let row = logits.row(i);
        let max_l = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&l| (l - max_l).exp()).sum();
        let lse = max_l + sum_exp.ln();
        total += lse - row[targets[i]];
        let g = grad.row_mut(i);
        for j in 0..c {
            g[j] = ((row[j] - max_l).exp() / sum_exp) * inv_b;
        }
        g[targets[i]] -= inv_b;
    }
    Ok(LossResult {
        value: total * inv_b,
        grad,
        anchors_used: b,
    })
}
