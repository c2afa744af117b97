//! Training regimes: contrastive or supervised pretraining on a
//! metadata-labeled corpus, full fine-tuning, and linear probing on a binary
//! downstream task.
//!
//! All stochasticity flows through seed streams derived from the run seed
//! (`init`, `shuffle`, `augment`, `head-init` roles), so identical configs
//! produce bit-identical checkpoints.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::augment::{two_views, AugmentationConfig};
use crate::encoder::{EncoderConfig, EncoderError, EncoderModel, ForwardCache};
use crate::label::MultiHotLabel;
use crate::loss::{
    cross_entropy, info_nce, mulsupcon, supcon, EmbeddingBatch, LossConfig, LossError, LossResult,
};
use crate::mat::{axpy, dot, Mat};
use crate::optim::{Adam, LrSchedule, OptimError, Optimizer, Sgd};
use crate::seed::{derive_seed, stream_rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("method `{method}` requires {what} labels, which the corpus lacks")]
    MissingLabels {
        method: &'static str,
        what: &'static str,
    },
    #[error("task labels must be binary 0/1")]
    LabelCardinality,
    #[error("cross-entropy pretraining needs at least 2 classes, corpus has {0}")]
    TooFewClasses(usize),
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid {field}: {reason}")]
    BadConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Feature-vector corpus for pretraining: multi-hot metadata labels and/or
/// integer class ids may be attached.
#[derive(Debug, Clone)]
pub struct PretrainDataset {
    features: Vec<Vec<f64>>,
    labels: Option<Vec<MultiHotLabel>>,
    class_ids: Option<Vec<usize>>,
}

impl PretrainDataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Option<Vec<MultiHotLabel>>,
        class_ids: Option<Vec<usize>>,
    ) -> Result<Self, TrainError> {
        if features.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let d = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != d) {
            return Err(TrainError::ShapeMismatch {
                what: "feature dimension",
                expected: d,
                got: bad.len(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != features.len() {
                return Err(TrainError::ShapeMismatch {
                    what: "label count",
                    expected: features.len(),
                    got: l.len(),
                });
            }
        }
        if let Some(c) = &class_ids {
            if c.len() != features.len() {
                return Err(TrainError::ShapeMismatch {
                    what: "class id count",
                    expected: features.len(),
                    got: c.len(),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            class_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[MultiHotLabel]> {
        self.labels.as_deref()
    }

    pub fn class_ids(&self) -> Option<&[usize]> {
        self.class_ids.as_deref()
    }
}

/// Binary downstream task.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self, TrainError> {
        if features.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        if labels.len() != features.len() {
            return Err(TrainError::ShapeMismatch {
                what: "label count",
                expected: features.len(),
                got: labels.len(),
            });
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(TrainError::LabelCardinality);
        }
        let d = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != d) {
            return Err(TrainError::ShapeMismatch {
                what: "feature dimension",
                expected: d,
                got: bad.len(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Row subset in the given index order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainMethod {
    MulSupCon,
    InfoNce,
    SupCon,
    CrossEntropy,
}

impl PretrainMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            PretrainMethod::MulSupCon => "mulsupcon",
            PretrainMethod::InfoNce => "infonce",
            PretrainMethod::SupCon => "supcon",
            PretrainMethod::CrossEntropy => "crossentropy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mulsupcon" => Some(PretrainMethod::MulSupCon),
            "infonce" => Some(PretrainMethod::InfoNce),
            "supcon" => Some(PretrainMethod::SupCon),
            "crossentropy" => Some(PretrainMethod::CrossEntropy),
            _ => None,
        }
    }

    /// Stable id used for seed derivation, independent of listing order.
    pub fn stable_id(&self) -> u64 {
        match self {
            PretrainMethod::MulSupCon => 0,
            PretrainMethod::InfoNce => 1,
            PretrainMethod::SupCon => 2,
            PretrainMethod::CrossEntropy => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerSpec {
    Sgd {
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        weight_decay: f64,
    },
}

impl OptimizerSpec {
    fn build(&self, n_params: usize) -> Optimizer {
        match *self {
            OptimizerSpec::Sgd {
                lr,
                momentum,
                weight_decay,
            } => Optimizer::Sgd(Sgd::new(lr, momentum, weight_decay, n_params)),
            OptimizerSpec::Adam { lr, weight_decay } => {
                Optimizer::Adam(Adam::new(lr, weight_decay, n_params))
            }
        }
    }

    pub fn base_lr(&self) -> f64 {
        match *self {
            OptimizerSpec::Sgd { lr, .. } => lr,
            OptimizerSpec::Adam { lr, .. } => lr,
        }
    }
}

/// Encoder architecture knobs exposed through run configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderArch {
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub projection_head: bool,
}

impl Default for EncoderArch {
    fn default() -> Self {
        Self {
            hidden_dims: vec![128],
            embed_dim: 64,
            projection_head: true,
        }
    }
}

impl EncoderArch {
    /// Backbone config for a given input dimension. When `with_head` is set,
    /// the projection head is (embed_dim -> embed_dim -> embed_dim/2).
    pub fn encoder_config(&self, input_dim: usize, with_head: bool) -> EncoderConfig {
        let mut layer_dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        layer_dims.push(input_dim);
        layer_dims.extend_from_slice(&self.hidden_dims);
        layer_dims.push(self.embed_dim);
        EncoderConfig {
            layer_dims,
            head_dims: with_head.then_some((self.embed_dim, (self.embed_dim / 2).max(1))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub method: PretrainMethod,
    pub loss: LossConfig,
    pub optimizer: OptimizerSpec,
    /// Epoch learning-rate schedule; its base rate must equal the optimizer's.
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentationConfig,
    pub arch: EncoderArch,
}

impl PretrainConfig {
    /// Defaults for the contrastive methods: T=0.07, τ=0.3,
    /// SGD(0.05, 0.9, 1e-4), batch 256, constant learning rate.
    pub fn new(method: PretrainMethod, epochs: usize, seed: u64) -> Self {
        Self {
            method,
            loss: LossConfig {
                temperature: 0.07,
                threshold: 0.3,
            },
            optimizer: OptimizerSpec::Sgd {
                lr: 0.05,
                momentum: 0.9,
                weight_decay: 1e-4,
            },
            schedule: LrSchedule::constant(0.05),
            epochs,
            batch_size: 256,
            seed,
            augment: AugmentationConfig::default(),
            arch: EncoderArch::default(),
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::BadConfig {
                field: "epochs",
                reason: "must be >= 1".into(),
            });
        }
        if self.batch_size < 2 {
            return Err(TrainError::BadConfig {
                field: "batch_size",
                reason: "must be >= 2".into(),
            });
        }
        if !self.augment.is_valid() {
            return Err(TrainError::BadConfig {
                field: "augment",
                reason: "sigma >= 0, dropout in [0,1], 0 < scale_lo <= scale_hi".into(),
            });
        }
        if self.schedule.base_lr != self.optimizer.base_lr() {
            return Err(TrainError::BadConfig {
                field: "schedule.base_lr",
                reason: "must equal the optimizer learning rate".into(),
            });
        }
        LossConfig::new(self.loss.temperature, self.loss.threshold)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Finetune,
    LinearProbe,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Finetune => "finetune",
            Regime::LinearProbe => "linear_probe",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DownstreamConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl DownstreamConfig {
    /// Downstream recipe: 10 epochs, batch 32, Adam 1e-4, decay x0.1 at
    /// epoch 5.
    pub fn new(regime: Regime, seed: u64) -> Self {
        Self {
            regime,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-4,
            schedule: LrSchedule::step(1e-4, 5, 0.1),
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c
    }
}

/// Per-epoch training log entry. Serialized as
/// `epoch<TAB>mean_loss<TAB>anchors_skipped`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub anchors_skipped: usize,
}

pub fn render_loss_log(log: &[EpochLog]) -> String {
    let mut out = String::new();
    for e in log {
        out.push_str(&format!(
            "{}\t{:.6}\t{}\n",
            e.epoch, e.mean_loss, e.anchors_skipped
        ));
    }
    out
}

/// Pretrained encoder plus the metadata needed to reload it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub method: String,
    pub seed: u64,
}

impl Checkpoint {
    /// The encoder downstream training starts from: projection head dropped.
    pub fn backbone(&self) -> EncoderModel {
        self.model.without_head()
    }
}

/// Linear scoring head `d -> 1` with sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    w: Vec<f64>,
    b: f64,
}

impl ClassifierHead {
    /// Zero initialization: scores start at exactly 0.5 and the trained
    /// ordering reflects only what the optimizer accumulated, not a random
    /// projection of the features.
    pub fn zeros(dim: usize) -> Self {
        Self {
            w: vec![0.0; dim],
            b: 0.0,
        }
    }

    pub fn new_seeded(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let w = (0..dim).map(|_| rng.random_range(-bound..=bound)).collect();
        let b = rng.random_range(-bound..=bound);
        Self { w, b }
    }

    pub fn from_parts(w: Vec<f64>, b: f64) -> Self {
        Self { w, b }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn bias(&self) -> f64 {
        self.b
    }

    pub fn logit(&self, z: &[f64]) -> f64 {
        dot(&self.w, z) + self.b
    }

    pub fn score(&self, z: &[f64]) -> f64 {
        sigmoid(self.logit(z))
    }

    fn flat(&self) -> Vec<f64> {
        let mut p = self.w.clone();
        p.push(self.b);
        p
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let n = self.w.len();
        self.w.copy_from_slice(&flat[..n]);
        self.b = flat[n];
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Pretrain an encoder on the corpus with the configured method.
///
/// Every epoch shuffles the corpus (seeded), augments each image into two
/// views, runs the full stack forward, evaluates the method loss, and takes
/// one optimizer step per batch. The final incomplete batch is kept. Returns
/// the checkpoint (projection head retained, cross-entropy classifier
/// dropped) and the per-epoch loss log.
pub fn pretrain(
    corpus: &PretrainDataset,
    cfg: &PretrainConfig,
) -> Result<(Checkpoint, Vec<EpochLog>), TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    match cfg.method {
        PretrainMethod::MulSupCon => {
            if corpus.labels().is_none() {
                return Err(TrainError::MissingLabels {
                    method: "mulsupcon",
                    what: "multi-hot metadata",
                });
            }
        }
        PretrainMethod::SupCon => {
            if corpus.class_ids().is_none() {
                return Err(TrainError::MissingLabels {
                    method: "supcon",
                    what: "class id",
                });
            }
        }
        PretrainMethod::CrossEntropy => {
            if corpus.class_ids().is_none() {
                return Err(TrainError::MissingLabels {
                    method: "crossentropy",
                    what: "class id",
                });
            }
        }
        PretrainMethod::InfoNce => {}
    }

    let contrastive = cfg.method != PretrainMethod::CrossEntropy;
    let enc_cfg = cfg
        .arch
        .encoder_config(corpus.dim(), contrastive && cfg.arch.projection_head);
    let mut model = EncoderModel::new(&enc_cfg, derive_seed(cfg.seed, "init", 0))?;

    // Cross-entropy pretraining attaches a linear classifier over the
    // normalized embedding; it is discarded at checkpoint time.
    let mut classifier = if cfg.method == PretrainMethod::CrossEntropy {
        let ids = corpus.class_ids().unwrap();
        let distinct: std::collections::BTreeSet<usize> = ids.iter().copied().collect();
        if distinct.len() < 2 {
            return Err(TrainError::TooFewClasses(distinct.len()));
        }
        let n_classes = ids.iter().max().unwrap() + 1;
        Some(ClassifierLayer::new_seeded(
            n_classes,
            model.backbone_dim(),
            derive_seed(cfg.seed, "init", 1),
        ))
    } else {
        None
    };

    let n_model = model.num_params();
    let n_total = n_model + classifier.as_ref().map_or(0, ClassifierLayer::num_params);
    let mut optimizer = cfg.optimizer.build(n_total);

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..cfg.epochs {
        optimizer.set_lr(cfg.schedule.lr_at(epoch));
        let mut shuffle_rng = stream_rng(cfg.seed, "shuffle", epoch as u64);
        indices.shuffle(&mut shuffle_rng);
        let mut aug_rng = stream_rng(cfg.seed, "augment", epoch as u64);

        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        let mut skipped = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let (loss_value, anchors_used, grads) = pretrain_step(
                corpus,
                chunk,
                cfg,
                &model,
                classifier.as_ref(),
                &mut aug_rng,
            )?;
            skipped += 2 * chunk.len() - anchors_used;
            epoch_loss += loss_value;
            steps += 1;

            let mut params = model.flat_params();
            if let Some(c) = &classifier {
                params.extend(c.flat());
            }
            optimizer.step(&mut params, &grads)?;
            model.set_flat_params(&params[..n_model])?;
            if let Some(c) = &mut classifier {
                c.set_flat(&params[n_model..]);
            }
        }
        log.push(EpochLog {
            epoch,
            mean_loss: epoch_loss / steps as f64,
            anchors_skipped: skipped,
        });
    }

    Ok((
        Checkpoint {
            model,
            method: cfg.method.as_str().to_string(),
            seed: cfg.seed,
        },
        log,
    ))
}

/// One batch: build the two-view embedding batch, evaluate the method loss,
/// and backpropagate to flat parameter gradients (model params first, then
/// classifier params for cross-entropy).
fn pretrain_step(
    corpus: &PretrainDataset,
    chunk: &[usize],
    cfg: &PretrainConfig,
    model: &EncoderModel,
    classifier: Option<&ClassifierLayer>,
    aug_rng: &mut ChaCha8Rng,
) -> Result<(f64, usize, Vec<f64>), TrainError> {
    let n = chunk.len();
    let d_out = model.output_dim();
    let mut rows = Mat::zeros(2 * n, d_out);
    let mut caches: Vec<ForwardCache> = Vec::with_capacity(2 * n);
    let mut image_of = Vec::with_capacity(2 * n);
    for (i, &idx) in chunk.iter().enumerate() {
        let (v1, v2) = two_views(&corpus.features()[idx], &cfg.augment, aug_rng);
        for v in [v1, v2] {
            let (z, cache) = model.forward(&v)?;
            rows.row_mut(image_of.len()).copy_from_slice(&z);
            caches.push(cache);
            image_of.push(i);
        }
    }

    if cfg.method == PretrainMethod::CrossEntropy {
        let layer = classifier.unwrap();
        let ids = corpus.class_ids().unwrap();
        let targets: Vec<usize> = image_of.iter().map(|&img| ids[chunk[img]]).collect();
        let mut logits = Mat::zeros(2 * n, layer.n_classes());
        for v in 0..2 * n {
            layer.apply(rows.row(v), logits.row_mut(v));
        }
        let ce = cross_entropy(&logits, &targets)?;
        let mut grads = vec![0.0; model.num_params() + layer.num_params()];
        let (model_g, layer_g) = grads.split_at_mut(model.num_params());
        for (v, cache) in caches.iter().enumerate() {
            let gz = layer.backward(rows.row(v), ce.grad.row(v), layer_g);
            let g = model.backward(cache, &gz)?;
            for (acc, gi) in model_g.iter_mut().zip(&g.params) {
                *acc += gi;
            }
        }
        return Ok((ce.value, ce.anchors_used, grads));
    }

    let result: LossResult = match cfg.method {
        PretrainMethod::InfoNce => {
            let batch = EmbeddingBatch::new(rows, image_of)?;
            info_nce(&batch, cfg.loss.temperature)?
        }
        PretrainMethod::SupCon => {
            let ids = corpus.class_ids().unwrap();
            let classes: Vec<usize> = chunk.iter().map(|&i| ids[i]).collect();
            let batch = EmbeddingBatch::new(rows, image_of)?;
            supcon(&batch, &classes, cfg.loss.temperature)?
        }
        PretrainMethod::MulSupCon => {
            let all = corpus.labels().unwrap();
            let labels: Vec<MultiHotLabel> = chunk.iter().map(|&i| all[i].clone()).collect();
            let batch = EmbeddingBatch::new(rows, image_of)?;
            mulsupcon(&batch, &labels, &cfg.loss)?
        }
        PretrainMethod::CrossEntropy => unreachable!(),
    };

    let mut grads = vec![0.0; model.num_params()];
    for (v, cache) in caches.iter().enumerate() {
        let g = model.backward(cache, result.grad.row(v))?;
        for (acc, gi) in grads.iter_mut().zip(&g.params) {
            *acc += gi;
        }
    }
    Ok((result.value, result.anchors_used, grads))
}

/// Linear classifier used only by cross-entropy pretraining.
#[derive(Debug, Clone)]
struct ClassifierLayer {
    w: Vec<f64>,
    b: Vec<f64>,
    dim: usize,
}

impl ClassifierLayer {
    fn new_seeded(n_classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let w = (0..n_classes * dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let b = (0..n_classes)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self { w, b, dim }
    }

    fn n_classes(&self) -> usize {
        self.b.len()
    }

    fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn apply(&self, z: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = dot(&self.w[c * self.dim..(c + 1) * self.dim], z) + self.b[c];
        }
    }

    /// Accumulates classifier gradients into `layer_g` (weights then bias)
    /// and returns the gradient w.r.t. the embedding.
    fn backward(&self, z: &[f64], grad_logits: &[f64], layer_g: &mut [f64]) -> Vec<f64> {
        let d = self.dim;
        let nw = self.w.len();
        let mut gz = vec![0.0; d];
        for (c, &gl) in grad_logits.iter().enumerate() {
            axpy(&mut layer_g[c * d..(c + 1) * d], gl, z);
            layer_g[nw + c] += gl;
            axpy(&mut gz, gl, &self.w[c * d..(c + 1) * d]);
        }
        gz
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = self.w.clone();
        out.extend_from_slice(&self.b);
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let nw = self.w.len();
        self.w.copy_from_slice(&flat[..nw]);
        self.b.copy_from_slice(&flat[nw..]);
    }
}

/// Initialization source for downstream training.
#[derive(Debug, Clone, Copy)]
pub enum Initialization<'a> {
    Pretrained(&'a Checkpoint),
    Scratch(&'a EncoderArch),
}

/// Train encoder and head on the binary task; all encoder parameters update.
pub fn finetune(
    init: Initialization,
    task: &LabeledDataset,
    cfg: &DownstreamConfig,
) -> Result<(EncoderModel, ClassifierHead), TrainError> {
    let model = match init {
        Initialization::Pretrained(ckpt) => {
            let m = ckpt.backbone();
            if m.input_dim() != task.dim() {
                return Err(TrainError::ShapeMismatch {
                    what: "task feature dimension",
                    expected: m.input_dim(),
                    got: task.dim(),
                });
            }
            m
        }
        Initialization::Scratch(arch) => EncoderModel::new(
            &arch.encoder_config(task.dim(), false),
            derive_seed(cfg.seed, "init", 0),
        )?,
    };
    train_downstream(model, task, cfg, true)
}

/// Train only the head on top of a frozen pretrained encoder.
///
/// The encoder parameters are asserted bit-unchanged after training.
pub fn linear_probe(
    ckpt: &Checkpoint,
    task: &LabeledDataset,
    cfg: &DownstreamConfig,
) -> Result<ClassifierHead, TrainError> {
    let model = ckpt.backbone();
    if model.input_dim() != task.dim() {
        return Err(TrainError::ShapeMismatch {
            what: "task feature dimension",
            expected: model.input_dim(),
            got: task.dim(),
        });
    }
    let before = model.flat_params();
    let (model, head) = train_downstream(model, task, cfg, false)?;
    assert_eq!(
        model.flat_params(),
        before,
        "linear probe must not alter encoder parameters"
    );
    Ok(head)
}

fn train_downstream(
    mut model: EncoderModel,
    task: &LabeledDataset,
    cfg: &DownstreamConfig,
    update_encoder: bool,
) -> Result<(EncoderModel, ClassifierHead), TrainError> {
    if cfg.batch_size == 0 {
        return Err(TrainError::BadConfig {
            field: "batch_size",
            reason: "must be >= 1".into(),
        });
    }
    let mut head = ClassifierHead::zeros(model.backbone_dim());
    let n_model = model.num_params();
    let n_head = head.dim() + 1;
    let n_trained = if update_encoder { n_model + n_head } else { n_head };
    let mut optimizer = Optimizer::Adam(Adam::new(cfg.learning_rate, 0.0, n_trained));

    let mut indices: Vec<usize> = (0..task.len()).collect();
    for epoch in 0..cfg.epochs {
        optimizer.set_lr(cfg.schedule.lr_at(epoch));
        let mut shuffle_rng = stream_rng(cfg.seed, "shuffle", epoch as u64);
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let inv_b = 1.0 / chunk.len() as f64;
            let mut head_grads = vec![0.0; n_head];
            let mut model_grads = update_encoder.then(|| vec![0.0; n_model]);
            for &idx in chunk {
                let (z, cache) = model.forward(&task.features()[idx])?;
                let logit = head.logit(&z);
                let y = f64::from(task.labels()[idx]);
                // d(BCE)/d(logit) = sigmoid(logit) - y, averaged over batch.
                let dlogit = (sigmoid(logit) - y) * inv_b;
                let d = head.dim();
                axpy(&mut head_grads[..d], dlogit, &z);
                head_grads[d] += dlogit;
                if let Some(mg) = &mut model_grads {
                    let gz: Vec<f64> = head.weights().iter().map(|&w| w * dlogit).collect();
                    let g = model.backward(&cache, &gz)?;
                    for (acc, gi) in mg.iter_mut().zip(&g.params) {
                        *acc += gi;
                    }
                }
            }
            if update_encoder {
                let mut params = model.flat_params();
                params.extend(head.flat());
                let mut grads = model_grads.unwrap();
                grads.extend_from_slice(&head_grads);
                optimizer.step(&mut params, &grads)?;
                model.set_flat_params(&params[..n_model])?;
                head.set_flat(&params[n_model..]);
            } else {
                let mut params = head.flat();
                optimizer.step(&mut params, &head_grads)?;
                head.set_flat(&params);
            }
        }
    }
    Ok((model, head))
}

/// Mean binary cross-entropy of the head scores on a dataset.
pub fn bce_loss(
    model: &EncoderModel,
    head: &ClassifierHead,
    task: &LabeledDataset,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for (x, &y) in task.features().iter().zip(task.labels()) {
        let logit = head.logit(&model.embed(x)?);
        total += softplus(logit) - f64::from(y) * logit;
    }
    Ok(total / task.len() as f64)
}

/// Sigmoid scores in (0, 1) for a batch of samples.
pub fn predict_scores(
    model: &EncoderModel,
    head: &ClassifierHead,
    samples: &[Vec<f64>],
) -> Result<Vec<f64>, TrainError> {
    let mut scores = Vec::with_capacity(samples.len());
    for x in samples {
        scores.push(head.score(&model.embed(x)?));
    }
    Ok(scores)
}
