//! Metadata-driven multi-label supervised contrastive pretraining at desk
//! scale.
//!
//! The library covers the full pipeline over feature-vector corpora:
//!
//! * multi-hot encoding of (modality, anatomy) metadata and Jaccard label
//!   similarity ([`label`]);
//! * InfoNCE, supervised contrastive, and Jaccard-weighted multi-label
//!   supervised contrastive losses with exact analytic gradients ([`loss`]);
//! * a small fully-connected encoder with manual backpropagation, SGD with
//!   momentum, and Adam ([`encoder`], [`optim`]);
//! * two-view augmentation and the three training regimes — pretraining,
//!   fine-tuning, linear probing ([`augment`], [`train`]);
//! * the evaluation protocol: fixed stratified k-fold partitions, repeated
//!   cross-validation, AUC, and the exact Wilcoxon signed-rank test
//!   ([`stats`], [`eval`]);
//! * a synthetic hierarchical corpus generator, PCA projection, manifests,
//!   checkpoints, and run configuration ([`synth`], [`pca`], [`manifest`],
//!   [`persist`], [`config`]).
//!
//! Everything is deterministic given a master seed: named seed streams are
//! derived per role ([`seed`]), so repeated runs produce bit-identical
//! checkpoints and byte-identical reports.

pub mod augment;
pub mod config;
pub mod encoder;
pub mod eval;
pub mod label;
pub mod loss;
pub mod manifest;
pub mod mat;
pub mod optim;
pub mod pca;
pub mod persist;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod train;

pub use augment::{two_views, AugmentationConfig};
pub use config::{ConfigError, RunConfig};
pub use encoder::{EncoderConfig, EncoderError, EncoderModel};
pub use eval::{
    render_report, repeated_cv, run_evaluation, CvReport, EvalError, EvaluationOutcome,
    MethodRunner, PretrainedRunner, ScratchRunner,
};
pub use label::{LabelError, MetadataVocabulary, MultiHotLabel};
pub use loss::{
    cross_entropy, info_nce, jaccard_weights, mulsupcon, positive_mask, similarity_matrix, supcon,
    EmbeddingBatch, LossConfig, LossError, LossResult, PairWeightMatrix,
};
pub use manifest::{DataError, Manifest, ManifestRow};
pub use optim::{Adam, LrSchedule, OptimError, Optimizer, ScheduleKind, Sgd};
pub use pca::project_2d;
pub use persist::{load_checkpoint, save_checkpoint, PersistError};
pub use seed::derive_seed;
pub use stats::{
    auc, kfold_split, wilcoxon_signed_rank, ComparisonResult, FoldPartition, SignedRankTest,
    StatsError,
};
pub use synth::{generate_hierarchical_corpus, SynthConfig, SynthError, SyntheticCorpus};
pub use train::{
    finetune, linear_probe, predict_scores, pretrain, Checkpoint, ClassifierHead,
    DownstreamConfig, EncoderArch, EpochLog, Initialization, LabeledDataset, OptimizerSpec,
    PretrainConfig, PretrainDataset, PretrainMethod, Regime, TrainError,
};
