//! Repeated cross-validation protocol and the method-comparison report.
//!
//! Every method is evaluated against one fixed stratified partition; the
//! whole k-fold pass is repeated with varying training seeds while the folds
//! stay frozen, each repeat summarizing to the mean of its fold AUCs. Methods
//! are then compared pairwise against the proposed method with the exact
//! Wilcoxon signed-rank test over the repeat summaries.

use thiserror::Error;

use crate::config::RunConfig;
use crate::seed::derive_seed;
use crate::stats::{
    auc, kfold_split, wilcoxon_signed_rank, ComparisonResult, FoldPartition, StatsError,
};
use crate::train::{
    finetune, linear_probe, predict_scores, pretrain, Checkpoint, DownstreamConfig, EncoderArch,
    Initialization, LabeledDataset, PretrainDataset, PretrainMethod, Regime, TrainError,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("partition covers {partition} samples but the task has {task}")]
    PartitionMismatch { partition: usize, task: usize },
    #[error("evaluate needs a pretraining corpus for method `{0}`")]
    MissingCorpus(String),
}

/// Scores a held-out split after training on the rest; one per method arm.
pub trait MethodRunner {
    fn name(&self) -> &str;

    /// Train on `train`, return scores for `eval` in row order.
    fn run(
        &self,
        train: &LabeledDataset,
        eval: &LabeledDataset,
        seed: u64,
    ) -> Result<Vec<f64>, TrainError>;
}

/// Downstream training from a pretrained checkpoint.
pub struct PretrainedRunner {
    pub name: String,
    pub checkpoint: Checkpoint,
    pub downstream: DownstreamConfig,
}

impl MethodRunner for PretrainedRunner {
    fn name(&self) -> &str {
        &self.name
    }

    fn run(
        &self,
        train: &LabeledDataset,
        eval: &LabeledDataset,
        seed: u64,
    ) -> Result<Vec<f64>, TrainError> {
        let cfg = self.downstream.with_seed(seed);
        match cfg.regime {
            Regime::Finetune => {
                let (model, head) =
                    finetune(Initialization::Pretrained(&self.checkpoint), train, &cfg)?;
                predict_scores(&model, &head, eval.features())
            }
            Regime::LinearProbe => {
                let head = linear_probe(&self.checkpoint, train, &cfg)?;
                predict_scores(&self.checkpoint.backbone(), &head, eval.features())
            }
        }
    }
}

/// Downstream training from random initialization (always fine-tuned: with a
/// frozen random encoder a probe would be the only trained part, which is the
/// zero-information arm already covered by chance-level checks).
pub struct ScratchRunner {
    pub name: String,
    pub arch: EncoderArch,
    pub downstream: DownstreamConfig,
}

impl MethodRunner for ScratchRunner {
    fn name(&self) -> &str {
        &self.name
    }

    fn run(
        &self,
        train: &LabeledDataset,
        eval: &LabeledDataset,
        seed: u64,
    ) -> Result<Vec<f64>, TrainError> {
        let cfg = self.downstream.with_seed(seed);
        let (model, head) = finetune(Initialization::Scratch(&self.arch), train, &cfg)?;
        predict_scores(&model, &head, eval.features())
    }
}

/// Per-method outcome of the repeated k-fold protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub method: String,
    /// `fold_aucs[r][f]` is the AUC of fold `f` in repeat `r`.
    pub fold_aucs: Vec<Vec<f64>>,
    /// Mean of the fold AUCs per repeat.
    pub summaries: Vec<f64>,
    pub partition_fingerprint: u64,
    pub config_fingerprint: u64,
}

impl CvReport {
    pub fn mean_auc(&self) -> f64 {
        self.summaries.iter().sum::<f64>() / self.summaries.len() as f64
    }
}

/// Run the repeated k-fold protocol for one method against a fixed partition.
///
/// Repeat `r` trains with seed `base_seed + r` on every fold while the fold
/// memberships stay identical across repeats and methods.
pub fn repeated_cv(
    task: &LabeledDataset,
    runner: &dyn MethodRunner,
    partition: &FoldPartition,
    repeats: usize,
    base_seed: u64,
    config_fingerprint: u64,
) -> Result<CvReport, EvalError> {
    if partition.len() != task.len() {
        return Err(EvalError::PartitionMismatch {
            partition: partition.len(),
            task: task.len(),
        });
    }
    let mut fold_aucs = Vec::with_capacity(repeats);
    let mut summaries = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let seed = base_seed + r as u64;
        let mut aucs = Vec::with_capacity(partition.k());
        for f in 0..partition.k() {
            let train_set = task.subset(&partition.train_indices(f));
            let eval_idx = partition.fold_indices(f);
            let eval_set = task.subset(&eval_idx);
            let scores = runner.run(&train_set, &eval_set, seed)?;
            aucs.push(auc(&scores, eval_set.labels())?);
        }
        summaries.push(aucs.iter().sum::<f64>() / aucs.len() as f64);
        fold_aucs.push(aucs);
    }
    Ok(CvReport {
        method: runner.name().to_string(),
        fold_aucs,
        summaries,
        partition_fingerprint: partition.fingerprint(),
        config_fingerprint,
    })
}

/// Full evaluation outcome: per-method reports plus pairwise comparisons
/// against the proposed method.
#[derive(Debug, Clone)]
pub struct EvaluationOutcome {
    pub reports: Vec<CvReport>,
    pub comparisons: Vec<ComparisonResult>,
    pub proposed: String,
    pub partition_fingerprint: u64,
    pub folds: usize,
    pub repeats: usize,
    pub partition_seed: u64,
    /// Advisory notes, e.g. a positive mean gap that failed significance.
    pub flags: Vec<String>,
}

/// Run the configured method comparison end to end.
///
/// Pretraining happens once per method (seeded by method identity); the
/// repeated CV then reuses one shared partition and one shared repeat seed
/// stream, so fold memberships are structurally identical across methods.
pub fn run_evaluation(
    cfg: &RunConfig,
    pretrain_corpus: Option<&PretrainDataset>,
    task: &LabeledDataset,
) -> Result<EvaluationOutcome, EvalError> {
    let folds = cfg.evaluate.folds;
    let repeats = cfg.evaluate.repeats;
    let partition_seed = derive_seed(cfg.seed, "fold", 0);
    let partition = kfold_split(task.labels(), folds, partition_seed)?;
    let config_fingerprint = cfg.fingerprint();
    let cv_seed = derive_seed(cfg.seed, "cv", 0);

    let mut reports = Vec::with_capacity(cfg.evaluate.methods.len());
    for name in &cfg.evaluate.methods {
        let runner: Box<dyn MethodRunner> = if name == "scratch" {
            Box::new(ScratchRunner {
                name: name.clone(),
                arch: cfg.encoder_arch(),
                downstream: cfg.downstream_config(0),
            })
        } else {
            let method = PretrainMethod::parse(name).expect("validated");
            let corpus = pretrain_corpus.ok_or_else(|| EvalError::MissingCorpus(name.clone()))?;
            let pcfg =
                cfg.pretrain_config(method, derive_seed(cfg.seed, "pretrain", method.stable_id()));
            let (checkpoint, _log) = pretrain(corpus, &pcfg)?;
            Box::new(PretrainedRunner {
                name: name.clone(),
                checkpoint,
                downstream: cfg.downstream_config(0),
            })
        };
        let report = repeated_cv(
            task,
            runner.as_ref(),
            &partition,
            repeats,
            cv_seed,
            config_fingerprint,
        )?;
        reports.push(report);
    }

    // Identical fold memberships across methods is structural; keep it
    // asserted so a refactor cannot silently break the protocol.
    for r in &reports {
        assert_eq!(
            r.partition_fingerprint,
            partition.fingerprint(),
            "method {} saw a different partition",
            r.method
        );
    }

    let proposed = cfg.proposed_method();
    let proposed_report = reports
        .iter()
        .find(|r| r.method == proposed)
        .expect("proposed method is evaluated");
    let mut comparisons = Vec::new();
    let mut flags = Vec::new();
    for report in &reports {
        let test = wilcoxon_signed_rank(&proposed_report.summaries, &report.summaries)?;
        let comparison = ComparisonResult::from_test(&proposed, &report.method, test);
        if report.method != proposed {
            let gap = proposed_report.mean_auc() - report.mean_auc();
            if gap > 0.0 && comparison.p_value >= 0.05 {
                flags.push(format!(
                    "{} leads {} by {:.6} mean AUC but p={:.6} is not significant at 0.05",
                    proposed, report.method, gap, comparison.p_value
                ));
            }
        }
        comparisons.push(comparison);
    }

    Ok(EvaluationOutcome {
        reports,
        comparisons,
        proposed,
        partition_fingerprint: partition.fingerprint(),
        folds,
        repeats,
        partition_seed,
        flags,
    })
}

/// Render the comparison table:
/// `method<TAB>mean_auc<TAB>p_vs_proposed`, one row per method, 6 decimals.
/// Header comments document the partition (folds are stratified by the
/// binary label) and carry any advisory flags.
pub fn render_report(outcome: &EvaluationOutcome) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# partition\tk={}\tstratified=binary-label\tseed={}\tfingerprint={:016x}\n",
        outcome.folds, outcome.partition_seed, outcome.partition_fingerprint
    ));
    out.push_str(&format!("# repeats\t{}\n", outcome.repeats));
    out.push_str(&format!("# proposed\t{}\n", outcome.proposed));
    for flag in &outcome.flags {
        out.push_str(&format!("# flag\t{flag}\n"));
    }
    out.push_str("method\tmean_auc\tp_vs_proposed\n");
    for report in &outcome.reports {
        let p = if report.method == outcome.proposed {
            "-".to_string()
        } else {
            let c = outcome
                .comparisons
                .iter()
                .find(|c| c.method_b == report.method)
                .expect("every method is compared");
            format!("{:.6}", c.p_value)
        };
        out.push_str(&format!(
            "{}\t{:.6}\t{}\n",
            report.method,
            report.mean_auc(),
            p
        ));
    }
    out
}
