//! Command-line surface for pretraining, downstream training, and the
//! repeated cross-validation comparison.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, config, or input
//! data), 2 runtime error. All diagnostics go to standard error and name the
//! offending field.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use mulsupcon::config::ConfigError;
use mulsupcon::eval::{render_report, run_evaluation};
use mulsupcon::manifest::{manifest_from_pretrain, manifest_from_task, DataError, Manifest};
use mulsupcon::mat::Mat;
use mulsupcon::pca::project_2d;
use mulsupcon::persist::{load_checkpoint, save_checkpoint, PersistError};
use mulsupcon::synth::generate_hierarchical_corpus;
use mulsupcon::train::{
    finetune, linear_probe, predict_scores, pretrain, render_loss_log, Checkpoint, ClassifierHead,
    Initialization, PretrainMethod, Regime, TrainError,
};
use mulsupcon::RunConfig;

#[derive(Parser)]
#[command(
    name = "mulsupcon",
    version,
    about = "Metadata-driven multi-label contrastive pretraining and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain an encoder on a metadata-labeled manifest.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Pretraining corpus manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// mulsupcon | infonce | supcon | crossentropy (overrides config).
        #[arg(long)]
        method: Option<String>,
        /// Output directory for checkpoint.ckpt and loss.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune all layers on a binary task.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pretrained checkpoint; omit to train from scratch.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Binary task manifest (task_label column required).
        #[arg(long)]
        task: PathBuf,
        /// Output directory for model.ckpt and head.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a linear probe on a frozen pretrained encoder.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: PathBuf,
        /// Output directory for head.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated cross-validation comparison across methods.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Pretraining manifest (overrides config data.pretrain_manifest).
        #[arg(long)]
        pretrain_manifest: Option<PathBuf>,
        /// Task manifest (overrides config data.task_manifest).
        #[arg(long)]
        task_manifest: Option<PathBuf>,
        /// Report file: method<TAB>mean_auc<TAB>p_vs_proposed.
        #[arg(long)]
        out: PathBuf,
    },
    /// Project backbone embeddings of a manifest to 2-D.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output TSV: id, x, y.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic hierarchical corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory for pretrain.tsv and task.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cap each class of a manifest at a maximum row count.
    Cap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 100)]
        cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::EmptyCorpus
            | TrainError::MissingLabels { .. }
            | TrainError::LabelCardinality
            | TrainError::TooFewClasses(_)
            | TrainError::BadConfig { .. } => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime_io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("io error on {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| runtime_io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| runtime_io(path, e))
}

fn write_head(path: &Path, head: &ClassifierHead) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!("bias\t{}\n", head.bias()));
    out.push_str("weights");
    for w in head.weights() {
        out.push_str(&format!("\t{w}"));
    }
    out.push('\n');
    write_text(path, &out)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Pretrain {
            common,
            manifest,
            method,
            out,
        } => {
            let cfg = load_config(&common)?;
            let method = match method {
                Some(name) => PretrainMethod::parse(&name).ok_or_else(|| {
                    CliError::Validation(format!(
                        "invalid --method `{name}` (mulsupcon|infonce|supcon|crossentropy)"
                    ))
                })?,
                None => cfg.configured_pretrain_method(),
            };
            let corpus = Manifest::load(&manifest)?.to_pretrain_dataset()?;
            let pcfg = cfg.pretrain_config(method, cfg.seed);
            let (checkpoint, log) = pretrain(&corpus, &pcfg)?;
            ensure_dir(&out)?;
            save_checkpoint(&checkpoint, &out.join("checkpoint.ckpt"))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            write_text(&out.join("loss.tsv"), &render_loss_log(&log))?;
            println!(
                "pretrained {} for {} epochs on {} samples; final mean loss {:.6}",
                method.as_str(),
                pcfg.epochs,
                corpus.len(),
                log.last().map_or(f64::NAN, |e| e.mean_loss)
            );
            Ok(())
        }
        Command::Finetune {
            common,
            checkpoint,
            task,
            out,
        } => {
            let cfg = load_config(&common)?;
            let task_set = Manifest::load(&task)?.to_task_dataset()?;
            let mut dcfg = cfg.downstream_config(cfg.seed);
            dcfg.regime = Regime::Finetune;
            let arch = cfg.encoder_arch();
            let loaded: Option<Checkpoint> = match &checkpoint {
                Some(path) => Some(load_checkpoint(path)?),
                None => None,
            };
            let init = match &loaded {
                Some(c) => Initialization::Pretrained(c),
                None => Initialization::Scratch(&arch),
            };
            let source = loaded
                .as_ref()
                .map_or_else(|| "scratch".to_string(), |c| c.method.clone());
            let (model, head) = finetune(init, &task_set, &dcfg)?;
            let scores = predict_scores(&model, &head, task_set.features())?;
            let train_auc = mulsupcon::stats::auc(&scores, task_set.labels())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            ensure_dir(&out)?;
            let tuned = Checkpoint {
                model,
                method: format!("finetune:{source}"),
                seed: cfg.seed,
            };
            save_checkpoint(&tuned, &out.join("model.ckpt"))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            write_head(&out.join("head.tsv"), &head)?;
            println!("finetuned from {source}; training-set AUC {train_auc:.6}");
            Ok(())
        }
        Command::Probe {
            common,
            checkpoint,
            task,
            out,
        } => {
            let cfg = load_config(&common)?;
            let task_set = Manifest::load(&task)?.to_task_dataset()?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let mut dcfg = cfg.downstream_config(cfg.seed);
            dcfg.regime = Regime::LinearProbe;
            let head = linear_probe(&ckpt, &task_set, &dcfg)?;
            let scores = predict_scores(&ckpt.backbone(), &head, task_set.features())?;
            let train_auc = mulsupcon::stats::auc(&scores, task_set.labels())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            ensure_dir(&out)?;
            write_head(&out.join("head.tsv"), &head)?;
            println!(
                "probed frozen {} encoder; training-set AUC {train_auc:.6}",
                ckpt.method
            );
            Ok(())
        }
        Command::Evaluate {
            common,
            pretrain_manifest,
            task_manifest,
            out,
        } => {
            let cfg = load_config(&common)?;
            let task_path = task_manifest
                .or_else(|| cfg.data.task_manifest.clone())
                .ok_or_else(|| {
                    CliError::Validation(
                        "missing task manifest: pass --task-manifest or set data.task_manifest"
                            .into(),
                    )
                })?;
            let task = Manifest::load(&task_path)?.to_task_dataset()?;
            let needs_corpus = cfg.evaluate.methods.iter().any(|m| m != "scratch");
            let corpus = match pretrain_manifest.or_else(|| cfg.data.pretrain_manifest.clone()) {
                Some(path) => Some(Manifest::load(&path)?.to_pretrain_dataset()?),
                None if needs_corpus => {
                    return Err(CliError::Validation(
                        "missing pretraining manifest: pass --pretrain-manifest or set \
                         data.pretrain_manifest"
                            .into(),
                    ));
                }
                None => None,
            };
            let outcome = run_evaluation(&cfg, corpus.as_ref(), &task)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            write_text(&out, &render_report(&outcome))?;
            println!("wrote comparison of {} methods to {}", outcome.reports.len(), out.display());
            Ok(())
        }
        Command::Project {
            common,
            checkpoint,
            manifest,
            out,
        } => {
            let _cfg = load_config(&common)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let m = Manifest::load(&manifest)?;
            let backbone = ckpt.backbone();
            let mut rows = Mat::zeros(m.len(), backbone.backbone_dim());
            for (i, row) in m.rows().iter().enumerate() {
                let z = backbone
                    .embed(&row.features)
                    .map_err(|e| CliError::Validation(e.to_string()))?;
                rows.row_mut(i).copy_from_slice(&z);
            }
            let proj = project_2d(&rows).map_err(|e| CliError::Runtime(e.to_string()))?;
            let mut text = String::from("id\tx\ty\n");
            for (i, row) in m.rows().iter().enumerate() {
                text.push_str(&format!("{}\t{}\t{}\n", row.id, proj.at(i, 0), proj.at(i, 1)));
            }
            write_text(&out, &text)?;
            println!("projected {} embeddings to {}", m.len(), out.display());
            Ok(())
        }
        Command::Synth { common, out } => {
            let cfg = load_config(&common)?;
            let scfg = cfg.synth_config()?;
            let corpus = generate_hierarchical_corpus(&scfg)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            ensure_dir(&out)?;
            manifest_from_pretrain(&corpus)?.save(&out.join("pretrain.tsv"))?;
            manifest_from_task(&corpus)?.save(&out.join("task.tsv"))?;
            println!(
                "wrote {} pretraining rows and {} task rows to {}",
                corpus.pretrain.len(),
                corpus.downstream.len(),
                out.display()
            );
            Ok(())
        }
        Command::Cap {
            common,
            manifest,
            cap,
            out,
        } => {
            let cfg = load_config(&common)?;
            let m = Manifest::load(&manifest)?;
            let capped = m.cap_per_class(cap, cfg.seed)?;
            capped.save(&out)?;
            println!("kept {} of {} rows", capped.len(), m.len());
            Ok(())
        }
    }
}
