use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ltmlc::cli::{load_config, run, CliCommand};
use ltmlc::inference::EnsembleMode;
use ltmlc::Error;

#[derive(Parser)]
#[command(
    name = "ltmlc",
    about = "Long-tailed multi-label classification laboratory",
    after_help = "Global configuration is one JSON document (--config) with sections \
synth, model, train, augment, tta, ensemble, ablate. Any key can be overridden \
with --set section.key=value (value parsed as JSON). Unknown keys are rejected. \
LTMLC_THREADS caps internal parallelism; all commands are single-threaded and \
bit-deterministic, so every cap (including 0) is honored."
)]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.base_lr=0.001 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Commands,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    ModelWise,
    ClassWise,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate a synthetic long-tailed dataset (train/dev/test splits).
    #[command(after_help = "Config keys consumed: synth.num_classes, synth.p_head, \
synth.imbalance_ratio, synth.cooc_pairs, synth.image_size, synth.noise_std, \
synth.seed, synth.n_train, synth.n_dev, synth.n_test.")]
    GenerateData {
        /// Output directory; writes vocab.txt and train/dev/test subdirs.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model on a generated dataset and write a checkpoint.
    #[command(after_help = "Config keys consumed: model.feature_dim, \
model.num_decoder_layers, model.num_heads, model.head_mode, model.encoder_widths, \
model.input_height, model.input_width, model.embedding_source, train.epochs, \
train.warmup_epochs, train.base_lr, train.warmup_lr, train.batch_size, \
train.mixup_alpha, train.weight_decay, train.seed, train.class_weights, and the \
augment.* section (resize_crop, horizontal_flip, rotation, seed).")]
    Train {
        /// Dataset directory produced by generate-data.
        #[arg(long)]
        data_dir: PathBuf,
        /// Output directory for checkpoint.ltmlc and history.csv.
        #[arg(long)]
        out_dir: PathBuf,
        /// Optional class,weight CSV overriding train.class_weights.
        #[arg(long)]
        class_weights: Option<PathBuf>,
    },
    /// Score a dataset split with a trained checkpoint.
    #[command(after_help = "Consumes no config keys; the checkpoint carries its \
run config. --tta reads a transform bank JSON {merge, transforms}.")]
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split directory holding labels.csv and images/.
        #[arg(long)]
        data_dir: PathBuf,
        /// Output prediction CSV.
        #[arg(long)]
        out: PathBuf,
        /// Transform bank JSON enabling test-time augmentation.
        #[arg(long)]
        tta: Option<PathBuf>,
    },
    /// Evaluate a prediction CSV against labels; writes class,ap,positives
    /// rows plus a final mAP line.
    #[command(after_help = "Consumes no config keys.")]
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Label CSV (image_id,path,<classes>) aligned with the predictions.
        #[arg(long)]
        labels: PathBuf,
        /// Output report CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine prediction matrices model-wise or class-wise.
    #[command(after_help = "Config keys consumed as flag defaults: ensemble.mode, \
ensemble.k. Dev predictions select models (per class for class-wise, globally \
for model-wise); k defaults to 3 for class-wise and all models for model-wise.")]
    Ensemble {
        /// Overrides ensemble.mode from the config.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Models kept per class (class-wise) or overall (model-wise).
        #[arg(long)]
        k: Option<usize>,
        /// Per-model development prediction CSVs, in model order.
        #[arg(long = "dev-preds", num_args = 1.., required = true)]
        dev_preds: Vec<PathBuf>,
        /// Development label CSV.
        #[arg(long)]
        dev_labels: PathBuf,
        /// Per-model test prediction CSVs, same model order.
        #[arg(long = "test-preds", num_args = 1.., required = true)]
        test_preds: Vec<PathBuf>,
        /// Output prediction CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Map an external label CSV into a target vocabulary, zero-filling
    /// unmapped classes and prefixing image ids with ext_.
    #[command(after_help = "Consumes no config keys. The mapping CSV has header \
source,target; the target vocabulary file is one class name per line.")]
    Harmonize {
        /// External label CSV.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long)]
        target_vocab: PathBuf,
        /// Output harmonized label CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every on/off combination of the configured trick toggles and
    /// write a dev-mAP grid CSV.
    #[command(after_help = "Config keys consumed: everything train consumes, plus \
ablate.toggles (subset of separate_classifier, reweighting, mixup, tta), \
ablate.reweight_k, ablate.reweight_factor, and the tta.* bank for TTA cells. \
Without --data-dir the synth.* section generates the dataset in memory.")]
    Ablate {
        /// Optional dataset directory; default generates from synth config.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Output grid CSV.
        #[arg(long)]
        out: PathBuf,
    },
}

fn to_command(commands: Commands) -> CliCommand {
    match commands {
        Commands::GenerateData { out_dir } => CliCommand::GenerateData { out_dir },
        Commands::Train {
            data_dir,
            out_dir,
            class_weights,
        } => CliCommand::Train {
            data_dir,
            out_dir,
            class_weights,
        },
        Commands::Predict {
            checkpoint,
            data_dir,
            out,
            tta,
        } => CliCommand::Predict {
            checkpoint,
            data_dir,
            out,
            tta,
        },
        Commands::Evaluate {
            predictions,
            labels,
            out,
        } => CliCommand::Evaluate {
            predictions,
            labels,
            out,
        },
        Commands::Ensemble {
            mode,
            k,
            dev_preds,
            dev_labels,
            test_preds,
            out,
        } => CliCommand::Ensemble {
            mode: mode.map(|m| match m {
                ModeArg::ModelWise => EnsembleMode::ModelWise,
                ModeArg::ClassWise => EnsembleMode::ClassWise,
            }),
            k,
            dev_preds,
            dev_labels,
            test_preds,
            out,
        },
        Commands::Harmonize {
            labels,
            mapping,
            target_vocab,
            out,
        } => CliCommand::Harmonize {
            labels,
            mapping,
            target_vocab,
            out,
        },
        Commands::Ablate { data_dir, out } => CliCommand::Ablate { data_dir, out },
    }
}

fn fail(error: &Error) -> ExitCode {
    let (code, pointer) = match error {
        Error::Config { pointer, .. } => (2u8, Some(pointer.clone())),
        _ => (1u8, None),
    };
    let mut body = serde_json::json!({"error": error.to_string()});
    if let Some(p) = pointer {
        body["pointer"] = serde_json::Value::String(p);
    }
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Ok(threads) = std::env::var("LTMLC_THREADS") {
        if threads.parse::<usize>().is_err() {
            return fail(&Error::Config {
                pointer: "/LTMLC_THREADS".into(),
                msg: format!("'{threads}' is not a thread count"),
            });
        }
        // All commands run single-threaded and bit-deterministically, so
        // any cap (including 0, the strict deterministic mode) is honored.
    }

    let mut overrides = Vec::with_capacity(cli.set.len());
    for entry in &cli.set {
        match entry.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                return fail(&Error::Config {
                    pointer: "/".into(),
                    msg: format!("--set '{entry}' is not KEY=VALUE"),
                })
            }
        }
    }
    let config = match load_config(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match run(&to_command(cli.command), &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
