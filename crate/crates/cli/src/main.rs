//! `slt`: generate the synthetic corpus, train, evaluate, translate, run the
//! ablation grid, check gradients and dump attention maps.
//!
//! Reports are JSON on stdout (or in the `--out` file for single-report
//! commands); logs go to stderr. Exit status is 0 on success, 1 on a
//! configuration or contract error and 2 on a numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use slt_core::ablation::run_ablation;
use slt_core::config::ModelConfig;
use slt_core::data::corpus::Split;
use slt_core::data::io::load_sample;
use slt_core::data::{generate_dataset, CorpusSummary, Dataset};
use slt_core::dump::dump_attention;
use slt_core::gradsuite::run_suite;
use slt_core::train::{run_evaluation, run_training, TrainSummary};
use slt_core::{checkpoint::Checkpoint, Error, Result};

#[derive(Parser)]
#[command(name = "slt", version, about = "Sign-language translation on a synthetic corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON model configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus (RGB and optical flow) into a directory.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing corpus in `--out`.
        #[arg(long)]
        overwrite: bool,
    },
    /// Train a model, writing `train.log` and `checkpoint.bin` into `--out`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint up to the configured epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy-decode a split and report BLEU-1..4 with transcripts.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Translate one sample file.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the six ablation variants and tabulate their BLEU.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every layer and the end-to-end loss.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write encoder and decoder attention maps for one sample.
    DumpAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ModelConfig> {
    let mut config = match &common.config {
        Some(path) => ModelConfig::load(path)?,
        None => ModelConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn emit(report: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serialises") + "\n";
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn corpus_json(summary: &CorpusSummary, out: &Path) -> Value {
    let splits: serde_json::Map<String, Value> = summary
        .per_split
        .iter()
        .map(|(split, (sentences, samples))| {
            (split.name().to_string(), json!({"sentences": sentences, "samples": samples}))
        })
        .collect();
    json!({
        "dir": out.display().to_string(),
        "sentences": summary.sentences,
        "samples": summary.samples,
        "splits": splits,
        "hash": summary.hash,
    })
}

fn train_json(summary: &TrainSummary) -> Value {
    json!({
        "checkpoint": summary.checkpoint.display().to_string(),
        "log": summary.log.display().to_string(),
        "epochs": summary.epochs,
        "final_ce": summary.last.map(|l| l.ce),
        "final_ctc": summary.last.and_then(|l| l.ctc),
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, out, overwrite } => {
            let mut config = load_config(&common)?;
            // the seed flag picks the corpus here, not the model
            config.corpus.seed = common.seed.unwrap_or(config.corpus.seed);
            let summary = generate_dataset(&config.corpus, config.backbone.input_size, &out, overwrite)?;
            emit(&corpus_json(&summary, &out), None)
        }
        Command::Train { common, data, out, resume } => {
            let config = load_config(&common)?;
            let dataset = Dataset::open(&data)?;
            let summary = run_training(&config, &dataset, &out, resume.as_deref())?;
            emit(&train_json(&summary), None)
        }
        Command::Evaluate { checkpoint, data, split, out } => {
            let dataset = Dataset::open(&data)?;
            let evaluation = run_evaluation(&checkpoint, &dataset, split)?;
            emit(&evaluation.to_json(split), out.as_deref())
        }
        Command::Translate { checkpoint, sample, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (model, _) = ckpt.restore()?;
            let record = load_sample(&sample)?;
            if record.kind != model.config.input_kind {
                return Err(Error::config(format!(
                    "{} holds {} frames but the checkpoint expects {}",
                    sample.display(),
                    record.kind.name(),
                    model.config.input_kind.name()
                )));
            }
            let tokens = model.translate(&record.frames_tensor()?)?;
            let report = json!({
                "sample": sample.display().to_string(),
                "translation": ckpt.vocab.text.render(&tokens)?,
                "reference": ckpt.vocab.text.render(&record.text_ids)?,
                "tokens": tokens,
            });
            emit(&report, out.as_deref())
        }
        Command::Ablate { common, data, out } => {
            let config = load_config(&common)?;
            let dataset = Dataset::open(&data)?;
            let report = run_ablation(&config, &dataset, &out)?;
            let json = report.to_json();
            let table = report.to_table();
            let json_path = out.join("ablation.json");
            emit(&json, Some(&json_path))?;
            let table_path = out.join("ablation.md");
            std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
            eprint!("{table}");
            emit(&json, None)
        }
        Command::GradCheck { common, out } => {
            let config = load_config(&common)?;
            let report = run_suite(&config)?;
            emit(&report.to_json(), out.as_deref())?;
            if report.passed() {
                Ok(())
            } else {
                Err(Error::GradientCheck(format!(
                    "{} above tolerance {:e}",
                    report.failures().join(", "),
                    report.tolerance
                )))
            }
        }
        Command::DumpAttention { checkpoint, sample, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (model, _) = ckpt.restore()?;
            let record = load_sample(&sample)?;
            let summary = dump_attention(&model, &ckpt.vocab.text, &record, &out)?;
            emit(&summary.to_json(), None)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
