//! Seeded training loop, greedy evaluation and resumable runs.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use serde_json::{json, Value};
use slt_tensor::{NormMode, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::data::corpus::Split;
use crate::data::io::SampleRecord;
use crate::data::vocab::Vocabularies;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::NamedParams;
use crate::metrics::{corpus_bleu, BleuReport, Smoothing};
use crate::model::Model;
use crate::optim::Adam;
use crate::rng::{rng_for, Stream};

pub const LOG_FILE: &str = "train.log";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// A sample ready for the model.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub frames: Tensor,
    pub glosses: Vec<usize>,
    pub text: Vec<usize>,
}

pub fn prepare(records: &[SampleRecord]) -> Result<Vec<Prepared>> {
    records
        .iter()
        .map(|r| {
            Ok(Prepared { frames: r.frames_tensor()?, glosses: r.gloss_ids.clone(), text: r.text_ids.clone() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub ce: f64,
    pub ctc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub hypothesis: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: BleuReport,
    pub transcripts: Vec<Transcript>,
}

impl Evaluation {
    pub fn to_json(&self, split: Split) -> Value {
        let mut v = self.report.to_json();
        v["split"] = json!(split.name());
        v["transcripts"] = self
            .transcripts
            .iter()
            .map(|t| json!({"hypothesis": t.hypothesis, "reference": t.reference}))
            .collect();
        v
    }
}

/// Greedy-decodes every sample and scores the corpus.
pub fn evaluate_model(model: &Model, vocab: &Vocabularies, data: &[Prepared]) -> Result<Evaluation> {
    let mut hyps = Vec::with_capacity(data.len());
    let mut refs = Vec::with_capacity(data.len());
    let mut transcripts = Vec::with_capacity(data.len());
    for sample in data {
        let decoded = model.translate(&sample.frames)?;
        hyps.push(vocab.text.content_words(&decoded)?);
        refs.push(vocab.text.content_words(&sample.text)?);
        transcripts.push(Transcript {
            hypothesis: vocab.text.render(&decoded)?,
            reference: vocab.text.render(&sample.text)?,
        });
    }
    let report = corpus_bleu(&hyps, &refs, 4, Smoothing::default())?;
    Ok(Evaluation { report, transcripts })
}

pub struct Trainer {
    pub model: Model,
    pub optimizer: Adam,
    pub vocab: Vocabularies,
    pub epoch: usize,
    pub corpus_hash: Option<String>,
    params: NamedParams,
}

impl Trainer {
    pub fn new(config: &ModelConfig, vocab: Vocabularies, corpus_hash: Option<String>) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config, vocab.text.len(), vocab.gloss.len())?;
        let params = model.params();
        let optimizer = Adam::new(config.optimizer.clone(), &params);
        Ok(Trainer { model, optimizer, vocab, epoch: 0, corpus_hash, params })
    }

    /// Continues from `checkpoint`; `config` may differ from the saved one
    /// only in its epoch budget.
    pub fn resume(checkpoint: &Checkpoint, config: &ModelConfig) -> Result<Self> {
        let mut saved = checkpoint.config.clone();
        saved.epochs = config.epochs;
        if &saved != config {
            return Err(Error::config("resume config differs from the checkpoint in more than `epochs`"));
        }
        let (mut model, optimizer) = checkpoint.restore()?;
        model.config.epochs = config.epochs;
        let params = model.params();
        Ok(Trainer {
            model,
            optimizer,
            vocab: checkpoint.vocab.clone(),
            epoch: checkpoint.epoch,
            corpus_hash: checkpoint.corpus_hash.clone(),
            params,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, &self.optimizer, &self.vocab, self.epoch, self.corpus_hash.clone())
    }

    /// One optimisation step on one sample.
    pub fn step(&mut self, sample: &Prepared) -> Result<(f64, Option<f64>)> {
        for (_, p) in &self.params {
            p.zero_grad();
        }
        let (loss, report) = self.model.loss(&sample.frames, &sample.glosses, &sample.text, NormMode::Train)?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite(format!("loss is {} at epoch {}", report.total, self.epoch + 1)));
        }
        loss.backward()?;
        self.optimizer.step(&self.params)?;
        Ok((report.ce, report.ctc))
    }

    /// One pass over `data` in the seeded order of the current epoch;
    /// returns mean losses and advances the epoch counter.
    pub fn train_epoch(&mut self, data: &[Prepared]) -> Result<EpochLosses> {
        if data.is_empty() {
            return Err(Error::config("no training samples"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_for(self.model.config.seed, Stream::DataOrder, self.epoch as u64));
        let (mut ce, mut ctc, mut has_ctc) = (0.0, 0.0, false);
        for &i in &order {
            let (c, g) = self.step(&data[i])?;
            ce += c;
            if let Some(g) = g {
                ctc += g;
                has_ctc = true;
            }
        }
        self.epoch += 1;
        let n = data.len() as f64;
        Ok(EpochLosses { ce: ce / n, ctc: has_ctc.then_some(ctc / n) })
    }

    pub fn evaluate(&self, data: &[Prepared]) -> Result<Evaluation> {
        evaluate_model(&self.model, &self.vocab, data)
    }
}

/// `epoch 3 ce 1.234567 [ctc 2.345678] dev_bleu1 … dev_bleu4 …`.
pub fn log_line(epoch: usize, losses: &EpochLosses, dev: Option<&BleuReport>) -> String {
    let mut line = format!("epoch {epoch} ce {:.6}", losses.ce);
    if let Some(ctc) = losses.ctc {
        line += &format!(" ctc {ctc:.6}");
    }
    if let Some(dev) = dev {
        for (i, b) in dev.bleu.iter().enumerate() {
            line += &format!(" dev_bleu{} {b:.6}", i + 1);
        }
    }
    line
}

/// Training samples honouring `max_train_samples`.
pub fn training_records(dataset: &Dataset, config: &ModelConfig) -> Result<Vec<SampleRecord>> {
    let mut train = dataset.load_split(config.input_kind, Split::Train)?;
    if let Some(n) = config.max_train_samples {
        train.truncate(n);
    }
    Ok(train)
}

/// Samples of `split`; the training split honours `max_train_samples`.
pub fn split_records(dataset: &Dataset, config: &ModelConfig, split: Split) -> Result<Vec<SampleRecord>> {
    match split {
        Split::Train => training_records(dataset, config),
        _ => dataset.load_split(config.input_kind, split),
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs: usize,
    pub last: Option<EpochLosses>,
}

/// Trains (or resumes) into `out_dir`, appending one line per epoch to
/// `train.log` and rewriting `checkpoint.bin` after each epoch, so a failure
/// leaves the last good checkpoint in place.
pub fn run_training(config: &ModelConfig, dataset: &Dataset, out_dir: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    config.validate()?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.vocab != dataset.vocab {
                return Err(Error::config("checkpoint vocabulary differs from the dataset vocabulary"));
            }
            Trainer::resume(&ckpt, config)?
        }
        None => Trainer::new(config, dataset.vocab.clone(), dataset.hash.clone())?,
    };
    let train = prepare(&training_records(dataset, config)?)?;
    let dev = prepare(&dataset.load_split(config.input_kind, Split::Dev)?)?;
    if !out_dir.is_dir() {
        std::fs::create_dir(out_dir).map_err(|e| Error::io(out_dir, e))?;
    }
    let log_path = out_dir.join(LOG_FILE);
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut last = None;
    while trainer.epoch < config.epochs {
        let losses = trainer.train_epoch(&train)?;
        let dev_eval = if dev.is_empty() { None } else { Some(trainer.evaluate(&dev)?) };
        let line = log_line(trainer.epoch, &losses, dev_eval.as_ref().map(|e| &e.report));
        info!("{line}");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        trainer.checkpoint().save(&ckpt_path)?;
        last = Some(losses);
    }
    if !ckpt_path.exists() {
        trainer.checkpoint().save(&ckpt_path)?;
    }
    Ok(TrainSummary { checkpoint: ckpt_path, log: log_path, epochs: trainer.epoch, last })
}

/// Loads a checkpoint and checks it against the dataset's vocabulary.
pub fn load_for_dataset(checkpoint: &Path, dataset: &Dataset) -> Result<(Model, Checkpoint)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.vocab != dataset.vocab {
        return Err(Error::config(format!(
            "{} was trained with a different vocabulary than {}",
            checkpoint.display(),
            dataset.dir.display()
        )));
    }
    let (model, _) = ckpt.restore()?;
    Ok((model, ckpt))
}

pub fn run_evaluation(checkpoint: &Path, dataset: &Dataset, split: Split) -> Result<Evaluation> {
    let (model, ckpt) = load_for_dataset(checkpoint, dataset)?;
    let data = prepare(&split_records(dataset, &ckpt.config, split)?)?;
    if data.is_empty() {
        return Err(Error::config(format!("split `{}` has no {} samples", split.name(), ckpt.config.input_kind.name())));
    }
    evaluate_model(&model, &ckpt.vocab, &data)
}
