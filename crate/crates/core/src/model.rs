//! Encoder + decoder with the joint training objective.

use std::cell::RefCell;

use slt_tensor::{no_grad, NormMode, RunningStats, Tensor};

use crate::config::ModelConfig;
use crate::data::vocab::PAD;
use crate::decoder::Decoder;
use crate::encoder::{Encoder, EncoderOutput};
use crate::error::{Error, Result};
use crate::layers::{Module, NamedParams};
use crate::losses::{cross_entropy, ctc_loss, joint_loss, LossReport};

#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Model {
    /// `gloss_classes` includes the blank.
    pub fn new(config: &ModelConfig, text_vocab: usize, gloss_classes: usize) -> Result<Self> {
        if gloss_classes < 2 || text_vocab < 5 {
            return Err(Error::config(format!(
                "vocabularies too small: {text_vocab} text tokens, {gloss_classes} gloss classes"
            )));
        }
        Ok(Model {
            config: config.clone(),
            encoder: Encoder::new(config, gloss_classes - 1)?,
            decoder: Decoder::new(config, text_vocab)?,
        })
    }

    /// Every trainable tensor, encoder first, in a fixed order.
    pub fn params(&self) -> NamedParams {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    pub fn norm_stats(&self) -> Vec<(String, &RefCell<RunningStats>)> {
        let mut out = Vec::new();
        self.collect_norm_stats("", &mut out);
        out
    }

    pub fn zero_grad(&self) {
        for (_, p) in self.params() {
            p.zero_grad();
        }
    }

    pub fn encode(&self, frames: &Tensor, mode: NormMode) -> Result<EncoderOutput> {
        self.encoder.forward(frames, mode)
    }

    /// Teacher-forced joint loss for one sample; `text` is `BOS … EOS`.
    pub fn loss(&self, frames: &Tensor, glosses: &[usize], text: &[usize], mode: NormMode) -> Result<(Tensor, LossReport)> {
        if text.len() < 2 {
            return Err(Error::Contract(format!("target text {text:?} has nothing after BOS")));
        }
        let enc = self.encode(frames, mode)?;
        let logits = self.decoder.forward(&enc.memory, &text[..text.len() - 1])?;
        let ce = cross_entropy(&logits, &text[1..], PAD)?;
        let ctc = match &enc.gloss_log_probs {
            Some(lp) => Some(ctc_loss(lp, glosses)?),
            None => None,
        };
        joint_loss(&ce, ctc.as_ref(), self.config.lambda_ctc)
    }

    /// Greedy translation with batch norm on running statistics.
    pub fn translate(&self, frames: &Tensor) -> Result<Vec<usize>> {
        no_grad(|| {
            let enc = self.encode(frames, NormMode::Eval)?;
            self.decoder.greedy_decode(&enc.memory, self.config.max_len)
        })
    }
}

impl Module for Model {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        self.encoder.collect_params(&crate::layers::join(prefix, "encoder"), out);
        self.decoder.collect_params(&crate::layers::join(prefix, "decoder"), out);
    }

    fn collect_norm_stats<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a RefCell<RunningStats>)>) {
        self.encoder.collect_norm_stats(&crate::layers::join(prefix, "encoder"), out);
    }
}
