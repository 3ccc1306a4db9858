//! Binary checkpoints: model weights, batch-norm statistics and optimizer
//! state.
//!
//! Layout, little-endian: `"SLTC" | version u16 | header length u32 |
//! JSON header | f64 payload`. The payload holds every parameter in header
//! order, then each batch-norm layer's running mean and variance, then the
//! Adam first moments and second moments in parameter order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use slt_tensor::RunningStats;

use crate::config::ModelConfig;
use crate::data::vocab::{Vocabularies, Vocabulary};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::Adam;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SLTC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormEntry {
    name: String,
    channels: usize,
    momentum: f64,
    eps: f64,
    updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    epoch: usize,
    corpus_hash: Option<String>,
    text_vocab: Vec<String>,
    gloss_vocab: Vec<String>,
    params: Vec<TensorEntry>,
    norm_stats: Vec<NormEntry>,
    adam_step: u64,
}

/// Everything needed to resume training or reproduce evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub corpus_hash: Option<String>,
    pub vocab: Vocabularies,
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub norm_stats: Vec<(String, RunningStats)>,
    pub optimizer: Adam,
}

fn format_error(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), offset: offset as u64, msg: msg.into() }
}

impl Checkpoint {
    pub fn capture(model: &Model, optimizer: &Adam, vocab: &Vocabularies, epoch: usize, corpus_hash: Option<String>) -> Self {
        Checkpoint {
            config: model.config.clone(),
            epoch,
            corpus_hash,
            vocab: vocab.clone(),
            params: model.params().into_iter().map(|(n, t)| (n, t.shape().to_vec(), t.to_vec())).collect(),
            norm_stats: model.norm_stats().into_iter().map(|(n, s)| (n, s.borrow().clone())).collect(),
            optimizer: optimizer.clone(),
        }
    }

    /// Rebuilds the model and optimizer, checking every name and shape.
    pub fn restore(&self) -> Result<(Model, Adam)> {
        let model = Model::new(&self.config, self.vocab.text.len(), self.vocab.gloss.len())?;
        let params = model.params();
        if params.len() != self.params.len() {
            return Err(Error::config(format!(
                "checkpoint holds {} tensors, the configured model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((name, tensor), (saved_name, shape, data)) in params.iter().zip(&self.params) {
            if name != saved_name || tensor.shape() != shape.as_slice() {
                return Err(Error::config(format!(
                    "checkpoint tensor `{saved_name}` {shape:?} does not match model tensor `{name}` {:?}",
                    tensor.shape()
                )));
            }
            tensor.set_data(data)?;
        }
        let stats = model.norm_stats();
        if stats.len() != self.norm_stats.len() {
            return Err(Error::config("checkpoint batch-norm layers do not match the model"));
        }
        for ((name, cell), (saved_name, saved)) in stats.iter().zip(&self.norm_stats) {
            if name != saved_name || cell.borrow().channels() != saved.channels() {
                return Err(Error::config(format!("batch-norm layer `{saved_name}` does not match `{name}`")));
            }
            *cell.borrow_mut() = saved.clone();
        }
        let mut optimizer = self.optimizer.clone();
        optimizer.config = self.config.optimizer.clone();
        Ok((model, optimizer))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            corpus_hash: self.corpus_hash.clone(),
            text_vocab: self.vocab.text.tokens().to_vec(),
            gloss_vocab: self.vocab.gloss.tokens().to_vec(),
            params: self.params.iter().map(|(n, s, _)| TensorEntry { name: n.clone(), shape: s.clone() }).collect(),
            norm_stats: self
                .norm_stats
                .iter()
                .map(|(n, s)| NormEntry {
                    name: n.clone(),
                    channels: s.channels(),
                    momentum: s.momentum,
                    eps: s.eps,
                    updates: s.updates,
                })
                .collect(),
            adam_step: self.optimizer.step,
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |values: &[f64]| values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.params.iter().for_each(|(_, _, d)| put(d));
        for (_, s) in &self.norm_stats {
            put(&s.mean);
            put(&s.var);
        }
        self.optimizer.m.iter().for_each(|m| put(m));
        self.optimizer.v.iter().for_each(|v| put(v));
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(format_error(path, 0, "bad magic, not a checkpoint"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(format_error(path, 4, format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let header_end = 10usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| {
            format_error(path, 6, format!("header length {header_len} exceeds file size {}", bytes.len()))
        })?;
        let header: Header = serde_json::from_slice(&bytes[10..header_end])
            .map_err(|e| format_error(path, 10, format!("bad header: {e}")))?;

        let count = |shape: &[usize]| shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let mut expected = 0usize;
        for t in &header.params {
            expected = count(&t.shape)
                .and_then(|n| n.checked_mul(3))
                .and_then(|n| expected.checked_add(n))
                .ok_or_else(|| format_error(path, 10, "tensor sizes overflow"))?;
        }
        expected += header.norm_stats.iter().map(|s| 2 * s.channels).sum::<usize>();
        let payload = &bytes[header_end..];
        if payload.len() != expected * 8 {
            return Err(format_error(
                path,
                header_end,
                format!("payload holds {} bytes, header declares {}", payload.len(), expected * 8),
            ));
        }
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };

        let params: Vec<(String, Vec<usize>, Vec<f64>)> = header
            .params
            .iter()
            .map(|t| (t.name.clone(), t.shape.clone(), take(count(&t.shape).unwrap())))
            .collect();
        let norm_stats = header
            .norm_stats
            .iter()
            .map(|s| {
                let mean = take(s.channels);
                let var = take(s.channels);
                (s.name.clone(), RunningStats { mean, var, momentum: s.momentum, eps: s.eps, updates: s.updates })
            })
            .collect();
        let m = params.iter().map(|(_, _, d)| take(d.len())).collect();
        let v = params.iter().map(|(_, _, d)| take(d.len())).collect();
        let vocab = Vocabularies {
            text: Vocabulary::text(&header.text_vocab.iter().skip(4).map(String::as_str).collect::<Vec<_>>())?,
            gloss: Vocabulary::gloss(&header.gloss_vocab.iter().skip(1).map(String::as_str).collect::<Vec<_>>())?,
        };
        if vocab.text.tokens() != header.text_vocab.as_slice() || vocab.gloss.tokens() != header.gloss_vocab.as_slice() {
            return Err(format_error(path, 10, "vocabulary lacks the reserved tokens"));
        }
        header.config.validate()?;
        Ok(Checkpoint {
            optimizer: Adam { config: header.config.optimizer.clone(), step: header.adam_step, m, v },
            config: header.config,
            epoch: header.epoch,
            corpus_hash: header.corpus_hash,
            vocab,
            params,
            norm_stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write then rename so an interrupted save never clobbers the last good file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
