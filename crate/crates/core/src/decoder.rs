//! Single post-norm Transformer decoder layer and greedy decoding.

use rand::Rng;
use slt_tensor::{no_grad, Tensor};

use crate::attention::{causal_mask, KeyValues, MultiHeadAttention};
use crate::config::ModelConfig;
use crate::data::vocab::{BOS, EOS, PAD};
use crate::encoder::init_stream;
use crate::error::{Error, Result};
use crate::layers::{join, LayerNorm, Linear, Module, NamedParams};
use crate::rng::{rng_for, Stream};

/// Standard 1-D sinusoidal table `[len, d]`.
pub fn positional_table(len: usize, d: usize) -> Vec<f64> {
    let mut table = vec![0.0; len * d];
    for pos in 0..len {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            table[pos * d + i] = angle.sin();
            if i + 1 < d {
                table[pos * d + i + 1] = angle.cos();
            }
        }
    }
    table
}

#[derive(Debug, Clone)]
pub struct DecoderOutput {
    /// `[L, V_text]`.
    pub logits: Tensor,
    /// Per head, `[L, L]` row-major.
    pub self_attention: Vec<Vec<f64>>,
    /// Per head, `[L, T]` row-major.
    pub cross_attention: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub embedding: Tensor,
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm3: LayerNorm,
    pub output: Linear,
}

impl Decoder {
    pub fn new(config: &ModelConfig, text_vocab: usize) -> Result<Self> {
        let d = config.d_model()?;
        let mut rng = rng_for(config.seed, Stream::Init, init_stream::DECODER);
        let embedding_data = (0..text_vocab * d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Ok(Decoder {
            embedding: Tensor::param(embedding_data, &[text_vocab, d])?,
            self_attn: MultiHeadAttention::new(&mut rng, d, config.heads)?,
            norm1: LayerNorm::new(d),
            cross_attn: MultiHeadAttention::new(&mut rng, d, config.heads)?,
            norm2: LayerNorm::new(d),
            ffn_in: Linear::new(&mut rng, d, config.d_ff),
            ffn_out: Linear::new(&mut rng, config.d_ff, d),
            norm3: LayerNorm::new(d),
            output: Linear::new(&mut rng, d, text_vocab),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    pub fn d_model(&self) -> usize {
        self.embedding.shape()[1]
    }

    pub fn heads(&self) -> usize {
        self.self_attn.heads
    }

    /// Cross-attention keys and values for `memory`; compute once per
    /// sample and reuse across decoding steps.
    pub fn cross_cache(&self, memory: &Tensor) -> Result<KeyValues> {
        self.cross_attn.project_kv(memory, memory)
    }

    fn check_prefix(&self, prefix: &[usize]) -> Result<()> {
        if prefix.first() != Some(&BOS) {
            return Err(Error::Contract(format!("decoder prefix must start with BOS, got {prefix:?}")));
        }
        let size = self.vocab_size();
        if let Some(&id) = prefix.iter().find(|&&id| id >= size) {
            return Err(Error::Vocabulary { id, size });
        }
        Ok(())
    }

    pub fn forward_cached(&self, cross: &KeyValues, prefix: &[usize]) -> Result<DecoderOutput> {
        self.check_prefix(prefix)?;
        let len = prefix.len();
        let d = self.d_model();
        let positions = Tensor::new(positional_table(len, d), &[len, d])?;
        let x = self.embedding.embedding(prefix)?.add(&positions)?;

        let sa = self.self_attn.forward(&x, &x, &x, Some(&causal_mask(len)))?;
        let x = self.norm1.forward(&x.add(&sa.output)?)?;
        let ca = self.cross_attn.attend(&x, cross, None)?;
        let x = self.norm2.forward(&x.add(&ca.output)?)?;
        let ff = self.ffn_out.forward(&self.ffn_in.forward(&x)?.relu())?;
        let x = self.norm3.forward(&x.add(&ff)?)?;
        Ok(DecoderOutput {
            logits: self.output.forward(&x)?,
            self_attention: sa.head_weights,
            cross_attention: ca.head_weights,
        })
    }

    /// Logits `[L, V_text]` for `prefix` (which must start with BOS).
    pub fn forward(&self, memory: &Tensor, prefix: &[usize]) -> Result<Tensor> {
        Ok(self.forward_cached(&self.cross_cache(memory)?, prefix)?.logits)
    }

    /// Appends the arg-max token until EOS or `max_len` generated tokens.
    /// PAD and BOS are never produced; ties go to the lowest id. The result
    /// starts with BOS.
    pub fn greedy_decode(&self, memory: &Tensor, max_len: usize) -> Result<Vec<usize>> {
        no_grad(|| {
            let cross = self.cross_cache(memory)?;
            let mut tokens = vec![BOS];
            while tokens.len() <= max_len {
                let logits = self.forward_cached(&cross, &tokens)?.logits;
                let v = self.vocab_size();
                let data = logits.data();
                let last = &data[(tokens.len() - 1) * v..tokens.len() * v];
                let next = argmax_excluding(last, &[PAD, BOS]);
                drop(data);
                tokens.push(next);
                if next == EOS {
                    break;
                }
            }
            Ok(tokens)
        })
    }
}

/// Index of the largest value outside `excluded`, lowest index on ties.
/// NaN never wins.
pub fn argmax_excluding(values: &[f64], excluded: &[usize]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if excluded.contains(&i) {
            continue;
        }
        match best {
            Some((_, b)) if !(v > b) => {}
            _ if v.is_nan() => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(EOS, |(i, _)| i)
}

impl Module for Decoder {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "embedding"), self.embedding.clone()));
        self.self_attn.collect_params(&join(prefix, "self_attn"), out);
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.cross_attn.collect_params(&join(prefix, "cross_attn"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
        self.ffn_in.collect_params(&join(prefix, "ffn_in"), out);
        self.ffn_out.collect_params(&join(prefix, "ffn_out"), out);
        self.norm3.collect_params(&join(prefix, "norm3"), out);
        self.output.collect_params(&join(prefix, "output"), out);
    }
}
