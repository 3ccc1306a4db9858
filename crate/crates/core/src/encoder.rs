//! Frames → backbone feature maps → optional 2-D positional encoding,
//! 2-D self-attention and convolutional FFN → flattened memory rows, plus
//! the per-frame gloss head for CTC.

use std::cell::RefCell;

use slt_tensor::{NormMode, RunningStats, Tensor};

use crate::attention::{AttentionMap, Attn2d};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{join, BatchNorm2d, Conv2d, Linear, Module, NamedParams};
use crate::posenc2d::PosEnc2D;
use crate::rng::{rng_for, Stream};

/// Init-stream indices, one per component, so switching a component off
/// leaves every other component's initial weights untouched.
pub(crate) mod init_stream {
    pub const BACKBONE: u64 = 0;
    pub const ATTN2D: u64 = 1;
    pub const FFN2D: u64 = 2;
    pub const GLOSS_HEAD: u64 = 3;
    pub const DECODER: u64 = 4;
}

/// Conv + ReLU stages applied to each frame independently.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub stages: Vec<Conv2d>,
    pub input_channels: usize,
    pub input_size: usize,
}

impl Backbone {
    pub fn new(config: &ModelConfig) -> Self {
        let mut rng = rng_for(config.seed, Stream::Init, init_stream::BACKBONE);
        let b = &config.backbone;
        let input_channels = config.input_kind.channels();
        let mut cin = input_channels;
        let stages = b
            .channels
            .iter()
            .map(|&cout| {
                let conv = Conv2d::new(&mut rng, cin, cout, b.kernel, b.stride, b.padding, true);
                cin = cout;
                conv
            })
            .collect();
        Backbone { stages, input_channels, input_size: b.input_size }
    }

    /// `[T, Cin, H0, W0]` → `[T, C, h, w]`.
    pub fn forward(&self, frames: &Tensor) -> Result<Tensor> {
        match *frames.shape() {
            [_, c, h, w] if c == self.input_channels && h == self.input_size && w == self.input_size => {}
            _ => {
                return Err(Error::config(format!(
                    "backbone expects [T, {}, {}, {}] frames, got {:?}",
                    self.input_channels,
                    self.input_size,
                    self.input_size,
                    frames.shape()
                )))
            }
        }
        let mut x = frames.clone();
        for stage in &self.stages {
            x = stage.forward(&x)?.relu();
        }
        Ok(x)
    }
}

impl Module for Backbone {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        for (i, stage) in self.stages.iter().enumerate() {
            stage.collect_params(&join(prefix, &format!("conv{i}")), out);
        }
    }
}

/// Two same-padding 3×3 convolutions `C → 2C → C`, each followed by batch
/// norm and ReLU. No residual connection.
#[derive(Debug)]
pub struct Ffn2d {
    pub expand: Conv2d,
    pub norm1: BatchNorm2d,
    pub contract: Conv2d,
    pub norm2: BatchNorm2d,
}

impl Ffn2d {
    pub fn new(config: &ModelConfig, channels: usize) -> Self {
        let mut rng = rng_for(config.seed, Stream::Init, init_stream::FFN2D);
        // biases would be cancelled by the following batch norm
        Ffn2d {
            expand: Conv2d::new(&mut rng, channels, 2 * channels, 3, 1, 1, false),
            norm1: BatchNorm2d::new(2 * channels),
            contract: Conv2d::new(&mut rng, 2 * channels, channels, 3, 1, 1, false),
            norm2: BatchNorm2d::new(channels),
        }
    }

    pub fn forward(&self, maps: &Tensor, mode: NormMode) -> Result<Tensor> {
        let x = self.norm1.forward(&self.expand.forward(maps)?, mode)?.relu();
        Ok(self.norm2.forward(&self.contract.forward(&x)?, mode)?.relu())
    }
}

impl Module for Ffn2d {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        self.expand.collect_params(&join(prefix, "expand"), out);
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.contract.collect_params(&join(prefix, "contract"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
    }

    fn collect_norm_stats<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a RefCell<RunningStats>)>) {
        self.norm1.collect_norm_stats(&join(prefix, "norm1"), out);
        self.norm2.collect_norm_stats(&join(prefix, "norm2"), out);
    }
}

/// Row-major flatten of each frame: `[T, C, h, w]` → `[T, C·h·w]`.
pub fn flatten_maps(maps: &Tensor) -> Result<Tensor> {
    Ok(maps.flatten_rows()?)
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[T, d_model]`.
    pub memory: Tensor,
    /// `[T, G + 1]` log-probabilities, blank at 0; present when the gloss
    /// head exists.
    pub gloss_log_probs: Option<Tensor>,
    /// One map per frame when 2-D attention is enabled.
    pub attention: Vec<AttentionMap>,
}

#[derive(Debug)]
pub struct Encoder {
    pub backbone: Backbone,
    pub pe: Option<PosEnc2D>,
    pub attn: Option<Attn2d>,
    pub ffn: Option<Ffn2d>,
    pub gloss_head: Option<Linear>,
}

impl Encoder {
    /// `gloss_vocab` counts real glosses; the head adds the blank.
    pub fn new(config: &ModelConfig, gloss_vocab: usize) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(config);
        let channels = config.backbone.output_channels();
        let grid = config.grid()?;
        let d_model = config.d_model()?;
        let pe = config.use_pe2d.then(|| PosEnc2D::new(channels, grid, grid)).transpose()?;
        let attn = config
            .use_attn2d
            .then(|| Attn2d::new(&mut rng_for(config.seed, Stream::Init, init_stream::ATTN2D), channels));
        let ffn = config.use_ffn2d.then(|| Ffn2d::new(config, channels));
        let gloss_head = config.gloss_supervision().then(|| {
            Linear::new(&mut rng_for(config.seed, Stream::Init, init_stream::GLOSS_HEAD), d_model, gloss_vocab + 1)
        });
        Ok(Encoder { backbone, pe, attn, ffn, gloss_head })
    }

    /// Feature maps after every enabled spatial component, before flattening.
    pub fn feature_maps(&self, frames: &Tensor, mode: NormMode) -> Result<(Tensor, Vec<AttentionMap>)> {
        let mut maps = self.backbone.forward(frames)?;
        if let Some(pe) = &self.pe {
            maps = pe.add_to(&maps)?;
        }
        let mut attention = Vec::new();
        if let Some(attn) = &self.attn {
            let (out, a) = attn.forward(&maps)?;
            maps = out;
            attention = a;
        }
        if let Some(ffn) = &self.ffn {
            maps = ffn.forward(&maps, mode)?;
        }
        Ok((maps, attention))
    }

    pub fn forward(&self, frames: &Tensor, mode: NormMode) -> Result<EncoderOutput> {
        let (maps, attention) = self.feature_maps(frames, mode)?;
        let memory = flatten_maps(&maps)?;
        let gloss_log_probs = match &self.gloss_head {
            Some(head) => Some(head.forward(&memory)?.log_softmax(1)?),
            None => None,
        };
        Ok(EncoderOutput { memory, gloss_log_probs, attention })
    }
}

impl Module for Encoder {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        self.backbone.collect_params(&join(prefix, "backbone"), out);
        if let Some(attn) = &self.attn {
            attn.collect_params(&join(prefix, "attn2d"), out);
        }
        if let Some(ffn) = &self.ffn {
            ffn.collect_params(&join(prefix, "ffn2d"), out);
        }
        if let Some(head) = &self.gloss_head {
            head.collect_params(&join(prefix, "gloss_head"), out);
        }
    }

    fn collect_norm_stats<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a RefCell<RunningStats>)>) {
        if let Some(ffn) = &self.ffn {
            ffn.collect_norm_stats(&join(prefix, "ffn2d"), out);
        }
    }
}
