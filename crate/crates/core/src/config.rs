//! Run configuration: architecture switches, geometry, optimisation and
//! corpus settings in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use slt_tensor::conv_output_extent;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Rgb,
    Flow,
}

impl InputKind {
    pub fn channels(self) -> usize {
        match self {
            InputKind::Rgb => 3,
            InputKind::Flow => 2,
        }
    }

    /// Byte stored in sample files.
    pub fn code(self) -> u8 {
        match self {
            InputKind::Rgb => 0,
            InputKind::Flow => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(InputKind::Rgb),
            1 => Some(InputKind::Flow),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputKind::Rgb => "rgb",
            InputKind::Flow => "flow",
        }
    }
}

/// Stack of conv + ReLU stages shared by every frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        // 32 -> 16 -> 8 -> 4 with kernel 4, stride 2, padding 1
        BackboneConfig { input_size: 32, channels: vec![8, 16, 16], kernel: 4, stride: 2, padding: 1 }
    }
}

impl BackboneConfig {
    /// Side of the square output grid.
    pub fn output_grid(&self) -> Result<usize> {
        let mut side = self.input_size;
        for (stage, _) in self.channels.iter().enumerate() {
            side = conv_output_extent(side, self.kernel, self.stride, self.padding).ok_or_else(|| {
                Error::config(format!(
                    "backbone stage {stage}: kernel {} stride {} padding {} does not tile a {side}-pixel input",
                    self.kernel, self.stride, self.padding
                ))
            })?;
        }
        Ok(side)
    }

    pub fn output_channels(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm cap on gradients; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub affirmative: usize,
    pub negative: usize,
    pub interrogative: usize,
    pub repetitions: usize,
    pub frames_per_gesture: usize,
    /// Blob speed in pixels per frame before jitter.
    pub speed: f64,
    /// Relative speed jitter per repetition, e.g. 0.2 for ±20%.
    pub speed_jitter: f64,
    pub flow_block: usize,
    pub flow_radius: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 7,
            affirmative: 24,
            negative: 4,
            interrogative: 11,
            repetitions: 3,
            frames_per_gesture: 4,
            speed: 2.0,
            speed_jitter: 0.2,
            flow_block: 4,
            flow_radius: 3,
            dev_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

impl CorpusConfig {
    pub fn sentences(&self) -> usize {
        self.affirmative + self.negative + self.interrogative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub schema_version: u32,
    pub input_kind: InputKind,
    pub use_pe2d: bool,
    pub use_attn2d: bool,
    pub use_ffn2d: bool,
    pub use_glosses: bool,
    pub backbone: BackboneConfig,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_ctc: f64,
    /// Train on only the first N training samples (overfitting runs).
    pub max_train_samples: Option<usize>,
    pub optimizer: AdamConfig,
    pub corpus: CorpusConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            schema_version: SCHEMA_VERSION,
            input_kind: InputKind::Flow,
            use_pe2d: true,
            use_attn2d: true,
            use_ffn2d: true,
            use_glosses: true,
            backbone: BackboneConfig::default(),
            heads: 4,
            d_ff: 256,
            max_len: 12,
            epochs: 10,
            batch_size: 1,
            seed: 1,
            lambda_ctc: 1.0,
            max_train_samples: None,
            optimizer: AdamConfig::default(),
            corpus: CorpusConfig::default(),
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl ModelConfig {
    /// Feature-map grid side after the backbone.
    pub fn grid(&self) -> Result<usize> {
        self.backbone.output_grid()
    }

    /// Width of one memory row: `C · h · w`.
    pub fn d_model(&self) -> Result<usize> {
        let side = self.grid()?;
        Ok(self.backbone.output_channels() * side * side)
    }

    /// Whether the CTC head is trained at all.
    pub fn gloss_supervision(&self) -> bool {
        self.use_glosses && self.lambda_ctc > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.schema_version == SCHEMA_VERSION, || {
            format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version)
        })?;
        ensure(self.batch_size == 1, || format!("batch_size must be 1, got {}", self.batch_size))?;
        ensure(!self.backbone.channels.is_empty(), || "backbone needs at least one stage".into())?;
        ensure(self.backbone.channels.iter().all(|&c| c > 0), || "backbone channel counts must be positive".into())?;
        ensure(self.backbone.kernel > 0 && self.backbone.stride > 0, || "backbone kernel and stride must be positive".into())?;
        ensure(self.backbone.input_size > 0, || "backbone input_size must be positive".into())?;
        let d_model = self.d_model()?;
        let channels = self.backbone.output_channels();
        if self.use_pe2d {
            ensure(channels % 4 == 0, || {
                format!("2-D positional encoding needs feature channels divisible by 4, got {channels}")
            })?;
        }
        ensure(self.heads > 0 && d_model % self.heads == 0, || {
            format!("d_model {d_model} is not divisible by {} heads", self.heads)
        })?;
        ensure(self.d_ff > 0, || "d_ff must be positive".into())?;
        ensure(self.max_len >= 1, || "max_len must be at least 1".into())?;
        ensure(self.lambda_ctc.is_finite() && self.lambda_ctc >= 0.0, || {
            format!("lambda_ctc must be finite and non-negative, got {}", self.lambda_ctc)
        })?;
        ensure(self.max_train_samples != Some(0), || "max_train_samples must be positive".into())?;
        let o = &self.optimizer;
        ensure(o.lr > 0.0 && o.lr.is_finite(), || format!("learning rate must be positive, got {}", o.lr))?;
        ensure((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2), || {
            format!("Adam betas must lie in [0, 1), got {} and {}", o.beta1, o.beta2)
        })?;
        ensure(o.eps > 0.0, || format!("Adam eps must be positive, got {}", o.eps))?;
        if let Some(n) = o.max_grad_norm {
            ensure(n > 0.0 && n.is_finite(), || format!("max_grad_norm must be positive, got {n}"))?;
        }
        let c = &self.corpus;
        ensure(c.sentences() > 0, || "corpus needs at least one sentence".into())?;
        ensure(c.repetitions > 0 && c.frames_per_gesture > 0, || {
            "repetitions and frames_per_gesture must be positive".into()
        })?;
        ensure(c.speed.is_finite() && c.speed >= 0.0, || format!("speed must be non-negative, got {}", c.speed))?;
        ensure((0.0..1.0).contains(&c.speed_jitter), || format!("speed_jitter must lie in [0, 1), got {}", c.speed_jitter))?;
        ensure(c.flow_block > 0 && self.backbone.input_size % c.flow_block == 0, || {
            format!("flow block {} must divide the frame size {}", c.flow_block, self.backbone.input_size)
        })?;
        ensure(
            c.dev_fraction >= 0.0 && c.test_fraction >= 0.0 && c.dev_fraction + c.test_fraction < 1.0,
            || format!("split fractions {} + {} leave no training data", c.dev_fraction, c.test_fraction),
        )?;
        Ok(())
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = Self::from_json(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}
