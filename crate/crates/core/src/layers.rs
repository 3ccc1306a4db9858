//! Trainable building blocks and parameter bookkeeping.

use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use slt_tensor::{NormMode, RunningStats, Tensor};

use crate::error::Result;

/// Named trainable tensors in a stable order.
pub type NamedParams = Vec<(String, Tensor)>;

/// Anything owning trainable parameters or batch-norm statistics.
pub trait Module {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams);

    fn collect_norm_stats<'a>(&'a self, _prefix: &str, _out: &mut Vec<(String, &'a RefCell<RunningStats>)>) {}
}

/// Every parameter of `module`, names relative to it.
pub fn params_of(module: &impl Module) -> NamedParams {
    let mut out = Vec::new();
    module.collect_params("", &mut out);
    out
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform `[-bound, bound]` initialisation.
pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::param(data, shape).expect("non-empty parameter shape")
}

pub(crate) fn constant_param(shape: &[usize], value: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(vec![value; n], shape).expect("non-empty parameter shape")
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// He-uniform weights, zero bias.
    pub fn new(
        rng: &mut ChaCha8Rng,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        Conv2d {
            weight: uniform(rng, &[cout, cin, kernel, kernel], (6.0 / fan_in).sqrt()),
            bias: bias.then(|| constant_param(&[cout], 0.0)),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.stride, self.padding)?;
        Ok(match &self.bias {
            Some(b) => y.add_channel_bias(b)?,
            None => y,
        })
    }
}

impl Module for Conv2d {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
}

#[derive(Debug)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: RefCell<RunningStats>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: constant_param(&[channels], 1.0),
            beta: constant_param(&[channels], 0.0),
            stats: RefCell::new(RunningStats::new(channels)),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: NormMode) -> Result<Tensor> {
        Ok(x.batch_norm(&self.gamma, &self.beta, &mut self.stats.borrow_mut(), mode)?)
    }
}

impl Module for BatchNorm2d {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }

    fn collect_norm_stats<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a RefCell<RunningStats>)>) {
        out.push((prefix.to_string(), &self.stats));
    }
}

/// `x · W + b` on `[L, in]` rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn new(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Linear {
            weight: uniform(rng, &[input, output], bound),
            bias: constant_param(&[output], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight)?.add_broadcast(&self.bias)?)
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl Module for Linear {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        LayerNorm {
            gamma: constant_param(&[width], 1.0),
            beta: constant_param(&[width], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.layer_norm(&self.gamma, &self.beta, LAYER_NORM_EPS)?)
    }
}

impl Module for LayerNorm {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }
}
