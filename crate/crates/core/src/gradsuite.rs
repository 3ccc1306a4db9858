//! Finite-difference verification of every differentiable operation, every
//! layer and the end-to-end joint loss, at 64-bit on toy shapes.
//!
//! Each component reduces its output to a scalar with fixed random weights
//! (a plain sum would hide errors in anything normalised, such as softmax)
//! and compares analytic against central-difference gradients for all of
//! its inputs and parameters.

use std::cell::RefCell;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use slt_tensor::gradcheck::{check_gradients, TensorCheck, DEFAULT_EPS};
use slt_tensor::{NormMode, RunningStats, Tensor, TensorError};

use crate::attention::{causal_mask, Attn2d, MultiHeadAttention};
use crate::config::{BackboneConfig, ModelConfig};
use crate::data::vocab::{BOS, EOS};
use crate::decoder::Decoder;
use crate::encoder::{flatten_maps, Encoder, Ffn2d};
use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Linear};
use crate::losses::{cross_entropy, ctc_loss};
use crate::model::Model;
use crate::rng::{rng_for, Stream};

/// Maximum relative error a component may show and still pass.
pub const TOLERANCE: f64 = 1e-4;

/// Index into the init stream reserved for the suite's random inputs.
const SUITE_STREAM: u64 = 1000;

type Check = Box<dyn Fn() -> Result<Vec<TensorCheck>>>;

pub struct Component {
    pub name: String,
    pub run: Check,
}

impl Component {
    pub fn new(name: &str, run: impl Fn() -> Result<Vec<TensorCheck>> + 'static) -> Self {
        Component { name: name.to_string(), run: Box::new(run) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentResult {
    pub name: String,
    pub max_relative_error: f64,
    /// Tensor holding the worst element.
    pub worst_tensor: String,
    pub checked: usize,
    pub passed: bool,
    /// Set when the component could not be evaluated at all.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub components: Vec<ComponentResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.components.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.components.iter().map(|c| c.max_relative_error).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .components
            .iter()
            .map(|c| {
                json!({
                    "component": c.name,
                    "max_relative_error": c.max_relative_error,
                    "worst_tensor": c.worst_tensor,
                    "checked": c.checked,
                    "passed": c.passed,
                    "error": c.error,
                })
            })
            .collect();
        json!({
            "tolerance": self.tolerance,
            "passed": self.passed(),
            "failures": self.failures(),
            "max_relative_error": self.max_relative_error(),
            "seconds": self.seconds,
            "components": rows,
        })
    }
}

/// Runs every component; a component fails when its worst element exceeds
/// `tolerance`, is NaN, or the component errors out.
pub fn run_components(components: &[Component], tolerance: f64) -> SuiteReport {
    let start = Instant::now();
    let results = components
        .iter()
        .map(|c| match (c.run)() {
            Ok(checks) => {
                let worst = checks
                    .iter()
                    .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
                    .cloned();
                let (err, tensor) = worst.map_or((0.0, String::new()), |w| (w.max_relative_error, w.name));
                log::info!("grad check {:<28} max rel err {err:.3e} ({tensor})", c.name);
                ComponentResult {
                    name: c.name.clone(),
                    max_relative_error: err,
                    worst_tensor: tensor,
                    checked: checks.iter().map(|t| t.checked).sum(),
                    passed: err <= tolerance,
                    error: None,
                }
            }
            Err(e) => ComponentResult {
                name: c.name.clone(),
                max_relative_error: f64::INFINITY,
                worst_tensor: String::new(),
                checked: 0,
                passed: false,
                error: Some(e.to_string()),
            },
        })
        .collect();
    SuiteReport { tolerance, components: results, seconds: start.elapsed().as_secs_f64() }
}

/// The full suite; model-level components take their switches, heads, loss
/// weight and seed from `config` on a shrunken geometry.
pub fn run_suite(config: &ModelConfig) -> Result<SuiteReport> {
    Ok(run_components(&components(config)?, TOLERANCE))
}

fn lift<T>(r: Result<T>) -> std::result::Result<T, TensorError> {
    r.map_err(|e| match e {
        Error::Tensor(t) => t,
        other => TensorError::Contract(other.to_string()),
    })
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::param((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).expect("non-empty shape")
}

/// Values bounded away from zero so ReLU kinks stay out of reach of the
/// finite-difference step.
fn random_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::param(data, shape).expect("non-empty shape")
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Checks `f(inputs)` projected onto fixed random weights.
fn check_projected(
    rng: &mut ChaCha8Rng,
    inputs: Vec<(String, Tensor)>,
    f: impl Fn() -> Result<Tensor>,
) -> Result<Vec<TensorCheck>> {
    let probe = slt_tensor::no_grad(&f)?;
    let w = weights(rng, probe.numel());
    let objective = || lift(f())?.dot_const(&w);
    let named: Vec<(&str, &Tensor)> = inputs.iter().map(|(n, t)| (n.as_str(), t)).collect();
    check_gradients(objective, &named, DEFAULT_EPS, |_| None).map_err(|e| Error::Contract(format!("gradient check: {e}")))
}

/// Drops attention key biases: they shift every score in a softmax row by
/// the same amount, so their true gradient is zero and a relative error
/// would only measure finite-difference noise.
fn without_key_bias(params: Vec<(String, Tensor)>) -> Vec<(String, Tensor)> {
    params.into_iter().filter(|(n, _)| !n.ends_with("key.bias")).collect()
}

fn named(list: &[(&str, &Tensor)]) -> Vec<(String, Tensor)> {
    list.iter().map(|(n, t)| (n.to_string(), (*t).clone())).collect()
}

/// A tiny configuration sharing `config`'s switches: two 8×8 frames, two
/// stages of 4 channels, 2×2 grid, `d_model` 16.
pub fn toy_config(config: &ModelConfig) -> ModelConfig {
    let mut c = config.clone();
    c.backbone = BackboneConfig { input_size: 8, channels: vec![4, 4], ..BackboneConfig::default() };
    c.d_ff = 16;
    c.max_len = 4;
    if c.heads == 0 || 16 % c.heads != 0 {
        c.heads = 4;
    }
    c
}

fn suite_rng(config: &ModelConfig, index: u64) -> ChaCha8Rng {
    rng_for(config.seed, Stream::Init, SUITE_STREAM + index)
}

fn op_components(seed_config: &ModelConfig) -> Vec<Component> {
    let cfg = seed_config.clone();
    let mut out = Vec::new();
    let mut add = |name: &str, f: fn(&mut ChaCha8Rng) -> Result<Vec<TensorCheck>>| {
        let index = out.len() as u64;
        let cfg = cfg.clone();
        out.push(Component::new(name, move || f(&mut suite_rng(&cfg, index))));
    };

    add("add", |rng| {
        let (a, b) = (random(rng, &[3, 4]), random(rng, &[3, 4]));
        check_projected(rng, named(&[("a", &a), ("b", &b)]), || Ok(a.add(&b)?))
    });
    add("sub", |rng| {
        let (a, b) = (random(rng, &[3, 4]), random(rng, &[3, 4]));
        check_projected(rng, named(&[("a", &a), ("b", &b)]), || Ok(a.sub(&b)?))
    });
    add("mul", |rng| {
        let (a, b) = (random(rng, &[3, 4]), random(rng, &[3, 4]));
        check_projected(rng, named(&[("a", &a), ("b", &b)]), || Ok(a.mul(&b)?))
    });
    add("scale", |rng| {
        let a = random(rng, &[5]);
        check_projected(rng, named(&[("a", &a)]), || Ok(a.scale(-1.7)))
    });
    add("mul_scalar", |rng| {
        let (a, s) = (random(rng, &[2, 3]), random(rng, &[1]));
        check_projected(rng, named(&[("a", &a), ("s", &s)]), || Ok(a.mul_scalar(&s)?))
    });
    add("add_broadcast", |rng| {
        let (a, b) = (random(rng, &[2, 3, 4]), random(rng, &[3, 4]));
        check_projected(rng, named(&[("a", &a), ("b", &b)]), || Ok(a.add_broadcast(&b)?))
    });
    add("add_channel_bias", |rng| {
        let (a, b) = (random(rng, &[2, 3, 2, 2]), random(rng, &[3]));
        check_projected(rng, named(&[("a", &a), ("bias", &b)]), || Ok(a.add_channel_bias(&b)?))
    });
    add("relu", |rng| {
        let a = random_off_zero(rng, &[4, 5]);
        check_projected(rng, named(&[("a", &a)]), || Ok(a.relu()))
    });
    add("reshape", |rng| {
        let a = random(rng, &[2, 3, 2]);
        check_projected(rng, named(&[("a", &a)]), || Ok(a.reshape(&[3, 4])?.flatten_rows()?))
    });
    add("transpose", |rng| {
        let a = random(rng, &[3, 5]);
        check_projected(rng, named(&[("a", &a)]), || Ok(a.t()?))
    });
    add("narrow", |rng| {
        let a = random(rng, &[3, 6]);
        check_projected(rng, named(&[("a", &a)]), || Ok(a.narrow(1, 2, 3)?))
    });
    add("concat", |rng| {
        let (a, b) = (random(rng, &[2, 2, 3]), random(rng, &[2, 1, 3]));
        check_projected(rng, named(&[("a", &a), ("b", &b)]), || Ok(Tensor::concat(&[a.clone(), b.clone()], 1)?))
    });
    add("stack_select", |rng| {
        let (a, b) = (random(rng, &[2, 3]), random(rng, &[2, 3]));
        check_projected(rng, named(&[("a", &a), ("b", &b)]), || {
            let s = Tensor::stack(&[a.clone(), b.clone()])?;
            Ok(Tensor::stack(&[s.select(1)?, s.select(0)?.scale(2.0)])?)
        })
    });
    add("matmul", |rng| {
        let (a, b) = (random(rng, &[3, 4]), random(rng, &[4, 2]));
        check_projected(rng, named(&[("a", &a), ("b", &b)]), || Ok(a.matmul(&b)?))
    });
    add("matmul_t", |rng| {
        let (a, b) = (random(rng, &[3, 4]), random(rng, &[5, 4]));
        check_projected(rng, named(&[("a", &a), ("b", &b)]), || Ok(a.matmul_t(&b)?))
    });
    add("conv2d", |rng| {
        let (x, k) = (random(rng, &[1, 2, 4, 4]), random(rng, &[3, 2, 3, 3]));
        check_projected(rng, named(&[("input", &x), ("kernel", &k)]), || Ok(x.conv2d(&k, 1, 1)?))
    });
    add("conv2d_strided", |rng| {
        let (x, k) = (random(rng, &[2, 2, 6, 6]), random(rng, &[3, 2, 4, 4]));
        check_projected(rng, named(&[("input", &x), ("kernel", &k)]), || Ok(x.conv2d(&k, 2, 1)?))
    });
    add("softmax", |rng| {
        let a = random(rng, &[3, 4]);
        check_projected(rng, named(&[("a", &a)]), || Ok(Tensor::concat(&[a.softmax(1)?, a.softmax(0)?], 0)?))
    });
    add("log_softmax", |rng| {
        let a = random(rng, &[3, 4]);
        check_projected(rng, named(&[("a", &a)]), || Ok(Tensor::concat(&[a.log_softmax(1)?, a.log_softmax(0)?], 0)?))
    });
    add("masked_softmax", |rng| {
        let a = random(rng, &[4, 4]);
        let mask = causal_mask(4);
        check_projected(rng, named(&[("a", &a)]), move || Ok(a.masked_softmax(&mask)?))
    });
    add("sum_mean", |rng| {
        let a = random(rng, &[2, 3]);
        check_projected(rng, named(&[("a", &a)]), || Ok(Tensor::concat(&[a.sum().reshape(&[1])?, a.mean().reshape(&[1])?], 0)?))
    });
    add("embedding", |rng| {
        let table = random(rng, &[5, 3]);
        check_projected(rng, named(&[("table", &table)]), || Ok(table.embedding(&[1, 4, 1, 0])?))
    });
    add("batch_norm", |rng| {
        let (x, g, b) = (random(rng, &[2, 3, 2, 2]), random(rng, &[3]), random(rng, &[3]));
        let stats = RefCell::new(RunningStats::new(3));
        check_projected(rng, named(&[("input", &x), ("gamma", &g), ("beta", &b)]), || {
            Ok(x.batch_norm(&g, &b, &mut stats.borrow_mut(), NormMode::Train)?)
        })
    });
    add("layer_norm", |rng| {
        let x = random(rng, &[3, 6]);
        let norm = LayerNorm::new(6);
        norm.gamma.set_data(&weights(rng, 6))?;
        norm.beta.set_data(&weights(rng, 6))?;
        check_projected(rng, named(&[("input", &x), ("gamma", &norm.gamma), ("beta", &norm.beta)]), || {
            norm.forward(&x)
        })
    });
    add("linear", |rng| {
        let x = random(rng, &[3, 4]);
        let layer = Linear::new(rng, 4, 5);
        layer.bias.set_data(&weights(rng, 5))?;
        check_projected(rng, named(&[("input", &x), ("weight", &layer.weight), ("bias", &layer.bias)]), || {
            layer.forward(&x)
        })
    });
    add("attn2d", |rng| {
        let x = random(rng, &[2, 8, 2, 3]);
        let attn = Attn2d::new(rng, 8);
        attn.gamma.set_data(&[0.7])?;
        let inputs = named(&[
            ("maps", &x),
            ("w_query", &attn.w_query),
            ("w_key", &attn.w_key),
            ("w_value", &attn.w_value),
            ("w_out", &attn.w_out),
            ("gamma", &attn.gamma),
        ]);
        check_projected(rng, inputs, || Ok(attn.forward(&x)?.0))
    });
    add("multi_head_attention", |rng| {
        let (q, kv) = (random(rng, &[3, 8]), random(rng, &[3, 8]));
        let mha = MultiHeadAttention::new(rng, 8, 4)?;
        for layer in [&mha.query, &mha.key, &mha.value, &mha.out] {
            layer.bias.set_data(&weights(rng, 8))?;
        }
        let mask = causal_mask(3);
        let inputs = named(&[
            ("query_seq", &q),
            ("key_value_seq", &kv),
            ("w_query", &mha.query.weight),
            ("w_key", &mha.key.weight),
            ("w_value", &mha.value.weight),
            ("w_out", &mha.out.weight),
            ("b_query", &mha.query.bias),
            ("b_out", &mha.out.bias),
        ]);
        check_projected(rng, inputs, move || {
            let kvs = mha.project_kv(&kv, &kv)?;
            Ok(mha.attend(&q, &kvs, Some(&mask))?.output)
        })
    });
    add("flatten_maps", |rng| {
        let x = random(rng, &[2, 3, 2, 2]);
        check_projected(rng, named(&[("maps", &x)]), || flatten_maps(&x))
    });
    add("cross_entropy", |rng| {
        let logits = random(rng, &[4, 5]);
        let objective = || lift(cross_entropy(&logits, &[2, 4, 0, 1], 0));
        check_gradients(objective, &[("logits", &logits)], DEFAULT_EPS, |_| None)
            .map_err(|e| Error::Contract(format!("gradient check: {e}")))
    });
    add("ctc", |rng| {
        let scores = random(rng, &[4, 3]);
        let objective = || lift(ctc_loss(&lift(Ok(scores.log_softmax(1)?))?, &[1, 2]));
        check_gradients(objective, &[("scores", &scores)], DEFAULT_EPS, |_| None)
            .map_err(|e| Error::Contract(format!("gradient check: {e}")))
    });
    out
}

fn model_components(config: &ModelConfig) -> Result<Vec<Component>> {
    let toy = toy_config(config);
    toy.validate()?;
    let mut out = Vec::new();

    let cfg = toy.clone();
    out.push(Component::new("ffn2d", move || {
        let mut rng = suite_rng(&cfg, 100);
        let ffn = Ffn2d::new(&cfg, 4);
        let x = random(&mut rng, &[2, 4, 3, 3]);
        let mut inputs = named(&[("maps", &x)]);
        inputs.extend(crate::layers::params_of(&ffn));
        check_projected(&mut rng, inputs, || ffn.forward(&x, NormMode::Train))
    }));

    let cfg = toy.clone();
    out.push(Component::new("encoder", move || {
        let mut rng = suite_rng(&cfg, 101);
        let encoder = Encoder::new(&cfg, 3)?;
        if let Some(attn) = &encoder.attn {
            attn.gamma.set_data(&[0.6])?;
        }
        let size = cfg.backbone.input_size;
        let frames = random(&mut rng, &[2, cfg.input_kind.channels(), size, size]);
        let mut inputs = named(&[("frames", &frames)]);
        inputs.extend(crate::layers::params_of(&encoder));
        check_projected(&mut rng, inputs, || Ok(encoder.forward(&frames, NormMode::Train)?.memory))
    }));

    let cfg = toy.clone();
    out.push(Component::new("decoder", move || {
        let mut rng = suite_rng(&cfg, 102);
        let decoder = Decoder::new(&cfg, 7)?;
        let memory = random(&mut rng, &[2, cfg.d_model()?]);
        let mut inputs = named(&[("memory", &memory)]);
        inputs.extend(without_key_bias(crate::layers::params_of(&decoder)));
        check_projected(&mut rng, inputs, || decoder.forward(&memory, &[BOS, 5, 4]))
    }));

    let cfg = toy;
    out.push(Component::new("joint_loss_end_to_end", move || {
        let mut rng = suite_rng(&cfg, 103);
        let model = Model::new(&cfg, 7, 4)?;
        if let Some(attn) = &model.encoder.attn {
            attn.gamma.set_data(&[0.6])?;
        }
        let size = cfg.backbone.input_size;
        let frames = random(&mut rng, &[2, cfg.input_kind.channels(), size, size]);
        let mut inputs = named(&[("frames", &frames)]);
        inputs.extend(without_key_bias(model.params()));
        let text = [BOS, 4, 6, EOS];
        let objective = || lift(model.loss(&frames, &[1, 2], &text, NormMode::Train).map(|(loss, _)| loss));
        let named: Vec<(&str, &Tensor)> = inputs.iter().map(|(n, t)| (n.as_str(), t)).collect();
        check_gradients(objective, &named, DEFAULT_EPS, |_| None)
            .map_err(|e| Error::Contract(format!("gradient check: {e}")))
    }));
    Ok(out)
}

pub fn components(config: &ModelConfig) -> Result<Vec<Component>> {
    let mut all = op_components(config);
    all.extend(model_components(config)?);
    Ok(all)
}
