//! Pixel-wise 2-D self-attention over feature maps, and the standard
//! multi-head attention used by the decoder.

use rand_chacha::ChaCha8Rng;
use slt_tensor::Tensor;

use crate::error::{Error, Result};
use crate::layers::{constant_param, join, uniform, Linear, Module, NamedParams};

/// Row-stochastic `[h·w, h·w]` map of one frame; row = query position,
/// column = key position, both flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub positions: usize,
    pub weights: Vec<f64>,
}

impl AttentionMap {
    pub fn row(&self, query: usize) -> &[f64] {
        &self.weights[query * self.positions..(query + 1) * self.positions]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.positions)
    }
}

/// Width of the query/key projection for `channels` input channels.
pub fn key_dim(channels: usize) -> usize {
    (channels / 8).max(1)
}

/// Self-attention between all spatial positions of each frame, gated into a
/// residual: `out = F + gamma · W_out ∗ concat(O, F)`.
///
/// `W_Q`, `W_K` project `C → max(C/8, 1)` and `W_V` projects `C → C`, all as
/// bias-free 1×1 convolutions. `gamma` starts at zero so the block is an
/// exact identity at initialisation.
#[derive(Debug, Clone)]
pub struct Attn2d {
    pub w_query: Tensor,
    pub w_key: Tensor,
    pub w_value: Tensor,
    pub w_out: Tensor,
    pub gamma: Tensor,
}

impl Attn2d {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        let dk = key_dim(channels);
        let bound = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        Attn2d {
            w_query: uniform(rng, &[dk, channels, 1, 1], bound(channels, dk)),
            w_key: uniform(rng, &[dk, channels, 1, 1], bound(channels, dk)),
            w_value: uniform(rng, &[channels, channels, 1, 1], bound(channels, channels)),
            w_out: uniform(rng, &[channels, 2 * channels, 1, 1], bound(2 * channels, channels)),
            gamma: constant_param(&[1], 0.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.w_value.shape()[0]
    }

    pub fn key_dim(&self) -> usize {
        self.w_query.shape()[0]
    }

    /// `maps: [T, C, h, w]` → same shape, plus one attention map per frame.
    pub fn forward(&self, maps: &Tensor) -> Result<(Tensor, Vec<AttentionMap>)> {
        let &[frames, channels, h, w] = maps.shape() else {
            return Err(Error::config(format!("2-D attention expects [T, C, h, w], got {:?}", maps.shape())));
        };
        if channels != self.channels() {
            return Err(Error::config(format!(
                "2-D attention weights are for {} channels, feature maps have {channels}",
                self.channels()
            )));
        }
        let dk = self.key_dim();
        let positions = h * w;
        let scale = 1.0 / (dk as f64).sqrt();

        let q = maps.conv2d(&self.w_query, 1, 0)?;
        let k = maps.conv2d(&self.w_key, 1, 0)?;
        let v = maps.conv2d(&self.w_value, 1, 0)?;

        let mut outputs = Vec::with_capacity(frames);
        let mut attention = Vec::with_capacity(frames);
        for t in 0..frames {
            let qt = q.select(t)?.reshape(&[dk, positions])?;
            let kt = k.select(t)?.reshape(&[dk, positions])?;
            let vt = v.select(t)?.reshape(&[channels, positions])?;
            let scores = qt.t()?.matmul(&kt)?.scale(scale);
            let a = scores.softmax(1)?;
            attention.push(AttentionMap { positions, weights: a.to_vec() });
            outputs.push(vt.matmul_t(&a)?);
        }
        let o = Tensor::stack(&outputs)?.reshape(&[frames, channels, h, w])?;
        let mixed = Tensor::concat(&[o, maps.clone()], 1)?.conv2d(&self.w_out, 1, 0)?;
        let out = maps.add(&mixed.mul_scalar(&self.gamma)?)?;
        Ok((out, attention))
    }
}

impl Module for Attn2d {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "w_query"), self.w_query.clone()));
        out.push((join(prefix, "w_key"), self.w_key.clone()));
        out.push((join(prefix, "w_value"), self.w_value.clone()));
        out.push((join(prefix, "w_out"), self.w_out.clone()));
        out.push((join(prefix, "gamma"), self.gamma.clone()));
    }
}

/// `allowed[i * len + j] == (j <= i)`.
pub fn causal_mask(len: usize) -> Vec<bool> {
    (0..len).flat_map(|i| (0..len).map(move |j| j <= i)).collect()
}

/// Projected keys and values, reusable across queries (e.g. one decoding
/// step after another against the same encoder memory).
#[derive(Debug, Clone)]
pub struct KeyValues {
    pub keys: Tensor,
    pub values: Tensor,
}

/// Output of one attention call: `[Lq, d_model]` plus each head's
/// `[Lq, Lk]` weights.
#[derive(Debug, Clone)]
pub struct MhaOutput {
    pub output: Tensor,
    pub head_weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut ChaCha8Rng, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::config(format!("d_model {d_model} is not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(rng, d_model, d_model),
            key: Linear::new(rng, d_model, d_model),
            value: Linear::new(rng, d_model, d_model),
            out: Linear::new(rng, d_model, d_model),
            heads,
        })
    }

    pub fn d_model(&self) -> usize {
        self.out.output_dim()
    }

    pub fn project_kv(&self, key_seq: &Tensor, value_seq: &Tensor) -> Result<KeyValues> {
        Ok(KeyValues {
            keys: self.key.forward(key_seq)?,
            values: self.value.forward(value_seq)?,
        })
    }

    /// Scaled dot-product attention per head. `mask`, when given, is
    /// `[Lq, Lk]` row-major with `true` marking allowed keys.
    pub fn attend(&self, query_seq: &Tensor, kv: &KeyValues, mask: Option<&[bool]>) -> Result<MhaOutput> {
        let d = self.d_model();
        let (&[lq, dq], &[lk, _]) = (query_seq.shape(), kv.keys.shape()) else {
            return Err(Error::config(format!(
                "attention expects 2-D sequences, got {:?} and {:?}",
                query_seq.shape(),
                kv.keys.shape()
            )));
        };
        if dq != d {
            return Err(Error::config(format!("query width {dq} does not match d_model {d}")));
        }
        if let Some(m) = mask {
            if m.len() != lq * lk {
                return Err(Error::Contract(format!(
                    "attention mask has {} entries, expected [{lq}, {lk}]",
                    m.len()
                )));
            }
        }
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(query_seq)?;
        let mut heads = Vec::with_capacity(self.heads);
        let mut head_weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.narrow(1, h * dh, dh)?;
            let kh = kv.keys.narrow(1, h * dh, dh)?;
            let vh = kv.values.narrow(1, h * dh, dh)?;
            let scores = qh.matmul_t(&kh)?.scale(scale);
            let a = match mask {
                Some(m) => scores.masked_softmax(m)?,
                None => scores.softmax(1)?,
            };
            head_weights.push(a.to_vec());
            heads.push(a.matmul(&vh)?);
        }
        let output = self.out.forward(&Tensor::concat(&heads, 1)?)?;
        Ok(MhaOutput { output, head_weights })
    }

    pub fn forward(
        &self,
        query_seq: &Tensor,
        key_seq: &Tensor,
        value_seq: &Tensor,
        mask: Option<&[bool]>,
    ) -> Result<MhaOutput> {
        let kv = self.project_kv(key_seq, value_seq)?;
        self.attend(query_seq, &kv, mask)
    }
}

impl Module for MultiHeadAttention {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        self.query.collect_params(&join(prefix, "query"), out);
        self.key.collect_params(&join(prefix, "key"), out);
        self.value.collect_params(&join(prefix, "value"), out);
        self.out.collect_params(&join(prefix, "out"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, Stream};
    use rand::Rng;

    fn random_maps(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = rng_for(seed, Stream::Init, 99);
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    #[test]
    fn identity_at_initialisation() {
        let block = Attn2d::new(&mut rng_for(1, Stream::Init, 0), 16);
        let maps = random_maps(2, &[3, 16, 4, 4]);
        let (out, attn) = block.forward(&maps).unwrap();
        assert_eq!(out.to_vec(), maps.to_vec());
        assert_eq!(attn.len(), 3);
        assert_eq!(attn[0].weights.len(), 16 * 16);
    }

    #[test]
    fn zero_query_key_gives_uniform_rows() {
        let block = Attn2d::new(&mut rng_for(1, Stream::Init, 0), 8);
        block.w_query.update_data(|d| d.fill(0.0));
        block.w_key.update_data(|d| d.fill(0.0));
        let (_, attn) = block.forward(&random_maps(3, &[2, 8, 3, 2])).unwrap();
        for map in &attn {
            assert!(map.weights.iter().all(|&w| w == 1.0 / 6.0));
        }
    }

    #[test]
    fn single_position_attends_to_itself() {
        let block = Attn2d::new(&mut rng_for(4, Stream::Init, 0), 8);
        block.gamma.update_data(|g| g[0] = 1.0);
        let maps = random_maps(5, &[2, 8, 1, 1]);
        let (out, attn) = block.forward(&maps).unwrap();
        assert!(attn.iter().all(|a| a.weights == [1.0]));
        // With A = [[1]], O = V, so out = F + W_out * concat(W_V F, F).
        let v = maps.conv2d(&block.w_value, 1, 0).unwrap();
        let expected = maps
            .add(&Tensor::concat(&[v, maps.clone()], 1).unwrap().conv2d(&block.w_out, 1, 0).unwrap())
            .unwrap();
        assert_eq!(out.to_vec(), expected.to_vec());
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let block = Attn2d::new(&mut rng_for(1, Stream::Init, 0), 8);
        let err = block.forward(&Tensor::zeros(&[1, 4, 2, 2])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn key_dim_floor() {
        assert_eq!(key_dim(16), 2);
        assert_eq!(key_dim(4), 1);
        assert_eq!(key_dim(64), 8);
    }

    #[test]
    fn causal_pattern() {
        assert_eq!(causal_mask(1), vec![true]);
        let m = causal_mask(3);
        assert_eq!(m, vec![true, false, false, true, true, false, true, true, true]);
        assert_eq!(m.iter().filter(|&&a| a).count(), 6);
    }

    #[test]
    fn single_key_ignores_query() {
        let mha = MultiHeadAttention::new(&mut rng_for(7, Stream::Init, 0), 8, 4).unwrap();
        let kv_seq = random_maps(8, &[1, 8]);
        let q1 = random_maps(9, &[3, 8]);
        let q2 = random_maps(10, &[3, 8]);
        let a = mha.forward(&q1, &kv_seq, &kv_seq, None).unwrap();
        let b = mha.forward(&q2, &kv_seq, &kv_seq, None).unwrap();
        assert_eq!(a.output.to_vec(), b.output.to_vec());
        assert!(a.head_weights.iter().all(|w| w.iter().all(|&x| x == 1.0)));
    }

    #[test]
    fn mask_saturation_attends_to_self() {
        let mha = MultiHeadAttention::new(&mut rng_for(7, Stream::Init, 1), 8, 4).unwrap();
        let x = random_maps(11, &[3, 8]);
        let diagonal: Vec<bool> = (0..9).map(|i| i / 3 == i % 3).collect();
        let out = mha.forward(&x, &x, &x, Some(&diagonal)).unwrap();
        for w in &out.head_weights {
            for (i, &v) in w.iter().enumerate() {
                assert_eq!(v, if i / 3 == i % 3 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn head_weights_are_stochastic() {
        let mha = MultiHeadAttention::new(&mut rng_for(12, Stream::Init, 0), 16, 4).unwrap();
        let q = random_maps(13, &[5, 16]);
        let kv = random_maps(14, &[7, 16]);
        let out = mha.forward(&q, &kv, &kv, None).unwrap();
        assert_eq!(out.head_weights.len(), 4);
        for w in &out.head_weights {
            for row in w.chunks(7) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let masked = mha.forward(&q, &q, &q, Some(&causal_mask(5))).unwrap();
        for w in &masked.head_weights {
            for (i, row) in w.chunks(5).enumerate() {
                assert!((row[..=i].iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(row[i + 1..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn mask_shape_mismatch_is_contract_error() {
        let mha = MultiHeadAttention::new(&mut rng_for(7, Stream::Init, 0), 8, 4).unwrap();
        let x = random_maps(8, &[2, 8]);
        let err = mha.forward(&x, &x, &x, Some(&[true; 3])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(MultiHeadAttention::new(&mut rng_for(7, Stream::Init, 0), 10, 4).is_err());
    }

    #[test]
    fn key_bias_gradient_vanishes() {
        let mha = MultiHeadAttention::new(&mut rng_for(15, Stream::Init, 0), 8, 4).unwrap();
        let x = random_maps(16, &[3, 8]);
        let out = mha.forward(&x, &x, &x, None).unwrap();
        out.output.dot_const(&(0..24).map(|i| (i as f64).sin()).collect::<Vec<_>>()).unwrap().backward().unwrap();
        let g = mha.key.bias.grad().unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
        assert!(mha.key.weight.grad().unwrap().iter().any(|v| v.abs() > 1e-6));
    }
}
