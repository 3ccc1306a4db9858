//! Batch and layer normalisation.

use log::warn;

use crate::error::{Result, TensorError};
use crate::kernels::split_axis;
use crate::tensor::Tensor;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalise with batch statistics and update the running estimates.
    Train,
    /// Normalise with the running estimates.
    Eval,
}

/// Per-channel running mean and (unbiased) variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    /// Number of training-mode batches folded into the estimates.
    pub updates: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: BATCH_NORM_MOMENTUM,
            eps: BATCH_NORM_EPS,
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

impl Tensor {
    /// Batch normalisation of `[N, C, H, W]` (any rank ≥ 2 with channels on
    /// axis 1) with per-channel affine `gamma`, `beta`.
    pub fn batch_norm(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        stats: &mut RunningStats,
        mode: NormMode,
    ) -> Result<Tensor> {
        if self.ndim() < 2 {
            return Err(TensorError::config("batch_norm", format!("need channels on axis 1, got {:?}", self.shape())));
        }
        let (outer, channels, inner) = split_axis(self.shape(), 1);
        for p in [gamma, beta] {
            if p.shape() != [channels] {
                return Err(TensorError::shape("batch_norm", self.shape(), p.shape()));
            }
        }
        if stats.channels() != channels {
            return Err(TensorError::shape("batch_norm", self.shape(), &[stats.channels()]));
        }
        let count = outer * inner;
        let eps = stats.eps;
        let x = self.data();
        let at = move |n: usize, c: usize, i: usize| (n * channels + c) * inner + i;

        let (mean, var) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for c in 0..channels {
                    let mut s = 0.0;
                    for n in 0..outer {
                        s += x[at(n, c, 0)..at(n, c, 0) + inner].iter().sum::<f64>();
                    }
                    mean[c] = s / count as f64;
                    let mut ss = 0.0;
                    for n in 0..outer {
                        ss += x[at(n, c, 0)..at(n, c, 0) + inner].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
                    }
                    var[c] = ss / count as f64;
                }
                let m = stats.momentum;
                let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
                for c in 0..channels {
                    stats.mean[c] = (1.0 - m) * stats.mean[c] + m * mean[c];
                    stats.var[c] = (1.0 - m) * stats.var[c] + m * var[c] * unbias;
                }
                stats.updates += 1;
                (mean, var)
            }
            NormMode::Eval => {
                if stats.updates == 0 {
                    warn!("batch_norm: evaluating with initial running statistics (mean 0, var 1)");
                }
                (stats.mean.clone(), stats.var.clone())
            }
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        for n in 0..outer {
            for c in 0..channels {
                let base = at(n, c, 0);
                for i in 0..inner {
                    xhat[base + i] = (x[base + i] - mean[c]) * inv_std[c];
                }
            }
        }
        drop(x);
        let (gd, bd) = (gamma.data(), beta.data());
        let mut out = xhat.clone();
        for n in 0..outer {
            for c in 0..channels {
                let base = at(n, c, 0);
                out[base..base + inner].iter_mut().for_each(|v| *v = *v * gd[c] + bd[c]);
            }
        }
        drop((gd, bd));

        Tensor::from_op(
            "batch_norm",
            out,
            self.shape(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, p| {
                let gd = p[1].data();
                let mut ggamma = vec![0.0; channels];
                let mut gbeta = vec![0.0; channels];
                let mut gx = vec![0.0; g.len()];
                for c in 0..channels {
                    let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                    for n in 0..outer {
                        let base = at(n, c, 0);
                        for i in 0..inner {
                            sum_g += g[base + i];
                            sum_gx += g[base + i] * xhat[base + i];
                        }
                    }
                    ggamma[c] = sum_gx;
                    gbeta[c] = sum_g;
                    let scale = gd[c] * inv_std[c];
                    for n in 0..outer {
                        let base = at(n, c, 0);
                        for i in 0..inner {
                            gx[base + i] = match mode {
                                NormMode::Train => {
                                    scale * (g[base + i] - (sum_g + xhat[base + i] * sum_gx) / count as f64)
                                }
                                NormMode::Eval => scale * g[base + i],
                            };
                        }
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            },
        )
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let width = *self.shape().last().ok_or_else(|| TensorError::config("layer_norm", "scalar input"))?;
        for p in [gamma, beta] {
            if p.shape() != [width] {
                return Err(TensorError::shape("layer_norm", self.shape(), p.shape()));
            }
        }
        let x = self.data();
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(x.len() / width);
        for (row, out) in x.chunks_exact(width).zip(xhat.chunks_exact_mut(width)) {
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            out.iter_mut().zip(row).for_each(|(o, v)| *o = (v - mean) * is);
        }
        drop(x);
        let (gd, bd) = (gamma.data(), beta.data());
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(width) {
            for ((o, g), b) in row.iter_mut().zip(gd.iter()).zip(bd.iter()) {
                *o = *o * g + b;
            }
        }
        drop((gd, bd));
        Tensor::from_op(
            "layer_norm",
            out,
            self.shape(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, p| {
                let gd = p[1].data();
                let mut ggamma = vec![0.0; width];
                let mut gbeta = vec![0.0; width];
                let mut gx = vec![0.0; g.len()];
                for (r, ((grow, xrow), gxrow)) in g
                    .chunks_exact(width)
                    .zip(xhat.chunks_exact(width))
                    .zip(gx.chunks_exact_mut(width))
                    .enumerate()
                {
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..width {
                        ggamma[j] += grow[j] * xrow[j];
                        gbeta[j] += grow[j];
                        let d = grow[j] * gd[j];
                        sum_d += d;
                        sum_dx += d * xrow[j];
                    }
                    let n = width as f64;
                    for j in 0..width {
                        let d = grow[j] * gd[j];
                        gxrow[j] = inv_std[r] * (d - (sum_d + xrow[j] * sum_dx) / n);
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            },
        )
    }
}
