use crate::error::{Result, TensorError};
use crate::kernels::split_axis;
use crate::tensor::Tensor;

impl Tensor {
    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![total], &[], vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
        .expect("scalar")
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let total: f64 = self.data().iter().sum();
        Tensor::from_op("mean", vec![total / n as f64], &[], vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0] / n as f64; n])]
        })
        .expect("scalar")
    }

    /// Weighted sum `Σ wᵢ xᵢ` against a constant weight vector; handy for
    /// reducing vector outputs to a scalar in gradient checks.
    pub fn dot_const(&self, weights: &[f64]) -> Result<Tensor> {
        if weights.len() != self.numel() {
            return Err(TensorError::shape("dot_const", self.shape(), &[weights.len()]));
        }
        let value = self.data().iter().zip(weights).map(|(x, w)| x * w).sum();
        let w = weights.to_vec();
        Tensor::from_op("dot_const", vec![value], &[], vec![self.clone()], move |g, _| {
            vec![Some(w.iter().map(|w| w * g[0]).collect())]
        })
    }

    /// Softmax along `axis`, with the maximum subtracted before exponentiating.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = self.axis_layout("softmax", axis)?;
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| out[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (out[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        let y = out.clone();
        Tensor::from_op("softmax", out, self.shape(), vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let dot: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                    for k in 0..len {
                        gx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = self.axis_layout("log_softmax", axis)?;
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| out[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..len).map(|k| (out[idx(k)] - max).exp()).sum::<f64>().ln();
                for k in 0..len {
                    out[idx(k)] -= lse;
                }
            }
        }
        let y = out.clone();
        Tensor::from_op("log_softmax", out, self.shape(), vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let total: f64 = (0..len).map(|k| g[idx(k)]).sum();
                    for k in 0..len {
                        gx[idx(k)] = g[idx(k)] - y[idx(k)].exp() * total;
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Row softmax of a 2-D tensor where `allowed[r * cols + c] == false`
    /// behaves as a score of −∞. Masked entries come out as exactly zero and
    /// do not take part in the max or the normaliser. A row with every entry
    /// masked is a contract error.
    pub fn masked_softmax(&self, allowed: &[bool]) -> Result<Tensor> {
        let [rows, cols] = *self.shape() else {
            return Err(TensorError::config("masked_softmax", format!("expected 2-D, got {:?}", self.shape())));
        };
        if allowed.len() != rows * cols {
            return Err(TensorError::shape("masked_softmax", self.shape(), &[allowed.len()]));
        }
        let x = self.data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let xr = &x[r * cols..(r + 1) * cols];
            let mr = &allowed[r * cols..(r + 1) * cols];
            if !mr.contains(&true) {
                return Err(TensorError::Contract(format!("masked_softmax: row {r} has no allowed entry")));
            }
            // non-finite scores propagate as NaN rather than masquerading as masked
            let max = xr
                .iter()
                .zip(mr)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let or = &mut out[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for ((o, &v), &m) in or.iter_mut().zip(xr).zip(mr) {
                if m {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            or.iter_mut().for_each(|o| *o /= total);
        }
        drop(x);
        let y = out.clone();
        Tensor::from_op("masked_softmax", out, self.shape(), vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; rows * cols];
            for r in 0..rows {
                let range = r * cols..(r + 1) * cols;
                let (gr, yr) = (&g[range.clone()], &y[range.clone()]);
                let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                for ((gx, g), y) in gx[range].iter_mut().zip(gr).zip(yr) {
                    *gx = y * (g - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    fn axis_layout(&self, op: &'static str, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.ndim() {
            return Err(TensorError::Index { op, index: axis, extent: self.ndim() });
        }
        Ok(split_axis(self.shape(), axis))
    }
}
