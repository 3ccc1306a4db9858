use crate::error::{Result, TensorError};
use crate::kernels::split_axis;
use crate::tensor::Tensor;

impl Tensor {
    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(TensorError::shape(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a + b).collect();
        Tensor::from_op("add", data, self.shape(), vec![self.clone(), other.clone()], |g, _| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a - b).collect();
        Tensor::from_op("sub", data, self.shape(), vec![self.clone(), other.clone()], |g, _| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        })
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a * b).collect();
        Tensor::from_op("mul", data, self.shape(), vec![self.clone(), other.clone()], |g, p| {
            let (a, b) = (p[0].data(), p[1].data());
            let ga = g.iter().zip(b.iter()).map(|(g, b)| g * b).collect();
            let gb = g.iter().zip(a.iter()).map(|(g, a)| g * a).collect();
            vec![Some(ga), Some(gb)]
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op("scale", data, self.shape(), vec![self.clone()], move |g, _| {
            vec![Some(g.iter().map(|v| v * factor).collect())]
        })
        .expect("shape preserved")
    }

    /// Multiplies every element by a single-element tensor (e.g. a learnable gate).
    pub fn mul_scalar(&self, s: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(TensorError::shape("mul_scalar", self.shape(), s.shape()));
        }
        let factor = s.item();
        let data = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op("mul_scalar", data, self.shape(), vec![self.clone(), s.clone()], |g, p| {
            let factor = p[1].item();
            let gx = g.iter().map(|v| v * factor).collect();
            let gs = g.iter().zip(p[0].data().iter()).map(|(g, x)| g * x).sum();
            vec![Some(gx), Some(vec![gs])]
        })
    }

    /// Adds `other` broadcast over the leading axes; its shape must equal a
    /// suffix of `self`'s shape (row bias, positional tables).
    pub fn add_broadcast(&self, other: &Tensor) -> Result<Tensor> {
        let (s, o) = (self.shape(), other.shape());
        if o.len() > s.len() || s[s.len() - o.len()..] != *o {
            return Err(TensorError::shape("add_broadcast", s, o));
        }
        let block = other.numel();
        let od = other.data();
        let mut data = self.to_vec();
        for chunk in data.chunks_exact_mut(block) {
            chunk.iter_mut().zip(od.iter()).for_each(|(a, b)| *a += b);
        }
        drop(od);
        Tensor::from_op("add_broadcast", data, s, vec![self.clone(), other.clone()], move |g, _| {
            let mut gb = vec![0.0; block];
            for chunk in g.chunks_exact(block) {
                gb.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
            }
            vec![Some(g.to_vec()), Some(gb)]
        })
    }

    /// Adds a per-channel bias `[C]` to a `[N, C, ...]` tensor.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor> {
        if self.ndim() < 2 || bias.shape() != [self.shape()[1]] {
            return Err(TensorError::shape("add_channel_bias", self.shape(), bias.shape()));
        }
        let (outer, channels, inner) = split_axis(self.shape(), 1);
        let bd = bias.data();
        let mut data = self.to_vec();
        for n in 0..outer {
            for c in 0..channels {
                let start = (n * channels + c) * inner;
                data[start..start + inner].iter_mut().for_each(|v| *v += bd[c]);
            }
        }
        drop(bd);
        Tensor::from_op(
            "add_channel_bias",
            data,
            self.shape(),
            vec![self.clone(), bias.clone()],
            move |g, _| {
                let mut gb = vec![0.0; channels];
                for n in 0..outer {
                    for (c, acc) in gb.iter_mut().enumerate() {
                        let start = (n * channels + c) * inner;
                        *acc += g[start..start + inner].iter().sum::<f64>();
                    }
                }
                vec![Some(g.to_vec()), Some(gb)]
            },
        )
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|&v| v.max(0.0)).collect();
        Tensor::from_op("relu", data, self.shape(), vec![self.clone()], |g, p| {
            let x = p[0].data();
            vec![Some(g.iter().zip(x.iter()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())]
        })
        .expect("shape preserved")
    }
}
