use crate::error::{Result, TensorError};
use crate::kernels::{split_axis, transpose};
use crate::tensor::{numel, Tensor};

impl Tensor {
    /// Same data, new shape (row-major order is kept).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(TensorError::shape("reshape", self.shape(), shape));
        }
        Tensor::from_op("reshape", self.to_vec(), shape, vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        })
    }

    /// Collapses every axis after the first: `[N, ...] -> [N, prod(...)]`.
    pub fn flatten_rows(&self) -> Result<Tensor> {
        let rows = *self.shape().first().unwrap_or(&1);
        self.reshape(&[rows, self.numel() / rows])
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Result<Tensor> {
        let [rows, cols] = *self.shape() else {
            return Err(TensorError::config("transpose", format!("expected 2-D, got {:?}", self.shape())));
        };
        let data = transpose(rows, cols, &self.data());
        Tensor::from_op("transpose", data, &[cols, rows], vec![self.clone()], move |g, _| {
            vec![Some(transpose(cols, rows, g))]
        })
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.ndim() {
            return Err(TensorError::Index { op: "narrow", index: axis, extent: self.ndim() });
        }
        let extent = self.shape()[axis];
        if len == 0 || start + len > extent {
            return Err(TensorError::Index { op: "narrow", index: start + len, extent });
        }
        let (outer, _, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op("narrow", data, &shape, vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; outer * extent * inner];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        if axis >= first.ndim() {
            return Err(TensorError::Index { op: "concat", index: axis, extent: first.ndim() });
        }
        for p in &parts[1..] {
            let compatible = p.ndim() == first.ndim()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::shape("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (d, &e) in datas.iter().zip(&extents) {
                data.extend_from_slice(&d[o * e * inner..(o + 1) * e * inner]);
            }
        }
        drop(datas);
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Tensor::from_op("concat", data, &shape, parts.to_vec(), move |g, _| {
            let mut grads: Vec<Vec<f64>> = extents.iter().map(|e| Vec::with_capacity(outer * e * inner)).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (gp, &e) in grads.iter_mut().zip(&extents) {
                    gp.extend_from_slice(&g[offset..offset + e * inner]);
                    offset += e * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let expanded = parts
            .iter()
            .map(|p| {
                let mut shape = vec![1];
                shape.extend_from_slice(p.shape());
                p.reshape(&shape)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&expanded, 0)
    }

    /// Entry `index` along the leading axis, with that axis removed.
    pub fn select(&self, index: usize) -> Result<Tensor> {
        let rest = self.shape()[1..].to_vec();
        let row = self.narrow(0, index, 1)?;
        if rest.is_empty() {
            row.reshape(&[])
        } else {
            row.reshape(&rest)
        }
    }
}
