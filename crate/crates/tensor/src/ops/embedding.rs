use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

impl Tensor {
    /// Rows of a `[V, d]` table for each id, giving `[ids.len(), d]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor> {
        let [vocab, width] = *self.shape() else {
            return Err(TensorError::config("embedding", format!("table must be 2-D, got {:?}", self.shape())));
        };
        if ids.is_empty() {
            return Err(TensorError::Contract("embedding lookup with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(TensorError::Index { op: "embedding", index: bad, extent: vocab });
        }
        let table = self.data();
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            data.extend_from_slice(&table[id * width..(id + 1) * width]);
        }
        drop(table);
        let ids = ids.to_vec();
        Tensor::from_op("embedding", data, &[ids.len(), width], vec![self.clone()], move |g, _| {
            let mut gt = vec![0.0; vocab * width];
            for (row, &id) in g.chunks_exact(width).zip(&ids) {
                gt[id * width..(id + 1) * width].iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            vec![Some(gt)]
        })
    }
}
