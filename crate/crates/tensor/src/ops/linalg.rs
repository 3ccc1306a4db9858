use crate::error::{Result, TensorError};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::Tensor;

impl Tensor {
    /// Matrix product `[m,k] × [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(TensorError::shape("matmul", self.shape(), other.shape()));
        };
        if k != k2 {
            return Err(TensorError::shape("matmul", self.shape(), other.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, &self.data(), &other.data(), &mut out);
        Tensor::from_op("matmul", out, &[m, n], vec![self.clone(), other.clone()], move |g, p| {
            let ga = p[0].requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm_nt(m, n, k, g, &p[1].data(), &mut ga);
                ga
            });
            let gb = p[1].requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm_tn(k, m, n, &p[0].data(), g, &mut gb);
                gb
            });
            vec![ga, gb]
        })
    }

    /// `self × otherᵀ` for `[m,k]` and `[n,k]`.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[n, k2]) = (self.shape(), other.shape()) else {
            return Err(TensorError::shape("matmul_t", self.shape(), other.shape()));
        };
        if k != k2 {
            return Err(TensorError::shape("matmul_t", self.shape(), other.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(m, k, n, &self.data(), &other.data(), &mut out);
        Tensor::from_op("matmul_t", out, &[m, n], vec![self.clone(), other.clone()], move |g, p| {
            let ga = p[0].requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm_nn(m, n, k, g, &p[1].data(), &mut ga);
                ga
            });
            let gb = p[1].requires_grad().then(|| {
                let mut gb = vec![0.0; n * k];
                gemm_tn(n, m, k, g, &p[0].data(), &mut gb);
                gb
            });
            vec![ga, gb]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_product() {
        let i = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        assert_eq!(i.matmul(&a).unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn column_of_ones() {
        let a = Tensor::param(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::new(vec![1.0, 1.0], &[2, 1]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.to_vec(), vec![3.0, 7.0]);
        c.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn matmul_t_equals_explicit_transpose() {
        let a = Tensor::new((0..6).map(|v| v as f64 * 0.5).collect(), &[2, 3]).unwrap();
        let b = Tensor::new((0..12).map(|v| (v as f64).cos()).collect(), &[4, 3]).unwrap();
        let x = a.matmul_t(&b).unwrap().to_vec();
        let y = a.matmul(&b.t().unwrap()).unwrap().to_vec();
        assert_eq!(x, y);
    }
}
