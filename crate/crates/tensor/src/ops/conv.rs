//! 2-D convolution (cross-correlation, no kernel flip) via im2col.

use crate::error::{Result, TensorError};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn cols_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols_len(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate for output position `o` and kernel tap `k`, or
    /// `None` inside the zero padding.
    fn source(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&v| v < extent)
    }

    fn im2col(&self, image: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.cols_rows() * self.cols_len()];
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * self.cols_len()..(row + 1) * self.cols_len()];
                    for oy in 0..self.ho {
                        let Some(y) = Self::source(oy, ki, self.stride, self.pad, self.h) else { continue };
                        for ox in 0..self.wo {
                            if let Some(x) = Self::source(ox, kj, self.stride, self.pad, self.w) {
                                dst[oy * self.wo + ox] = image[(c * self.h + y) * self.w + x];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * self.cols_len()..(row + 1) * self.cols_len()];
                    for oy in 0..self.ho {
                        let Some(y) = Self::source(oy, ki, self.stride, self.pad, self.h) else { continue };
                        for ox in 0..self.wo {
                            if let Some(x) = Self::source(ox, kj, self.stride, self.pad, self.w) {
                                image[(c * self.h + y) * self.w + x] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output extent of a convolution along one axis, if the geometry is valid.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded || (padded - kernel) % stride != 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl Tensor {
    /// `x: [N, Cin, H, W]`, `kernel: [Cout, Cin, kh, kw]` → `[N, Cout, H', W']`
    /// with `H' = (H + 2·pad − kh)/stride + 1`, which must be integral.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let (&[n, cin, h, w], &[cout, kcin, kh, kw]) = (self.shape(), kernel.shape()) else {
            return Err(TensorError::shape("conv2d", self.shape(), kernel.shape()));
        };
        if cin != kcin {
            return Err(TensorError::shape("conv2d", self.shape(), kernel.shape()));
        }
        let (ho, wo) = match (conv_output_extent(h, kh, stride, pad), conv_output_extent(w, kw, stride, pad)) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(TensorError::config(
                    "conv2d",
                    format!(
                        "input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {pad} \
                         does not give an integral output extent"
                    ),
                ))
            }
        };
        let geo = Geometry { cin, h, w, kh, kw, stride, pad, ho, wo };
        let k = geo.cols_rows();
        let plane = geo.cols_len();
        let in_image = cin * h * w;
        let out_image = cout * plane;

        let x = self.data();
        let wk = kernel.data();
        let mut out = vec![0.0; n * out_image];
        for (img, dst) in x.chunks_exact(in_image).zip(out.chunks_exact_mut(out_image)) {
            let cols = geo.im2col(img);
            gemm_nn(cout, k, plane, &wk, &cols, dst);
        }
        drop((x, wk));

        Tensor::from_op(
            "conv2d",
            out,
            &[n, cout, ho, wo],
            vec![self.clone(), kernel.clone()],
            move |g, p| {
                let x = p[0].data();
                let wk = p[1].data();
                let mut gx = p[0].requires_grad().then(|| vec![0.0; n * in_image]);
                let mut gw = p[1].requires_grad().then(|| vec![0.0; cout * k]);
                let mut gcols = vec![0.0; k * plane];
                for i in 0..n {
                    let gi = &g[i * out_image..(i + 1) * out_image];
                    if let Some(gw) = gw.as_mut() {
                        let cols = geo.im2col(&x[i * in_image..(i + 1) * in_image]);
                        gemm_nt(cout, plane, k, gi, &cols, gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gcols.iter_mut().for_each(|v| *v = 0.0);
                        gemm_tn(k, cout, plane, &wk, gi, &mut gcols);
                        geo.col2im(&gcols, &mut gx[i * in_image..(i + 1) * in_image]);
                    }
                }
                vec![gx, gw]
            },
        )
    }
}
