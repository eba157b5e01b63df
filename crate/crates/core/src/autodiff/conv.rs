//! 2-D convolution (cross-correlation) through im2col and GEMM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2dSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            dilation: 1,
            padding: 0,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    /// `floor((in + 2p - d(k-1) - 1) / s) + 1`, or an error when that is
    /// below 1.
    pub fn output_size(&self, input: usize) -> Result<usize> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::ShapeMismatch(format!("degenerate conv spec {self:?}")));
        }
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(Error::ShapeMismatch(format!(
                "conv input {input} too small for {self:?}"
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }

    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Geometry of one convolution call.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub spec: Conv2dSpec,
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(spec: Conv2dSpec, input_shape: &[usize]) -> Result<ConvGeometry> {
        let &[batch, c, in_h, in_w] = input_shape else {
            return Err(Error::ShapeMismatch(format!(
                "conv input must be [N, C, H, W], got {input_shape:?}"
            )));
        };
        if c != spec.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {c}",
                spec.in_channels
            )));
        }
        Ok(ConvGeometry {
            spec,
            batch,
            in_h,
            in_w,
            out_h: spec.output_size(in_h)?,
            out_w: spec.output_size(in_w)?,
        })
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }

    /// Columns of the batched im2col matrix.
    pub fn cols_width(&self) -> usize {
        self.batch * self.out_plane()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.spec.out_channels, self.out_h, self.out_w]
    }

    /// Range of output positions along one axis whose input tap
    /// `o*s - p + off` lands inside `[0, len)`.
    fn valid_range(&self, off: isize, len: usize, out: usize) -> (usize, usize) {
        let s = self.spec.stride as isize;
        let p = self.spec.padding as isize;
        // smallest o with o*s - p + off >= 0
        let lo = ((p - off).max(0) + s - 1) / s;
        // largest o with o*s - p + off <= len - 1
        let hi_num = len as isize - 1 + p - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = (lo as usize).min(out);
        let hi = ((hi + 1).max(0) as usize).min(out);
        (lo, hi.max(lo))
    }
}

/// Fills `cols` (`patch_len × batch·out_plane`, row-major) from an NCHW
/// input.
pub fn im2col<T: Scalar>(g: &ConvGeometry, input: &[T], cols: &mut [T]) {
    let spec = g.spec;
    let (k, s, d, p) = (spec.kernel, spec.stride, spec.dilation, spec.padding as isize);
    let width = g.cols_width();
    let plane = g.out_plane();
    for n in 0..g.batch {
        for c in 0..spec.in_channels {
            let src = &input[(n * spec.in_channels + c) * g.in_plane()..][..g.in_plane()];
            for ki in 0..k {
                let (oh_lo, oh_hi) = g.valid_range((ki * d) as isize, g.in_h, g.out_h);
                for kj in 0..k {
                    let (ow_lo, ow_hi) = g.valid_range((kj * d) as isize, g.in_w, g.out_w);
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * width + n * plane..][..plane];
                    dst.fill(T::zero());
                    if ow_lo >= ow_hi {
                        continue;
                    }
                    for oh in oh_lo..oh_hi {
                        let ih = (oh * s) as isize - p + (ki * d) as isize;
                        let src_row = &src[ih as usize * g.in_w..][..g.in_w];
                        let out_row = &mut dst[oh * g.out_w..][..g.out_w];
                        let base = (kj * d) as isize - p;
                        if s == 1 {
                            let iw0 = (ow_lo as isize + base) as usize;
                            out_row[ow_lo..ow_hi].copy_from_slice(&src_row[iw0..iw0 + (ow_hi - ow_lo)]);
                        } else {
                            for ow in ow_lo..ow_hi {
                                out_row[ow] = src_row[((ow * s) as isize + base) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into an NCHW gradient buffer.
pub fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], out: &mut [T]) {
    let spec = g.spec;
    let (k, s, d, p) = (spec.kernel, spec.stride, spec.dilation, spec.padding as isize);
    let width = g.cols_width();
    let plane = g.out_plane();
    for n in 0..g.batch {
        for c in 0..spec.in_channels {
            let dst = &mut out[(n * spec.in_channels + c) * g.in_plane()..][..g.in_plane()];
            for ki in 0..k {
                let (oh_lo, oh_hi) = g.valid_range((ki * d) as isize, g.in_h, g.out_h);
                for kj in 0..k {
                    let (ow_lo, ow_hi) = g.valid_range((kj * d) as isize, g.in_w, g.out_w);
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * width + n * plane..][..plane];
                    let base = (kj * d) as isize - p;
                    for oh in oh_lo..oh_hi {
                        let ih = (oh * s) as isize - p + (ki * d) as isize;
                        let dst_row = &mut dst[ih as usize * g.in_w..][..g.in_w];
                        let src_row = &src[oh * g.out_w..][..g.out_w];
                        for ow in ow_lo..ow_hi {
                            dst_row[((ow * s) as isize + base) as usize] += src_row[ow];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. Returns the NCHW output and the im2col matrix
/// (kept for the backward pass).
pub fn conv2d_forward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: &[T],
) -> (Vec<T>, Vec<T>) {
    let spec = g.spec;
    let width = g.cols_width();
    let mut cols = vec![T::zero(); spec.patch_len() * width];
    im2col(g, input, &mut cols);
    let mut y = vec![T::zero(); spec.out_channels * width];
    T::gemm(spec.out_channels, spec.patch_len(), width, weight, false, &cols, false, T::zero(), &mut y);
    let plane = g.out_plane();
    let mut out = vec![T::zero(); g.batch * spec.out_channels * plane];
    for n in 0..g.batch {
        for oc in 0..spec.out_channels {
            let src = &y[oc * width + n * plane..][..plane];
            let dst = &mut out[(n * spec.out_channels + oc) * plane..][..plane];
            let b = bias[oc];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = v + b;
            }
        }
    }
    (out, cols)
}

/// Gradients of a convolution. `grad_input` is only computed when
/// requested.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    cols: &[T],
    weight: &[T],
    grad_out: &[T],
    need_input: bool,
) -> ConvGrads<T> {
    let spec = g.spec;
    let width = g.cols_width();
    let plane = g.out_plane();
    // regroup NCHW gradient to [OC, N·plane]
    let mut dy = vec![T::zero(); spec.out_channels * width];
    let mut grad_bias = vec![T::zero(); spec.out_channels];
    for n in 0..g.batch {
        for oc in 0..spec.out_channels {
            let src = &grad_out[(n * spec.out_channels + oc) * plane..][..plane];
            dy[oc * width + n * plane..][..plane].copy_from_slice(src);
            grad_bias[oc] += src.iter().copied().sum::<T>();
        }
    }
    let mut grad_weight = vec![T::zero(); spec.out_channels * spec.patch_len()];
    T::gemm(spec.out_channels, width, spec.patch_len(), &dy, false, cols, true, T::zero(), &mut grad_weight);
    let input = need_input.then(|| {
        let mut dcols = vec![T::zero(); spec.patch_len() * width];
        T::gemm(spec.patch_len(), spec.out_channels, width, weight, true, &dy, false, T::zero(), &mut dcols);
        let mut dx = vec![T::zero(); g.batch * spec.in_channels * g.in_plane()];
        col2im(g, &dcols, &mut dx);
        dx
    });
    ConvGrads {
        input,
        weight: grad_weight,
        bias: grad_bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        let s = Conv2dSpec::new(3, 3, 3).dilation(2).padding(2);
        assert_eq!(s.output_size(84).unwrap(), 84);
        assert_eq!(Conv2dSpec::new(3, 32, 8).stride(4).output_size(84).unwrap(), 20);
        assert_eq!(Conv2dSpec::new(32, 64, 4).stride(2).output_size(20).unwrap(), 9);
        assert_eq!(Conv2dSpec::new(64, 64, 3).output_size(9).unwrap(), 7);
        assert!(Conv2dSpec::new(1, 1, 5).output_size(3).is_err());
    }

    #[test]
    fn one_by_one_identity_kernel_copies_input() {
        let spec = Conv2dSpec::new(3, 3, 1);
        let g = ConvGeometry::new(spec, &[1, 3, 5, 4]).unwrap();
        let input: Vec<f64> = (0..60).map(|i| i as f64 * 0.1).collect();
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let (out, _) = conv2d_forward(&g, &input, &w, &[0.0; 3]);
        assert_eq!(out, input);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        assert!(ConvGeometry::new(Conv2dSpec::new(3, 1, 3), &[1, 2, 8, 8]).is_err());
        assert!(ConvGeometry::new(Conv2dSpec::new(3, 1, 3), &[3, 8, 8]).is_err());
    }
}
