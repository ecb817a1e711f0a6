//! Single-image dense kernels shared by the op graph and the embedding
//! network. Layouts are CHW for activations and `[C_out, C_in, kh, kw]` for
//! convolution kernels.

use super::tensor::{gemm, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        in_h: usize,
        in_w: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let g = Self {
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride,
            pad,
        };
        if stride == 0
            || in_h + 2 * pad < kernel.0
            || in_w + 2 * pad < kernel.1
            || in_channels == 0
            || out_channels == 0
        {
            return Err(Error::shape("conv2d", format!("invalid geometry {g:?}")));
        }
        Ok(g)
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel_w) / self.stride + 1
    }

    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Columns of the im2col matrix.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.positions()
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }
}

/// Unfold zero-padded patches into a `[patch_len, positions]` matrix.
pub fn im2col<T: Real>(g: &ConvGeometry, input: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.in_channels {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `grad_input`.
pub fn col2im<T: Real>(g: &ConvGeometry, cols: &[T], grad_input: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.in_channels {
        let plane = &mut grad_input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution of one image. `cols` receives the unfolded input
/// (`patch_len × positions`) for reuse in the backward pass.
pub fn conv2d_forward<T: Real>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
    cols: &mut [T],
) {
    im2col(g, input, cols);
    let p = g.positions();
    match bias {
        Some(b) => {
            for (co, row) in out.chunks_exact_mut(p).enumerate() {
                row.fill(b[co]);
            }
            gemm(g.out_channels, g.patch_len(), p, T::one(), weight, false, cols, false, T::one(), out);
        }
        None => gemm(g.out_channels, g.patch_len(), p, T::one(), weight, false, cols, false, T::zero(), out),
    }
}

/// Backward convolution of one image. Gradients are accumulated into the
/// provided buffers. `scratch` must hold `patch_len × positions` scalars when
/// `grad_input` is requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    g: &ConvGeometry,
    cols: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: Option<&mut [T]>,
    grad_input: Option<&mut [T]>,
    scratch: &mut Vec<T>,
) {
    let p = g.positions();
    let kl = g.patch_len();
    gemm(g.out_channels, p, kl, T::one(), grad_out, false, cols, true, T::one(), grad_weight);
    if let Some(gb) = grad_bias {
        for (co, row) in grad_out.chunks_exact(p).enumerate() {
            gb[co] += row.iter().copied().sum();
        }
    }
    if let Some(gi) = grad_input {
        scratch.resize(kl * p, T::zero());
        gemm(kl, g.out_channels, p, T::one(), weight, true, grad_out, false, T::zero(), scratch);
        col2im(g, scratch, gi);
    }
}

/// Per-channel PReLU on a CHW (or C×1) buffer.
pub fn prelu_forward<T: Real>(input: &[T], slopes: &[T], out: &mut [T]) {
    let plane = input.len() / slopes.len();
    for (c, &a) in slopes.iter().enumerate() {
        let range = c * plane..(c + 1) * plane;
        for (o, &z) in out[range.clone()].iter_mut().zip(&input[range]) {
            *o = if z > T::zero() { z } else { a * z };
        }
    }
}

/// PReLU backward. Writes the input gradient and accumulates slope gradients.
pub fn prelu_backward<T: Real>(
    input: &[T],
    slopes: &[T],
    grad_out: &[T],
    grad_input: &mut [T],
    grad_slopes: &mut [T],
) {
    let plane = input.len() / slopes.len();
    for (c, &a) in slopes.iter().enumerate() {
        let range = c * plane..(c + 1) * plane;
        let mut ga = T::zero();
        for ((gi, &z), &go) in grad_input[range.clone()]
            .iter_mut()
            .zip(&input[range.clone()])
            .zip(&grad_out[range])
        {
            if z > T::zero() {
                *gi = go;
            } else {
                *gi = a * go;
                ga += z * go;
            }
        }
        grad_slopes[c] += ga;
    }
}

/// Guard added under the square root of every L2 normalization.
pub const NORM_EPS: f64 = 1e-12;

/// `x / sqrt(|x|^2 + eps)`; returns the normalized vector and the divisor.
pub fn l2_normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let r = (x.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
    (x.iter().map(|v| v / r).collect(), r)
}

/// Vector-Jacobian product of [`l2_normalize`]: `(g - n (n·g)) / r`.
pub fn l2_normalize_backward(normalized: &[f64], norm: f64, grad_out: &[f64]) -> Vec<f64> {
    let dot: f64 = normalized.iter().zip(grad_out).map(|(n, g)| n * g).sum();
    normalized
        .iter()
        .zip(grad_out)
        .map(|(n, g)| (g - n * dot) / norm)
        .collect()
}
