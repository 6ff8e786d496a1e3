//! Differentiable layer primitives with hand-written backward passes.
//!
//! Images are channel-last (`H×W×C`); convolution kernels are `kh×kw×C×F`.
//! Convolution is lowered to a matrix product over an im2col buffer whose
//! column index is `(ky·kw + kx)·C + c`, matching the kernel's row-major
//! layout reshaped to `(kh·kw·C)×F`.

use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub filters: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        ensure!(input.len() == 3, Dimension, "conv input must be H×W×C, got {input:?}");
        ensure!(
            kernel.len() == 4,
            Dimension,
            "conv kernel must be kh×kw×C×F, got {kernel:?}"
        );
        ensure!(stride >= 1, Dimension, "stride must be at least 1");
        let (height, width, channels) = (input[0], input[1], input[2]);
        let (kernel_h, kernel_w, kc, filters) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        ensure!(
            kc == channels,
            Dimension,
            "kernel expects {kc} channels, input has {channels}"
        );
        ensure!(
            kernel_h <= height + 2 * padding && kernel_w <= width + 2 * padding,
            Dimension,
            "kernel {kernel_h}×{kernel_w} larger than padded input {}×{}",
            height + 2 * padding,
            width + 2 * padding
        );
        Ok(Self {
            height,
            width,
            channels,
            kernel_h,
            kernel_w,
            filters,
            stride,
            padding,
            out_h: (height + 2 * padding - kernel_h) / stride + 1,
            out_w: (width + 2 * padding - kernel_w) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_h, self.out_w, self.filters]
    }

    fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.channels
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for output position `(oy, ox)` and kernel tap `(ky, kx)`,
    /// or `None` when it falls in the zero padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (y < self.height && x < self.width).then_some((y, x))
    }
}

fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let patch = g.patch_len();
    let mut cols = vec![0.0; g.positions() * patch];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * patch..][..patch];
            for ky in 0..g.kernel_h {
                for kx in 0..g.kernel_w {
                    if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                        let src = &input[(y * g.width + x) * g.channels..][..g.channels];
                        row[(ky * g.kernel_w + kx) * g.channels..][..g.channels].copy_from_slice(src);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let patch = g.patch_len();
    let mut out = vec![0.0; g.height * g.width * g.channels];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * patch..][..patch];
            for ky in 0..g.kernel_h {
                for kx in 0..g.kernel_w {
                    if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                        let dst = &mut out[(y * g.width + x) * g.channels..][..g.channels];
                        let src = &row[(ky * g.kernel_w + kx) * g.channels..][..g.channels];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2-D convolution (cross-correlation) with zero padding.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    if let Some(b) = bias {
        b.expect_shape(&[g.filters])?;
    }
    let cols = im2col(input.data(), &g);
    let mut out = vec![0.0; g.positions() * g.filters];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(g.filters) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(
        g.positions(),
        g.patch_len(),
        g.filters,
        &cols,
        false,
        kernel.data(),
        false,
        &mut out,
        bias.is_some(),
    );
    Tensor::new(g.output_shape().to_vec(), out)
}

/// Gradients of a convolution with respect to its input, kernel and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    upstream: &Tensor,
) -> Result<ConvGrads> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    upstream.expect_shape(&g.output_shape())?;
    let input_grad = conv_input_grad(&g, kernel, upstream);

    let cols = im2col(input.data(), &g);
    let mut kernel_grad = vec![0.0; g.patch_len() * g.filters];
    gemm(
        g.patch_len(),
        g.positions(),
        g.filters,
        &cols,
        true,
        upstream.data(),
        false,
        &mut kernel_grad,
        false,
    );
    let mut bias_grad = vec![0.0; g.filters];
    for row in upstream.data().chunks_exact(g.filters) {
        for (b, u) in bias_grad.iter_mut().zip(row) {
            *b += u;
        }
    }
    Ok(ConvGrads {
        input: input_grad,
        kernel: Tensor::new(kernel.shape().to_vec(), kernel_grad)?,
        bias: Tensor::from_vec(bias_grad),
    })
}

/// Input gradient only; skips the kernel-gradient product.
pub fn conv2d_backward_input(
    input_shape: &[usize],
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    upstream: &Tensor,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input_shape, kernel.shape(), stride, padding)?;
    upstream.expect_shape(&g.output_shape())?;
    Ok(conv_input_grad(&g, kernel, upstream))
}

fn conv_input_grad(g: &ConvGeometry, kernel: &Tensor, upstream: &Tensor) -> Tensor {
    let mut grad_cols = vec![0.0; g.positions() * g.patch_len()];
    gemm(
        g.positions(),
        g.filters,
        g.patch_len(),
        upstream.data(),
        false,
        kernel.data(),
        true,
        &mut grad_cols,
        false,
    );
    let data = col2im(&grad_cols, g);
    Tensor::from_fn(&[g.height, g.width, g.channels], |i| data[i])
}

fn linear_dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    ensure!(weight.rank() == 2, Dimension, "linear weight must be n×o");
    let (n, o) = (weight.shape()[0], weight.shape()[1]);
    let batch = match input.shape() {
        [len] if *len == n => 1,
        [b, len] if *len == n => *b,
        other => {
            return Err(crate::Error::Dimension(format!(
                "linear input {other:?} does not match weight {n}×{o}"
            )))
        }
    };
    Ok((batch, n, o))
}

/// `out_j = Σᵢ input_i · weight_ij + bias_j`; accepts `[n]` or batched `[b, n]` input.
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (batch, n, o) = linear_dims(input, weight)?;
    if let Some(b) = bias {
        b.expect_shape(&[o])?;
    }
    let mut out = vec![0.0; batch * o];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(o) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(
        batch,
        n,
        o,
        input.data(),
        false,
        weight.data(),
        false,
        &mut out,
        bias.is_some(),
    );
    let shape = if input.rank() == 1 { vec![o] } else { vec![batch, o] };
    Tensor::new(shape, out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(input: &Tensor, weight: &Tensor, upstream: &Tensor) -> Result<LinearGrads> {
    let (batch, n, o) = linear_dims(input, weight)?;
    ensure!(
        upstream.len() == batch * o,
        Dimension,
        "linear upstream has {} values, expected {}",
        upstream.len(),
        batch * o
    );
    let input_grad = linear_backward_input(input.shape(), weight, upstream)?;
    let mut weight_grad = vec![0.0; n * o];
    gemm(
        n,
        batch,
        o,
        input.data(),
        true,
        upstream.data(),
        false,
        &mut weight_grad,
        false,
    );
    let mut bias_grad = vec![0.0; o];
    for row in upstream.data().chunks_exact(o) {
        for (b, u) in bias_grad.iter_mut().zip(row) {
            *b += u;
        }
    }
    Ok(LinearGrads {
        input: input_grad,
        weight: Tensor::new(vec![n, o], weight_grad)?,
        bias: Tensor::from_vec(bias_grad),
    })
}

pub fn linear_backward_input(input_shape: &[usize], weight: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    ensure!(weight.rank() == 2, Dimension, "linear weight must be n×o");
    let (n, o) = (weight.shape()[0], weight.shape()[1]);
    let batch = upstream.len() / o.max(1);
    ensure!(
        batch * o == upstream.len() && batch * n == input_shape.iter().product::<usize>(),
        Dimension,
        "linear upstream {:?} does not match input {input_shape:?}",
        upstream.shape()
    );
    let mut grad = vec![0.0; batch * n];
    gemm(
        batch,
        o,
        n,
        upstream.data(),
        false,
        weight.data(),
        true,
        &mut grad,
        false,
    );
    Tensor::new(input_shape.to_vec(), grad)
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `1 / (1 + e^{-c·v})`
    SigmoidScaled(f64),
    Tanh,
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        if let Activation::SigmoidScaled(c) = *self {
            ensure!(
                c > 0.0 && c.is_finite(),
                Input,
                "sigmoid scale must be positive, got {c}"
            );
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Activation::Relu => v.max(0.0),
            Activation::SigmoidScaled(c) => sigmoid(c * v),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative at pre-activation `v`; ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(&self, v: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::SigmoidScaled(c) => {
                let s = sigmoid(c * v);
                c * s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }
}

pub fn activation_forward(input: &Tensor, kind: Activation) -> Result<Tensor> {
    kind.validate()?;
    Ok(input.map(|v| kind.apply(v)))
}

pub fn activation_backward(input: &Tensor, kind: Activation, upstream: &Tensor) -> Result<Tensor> {
    kind.validate()?;
    input.zip_map(upstream, |v, u| kind.derivative(v) * u)
}

/// Non-overlapping average pooling over `size×size` windows; trailing rows
/// and columns that do not fill a window are dropped.
pub fn avg_pool_forward(input: &Tensor, size: usize) -> Result<Tensor> {
    let (h, w, c) = pool_dims(input.shape(), size)?;
    let (oh, ow) = (h / size, w / size);
    let scale = 1.0 / (size * size) as f64;
    let src = input.data();
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut out[(oy * ow + ox) * c..][..c];
            for y in oy * size..(oy + 1) * size {
                for x in ox * size..(ox + 1) * size {
                    for (d, s) in dst.iter_mut().zip(&src[(y * w + x) * c..][..c]) {
                        *d += s * scale;
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

pub fn avg_pool_backward(input_shape: &[usize], size: usize, upstream: &Tensor) -> Result<Tensor> {
    let (h, w, c) = pool_dims(input_shape, size)?;
    let (oh, ow) = (h / size, w / size);
    upstream.expect_shape(&[oh, ow, c])?;
    let scale = 1.0 / (size * size) as f64;
    let up = upstream.data();
    let mut grad = vec![0.0; h * w * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let u = &up[(oy * ow + ox) * c..][..c];
            for y in oy * size..(oy + 1) * size {
                for x in ox * size..(ox + 1) * size {
                    for (g, s) in grad[(y * w + x) * c..][..c].iter_mut().zip(u) {
                        *g = s * scale;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), grad)
}

fn pool_dims(shape: &[usize], size: usize) -> Result<(usize, usize, usize)> {
    ensure!(shape.len() == 3, Dimension, "pool input must be H×W×C, got {shape:?}");
    ensure!(
        size >= 1 && size <= shape[0] && size <= shape[1],
        Dimension,
        "pool window {size} does not fit {shape:?}"
    );
    Ok((shape[0], shape[1], shape[2]))
}
