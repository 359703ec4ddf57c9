//! 2-D convolution kernels lowered onto matrix multiplication.
//!
//! Convolution here is cross-correlation (no kernel flip). Inputs are
//! `[C, H, W]` with no batch axis; a kernel is `[C_out, C_in, kh, kw]` for
//! [`conv2d`](crate::Graph::conv2d) and `[C_in, C_out, kh, kw]` for the
//! transposed form.
//!
//! Both directions share one [`Geometry`]: the shape relationship of a
//! forward convolution from a `[c_in, h, w]` image to a `[c_out, out_h,
//! out_w]` image. The transposed convolution is the adjoint of the forward
//! map with the roles of the two images swapped, so it reuses the same
//! `im2col` / `col2im` pair.

use crate::error::{Result, TensorError};
use crate::gemm::{gemm, Layout};

/// Explicit per-side zero padding in pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Symmetric padding that preserves spatial size at stride 1 for an odd
    /// kernel at the given dilation rate.
    pub fn same(kernel: (usize, usize), dilation: usize) -> Result<Self> {
        let (kh, kw) = kernel;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::InvalidArgument {
                op: "same_padding",
                reason: format!("kernel {kh}x{kw} is not odd"),
            });
        }
        let ph = dilation * (kh - 1) / 2;
        let pw = dilation * (kw - 1) / 2;
        Ok(Self {
            top: ph,
            bottom: ph,
            left: pw,
            right: pw,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    /// 1 is an ordinary convolution; `r` inserts `r - 1` gaps between taps.
    pub dilation: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            out_channels,
            kernel: (kernel, kernel),
            stride,
            dilation: 1,
            padding: Padding::default(),
        }
    }

    pub fn dilated(mut self, rate: usize) -> Self {
        self.dilation = rate;
        self
    }

    pub fn padded(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// Switches to symmetric "same" padding for the current kernel and rate.
    pub fn same(mut self) -> Result<Self> {
        self.padding = Padding::same(self.kernel, self.dilation)?;
        Ok(self)
    }

    /// Kernel extent once dilation gaps are inserted: `k + (k - 1)(rate - 1)`.
    pub fn effective_kernel(&self) -> (usize, usize) {
        let eff = |k: usize| k + (k - 1) * (self.dilation - 1);
        (eff(self.kernel.0), eff(self.kernel.1))
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        let bad = |reason: &str| {
            Err(TensorError::InvalidArgument {
                op,
                reason: reason.to_string(),
            })
        };
        if self.out_channels == 0 || self.kernel.0 == 0 || self.kernel.1 == 0 {
            return bad("zero-sized kernel");
        }
        if self.stride == 0 {
            return bad("stride must be positive");
        }
        if self.dilation == 0 {
            return bad("dilation rate must be positive");
        }
        Ok(())
    }
}

/// Shape relationship of a forward convolution `[c_in,h,w] -> [c_out,out_h,out_w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    /// Geometry of `conv2d` applied to a `[c_in, h, w]` input.
    pub fn forward(op: &'static str, c_in: usize, h: usize, w: usize, spec: &ConvSpec) -> Result<Self> {
        spec.validate(op)?;
        let (eh, ew) = spec.effective_kernel();
        let ph = h + spec.padding.top + spec.padding.bottom;
        let pw = w + spec.padding.left + spec.padding.right;
        if ph < eh {
            return Err(TensorError::NonPositiveOutput { op, axis: 1 });
        }
        if pw < ew {
            return Err(TensorError::NonPositiveOutput { op, axis: 2 });
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out: spec.out_channels,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            stride: spec.stride,
            dilation: spec.dilation,
            pad_top: spec.padding.top,
            pad_left: spec.padding.left,
            out_h: (ph - eh) / spec.stride + 1,
            out_w: (pw - ew) / spec.stride + 1,
        })
    }

    /// Geometry of the forward convolution whose adjoint maps a `[c_small,
    /// h_small, w_small]` image to the transposed-convolution output.
    ///
    /// The large image has extent `(h_small - 1) * stride + eff_k - pad_total`.
    pub fn transposed(op: &'static str, c_small: usize, h_small: usize, w_small: usize, spec: &ConvSpec) -> Result<Self> {
        spec.validate(op)?;
        let (eh, ew) = spec.effective_kernel();
        let full_h = (h_small - 1) * spec.stride + eh;
        let full_w = (w_small - 1) * spec.stride + ew;
        let pad_h = spec.padding.top + spec.padding.bottom;
        let pad_w = spec.padding.left + spec.padding.right;
        if full_h <= pad_h {
            return Err(TensorError::NonPositiveOutput { op, axis: 1 });
        }
        if full_w <= pad_w {
            return Err(TensorError::NonPositiveOutput { op, axis: 2 });
        }
        Ok(Self {
            c_in: spec.out_channels,
            h: full_h - pad_h,
            w: full_w - pad_w,
            c_out: c_small,
            kh: spec.kernel.0,
            kw: spec.kernel.1,
            stride: spec.stride,
            dilation: spec.dilation,
            pad_top: spec.padding.top,
            pad_left: spec.padding.left,
            out_h: h_small,
            out_w: w_small,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate hit by output index `o` and tap `k`, if inside the image.
    #[inline]
    fn source(o: usize, k: usize, stride: usize, dilation: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + k * dilation) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// Unfolds the large image into `[c_in*kh*kw, out_h*out_w]` columns.
    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        debug_assert_eq!(cols.len(), self.col_rows() * p);
        for c in 0..self.c_in {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oh in 0..self.out_h {
                        let out_row = &mut dst[oh * self.out_w..(oh + 1) * self.out_w];
                        match Self::source(oh, ki, self.stride, self.dilation, self.pad_top, self.h) {
                            None => out_row.fill(0.0),
                            Some(ih) => {
                                let src = &plane[ih * self.w..(ih + 1) * self.w];
                                for (ow, v) in out_row.iter_mut().enumerate() {
                                    *v = match Self::source(ow, kj, self.stride, self.dilation, self.pad_left, self.w) {
                                        Some(iw) => src[iw],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatter-adds columns back onto the image.
    pub fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c_in {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oh in 0..self.out_h {
                        let Some(ih) = Self::source(oh, ki, self.stride, self.dilation, self.pad_top, self.h) else {
                            continue;
                        };
                        let dst = &mut plane[ih * self.w..(ih + 1) * self.w];
                        for (ow, &v) in src[oh * self.out_w..(oh + 1) * self.out_w].iter().enumerate() {
                            if let Some(iw) = Self::source(ow, kj, self.stride, self.dilation, self.pad_left, self.w) {
                                dst[iw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[c_out, P] = kernel[c_out, R] * cols[R, P] + bias`.
pub(crate) fn conv_forward(g: &Geometry, input: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (r, p) = (g.col_rows(), g.positions());
    let mut cols = vec![0.0; r * p];
    g.im2col(input, &mut cols);
    let mut out = vec![0.0; g.c_out * p];
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_mut(p).zip(b) {
            row.fill(bv);
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    gemm(1.0, kernel, Layout::row_major(g.c_out, r), &cols, Layout::row_major(r, p), beta, &mut out);
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn conv_backward(
    g: &Geometry,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    want: (bool, bool, bool),
) -> ConvGrads {
    let (r, p) = (g.col_rows(), g.positions());
    let kernel_grad = want.1.then(|| {
        let mut cols = vec![0.0; r * p];
        g.im2col(input, &mut cols);
        let mut dk = vec![0.0; g.c_out * r];
        gemm(1.0, grad_out, Layout::row_major(g.c_out, p), &cols, Layout::transposed(r, p), 0.0, &mut dk);
        dk
    });
    let input_grad = want.0.then(|| {
        let mut dcols = vec![0.0; r * p];
        gemm(1.0, kernel, Layout::transposed(g.c_out, r), grad_out, Layout::row_major(g.c_out, p), 0.0, &mut dcols);
        let mut dx = vec![0.0; g.c_in * g.h * g.w];
        g.col2im(&dcols, &mut dx);
        dx
    });
    let bias_grad = want.2.then(|| grad_out.chunks(p).map(|row| row.iter().sum()).collect());
    ConvGrads {
        input: input_grad,
        kernel: kernel_grad,
        bias: bias_grad,
    }
}

/// Transposed convolution: `g` describes the forward conv from the (large)
/// output image down to the (small) input.
///
/// `kernel` is `[c_small, c_large, kh, kw]`, i.e. exactly the forward
/// convolution kernel of `g`, so the transposed map is `col2im(kernelᵀ x)`.
pub(crate) fn conv_transpose_forward(g: &Geometry, input: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (r, p) = (g.col_rows(), g.positions());
    let mut cols = vec![0.0; r * p];
    gemm(1.0, kernel, Layout::transposed(g.c_out, r), input, Layout::row_major(g.c_out, p), 0.0, &mut cols);
    let plane = g.h * g.w;
    let mut out = vec![0.0; g.c_in * plane];
    if let Some(b) = bias {
        for (chan, &bv) in out.chunks_mut(plane).zip(b) {
            chan.fill(bv);
        }
    }
    g.col2im(&cols, &mut out);
    out
}

pub(crate) fn conv_transpose_backward(
    g: &Geometry,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    want: (bool, bool, bool),
) -> ConvGrads {
    let (r, p) = (g.col_rows(), g.positions());
    let mut cols = vec![0.0; r * p];
    if want.0 || want.1 {
        g.im2col(grad_out, &mut cols);
    }
    let input_grad = want.0.then(|| {
        let mut dx = vec![0.0; g.c_out * p];
        gemm(1.0, kernel, Layout::row_major(g.c_out, r), &cols, Layout::row_major(r, p), 0.0, &mut dx);
        dx
    });
    let kernel_grad = want.1.then(|| {
        let mut dk = vec![0.0; g.c_out * r];
        gemm(1.0, input, Layout::row_major(g.c_out, p), &cols, Layout::transposed(r, p), 0.0, &mut dk);
        dk
    });
    let plane = g.h * g.w;
    let bias_grad = want.2.then(|| grad_out.chunks(plane).map(|c| c.iter().sum()).collect());
    ConvGrads {
        input: input_grad,
        kernel: kernel_grad,
        bias: bias_grad,
    }
}
