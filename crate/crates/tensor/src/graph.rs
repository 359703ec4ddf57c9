//! Tape-recorded computation graph with reverse-mode accumulation.
//!
//! A [`Graph`] is built fresh for each forward pass. Every operation appends
//! a node holding its value and enough provenance to run its adjoint;
//! [`Graph::backward`] walks the tape once in reverse. Leaves keep their
//! gradient buffers across calls, so repeated backward passes accumulate
//! until [`Graph::zero_grad`].

use std::sync::Arc;

use crate::conv::{self, ConvSpec, Geometry};
use crate::error::{Result, TensorError};
use crate::gemm::{gemm, Layout};
use crate::tensor::{numel, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Ln,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: Geometry,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: Geometry,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    Offset(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    Dot(Var, Var),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; only leaves keep one between backward passes.
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Outer extent, axis extent and inner extent of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf sharing storage with a caller-owned tensor (model parameters).
    pub fn shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.push_shared(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    /// Gradient accumulated on a leaf, shaped like its value.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Borrowed flat gradient of a leaf.
    pub fn grad_data(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- linear maps -----------------------------------------------------

    /// Cross-correlation of `input [C_in,H,W]` with `kernel [C_out,C_in,kh,kw]` plus per-channel bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        const OP: &str = "conv2d";
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 {
            return Err(TensorError::Rank { op: OP, expected: 3, found: xs });
        }
        if ks.len() != 4 {
            return Err(TensorError::Rank { op: OP, expected: 4, found: ks });
        }
        let expect = [spec.out_channels, xs[0], spec.kernel.0, spec.kernel.1];
        for axis in 0..4 {
            if ks[axis] != expect[axis] {
                return Err(TensorError::AxisMismatch {
                    op: "conv2d kernel",
                    axis,
                    expected: expect[axis],
                    found: ks[axis],
                });
            }
        }
        self.check_bias(OP, bias, spec.out_channels)?;
        let geom = Geometry::forward(OP, xs[0], xs[1], xs[2], spec)?;
        let out = conv::conv_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let requires = self.any_requires(&[input, kernel]) || bias.is_some_and(|b| self.requires_grad(b));
        let value = Tensor::new(vec![geom.c_out, geom.out_h, geom.out_w], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom }, requires))
    }

    /// Transposed convolution of `input [C_in,H,W]` with `kernel [C_in,C_out,kh,kw]`.
    ///
    /// Output extent is `(H - 1) * stride + eff_kh - pad_h` (padding crops).
    pub fn conv2d_transpose(&mut self, input: Var, kernel: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        const OP: &str = "conv2d_transpose";
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 3 {
            return Err(TensorError::Rank { op: OP, expected: 3, found: xs });
        }
        if ks.len() != 4 {
            return Err(TensorError::Rank { op: OP, expected: 4, found: ks });
        }
        let expect = [xs[0], spec.out_channels, spec.kernel.0, spec.kernel.1];
        for axis in 0..4 {
            if ks[axis] != expect[axis] {
                return Err(TensorError::AxisMismatch {
                    op: "conv2d_transpose kernel",
                    axis,
                    expected: expect[axis],
                    found: ks[axis],
                });
            }
        }
        self.check_bias(OP, bias, spec.out_channels)?;
        let geom = Geometry::transposed(OP, xs[0], xs[1], xs[2], spec)?;
        let out = conv::conv_transpose_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let requires = self.any_requires(&[input, kernel]) || bias.is_some_and(|b| self.requires_grad(b));
        let value = Tensor::new(vec![geom.c_in, geom.h, geom.w], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { input, kernel, bias, geom }, requires))
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, len: usize) -> Result<()> {
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [len] {
                return Err(TensorError::ShapeMismatch {
                    op,
                    left: vec![len],
                    right: bs.to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Affine map `weight [M,N] · input [N] + bias [M]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "dense";
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 1 {
            return Err(TensorError::Rank { op: OP, expected: 1, found: xs });
        }
        if ws.len() != 2 {
            return Err(TensorError::Rank { op: OP, expected: 2, found: ws });
        }
        if ws[1] != xs[0] {
            return Err(TensorError::AxisMismatch {
                op: "dense weight",
                axis: 1,
                expected: xs[0],
                found: ws[1],
            });
        }
        let (m, n) = (ws[0], ws[1]);
        self.check_bias(OP, bias, m)?;
        let mut out = match bias {
            Some(b) => self.value(b).data().to_vec(),
            None => vec![0.0; m],
        };
        gemm(
            1.0,
            self.value(weight).data(),
            Layout::row_major(m, n),
            self.value(input).data(),
            Layout::row_major(n, 1),
            1.0,
            &mut out,
        );
        let requires = self.any_requires(&[input, weight]) || bias.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(Tensor::vector(out), Op::Dense { input, weight, bias }, requires))
    }

    // ---- pointwise -------------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let op = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let value = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if vb.numel() == 1 {
            let y = vb.data()[0];
            va.map(|x| f(x, y))
        } else if va.numel() == 1 {
            let x = va.data()[0];
            vb.map(|y| f(x, y))
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        };
        let requires = self.any_requires(&[a, b]);
        Ok(self.push(value, Op::Binary(kind, a, b), requires))
    }

    /// Elementwise sum; shapes must match exactly or one side must hold one element.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let v = self.value(x);
        let value = match kind {
            Unary::Tanh => v.map(f64::tanh),
            Unary::Sigmoid => v.map(sigmoid),
            Unary::Relu => v.map(|x| x.max(0.0)),
            Unary::Ln => {
                if v.data().iter().any(|&x| x <= 0.0) {
                    return Err(TensorError::InvalidArgument {
                        op: "ln",
                        reason: "non-positive argument".into(),
                    });
                }
                v.map(f64::ln)
            }
        };
        let requires = self.requires_grad(x);
        Ok(self.push(value, Op::Unary(kind, x), requires))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Ln, x)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let requires = self.requires_grad(x);
        self.push(value, Op::Scale(x, factor), requires)
    }

    /// Addition of a constant.
    pub fn offset(&mut self, x: Var, shift: f64) -> Var {
        let value = self.value(x).map(|v| v + shift);
        let requires = self.requires_grad(x);
        self.push(value, Op::Offset(x), requires)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let requires = self.requires_grad(x);
        self.push(value, Op::Clamp(x, lo, hi), requires)
    }

    /// Softmax over all elements of a vector, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 1 {
            return Err(TensorError::Rank {
                op: "softmax",
                expected: 1,
                found: v.shape().to_vec(),
            });
        }
        if !v.is_finite() {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let value = Tensor::vector(softmax(v.data()));
        let requires = self.requires_grad(x);
        Ok(self.push(value, Op::Softmax(x), requires))
    }

    // ---- structure -------------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        const OP: &str = "concat";
        let Some(&first) = parts.first() else {
            return Err(TensorError::Empty { op: OP });
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("axis {axis} out of range for rank {}", base.len()),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            for (ax, (&a, &b)) in base.iter().zip(s).enumerate() {
                if ax != axis && a != b {
                    return Err(TensorError::AxisMismatch {
                        op: OP,
                        axis: ax,
                        expected: a,
                        found: b,
                    });
                }
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let requires = self.any_requires(parts);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            requires,
        ))
    }

    /// `len` consecutive entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        const OP: &str = "slice";
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("axis {axis} out of range for rank {}", shape.len()),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: format!("range {start}..{} exceeds extent {}", start + len, shape[axis]),
            });
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let requires = self.requires_grad(x);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Slice { input: x, axis, start }, requires))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let requires = self.requires_grad(x);
        Ok(self.push(value, Op::Reshape(x), requires))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        self.reshape(x, &[n])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let requires = self.requires_grad(x);
        self.push(value, Op::Sum(x), requires)
    }

    /// Inner product of two equal-shaped tensors, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "dot",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let s: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum();
        let requires = self.any_requires(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), requires))
    }

    // ---- reverse pass ----------------------------------------------------

    /// Accumulates `d output / d leaf` into every reachable differentiable leaf.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_shape = self.shape(output);
        if out_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(out_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            let Some(gout) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                match &mut self.nodes[id].grad {
                    Some(acc) => acc.iter_mut().zip(&gout).for_each(|(a, g)| *a += g),
                    slot @ None => *slot = Some(gout),
                }
                continue;
            }
            self.propagate(id, &gout, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut sink = Sink { graph: self, grads };
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Conv2d { input, kernel, bias, geom } => {
                let want = (wants(*input), wants(*kernel), bias.is_some_and(wants));
                let g = conv::conv_backward(geom, val(*input), val(*kernel), gout, want);
                sink.add_opt(*input, g.input);
                sink.add_opt(*kernel, g.kernel);
                if let Some(b) = bias {
                    sink.add_opt(*b, g.bias);
                }
            }
            Op::ConvTranspose2d { input, kernel, bias, geom } => {
                let want = (wants(*input), wants(*kernel), bias.is_some_and(wants));
                let g = conv::conv_transpose_backward(geom, val(*input), val(*kernel), gout, want);
                sink.add_opt(*input, g.input);
                sink.add_opt(*kernel, g.kernel);
                if let Some(b) = bias {
                    sink.add_opt(*b, g.bias);
                }
            }
            Op::Dense { input, weight, bias } => {
                let x = val(*input);
                let (m, n) = (gout.len(), x.len());
                if wants(*weight) {
                    let dw = sink.slot(*weight);
                    for (row, &g) in dw.chunks_mut(n).zip(gout) {
                        if g != 0.0 {
                            row.iter_mut().zip(x).for_each(|(d, &xv)| *d += g * xv);
                        }
                    }
                }
                if wants(*input) {
                    let w = val(*weight);
                    let dx = sink.slot(*input);
                    gemm(1.0, w, Layout::transposed(m, n), gout, Layout::row_major(m, 1), 1.0, dx);
                }
                if let Some(b) = bias {
                    sink.add(*b, gout);
                }
            }
            Op::Binary(kind, a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                    Binary::Add => (gout.to_vec(), gout.to_vec()),
                    Binary::Sub => (gout.to_vec(), gout.iter().map(|g| -g).collect()),
                    Binary::Mul => {
                        let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
                        (
                            gout.iter().enumerate().map(|(i, g)| g * pick(vb, i)).collect(),
                            gout.iter().enumerate().map(|(i, g)| g * pick(va, i)).collect(),
                        )
                    }
                };
                sink.add_reduced(*a, &ga, va.len());
                sink.add_reduced(*b, &gb, vb.len());
            }
            Op::Unary(kind, x) => {
                let y = node.value.data();
                let xv = val(*x);
                let gx: Vec<f64> = match kind {
                    Unary::Tanh => gout.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Unary::Sigmoid => gout.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    Unary::Relu => gout.iter().zip(xv).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
                    Unary::Ln => gout.iter().zip(xv).map(|(g, x)| g / x).collect(),
                };
                sink.add(*x, &gx);
            }
            Op::Scale(x, f) => {
                let gx: Vec<f64> = gout.iter().map(|g| g * f).collect();
                sink.add(*x, &gx);
            }
            Op::Offset(x) => sink.add(*x, gout),
            Op::Clamp(x, lo, hi) => {
                let gx: Vec<f64> = gout
                    .iter()
                    .zip(val(*x))
                    .map(|(g, &v)| if v < *lo || v > *hi { 0.0 } else { *g })
                    .collect();
                sink.add(*x, &gx);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let inner: f64 = gout.iter().zip(y).map(|(g, y)| g * y).sum();
                let gx: Vec<f64> = gout.iter().zip(y).map(|(g, y)| y * (g - inner)).collect();
                sink.add(*x, &gx);
            }
            Op::Concat { parts, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let extent = self.nodes[p.0].value.shape()[*axis];
                    if wants(p) {
                        let dst = sink.slot(p);
                        for o in 0..outer {
                            let src = &gout[(o * total + offset) * inner..(o * total + offset + extent) * inner];
                            dst[o * extent * inner..(o + 1) * extent * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += extent;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.nodes[input.0].value.shape();
                let (outer, extent, inner) = split_axis(in_shape, *axis);
                let len = node.value.shape()[*axis];
                let dst = sink.slot(*input);
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    dst[base..base + len * inner]
                        .iter_mut()
                        .zip(&gout[o * len * inner..(o + 1) * len * inner])
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::Reshape(x) => sink.add(*x, gout),
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                sink.add(*x, &vec![gout[0]; n]);
            }
            Op::Dot(a, b) => {
                let g = gout[0];
                let ga: Vec<f64> = val(*b).iter().map(|v| g * v).collect();
                let gb: Vec<f64> = val(*a).iter().map(|v| g * v).collect();
                sink.add(*a, &ga);
                sink.add(*b, &gb);
            }
        }
    }
}

/// Gradient accumulator for the parents of one node during propagation.
struct Sink<'a> {
    graph: &'a Graph,
    grads: &'a mut [Option<Vec<f64>>],
}

impl Sink<'_> {
    fn slot(&mut self, v: Var) -> &mut Vec<f64> {
        let n = self.graph.nodes[v.0].value.numel();
        self.grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn add(&mut self, v: Var, g: &[f64]) {
        if !self.graph.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut self.grads[v.0];
        match slot {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    fn add_opt(&mut self, v: Var, g: Option<Vec<f64>>) {
        let Some(g) = g else { return };
        if !self.graph.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut self.grads[v.0];
        match slot {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Adds `g`, summing it down to one element when `v` was broadcast.
    fn add_reduced(&mut self, v: Var, g: &[f64], len: usize) {
        if len == g.len() {
            self.add(v, g);
        } else {
            let s: f64 = g.iter().sum();
            self.add(v, &[s]);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax of a finite vector.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
