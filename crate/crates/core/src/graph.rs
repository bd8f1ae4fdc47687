//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A [`Graph`] records every forward op in topological order. Nodes are
//! addressed by [`TensorId`]; a node knows its op, its input ids (always
//! smaller than its own id), its value, and whether any gradient-requiring
//! leaf is reachable from it. [`Graph::backward`] walks the tape once in
//! reverse and accumulates gradients into per-node buffers. Repeated
//! `backward` calls accumulate (documented behavior); [`Graph::zero_grads`]
//! resets.
//!
//! A node produced by [`Graph::stop_gradient`] is a forward identity that
//! contributes exactly zero to all upstream gradients: it is recorded with
//! `requires_grad = false`, so the reverse sweep never propagates through
//! it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Conv2d {
        input: TensorId,
        kernel: TensorId,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: TensorId,
        kernel: TensorId,
        stride: usize,
        padding: usize,
    },
    /// Per-channel bias: input `[C,H,W]` plus bias `[C]`.
    BiasAdd { input: TensorId, bias: TensorId },
    Add { lhs: TensorId, rhs: TensorId },
    Sub { lhs: TensorId, rhs: TensorId },
    Mul { lhs: TensorId, rhs: TensorId },
    Relu { input: TensorId },
    Exp { input: TensorId },
    Log { input: TensorId },
    Square { input: TensorId },
    Clamp { input: TensorId, lo: S, hi: S },
    Scale { input: TensorId, factor: S },
    Sum { input: TensorId },
    GatherPixel { input: TensorId, row: usize, col: usize },
    StopGradient,
    View { input: TensorId },
}

#[derive(Debug)]
struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

/// Tape of forward ops with reverse-mode gradients.
#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf tensor. Gradients are accumulated for it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> TensorId {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Inserts a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor<S>) -> TensorId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: S) -> TensorId {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, id: TensorId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of the most recent backward passes, if any.
    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, requires_grad: bool) -> TensorId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op<S>, value: Tensor<S>, inputs: &[TensorId]) -> TensorId {
        let requires = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.push(op, value, requires)
    }

    // ── Convolution ─────────────────────────────────────────────────────

    /// 2-D cross-correlation. Input `[C_in,H,W]`, kernel `[C_out,C_in,k,k]`
    /// with odd `k`; output `[C_out,H',W']` where
    /// `H' = (H + 2*padding - k)/stride + 1`.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let x = self.value(input);
        let k = self.value(kernel);
        let (ci, h, w) = expect_chw("conv2d", x.shape())?;
        let ks = k.shape();
        if ks.len() != 4 || ks[2] != ks[3] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: vec![0, ci, 0, 0],
                got: ks.to_vec(),
            });
        }
        let (co, kci, kk) = (ks[0], ks[1], ks[2]);
        if kci != ci {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: vec![co, ci, kk, kk],
                got: ks.to_vec(),
            });
        }
        if kk % 2 == 0 {
            return Err(Error::invalid("conv2d", "kernel size must be odd"));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        if h + 2 * padding < kk || w + 2 * padding < kk {
            return Err(Error::invalid("conv2d", "kernel larger than padded input"));
        }
        let oh = (h + 2 * padding - kk) / stride + 1;
        let ow = (w + 2 * padding - kk) / stride + 1;
        let out = conv2d_forward(x.data(), ci, h, w, k.data(), co, kk, stride, padding, oh, ow);
        let value = Tensor::new(vec![co, oh, ow], out)?;
        Ok(self.push_op(
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
            value,
            &[input, kernel],
        ))
    }

    /// Transposed convolution used for upsampling. Input `[C_in,H,W]`,
    /// kernel `[C_in,C_out,k,k]`. Padding is fixed to `stride/2`, so with
    /// the `k = 2*stride` convention the spatial dims are multiplied by
    /// `stride` exactly.
    pub fn conv_transpose2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        stride: usize,
    ) -> Result<TensorId> {
        let x = self.value(input);
        let k = self.value(kernel);
        let (ci, h, w) = expect_chw("conv_transpose2d", x.shape())?;
        let ks = k.shape();
        if ks.len() != 4 || ks[2] != ks[3] || ks[0] != ci {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose2d",
                expected: vec![ci, 0, 0, 0],
                got: ks.to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv_transpose2d", "stride must be >= 1"));
        }
        let (co, kk) = (ks[1], ks[2]);
        let padding = stride / 2;
        let oh_s = (h - 1) * stride + kk;
        let ow_s = (w - 1) * stride + kk;
        if oh_s <= 2 * padding || ow_s <= 2 * padding {
            return Err(Error::invalid("conv_transpose2d", "output size collapses"));
        }
        let (oh, ow) = (oh_s - 2 * padding, ow_s - 2 * padding);
        let out = conv_transpose2d_forward(
            x.data(),
            ci,
            h,
            w,
            k.data(),
            co,
            kk,
            stride,
            padding,
            oh,
            ow,
        );
        let value = Tensor::new(vec![co, oh, ow], out)?;
        Ok(self.push_op(
            Op::ConvTranspose2d {
                input,
                kernel,
                stride,
                padding,
            },
            value,
            &[input, kernel],
        ))
    }

    /// Adds a `[C]` bias to a `[C,H,W]` map, one value per channel.
    pub fn bias_add(&mut self, input: TensorId, bias: TensorId) -> Result<TensorId> {
        let x = self.value(input);
        let b = self.value(bias);
        let (c, h, w) = expect_chw("bias_add", x.shape())?;
        if b.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "bias_add",
                expected: vec![c],
                got: b.shape().to_vec(),
            });
        }
        let mut out = x.data().to_vec();
        for ch in 0..c {
            let bv = b.data()[ch];
            for v in &mut out[ch * h * w..(ch + 1) * h * w] {
                *v = *v + bv;
            }
        }
        let value = Tensor::new(vec![c, h, w], out)?;
        Ok(self.push_op(Op::BiasAdd { input, bias }, value, &[input, bias]))
    }

    // ── Elementwise ─────────────────────────────────────────────────────

    pub fn add(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        let value = self.binary_values("add", lhs, rhs, |a, b| a + b)?;
        Ok(self.push_op(Op::Add { lhs, rhs }, value, &[lhs, rhs]))
    }

    pub fn sub(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        let value = self.binary_values("sub", lhs, rhs, |a, b| a - b)?;
        Ok(self.push_op(Op::Sub { lhs, rhs }, value, &[lhs, rhs]))
    }

    pub fn mul(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        let value = self.binary_values("mul", lhs, rhs, |a, b| a * b)?;
        Ok(self.push_op(Op::Mul { lhs, rhs }, value, &[lhs, rhs]))
    }

    fn binary_values(
        &self,
        op: &'static str,
        lhs: TensorId,
        rhs: TensorId,
        f: impl Fn(S, S) -> S,
    ) -> Result<Tensor<S>> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op,
                expected: a.shape().to_vec(),
                got: b.shape().to_vec(),
            });
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn relu(&mut self, input: TensorId) -> TensorId {
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| if v > S::zero() { v } else { S::zero() })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push_op(Op::Relu { input }, value, &[input])
    }

    pub fn exp(&mut self, input: TensorId) -> TensorId {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.exp()).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push_op(Op::Exp { input }, value, &[input])
    }

    /// Natural log. Rejects non-positive inputs, naming the first offending
    /// index.
    pub fn log(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.value(input);
        if let Some((index, &value)) = x
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| v <= S::zero())
        {
            return Err(Error::LogDomain {
                index,
                value: value.as_f64(),
            });
        }
        let data = x.data().iter().map(|&v| v.ln()).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push_op(Op::Log { input }, value, &[input]))
    }

    pub fn square(&mut self, input: TensorId) -> TensorId {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v * v).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push_op(Op::Square { input }, value, &[input])
    }

    /// Clamps values to `[lo, hi]`. Gradient passes through inside the
    /// interval (inclusive) and is zero outside.
    pub fn clamp(&mut self, input: TensorId, lo: S, hi: S) -> TensorId {
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| {
                if v < lo {
                    lo
                } else if v > hi {
                    hi
                } else {
                    v
                }
            })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push_op(Op::Clamp { input, lo, hi }, value, &[input])
    }

    /// Multiplies by a compile-time constant factor.
    pub fn scale(&mut self, input: TensorId, factor: S) -> TensorId {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push_op(Op::Scale { input, factor }, value, &[input])
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, input: TensorId) -> TensorId {
        let x = self.value(input);
        let mut acc = S::zero();
        for &v in x.data() {
            acc = acc + v;
        }
        self.push_op(Op::Sum { input }, Tensor::scalar(acc), &[input])
    }

    /// Reads the single value at pixel `(row, col)` of an `[H,W]` map.
    /// Backward scatters the incoming gradient onto exactly that index.
    pub fn gather_pixel(&mut self, input: TensorId, row: usize, col: usize) -> Result<TensorId> {
        let x = self.value(input);
        let shape = x.shape();
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather_pixel",
                expected: vec![0, 0],
                got: shape.to_vec(),
            });
        }
        let (h, w) = (shape[0], shape[1]);
        if row >= h || col >= w {
            return Err(Error::PixelOutOfBounds {
                row,
                col,
                height: h,
                width: w,
            });
        }
        let v = x.data()[row * w + col];
        Ok(self.push_op(
            Op::GatherPixel { input, row, col },
            Tensor::scalar(v),
            &[input],
        ))
    }

    /// Forward identity whose backward contributes exactly zero to every
    /// ancestor of `input`.
    pub fn stop_gradient(&mut self, input: TensorId) -> TensorId {
        let value = self.value(input).clone();
        self.push(Op::StopGradient, value, false)
    }

    /// Reshapes without moving data; the element count must not change.
    pub fn view(&mut self, input: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let x = self.value(input);
        let numel: usize = shape.iter().product();
        if numel != x.numel() {
            return Err(Error::ShapeMismatch {
                op: "view",
                expected: x.shape().to_vec(),
                got: shape,
            });
        }
        let value = Tensor::new(shape, x.data().to_vec())?;
        Ok(self.push_op(Op::View { input }, value, &[input]))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients of this call are added
    /// into each node's persistent buffer, so repeated calls accumulate.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        // Scratch buffers hold only this call's adjoints; propagating from
        // the persistent buffers would double-count earlier passes.
        let mut scratch: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            scratch[loss.0] = Some(vec![S::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(gout) = scratch[i].take() else {
                continue;
            };
            self.propagate(i, &gout, &mut scratch);
            match &mut self.nodes[i].grad {
                Some(buf) => {
                    for (b, g) in buf.iter_mut().zip(&gout) {
                        *b = *b + *g;
                    }
                }
                slot => *slot = Some(gout),
            }
        }
        Ok(())
    }

    fn accumulate(&self, scratch: &mut [Option<Vec<S>>], id: TensorId, grad: &[S]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut scratch[id.0] {
            Some(buf) => {
                for (b, g) in buf.iter_mut().zip(grad) {
                    *b = *b + *g;
                }
            }
            slot => *slot = Some(grad.to_vec()),
        }
    }

    fn propagate(&self, i: usize, gout: &[S], scratch: &mut [Option<Vec<S>>]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf | Op::StopGradient => {}
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let x = self.value(input);
                let k = self.value(kernel);
                let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (co, kk) = (k.shape()[0], k.shape()[2]);
                let (oh, ow) = {
                    let s = self.nodes[i].value.shape();
                    (s[1], s[2])
                };
                let need_x = self.nodes[input.0].requires_grad;
                let need_k = self.nodes[kernel.0].requires_grad;
                let (gx, gk) = conv2d_backward(
                    gout,
                    x.data(),
                    ci,
                    h,
                    w,
                    k.data(),
                    co,
                    kk,
                    stride,
                    padding,
                    oh,
                    ow,
                    need_x,
                    need_k,
                );
                if let Some(gx) = gx {
                    self.accumulate(scratch, input, &gx);
                }
                if let Some(gk) = gk {
                    self.accumulate(scratch, kernel, &gk);
                }
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let x = self.value(input);
                let k = self.value(kernel);
                let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (co, kk) = (k.shape()[1], k.shape()[2]);
                let (oh, ow) = {
                    let s = self.nodes[i].value.shape();
                    (s[1], s[2])
                };
                let need_x = self.nodes[input.0].requires_grad;
                let need_k = self.nodes[kernel.0].requires_grad;
                let (gx, gk) = conv_transpose2d_backward(
                    gout,
                    x.data(),
                    ci,
                    h,
                    w,
                    k.data(),
                    co,
                    kk,
                    stride,
                    padding,
                    oh,
                    ow,
                    need_x,
                    need_k,
                );
                if let Some(gx) = gx {
                    self.accumulate(scratch, input, &gx);
                }
                if let Some(gk) = gk {
                    self.accumulate(scratch, kernel, &gk);
                }
            }
            Op::BiasAdd { input, bias } => {
                self.accumulate(scratch, input, gout);
                if self.nodes[bias.0].requires_grad {
                    let c = self.value(bias).numel();
                    let plane = gout.len() / c;
                    let mut gb = vec![S::zero(); c];
                    for ch in 0..c {
                        let mut acc = S::zero();
                        for &g in &gout[ch * plane..(ch + 1) * plane] {
                            acc = acc + g;
                        }
                        gb[ch] = acc;
                    }
                    self.accumulate(scratch, bias, &gb);
                }
            }
            Op::Add { lhs, rhs } => {
                self.accumulate(scratch, lhs, gout);
                self.accumulate(scratch, rhs, gout);
            }
            Op::Sub { lhs, rhs } => {
                self.accumulate(scratch, lhs, gout);
                if self.nodes[rhs.0].requires_grad {
                    let neg: Vec<S> = gout.iter().map(|&g| -g).collect();
                    self.accumulate(scratch, rhs, &neg);
                }
            }
            Op::Mul { lhs, rhs } => {
                if self.nodes[lhs.0].requires_grad {
                    let b = self.value(rhs).data();
                    let ga: Vec<S> = gout.iter().zip(b).map(|(&g, &v)| g * v).collect();
                    self.accumulate(scratch, lhs, &ga);
                }
                if self.nodes[rhs.0].requires_grad {
                    let a = self.value(lhs).data();
                    let gb: Vec<S> = gout.iter().zip(a).map(|(&g, &v)| g * v).collect();
                    self.accumulate(scratch, rhs, &gb);
                }
            }
            Op::Relu { input } => {
                // Subgradient at exactly zero is zero.
                let x = self.value(input).data();
                let gx: Vec<S> = gout
                    .iter()
                    .zip(x)
                    .map(|(&g, &v)| if v > S::zero() { g } else { S::zero() })
                    .collect();
                self.accumulate(scratch, input, &gx);
            }
            Op::Exp { input } => {
                let y = self.nodes[i].value.data();
                let gx: Vec<S> = gout.iter().zip(y).map(|(&g, &v)| g * v).collect();
                self.accumulate(scratch, input, &gx);
            }
            Op::Log { input } => {
                let x = self.value(input).data();
                let gx: Vec<S> = gout.iter().zip(x).map(|(&g, &v)| g / v).collect();
                self.accumulate(scratch, input, &gx);
            }
            Op::Square { input } => {
                let two = S::from_f64_lossy(2.0);
                let x = self.value(input).data();
                let gx: Vec<S> = gout.iter().zip(x).map(|(&g, &v)| g * two * v).collect();
                self.accumulate(scratch, input, &gx);
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(input).data();
                let gx: Vec<S> = gout
                    .iter()
                    .zip(x)
                    .map(|(&g, &v)| if v >= lo && v <= hi { g } else { S::zero() })
                    .collect();
                self.accumulate(scratch, input, &gx);
            }
            Op::Scale { input, factor } => {
                let gx: Vec<S> = gout.iter().map(|&g| g * factor).collect();
                self.accumulate(scratch, input, &gx);
            }
            Op::Sum { input } => {
                if self.nodes[input.0].requires_grad {
                    let n = self.value(input).numel();
                    let gx = vec![gout[0]; n];
                    self.accumulate(scratch, input, &gx);
                }
            }
            Op::GatherPixel { input, row, col } => {
                if self.nodes[input.0].requires_grad {
                    let shape = self.value(input).shape();
                    let w = shape[1];
                    let mut gx = vec![S::zero(); self.value(input).numel()];
                    gx[row * w + col] = gout[0];
                    self.accumulate(scratch, input, &gx);
                }
            }
            Op::View { input } => {
                self.accumulate(scratch, input, gout);
            }
        }
    }
}

fn expect_chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            op,
            expected: vec![0, 0, 0],
            got: shape.to_vec(),
        });
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// Valid output range `[lo, hi)` for one kernel offset: indices `o` such
/// that `o*stride + k_off - padding` lands inside `0..in_len`.
#[inline]
fn span(stride: usize, padding: usize, k_off: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if padding > k_off {
        (padding - k_off).div_ceil(stride)
    } else {
        0
    };
    let top = in_len as isize - 1 + padding as isize - k_off as isize;
    let hi = if top < 0 {
        0
    } else {
        out_len.min(top as usize / stride + 1)
    };
    (lo, hi)
}

/// Lays the input out as an `[ci*k*k, oh*ow]` matrix: row `j = (ic,kh,kw)`
/// holds, per output pixel, the input tap that kernel component touches
/// (zero where the tap falls into padding). Both conv passes then reduce
/// to contiguous row operations.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &[S],
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Vec<S> {
    let npix = oh * ow;
    let mut cols = vec![S::zero(); ci * k * k * npix];
    for ic in 0..ci {
        for kh in 0..k {
            let (oy_lo, oy_hi) = span(stride, padding, kh, h, oh);
            for kw in 0..k {
                let (ox_lo, ox_hi) = span(stride, padding, kw, w, ow);
                if ox_hi <= ox_lo {
                    continue;
                }
                let row = &mut cols[((ic * k + kh) * k + kw) * npix..][..npix];
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + kh - padding;
                    let xrow = &x[(ic * h + iy) * w..][..w];
                    let dst = &mut row[oy * ow + ox_lo..oy * ow + ox_hi];
                    let ix0 = ox_lo * stride + kw - padding;
                    if stride == 1 {
                        dst.copy_from_slice(&xrow[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        let src = xrow[ix0..].iter().step_by(stride);
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Eight-lane dot product; the fixed lane split keeps results
/// deterministic while letting the loop vectorize.
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    const LANES: usize = 8;
    let mut acc = [S::zero(); LANES];
    let chunks = a.len() / LANES;
    for i in 0..chunks {
        let aa = &a[i * LANES..][..LANES];
        let bb = &b[i * LANES..][..LANES];
        for lane in 0..LANES {
            acc[lane] = acc[lane] + aa[lane] * bb[lane];
        }
    }
    let mut total = S::zero();
    for lane in acc {
        total = total + lane;
    }
    for i in chunks * LANES..a.len() {
        total = total + a[i] * b[i];
    }
    total
}

fn axpy<S: Scalar>(dst: &mut [S], scale: S, src: &[S]) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d = *d + scale * v;
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<S: Scalar>(
    x: &[S],
    ci: usize,
    h: usize,
    w: usize,
    ker: &[S],
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Vec<S> {
    let npix = oh * ow;
    let patch = ci * k * k;
    let cols = im2col(x, ci, h, w, k, stride, padding, oh, ow);
    let mut out = vec![S::zero(); co * npix];
    for oc in 0..co {
        let orow = &mut out[oc * npix..][..npix];
        let krow = &ker[oc * patch..][..patch];
        for (j, &kv) in krow.iter().enumerate() {
            axpy(orow, kv, &cols[j * npix..][..npix]);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<S: Scalar>(
    gout: &[S],
    x: &[S],
    ci: usize,
    h: usize,
    w: usize,
    ker: &[S],
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    need_x: bool,
    need_k: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let npix = oh * ow;
    let patch = ci * k * k;
    let cols = im2col(x, ci, h, w, k, stride, padding, oh, ow);

    let gk = need_k.then(|| {
        let mut gk = vec![S::zero(); co * patch];
        for oc in 0..co {
            let grow = &gout[oc * npix..][..npix];
            let gkrow = &mut gk[oc * patch..][..patch];
            for (j, slot) in gkrow.iter_mut().enumerate() {
                *slot = dot(grow, &cols[j * npix..][..npix]);
            }
        }
        gk
    });

    let gx = need_x.then(|| {
        // Gradient w.r.t. the column matrix, then scatter back (col2im).
        let mut gcols = vec![S::zero(); patch * npix];
        for oc in 0..co {
            let grow = &gout[oc * npix..][..npix];
            let krow = &ker[oc * patch..][..patch];
            for (j, &kv) in krow.iter().enumerate() {
                axpy(&mut gcols[j * npix..][..npix], kv, grow);
            }
        }
        let mut gx = vec![S::zero(); ci * h * w];
        col2im_add(&gcols, ci, h, w, k, stride, padding, oh, ow, &mut gx);
        gx
    });

    (gx, gk)
}

/// Adjoint of [`im2col`]: adds each column row back onto the input taps it
/// was read from.
#[allow(clippy::too_many_arguments)]
fn col2im_add<S: Scalar>(
    cols: &[S],
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    out: &mut [S],
) {
    let npix = oh * ow;
    for ic in 0..ci {
        for kh in 0..k {
            let (oy_lo, oy_hi) = span(stride, padding, kh, h, oh);
            for kw in 0..k {
                let (ox_lo, ox_hi) = span(stride, padding, kw, w, ow);
                if ox_hi <= ox_lo {
                    continue;
                }
                let row = &cols[((ic * k + kh) * k + kw) * npix..][..npix];
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + kh - padding;
                    let orow = &mut out[(ic * h + iy) * w..][..w];
                    let src = &row[oy * ow + ox_lo..oy * ow + ox_hi];
                    let ix0 = ox_lo * stride + kw - padding;
                    if stride == 1 {
                        for (d, &v) in orow[ix0..ix0 + src.len()].iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    } else {
                        let dst = orow[ix0..].iter_mut().step_by(stride);
                        for (d, &v) in dst.zip(src) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_transpose2d_forward<S: Scalar>(
    x: &[S],
    ci: usize,
    h: usize,
    w: usize,
    ker: &[S],
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Vec<S> {
    // A transposed conv is the input-gradient pass of the conv mapping
    // [co,oh,ow] to [ci,h,w]; the [ci,co,k,k] kernel layout already
    // matches that conv's [C_out=ci, C_in=co] layout.
    let npix = h * w;
    let patch = co * k * k;
    let mut cols = vec![S::zero(); patch * npix];
    for icc in 0..ci {
        let xrow = &x[icc * npix..][..npix];
        let krow = &ker[icc * patch..][..patch];
        for (j, &kv) in krow.iter().enumerate() {
            axpy(&mut cols[j * npix..][..npix], kv, xrow);
        }
    }
    let mut out = vec![S::zero(); co * oh * ow];
    col2im_add(&cols, co, oh, ow, k, stride, padding, h, w, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_transpose2d_backward<S: Scalar>(
    gout: &[S],
    x: &[S],
    ci: usize,
    h: usize,
    w: usize,
    ker: &[S],
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    need_x: bool,
    need_k: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let npix = h * w;
    let patch = co * k * k;
    let cols = (need_x || need_k).then(|| im2col(gout, co, oh, ow, k, stride, padding, h, w));
    let gx = need_x.then(|| {
        let cols = cols.as_ref().expect("columns built");
        let mut gx = vec![S::zero(); ci * npix];
        for icc in 0..ci {
            let grow = &mut gx[icc * npix..][..npix];
            let krow = &ker[icc * patch..][..patch];
            for (j, &kv) in krow.iter().enumerate() {
                axpy(grow, kv, &cols[j * npix..][..npix]);
            }
        }
        gx
    });
    let gk = need_k.then(|| {
        let cols = cols.as_ref().expect("columns built");
        let mut gk = vec![S::zero(); ci * patch];
        for icc in 0..ci {
            let xrow = &x[icc * npix..][..npix];
            let gkrow = &mut gk[icc * patch..][..patch];
            for (j, slot) in gkrow.iter_mut().enumerate() {
                *slot = dot(xrow, &cols[j * npix..][..npix]);
            }
        }
        gk
    });
    (gx, gk)
}
