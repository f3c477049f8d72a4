//! Define-by-run operation tape with reverse-mode gradients.
//!
//! A tape is rebuilt for every forward pass. Nodes are appended in execution
//! order, so the record is topologically sorted by construction and
//! `backward` visits each node exactly once in reverse. Gradients are reset
//! at the start of every `backward` call, so repeated calls from the same
//! tape state produce identical results.

use super::ops;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(pub(crate) usize);

/// Running batch-norm statistics for one layer, one entry per channel.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

enum Op {
    Leaf,
    Conv2d { x: ValueId, w: ValueId, b: ValueId, stride: usize, padding: usize, dilation: usize },
    MaxPool2 { x: ValueId, argmax: Vec<u32> },
    BatchNorm { x: ValueId, gamma: ValueId, beta: ValueId, mean: Vec<f64>, inv_std: Vec<f64>, training: bool },
    Relu { x: ValueId },
    Sigmoid { x: ValueId },
    BilinearUp { x: ValueId, scale: usize },
    Concat { xs: Vec<ValueId> },
    Add { a: ValueId, b: ValueId },
    MulConst { x: ValueId, c: Tensor },
    ScaleByParam { x: ValueId, s: ValueId },
    GateMul { x: ValueId, gate: ValueId },
    OneMinus { x: ValueId },
    Mean { x: ValueId },
    BceWithLogitsMean { logits: ValueId, target: Tensor },
    MseMean { pred: ValueId, target: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a value that participates in differentiation.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Leaf, true)
    }

    /// Record a value that never needs a gradient (inputs, targets).
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to `id`, if the
    /// node required one and was reached.
    pub fn grad(&self, id: ValueId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> ValueId {
        self.nodes.push(Node { value, op, requires_grad });
        ValueId(self.nodes.len() - 1)
    }

    fn requires(&self, id: ValueId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ── Forward operations ──────────────────────────────────────────────

    /// 2-D convolution with zero padding.
    /// `weight` is `(c_out, c_in, k, k)`, `bias` is `(1, c_out, 1, 1)`.
    pub fn conv2d(
        &mut self,
        x: ValueId,
        weight: ValueId,
        bias: ValueId,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<ValueId> {
        if stride == 0 || dilation == 0 {
            return Err(Error::Argument(
                "conv2d: stride and dilation must be at least 1".into(),
            ));
        }
        let (_, cin, h, w) = self.value(x).dims();
        let (cout, cin_w, kh, kw) = self.value(weight).dims();
        if cin != cin_w {
            return Err(Error::Shape(format!(
                "conv2d: input has {cin} channels but weight expects {cin_w}"
            )));
        }
        if *self.value(bias).shape() != [1, cout, 1, 1] {
            return Err(Error::Shape(format!(
                "conv2d: bias shape {:?} does not match {cout} output channels",
                self.value(bias).shape()
            )));
        }
        let oh = ops::conv_out_extent(h, kh, stride, padding, dilation)?;
        let ow = ops::conv_out_extent(w, kw, stride, padding, dilation)?;
        let out = ops::conv2d_forward(
            self.value(x),
            self.value(weight),
            self.value(bias),
            stride,
            padding,
            dilation,
            oh,
            ow,
        );
        let rg = self.requires(x) || self.requires(weight) || self.requires(bias);
        Ok(self.push(out, Op::Conv2d { x, w: weight, b: bias, stride, padding, dilation }, rg))
    }

    /// 2x2 max pooling, stride 2. Spatial dims must be even.
    pub fn maxpool2x2(&mut self, x: ValueId) -> Result<ValueId> {
        let (_, _, h, w) = self.value(x).dims();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "maxpool2x2: spatial dims ({h}, {w}) must be even"
            )));
        }
        let (out, argmax) = ops::maxpool2x2_forward(self.value(x));
        let rg = self.requires(x);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Batch normalization over `(batch, height, width)` per channel.
    ///
    /// In training mode the batch statistics normalize the input and update
    /// `state` with the given momentum (running variance stored unbiased);
    /// in eval mode the stored running statistics are used.
    pub fn batchnorm2d(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        state: &mut BatchNormState,
        momentum: f64,
        eps: f64,
        training: bool,
    ) -> Result<ValueId> {
        let (n, c, h, w) = self.value(x).dims();
        if *self.value(gamma).shape() != [1, c, 1, 1] || *self.value(beta).shape() != [1, c, 1, 1] {
            return Err(Error::Shape(format!(
                "batchnorm2d: gamma/beta must be (1, {c}, 1, 1)"
            )));
        }
        if state.mean.len() != c || state.var.len() != c {
            return Err(Error::Shape(format!(
                "batchnorm2d: running stats hold {} channels, input has {c}",
                state.mean.len()
            )));
        }
        let m = n * h * w;
        let (mean, var) = if training {
            if m < 2 {
                return Err(Error::DegenerateStats(format!(
                    "batch normalization needs at least 2 elements per channel, got {m}"
                )));
            }
            let (mean, var) = ops::batch_stats(self.value(x));
            let unbias = m as f64 / (m as f64 - 1.0);
            for ci in 0..c {
                state.mean[ci] = (1.0 - momentum) * state.mean[ci] + momentum * mean[ci];
                state.var[ci] = (1.0 - momentum) * state.var[ci] + momentum * var[ci] * unbias;
            }
            (mean, var)
        } else {
            (state.mean.clone(), state.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut out = Tensor::zeros(*xv.shape());
        for ni in 0..n {
            for ci in 0..c {
                let (g, b) = (gv.data()[ci], bv.data()[ci]);
                let (mu, is) = (mean[ci], inv_std[ci]);
                let xp = xv.plane(ni, ci);
                let op = out.plane_mut(ni, ci);
                for (o, &v) in op.iter_mut().zip(xp) {
                    *o = (v - mu) * is * g + b;
                }
            }
        }
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(out, Op::BatchNorm { x, gamma, beta, mean, inv_std, training }, rg))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let out = Tensor {
            shape: *self.value(x).shape(),
            data: self.value(x).data().iter().map(|&v| v.max(0.0)).collect(),
        };
        let rg = self.requires(x);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let out = Tensor {
            shape: *self.value(x).shape(),
            data: self.value(x).data().iter().map(|&v| sigmoid_scalar(v)).collect(),
        };
        let rg = self.requires(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    /// Bilinear upsampling by an integer factor in {2, 4, 8, 16}, using the
    /// half-pixel-center convention (constant inputs stay constant).
    pub fn bilinear_upsample(&mut self, x: ValueId, scale: usize) -> Result<ValueId> {
        if ![2, 4, 8, 16].contains(&scale) {
            return Err(Error::Argument(format!(
                "bilinear_upsample: unsupported scale {scale} (expected 2, 4, 8 or 16)"
            )));
        }
        let out = ops::bilinear_upsample_forward(self.value(x), scale);
        let rg = self.requires(x);
        Ok(self.push(out, Op::BilinearUp { x, scale }, rg))
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, xs: &[ValueId]) -> Result<ValueId> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Argument("concat_channels: empty input list".into()))?;
        let (n, _, h, w) = self.value(*first).dims();
        let mut c_total = 0;
        for &id in xs {
            let (xn, xc, xh, xw) = self.value(id).dims();
            if (xn, xh, xw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat_channels: input {:?} disagrees with {:?} on batch or spatial dims",
                    self.value(id).shape(),
                    self.value(*first).shape()
                )));
            }
            c_total += xc;
        }
        let mut out = Tensor::zeros([n, c_total, h, w]);
        for ni in 0..n {
            let mut co = 0;
            for &id in xs {
                let xc = self.value(id).dims().1;
                for ci in 0..xc {
                    let src = self.value(id).plane(ni, ci).to_vec();
                    out.plane_mut(ni, co + ci).copy_from_slice(&src);
                }
                co += xc;
            }
        }
        let rg = xs.iter().any(|&id| self.requires(id));
        Ok(self.push(out, Op::Concat { xs: xs.to_vec() }, rg))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out = Tensor {
            shape: *self.value(a).shape(),
            data: self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect(),
        };
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: ValueId, c: Tensor) -> Result<ValueId> {
        if self.value(x).shape() != c.shape() {
            return Err(Error::Shape(format!(
                "mul_const: shapes {:?} and {:?} differ",
                self.value(x).shape(),
                c.shape()
            )));
        }
        let out = Tensor {
            shape: *c.shape(),
            data: self.value(x).data().iter().zip(c.data()).map(|(a, b)| a * b).collect(),
        };
        let rg = self.requires(x);
        Ok(self.push(out, Op::MulConst { x, c }, rg))
    }

    /// Scale a tensor by a scalar parameter (shape `(1, 1, 1, 1)`).
    pub fn scale_by_param(&mut self, x: ValueId, s: ValueId) -> Result<ValueId> {
        if self.value(s).numel() != 1 {
            return Err(Error::Shape(format!(
                "scale_by_param: scale must be scalar, got {:?}",
                self.value(s).shape()
            )));
        }
        let sv = self.value(s).data()[0];
        let out = Tensor {
            shape: *self.value(x).shape(),
            data: self.value(x).data().iter().map(|&v| sv * v).collect(),
        };
        let rg = self.requires(x) || self.requires(s);
        Ok(self.push(out, Op::ScaleByParam { x, s }, rg))
    }

    /// Multiply every channel of `x` by a single-channel gate map
    /// of shape `(batch, 1, height, width)`.
    pub fn gate_mul(&mut self, x: ValueId, gate: ValueId) -> Result<ValueId> {
        let (n, c, h, w) = self.value(x).dims();
        if *self.value(gate).shape() != [n, 1, h, w] {
            return Err(Error::Shape(format!(
                "gate_mul: gate shape {:?} must be ({n}, 1, {h}, {w})",
                self.value(gate).shape()
            )));
        }
        let mut out = Tensor::zeros([n, c, h, w]);
        for ni in 0..n {
            let gp = self.value(gate).plane(ni, 0).to_vec();
            for ci in 0..c {
                let xp = self.value(x).plane(ni, ci).to_vec();
                let op = out.plane_mut(ni, ci);
                for i in 0..gp.len() {
                    op[i] = xp[i] * gp[i];
                }
            }
        }
        let rg = self.requires(x) || self.requires(gate);
        Ok(self.push(out, Op::GateMul { x, gate }, rg))
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&mut self, x: ValueId) -> ValueId {
        let out = Tensor {
            shape: *self.value(x).shape(),
            data: self.value(x).data().iter().map(|&v| 1.0 - v).collect(),
        };
        let rg = self.requires(x);
        self.push(out, Op::OneMinus { x }, rg)
    }

    /// Mean over all elements, producing a scalar.
    pub fn mean(&mut self, x: ValueId) -> ValueId {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.requires(x);
        self.push(Tensor::scalar(m), Op::Mean { x }, rg)
    }

    /// Mean binary cross-entropy on logits, computed in the numerically
    /// stable form `max(z, 0) - z*t + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: ValueId, target: Tensor) -> Result<ValueId> {
        if self.value(logits).shape() != target.shape() {
            return Err(Error::Shape(format!(
                "bce: logits {:?} and target {:?} differ",
                self.value(logits).shape(),
                target.shape()
            )));
        }
        if !target.is_binary() {
            return Err(Error::Argument("bce: target must be binary (0/1)".into()));
        }
        let z = self.value(logits).data();
        let n = z.len() as f64;
        let sum: f64 = z
            .iter()
            .zip(target.data())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let rg = self.requires(logits);
        Ok(self.push(Tensor::scalar(sum / n), Op::BceWithLogitsMean { logits, target }, rg))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: ValueId, target: Tensor) -> Result<ValueId> {
        if self.value(pred).shape() != target.shape() {
            return Err(Error::Shape(format!(
                "mse: pred {:?} and target {:?} differ",
                self.value(pred).shape(),
                target.shape()
            )));
        }
        let p = self.value(pred).data();
        let n = p.len() as f64;
        let sum: f64 = p.iter().zip(target.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let rg = self.requires(pred);
        Ok(self.push(Tensor::scalar(sum / n), Op::MseMean { pred, target }, rg))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Resets all gradients first; every
    /// reachable node with `requires_grad` receives its gradient.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Argument(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(*self.value(loss).shape(), 1.0));

        let nodes = &self.nodes;
        let grads = &mut self.grads;

        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            match &nodes[i].op {
                Op::Leaf => {}

                Op::Conv2d { x, w, b, stride, padding, dilation } => {
                    let cg = ops::conv2d_backward(
                        &nodes[x.0].value,
                        &nodes[w.0].value,
                        &g,
                        *stride,
                        *padding,
                        *dilation,
                        nodes[x.0].requires_grad,
                        nodes[w.0].requires_grad,
                    );
                    if let Some(dx) = cg.dx {
                        accumulate(grads, nodes, *x, &dx);
                    }
                    if let Some(dw) = cg.dw {
                        accumulate(grads, nodes, *w, &dw);
                    }
                    if nodes[b.0].requires_grad {
                        accumulate(grads, nodes, *b, &cg.db);
                    }
                }

                Op::MaxPool2 { x, argmax } => {
                    if nodes[x.0].requires_grad {
                        let mut dx = Tensor::zeros(*nodes[x.0].value.shape());
                        for (o, &a) in argmax.iter().enumerate() {
                            dx.data[a as usize] += g.data()[o];
                        }
                        accumulate(grads, nodes, *x, &dx);
                    }
                }

                Op::BatchNorm { x, gamma, beta, mean, inv_std, training } => {
                    let xv = &nodes[x.0].value;
                    let gv = &nodes[gamma.0].value;
                    let (n, c, h, w) = xv.dims();
                    let m = (n * h * w) as f64;

                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut dx =
                        nodes[x.0].requires_grad.then(|| Tensor::zeros(*xv.shape()));

                    for ci in 0..c {
                        let (mu, is) = (mean[ci], inv_std[ci]);
                        let gamma_c = gv.data()[ci];
                        let mut sum_g = 0.0;
                        let mut sum_g_xhat = 0.0;
                        for ni in 0..n {
                            let gp = g.plane(ni, ci);
                            let xp = xv.plane(ni, ci);
                            for (gi, xi) in gp.iter().zip(xp) {
                                sum_g += gi;
                                sum_g_xhat += gi * (xi - mu) * is;
                            }
                        }
                        dgamma[ci] = sum_g_xhat;
                        dbeta[ci] = sum_g;
                        if let Some(dxp) = dx.as_mut() {
                            for ni in 0..n {
                                let gp = g.plane(ni, ci).to_vec();
                                let xp = xv.plane(ni, ci).to_vec();
                                let dp = dxp.plane_mut(ni, ci);
                                if *training {
                                    for k in 0..gp.len() {
                                        let xhat = (xp[k] - mu) * is;
                                        dp[k] += gamma_c * is / m
                                            * (m * gp[k] - sum_g - xhat * sum_g_xhat);
                                    }
                                } else {
                                    for k in 0..gp.len() {
                                        dp[k] += gamma_c * is * gp[k];
                                    }
                                }
                            }
                        }
                    }
                    if let Some(dxp) = dx {
                        accumulate(grads, nodes, *x, &dxp);
                    }
                    if nodes[gamma.0].requires_grad {
                        let t = Tensor { shape: [1, c, 1, 1], data: dgamma };
                        accumulate(grads, nodes, *gamma, &t);
                    }
                    if nodes[beta.0].requires_grad {
                        let t = Tensor { shape: [1, c, 1, 1], data: dbeta };
                        accumulate(grads, nodes, *beta, &t);
                    }
                }

                Op::Relu { x } => {
                    if nodes[x.0].requires_grad {
                        let xd = nodes[x.0].value.data();
                        let dx = Tensor {
                            shape: *nodes[x.0].value.shape(),
                            data: g
                                .data()
                                .iter()
                                .zip(xd)
                                .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                                .collect(),
                        };
                        accumulate(grads, nodes, *x, &dx);
                    }
                }

                Op::Sigmoid { x } => {
                    if nodes[x.0].requires_grad {
                        let out = nodes[i].value.data();
                        let dx = Tensor {
                            shape: *nodes[x.0].value.shape(),
                            data: g
                                .data()
                                .iter()
                                .zip(out)
                                .map(|(&gi, &s)| gi * s * (1.0 - s))
                                .collect(),
                        };
                        accumulate(grads, nodes, *x, &dx);
                    }
                }

                Op::BilinearUp { x, scale } => {
                    if nodes[x.0].requires_grad {
                        let dx = ops::bilinear_upsample_backward(
                            &g,
                            nodes[x.0].value.shape(),
                            *scale,
                        );
                        accumulate(grads, nodes, *x, &dx);
                    }
                }

                Op::Concat { xs } => {
                    let (n, _, h, w) = nodes[i].value.dims();
                    let mut co = 0;
                    for &xid in xs {
                        let xc = nodes[xid.0].value.dims().1;
                        if nodes[xid.0].requires_grad {
                            let mut dx = Tensor::zeros([n, xc, h, w]);
                            for ni in 0..n {
                                for ci in 0..xc {
                                    dx.plane_mut(ni, ci)
                                        .copy_from_slice(g.plane(ni, co + ci));
                                }
                            }
                            accumulate(grads, nodes, xid, &dx);
                        }
                        co += xc;
                    }
                }

                Op::Add { a, b } => {
                    if nodes[a.0].requires_grad {
                        accumulate(grads, nodes, *a, &g);
                    }
                    if nodes[b.0].requires_grad {
                        accumulate(grads, nodes, *b, &g);
                    }
                }

                Op::MulConst { x, c } => {
                    if nodes[x.0].requires_grad {
                        let dx = Tensor {
                            shape: *c.shape(),
                            data: g.data().iter().zip(c.data()).map(|(a, b)| a * b).collect(),
                        };
                        accumulate(grads, nodes, *x, &dx);
                    }
                }

                Op::ScaleByParam { x, s } => {
                    let sv = nodes[s.0].value.data()[0];
                    if nodes[x.0].requires_grad {
                        let dx = Tensor {
                            shape: *nodes[x.0].value.shape(),
                            data: g.data().iter().map(|&gi| gi * sv).collect(),
                        };
                        accumulate(grads, nodes, *x, &dx);
                    }
                    if nodes[s.0].requires_grad {
                        let ds: f64 = g
                            .data()
                            .iter()
                            .zip(nodes[x.0].value.data())
                            .map(|(a, b)| a * b)
                            .sum();
                        accumulate(grads, nodes, *s, &Tensor::scalar(ds));
                    }
                }

                Op::GateMul { x, gate } => {
                    let (n, c, h, w) = nodes[x.0].value.dims();
                    if nodes[x.0].requires_grad {
                        let mut dx = Tensor::zeros([n, c, h, w]);
                        for ni in 0..n {
                            let gp = nodes[gate.0].value.plane(ni, 0);
                            for ci in 0..c {
                                let gu = g.plane(ni, ci);
                                let dp = dx.plane_mut(ni, ci);
                                for k in 0..gp.len() {
                                    dp[k] = gu[k] * gp[k];
                                }
                            }
                        }
                        accumulate(grads, nodes, *x, &dx);
                    }
                    if nodes[gate.0].requires_grad {
                        let mut dg = Tensor::zeros([n, 1, h, w]);
                        for ni in 0..n {
                            for ci in 0..c {
                                let gu = g.plane(ni, ci);
                                let xp = nodes[x.0].value.plane(ni, ci);
                                let dp = dg.plane_mut(ni, 0);
                                for k in 0..xp.len() {
                                    dp[k] += gu[k] * xp[k];
                                }
                            }
                        }
                        accumulate(grads, nodes, *gate, &dg);
                    }
                }

                Op::OneMinus { x } => {
                    if nodes[x.0].requires_grad {
                        let dx = Tensor {
                            shape: *nodes[x.0].value.shape(),
                            data: g.data().iter().map(|&gi| -gi).collect(),
                        };
                        accumulate(grads, nodes, *x, &dx);
                    }
                }

                Op::Mean { x } => {
                    if nodes[x.0].requires_grad {
                        let n = nodes[x.0].value.numel() as f64;
                        let dx = Tensor::full(*nodes[x.0].value.shape(), g.data()[0] / n);
                        accumulate(grads, nodes, *x, &dx);
                    }
                }

                Op::BceWithLogitsMean { logits, target } => {
                    if nodes[logits.0].requires_grad {
                        let n = target.numel() as f64;
                        let g0 = g.data()[0];
                        let dx = Tensor {
                            shape: *target.shape(),
                            data: nodes[logits.0]
                                .value
                                .data()
                                .iter()
                                .zip(target.data())
                                .map(|(&z, &t)| g0 * (sigmoid_scalar(z) - t) / n)
                                .collect(),
                        };
                        accumulate(grads, nodes, *logits, &dx);
                    }
                }

                Op::MseMean { pred, target } => {
                    if nodes[pred.0].requires_grad {
                        let n = target.numel() as f64;
                        let g0 = g.data()[0];
                        let dx = Tensor {
                            shape: *target.shape(),
                            data: nodes[pred.0]
                                .value
                                .data()
                                .iter()
                                .zip(target.data())
                                .map(|(&p, &t)| g0 * 2.0 * (p - t) / n)
                                .collect(),
                        };
                        accumulate(grads, nodes, *pred, &dx);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: ValueId, delta: &Tensor) {
    debug_assert_eq!(nodes[id.0].value.shape(), delta.shape());
    match &mut grads[id.0] {
        Some(g) => {
            for (a, b) in g.data.iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(delta.clone()),
    }
}

#[inline]
pub fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
