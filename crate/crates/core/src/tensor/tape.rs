//! Wengert-list reverse-mode autodiff.
//!
//! A [`Tape`] is an arena of nodes, each holding its forward value and the
//! recipe that produced it. Recording order is topological by construction
//! (an op can only reference already-recorded nodes), so backward is a single
//! reverse sweep. One backward pass is allowed per forward recording.
//!
//! Gradients propagate only into nodes that need them (a leaf marked
//! `requires_grad`, or any node on a path to one), so freezing parameters —
//! as activation maximization does — skips their gradient math entirely.

use super::kernels::{self, ConvDims};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Batch-norm statistics mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Standardize with batch statistics and update running stats.
    Train,
    /// Standardize with stored running statistics.
    Eval,
}

enum Op {
    Leaf,
    Conv2d { input: NodeId, kernel: NodeId, bias: NodeId, dims: ConvDims, cols: Option<Vec<f32>> },
    BatchNorm { input: NodeId, gamma: NodeId, beta: NodeId, mode: BnMode, mean: Vec<f32>, invstd: Vec<f32> },
    Relu { input: NodeId },
    MaxPool { input: NodeId, argmax: Vec<u32> },
    Gap { input: NodeId },
    Linear { input: NodeId, weight: NodeId, bias: NodeId },
    SoftmaxCe { logits: NodeId, labels: Vec<u8>, probs: Vec<f32> },
    Add { a: NodeId, b: NodeId },
    ChannelMask { input: NodeId, zeroed: Vec<bool> },
    ChannelSpatialMean { input: NodeId, channel: usize },
    WeightedSum { input: NodeId, weights: Vec<f32> },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    needs_grad: bool,
    op: Op,
}

/// Recorded forward pass; see module docs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Copy a tensor onto the tape as a leaf. `requires_grad` marks it as a
    /// gradient target for the next backward pass.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), requires_grad, Op::Leaf)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: NodeId) -> &[f32] {
        &self.nodes[id.0].data
    }

    /// Gradient of the last backward pass, if this node received one.
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Copy a node's value out as a tensor.
    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(self.nodes[id.0].shape.clone(), self.nodes[id.0].data.clone())
            .expect("node shape/data always consistent")
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, needs_grad: bool, op: Op) -> NodeId {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value recorded on tape"
        );
        self.nodes.push(Node { shape, data, grad: None, needs_grad, op });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn dims4(&self, id: NodeId, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.nodes[id.0].shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            ref s => Err(Error::Dim { op, detail: format!("expected rank-4 input, got shape {:?}", s) }),
        }
    }

    /// 2-D convolution with bias. Output spatial size follows
    /// `(H + 2*pad - kh)/stride + 1`.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (n, cin, h, w) = self.dims4(input, "conv2d")?;
        let (cout, kcin, kh, kw) = match self.nodes[kernel.0].shape[..] {
            [a, b, c, d] => (a, b, c, d),
            ref s => {
                return Err(Error::Dim { op: "conv2d", detail: format!("kernel must be rank 4, got {:?}", s) })
            }
        };
        if kcin != cin {
            return Err(Error::Dim {
                op: "conv2d",
                detail: format!("input channel axis {} vs kernel input-channel axis {}", cin, kcin),
            });
        }
        if self.nodes[bias.0].shape[..] != [cout] {
            return Err(Error::Dim {
                op: "conv2d",
                detail: format!("bias shape {:?} vs output channels {}", self.nodes[bias.0].shape, cout),
            });
        }
        if stride < 1 {
            return Err(Error::Dim { op: "conv2d", detail: "stride must be >= 1".into() });
        }
        let oh = kernels::conv_out_dim(h, kh, stride, pad).ok_or_else(|| Error::Dim {
            op: "conv2d",
            detail: format!("kernel height {} exceeds padded input height {}", kh, h + 2 * pad),
        })?;
        let ow = kernels::conv_out_dim(w, kw, stride, pad).ok_or_else(|| Error::Dim {
            op: "conv2d",
            detail: format!("kernel width {} exceeds padded input width {}", kw, w + 2 * pad),
        })?;
        let dims = ConvDims { n, cin, h, w, cout, kh, kw, stride, pad, oh, ow };

        let mut out = vec![0.0f32; n * cout * oh * ow];
        // The unfolded columns are only needed by the kernel-gradient pass.
        let mut cols = if self.needs(kernel) {
            Some(vec![0.0f32; n * dims.ckk() * dims.ohw()])
        } else {
            None
        };
        kernels::conv2d_fwd(
            &self.nodes[input.0].data,
            &self.nodes[kernel.0].data,
            &self.nodes[bias.0].data,
            &dims,
            &mut out,
            cols.as_deref_mut(),
        );
        let needs = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(vec![n, cout, oh, ow], out, needs, Op::Conv2d { input, kernel, bias, dims, cols }))
    }

    /// Train-mode batch normalization over the channel axis of `[N, C, H, W]`.
    ///
    /// Standardizes with batch statistics and updates
    /// `running_mean`/`running_var` in place by exponential moving average
    /// (unbiased variance, `running = (1-momentum)*running + momentum*batch`).
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d_train(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &mut [f32],
        running_var: &mut [f32],
        eps: f32,
        momentum: f32,
    ) -> Result<NodeId> {
        let (n, _, h, w) = self.dims4(input, "batchnorm2d")?;
        let c = self.bn_check(input, gamma, beta, running_mean, running_var)?;
        let hw = h * w;
        if n * hw < 2 {
            return Err(Error::DegenerateBatch { actual: n * hw });
        }
        let (mean, invstd, var_unbiased) = kernels::bn_batch_stats(&self.nodes[input.0].data, n, c, hw, eps);
        for ch in 0..c {
            running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean[ch];
            running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var_unbiased[ch];
        }
        self.bn_emit(input, gamma, beta, BnMode::Train, mean, invstd)
    }

    /// Eval-mode batch normalization: standardizes with the provided running
    /// statistics, which are read but never modified.
    pub fn batchnorm2d_eval(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f32],
        running_var: &[f32],
        eps: f32,
    ) -> Result<NodeId> {
        self.bn_check(input, gamma, beta, running_mean, running_var)?;
        let mean = running_mean.to_vec();
        let invstd: Vec<f32> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_emit(input, gamma, beta, BnMode::Eval, mean, invstd)
    }

    fn bn_check(
        &self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[f32],
        running_var: &[f32],
    ) -> Result<usize> {
        let (_, c, _, _) = self.dims4(input, "batchnorm2d")?;
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.nodes[id.0].shape[..] != [c] {
                return Err(Error::Dim {
                    op: "batchnorm2d",
                    detail: format!("{} shape {:?} vs channel axis {}", name, self.nodes[id.0].shape, c),
                });
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::Dim {
                op: "batchnorm2d",
                detail: format!("running stats len {}/{} vs channel axis {}", running_mean.len(), running_var.len(), c),
            });
        }
        Ok(c)
    }

    fn bn_emit(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BnMode,
        mean: Vec<f32>,
        invstd: Vec<f32>,
    ) -> Result<NodeId> {
        let (n, c, h, w) = self.dims4(input, "batchnorm2d")?;
        let hw = h * w;
        if !invstd.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("batchnorm2d"));
        }
        let mut out = vec![0.0f32; n * c * hw];
        kernels::bn_apply(
            &self.nodes[input.0].data,
            &self.nodes[gamma.0].data,
            &self.nodes[beta.0].data,
            &mean,
            &invstd,
            c,
            hw,
            &mut out,
        );
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            vec![n, c, h, w],
            out,
            needs,
            Op::BatchNorm { input, gamma, beta, mode, mean, invstd },
        ))
    }

    /// Elementwise max(0, x).
    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out: Vec<f32> = self.nodes[input.0].data.iter().map(|v| v.max(0.0)).collect();
        let shape = self.nodes[input.0].shape.clone();
        let needs = self.needs(input);
        self.push(shape, out, needs, Op::Relu { input })
    }

    /// Max pooling with square-free window `kh x kw` and the given stride;
    /// backward routes each gradient to the argmax tap (first max wins ties).
    pub fn maxpool2d(&mut self, input: NodeId, kh: usize, kw: usize, stride: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.dims4(input, "maxpool2d")?;
        if kh > h || kw > w {
            return Err(Error::Dim {
                op: "maxpool2d",
                detail: format!("window {}x{} exceeds input {}x{}", kh, kw, h, w),
            });
        }
        if stride < 1 {
            return Err(Error::Dim { op: "maxpool2d", detail: "stride must be >= 1".into() });
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let mut out = vec![0.0f32; n * c * oh * ow];
        let mut argmax = vec![0u32; n * c * oh * ow];
        kernels::maxpool_fwd(&self.nodes[input.0].data, c, h, w, kh, kw, stride, oh, ow, &mut out, &mut argmax);
        let needs = self.needs(input);
        Ok(self.push(vec![n, c, oh, ow], out, needs, Op::MaxPool { input, argmax }))
    }

    /// Global average pool `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.dims4(input, "global_avg_pool")?;
        let mut out = vec![0.0f32; n * c];
        kernels::gap_fwd(&self.nodes[input.0].data, c, h * w, &mut out);
        let needs = self.needs(input);
        Ok(self.push(vec![n, c], out, needs, Op::Gap { input }))
    }

    /// Affine map `y = x W^T + b` with `x: [N,in]`, `weight: [out,in]`.
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, inf) = match self.nodes[input.0].shape[..] {
            [n, inf] => (n, inf),
            ref s => return Err(Error::Dim { op: "linear", detail: format!("input must be rank 2, got {:?}", s) }),
        };
        let (outf, winf) = match self.nodes[weight.0].shape[..] {
            [o, i] => (o, i),
            ref s => return Err(Error::Dim { op: "linear", detail: format!("weight must be rank 2, got {:?}", s) }),
        };
        if winf != inf {
            return Err(Error::Dim {
                op: "linear",
                detail: format!("input feature axis {} vs weight input axis {}", inf, winf),
            });
        }
        if self.nodes[bias.0].shape[..] != [outf] {
            return Err(Error::Dim {
                op: "linear",
                detail: format!("bias shape {:?} vs output axis {}", self.nodes[bias.0].shape, outf),
            });
        }
        let mut out = vec![0.0f32; n * outf];
        kernels::linear_fwd(&self.nodes[input.0].data, &self.nodes[weight.0].data, &self.nodes[bias.0].data, n, inf, outf, &mut out);
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(vec![n, outf], out, needs, Op::Linear { input, weight, bias }))
    }

    /// Mean over the batch of -log softmax(logits)[label]; max-stabilized.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[u8]) -> Result<NodeId> {
        let (n, c) = match self.nodes[logits.0].shape[..] {
            [n, c] => (n, c),
            ref s => {
                return Err(Error::Dim {
                    op: "softmax_cross_entropy",
                    detail: format!("logits must be rank 2, got {:?}", s),
                })
            }
        };
        if labels.len() != n {
            return Err(Error::Dim {
                op: "softmax_cross_entropy",
                detail: format!("batch axis {} vs {} labels", n, labels.len()),
            });
        }
        for l in labels {
            if usize::from(*l) >= c {
                return Err(Error::Label { label: usize::from(*l), classes: c });
            }
        }
        let (loss, probs) = kernels::softmax_ce_fwd(&self.nodes[logits.0].data, labels, n, c);
        if !loss.is_finite() {
            return Err(Error::NonFinite("softmax_cross_entropy"));
        }
        let needs = self.needs(logits);
        Ok(self.push(vec![], vec![loss], needs, Op::SoftmaxCe { logits, labels: labels.to_vec(), probs }))
    }

    /// Elementwise sum of two same-shape nodes (residual connections).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dim {
                op: "add",
                detail: format!("shape {:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            });
        }
        let out: Vec<f32> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, needs, Op::Add { a, b }))
    }

    /// Force the selected channels of `[N,C,H,W]` to zero (the masked-forward
    /// twin of structural filter removal).
    pub fn channel_mask(&mut self, input: NodeId, zeroed: &[bool]) -> Result<NodeId> {
        let (n, c, h, w) = self.dims4(input, "channel_mask")?;
        if zeroed.len() != c {
            return Err(Error::Dim {
                op: "channel_mask",
                detail: format!("mask len {} vs channel axis {}", zeroed.len(), c),
            });
        }
        let hw = h * w;
        let mut out = self.nodes[input.0].data.clone();
        for i in 0..n {
            for (ch, z) in zeroed.iter().enumerate() {
                if *z {
                    out[(i * c + ch) * hw..(i * c + ch + 1) * hw].fill(0.0);
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(vec![n, c, h, w], out, needs, Op::ChannelMask { input, zeroed: zeroed.to_vec() }))
    }

    /// Scalar mean of one channel's spatial map across the whole batch
    /// (the activation-maximization objective).
    pub fn channel_spatial_mean(&mut self, input: NodeId, channel: usize) -> Result<NodeId> {
        let (n, c, h, w) = self.dims4(input, "channel_spatial_mean")?;
        if channel >= c {
            return Err(Error::Reference(format!("channel {} out of {} channels", channel, c)));
        }
        let hw = h * w;
        let mut s = 0.0f64;
        for i in 0..n {
            for v in &self.nodes[input.0].data[(i * c + channel) * hw..(i * c + channel + 1) * hw] {
                s += f64::from(*v);
            }
        }
        let mean = (s / (n * hw) as f64) as f32;
        let needs = self.needs(input);
        Ok(self.push(vec![], vec![mean], needs, Op::ChannelSpatialMean { input, channel }))
    }

    /// Scalar dot product with fixed (non-differentiated) weights; reduces
    /// any node to a scalar objective.
    pub fn weighted_sum(&mut self, input: NodeId, weights: &[f32]) -> Result<NodeId> {
        if weights.len() != self.nodes[input.0].data.len() {
            return Err(Error::Dim {
                op: "weighted_sum",
                detail: format!("weights len {} vs input numel {}", weights.len(), self.nodes[input.0].data.len()),
            });
        }
        let mut s = 0.0f64;
        for (v, w) in self.nodes[input.0].data.iter().zip(weights) {
            s += f64::from(*v) * f64::from(*w);
        }
        let needs = self.needs(input);
        Ok(self.push(vec![], vec![s as f32], needs, Op::WeightedSum { input, weights: weights.to_vec() }))
    }

    /// Reverse sweep from a scalar loss node. Populates gradients of every
    /// node on a path to a `requires_grad` leaf; consumes the tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Dim {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].shape),
            });
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            // Inputs of node i always precede it, so split borrows are disjoint.
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let gout = node.grad.as_deref().expect("checked above");
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { input, kernel, bias, dims, cols } => {
                    if before[input.0].needs_grad {
                        let mut dx = take_grad(&mut before[input.0]);
                        kernels::conv2d_bwd_input(gout, &before[kernel.0].data, dims, &mut dx);
                        before[input.0].grad = Some(dx);
                    }
                    if before[kernel.0].needs_grad {
                        let cols = cols.as_deref().expect("cols cached when kernel needs grad");
                        // Bias grad shares the batch loop; compute both here.
                        let mut dk = take_grad(&mut before[kernel.0]);
                        let mut db = take_grad(&mut before[bias.0]);
                        kernels::conv2d_bwd_params(gout, cols, dims, &mut dk, &mut db);
                        before[kernel.0].grad = Some(dk);
                        if before[bias.0].needs_grad {
                            before[bias.0].grad = Some(db);
                        }
                    } else if before[bias.0].needs_grad {
                        let db = ensure_grad(&mut before[bias.0]);
                        let ohw = dims.ohw();
                        for i in 0..dims.n {
                            for co in 0..dims.cout {
                                let base = (i * dims.cout + co) * ohw;
                                let mut s = 0.0f64;
                                for v in &gout[base..base + ohw] {
                                    s += f64::from(*v);
                                }
                                db[co] += s as f32;
                            }
                        }
                    }
                }
                Op::BatchNorm { input, gamma, beta, mode, mean, invstd } => {
                    let (n, c, h, w) = {
                        let s = &before[input.0].shape;
                        (s[0], s[1], s[2], s[3])
                    };
                    let mut dx_buf = take_grad(&mut before[input.0]);
                    let mut dgamma = take_grad(&mut before[gamma.0]);
                    let mut dbeta = take_grad(&mut before[beta.0]);
                    {
                        let x = &before[input.0].data;
                        let g = &before[gamma.0].data;
                        match mode {
                            BnMode::Train => kernels::bn_bwd_train(gout, x, g, mean, invstd, n, c, h * w, &mut dx_buf, &mut dgamma, &mut dbeta),
                            BnMode::Eval => kernels::bn_bwd_eval(gout, x, g, mean, invstd, n, c, h * w, &mut dx_buf, &mut dgamma, &mut dbeta),
                        }
                    }
                    if before[input.0].needs_grad {
                        before[input.0].grad = Some(dx_buf);
                    }
                    if before[gamma.0].needs_grad {
                        before[gamma.0].grad = Some(dgamma);
                    }
                    if before[beta.0].needs_grad {
                        before[beta.0].grad = Some(dbeta);
                    }
                }
                Op::Relu { input } => {
                    if before[input.0].needs_grad {
                        let mut dx = take_grad(&mut before[input.0]);
                        for (j, g) in gout.iter().enumerate() {
                            if before[input.0].data[j] > 0.0 {
                                dx[j] += *g;
                            }
                        }
                        before[input.0].grad = Some(dx);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    if before[input.0].needs_grad {
                        let dx = ensure_grad(&mut before[input.0]);
                        kernels::maxpool_bwd(gout, argmax, dx);
                    }
                }
                Op::Gap { input } => {
                    if before[input.0].needs_grad {
                        let (c, hw) = {
                            let s = &before[input.0].shape;
                            (s[1], s[2] * s[3])
                        };
                        let dx = ensure_grad(&mut before[input.0]);
                        kernels::gap_bwd(gout, c, hw, dx);
                    }
                }
                Op::Linear { input, weight, bias } => {
                    let (n, inf) = {
                        let s = &before[input.0].shape;
                        (s[0], s[1])
                    };
                    let outf = before[weight.0].shape[0];
                    let mut dx = if before[input.0].needs_grad { Some(take_grad(&mut before[input.0])) } else { None };
                    let mut dw = if before[weight.0].needs_grad { Some(take_grad(&mut before[weight.0])) } else { None };
                    let mut db = if before[bias.0].needs_grad { Some(take_grad(&mut before[bias.0])) } else { None };
                    kernels::linear_bwd(
                        gout,
                        &before[input.0].data,
                        &before[weight.0].data,
                        n,
                        inf,
                        outf,
                        dx.as_deref_mut(),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                    if let Some(dx) = dx {
                        before[input.0].grad = Some(dx);
                    }
                    if let Some(dw) = dw {
                        before[weight.0].grad = Some(dw);
                    }
                    if let Some(db) = db {
                        before[bias.0].grad = Some(db);
                    }
                }
                Op::SoftmaxCe { logits, labels, probs } => {
                    if before[logits.0].needs_grad {
                        let (n, c) = {
                            let s = &before[logits.0].shape;
                            (s[0], s[1])
                        };
                        let dl = ensure_grad(&mut before[logits.0]);
                        kernels::softmax_ce_bwd(probs, labels, n, c, gout[0], dl);
                    }
                }
                Op::Add { a, b } => {
                    for id in [*a, *b] {
                        if before[id.0].needs_grad {
                            let dst = ensure_grad(&mut before[id.0]);
                            for (d, g) in dst.iter_mut().zip(gout) {
                                *d += *g;
                            }
                        }
                    }
                }
                Op::ChannelMask { input, zeroed } => {
                    if before[input.0].needs_grad {
                        let (n, c, hw) = {
                            let s = &before[input.0].shape;
                            (s[0], s[1], s[2] * s[3])
                        };
                        let dx = ensure_grad(&mut before[input.0]);
                        for i in 0..n {
                            for (ch, z) in zeroed.iter().enumerate() {
                                if !*z {
                                    let base = (i * c + ch) * hw;
                                    for j in 0..hw {
                                        dx[base + j] += gout[base + j];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::ChannelSpatialMean { input, channel } => {
                    if before[input.0].needs_grad {
                        let (n, c, hw) = {
                            let s = &before[input.0].shape;
                            (s[0], s[1], s[2] * s[3])
                        };
                        let g = gout[0] / (n * hw) as f32;
                        let dx = ensure_grad(&mut before[input.0]);
                        for i in 0..n {
                            let base = (i * c + channel) * hw;
                            for j in 0..hw {
                                dx[base + j] += g;
                            }
                        }
                    }
                }
                Op::WeightedSum { input, weights } => {
                    if before[input.0].needs_grad {
                        let g = gout[0];
                        let dx = ensure_grad(&mut before[input.0]);
                        for (d, w) in dx.iter_mut().zip(weights) {
                            *d += g * *w;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Lazily allocate a zero gradient buffer matching the node's value.
fn ensure_grad(node: &mut Node) -> &mut Vec<f32> {
    if node.grad.is_none() {
        node.grad = Some(vec![0.0; node.data.len()]);
    }
    node.grad.as_mut().expect("just installed")
}

fn take_grad(node: &mut Node) -> Vec<f32> {
    node.grad.take().unwrap_or_else(|| vec![0.0; node.data.len()])
}
