//! Desk-scale network architectures, forward-pass recording, and structural
//! filter surgery.
//!
//! A [`NetworkSpec`] is an ordered list of layers with owned parameter
//! tensors. Two families are provided: a VGG-style stack
//! ([`build_minivgg`]) and a residual net with identity skips
//! ([`build_miniresnet`]). Surgery ([`remove_filters`]) physically removes
//! conv output channels together with the matching batch-norm channels and
//! the consumer's input slices, leaving every untouched weight bitwise
//! intact, and appends the removal to the network's surgery log so that
//! checkpoints taken earlier can be brought into the same shape later.

use std::collections::BTreeSet;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{NodeId, Tape, Tensor};

/// Stable identifier of a conv layer; survives surgery.
pub type LayerId = usize;

/// A single filter of a conv layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FilterRef {
    pub layer_id: LayerId,
    pub filter_index: usize,
}

/// Architecture family of a built network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    MiniVgg,
    MiniResnet,
}

/// Build-time description of a network, sufficient to rebuild its unpruned
/// shape (weights come from a checkpoint, so the rebuild seed is irrelevant).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    pub family: Family,
    pub widths: Vec<usize>,
    /// Basic blocks per stage; 0 for the VGG family.
    pub blocks_per_stage: usize,
    pub num_classes: usize,
    pub in_channels: usize,
}

/// One surgery event: which filters were removed from which conv layer.
/// Indices are relative to the layer's filter count *at the time of the
/// event*, so replaying events in order reproduces the surgery exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurgeryEvent {
    pub layer_id: LayerId,
    pub removed: Vec<usize>,
}

/// A layer of the network. Parameter tensors are owned; batch-norm running
/// statistics are buffers (not trained, but saved/restored with checkpoints).
#[derive(Clone, Debug)]
pub enum Layer {
    Conv {
        id: LayerId,
        weight: Tensor, // [Cout, Cin, kh, kw]
        bias: Tensor,   // [Cout]
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        gamma: Tensor,        // [C]
        beta: Tensor,         // [C]
        running_mean: Tensor, // [C]
        running_var: Tensor,  // [C]
        eps: f32,
        momentum: f32,
    },
    Relu,
    MaxPool {
        k: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Linear {
        weight: Tensor, // [out, in]
        bias: Tensor,   // [out]
    },
    /// Saves the current activation for the next `SkipAddRelu`.
    SkipSave,
    /// Adds the most recently saved activation, then applies relu.
    SkipAddRelu,
}

/// Everything a training step needs from one recorded forward pass: the
/// logits node, the input node (for input-gradient uses), and the tape nodes
/// of the trainable parameters in [`NetworkSpec::trainable_names`] order.
pub struct ForwardRecord {
    pub input: NodeId,
    pub output: NodeId,
    pub params: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct NetworkSpec {
    pub layers: Vec<Layer>,
    pub arch: Arch,
    /// Conv layer ids that surgery may touch (residual-constrained convs are
    /// excluded at build time).
    prunable: BTreeSet<LayerId>,
    /// Every removal applied to this network, in order.
    pub surgery_log: Vec<SurgeryEvent>,
}

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

fn kaiming_conv(rng: &mut impl rand::Rng, cout: usize, cin: usize, kh: usize, kw: usize) -> Tensor {
    let fan_in = (cin * kh * kw) as f64;
    let normal = Normal::new(0.0f64, (2.0 / fan_in).sqrt()).expect("positive std");
    let data: Vec<f32> = (0..cout * cin * kh * kw).map(|_| normal.sample(rng) as f32).collect();
    Tensor::new(vec![cout, cin, kh, kw], data).expect("conv init shape")
}

fn kaiming_linear(rng: &mut impl rand::Rng, out: usize, inp: usize) -> Tensor {
    let normal = Normal::new(0.0f64, (2.0 / inp as f64).sqrt()).expect("positive std");
    let data: Vec<f32> = (0..out * inp).map(|_| normal.sample(rng) as f32).collect();
    Tensor::new(vec![out, inp], data).expect("linear init shape")
}

fn conv_layer(rng: &mut impl rand::Rng, id: LayerId, cin: usize, cout: usize, stride: usize, pad: usize) -> Layer {
    Layer::Conv { id, weight: kaiming_conv(rng, cout, cin, 3, 3), bias: Tensor::zeros(vec![cout]), stride, pad }
}

fn bn_layer(c: usize) -> Layer {
    Layer::BatchNorm {
        gamma: Tensor::full(vec![c], 1.0),
        beta: Tensor::zeros(vec![c]),
        running_mean: Tensor::zeros(vec![c]),
        running_var: Tensor::full(vec![c], 1.0),
        eps: BN_EPS,
        momentum: BN_MOMENTUM,
    }
}

fn check_widths(widths: &[usize], num_classes: usize) -> Result<()> {
    if widths.is_empty() {
        return Err(Error::Config("widths must be non-empty".into()));
    }
    if let Some(w) = widths.iter().find(|w| **w < 2) {
        return Err(Error::Config(format!("width {w} < 2: a 1-filter layer cannot be pruned")));
    }
    if num_classes < 2 {
        return Err(Error::Config(format!("num_classes must be >= 2, got {num_classes}")));
    }
    Ok(())
}

/// VGG-style stack: one `conv3x3 -> bn -> relu` block per width, a 2x2
/// max-pool between groups of equal width, then global average pooling and a
/// single linear classifier. Every conv is prunable.
pub fn build_minivgg(widths: &[usize], num_classes: usize, in_channels: usize, seed: u64) -> Result<NetworkSpec> {
    check_widths(widths, num_classes)?;
    if in_channels == 0 {
        return Err(Error::Config("in_channels must be >= 1".into()));
    }
    let mut rng = stream(seed, "init", 0);
    let mut layers = Vec::new();
    let mut prunable = BTreeSet::new();
    let mut cin = in_channels;
    for (i, &w) in widths.iter().enumerate() {
        if i > 0 && widths[i - 1] != w {
            layers.push(Layer::MaxPool { k: 2, stride: 2 });
        }
        layers.push(conv_layer(&mut rng, i, cin, w, 1, 1));
        layers.push(bn_layer(w));
        layers.push(Layer::Relu);
        prunable.insert(i);
        cin = w;
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Linear {
        weight: kaiming_linear(&mut rng, num_classes, cin),
        bias: Tensor::zeros(vec![num_classes]),
    });
    Ok(NetworkSpec {
        layers,
        arch: Arch {
            family: Family::MiniVgg,
            widths: widths.to_vec(),
            blocks_per_stage: 0,
            num_classes,
            in_channels,
        },
        prunable,
        surgery_log: Vec::new(),
    })
}

/// Residual net: a conv stem, then per stage a (pool + transition conv) and
/// `blocks_per_stage` two-conv basic blocks with identity skips. Only the
/// first conv of each basic block is prunable; stem, transition, and
/// block-output convs are pinned so the additive skip stays channel-aligned.
pub fn build_miniresnet(
    widths: &[usize],
    blocks_per_stage: usize,
    num_classes: usize,
    in_channels: usize,
    seed: u64,
) -> Result<NetworkSpec> {
    check_widths(widths, num_classes)?;
    if blocks_per_stage == 0 {
        return Err(Error::Config("blocks_per_stage must be >= 1".into()));
    }
    if in_channels == 0 {
        return Err(Error::Config("in_channels must be >= 1".into()));
    }
    let mut rng = stream(seed, "init", 0);
    let mut layers = Vec::new();
    let mut prunable = BTreeSet::new();
    let mut next_id: LayerId = 0;
    let mut push_conv = |layers: &mut Vec<Layer>, rng: &mut rand_chacha::ChaCha8Rng, cin: usize, cout: usize| {
        let id = next_id;
        next_id += 1;
        layers.push(conv_layer(rng, id, cin, cout, 1, 1));
        layers.push(bn_layer(cout));
        id
    };

    // Stem.
    push_conv(&mut layers, &mut rng, in_channels, widths[0]);
    layers.push(Layer::Relu);
    let mut cin = widths[0];

    for (stage, &w) in widths.iter().enumerate() {
        if stage > 0 {
            layers.push(Layer::MaxPool { k: 2, stride: 2 });
            push_conv(&mut layers, &mut rng, cin, w);
            layers.push(Layer::Relu);
            cin = w;
        }
        for _ in 0..blocks_per_stage {
            layers.push(Layer::SkipSave);
            let first = push_conv(&mut layers, &mut rng, w, w);
            layers.push(Layer::Relu);
            push_conv(&mut layers, &mut rng, w, w);
            layers.push(Layer::SkipAddRelu);
            prunable.insert(first);
        }
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(Layer::Linear {
        weight: kaiming_linear(&mut rng, num_classes, cin),
        bias: Tensor::zeros(vec![num_classes]),
    });
    Ok(NetworkSpec {
        layers,
        arch: Arch {
            family: Family::MiniResnet,
            widths: widths.to_vec(),
            blocks_per_stage,
            num_classes,
            in_channels,
        },
        prunable,
        surgery_log: Vec::new(),
    })
}

/// Rebuilds the unpruned architecture described by `arch` (weights are fresh
/// random; callers overwrite them from a checkpoint).
pub fn build_from_arch(arch: &Arch, seed: u64) -> Result<NetworkSpec> {
    match arch.family {
        Family::MiniVgg => build_minivgg(&arch.widths, arch.num_classes, arch.in_channels, seed),
        Family::MiniResnet => {
            build_miniresnet(&arch.widths, arch.blocks_per_stage, arch.num_classes, arch.in_channels, seed)
        }
    }
}

impl NetworkSpec {
    /// Conv layer ids in layer order.
    pub fn conv_ids(&self) -> Vec<LayerId> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv { id, .. } => Some(*id),
                _ => None,
            })
            .collect()
    }

    /// Conv layer ids that surgery may touch, in layer order.
    pub fn prunable_conv_ids(&self) -> Vec<LayerId> {
        self.conv_ids().into_iter().filter(|id| self.prunable.contains(id)).collect()
    }

    /// Number of filters (output channels) the conv layer currently has.
    pub fn filter_count(&self, layer_id: LayerId) -> Result<usize> {
        let idx = self.conv_index(layer_id)?;
        match &self.layers[idx] {
            Layer::Conv { weight, .. } => Ok(weight.shape()[0]),
            _ => unreachable!("conv_index returns conv positions"),
        }
    }

    /// The conv layer that consumes this conv's output channels directly,
    /// if the consumer is a conv. `None` for classifier or skip-junction
    /// consumers (channel-free, respectively refused by surgery).
    pub fn downstream_conv(&self, layer_id: LayerId) -> Result<Option<LayerId>> {
        let idx = self.conv_index(layer_id)?;
        for layer in &self.layers[idx + 1..] {
            match layer {
                Layer::Conv { id, .. } => return Ok(Some(*id)),
                Layer::BatchNorm { .. } | Layer::Relu | Layer::MaxPool { .. } | Layer::GlobalAvgPool => {}
                Layer::Linear { .. } | Layer::SkipSave | Layer::SkipAddRelu => return Ok(None),
            }
        }
        Ok(None)
    }

    /// Kernel tensor of the conv layer (`[Cout, Cin, kh, kw]`).
    pub fn conv_weight(&self, layer_id: LayerId) -> Result<&Tensor> {
        let idx = self.conv_index(layer_id)?;
        match &self.layers[idx] {
            Layer::Conv { weight, .. } => Ok(weight),
            _ => unreachable!("conv_index returns conv positions"),
        }
    }

    fn conv_index(&self, layer_id: LayerId) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| matches!(l, Layer::Conv { id, .. } if *id == layer_id))
            .ok_or_else(|| Error::Reference(format!("no conv layer with id {layer_id}")))
    }

    /// All persistent tensors with stable names (`l<position>_<field>`).
    /// Layer positions never change — surgery edits tensors in place — so
    /// names remain valid across surgery.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { weight, bias, .. } => {
                    out.push((format!("l{i:02}_weight"), weight));
                    out.push((format!("l{i:02}_bias"), bias));
                }
                Layer::BatchNorm { gamma, beta, running_mean, running_var, .. } => {
                    out.push((format!("l{i:02}_gamma"), gamma));
                    out.push((format!("l{i:02}_beta"), beta));
                    out.push((format!("l{i:02}_running_mean"), running_mean));
                    out.push((format!("l{i:02}_running_var"), running_var));
                }
                Layer::Linear { weight, bias } => {
                    out.push((format!("l{i:02}_weight"), weight));
                    out.push((format!("l{i:02}_bias"), bias));
                }
                _ => {}
            }
        }
        out
    }

    /// Mutable variant of [`named_tensors`](Self::named_tensors), same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv { weight, bias, .. } => {
                    out.push((format!("l{i:02}_weight"), weight));
                    out.push((format!("l{i:02}_bias"), bias));
                }
                Layer::BatchNorm { gamma, beta, running_mean, running_var, .. } => {
                    out.push((format!("l{i:02}_gamma"), gamma));
                    out.push((format!("l{i:02}_beta"), beta));
                    out.push((format!("l{i:02}_running_mean"), running_mean));
                    out.push((format!("l{i:02}_running_var"), running_var));
                }
                Layer::Linear { weight, bias } => {
                    out.push((format!("l{i:02}_weight"), weight));
                    out.push((format!("l{i:02}_bias"), bias));
                }
                _ => {}
            }
        }
        out
    }

    /// Names of the trainable tensors (conv/linear weights and biases, bn
    /// gamma/beta — running statistics are buffers), in the order
    /// [`ForwardRecord::params`] uses.
    pub fn trainable_names(&self) -> Vec<String> {
        self.named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| !n.ends_with("_running_mean") && !n.ends_with("_running_var"))
            .collect()
    }

    /// Mutable references to the trainable tensors, aligned with
    /// [`trainable_names`](Self::trainable_names).
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.named_tensors_mut()
            .into_iter()
            .filter(|(n, _)| !n.ends_with("_running_mean") && !n.ends_with("_running_var"))
            .map(|(_, t)| t)
            .collect()
    }

    /// Records a train-mode forward pass (batch statistics; running stats
    /// updated in place). Parameter nodes require gradients.
    pub fn record_train_forward(&mut self, tape: &mut Tape, input: &Tensor) -> Result<ForwardRecord> {
        let input_node = tape.leaf(input, input.requires_grad());
        let mut params = Vec::new();
        let mut cur = input_node;
        let mut saved: Vec<NodeId> = Vec::new();
        for layer in &mut self.layers {
            cur = match layer {
                Layer::Conv { weight, bias, stride, pad, .. } => {
                    let w = tape.leaf(weight, true);
                    let b = tape.leaf(bias, true);
                    params.push(w);
                    params.push(b);
                    tape.conv2d(cur, w, b, *stride, *pad)?
                }
                Layer::BatchNorm { gamma, beta, running_mean, running_var, eps, momentum } => {
                    let g = tape.leaf(gamma, true);
                    let b = tape.leaf(beta, true);
                    params.push(g);
                    params.push(b);
                    tape.batchnorm2d_train(
                        cur,
                        g,
                        b,
                        running_mean.data_mut(),
                        running_var.data_mut(),
                        *eps,
                        *momentum,
                    )?
                }
                Layer::Relu => tape.relu(cur),
                Layer::MaxPool { k, stride } => tape.maxpool2d(cur, *k, *k, *stride)?,
                Layer::GlobalAvgPool => tape.global_avg_pool(cur)?,
                Layer::Linear { weight, bias } => {
                    let w = tape.leaf(weight, true);
                    let b = tape.leaf(bias, true);
                    params.push(w);
                    params.push(b);
                    tape.linear(cur, w, b)?
                }
                Layer::SkipSave => {
                    saved.push(cur);
                    cur
                }
                Layer::SkipAddRelu => {
                    let skip = saved.pop().ok_or_else(|| Error::Reference("skip add without a saved activation".into()))?;
                    let sum = tape.add(skip, cur)?;
                    tape.relu(sum)
                }
            };
        }
        Ok(ForwardRecord { input: input_node, output: cur, params })
    }

    /// Records an eval-mode forward pass (running statistics; nothing
    /// mutated). `params_require_grad` controls whether parameter gradients
    /// are computed on backward — pass `false` when only the input gradient
    /// is wanted. `mask` zeroes the given channels right after the named
    /// conv's activation, which is the masked-forward reference that surgery
    /// must match.
    pub fn record_eval_forward(
        &self,
        tape: &mut Tape,
        input: &Tensor,
        params_require_grad: bool,
        mask: Option<(LayerId, &[bool])>,
    ) -> Result<ForwardRecord> {
        let input_node = tape.leaf(input, input.requires_grad());
        let mut params = Vec::new();
        let mut cur = input_node;
        let mut saved: Vec<NodeId> = Vec::new();
        // The mask applies after the relu that follows the named conv.
        let mut mask_pending = false;
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv { id, weight, bias, stride, pad } => {
                    let w = tape.leaf(weight, params_require_grad);
                    let b = tape.leaf(bias, params_require_grad);
                    params.push(w);
                    params.push(b);
                    if let Some((target, _)) = mask {
                        if *id == target {
                            mask_pending = true;
                        }
                    }
                    tape.conv2d(cur, w, b, *stride, *pad)?
                }
                Layer::BatchNorm { gamma, beta, running_mean, running_var, eps, .. } => {
                    let g = tape.leaf(gamma, params_require_grad);
                    let b = tape.leaf(beta, params_require_grad);
                    params.push(g);
                    params.push(b);
                    tape.batchnorm2d_eval(cur, g, b, running_mean.data(), running_var.data(), *eps)?
                }
                Layer::Relu => {
                    let mut node = tape.relu(cur);
                    if mask_pending {
                        let (_, zeroed) = mask.expect("mask_pending implies mask");
                        node = tape.channel_mask(node, zeroed)?;
                        mask_pending = false;
                    }
                    node
                }
                Layer::MaxPool { k, stride } => tape.maxpool2d(cur, *k, *k, *stride)?,
                Layer::GlobalAvgPool => tape.global_avg_pool(cur)?,
                Layer::Linear { weight, bias } => {
                    let w = tape.leaf(weight, params_require_grad);
                    let b = tape.leaf(bias, params_require_grad);
                    params.push(w);
                    params.push(b);
                    tape.linear(cur, w, b)?
                }
                Layer::SkipSave => {
                    saved.push(cur);
                    cur
                }
                Layer::SkipAddRelu => {
                    let skip = saved.pop().ok_or_else(|| Error::Reference("skip add without a saved activation".into()))?;
                    let sum = tape.add(skip, cur)?;
                    tape.relu(sum)
                }
            };
        }
        if mask.is_some() && mask_pending {
            return Err(Error::Reference("masked conv has no following relu".into()));
        }
        Ok(ForwardRecord { input: input_node, output: cur, params })
    }

    /// Records the activation-maximization objective for one filter: the
    /// forward pass truncated after the conv (and its batch norm, eval mode),
    /// reduced to the mean of the filter's pre-relu spatial map. Returns
    /// `(objective, input)` nodes.
    pub fn record_filter_objective(
        &self,
        tape: &mut Tape,
        image: &Tensor,
        filter: FilterRef,
    ) -> Result<(NodeId, NodeId)> {
        let n_f = self.filter_count(filter.layer_id)?;
        if filter.filter_index >= n_f {
            return Err(Error::Reference(format!(
                "filter index {} out of range for layer {} with {} filters",
                filter.filter_index, filter.layer_id, n_f
            )));
        }
        let input_node = tape.leaf(image, image.requires_grad());
        let mut cur = input_node;
        let mut saved: Vec<NodeId> = Vec::new();
        let mut iter = self.layers.iter().peekable();
        while let Some(layer) = iter.next() {
            cur = match layer {
                Layer::Conv { id, weight, bias, stride, pad } => {
                    let w = tape.leaf(weight, false);
                    let b = tape.leaf(bias, false);
                    let conv = tape.conv2d(cur, w, b, *stride, *pad)?;
                    if *id == filter.layer_id {
                        let post_bn = match iter.peek() {
                            Some(Layer::BatchNorm { gamma, beta, running_mean, running_var, eps, .. }) => {
                                let g = tape.leaf(gamma, false);
                                let bb = tape.leaf(beta, false);
                                tape.batchnorm2d_eval(conv, g, bb, running_mean.data(), running_var.data(), *eps)?
                            }
                            _ => conv,
                        };
                        let objective = tape.channel_spatial_mean(post_bn, filter.filter_index)?;
                        return Ok((objective, input_node));
                    }
                    conv
                }
                Layer::BatchNorm { gamma, beta, running_mean, running_var, eps, .. } => {
                    let g = tape.leaf(gamma, false);
                    let b = tape.leaf(beta, false);
                    tape.batchnorm2d_eval(cur, g, b, running_mean.data(), running_var.data(), *eps)?
                }
                Layer::Relu => tape.relu(cur),
                Layer::MaxPool { k, stride } => tape.maxpool2d(cur, *k, *k, *stride)?,
                Layer::GlobalAvgPool => tape.global_avg_pool(cur)?,
                Layer::Linear { weight, bias } => {
                    let w = tape.leaf(weight, false);
                    let b = tape.leaf(bias, false);
                    tape.linear(cur, w, b)?
                }
                Layer::SkipSave => {
                    saved.push(cur);
                    cur
                }
                Layer::SkipAddRelu => {
                    let skip = saved.pop().ok_or_else(|| Error::Reference("skip add without a saved activation".into()))?;
                    let sum = tape.add(skip, cur)?;
                    tape.relu(sum)
                }
            };
        }
        Err(Error::Reference(format!("no conv layer with id {}", filter.layer_id)))
    }

    /// Total parameter count: conv/linear weights and biases plus bn
    /// gamma/beta. Running statistics are buffers, not parameters.
    pub fn count_params(&self) -> u64 {
        self.named_tensors()
            .iter()
            .filter(|(n, _)| !n.ends_with("_running_mean") && !n.ends_with("_running_var"))
            .map(|(_, t)| t.numel() as u64)
            .sum()
    }

    /// FLOPs of one forward pass on a single `in_channels x h x w` input,
    /// counting exactly `2*kh*kw*Cin*Cout*H'*W'` per conv and `2*in*out` per
    /// linear (a multiply-add is two operations); bn, relu, pooling, and
    /// skip additions are not counted.
    pub fn count_flops(&self, h: usize, w: usize) -> u64 {
        let (mut h, mut w) = (h, w);
        let mut flops = 0u64;
        for layer in &self.layers {
            match layer {
                Layer::Conv { weight, stride, pad, .. } => {
                    let [cout, cin, kh, kw] = weight.shape() else { continue };
                    let oh = (h + 2 * pad - kh) / stride + 1;
                    let ow = (w + 2 * pad - kw) / stride + 1;
                    flops += 2 * (kh * kw * cin * cout * oh * ow) as u64;
                    h = oh;
                    w = ow;
                }
                Layer::MaxPool { k, stride } => {
                    h = (h - k) / stride + 1;
                    w = (w - k) / stride + 1;
                }
                Layer::GlobalAvgPool => {
                    h = 1;
                    w = 1;
                }
                Layer::Linear { weight, .. } => {
                    let [out, inp] = weight.shape() else { continue };
                    flops += 2 * (out * inp) as u64;
                }
                _ => {}
            }
        }
        flops
    }
}

fn drop_rows(t: &Tensor, remove: &BTreeSet<usize>) -> Tensor {
    // Removes entries along axis 0 (filters of a conv kernel, channels of a
    // 1-D tensor, rows of a linear weight).
    let shape = t.shape();
    let row = shape[1..].iter().product::<usize>().max(1);
    let mut data = Vec::with_capacity((shape[0] - remove.len()) * row);
    for r in 0..shape[0] {
        if !remove.contains(&r) {
            data.extend_from_slice(&t.data()[r * row..(r + 1) * row]);
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[0] -= remove.len();
    Tensor::new(new_shape, data).expect("drop_rows shape")
}

fn drop_conv_in_channels(t: &Tensor, remove: &BTreeSet<usize>) -> Tensor {
    // Removes slices along axis 1 of a conv kernel [Cout, Cin, kh, kw].
    let [cout, cin, kh, kw] = t.shape() else { panic!("conv kernel must be rank 4") };
    let (cout, cin, kh, kw) = (*cout, *cin, *kh, *kw);
    let plane = kh * kw;
    let mut data = Vec::with_capacity(cout * (cin - remove.len()) * plane);
    for o in 0..cout {
        for i in 0..cin {
            if !remove.contains(&i) {
                let base = (o * cin + i) * plane;
                data.extend_from_slice(&t.data()[base..base + plane]);
            }
        }
    }
    Tensor::new(vec![cout, cin - remove.len(), kh, kw], data).expect("drop_conv_in_channels shape")
}

fn drop_linear_columns(t: &Tensor, remove: &BTreeSet<usize>) -> Tensor {
    let [out, inp] = t.shape() else { panic!("linear weight must be rank 2") };
    let (out, inp) = (*out, *inp);
    let mut data = Vec::with_capacity(out * (inp - remove.len()));
    for o in 0..out {
        for i in 0..inp {
            if !remove.contains(&i) {
                data.push(t.data()[o * inp + i]);
            }
        }
    }
    Tensor::new(vec![out, inp - remove.len()], data).expect("drop_linear_columns shape")
}

/// Removes the given filters from a conv layer: kernel rows and biases go,
/// the following batch norm loses the matching channels, and the next conv
/// (input slices) or linear (input columns) consumer shrinks to match. All
/// other weights are preserved bitwise. The removal is appended to the
/// returned network's surgery log.
pub fn remove_filters(net: &NetworkSpec, layer_id: LayerId, remove: &BTreeSet<usize>) -> Result<NetworkSpec> {
    let mut out = net.clone();
    if remove.is_empty() {
        return Ok(out);
    }
    let idx = out.conv_index(layer_id)?;
    if !out.prunable.contains(&layer_id) {
        return Err(Error::Constraint(format!(
            "conv layer {layer_id} is pinned by a residual connection and cannot be pruned"
        )));
    }
    let n_f = match &out.layers[idx] {
        Layer::Conv { weight, .. } => weight.shape()[0],
        _ => unreachable!("conv_index returns conv positions"),
    };
    if let Some(&bad) = remove.iter().find(|&&r| r >= n_f) {
        return Err(Error::Surgery(format!("filter index {bad} out of range for layer {layer_id} with {n_f} filters")));
    }
    if remove.len() >= n_f {
        return Err(Error::Surgery(format!("cannot remove all {n_f} filters of layer {layer_id}")));
    }

    // The conv itself: drop kernel rows and bias entries.
    if let Layer::Conv { weight, bias, .. } = &mut out.layers[idx] {
        *weight = drop_rows(weight, remove);
        *bias = drop_rows(bias, remove);
    }

    // The immediately following batch norm, if any.
    if let Some(Layer::BatchNorm { gamma, beta, running_mean, running_var, .. }) = out.layers.get_mut(idx + 1) {
        *gamma = drop_rows(gamma, remove);
        *beta = drop_rows(beta, remove);
        *running_mean = drop_rows(running_mean, remove);
        *running_var = drop_rows(running_var, remove);
    }

    // The consumer: next conv's input slices or the classifier's columns.
    let mut j = idx + 1;
    loop {
        match out.layers.get_mut(j) {
            Some(Layer::Conv { weight, .. }) => {
                *weight = drop_conv_in_channels(weight, remove);
                break;
            }
            Some(Layer::Linear { weight, .. }) => {
                *weight = drop_linear_columns(weight, remove);
                break;
            }
            Some(Layer::BatchNorm { .. } | Layer::Relu | Layer::MaxPool { .. } | Layer::GlobalAvgPool) => j += 1,
            Some(Layer::SkipSave | Layer::SkipAddRelu) => {
                return Err(Error::Surgery(format!(
                    "conv layer {layer_id} feeds a skip connection; surgery would break channel alignment"
                )));
            }
            None => return Err(Error::Surgery(format!("conv layer {layer_id} has no downstream consumer"))),
        }
    }

    out.surgery_log.push(SurgeryEvent { layer_id, removed: remove.iter().copied().collect() });
    Ok(out)
}
