//! Filter scoring, survivor selection, and the iterative prune/fine-tune
//! schedule.
//!
//! Scores rank filters by the l1 norm of their kernel weights or by the
//! movement of that norm since initialization. Selection either keeps the
//! top-k filters (baseline) or exactly one filter per K-means cluster
//! (clustered), so redundant filters go and singleton-cluster filters always
//! survive. Pruning visits layers shallow-to-deep, each visit followed by a
//! short constant-lr fine-tune.

use std::collections::{BTreeMap, BTreeSet};

use crate::cluster::{cluster_filters, ClusterAssignment, Encoder, SignatureParams};
use crate::error::{Error, Result};
use crate::models::{remove_filters, LayerId, NetworkSpec};
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::train::{evaluate, finetune_const, Dataset};

/// Filter-ranking rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    /// `sum_i |w_i|` at the current step.
    L1,
    /// `sum_i |w_i|_t - |w_i|_0`: how much the l1 norm grew during training.
    Movement,
}

/// Survivor-selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Keep the k highest-scoring filters of the layer.
    Baseline,
    /// Keep the single highest-scoring filter of each cluster.
    Clustered,
}

/// Per-filter scores of one layer under one criterion.
#[derive(Clone, Debug)]
pub struct CriterionScores {
    pub layer_id: LayerId,
    pub criterion: Criterion,
    /// One finite score per current filter, by filter index.
    pub scores: Vec<f32>,
    /// Informational: the training step the scores were computed at, when
    /// the caller tracks one.
    pub snapshot_step: u64,
}

/// Per-conv-layer copy of the kernel tensors at experiment start; rows are
/// dropped in lockstep with surgery so movement scoring stays aligned.
#[derive(Clone, Debug)]
pub struct InitSnapshot {
    kernels: BTreeMap<LayerId, Tensor>,
}

impl InitSnapshot {
    /// Deep-copies every conv kernel of the network.
    pub fn capture(net: &NetworkSpec) -> Self {
        let kernels = net
            .conv_ids()
            .into_iter()
            .map(|id| (id, net.conv_weight(id).expect("conv_ids returns existing layers").clone()))
            .collect();
        InitSnapshot { kernels }
    }

    pub fn kernel(&self, layer_id: LayerId) -> Option<&Tensor> {
        self.kernels.get(&layer_id)
    }

    fn drop_filters(&mut self, layer_id: LayerId, remove: &BTreeSet<usize>) -> Result<()> {
        let t = self
            .kernels
            .get_mut(&layer_id)
            .ok_or_else(|| Error::Snapshot(format!("snapshot has no kernel for layer {layer_id}")))?;
        let shape = t.shape().to_vec();
        let row: usize = shape[1..].iter().product();
        if remove.iter().any(|&r| r >= shape[0]) {
            return Err(Error::Snapshot(format!("removal index out of range for snapshot kernel of layer {layer_id}")));
        }
        let mut data = Vec::with_capacity((shape[0] - remove.len()) * row);
        for r in 0..shape[0] {
            if !remove.contains(&r) {
                data.extend_from_slice(&t.data()[r * row..(r + 1) * row]);
            }
        }
        let mut new_shape = shape;
        new_shape[0] -= remove.len();
        *t = Tensor::new(new_shape, data)?;
        Ok(())
    }

    /// Drops input-channel slices of a downstream kernel, mirroring how
    /// surgery on the producing layer shrinks the consumer's kernel. After
    /// this, movement compares exactly the weights that survived.
    fn drop_in_channels(&mut self, layer_id: LayerId, remove: &BTreeSet<usize>) -> Result<()> {
        let t = self
            .kernels
            .get_mut(&layer_id)
            .ok_or_else(|| Error::Snapshot(format!("snapshot has no kernel for layer {layer_id}")))?;
        let shape = t.shape().to_vec();
        let (cout, cin) = (shape[0], shape[1]);
        let tap: usize = shape[2..].iter().product();
        if remove.iter().any(|&c| c >= cin) {
            return Err(Error::Snapshot(format!(
                "input-channel index out of range for snapshot kernel of layer {layer_id}"
            )));
        }
        let kept = cin - remove.len();
        let mut data = Vec::with_capacity(cout * kept * tap);
        for o in 0..cout {
            for c in 0..cin {
                if !remove.contains(&c) {
                    let start = (o * cin + c) * tap;
                    data.extend_from_slice(&t.data()[start..start + tap]);
                }
            }
        }
        let mut new_shape = shape;
        new_shape[1] = kept;
        *t = Tensor::new(new_shape, data)?;
        Ok(())
    }
}

/// A selection decision for one layer: which filters stay, which go.
#[derive(Clone, Debug)]
pub struct PrunePlan {
    pub layer_id: LayerId,
    pub keep: BTreeSet<usize>,
    pub remove: BTreeSet<usize>,
    pub method: Method,
    pub scores: CriterionScores,
    pub assignment: Option<ClusterAssignment>,
}

fn l1_of_filter(kernel: &Tensor, f: usize) -> f64 {
    let row: usize = kernel.shape()[1..].iter().product();
    kernel.data()[f * row..(f + 1) * row].iter().map(|w| f64::from(w.abs())).sum()
}

/// l1 criterion: per-filter sum of absolute kernel weights (bias excluded),
/// accumulated in f64.
pub fn score_l1(net: &NetworkSpec, layer_id: LayerId) -> Result<CriterionScores> {
    let kernel = net.conv_weight(layer_id)?;
    let n_f = kernel.shape()[0];
    let scores: Vec<f32> = (0..n_f).map(|f| l1_of_filter(kernel, f) as f32).collect();
    Ok(CriterionScores { layer_id, criterion: Criterion::L1, scores, snapshot_step: 0 })
}

/// Movement criterion: growth of each filter's l1 norm since the snapshot.
pub fn score_movement(net: &NetworkSpec, layer_id: LayerId, init: &InitSnapshot) -> Result<CriterionScores> {
    let kernel = net.conv_weight(layer_id)?;
    let start = init
        .kernel(layer_id)
        .ok_or_else(|| Error::Snapshot(format!("snapshot has no kernel for layer {layer_id}")))?;
    if start.shape() != kernel.shape() {
        return Err(Error::Snapshot(format!(
            "snapshot kernel shape {:?} does not match layer {layer_id} shape {:?}; \
             snapshot rows must be pruned in lockstep with surgery",
            start.shape(),
            kernel.shape()
        )));
    }
    let n_f = kernel.shape()[0];
    let scores: Vec<f32> = (0..n_f).map(|f| (l1_of_filter(kernel, f) - l1_of_filter(start, f)) as f32).collect();
    Ok(CriterionScores { layer_id, criterion: Criterion::Movement, scores, snapshot_step: 0 })
}

/// Number of filters to KEEP in a layer of `n_f` filters at the target
/// sparsity (the fraction removed): `max(1, round((1 - sparsity) * n_f))`.
pub fn clusters_for_sparsity(n_f: usize, target_sparsity: f64) -> Result<usize> {
    if !(target_sparsity > 0.0 && target_sparsity < 1.0) {
        return Err(Error::Config(format!("target sparsity must be in (0,1), got {target_sparsity}")));
    }
    if n_f < 2 {
        return Err(Error::Config(format!("cannot prune a layer with {n_f} filter(s)")));
    }
    Ok((((1.0 - target_sparsity) * n_f as f64).round() as usize).max(1))
}

fn check_scores(scores: &CriterionScores) -> Result<()> {
    if scores.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Plan(format!("non-finite score in layer {}", scores.layer_id)));
    }
    Ok(())
}

/// Baseline selection: keep the `k` highest-scoring filters; ties keep the
/// lower filter index.
pub fn select_keep_baseline(scores: &CriterionScores, k: usize) -> Result<PrunePlan> {
    check_scores(scores)?;
    let n_f = scores.scores.len();
    if k == 0 || k > n_f {
        return Err(Error::Plan(format!("k = {k} out of range for {n_f} filters")));
    }
    let mut order: Vec<usize> = (0..n_f).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b]
            .partial_cmp(&scores.scores[a])
            .expect("scores checked finite")
            .then(a.cmp(&b))
    });
    let keep: BTreeSet<usize> = order[..k].iter().copied().collect();
    let remove: BTreeSet<usize> = (0..n_f).filter(|i| !keep.contains(i)).collect();
    Ok(PrunePlan { layer_id: scores.layer_id, keep, remove, method: Method::Baseline, scores: scores.clone(), assignment: None })
}

/// Clustered selection: keep exactly the argmax-score filter of each
/// cluster; ties keep the lower filter index. The assignment must cover
/// exactly the scored filters.
pub fn select_keep_clustered(scores: &CriterionScores, assignment: &ClusterAssignment) -> Result<PrunePlan> {
    check_scores(scores)?;
    let n_f = scores.scores.len();
    if assignment.assignment.len() != n_f {
        return Err(Error::Plan(format!(
            "assignment covers {} filters but the layer has {n_f}",
            assignment.assignment.len()
        )));
    }
    let mut best: Vec<Option<usize>> = vec![None; assignment.k];
    for (f, &c) in assignment.assignment.iter().enumerate() {
        if c >= assignment.k {
            return Err(Error::Plan(format!("cluster id {c} out of range for k = {}", assignment.k)));
        }
        let better = match best[c] {
            None => true,
            Some(cur) => scores.scores[f] > scores.scores[cur],
        };
        if better {
            best[c] = Some(f);
        }
    }
    let mut keep = BTreeSet::new();
    for (c, slot) in best.iter().enumerate() {
        let f = slot.ok_or_else(|| Error::Plan(format!("cluster {c} has no members")))?;
        keep.insert(f);
    }
    let remove: BTreeSet<usize> = (0..n_f).filter(|i| !keep.contains(i)).collect();
    Ok(PrunePlan {
        layer_id: scores.layer_id,
        keep,
        remove,
        method: Method::Clustered,
        scores: scores.clone(),
        assignment: Some(assignment.clone()),
    })
}

/// Applies a plan: structural surgery on the network plus the matching
/// drops on the init snapshot — rows of the pruned layer's kernel and
/// input slices of its consumer's kernel — keeping movement scoring
/// aligned for every layer that surgery reshaped.
pub fn prune_layer(net: &NetworkSpec, plan: &PrunePlan, init: &mut InitSnapshot) -> Result<NetworkSpec> {
    let n_f = net.filter_count(plan.layer_id)?;
    if plan.keep.is_empty() {
        return Err(Error::Plan("a plan must keep at least one filter".into()));
    }
    let mut all = plan.keep.clone();
    all.extend(plan.remove.iter());
    let disjoint = plan.keep.intersection(&plan.remove).next().is_none();
    if !disjoint || all != (0..n_f).collect::<BTreeSet<usize>>() {
        return Err(Error::Plan(format!(
            "plan does not partition the {n_f} filters of layer {}",
            plan.layer_id
        )));
    }
    let pruned = remove_filters(net, plan.layer_id, &plan.remove)?;
    init.drop_filters(plan.layer_id, &plan.remove)?;
    if let Some(consumer) = net.downstream_conv(plan.layer_id)? {
        init.drop_in_channels(consumer, &plan.remove)?;
    }
    Ok(pruned)
}

/// Options for [`iterative_prune`].
#[derive(Clone, Debug)]
pub struct PruneOptions {
    pub target_sparsity: f64,
    pub criterion: Criterion,
    pub method: Method,
    pub finetune_epochs: usize,
    pub finetune_lr: f32,
    pub batch_size: usize,
    pub signature: SignatureParams,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

/// One layer visit in a [`PruneReport`].
#[derive(Clone, Debug)]
pub struct LayerVisit {
    pub layer_id: LayerId,
    pub kept: usize,
    pub removed: usize,
    /// Set when the layer was too small for the target and left untouched.
    pub skipped: Option<String>,
    pub test_accuracy_after: f32,
    pub train_loss_after: f32,
    pub params_after: u64,
    pub flops_after: u64,
}

/// Outcome of one iterative pruning run.
#[derive(Clone, Debug)]
pub struct PruneReport {
    pub visits: Vec<LayerVisit>,
    pub final_params: u64,
    pub final_flops: u64,
    pub final_accuracy: f32,
}

/// Visits every prunable conv layer shallow-to-deep; each visit scores the
/// layer, selects survivors (top-k baseline or one-per-cluster), prunes to
/// the target sparsity, and fine-tunes at a constant learning rate. Layers
/// too small for the target are skipped with a warning entry.
#[allow(clippy::too_many_arguments)]
pub fn iterative_prune(
    net: NetworkSpec,
    train: &Dataset,
    test: &Dataset,
    init: &mut InitSnapshot,
    encoder: &dyn Encoder,
    opts: &PruneOptions,
) -> Result<(NetworkSpec, PruneReport)> {
    let mut net = net;
    let mut visits = Vec::new();
    let (h, w) = (train.height, train.width);
    for layer_id in net.prunable_conv_ids() {
        let n_f = net.filter_count(layer_id)?;
        let k = clusters_for_sparsity(n_f, opts.target_sparsity)?;
        if k >= n_f {
            visits.push(LayerVisit {
                layer_id,
                kept: n_f,
                removed: 0,
                skipped: Some(format!(
                    "layer {layer_id} with {n_f} filters is too small for sparsity {}: nothing to remove",
                    opts.target_sparsity
                )),
                test_accuracy_after: evaluate(&net, test, opts.batch_size)?,
                train_loss_after: f32::NAN,
                params_after: net.count_params(),
                flops_after: net.count_flops(h, w),
            });
            continue;
        }
        let scores = match opts.criterion {
            Criterion::L1 => score_l1(&net, layer_id)?,
            Criterion::Movement => score_movement(&net, layer_id, init)?,
        };
        let plan = match opts.method {
            Method::Baseline => select_keep_baseline(&scores, k)?,
            Method::Clustered => {
                let assignment = cluster_filters(
                    &net,
                    layer_id,
                    k,
                    opts.signature,
                    encoder,
                    derive_seed(opts.seed, "prune_visit", layer_id as u64),
                    opts.kmeans_restarts,
                )?;
                select_keep_clustered(&scores, &assignment)?
            }
        };
        net = prune_layer(&net, &plan, init)?;
        let stats = finetune_const(
            &mut net,
            train,
            opts.finetune_epochs,
            opts.finetune_lr,
            opts.batch_size,
            derive_seed(opts.seed, "finetune", layer_id as u64),
        )?;
        let accuracy = evaluate(&net, test, opts.batch_size)?;
        visits.push(LayerVisit {
            layer_id,
            kept: plan.keep.len(),
            removed: plan.remove.len(),
            skipped: None,
            test_accuracy_after: accuracy,
            train_loss_after: stats.last().map_or(f32::NAN, |s| s.mean_loss),
            params_after: net.count_params(),
            flops_after: net.count_flops(h, w),
        });
    }
    let report = PruneReport {
        final_params: net.count_params(),
        final_flops: net.count_flops(h, w),
        final_accuracy: visits.last().map_or_else(|| evaluate(&net, test, opts.batch_size).unwrap_or(f32::NAN), |v| v.test_accuracy_after),
        visits,
    };
    Ok((net, report))
}
