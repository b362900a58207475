//! Lottery-ticket experiments with weight rewinding: prune a trained
//! network, reset the surviving weights to their post-initial-training
//! values, retrain, and record accuracy against sparsity.

use std::collections::BTreeSet;

use crate::cluster::{cluster_filters, Encoder, SignatureParams};
use crate::error::{Error, Result};
use crate::models::{build_from_arch, Arch, NetworkSpec, SurgeryEvent};
use crate::pruner::{
    clusters_for_sparsity, score_l1, score_movement, select_keep_baseline, select_keep_clustered, Criterion,
    InitSnapshot, Method,
};
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::train::{evaluate, train_onecycle, Augment, Dataset};

/// Full parameter snapshot (weights, biases, bn parameters and running
/// statistics) at the rewind point, plus what is needed to reshape it to any
/// later surgery state: the architecture and the surgery history at capture.
#[derive(Clone, Debug)]
pub struct RewindCheckpoint {
    arch: Arch,
    tensors: Vec<(String, Tensor)>,
    log_at_capture: Vec<SurgeryEvent>,
    pub step: u64,
}

impl RewindCheckpoint {
    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Deep-copies every named tensor of the network at training step `step`.
pub fn capture_rewind(net: &NetworkSpec, step: u64) -> RewindCheckpoint {
    RewindCheckpoint {
        arch: net.arch.clone(),
        tensors: net.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        log_at_capture: net.surgery_log.clone(),
        step,
    }
}

/// Enforces the capture-once invariant of one experiment.
#[derive(Debug, Default)]
pub struct RewindState {
    checkpoint: Option<RewindCheckpoint>,
}

impl RewindState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Captures the rewind point; a second capture is rejected.
    pub fn capture(&mut self, net: &NetworkSpec, step: u64) -> Result<&RewindCheckpoint> {
        if self.checkpoint.is_some() {
            return Err(Error::Rewind("the rewind point was already captured for this experiment".into()));
        }
        self.checkpoint = Some(capture_rewind(net, step));
        Ok(self.checkpoint.as_ref().expect("just captured"))
    }

    pub fn checkpoint(&self) -> Option<&RewindCheckpoint> {
        self.checkpoint.as_ref()
    }
}

/// Rebuilds `net_pruned`'s architecture with every surviving parameter set
/// bitwise to its checkpoint value: the checkpoint is loaded into the
/// unpruned architecture and the pruned network's surgery history since
/// capture is replayed on top, dropping exactly the rows and slices surgery
/// dropped.
pub fn rewind(net_pruned: &NetworkSpec, ckpt: &RewindCheckpoint) -> Result<NetworkSpec> {
    if net_pruned.arch != ckpt.arch {
        return Err(Error::Rewind("checkpoint architecture does not match the pruned network".into()));
    }
    let log = &net_pruned.surgery_log;
    let at_capture = &ckpt.log_at_capture;
    if log.len() < at_capture.len() || log[..at_capture.len()] != at_capture[..] {
        return Err(Error::Rewind(
            "the pruned network's surgery history does not extend the checkpoint's".into(),
        ));
    }

    // Shape a fresh build like the network at capture, load the checkpoint,
    // then replay the suffix of the surgery history.
    let mut net = build_from_arch(&ckpt.arch, 0)?;
    for event in at_capture {
        let remove: BTreeSet<usize> = event.removed.iter().copied().collect();
        net = crate::models::remove_filters(&net, event.layer_id, &remove)?;
    }
    load_named(&mut net, &ckpt.tensors)?;
    for event in &log[at_capture.len()..] {
        let remove: BTreeSet<usize> = event.removed.iter().copied().collect();
        net = crate::models::remove_filters(&net, event.layer_id, &remove)?;
    }

    // The result must be shape-identical to the pruned network.
    let got = net.named_tensors();
    let want = net_pruned.named_tensors();
    if got.len() != want.len() {
        return Err(Error::Rewind(format!("tensor count {} after replay, expected {}", got.len(), want.len())));
    }
    for ((gn, gt), (wn, wt)) in got.iter().zip(&want) {
        if gn != wn || gt.shape() != wt.shape() {
            return Err(Error::Rewind(format!(
                "replayed tensor {gn} {:?} does not match pruned network tensor {wn} {:?}",
                gt.shape(),
                wt.shape()
            )));
        }
    }
    drop(got);
    drop(want);
    net.surgery_log = net_pruned.surgery_log.clone();
    Ok(net)
}

fn load_named(net: &mut NetworkSpec, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut slots = net.named_tensors_mut();
    if slots.len() != tensors.len() {
        return Err(Error::Rewind(format!(
            "checkpoint has {} tensors, network has {}",
            tensors.len(),
            slots.len()
        )));
    }
    for ((slot_name, slot), (name, value)) in slots.iter_mut().zip(tensors) {
        if slot_name != name {
            return Err(Error::Rewind(format!("tensor order mismatch: {slot_name} vs {name}")));
        }
        if slot.shape() != value.shape() {
            return Err(Error::Rewind(format!(
                "tensor {name} shape {:?} does not match checkpoint shape {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        **slot = value.clone();
    }
    Ok(())
}

/// One measured cell of a lottery grid.
#[derive(Clone, Debug)]
pub struct TicketPoint {
    pub criterion: Criterion,
    pub method: Method,
    pub sparsity: f64,
    pub seed: u64,
    pub test_accuracy: f32,
    pub params: u64,
    pub flops: u64,
}

/// Options for [`lth_experiment`].
#[derive(Clone, Debug)]
pub struct LthOptions {
    pub arch: Arch,
    pub epochs_initial: usize,
    pub retrain_epochs: usize,
    pub lr_max: f32,
    pub batch_size: usize,
    /// Sparsities in `[0, 1)`; 0 is the unpruned control point.
    pub sparsities: Vec<f64>,
    pub seeds: Vec<u64>,
    pub signature: SignatureParams,
    pub kmeans_restarts: usize,
    pub augment: Augment,
}

/// The four experimental conditions: each criterion with and without
/// cluster guidance.
pub const CONDITIONS: [(Criterion, Method); 4] = [
    (Criterion::L1, Method::Baseline),
    (Criterion::L1, Method::Clustered),
    (Criterion::Movement, Method::Baseline),
    (Criterion::Movement, Method::Clustered),
];

/// Prunes every prunable layer single-shot to the target sparsity (no
/// fine-tuning between layers) and keeps the init snapshot in lockstep.
#[allow(clippy::too_many_arguments)]
fn single_shot_prune(
    net: &NetworkSpec,
    init: &mut InitSnapshot,
    sparsity: f64,
    criterion: Criterion,
    method: Method,
    sig: SignatureParams,
    encoder: &dyn Encoder,
    restarts: usize,
    seed: u64,
) -> Result<NetworkSpec> {
    let mut net = net.clone();
    for layer_id in net.prunable_conv_ids() {
        let n_f = net.filter_count(layer_id)?;
        let k = clusters_for_sparsity(n_f, sparsity)?;
        if k >= n_f {
            continue; // layer too small for the target; leave it whole
        }
        let scores = match criterion {
            Criterion::L1 => score_l1(&net, layer_id)?,
            Criterion::Movement => score_movement(&net, layer_id, init)?,
        };
        let plan = match method {
            Method::Baseline => select_keep_baseline(&scores, k)?,
            Method::Clustered => {
                let assignment = cluster_filters(
                    &net,
                    layer_id,
                    k,
                    sig,
                    encoder,
                    derive_seed(seed, "ticket_cluster", layer_id as u64),
                    restarts,
                )?;
                select_keep_clustered(&scores, &assignment)?
            }
        };
        net = crate::pruner::prune_layer(&net, &plan, init)?;
    }
    Ok(net)
}

/// Runs the full rewinding grid: per seed, one initial training and one
/// rewind capture, then for every sparsity and condition a single-shot
/// prune, a rewind, and a retraining of the ticket. Identical seeds share
/// the initial training because the trajectory is deterministic.
pub fn lth_experiment(
    train: &Dataset,
    test: &Dataset,
    encoder: &dyn Encoder,
    opts: &LthOptions,
) -> Result<Vec<TicketPoint>> {
    for s in &opts.sparsities {
        if !(*s >= 0.0 && *s < 1.0) {
            return Err(Error::Config(format!("ticket sparsity must be in [0,1), got {s}")));
        }
    }
    let mut points = Vec::new();
    for &seed in &opts.seeds {
        let mut net = build_from_arch(&opts.arch, seed)?;
        let init = InitSnapshot::capture(&net);
        let stats = train_onecycle(&mut net, train, opts.epochs_initial, opts.lr_max, opts.batch_size, seed, opts.augment)?;
        let mut state = RewindState::new();
        let ckpt = state.capture(&net, stats.iter().map(|s| s.steps as u64).sum())?;

        for &sparsity in &opts.sparsities {
            for &(criterion, method) in CONDITIONS.iter() {
                let mut snap = init.clone();
                let pruned = if sparsity == 0.0 {
                    net.clone()
                } else {
                    single_shot_prune(
                        &net,
                        &mut snap,
                        sparsity,
                        criterion,
                        method,
                        opts.signature,
                        encoder,
                        opts.kmeans_restarts,
                        derive_seed(seed, "ticket", cell_key(sparsity, criterion, method)),
                    )?
                };
                let mut ticket = rewind(&pruned, ckpt)?;
                let retrain_seed = derive_seed(seed, "ticket_retrain", cell_key(sparsity, criterion, method));
                train_onecycle(
                    &mut ticket,
                    train,
                    opts.retrain_epochs,
                    opts.lr_max,
                    opts.batch_size,
                    retrain_seed,
                    opts.augment,
                )?;
                let accuracy = evaluate(&ticket, test, opts.batch_size)?;
                points.push(TicketPoint {
                    criterion,
                    method,
                    sparsity,
                    seed,
                    test_accuracy: accuracy,
                    params: ticket.count_params(),
                    flops: ticket.count_flops(train.height, train.width),
                });
            }
        }
    }
    Ok(points)
}

fn cell_key(sparsity: f64, criterion: Criterion, method: Method) -> u64 {
    let s = (sparsity * 1000.0).round() as u64;
    let c = match criterion {
        Criterion::L1 => 0u64,
        Criterion::Movement => 1,
    };
    let m = match method {
        Method::Baseline => 0u64,
        Method::Clustered => 1,
    };
    s * 4 + c * 2 + m
}
