//! Subcommand implementations: each takes parsed arguments, drives the
//! core pipeline, and writes checkpoints / metrics / images under the
//! config's output directory.

use crate::checkpoint;
use crate::config::{method_tag, ExperimentConfig};
use crate::data;
use crate::error::{CliError, Result};
use crate::metrics::{self, MetricsRow};
use crate::pgm;
use crate::report;
use pruneclust_core::cluster::RandomConvEncoder;
use pruneclust_core::interpret::signatures_for_layer;
use pruneclust_core::lottery::{lth_experiment, LthOptions};
use pruneclust_core::models::{build_from_arch, LayerId, NetworkSpec};
use pruneclust_core::pruner::{iterative_prune, Criterion, InitSnapshot, Method, PruneOptions};
use pruneclust_core::rng::derive_seed;
use pruneclust_core::train::{evaluate, train_onecycle};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

fn criterion_name(c: Criterion) -> &'static str {
    match c {
        Criterion::L1 => "l1",
        Criterion::Movement => "movement",
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Baseline => "baseline",
        Method::Clustered => "clustered",
    }
}

/// Errors from building a network out of config values are config errors,
/// not runtime failures — the values were wrong.
fn config_err(e: pruneclust_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn ensure_output_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create output dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn make_encoder(cfg: &ExperimentConfig) -> Result<RandomConvEncoder> {
    let (channels, _, _) = cfg.input_shape();
    match cfg.encoder.strip_prefix("file:") {
        None => Ok(RandomConvEncoder::new(channels, derive_seed(cfg.seed, "encoder", 0))),
        Some(path) => checkpoint::load_encoder(Path::new(path)),
    }
}

fn base_row(cfg: &ExperimentConfig, run_id: &str) -> MetricsRow {
    MetricsRow {
        run_id: run_id.to_string(),
        seed: cfg.seed,
        dataset: cfg.dataset_name().to_string(),
        model: cfg.model_name().to_string(),
        method: method_name(cfg.method()).to_string(),
        criterion: criterion_name(cfg.criterion()).to_string(),
        sparsity: 0.0,
        phase: String::new(),
        epoch: 0,
        train_loss: f32::NAN,
        test_accuracy: f32::NAN,
        params: 0,
        flops: 0,
    }
}

/// `train --config c.json`: initial training, then checkpoint + metrics.
pub fn cmd_train(config_path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_file(config_path)?;
    let (train_set, test_set) = data::load_dataset(cfg.dataset, &cfg.data_dir)?;
    let out_dir = ensure_output_dir(&cfg)?;

    let mut net = build_from_arch(&cfg.arch(), cfg.seed).map_err(config_err)?;
    let stats = train_onecycle(&mut net, &train_set, cfg.epochs_initial, cfg.lr_max, cfg.batch_size, cfg.seed, cfg.augment())?;
    let accuracy = evaluate(&net, &test_set, cfg.batch_size)?;

    let run_id = cfg.run_id(None);
    let params = net.count_params();
    let flops = net.count_flops(train_set.height, train_set.width);
    let rows: Vec<MetricsRow> = stats
        .iter()
        .map(|s| MetricsRow {
            phase: "train".to_string(),
            epoch: s.epoch,
            train_loss: s.mean_loss,
            // Evaluation happens once, after the last epoch; earlier rows
            // log training loss only.
            test_accuracy: if s.epoch + 1 == cfg.epochs_initial { accuracy } else { f32::NAN },
            params,
            flops,
            ..base_row(&cfg, &run_id)
        })
        .collect();

    let ckpt_path = out_dir.join(format!("{run_id}.pkck"));
    checkpoint::save_network(&ckpt_path, &net)?;
    let csv_path = out_dir.join(format!("{run_id}_metrics.csv"));
    metrics::write_metrics(&rows, &csv_path)?;
    println!("{run_id}: test accuracy {accuracy:.4} after {} epochs", cfg.epochs_initial);
    println!("checkpoint {}", ckpt_path.display());
    println!("metrics    {}", csv_path.display());
    Ok(())
}

/// `prune --config c.json --checkpoint p [--dump-signatures]`.
pub fn cmd_prune(config_path: &Path, checkpoint_path: &Path, dump_signatures: bool) -> Result<()> {
    let cfg = ExperimentConfig::from_file(config_path)?;
    let Some(target) = cfg.target_sparsity else {
        return Err(CliError::Config("prune needs target_sparsity in the config".into()));
    };
    let (train_set, test_set) = data::load_dataset(cfg.dataset, &cfg.data_dir)?;
    let out_dir = ensure_output_dir(&cfg)?;

    let net = checkpoint::load_network(checkpoint_path)?;
    if net.arch != cfg.arch() {
        return Err(CliError::Config(format!(
            "checkpoint {} holds {:?} but the config describes {:?}",
            checkpoint_path.display(),
            net.arch,
            cfg.arch()
        )));
    }
    if !net.surgery_log.is_empty() {
        return Err(CliError::Config(format!(
            "checkpoint {} is already pruned; prune expects the initial-training checkpoint",
            checkpoint_path.display()
        )));
    }

    // The movement criterion compares against initialization. The
    // initialization is a pure function of (arch, seed), so it is rebuilt
    // here rather than persisted alongside the checkpoint.
    let mut init = InitSnapshot::capture(&build_from_arch(&cfg.arch(), cfg.seed).map_err(config_err)?);
    let encoder = make_encoder(&cfg)?;
    let opts = PruneOptions {
        target_sparsity: target,
        criterion: cfg.criterion(),
        method: cfg.method(),
        finetune_epochs: cfg.finetune_epochs,
        finetune_lr: cfg.finetune_lr,
        batch_size: cfg.batch_size,
        signature: cfg.signature_params(),
        kmeans_restarts: cfg.kmeans_restarts,
        seed: cfg.seed,
    };

    let pre_prune = net.clone();
    let params_before = pre_prune.count_params();
    let (pruned, prune_report) = iterative_prune(net, &train_set, &test_set, &mut init, &encoder, &opts)?;

    let run_id = cfg.run_id(Some(target));
    let rows: Vec<MetricsRow> = prune_report
        .visits
        .iter()
        .enumerate()
        .map(|(i, v)| MetricsRow {
            sparsity: target,
            phase: "finetune".to_string(),
            epoch: i,
            train_loss: v.train_loss_after,
            test_accuracy: v.test_accuracy_after,
            params: v.params_after,
            flops: v.flops_after,
            ..base_row(&cfg, &run_id)
        })
        .collect();

    let ckpt_path = out_dir.join(format!("{run_id}.pkck"));
    checkpoint::save_network(&ckpt_path, &pruned)?;
    let csv_path = out_dir.join(format!("{run_id}_metrics.csv"));
    metrics::write_metrics(&rows, &csv_path)?;

    if dump_signatures {
        let sig_dir = out_dir.join(format!("{run_id}_signatures"));
        dump_prune_signatures(&pre_prune, &pruned, &cfg, &sig_dir)?;
        println!("signatures {}", sig_dir.display());
    }

    println!(
        "{run_id}: accuracy {:.4}, params {params_before} -> {}, flops {}",
        prune_report.final_accuracy, prune_report.final_params, prune_report.final_flops
    );
    println!("checkpoint {}", ckpt_path.display());
    println!("metrics    {}", csv_path.display());
    Ok(())
}

/// Dumps every prunable layer's signatures from the pre-prune network, the
/// removed filters marked by filename suffix. Seeds reproduce the exact
/// derivation the prune visits used, so for clustered runs these are the
/// very images the clustering saw.
fn dump_prune_signatures(
    original: &NetworkSpec,
    pruned: &NetworkSpec,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<()> {
    // Each prune visit touches a layer at most once, so the logged removal
    // indices are indices into the original layer.
    let mut removed: BTreeMap<LayerId, BTreeSet<usize>> = BTreeMap::new();
    for event in &pruned.surgery_log {
        removed.entry(event.layer_id).or_default().extend(event.removed.iter().copied());
    }
    for layer_id in original.prunable_conv_ids() {
        let visit_seed = derive_seed(cfg.seed, "prune_visit", layer_id as u64);
        let signatures = signatures_for_layer(
            original,
            layer_id,
            cfg.am_steps,
            cfg.am_step_size,
            derive_seed(visit_seed, "am", layer_id as u64),
        )?;
        let removed_set = removed.get(&layer_id).cloned().unwrap_or_default();
        pgm::emit_signature_images(&signatures, dir, &removed_set)?;
    }
    Ok(())
}

/// `lottery --config c.json`: the rewinding grid for this config's seed.
pub fn cmd_lottery(config_path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_file(config_path)?;
    let Some(list) = cfg.sparsity_list.clone() else {
        return Err(CliError::Config("lottery needs sparsity_list in the config".into()));
    };
    let (train_set, test_set) = data::load_dataset(cfg.dataset, &cfg.data_dir)?;
    let out_dir = ensure_output_dir(&cfg)?;
    let encoder = make_encoder(&cfg)?;

    let opts = LthOptions {
        arch: cfg.arch(),
        epochs_initial: cfg.epochs_initial,
        retrain_epochs: cfg.retrain_epochs,
        lr_max: cfg.lr_max,
        batch_size: cfg.batch_size,
        sparsities: list,
        seeds: vec![cfg.seed],
        signature: cfg.signature_params(),
        kmeans_restarts: cfg.kmeans_restarts,
        augment: cfg.augment(),
    };
    let points = lth_experiment(&train_set, &test_set, &encoder, &opts)?;

    let rows: Vec<MetricsRow> = points
        .iter()
        .map(|p| MetricsRow {
            run_id: format!(
                "{}-{}-{}-s{:03}-seed{}",
                cfg.dataset_name(),
                cfg.model_name(),
                method_tag(p.criterion, p.method),
                (p.sparsity * 100.0).round() as u32,
                p.seed
            ),
            seed: p.seed,
            method: method_name(p.method).to_string(),
            criterion: criterion_name(p.criterion).to_string(),
            sparsity: p.sparsity,
            phase: "ticket".to_string(),
            epoch: cfg.retrain_epochs,
            test_accuracy: p.test_accuracy,
            params: p.params,
            flops: p.flops,
            ..base_row(&cfg, "")
        })
        .collect();

    let csv_path =
        out_dir.join(format!("{}-{}-lottery-seed{}_metrics.csv", cfg.dataset_name(), cfg.model_name(), cfg.seed));
    metrics::write_metrics(&rows, &csv_path)?;
    println!("{} ticket points", rows.len());
    println!("metrics    {}", csv_path.display());
    Ok(())
}

/// `signatures --checkpoint p --layer L`: a bare activation-maximization
/// dump of the layer's current filters.
pub fn cmd_signatures(
    checkpoint_path: &Path,
    layer: LayerId,
    out_dir: &Path,
    steps: usize,
    step_size: f32,
    seed: u64,
) -> Result<()> {
    if steps == 0 {
        return Err(CliError::Config("steps must be positive".into()));
    }
    if !(step_size > 0.0) {
        return Err(CliError::Config(format!("step-size must be positive, got {step_size}")));
    }
    let net = checkpoint::load_network(checkpoint_path)?;
    if !net.conv_ids().contains(&layer) {
        return Err(CliError::Config(format!(
            "layer {layer} is not a conv layer; this network's conv layers are {:?}",
            net.conv_ids()
        )));
    }
    let signatures = signatures_for_layer(&net, layer, steps, step_size, seed)?;
    pgm::emit_signature_images(&signatures, out_dir, &BTreeSet::new())?;
    for s in &signatures {
        println!(
            "layer{} filter{}: activation {:.6} -> {:.6}{}",
            s.filter.layer_id,
            s.filter.filter_index,
            s.initial_activation,
            s.final_activation,
            if s.degenerate { " (degenerate: zero input gradient)" } else { "" }
        );
    }
    println!("{} images in {}", signatures.len(), out_dir.display());
    Ok(())
}

/// `report --in dir`: aggregate every metrics CSV in the directory.
pub fn cmd_report(in_dir: &Path) -> Result<()> {
    let rows = report::read_metrics_dir(in_dir)?;
    let cells = report::aggregate(&rows);
    if cells.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no finetune/ticket rows to aggregate",
            in_dir.display()
        )));
    }
    print!("{}", report::format_table(&cells));
    Ok(())
}
