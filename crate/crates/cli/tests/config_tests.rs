//! Config parsing: strictness, defaults, validation, and naming helpers.

mod common;

use pruneclust_cli::config::{method_tag, DatasetKind, ExperimentConfig, MethodKind};
use pruneclust_cli::error::CliError;
use pruneclust_core::models::Family;
use pruneclust_core::pruner::{Criterion, Method};
use pruneclust_core::train::Augment;
use std::path::Path;

fn parse(value: &serde_json::Value) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig =
        serde_json::from_str(&value.to_string()).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn base() -> serde_json::Value {
    common::base_config_json(Path::new("data"), Path::new("runs"))
}

#[test]
fn a_valid_config_parses_with_defaults_filled() {
    let cfg = parse(&base()).expect("valid config");
    assert_eq!(cfg.dataset, DatasetKind::Mnist);
    assert_eq!(cfg.widths, vec![2, 2]);
    assert_eq!(cfg.seed, 1);
    assert_eq!(cfg.am_steps, 8); // set explicitly by the fixture
    // Defaults:
    assert_eq!(cfg.retrain_epochs, 15);
    assert!((cfg.am_step_size - 0.05).abs() < 1e-12);
    assert_eq!(cfg.kmeans_restarts, 10);
    assert_eq!(cfg.encoder, "default");
    assert_eq!(cfg.blocks_per_stage, 1);
    assert!(cfg.target_sparsity.is_none());
    assert!(cfg.sparsity_list.is_none());
}

#[test]
fn parse_serialize_parse_is_identity() {
    let mut value = base();
    value["target_sparsity"] = serde_json::json!(0.6);
    let cfg = parse(&value).expect("valid config");
    let text = serde_json::to_string(&cfg).expect("serialize");
    let again: ExperimentConfig = serde_json::from_str(&text).expect("reparse");
    assert_eq!(cfg, again);
}

#[test]
fn unknown_keys_are_rejected() {
    let mut value = base();
    value["learning_rate"] = serde_json::json!(0.1); // typo for lr_max
    let err = parse(&value).expect_err("unknown key must fail");
    assert!(err.to_string().contains("learning_rate"), "message names the key: {err}");
}

#[test]
fn missing_required_keys_are_rejected() {
    for key in ["dataset", "model", "widths", "seed", "lr_max", "output_dir"] {
        let mut value = base();
        value.as_object_mut().expect("object").remove(key);
        parse(&value).expect_err("missing required key must fail");
    }
}

#[test]
fn out_of_range_values_are_rejected() {
    let cases = [
        ("batch_size", serde_json::json!(0)),
        ("epochs_initial", serde_json::json!(0)),
        ("lr_max", serde_json::json!(-0.001)),
        ("finetune_lr", serde_json::json!(0.0)),
        ("am_step_size", serde_json::json!(0.0)),
        ("widths", serde_json::json!([])),
        ("target_sparsity", serde_json::json!(1.0)),
        ("target_sparsity", serde_json::json!(0.0)),
        ("sparsity_list", serde_json::json!([])),
        ("sparsity_list", serde_json::json!([0.5, 1.0])),
        ("encoder", serde_json::json!("random")),
        ("dataset", serde_json::json!("imagenet")),
    ];
    for (key, bad) in cases {
        let mut value = base();
        value[key] = bad.clone();
        let err = parse(&value).unwrap_err();
        assert!(matches!(err, CliError::Config(_)), "{key}={bad} must be a config error, got {err}");
    }
}

#[test]
fn zero_sparsity_is_allowed_in_the_grid_but_not_as_target() {
    let mut value = base();
    value["sparsity_list"] = serde_json::json!([0.0, 0.5]);
    parse(&value).expect("0 is a valid unpruned control point in a grid");
}

#[test]
fn helper_mappings_follow_the_dataset_and_model() {
    let cfg = parse(&base()).expect("valid config");
    assert_eq!(cfg.input_shape(), (1, 32, 32));
    assert_eq!(cfg.augment(), Augment::None);
    let arch = cfg.arch();
    assert_eq!(arch.family, Family::MiniVgg);
    assert_eq!(arch.in_channels, 1);
    assert_eq!(arch.num_classes, 10);
    assert_eq!(arch.blocks_per_stage, 0, "vgg family records no blocks");

    let mut value = base();
    value["dataset"] = serde_json::json!("cifar10");
    value["model"] = serde_json::json!("miniresnet");
    value["blocks_per_stage"] = serde_json::json!(2);
    let cfg = parse(&value).expect("valid config");
    assert_eq!(cfg.input_shape(), (3, 32, 32));
    assert_eq!(cfg.augment(), Augment::FlipCrop4);
    let arch = cfg.arch();
    assert_eq!(arch.family, Family::MiniResnet);
    assert_eq!(arch.blocks_per_stage, 2);
}

#[test]
fn run_ids_and_method_tags_are_stable() {
    let mut value = base();
    value["criterion"] = serde_json::json!("movement");
    let cfg = parse(&value).expect("valid config");
    assert_eq!(cfg.method(), Method::Clustered);
    assert_eq!(cfg.run_id(Some(0.6)), "mnist-minivgg-cluster_movement-s060-seed1");
    assert_eq!(cfg.run_id(None), "mnist-minivgg-cluster_movement-seed1");

    assert_eq!(method_tag(Criterion::L1, Method::Baseline), "l1");
    assert_eq!(method_tag(Criterion::L1, Method::Clustered), "cluster_l1");
    assert_eq!(method_tag(Criterion::Movement, Method::Baseline), "movement");
    assert_eq!(method_tag(Criterion::Movement, Method::Clustered), "cluster_movement");
}

#[test]
fn from_file_reports_the_path_on_errors() {
    let dir = tempfile::tempdir().expect("tempdir");
    let missing = dir.path().join("nope.json");
    let err = ExperimentConfig::from_file(&missing).expect_err("missing file");
    assert!(err.to_string().contains("nope.json"), "message names the file: {err}");
    assert!(matches!(err, CliError::Config(_)));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").expect("write");
    let err = ExperimentConfig::from_file(&bad).expect_err("bad json");
    assert!(err.to_string().contains("bad.json"), "message names the file: {err}");
}

#[test]
fn checked_in_example_configs_are_valid() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(configs).expect("configs dir") {
        let path = entry.expect("entry").path();
        if path.extension().is_some_and(|e| e == "json") {
            ExperimentConfig::from_file(&path)
                .unwrap_or_else(|e| panic!("{} must be valid: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 6, "expected the example configs, found {seen}");
}

#[test]
fn method_kind_is_independent_of_criterion() {
    let mut value = base();
    value["method"] = serde_json::json!("baseline");
    let cfg = parse(&value).expect("valid config");
    assert_eq!(cfg.method, MethodKind::Baseline);
    assert_eq!(cfg.method_tag(), "l1");
}
