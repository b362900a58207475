//! Checkpoint format: bit-exact round trips, the architecture descriptor,
//! and offset-bearing rejection of malformed files.

mod common;

use pruneclust_cli::checkpoint::{
    encode_tensors, load_encoder, load_network, read_tensors, save_encoder, save_network, write_tensors,
};
use pruneclust_cli::error::CliError;
use pruneclust_core::cluster::RandomConvEncoder;
use pruneclust_core::models::{build_minivgg, build_miniresnet, remove_filters, NetworkSpec};
use pruneclust_core::rng::stream;
use pruneclust_core::tensor::Tensor;
use rand::Rng;
use std::collections::BTreeSet;
use std::path::Path;

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn assert_tensors_bitwise_equal(a: &[(String, Tensor)], b: &[(String, &Tensor)]) {
    assert_eq!(a.len(), b.len(), "tensor counts differ");
    for ((name_a, t_a), (name_b, t_b)) in a.iter().zip(b) {
        assert_eq!(name_a, name_b, "tensor order changed");
        assert_eq!(t_a.shape(), t_b.shape(), "{name_a} shape");
        assert_eq!(bits(t_a), bits(t_b), "{name_a} bits");
    }
}

/// Fills every tensor (parameters and running stats) with seeded values so
/// a round trip cannot pass by luck of shared defaults.
fn randomize(net: &mut NetworkSpec, seed: u64) {
    let mut rng = stream(seed, "randomize", 0);
    for (_, tensor) in net.named_tensors_mut() {
        for v in tensor.data_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
    }
}

#[test]
fn zero_tensors_make_a_twelve_byte_file_that_loads_back_empty() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("empty.pkck");
    write_tensors(&path, &[]).expect("write");
    assert_eq!(std::fs::metadata(&path).expect("stat").len(), 12);
    assert!(read_tensors(&path).expect("read").is_empty());
}

#[test]
fn random_tensor_sets_round_trip_bitwise_in_order() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut rng = stream(11, "ckpt_prop", 0);
    for case in 0..20 {
        let n = rng.random_range(0..6);
        let tensors: Vec<(String, Tensor)> = (0..n)
            .map(|i| {
                let rank = rng.random_range(0..4usize);
                let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..5)).collect();
                let numel = shape.iter().product::<usize>();
                let data: Vec<f32> = (0..numel).map(|_| rng.random_range(-1e6..1e6)).collect();
                (format!("tensor_{case}_{i}"), Tensor::new(shape, data).expect("shape"))
            })
            .collect();
        let path = dir.path().join(format!("case_{case}.pkck"));
        let refs: Vec<(String, &Tensor)> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        write_tensors(&path, &refs).expect("write");
        let back = read_tensors(&path).expect("read");
        assert_tensors_bitwise_equal(&back, &refs);
    }
}

#[test]
fn a_trained_looking_network_round_trips_bitwise() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut net = build_minivgg(&[4, 6], 10, 1, 3).expect("build");
    randomize(&mut net, 5);
    let path = dir.path().join("net.pkck");
    save_network(&path, &net).expect("save");
    let back = load_network(&path).expect("load");
    assert_eq!(back.arch, net.arch);
    assert!(back.surgery_log.is_empty());
    let original = net.named_tensors();
    let reloaded: Vec<(String, Tensor)> =
        back.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    assert_tensors_bitwise_equal(&reloaded, &original);
}

#[test]
fn a_pruned_network_round_trips_through_the_surgery_descriptor() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut net = build_minivgg(&[6, 4], 10, 1, 9).expect("build");
    randomize(&mut net, 6);
    let ids = net.prunable_conv_ids();
    net = remove_filters(&net, ids[0], &BTreeSet::from([1, 4])).expect("first removal");
    net = remove_filters(&net, ids[1], &BTreeSet::from([0])).expect("second removal");
    // A second visit to the first layer exercises at-the-time indexing.
    net = remove_filters(&net, ids[0], &BTreeSet::from([2])).expect("third removal");
    randomize(&mut net, 7);

    let path = dir.path().join("pruned.pkck");
    save_network(&path, &net).expect("save");
    let back = load_network(&path).expect("load");
    assert_eq!(back.arch, net.arch);
    assert_eq!(back.surgery_log, net.surgery_log);
    assert_eq!(back.filter_count(ids[0]).expect("count"), 3);
    assert_eq!(back.filter_count(ids[1]).expect("count"), 3);
    let original = net.named_tensors();
    let reloaded: Vec<(String, Tensor)> =
        back.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    assert_tensors_bitwise_equal(&reloaded, &original);
}

#[test]
fn a_resnet_round_trips_too() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut net = build_miniresnet(&[4, 8], 1, 10, 3, 21).expect("build");
    randomize(&mut net, 8);
    if let Some(&id) = net.prunable_conv_ids().first() {
        net = remove_filters(&net, id, &BTreeSet::from([0])).expect("removal");
    }
    let path = dir.path().join("resnet.pkck");
    save_network(&path, &net).expect("save");
    let back = load_network(&path).expect("load");
    assert_eq!(back.arch, net.arch);
    assert_eq!(back.surgery_log, net.surgery_log);
}

#[test]
fn bad_magic_and_bad_version_are_rejected() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("bad.pkck");

    std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").expect("write");
    let err = read_tensors(&path).expect_err("bad magic");
    assert!(matches!(&err, CliError::Data(m) if m.contains("magic")), "{err}");

    std::fs::write(&path, b"PKCK\x07\x00\x00\x00\x00\x00\x00\x00").expect("write");
    let err = read_tensors(&path).expect_err("bad version");
    assert!(matches!(&err, CliError::Data(m) if m.contains("version 7")), "{err}");
}

#[test]
fn truncations_fail_with_the_offset_named() {
    let dir = tempfile::tempdir().expect("tempdir");
    let net = build_minivgg(&[2, 2], 10, 1, 1).expect("build");
    let tensors: Vec<(String, &Tensor)> = net.named_tensors();
    let bytes = encode_tensors(&tensors).expect("encode");
    let path = dir.path().join("trunc.pkck");

    // Mid-header, mid-count, mid-name, and mid-data cuts all name offsets.
    for cut in [2usize, 9, 14, 40, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).expect("write");
        let err = read_tensors(&path).expect_err("truncated file must fail");
        let msg = err.to_string();
        assert!(msg.contains("offset"), "cut at {cut}: message must name the offset, got: {msg}");
        assert!(msg.contains("trunc.pkck"), "cut at {cut}: message must name the file, got: {msg}");
    }

    // Trailing garbage is rejected as well.
    let mut padded = bytes.clone();
    padded.extend_from_slice(&[0, 1, 2]);
    std::fs::write(&path, &padded).expect("write");
    let err = read_tensors(&path).expect_err("trailing bytes must fail");
    assert!(err.to_string().contains("trailing"), "{err}");
}

#[test]
fn load_network_rejects_foreign_containers() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("foreign.pkck");
    let t = Tensor::full(vec![2], 1.0);
    write_tensors(&path, &[("weights".to_string(), &t)]).expect("write");
    let err = load_network(&path).expect_err("no architecture descriptor");
    assert!(err.to_string().contains("__arch__"), "{err}");
}

#[test]
fn load_network_rejects_tensor_shape_and_name_mismatches() {
    let dir = tempfile::tempdir().expect("tempdir");
    let net = build_minivgg(&[2, 2], 10, 1, 1).expect("build");
    let path = dir.path().join("net.pkck");
    save_network(&path, &net).expect("save");
    let tensors = read_tensors(&path).expect("read");

    // Drop a tensor -> missing-name error.
    let dropped: Vec<(String, &Tensor)> =
        tensors.iter().filter(|(n, _)| n != "l00_bias").map(|(n, t)| (n.clone(), t)).collect();
    write_tensors(&path, &dropped).expect("write");
    let err = load_network(&path).expect_err("missing tensor");
    assert!(err.to_string().contains("l00_bias"), "{err}");

    // Rename a tensor -> foreign-name error.
    let renamed: Vec<(String, &Tensor)> = tensors
        .iter()
        .map(|(n, t)| (if n == "l00_bias" { "l99_bias".to_string() } else { n.clone() }, t))
        .collect();
    write_tensors(&path, &renamed).expect("write");
    load_network(&path).expect_err("foreign tensor");

    // Reshape a tensor -> shape error.
    let mut reshaped: Vec<(String, Tensor)> = tensors.clone();
    for (n, t) in &mut reshaped {
        if n == "l00_bias" {
            *t = Tensor::zeros(vec![3]);
        }
    }
    let refs: Vec<(String, &Tensor)> = reshaped.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_tensors(&path, &refs).expect("write");
    let err = load_network(&path).expect_err("wrong shape");
    assert!(err.to_string().contains("shape"), "{err}");
}

#[test]
fn encoder_round_trips_bitwise() {
    let dir = tempfile::tempdir().expect("tempdir");
    let encoder = RandomConvEncoder::new(1, 77);
    let path = dir.path().join("encoder.pkck");
    save_encoder(&path, &encoder).expect("save");
    let back = load_encoder(&path).expect("load");
    let original = encoder.named_tensors();
    let reloaded: Vec<(String, Tensor)> =
        back.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    assert_tensors_bitwise_equal(&reloaded, &original);

    // A network checkpoint is not an encoder.
    let net = build_minivgg(&[2, 2], 10, 1, 1).expect("build");
    let net_path = dir.path().join("net.pkck");
    save_network(&net_path, &net).expect("save");
    let err = load_encoder(&net_path).expect_err("missing encoder tensors");
    assert!(err.to_string().contains("enc_w1"), "{err}");
}

#[test]
fn checkpoints_are_byte_stable_for_equal_networks() {
    // Two identically seeded builds serialize to identical bytes — the
    // basis of the CLI's determinism contract for checkpoint files.
    let a = build_minivgg(&[3, 3], 10, 1, 42).expect("build");
    let b = build_minivgg(&[3, 3], 10, 1, 42).expect("build");
    let bytes_a = encode_tensors(&with_arch(&a)).expect("encode");
    let bytes_b = encode_tensors(&with_arch(&b)).expect("encode");
    assert_eq!(bytes_a, bytes_b);
}

/// Mirrors save_network's tensor list via the public API (descriptor
/// excluded — identical tensors suffice for the byte-stability check).
fn with_arch(net: &NetworkSpec) -> Vec<(String, &Tensor)> {
    net.named_tensors()
}

#[test]
fn directory_write_failures_surface_the_path() {
    let net = build_minivgg(&[2, 2], 10, 1, 1).expect("build");
    let err = save_network(Path::new("/nonexistent-dir/x.pkck"), &net).expect_err("bad path");
    assert!(err.to_string().contains("/nonexistent-dir/x.pkck"), "{err}");
}
