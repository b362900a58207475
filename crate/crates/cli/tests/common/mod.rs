//! Shared fixtures for the toolkit tests: synthetic dataset files in the
//! published binary formats, and small config builders.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use std::io::Write as _;
use std::path::Path;

/// Writes an IDX image file (magic 0x00000803) of `rows` x `cols` images.
pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for image in images {
        assert_eq!(image.len(), rows * cols, "fixture image has the wrong size");
        bytes.extend_from_slice(image);
    }
    std::fs::write(path, bytes).expect("write idx images");
}

/// Writes an IDX label file (magic 0x00000801).
pub fn write_idx_labels(path: &Path, labels: &[u8]) {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    std::fs::write(path, bytes).expect("write idx labels");
}

/// One deterministic, trivially separable fake digit: class `k` is a flat
/// brightness level plus a little seeded noise.
fn fake_digit(class: u8, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let base = 30 + u16::from(class) * 22; // 30..=228
    (0..28 * 28).map(|_| (base as i32 + rng.random_range(-15..=15)).clamp(0, 255) as u8).collect()
}

/// Builds a complete synthetic MNIST directory (`<dir>/mnist/` with the
/// four IDX files): labels cycle 0..=9, images separable by brightness.
pub fn synthetic_mnist_dir(dir: &Path, n_train: usize, n_test: usize, seed: u64) {
    let mnist = dir.join("mnist");
    std::fs::create_dir_all(&mnist).expect("create mnist dir");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut build = |n: usize| {
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let images: Vec<Vec<u8>> = labels.iter().map(|&l| fake_digit(l, &mut rng)).collect();
        (images, labels)
    };
    let (images, labels) = build(n_train);
    write_idx_images(&mnist.join("train-images-idx3-ubyte"), &images, 28, 28);
    write_idx_labels(&mnist.join("train-labels-idx1-ubyte"), &labels);
    let (images, labels) = build(n_test);
    write_idx_images(&mnist.join("t10k-images-idx3-ubyte"), &images, 28, 28);
    write_idx_labels(&mnist.join("t10k-labels-idx1-ubyte"), &labels);
}

/// Writes one CIFAR-10 binary batch of 10000 records with cycling labels
/// and seeded pixels.
pub fn write_cifar_batch(path: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).expect("create cifar batch"));
    let mut record = vec![0u8; 3073];
    for i in 0..10_000usize {
        record[0] = (i % 10) as u8;
        rng.fill(&mut record[1..]);
        file.write_all(&record).expect("write cifar record");
    }
}

/// Builds a complete synthetic CIFAR-10 directory
/// (`<dir>/cifar-10-batches-bin/` with 5 + 1 batch files).
pub fn synthetic_cifar_dir(dir: &Path, seed: u64) {
    let cifar = dir.join("cifar-10-batches-bin");
    std::fs::create_dir_all(&cifar).expect("create cifar dir");
    for batch in 1..=5 {
        write_cifar_batch(&cifar.join(format!("data_batch_{batch}.bin")), seed + batch);
    }
    write_cifar_batch(&cifar.join("test_batch.bin"), seed + 6);
}

/// A minimal valid config as a JSON value, for tests to mutate.
pub fn base_config_json(data_dir: &Path, output_dir: &Path) -> serde_json::Value {
    serde_json::json!({
        "dataset": "mnist",
        "model": "minivgg",
        "widths": [2, 2],
        "seed": 1,
        "epochs_initial": 1,
        "lr_max": 0.001,
        "batch_size": 16,
        "criterion": "l1",
        "method": "clustered",
        "finetune_epochs": 1,
        "finetune_lr": 0.0003,
        "am_steps": 8,
        "data_dir": data_dir.to_str().expect("utf-8 temp path"),
        "output_dir": output_dir.to_str().expect("utf-8 temp path"),
    })
}

/// Writes a JSON value as a config file and returns its path.
pub fn write_config(dir: &Path, name: &str, value: &serde_json::Value) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).expect("serialize config")).expect("write config");
    path
}
