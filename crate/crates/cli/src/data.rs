//! Dataset loaders for the published binary formats: MNIST IDX files and
//! the CIFAR-10 binary batches.
//!
//! Images come back in file order (shuffling is the trainer's job, under its
//! own seed), as single tensors scaled to `[-1, 1]` via `p / 127.5 - 1`.
//! MNIST digits are zero-padded from 28x28 to 32x32 so both datasets share
//! one input resolution.

use crate::error::{CliError, Result};
use pruneclust_core::train::Dataset;
use std::path::{Path, PathBuf};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A byte reader that knows its position, so format errors can name the
/// exact offset that disappointed us.
struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Cursor { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CliError::Data(format!(
                "{}: truncated at offset {} (wanted {n} more bytes, file has {})",
                self.path.display(),
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(CliError::Data(format!(
                "{}: {} trailing bytes after offset {}",
                self.path.display(),
                self.bytes.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn scale(p: u8) -> f32 {
    f32::from(p) / 127.5 - 1.0
}

/// Parses one IDX image file into raw 28x28 (or whatever the header says)
/// uint8 images.
fn parse_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let bytes = read_file(path)?;
    let mut c = Cursor::new(path, &bytes);
    let magic = c.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CliError::Data(format!(
            "{}: bad image magic {magic:#010x} at offset 0, want {IDX_IMAGES_MAGIC:#010x}",
            path.display()
        )));
    }
    let count = c.u32_be()? as usize;
    let rows = c.u32_be()? as usize;
    let cols = c.u32_be()? as usize;
    let pixels = c.take(count * rows * cols)?.to_vec();
    c.expect_end()?;
    Ok((pixels, count, rows, cols))
}

fn parse_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let mut c = Cursor::new(path, &bytes);
    let magic = c.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CliError::Data(format!(
            "{}: bad label magic {magic:#010x} at offset 0, want {IDX_LABELS_MAGIC:#010x}",
            path.display()
        )));
    }
    let count = c.u32_be()? as usize;
    let labels = c.take(count)?.to_vec();
    c.expect_end()?;
    Ok(labels)
}

/// Loads one IDX image/label pair, zero-padding each image into a `side` x
/// `side` frame.
fn load_idx_pair(images_path: &Path, labels_path: &Path, side: usize) -> Result<Dataset> {
    let (pixels, count, rows, cols) = parse_idx_images(images_path)?;
    let labels = parse_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(CliError::Data(format!(
            "{} has {count} images but {} has {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    if rows > side || cols > side {
        return Err(CliError::Data(format!(
            "{}: {rows}x{cols} images do not fit the {side}x{side} frame",
            images_path.display()
        )));
    }
    let (top, left) = ((side - rows) / 2, (side - cols) / 2);
    let mut data = vec![scale(0); count * side * side];
    for i in 0..count {
        for r in 0..rows {
            let src = (i * rows + r) * cols;
            let dst = (i * side + top + r) * side + left;
            for ccol in 0..cols {
                data[dst + ccol] = scale(pixels[src + ccol]);
            }
        }
    }
    Dataset::new(data, labels, 1, side, side).map_err(|e| CliError::Data(e.to_string()))
}

/// MNIST from a directory holding the four published IDX files.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let file = |name: &str| dir.join(name);
    let train = load_idx_pair(&file("train-images-idx3-ubyte"), &file("train-labels-idx1-ubyte"), 32)?;
    let test = load_idx_pair(&file("t10k-images-idx3-ubyte"), &file("t10k-labels-idx1-ubyte"), 32)?;
    Ok((train, test))
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
const CIFAR_PER_FILE: usize = 10_000;

fn load_cifar_batch(path: &Path, images: &mut Vec<f32>, labels: &mut Vec<u8>) -> Result<()> {
    let bytes = read_file(path)?;
    let mut c = Cursor::new(path, &bytes);
    for _ in 0..CIFAR_PER_FILE {
        let record = c.take(CIFAR_RECORD)?;
        let label = record[0];
        if label > 9 {
            return Err(CliError::Data(format!(
                "{}: label {label} out of range at offset {}",
                path.display(),
                c.pos - CIFAR_RECORD
            )));
        }
        labels.push(label);
        images.extend(record[1..].iter().map(|&p| scale(p)));
    }
    c.expect_end()
}

/// CIFAR-10 from a directory holding the five training batches and the test
/// batch in the published binary layout (1 label byte + 3072 pixel bytes
/// per record, channel-major RGB).
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for batch in 1..=5 {
        load_cifar_batch(&dir.join(format!("data_batch_{batch}.bin")), &mut images, &mut labels)?;
    }
    let train = Dataset::new(images, labels, 3, 32, 32).map_err(|e| CliError::Data(e.to_string()))?;

    let mut images = Vec::new();
    let mut labels = Vec::new();
    load_cifar_batch(&dir.join("test_batch.bin"), &mut images, &mut labels)?;
    let test = Dataset::new(images, labels, 3, 32, 32).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((train, test))
}

/// Loads the configured dataset from its conventional subdirectory.
pub fn load_dataset(kind: crate::config::DatasetKind, data_dir: &str) -> Result<(Dataset, Dataset)> {
    let root = PathBuf::from(data_dir);
    match kind {
        crate::config::DatasetKind::Mnist => load_mnist(&root.join("mnist")),
        crate::config::DatasetKind::Cifar10 => load_cifar10(&root.join("cifar-10-batches-bin")),
    }
}
