//! PKCK checkpoint files: a minimal named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"PKCK"
//! u32    format version (currently 1)
//! u32    tensor count
//! then per tensor:
//!   u32      name length in bytes
//!   [u8]     name (UTF-8)
//!   u32      rank
//!   [u32]    dims
//!   [f32]    data, row-major, dims product values
//! ```
//!
//! A checkpoint with zero tensors is exactly the 12-byte header. Every
//! parse error names the byte offset it hit.
//!
//! Network checkpoints prepend a `__arch__` descriptor tensor encoding the
//! architecture and the full surgery history, so a pruned network can be
//! rebuilt shape-exact before its weights are restored: the loader rebuilds
//! the unpruned architecture, replays the logged removals, then overwrites
//! every named tensor.

use crate::error::{CliError, Result};
use pruneclust_core::cluster::RandomConvEncoder;
use pruneclust_core::models::{self, Arch, Family, NetworkSpec, SurgeryEvent};
use pruneclust_core::tensor::Tensor;
use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;

const MAGIC: [u8; 4] = *b"PKCK";
const VERSION: u32 = 1;

/// Hard cap on any single length field, to refuse absurd files before
/// attempting the allocation they describe.
const MAX_FIELD: u32 = 1 << 28;

// ---------------------------------------------------------------------------
// Container encode/decode
// ---------------------------------------------------------------------------

/// Serializes named tensors into the PKCK byte layout.
pub fn encode_tensors(tensors: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len())
        .map_err(|_| CliError::Runtime(format!("{} tensors exceed the PKCK count field", tensors.len())))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in tensors {
        let name_len = u32::try_from(name.len())
            .map_err(|_| CliError::Runtime(format!("tensor name of {} bytes is too long", name.len())))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u32::try_from(tensor.shape().len()).expect("rank fits u32");
        out.extend_from_slice(&rank.to_le_bytes());
        for &dim in tensor.shape() {
            let dim = u32::try_from(dim)
                .map_err(|_| CliError::Runtime(format!("dimension {dim} of {name} exceeds the PKCK dim field")))?;
            out.extend_from_slice(&dim.to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Decoder<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> CliError {
        CliError::Data(format!("{}: {msg}", self.path.display()))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!(
                "truncated at offset {}: wanted {n} bytes of {what}, file has {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn bounded(&mut self, what: &str) -> Result<usize> {
        let offset = self.pos;
        let v = self.u32_le(what)?;
        if v > MAX_FIELD {
            return Err(self.err(format!("{what} {v} at offset {offset} is implausibly large")));
        }
        Ok(v as usize)
    }
}

/// Parses a PKCK byte buffer into owned named tensors.
pub fn decode_tensors(path: &Path, bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut d = Decoder { path, bytes, pos: 0 };
    let magic = d.take(4, "magic")?;
    if magic != MAGIC {
        return Err(d.err(format!("bad magic {magic:02x?} at offset 0, want {MAGIC:02x?}")));
    }
    let version = d.u32_le("version")?;
    if version != VERSION {
        return Err(d.err(format!("unsupported format version {version}, this build reads {VERSION}")));
    }
    let count = d.bounded("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let name_len = d.bounded("name length")?;
        let name_offset = d.pos;
        let name = std::str::from_utf8(d.take(name_len, "tensor name")?)
            .map_err(|e| d.err(format!("tensor {i} name at offset {name_offset} is not UTF-8: {e}")))?
            .to_string();
        let rank = d.bounded("rank")?;
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let dim = d.bounded("dimension")?;
            numel = numel.saturating_mul(dim);
            shape.push(dim);
        }
        if numel > MAX_FIELD as usize {
            return Err(d.err(format!("tensor {name} claims {numel} values, refusing")));
        }
        let raw = d.take(numel * 4, "tensor data")?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let tensor =
            Tensor::new(shape, data).map_err(|e| d.err(format!("tensor {name} has an invalid shape: {e}")))?;
        tensors.push((name, tensor));
    }
    if d.pos != bytes.len() {
        return Err(d.err(format!("{} trailing bytes after offset {}", bytes.len() - d.pos, d.pos)));
    }
    Ok(tensors)
}

/// Writes named tensors to a PKCK file.
pub fn write_tensors(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    let bytes = encode_tensors(tensors)?;
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(&bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Reads named tensors from a PKCK file.
pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    decode_tensors(path, &bytes)
}

// ---------------------------------------------------------------------------
// Network checkpoints
// ---------------------------------------------------------------------------

const ARCH_TENSOR: &str = "__arch__";

fn encode_arch(net: &NetworkSpec) -> Tensor {
    let arch = &net.arch;
    let mut v: Vec<f32> = Vec::new();
    v.push(match arch.family {
        Family::MiniVgg => 0.0,
        Family::MiniResnet => 1.0,
    });
    v.push(arch.in_channels as f32);
    v.push(arch.num_classes as f32);
    v.push(arch.blocks_per_stage as f32);
    v.push(arch.widths.len() as f32);
    v.extend(arch.widths.iter().map(|&w| w as f32));
    v.push(net.surgery_log.len() as f32);
    for event in &net.surgery_log {
        v.push(event.layer_id as f32);
        v.push(event.removed.len() as f32);
        v.extend(event.removed.iter().map(|&r| r as f32));
    }
    let len = v.len();
    Tensor::new(vec![len], v).expect("descriptor shape")
}

struct ArchReader<'a> {
    path: &'a Path,
    values: &'a [f32],
    pos: usize,
}

impl ArchReader<'_> {
    fn next(&mut self, what: &str) -> Result<usize> {
        let Some(&v) = self.values.get(self.pos) else {
            return Err(CliError::Data(format!(
                "{}: {ARCH_TENSOR} descriptor ends early, wanted {what} at entry {}",
                self.path.display(),
                self.pos
            )));
        };
        self.pos += 1;
        if !(v.fract() == 0.0 && (0.0..=16_777_216.0).contains(&v)) {
            return Err(CliError::Data(format!(
                "{}: {ARCH_TENSOR} entry {} ({what}) is {v}, not a small non-negative integer",
                self.path.display(),
                self.pos - 1
            )));
        }
        Ok(v as usize)
    }
}

fn decode_arch(path: &Path, descriptor: &Tensor) -> Result<(Arch, Vec<SurgeryEvent>)> {
    let mut r = ArchReader { path, values: descriptor.data(), pos: 0 };
    let family = match r.next("family")? {
        0 => Family::MiniVgg,
        1 => Family::MiniResnet,
        other => {
            return Err(CliError::Data(format!("{}: unknown architecture family {other}", path.display())));
        }
    };
    let in_channels = r.next("in_channels")?;
    let num_classes = r.next("num_classes")?;
    let blocks_per_stage = r.next("blocks_per_stage")?;
    let n_widths = r.next("width count")?;
    let widths = (0..n_widths).map(|_| r.next("width")).collect::<Result<Vec<_>>>()?;
    let n_events = r.next("surgery event count")?;
    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        let layer_id = r.next("surgery layer id")?;
        let n_removed = r.next("removed count")?;
        let removed = (0..n_removed).map(|_| r.next("removed index")).collect::<Result<Vec<_>>>()?;
        events.push(SurgeryEvent { layer_id, removed });
    }
    if r.pos != r.values.len() {
        return Err(CliError::Data(format!(
            "{}: {ARCH_TENSOR} descriptor has {} trailing entries",
            path.display(),
            r.values.len() - r.pos
        )));
    }
    Ok((Arch { family, widths, blocks_per_stage, num_classes, in_channels }, events))
}

/// Saves a network — architecture, surgery history, and all tensors
/// (parameters and batch-norm running statistics).
pub fn save_network(path: &Path, net: &NetworkSpec) -> Result<()> {
    let descriptor = encode_arch(net);
    let mut tensors: Vec<(String, &Tensor)> = vec![(ARCH_TENSOR.to_string(), &descriptor)];
    tensors.extend(net.named_tensors());
    write_tensors(path, &tensors)
}

/// Loads a network saved by [`save_network`]: rebuilds the architecture,
/// replays its surgery history so every tensor has the pruned shape, then
/// overwrites all tensors from the file.
pub fn load_network(path: &Path) -> Result<NetworkSpec> {
    let mut tensors = read_tensors(path)?;
    if tensors.first().map(|(n, _)| n.as_str()) != Some(ARCH_TENSOR) {
        return Err(CliError::Data(format!(
            "{}: not a network checkpoint (first tensor must be {ARCH_TENSOR})",
            path.display()
        )));
    }
    let (_, descriptor) = tensors.remove(0);
    let (arch, events) = decode_arch(path, &descriptor)?;

    // The rebuild seed is irrelevant: every tensor is overwritten below.
    let mut net =
        models::build_from_arch(&arch, 0).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for event in &events {
        let remove: BTreeSet<usize> = event.removed.iter().copied().collect();
        if remove.len() != event.removed.len() {
            return Err(CliError::Data(format!(
                "{}: surgery event on layer {} lists duplicate filters",
                path.display(),
                event.layer_id
            )));
        }
        net = models::remove_filters(&net, event.layer_id, &remove)
            .map_err(|e| CliError::Data(format!("{}: replaying surgery history: {e}", path.display())))?;
    }

    let mut stored: std::collections::BTreeMap<String, Tensor> = tensors.into_iter().collect();
    for (name, slot) in net.named_tensors_mut() {
        let Some(tensor) = stored.remove(&name) else {
            return Err(CliError::Data(format!("{}: missing tensor {name}", path.display())));
        };
        if tensor.shape() != slot.shape() {
            return Err(CliError::Data(format!(
                "{}: tensor {name} has shape {:?}, architecture wants {:?}",
                path.display(),
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor;
    }
    if let Some(name) = stored.keys().next() {
        return Err(CliError::Data(format!(
            "{}: tensor {name} does not belong to the declared architecture",
            path.display()
        )));
    }
    Ok(net)
}

// ---------------------------------------------------------------------------
// Encoder checkpoints
// ---------------------------------------------------------------------------

/// Saves a signature encoder's tensors.
pub fn save_encoder(path: &Path, encoder: &RandomConvEncoder) -> Result<()> {
    write_tensors(path, &encoder.named_tensors())
}

/// Loads a signature encoder saved by [`save_encoder`].
pub fn load_encoder(path: &Path) -> Result<RandomConvEncoder> {
    let tensors: std::collections::BTreeMap<String, Tensor> = read_tensors(path)?.into_iter().collect();
    let get = |name: &str| {
        tensors
            .get(name)
            .cloned()
            .ok_or_else(|| CliError::Data(format!("{}: missing encoder tensor {name}", path.display())))
    };
    let (w1, b1, w2, b2) = (get("enc_w1")?, get("enc_b1")?, get("enc_w2")?, get("enc_b2")?);
    RandomConvEncoder::from_tensors(w1, b1, w2, b2)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
