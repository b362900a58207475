//! Signature-image dumps as binary PGM (P5).
//!
//! Pixels map from `[-1, 1]` to `[0, 255]` via `round((p + 1) * 127.5)`;
//! multi-channel signatures are averaged over channels first (PGM is
//! grayscale). Files are named `layer<id>_filter<idx>.pgm`, with a
//! `_removed` suffix marking filters a prune run removed.

use crate::error::{CliError, Result};
use pruneclust_core::interpret::SignatureImage;
use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;

fn to_byte(p: f32) -> u8 {
    ((p + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Encodes one signature as a P5 PGM byte buffer.
pub fn encode_pgm(signature: &SignatureImage) -> Vec<u8> {
    let shape = signature.image.shape(); // [1, c, h, w]
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let data = signature.image.data();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let mean =
                (0..c).map(|ch| data[(ch * h + y) * w + x]).sum::<f32>() / c as f32;
            out.push(to_byte(mean));
        }
    }
    out
}

/// File name for one dumped signature.
pub fn signature_file_name(signature: &SignatureImage, removed: bool) -> String {
    let f = signature.filter;
    let suffix = if removed { "_removed" } else { "" };
    format!("layer{}_filter{}{suffix}.pgm", f.layer_id, f.filter_index)
}

/// Writes one PGM per signature into `dir` (created if missing). Filters
/// whose index appears in `removed` get the `_removed` name suffix.
pub fn emit_signature_images(
    signatures: &[SignatureImage],
    dir: &Path,
    removed: &BTreeSet<usize>,
) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    for signature in signatures {
        let path = dir.join(signature_file_name(signature, removed.contains(&signature.filter.filter_index)));
        let bytes = encode_pgm(signature);
        let mut file = std::fs::File::create(&path)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
        file.write_all(&bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}
