//! Signature-image synthesis by activation maximization: gradient ascent on
//! the input image to maximize one filter's mean pre-relu activation.
//!
//! Each ascent step computes the input gradient of the objective on a fresh
//! tape, moves the image along the L2-normalized gradient, and clamps pixels
//! to `[-1, 1]`. The returned image is the best iterate observed (including
//! the initial noise), so the final activation never falls below the initial
//! one even when clamping makes late steps oscillate.

use crate::error::{Error, Result};
use crate::models::{FilterRef, LayerId, NetworkSpec};
use crate::rng::stream;
use crate::tensor::{Tape, Tensor};
use rand::Rng;

/// The synthesized input that most excites one filter.
#[derive(Clone, Debug)]
pub struct SignatureImage {
    pub filter: FilterRef,
    /// `[1, in_channels, H, W]`, all pixels within `[-1, 1]`.
    pub image: Tensor,
    pub final_activation: f32,
    pub initial_activation: f32,
    pub seed: u64,
    /// True when the objective had zero input gradient for the first five
    /// consecutive steps (a dead filter); the image is then still noise.
    pub degenerate: bool,
}

/// Mean of the filter's pre-relu (post-bn, eval-mode) spatial activation map
/// for the given image.
pub fn mean_activation(net: &NetworkSpec, filter: FilterRef, image: &Tensor) -> Result<f32> {
    let mut tape = Tape::new();
    let (objective, _) = net.record_filter_objective(&mut tape, image, filter)?;
    Ok(tape.data(objective)[0])
}

/// Runs `steps` ascent steps from seeded uniform noise in `[-0.1, 0.1]`.
/// Deterministic for a fixed `(net, filter, steps, step_size, seed)`.
pub fn activation_maximize(
    net: &NetworkSpec,
    filter: FilterRef,
    steps: usize,
    step_size: f32,
    seed: u64,
) -> Result<SignatureImage> {
    if steps == 0 {
        return Err(Error::Config("activation maximization needs steps >= 1".into()));
    }
    if !(step_size > 0.0) {
        return Err(Error::Config(format!("step_size must be positive, got {step_size}")));
    }
    let (h, w) = signature_resolution(net);
    let c = net.arch.in_channels;
    let mut noise_rng = stream(seed, "am_noise", 0);
    let data: Vec<f32> = (0..c * h * w).map(|_| noise_rng.random_range(-0.1..0.1)).collect();
    let mut image = Tensor::new(vec![1, c, h, w], data)?;
    image.set_requires_grad(true);

    let mut best_activation = f32::NEG_INFINITY;
    let mut best_image: Option<Vec<f32>> = None;
    let mut initial_activation = 0.0f32;
    let mut zero_streak_from_start = 0usize;
    let mut degenerate = false;

    for step in 0..steps {
        let mut tape = Tape::new();
        let (objective, input) = net.record_filter_objective(&mut tape, &image, filter)?;
        let activation = tape.data(objective)[0];
        if step == 0 {
            initial_activation = activation;
        }
        if activation > best_activation {
            best_activation = activation;
            best_image = Some(tape.data(input).to_vec());
        }
        tape.backward(objective)?;
        let grad = tape
            .grad(input)
            .ok_or_else(|| Error::Reference("activation objective did not reach the input".into()))?;
        let norm = grad.iter().map(|g| f64::from(*g) * f64::from(*g)).sum::<f64>().sqrt();
        if norm == 0.0 {
            if step == zero_streak_from_start {
                // The image has not moved yet: a dead filter. Flag it after
                // five consecutive zero-gradient steps.
                zero_streak_from_start += 1;
                if zero_streak_from_start >= 5 {
                    degenerate = true;
                    break;
                }
                continue;
            }
            // Zero gradient after the image has moved: ascent has stalled
            // and no further step can change the image.
            break;
        }
        let scale = f64::from(step_size) / norm;
        for (p, g) in image.data_mut().iter_mut().zip(grad) {
            *p = (*p + (f64::from(*g) * scale) as f32).clamp(-1.0, 1.0);
        }
    }

    // Score the image produced by the last update too.
    let final_direct = mean_activation(net, filter, &image)?;
    if final_direct > best_activation {
        best_activation = final_direct;
        best_image = Some(image.data().to_vec());
    }

    let mut out = Tensor::new(vec![1, c, h, w], best_image.expect("at least one iterate evaluated"))?;
    out.set_requires_grad(false);
    Ok(SignatureImage {
        filter,
        image: out,
        final_activation: best_activation,
        initial_activation,
        seed,
        degenerate,
    })
}

/// Signatures for every current filter of the layer, in filter-index order,
/// with per-filter seed `seed + filter_index`.
pub fn signatures_for_layer(
    net: &NetworkSpec,
    layer_id: LayerId,
    steps: usize,
    step_size: f32,
    seed: u64,
) -> Result<Vec<SignatureImage>> {
    let n_f = net.filter_count(layer_id)?;
    (0..n_f)
        .map(|filter_index| {
            activation_maximize(
                net,
                FilterRef { layer_id, filter_index },
                steps,
                step_size,
                seed + filter_index as u64,
            )
        })
        .collect()
}

/// Signature images use the network's training input resolution; with no
/// resolution recorded in the architecture, 32x32 (the desk-scale input).
fn signature_resolution(_net: &NetworkSpec) -> (usize, usize) {
    (32, 32)
}
