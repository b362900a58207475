//! Training, fine-tuning, and evaluation loops over in-memory datasets.
//!
//! All shuffling and augmentation randomness derives from the caller's seed,
//! so identical inputs give bitwise-identical trajectories.

use crate::error::{Error, Result};
use crate::models::NetworkSpec;
use crate::rng::stream;
use crate::tensor::{onecycle_lr, sgd_momentum_step, OneCycleSchedule, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

/// An in-memory labeled image set, `[N, C, H, W]` contiguous, pixels already
/// scaled to `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<u8>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn new(images: Vec<f32>, labels: Vec<u8>, channels: usize, height: usize, width: usize) -> Result<Self> {
        let per = channels * height * width;
        if per == 0 || images.len() != labels.len() * per {
            return Err(Error::Config(format!(
                "dataset geometry mismatch: {} pixel values, {} labels, {per} pixels per image",
                images.len(),
                labels.len()
            )));
        }
        Ok(Dataset { images, labels, channels, height, width })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = self.channels * self.height * self.width;
        &self.images[i * per..(i + 1) * per]
    }

    /// Assembles the batch for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<u8>) {
        let per = self.channels * self.height * self.width;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data)
            .expect("batch geometry follows dataset geometry");
        (t, labels)
    }
}

/// Per-sample training augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augment {
    None,
    /// Horizontal flip with probability 1/2, then a random crop from a
    /// 4-pixel zero pad (the standard small-image recipe).
    FlipCrop4,
}

/// Loss statistics of one epoch.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f32,
    pub steps: usize,
}

fn augment_sample(src: &[f32], c: usize, h: usize, w: usize, rng: &mut impl Rng, out: &mut Vec<f32>) {
    let flip = rng.random::<bool>();
    let dy = rng.random_range(0..=8usize) as isize - 4;
    let dx = rng.random_range(0..=8usize) as isize - 4;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sy = y as isize + dy;
                let sx = x as isize + dx;
                let v = if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                    0.0
                } else {
                    let sx = if flip { w as isize - 1 - sx } else { sx };
                    src[(ch * h + sy as usize) * w + sx as usize]
                };
                out.push(v);
            }
        }
    }
}

fn batch_with_augment(data: &Dataset, indices: &[usize], augment: Augment, rng: &mut impl Rng) -> (Tensor, Vec<u8>) {
    match augment {
        Augment::None => data.batch(indices),
        Augment::FlipCrop4 => {
            let (c, h, w) = (data.channels, data.height, data.width);
            let mut pixels = Vec::with_capacity(indices.len() * c * h * w);
            let mut labels = Vec::with_capacity(indices.len());
            for &i in indices {
                augment_sample(data.image(i), c, h, w, rng, &mut pixels);
                labels.push(data.label(i));
            }
            let t = Tensor::new(vec![indices.len(), c, h, w], pixels).expect("augmented batch geometry");
            (t, labels)
        }
    }
}

/// The shared epoch loop: seeded shuffle, forward/backward per batch, SGD
/// with momentum 0.9 at the learning rate `lr_at(global_step)`.
fn run_epochs(
    net: &mut NetworkSpec,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    augment: Augment,
    lr_at: impl Fn(usize) -> Result<f32>,
) -> Result<Vec<EpochStats>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let sizes: Vec<usize> = net.trainable_mut().iter().map(|t| t.numel()).collect();
    let mut velocities: Vec<Vec<f32>> = sizes.iter().map(|&n| vec![0.0f32; n]).collect();
    let mut stats = Vec::with_capacity(epochs);
    let mut step = 0usize;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream(seed, "shuffle", epoch as u64));
        let mut aug_rng = stream(seed, "augment", epoch as u64);
        let mut loss_sum = 0.0f64;
        let mut steps_in_epoch = 0usize;
        for chunk in order.chunks(batch_size) {
            let (batch, labels) = batch_with_augment(data, chunk, augment, &mut aug_rng);
            let mut tape = Tape::new();
            let rec = net.record_train_forward(&mut tape, &batch)?;
            let loss = tape.softmax_cross_entropy(rec.output, &labels)?;
            let loss_value = tape.data(loss)[0];
            if !loss_value.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            tape.backward(loss)?;
            let lr = lr_at(step)?;
            let grads: Vec<Vec<f32>> = rec
                .params
                .iter()
                .map(|p| tape.grad(*p).expect("trainable parameters always receive gradients").to_vec())
                .collect();
            for ((param, grad), velocity) in net.trainable_mut().into_iter().zip(&grads).zip(&mut velocities) {
                sgd_momentum_step(param.data_mut(), grad, velocity, lr, 0.9);
            }
            loss_sum += f64::from(loss_value);
            step += 1;
            steps_in_epoch += 1;
        }
        stats.push(EpochStats { epoch, mean_loss: (loss_sum / steps_in_epoch as f64) as f32, steps: steps_in_epoch });
    }
    Ok(stats)
}

/// Step-(1) training: 1cycle learning-rate schedule over all epochs.
pub fn train_onecycle(
    net: &mut NetworkSpec,
    data: &Dataset,
    epochs: usize,
    lr_max: f32,
    batch_size: usize,
    seed: u64,
    augment: Augment,
) -> Result<Vec<EpochStats>> {
    if epochs == 0 {
        return Ok(Vec::new());
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let steps_per_epoch = data.len().div_ceil(batch_size);
    let schedule = OneCycleSchedule::with_defaults(epochs * steps_per_epoch, lr_max)?;
    run_epochs(net, data, epochs, batch_size, seed, augment, |step| onecycle_lr(&schedule, step))
}

/// Post-prune fine-tuning: a short run at a constant learning rate.
pub fn finetune_const(
    net: &mut NetworkSpec,
    data: &Dataset,
    epochs: usize,
    lr: f32,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    if epochs == 0 {
        return Ok(Vec::new());
    }
    if !(lr > 0.0) {
        return Err(Error::Config(format!("fine-tune lr must be positive, got {lr}")));
    }
    run_epochs(net, data, epochs, batch_size, seed, Augment::None, |_| Ok(lr))
}

/// Top-1 accuracy over the whole set, batched eval-mode forwards.
pub fn evaluate(net: &NetworkSpec, data: &Dataset, batch_size: usize) -> Result<f32> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size) {
        let (batch, labels) = data.batch(chunk);
        let mut tape = Tape::new();
        let rec = net.record_eval_forward(&mut tape, &batch, false, None)?;
        let logits = tape.data(rec.output);
        let classes = tape.shape(rec.output)[1];
        for (row, label) in labels.iter().enumerate() {
            let begin = row * classes;
            let mut best = 0usize;
            for c in 1..classes {
                if logits[begin + c] > logits[begin + best] {
                    best = c;
                }
            }
            if best == usize::from(*label) {
                correct += 1;
            }
        }
    }
    Ok(correct as f32 / data.len() as f32)
}
