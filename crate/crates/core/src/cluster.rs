//! Signature-image encoding and K-means grouping of filters.
//!
//! Signature images are encoded into fixed-length feature vectors by a
//! pluggable [`Encoder`]; the default is a frozen random-weight two-conv
//! network, which is deterministic per seed and serviceable as a generic
//! image descriptor. Vectors are grouped by K-means with k-means++ seeding,
//! Lloyd iterations whose SSE is non-increasing, empty-cluster repair by
//! seizing the globally farthest point, and best-of-R restarts by SSE.

use crate::error::{Error, Result};
use crate::exec;
use crate::interpret::{signatures_for_layer, SignatureImage};
use crate::models::{FilterRef, LayerId, NetworkSpec};
use crate::rng::{derive_seed, stream};
use crate::tensor::{Tape, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Feature-vector length of the default encoder.
pub const FEATURE_DIM: usize = 64;

/// Encoded signature image of one filter.
#[derive(Clone, Debug)]
pub struct FeatureVector {
    pub filter: FilterRef,
    pub values: Vec<f32>,
}

/// A grouping of points into `k` non-empty clusters.
#[derive(Clone, Debug)]
pub struct ClusterAssignment {
    pub k: usize,
    /// Point index -> cluster id in `[0, k)`.
    pub assignment: Vec<usize>,
    /// `k` centroids, each of the feature dimension.
    pub centroids: Vec<Vec<f32>>,
    /// Final sum of squared distances of points to their own centroid.
    pub sse: f64,
    pub iterations_run: usize,
    /// SSE after the assignment phase of each iteration; non-increasing.
    pub sse_trace: Vec<f64>,
}

/// Maps images of one shared shape to fixed-length feature vectors.
pub trait Encoder {
    fn dim(&self) -> usize;
    fn encode_one(&self, image: &Tensor) -> Result<Vec<f32>>;
}

/// Default encoder: two frozen random-weight 3x3 conv layers with relu, a
/// 2x2 max-pool between them, and global average pooling down to
/// [`FEATURE_DIM`] values. Weights derive from the encoder seed only.
#[derive(Clone, Debug)]
pub struct RandomConvEncoder {
    w1: Tensor, // [32, in, 3, 3]
    b1: Tensor,
    w2: Tensor, // [FEATURE_DIM, 32, 3, 3]
    b2: Tensor,
}

impl RandomConvEncoder {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        let mut rng = stream(seed, "encoder", 0);
        let mut kaiming = |cout: usize, cin: usize| {
            let normal = Normal::new(0.0f64, (2.0 / (cin * 9) as f64).sqrt()).expect("positive std");
            let data: Vec<f32> = (0..cout * cin * 9).map(|_| normal.sample(&mut rng) as f32).collect();
            Tensor::new(vec![cout, cin, 3, 3], data).expect("encoder kernel shape")
        };
        let w1 = kaiming(32, in_channels);
        let w2 = kaiming(FEATURE_DIM, 32);
        RandomConvEncoder { w1, b1: Tensor::zeros(vec![32]), w2, b2: Tensor::zeros(vec![FEATURE_DIM]) }
    }

    /// Rebuilds an encoder from saved tensors (e.g. a checkpoint), so a
    /// grouping can be reproduced independently of the seed derivation.
    pub fn from_tensors(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        if w1.shape().len() != 4 || w1.shape()[0] != 32 || w1.shape()[2..] != [3, 3] {
            return Err(Error::Encoder(format!("first encoder kernel must be [32, in, 3, 3], got {:?}", w1.shape())));
        }
        if w2.shape() != [FEATURE_DIM, 32, 3, 3] {
            return Err(Error::Encoder(format!(
                "second encoder kernel must be [{FEATURE_DIM}, 32, 3, 3], got {:?}",
                w2.shape()
            )));
        }
        if b1.shape() != [32] || b2.shape() != [FEATURE_DIM] {
            return Err(Error::Encoder(format!(
                "encoder biases must be [32] and [{FEATURE_DIM}], got {:?} and {:?}",
                b1.shape(),
                b2.shape()
            )));
        }
        Ok(RandomConvEncoder { w1, b1, w2, b2 })
    }

    /// The encoder's tensors under stable names, for persistence.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("enc_w1".into(), &self.w1),
            ("enc_b1".into(), &self.b1),
            ("enc_w2".into(), &self.w2),
            ("enc_b2".into(), &self.b2),
        ]
    }
}

impl Encoder for RandomConvEncoder {
    fn dim(&self) -> usize {
        FEATURE_DIM
    }

    fn encode_one(&self, image: &Tensor) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let x = tape.leaf(image, false);
        let w1 = tape.leaf(&self.w1, false);
        let b1 = tape.leaf(&self.b1, false);
        let h = tape.conv2d(x, w1, b1, 1, 1)?;
        let h = tape.relu(h);
        let h = tape.maxpool2d(h, 2, 2, 2)?;
        let w2 = tape.leaf(&self.w2, false);
        let b2 = tape.leaf(&self.b2, false);
        let h = tape.conv2d(h, w2, b2, 1, 1)?;
        let h = tape.relu(h);
        let h = tape.global_avg_pool(h)?;
        Ok(tape.data(h).to_vec())
    }
}

/// Encodes signature images with the given encoder. All images must share
/// one shape; every vector comes back with the encoder's dimension and
/// finite values.
pub fn encode_with(images: &[SignatureImage], encoder: &dyn Encoder) -> Result<Vec<FeatureVector>> {
    if let Some(first) = images.first() {
        for img in images {
            if img.image.shape() != first.image.shape() {
                return Err(Error::Encoder(format!(
                    "image shapes differ: {:?} vs {:?}",
                    img.image.shape(),
                    first.image.shape()
                )));
            }
        }
    }
    images
        .iter()
        .map(|img| {
            let values = encoder.encode_one(&img.image)?;
            if values.len() != encoder.dim() {
                return Err(Error::Encoder(format!(
                    "encoder produced {} values, expected {}",
                    values.len(),
                    encoder.dim()
                )));
            }
            if !values.iter().all(|v| v.is_finite()) {
                return Err(Error::Encoder("encoder produced non-finite values".into()));
            }
            Ok(FeatureVector { filter: img.filter, values })
        })
        .collect()
}

/// Encodes with the default encoder built from `encoder_seed` for the
/// images' channel count.
pub fn encode(images: &[SignatureImage], encoder_seed: u64) -> Result<Vec<FeatureVector>> {
    let in_channels = images.first().map_or(1, |img| img.image.shape()[1]);
    encode_with(images, &RandomConvEncoder::new(in_channels, encoder_seed))
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| {
        let d = f64::from(*x) - f64::from(*y);
        d * d
    }).sum()
}

fn distinct_count(vectors: &[Vec<f32>]) -> usize {
    let mut seen: Vec<&Vec<f32>> = Vec::new();
    for v in vectors {
        if !seen.iter().any(|s| s.iter().zip(v.iter()).all(|(a, b)| a.to_bits() == b.to_bits()) && s.len() == v.len()) {
            seen.push(v);
        }
    }
    seen.len()
}

/// k-means++ seeding: first centroid uniform, each next drawn with
/// probability proportional to its squared distance to the nearest chosen
/// centroid.
pub fn kmeanspp_init(vectors: &[Vec<f32>], k: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f32>>> {
    if k == 0 {
        return Err(Error::Clustering("k must be >= 1".into()));
    }
    let distinct = distinct_count(vectors);
    if k > distinct {
        return Err(Error::Clustering(format!(
            "k = {k} exceeds the {distinct} distinct vectors among {} points",
            vectors.len()
        )));
    }
    let n = vectors.len();
    let mut centroids: Vec<Vec<f32>> = Vec::with_capacity(k);
    centroids.push(vectors[rng.random_range(0..n)].clone());
    let mut nearest: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        // total > 0 is guaranteed: fewer centroids than distinct points
        // leaves at least one point at a positive distance.
        let mut u = rng.random::<f64>() * total;
        let mut chosen = None;
        for (i, w) in nearest.iter().enumerate() {
            if *w <= 0.0 {
                continue; // duplicates of chosen centroids are never drawn
            }
            if u < *w {
                chosen = Some(i);
                break;
            }
            u -= *w;
        }
        // Fall back to the farthest point if u exhausted the list through
        // floating-point underflow.
        let idx = chosen.unwrap_or_else(|| {
            nearest
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite distances"))
                .map(|(i, _)| i)
                .expect("non-empty vectors")
        });
        centroids.push(vectors[idx].clone());
        for (slot, v) in nearest.iter_mut().zip(vectors) {
            *slot = slot.min(sq_dist(v, centroids.last().expect("just pushed")));
        }
    }
    Ok(centroids)
}

/// Lloyd's algorithm with k-means++ seeding. Assignment ties go to the lower
/// cluster id; empty clusters are repaired by seizing the point farthest
/// from its own centroid (from a cluster with at least two members), which
/// strictly lowers SSE; iteration stops when no centroid moves more than
/// `tol` (Euclidean) or after `max_iters`.
pub fn lloyd_kmeans(vectors: &[Vec<f32>], k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<ClusterAssignment> {
    let mut rng = stream(seed, "kmeans", 0);
    let mut centroids = kmeanspp_init(vectors, k, &mut rng)?;
    let n = vectors.len();
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut assignment = vec![0usize; n];
    let mut sse_trace = Vec::new();
    let mut iterations_run = 0usize;

    for _ in 0..max_iters {
        iterations_run += 1;
        // Assignment phase (parallelizable; ties to the lower cluster id).
        let cents = &centroids;
        let assigned: Vec<usize> = exec::map_indexed(n, |i| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, cent) in cents.iter().enumerate() {
                let d = sq_dist(&vectors[i], cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        });
        assignment = assigned;

        // Empty-cluster repair: plant the empty centroid on the globally
        // farthest point of any cluster that can spare one.
        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a] += 1;
        }
        for empty in 0..k {
            while sizes[empty] == 0 {
                let farthest = (0..n)
                    .filter(|&i| sizes[assignment[i]] >= 2)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&vectors[a], &centroids[assignment[a]]);
                        let db = sq_dist(&vectors[b], &centroids[assignment[b]]);
                        da.partial_cmp(&db).expect("finite distances")
                    })
                    .ok_or_else(|| Error::Clustering("cannot repair empty cluster: no cluster has two members".into()))?;
                centroids[empty] = vectors[farthest].clone();
                sizes[assignment[farthest]] -= 1;
                assignment[farthest] = empty;
                sizes[empty] += 1;
            }
        }

        let sse: f64 = (0..n).map(|i| sq_dist(&vectors[i], &centroids[assignment[i]])).sum();
        sse_trace.push(sse);

        // Update phase: centroid = mean of members, accumulated in f64.
        let mut sums = vec![vec![0.0f64; dim]; k];
        for (v, &a) in vectors.iter().zip(&assignment) {
            for (s, x) in sums[a].iter_mut().zip(v) {
                *s += f64::from(*x);
            }
        }
        let mut movement: f64 = 0.0;
        for (c, sum) in sums.iter().enumerate() {
            let m = sizes[c] as f64;
            let new: Vec<f32> = sum.iter().map(|s| (s / m) as f32).collect();
            movement = movement.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if movement < tol {
            break;
        }
    }

    let sse = (0..n).map(|i| sq_dist(&vectors[i], &centroids[assignment[i]])).sum();
    Ok(ClusterAssignment { k, assignment, centroids, sse, iterations_run, sse_trace })
}

/// Best of `restarts` seeded Lloyd runs, by final SSE (first winner kept on
/// ties, so the result is deterministic).
pub fn kmeans_best_of(vectors: &[Vec<f32>], k: usize, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    if restarts == 0 {
        return Err(Error::Clustering("restarts must be >= 1".into()));
    }
    let mut best: Option<ClusterAssignment> = None;
    for r in 0..restarts {
        let run = lloyd_kmeans(vectors, k, derive_seed(seed, "kmeans_restart", r as u64), 100, 1e-6)?;
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Hyperparameters of the signature-synthesis stage of the pipeline.
#[derive(Clone, Copy, Debug)]
pub struct SignatureParams {
    pub steps: usize,
    pub step_size: f32,
}

impl Default for SignatureParams {
    fn default() -> Self {
        SignatureParams { steps: 256, step_size: 0.05 }
    }
}

/// The full grouping pipeline for one layer: synthesize signatures, encode
/// them, and cluster with best-of-`restarts` K-means.
pub fn cluster_filters(
    net: &NetworkSpec,
    layer_id: LayerId,
    k: usize,
    sig: SignatureParams,
    encoder: &dyn Encoder,
    seed: u64,
    restarts: usize,
) -> Result<ClusterAssignment> {
    let n_f = net.filter_count(layer_id)?;
    if k > n_f {
        return Err(Error::Clustering(format!("k = {k} exceeds the layer's {n_f} filters")));
    }
    let signatures = signatures_for_layer(net, layer_id, sig.steps, sig.step_size, derive_seed(seed, "am", layer_id as u64))?;
    let features = encode_with(&signatures, encoder)?;
    let vectors: Vec<Vec<f32>> = features.iter().map(|f| f.values.clone()).collect();
    kmeans_best_of(&vectors, k, derive_seed(seed, "cluster", layer_id as u64), restarts)
}
