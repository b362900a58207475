//! Shared test oracles: independent f64 reference implementations of every
//! layer primitive, written as direct loops with no shared code or lowering
//! tricks, plus small helpers for random data and tolerance checks.
//!
//! These exist so the optimized f32 engine is always checked against a
//! second, independently derived computation.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn assert_close(actual: f32, expected: f64, tol: f64, what: &str) {
    let diff = (f64::from(actual) - expected).abs();
    assert!(
        diff <= tol,
        "{what}: actual {actual} vs expected {expected} (|diff| {diff} > {tol})"
    );
}

pub fn assert_all_close(actual: &[f32], expected: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: length mismatch");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        let diff = (f64::from(*a) - e).abs();
        assert!(
            diff <= tol,
            "{what}[{i}]: actual {a} vs expected {e} (|diff| {diff} > {tol})"
        );
    }
}

/// Relative error with an absolute floor, for gradient checks.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

// ---------------------------------------------------------------------------
// f64 reference forward primitives (naive loops, no im2col, no GEMM).
// ---------------------------------------------------------------------------

/// Direct nested-loop convolution, f64.
#[allow(clippy::too_many_arguments)]
pub fn ref_conv2d(
    x: &[f64],
    kernel: &[f64],
    bias: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for i in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    let xv = x[((i * cin + ci) * h + iy as usize) * w + ix as usize];
                                    let kv = kernel[((co * cin + ci) * kh + ky) * kw + kx];
                                    acc += xv * kv;
                                }
                            }
                        }
                    }
                    out[((i * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Two-pass train-mode batch norm, f64. Returns output only.
#[allow(clippy::too_many_arguments)]
pub fn ref_batchnorm_train(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    eps: f64,
) -> Vec<f64> {
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let mut mean = 0.0;
        for i in 0..n {
            for j in 0..hw {
                mean += x[(i * c + ch) * hw + j];
            }
        }
        mean /= m;
        let mut var = 0.0;
        for i in 0..n {
            for j in 0..hw {
                let d = x[(i * c + ch) * hw + j] - mean;
                var += d * d;
            }
        }
        var /= m;
        let invstd = 1.0 / (var + eps).sqrt();
        for i in 0..n {
            for j in 0..hw {
                let idx = (i * c + ch) * hw + j;
                out[idx] = gamma[ch] * (x[idx] - mean) * invstd + beta[ch];
            }
        }
    }
    out
}

/// Eval-mode batch norm with fixed running stats, f64.
#[allow(clippy::too_many_arguments)]
pub fn ref_batchnorm_eval(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    rmean: &[f64],
    rvar: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    eps: f64,
) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let invstd = 1.0 / (rvar[ch] + eps).sqrt();
        for i in 0..n {
            for j in 0..hw {
                let idx = (i * c + ch) * hw + j;
                out[idx] = gamma[ch] * (x[idx] - rmean[ch]) * invstd + beta[ch];
            }
        }
    }
    out
}

pub fn ref_relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn ref_maxpool(
    x: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f64> {
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = vec![0.0; n * c * oh * ow];
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let v = x[((i * c + ch) * h + oy * stride + ky) * w + ox * stride + kx];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out[((i * c + ch) * oh + oy) * ow + ox] = best;
                }
            }
        }
    }
    out
}

pub fn ref_gap(x: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        for ch in 0..c {
            let mut s = 0.0;
            for j in 0..hw {
                s += x[(i * c + ch) * hw + j];
            }
            out[i * c + ch] = s / hw as f64;
        }
    }
    out
}

pub fn ref_linear(x: &[f64], weight: &[f64], bias: &[f64], n: usize, inf: usize, outf: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * outf];
    for i in 0..n {
        for o in 0..outf {
            let mut acc = bias[o];
            for j in 0..inf {
                acc += x[i * inf + j] * weight[o * inf + j];
            }
            out[i * outf + o] = acc;
        }
    }
    out
}

pub fn ref_softmax_ce(logits: &[f64], labels: &[u8], n: usize, c: usize) -> f64 {
    let mut loss = 0.0;
    for i in 0..n {
        let row = &logits[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss -= (row[labels[i] as usize] - max) - denom.ln();
    }
    loss / n as f64
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| f64::from(*x)).collect()
}

/// Bit patterns of an f32 slice, for exact-equality assertions.
pub fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Synthetic linearly-separable blobs: class k's pixels are noise around a
/// class-specific mean, so a tiny net learns them in a couple of epochs.
pub fn blob_dataset(n: usize, classes: usize, c: usize, h: usize, w: usize, seed: u64) -> pruneclust_core::train::Dataset {
    let mut r = rng(seed);
    let mut images = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % classes) as u8;
        let center = -0.5 + f32::from(class) / (classes.max(2) - 1) as f32;
        for _ in 0..c * h * w {
            images.push((center + r.random_range(-0.2..0.2)).clamp(-1.0, 1.0));
        }
        labels.push(class);
    }
    pruneclust_core::train::Dataset::new(images, labels, c, h, w).expect("blob geometry")
}
