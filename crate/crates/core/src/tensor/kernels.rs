//! Raw numeric kernels behind the tape operations.
//!
//! Layout conventions: activations are `[N, C, H, W]` row-major, conv kernels
//! `[Cout, Cin, kh, kw]`, linear weights `[out, in]`. Convolution is lowered
//! to im2col + GEMM; reductions that feed statistics (batch-norm moments,
//! spatial means, losses) accumulate in f64 so tolerances stay tight at f32
//! storage precision.
//!
//! Parallel loops split work by batch item or by channel so each output
//! element is written by exactly one task; cross-batch reductions (e.g. the
//! kernel gradient) run in fixed batch order, keeping results bitwise equal
//! to the sequential path.

use crate::exec;

/// Geometry of one convolution application.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn ckk(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    pub fn ohw(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output spatial size `(H + 2*pad - kh) / stride + 1` (integer division).
pub(crate) fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if k == 0 || k > padded || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// C = alpha * A(m x k) * B(k x n) + beta * C, all row-major.
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, alpha,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// C = alpha * A(m x k) * B^T + beta * C, where B is stored row-major (n x k).
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, alpha,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// C = alpha * A^T * B(k x n) + beta * C, where A is stored row-major (k x m).
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, alpha,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Unfold one batch item `[Cin, H, W]` into columns `[Cin*kh*kw, OH*OW]`.
/// Out-of-bounds taps (padding) contribute zero.
pub(crate) fn im2col(x: &[f32], d: &ConvDims, cols: &mut [f32]) {
    let ohw = d.ohw();
    debug_assert_eq!(x.len(), d.cin * d.h * d.w);
    debug_assert_eq!(cols.len(), d.ckk() * ohw);
    for c in 0..d.cin {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = ((c * d.kh + ki) * d.kw + kj) * ohw;
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    let out_row = &mut cols[row + oy * d.ow..row + (oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let iy = iy as usize;
                    for (ox, slot) in out_row.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        *slot = if ix >= 0 && ix < d.w as isize {
                            plane[iy * d.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Fold columns back onto one batch item's gradient, accumulating overlaps.
pub(crate) fn col2im_add(cols: &[f32], d: &ConvDims, dx: &mut [f32]) {
    let ohw = d.ohw();
    debug_assert_eq!(dx.len(), d.cin * d.h * d.w);
    debug_assert_eq!(cols.len(), d.ckk() * ohw);
    for c in 0..d.cin {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = ((c * d.kh + ki) * d.kw + kj) * ohw;
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            plane[iy * d.w + ix as usize] += cols[row + oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward. If `cols_cache` is provided (len N*CKK*OHW), the
/// unfolded columns of every batch item are stored there for the backward
/// parameter pass.
pub(crate) fn conv2d_fwd(
    x: &[f32],
    kernel: &[f32],
    bias: &[f32],
    d: &ConvDims,
    out: &mut [f32],
    mut cols_cache: Option<&mut [f32]>,
) {
    let (ckk, ohw) = (d.ckk(), d.ohw());
    let in_stride = d.cin * d.h * d.w;
    let out_stride = d.cout * ohw;

    // Work per batch item: unfold, multiply, add bias. With a cache the
    // unfold writes go to disjoint per-item slices, so this parallelizes
    // cleanly; without one, each task uses a private scratch buffer.
    if let Some(cache) = cols_cache.as_deref_mut() {
        exec::for_each_chunk_mut(cache, ckk * ohw, |i, cols| {
            im2col(&x[i * in_stride..(i + 1) * in_stride], d, cols);
        });
        exec::for_each_chunk_mut(out, out_stride, |i, out_n| {
            gemm_nn(d.cout, ckk, ohw, 1.0, kernel, &cache[i * ckk * ohw..(i + 1) * ckk * ohw], 0.0, out_n);
            add_bias_rows(out_n, bias, ohw);
        });
    } else {
        exec::for_each_chunk_mut(out, out_stride, |i, out_n| {
            let mut cols = vec![0.0f32; ckk * ohw];
            im2col(&x[i * in_stride..(i + 1) * in_stride], d, &mut cols);
            gemm_nn(d.cout, ckk, ohw, 1.0, kernel, &cols, 0.0, out_n);
            add_bias_rows(out_n, bias, ohw);
        });
    }
}

fn add_bias_rows(out_n: &mut [f32], bias: &[f32], row_len: usize) {
    for (co, row) in out_n.chunks_mut(row_len).enumerate() {
        let b = bias[co];
        for v in row.iter_mut() {
            *v += b;
        }
    }
}

/// Input gradient of convolution: dX[n] = col2im(K^T * dOut[n]).
pub(crate) fn conv2d_bwd_input(dout: &[f32], kernel: &[f32], d: &ConvDims, dx: &mut [f32]) {
    let (ckk, ohw) = (d.ckk(), d.ohw());
    let in_stride = d.cin * d.h * d.w;
    let out_stride = d.cout * ohw;
    exec::for_each_chunk_mut(dx, in_stride, |i, dx_n| {
        let mut dcols = vec![0.0f32; ckk * ohw];
        gemm_tn(ckk, d.cout, ohw, 1.0, kernel, &dout[i * out_stride..(i + 1) * out_stride], 0.0, &mut dcols);
        col2im_add(&dcols, d, dx_n);
    });
}

/// Parameter gradients of convolution, accumulated over the batch in fixed
/// order: dK += sum_n dOut[n] * cols[n]^T, dB += row sums of dOut.
pub(crate) fn conv2d_bwd_params(
    dout: &[f32],
    cols_cache: &[f32],
    d: &ConvDims,
    dkernel: &mut [f32],
    dbias: &mut [f32],
) {
    let (ckk, ohw) = (d.ckk(), d.ohw());
    let out_stride = d.cout * ohw;
    for i in 0..d.n {
        let dout_n = &dout[i * out_stride..(i + 1) * out_stride];
        gemm_nt(d.cout, ohw, ckk, 1.0, dout_n, &cols_cache[i * ckk * ohw..(i + 1) * ckk * ohw], 1.0, dkernel);
        for co in 0..d.cout {
            let mut s = 0.0f64;
            for v in &dout_n[co * ohw..(co + 1) * ohw] {
                s += f64::from(*v);
            }
            dbias[co] += s as f32;
        }
    }
}

/// Per-channel batch moments over (N, H, W) in train mode. Returns
/// (mean, inverse stddev, unbiased variance) per channel; f64 accumulation.
pub(crate) fn bn_batch_stats(
    x: &[f32],
    n: usize,
    c: usize,
    hw: usize,
    eps: f32,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let m = n * hw;
    let stats = exec::map_indexed(c, |ch| {
        let mut sum = 0.0f64;
        for i in 0..n {
            let plane = &x[(i * c + ch) * hw..(i * c + ch + 1) * hw];
            for v in plane {
                sum += f64::from(*v);
            }
        }
        let mean = sum / m as f64;
        let mut sq = 0.0f64;
        for i in 0..n {
            let plane = &x[(i * c + ch) * hw..(i * c + ch + 1) * hw];
            for v in plane {
                let dlt = f64::from(*v) - mean;
                sq += dlt * dlt;
            }
        }
        let var = sq / m as f64;
        let invstd = 1.0 / (var + f64::from(eps)).sqrt();
        let var_unbiased = if m > 1 { sq / (m - 1) as f64 } else { var };
        (mean as f32, invstd as f32, var_unbiased as f32)
    });
    let mut mean = Vec::with_capacity(c);
    let mut invstd = Vec::with_capacity(c);
    let mut var_u = Vec::with_capacity(c);
    for (a, b, v) in stats {
        mean.push(a);
        invstd.push(b);
        var_u.push(v);
    }
    (mean, invstd, var_u)
}

/// y = gamma * (x - mean) * invstd + beta, channelwise.
pub(crate) fn bn_apply(
    x: &[f32],
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    invstd: &[f32],
    c: usize,
    hw: usize,
    out: &mut [f32],
) {
    exec::for_each_chunk_mut(out, c * hw, |i, block| {
        let x_n = &x[i * c * hw..(i + 1) * c * hw];
        for ch in 0..c {
            let (g, b, mu, is) = (gamma[ch], beta[ch], mean[ch], invstd[ch]);
            let scale = g * is;
            let shift = b - mu * scale;
            for (o, v) in block[ch * hw..(ch + 1) * hw].iter_mut().zip(&x_n[ch * hw..(ch + 1) * hw]) {
                *o = v * scale + shift;
            }
        }
    });
}

/// Train-mode batch-norm backward (mean/var depend on x):
/// dx = (gamma*invstd/m) * (m*g - sum(g) - xhat * sum(g*xhat)).
pub(crate) fn bn_bwd_train(
    dout: &[f32],
    x: &[f32],
    gamma: &[f32],
    mean: &[f32],
    invstd: &[f32],
    n: usize,
    c: usize,
    hw: usize,
    dx: &mut [f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
) {
    let m = (n * hw) as f64;
    let sums = exec::map_indexed(c, |ch| {
        let (mut sg, mut sgx) = (0.0f64, 0.0f64);
        for i in 0..n {
            let base = (i * c + ch) * hw;
            for j in 0..hw {
                let g = f64::from(dout[base + j]);
                let xh = f64::from((x[base + j] - mean[ch]) * invstd[ch]);
                sg += g;
                sgx += g * xh;
            }
        }
        (sg, sgx)
    });
    for ch in 0..c {
        dbeta[ch] += sums[ch].0 as f32;
        dgamma[ch] += sums[ch].1 as f32;
    }
    exec::for_each_chunk_mut(dx, c * hw, |i, block| {
        for ch in 0..c {
            let (sg, sgx) = sums[ch];
            let k = f64::from(gamma[ch]) * f64::from(invstd[ch]) / m;
            let base = (i * c + ch) * hw;
            for j in 0..hw {
                let g = f64::from(dout[base + j]);
                let xh = f64::from((x[base + j] - mean[ch]) * invstd[ch]);
                block[ch * hw + j] += (k * (m * g - sg - xh * sgx)) as f32;
            }
        }
    });
}

/// Eval-mode batch-norm backward (stats are constants): dx = g*gamma*invstd.
pub(crate) fn bn_bwd_eval(
    dout: &[f32],
    x: &[f32],
    gamma: &[f32],
    mean: &[f32],
    invstd: &[f32],
    n: usize,
    c: usize,
    hw: usize,
    dx: &mut [f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
) {
    for ch in 0..c {
        let (mut sg, mut sgx) = (0.0f64, 0.0f64);
        for i in 0..n {
            let base = (i * c + ch) * hw;
            for j in 0..hw {
                let g = f64::from(dout[base + j]);
                sg += g;
                sgx += g * f64::from((x[base + j] - mean[ch]) * invstd[ch]);
            }
        }
        dbeta[ch] += sg as f32;
        dgamma[ch] += sgx as f32;
    }
    exec::for_each_chunk_mut(dx, c * hw, |i, block| {
        for ch in 0..c {
            let scale = gamma[ch] * invstd[ch];
            let base = (i * c + ch) * hw;
            for j in 0..hw {
                block[ch * hw + j] += dout[base + j] * scale;
            }
        }
    });
}

/// Max-pool forward; `argmax` records, per output element, the flat input
/// index of the chosen maximum (first occurrence wins on ties).
pub(crate) fn maxpool_fwd(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    out: &mut [f32],
    argmax: &mut [u32],
) {
    let plane_stride = c * oh * ow;
    exec::for_each_chunk2_mut(out, argmax, plane_stride, |i, out_n, arg_n| {
        for ch in 0..c {
            let in_base = (i * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let (mut best, mut best_idx) = (f32::NEG_INFINITY, 0u32);
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let iy = oy * stride + ki;
                            let ix = ox * stride + kj;
                            let idx = in_base + iy * w + ix;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx as u32;
                            }
                        }
                    }
                    let o = (ch * oh + oy) * ow + ox;
                    out_n[o] = best;
                    arg_n[o] = best_idx;
                }
            }
        }
    });
}

/// Max-pool backward: route each output gradient to its argmax position.
pub(crate) fn maxpool_bwd(dout: &[f32], argmax: &[u32], dx: &mut [f32]) {
    for (g, idx) in dout.iter().zip(argmax) {
        dx[*idx as usize] += *g;
    }
}

/// Global average pool [N,C,H,W] -> [N,C].
pub(crate) fn gap_fwd(x: &[f32], c: usize, hw: usize, out: &mut [f32]) {
    exec::for_each_chunk_mut(out, c, |i, out_n| {
        for ch in 0..c {
            let mut s = 0.0f64;
            for v in &x[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                s += f64::from(*v);
            }
            out_n[ch] = (s / hw as f64) as f32;
        }
    });
}

pub(crate) fn gap_bwd(dout: &[f32], c: usize, hw: usize, dx: &mut [f32]) {
    let inv = 1.0 / hw as f32;
    exec::for_each_chunk_mut(dx, c * hw, |i, dx_n| {
        for ch in 0..c {
            let g = dout[i * c + ch] * inv;
            for v in &mut dx_n[ch * hw..(ch + 1) * hw] {
                *v += g;
            }
        }
    });
}

/// y[N,out] = x[N,in] * W^T + b, with W stored [out,in].
pub(crate) fn linear_fwd(x: &[f32], weight: &[f32], bias: &[f32], n: usize, inf: usize, outf: usize, y: &mut [f32]) {
    gemm_nt(n, inf, outf, 1.0, x, weight, 0.0, y);
    for row in y.chunks_mut(outf) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

pub(crate) fn linear_bwd(
    dout: &[f32],
    x: &[f32],
    weight: &[f32],
    n: usize,
    inf: usize,
    outf: usize,
    dx: Option<&mut [f32]>,
    dweight: Option<&mut [f32]>,
    dbias: Option<&mut [f32]>,
) {
    if let Some(dx) = dx {
        gemm_nn(n, outf, inf, 1.0, dout, weight, 1.0, dx);
    }
    if let Some(dw) = dweight {
        gemm_tn(outf, n, inf, 1.0, dout, x, 1.0, dw);
    }
    if let Some(db) = dbias {
        for row in dout.chunks(outf) {
            for (b, g) in db.iter_mut().zip(row) {
                *b += *g;
            }
        }
    }
}

/// Mean over the batch of -log softmax(logits)[label], max-stabilized.
/// Returns the loss and the softmax probabilities (kept for backward).
pub(crate) fn softmax_ce_fwd(logits: &[f32], labels: &[u8], n: usize, c: usize) -> (f32, Vec<f32>) {
    let mut probs = vec![0.0f32; n * c];
    let mut loss = 0.0f64;
    for i in 0..n {
        let row = &logits[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f64;
        for v in row {
            denom += f64::from(v - max).exp();
        }
        let log_denom = denom.ln();
        let p_row = &mut probs[i * c..(i + 1) * c];
        for (p, v) in p_row.iter_mut().zip(row) {
            *p = (f64::from(v - max).exp() / denom) as f32;
        }
        loss -= f64::from(row[labels[i] as usize] - max) - log_denom;
    }
    ((loss / n as f64) as f32, probs)
}

/// dLogits = upstream * (probs - onehot(labels)) / N.
pub(crate) fn softmax_ce_bwd(probs: &[f32], labels: &[u8], n: usize, c: usize, upstream: f32, dlogits: &mut [f32]) {
    let scale = upstream / n as f32;
    for i in 0..n {
        let target = labels[i] as usize;
        for j in 0..c {
            let onehot = if j == target { 1.0 } else { 0.0 };
            dlogits[i * c + j] += scale * (probs[i * c + j] - onehot);
        }
    }
}
