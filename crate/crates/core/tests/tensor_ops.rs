//! Forward-value checks for the engine primitives: hand-computable cases,
//! independent f64 reference comparisons, the conv output-shape formula swept
//! exhaustively over small geometries, and the determinism contract.

mod common;

use common::*;
use pruneclust_core::{onecycle_lr, OneCycleSchedule, Tape, Tensor};
use rand::Rng;

#[test]
fn conv2d_identity_kernel_passes_input_through() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
    let k = tape.leaf(&Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(), false);
    let b = tape.leaf(&Tensor::new(vec![1], vec![0.0]).unwrap(), false);
    let y = tape.conv2d(x, k, b, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
    assert_eq!(tape.data(y), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn conv2d_hand_computed_dot_product() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
    let k = tape.leaf(&Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), false);
    let b = tape.leaf(&Tensor::new(vec![1], vec![0.0]).unwrap(), false);
    let y = tape.conv2d(x, k, b, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
    assert_eq!(tape.data(y), &[5.0]);
}

#[test]
fn conv2d_matches_naive_loop_reference() {
    for seed in 0..10u64 {
        let mut r = rng(40 + seed);
        let (n, cin, h, w, cout, kh, kw) = (2, 3, 8, 8, 4, 3, 3);
        let (stride, pad) = if seed % 2 == 0 { (1, 1) } else { (2, 0) };
        let x = rand_vec(&mut r, n * cin * h * w, -1.0, 1.0);
        let k = rand_vec(&mut r, cout * cin * kh * kw, -0.5, 0.5);
        let b = rand_vec(&mut r, cout, -0.5, 0.5);

        let mut tape = Tape::new();
        let xn = tape.leaf(&Tensor::new(vec![n, cin, h, w], x.clone()).unwrap(), false);
        let kn = tape.leaf(&Tensor::new(vec![cout, cin, kh, kw], k.clone()).unwrap(), false);
        let bn = tape.leaf(&Tensor::new(vec![cout], b.clone()).unwrap(), false);
        let y = tape.conv2d(xn, kn, bn, stride, pad).unwrap();

        let expect = ref_conv2d(&to_f64(&x), &to_f64(&k), &to_f64(&b), n, cin, h, w, cout, kh, kw, stride, pad);
        assert_all_close(tape.data(y), &expect, 1e-5, "conv2d vs naive reference");
    }
}

#[test]
fn conv2d_shape_formula_holds_exhaustively_small() {
    // Every valid (H, W, kh, kw, stride, pad) with dims <= 8.
    for h in 1..=8usize {
        for w in 1..=8usize {
            for kh in 1..=h.min(8) {
                for kw in 1..=w.min(8) {
                    for stride in 1..=3usize {
                        for pad in 0..=2usize {
                            let mut tape = Tape::new();
                            let x = tape.leaf(&Tensor::zeros(vec![1, 1, h, w]), false);
                            let k = tape.leaf(&Tensor::zeros(vec![1, 1, kh, kw]), false);
                            let b = tape.leaf(&Tensor::zeros(vec![1]), false);
                            let y = tape.conv2d(x, k, b, stride, pad).unwrap();
                            let oh = (h + 2 * pad - kh) / stride + 1;
                            let ow = (w + 2 * pad - kw) / stride + 1;
                            assert_eq!(tape.shape(y), &[1, 1, oh, ow], "h={h} w={w} kh={kh} kw={kw} s={stride} p={pad}");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn conv2d_rejects_oversized_kernel_naming_axes() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(vec![1, 1, 2, 2]), false);
    let k = tape.leaf(&Tensor::zeros(vec![1, 1, 5, 5]), false);
    let b = tape.leaf(&Tensor::zeros(vec![1]), false);
    let err = tape.conv2d(x, k, b, 1, 0).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("height") && msg.contains('5'), "unhelpful error: {msg}");
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(vec![1, 3, 4, 4]), false);
    let k = tape.leaf(&Tensor::zeros(vec![2, 4, 3, 3]), false);
    let b = tape.leaf(&Tensor::zeros(vec![2]), false);
    let msg = tape.conv2d(x, k, b, 1, 1).unwrap_err().to_string();
    assert!(msg.contains('3') && msg.contains('4'), "should name both channel axes: {msg}");
}

#[test]
fn batchnorm_standardized_input_is_preserved() {
    // Input already has zero mean and unit variance per channel.
    let (n, c, h, w) = (1, 2, 1, 4);
    let vals = vec![-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![n, c, h, w], vals.clone()).unwrap(), false);
    let g = tape.leaf(&Tensor::full(vec![c], 1.0), false);
    let b = tape.leaf(&Tensor::zeros(vec![c]), false);
    let mut rm = vec![0.0; c];
    let mut rv = vec![1.0; c];
    let y = tape.batchnorm2d_train(x, g, b, &mut rm, &mut rv, 1e-5, 0.1).unwrap();
    for (o, v) in tape.data(y).iter().zip(&vals) {
        assert!((o - v).abs() < 1e-3, "{o} vs {v}");
    }
}

#[test]
fn batchnorm_constant_input_collapses_to_beta() {
    let (n, c, h, w) = (1, 1, 2, 2);
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::full(vec![n, c, h, w], 3.25), false);
    let g = tape.leaf(&Tensor::full(vec![c], 1.0), false);
    let b = tape.leaf(&Tensor::full(vec![c], 5.0), false);
    let mut rm = vec![0.0; c];
    let mut rv = vec![1.0; c];
    let y = tape.batchnorm2d_train(x, g, b, &mut rm, &mut rv, 1e-5, 0.1).unwrap();
    for o in tape.data(y) {
        assert!((o - 5.0).abs() < 1e-4, "{o}");
    }
}

#[test]
fn batchnorm_output_moments_match_two_pass_reference() {
    let mut r = rng(77);
    let (n, c, h, w) = (4, 6, 8, 8);
    let x = rand_vec(&mut r, n * c * h * w, -3.0, 3.0);
    let mut tape = Tape::new();
    let xn = tape.leaf(&Tensor::new(vec![n, c, h, w], x).unwrap(), false);
    let g = tape.leaf(&Tensor::full(vec![c], 1.0), false);
    let b = tape.leaf(&Tensor::zeros(vec![c]), false);
    let mut rm = vec![0.0; c];
    let mut rv = vec![1.0; c];
    let y = tape.batchnorm2d_train(xn, g, b, &mut rm, &mut rv, 1e-5, 0.1).unwrap();

    // Independent two-pass moments of the OUTPUT, per channel.
    let out = tape.data(y);
    let hw = h * w;
    let m = (n * hw) as f64;
    for ch in 0..c {
        let mut mean = 0.0f64;
        for i in 0..n {
            for j in 0..hw {
                mean += f64::from(out[(i * c + ch) * hw + j]);
            }
        }
        mean /= m;
        let mut var = 0.0f64;
        for i in 0..n {
            for j in 0..hw {
                let d = f64::from(out[(i * c + ch) * hw + j]) - mean;
                var += d * d;
            }
        }
        var /= m;
        assert!(mean.abs() <= 1e-5, "channel {ch} mean {mean}");
        assert!((var - 1.0).abs() <= 1e-3, "channel {ch} var {var}");
    }
}

#[test]
fn batchnorm_train_mode_rejects_degenerate_batch() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(vec![1, 3, 1, 1]), false);
    let g = tape.leaf(&Tensor::full(vec![3], 1.0), false);
    let b = tape.leaf(&Tensor::zeros(vec![3]), false);
    let mut rm = vec![0.0; 3];
    let mut rv = vec![1.0; 3];
    assert!(tape
        .batchnorm2d_train(x, g, b, &mut rm, &mut rv, 1e-5, 0.1)
        .is_err());
}

#[test]
fn relu_pool_linear_hand_cases() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap(), false);
    let y = tape.relu(x);
    assert_eq!(tape.data(y), &[0.0, 0.0, 2.0]);

    let p = tape.leaf(&Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), false);
    let pooled = tape.maxpool2d(p, 2, 2, 2).unwrap();
    assert_eq!(tape.shape(pooled), &[1, 1, 1, 1]);
    assert_eq!(tape.data(pooled), &[4.0]);

    // Identity weight, zero bias.
    let lx = tape.leaf(&Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), false);
    let lw = tape.leaf(
        &Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
        false,
    );
    let lb = tape.leaf(&Tensor::zeros(vec![3]), false);
    let ly = tape.linear(lx, lw, lb).unwrap();
    assert_eq!(tape.data(ly), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn maxpool_rejects_oversized_window() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::zeros(vec![1, 1, 2, 2]), false);
    assert!(tape.maxpool2d(x, 3, 3, 1).is_err());
}

#[test]
fn softmax_ce_uniform_and_saturated_cases() {
    let mut tape = Tape::new();
    let u = tape.leaf(&Tensor::zeros(vec![1, 10]), false);
    let lu = tape.softmax_cross_entropy(u, &[7]).unwrap();
    assert!((f64::from(tape.data(lu)[0]) - 10.0f64.ln()).abs() < 1e-6);

    let mut sat = vec![0.0f32; 10];
    sat[4] = 30.0;
    let s = tape.leaf(&Tensor::new(vec![1, 10], sat).unwrap(), false);
    let ls = tape.softmax_cross_entropy(s, &[4]).unwrap();
    assert!(tape.data(ls)[0] < 1e-9, "saturated loss {}", tape.data(ls)[0]);
}

#[test]
fn softmax_ce_matches_f64_reference_on_random_logits() {
    for seed in 0..10u64 {
        let mut r = rng(60 + seed);
        let (n, c) = (5, 8);
        let logits = rand_vec(&mut r, n * c, -4.0, 4.0);
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..c) as u8).collect();
        let mut tape = Tape::new();
        let ln = tape.leaf(&Tensor::new(vec![n, c], logits.clone()).unwrap(), false);
        let loss = tape.softmax_cross_entropy(ln, &labels).unwrap();
        let expect = ref_softmax_ce(&to_f64(&logits), &labels, n, c);
        assert_close(tape.data(loss)[0], expect, 1e-5, "softmax_ce vs f64 reference");
    }
}

#[test]
fn weighted_sum_gradient_is_exactly_the_weights() {
    // d/dx sum(w_i x_i) = w_i with no rounding; the backward path must
    // reproduce the weights bit for bit.
    let x = vec![0.5f32, -1.25, 2.0, 0.125];
    let w = vec![3.0f32, -0.75, 0.1, 7.5];
    let mut tape = Tape::new();
    let xn = tape.leaf(&Tensor::new(vec![4], x).unwrap(), true);
    let loss = tape.weighted_sum(xn, &w).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(xn).unwrap();
    for (gi, wi) in g.iter().zip(&w) {
        assert_eq!(gi.to_bits(), wi.to_bits());
    }
}

#[test]
fn training_trajectory_is_bitwise_deterministic() {
    // Two identical mini training loops over the same tape recipe must agree
    // bit for bit after several SGD steps.
    let run = || -> Vec<u32> {
        let mut r = rng(123);
        let mut w = Tensor::new(vec![4, 3], rand_vec(&mut r, 12, -0.5, 0.5)).unwrap();
        let mut b = Tensor::zeros(vec![4]);
        let mut vw = vec![0.0f32; 12];
        let mut vb = vec![0.0f32; 4];
        for step in 0..20 {
            let x = Tensor::new(vec![2, 3], rand_vec(&mut r, 6, -1.0, 1.0)).unwrap();
            let labels = [step as u8 % 4, (step as u8 + 1) % 4];
            let mut tape = Tape::new();
            let xn = tape.leaf(&x, false);
            let wn = tape.leaf(&w, true);
            let bn = tape.leaf(&b, true);
            let y = tape.linear(xn, wn, bn).unwrap();
            let loss = tape.softmax_cross_entropy(y, &labels).unwrap();
            tape.backward(loss).unwrap();
            let gw = tape.grad(wn).unwrap().to_vec();
            let gb = tape.grad(bn).unwrap().to_vec();
            pruneclust_core::sgd_momentum_step(w.data_mut(), &gw, &mut vw, 0.05, 0.9);
            pruneclust_core::sgd_momentum_step(b.data_mut(), &gb, &mut vb, 0.05, 0.9);
        }
        w.data().iter().map(|v| v.to_bits()).collect()
    };
    assert_eq!(run(), run());
}

#[test]
fn onecycle_endpoint_values() {
    let s = OneCycleSchedule::with_defaults(1000, 1e-3).unwrap();
    // Endpoints are exact at the schedule's precision (lr_max/div, lr_max,
    // lr_max/final_div) and land on the expected decimal values.
    assert_eq!(onecycle_lr(&s, 0).unwrap(), 1e-3f32 / 25.0);
    assert_eq!(onecycle_lr(&s, 250).unwrap(), 1e-3);
    assert_eq!(onecycle_lr(&s, 1000).unwrap(), 1e-3f32 / 1e4);
    assert!((f64::from(onecycle_lr(&s, 0).unwrap()) - 4e-5).abs() < 1e-10);
    assert!((f64::from(onecycle_lr(&s, 1000).unwrap()) - 1e-7).abs() < 1e-12);
}
