mod common;

use common::{loss_and_grads, normal_tensor, toy, worst_gradient_error};
use mlspvqa::nn::{Adam, Head, HeadConfig, HeadKind};
use mlspvqa::seed::derive_rng;
use ndarray::{Array1, Axis};
use proptest::prelude::*;

#[test]
fn analytic_gradients_match_central_differences() {
    for kind in HeadKind::ALL {
        let worst = worst_gradient_error(kind);
        eprintln!("{kind}: worst relative gradient error {worst:.2e}");
        assert!(worst < 1e-3, "{kind}: {worst}");
    }
}

fn ff_count(d: usize, widths: &[usize]) -> usize {
    let mut n = d;
    let mut total = 0;
    for &w in widths {
        total += n * w + w + 2 * w;
        n = w;
    }
    total + n + 1
}

fn lstm_count(d: usize, hidden: &[usize]) -> usize {
    let mut n = d;
    let mut total = 0;
    for &h in hidden {
        total += 4 * (n * h + h * h + h);
        n = h;
    }
    total
}

#[test]
fn parameter_counts_match_closed_forms() {
    let d = 16_928;
    let ff = Head::build(HeadConfig::new(HeadKind::Ff, d), &mut derive_rng(0, "count", 0)).unwrap();
    let expected = 16_928 * 2048 + 2048 + 2048 * 1024 + 1024 + 1024 * 256 + 256 + 256 + 1 + 2 * (2048 + 1024 + 256);
    assert_eq!(ff.param_count(), expected);
    assert_eq!(ff_count(d, &[2048, 1024, 256]), expected);

    let small = 40;
    let rn = Head::build(HeadConfig::new(HeadKind::Rn, small), &mut derive_rng(0, "count", 1)).unwrap();
    assert_eq!(rn.param_count(), lstm_count(small, &[512, 256, 128]) + 129);

    let hyb = Head::build(HeadConfig::new(HeadKind::Hyb, small), &mut derive_rng(0, "count", 2)).unwrap();
    let frame = small * 2048 + 2048 + 2048 * 512 + 512 + 512 * 128 + 128;
    let merge = 256 * 32 + 32;
    assert_eq!(hyb.param_count(), lstm_count(small, &[512, 256, 128]) + frame + merge + 33);
}

#[test]
fn rn_accepts_full_length_sequences() {
    let mut c = HeadConfig::new(HeadKind::Rn, 24).with_sequence_length(180);
    c.rnn_hidden = vec![8, 4];
    let head = Head::build(c, &mut derive_rng(0, "rn", 0)).unwrap();
    let y = head.predict_batch(normal_tensor((2, 180, 24), 3).view());
    assert_eq!(y.len(), 2);
}

fn trained_rn() -> Head {
    let mut head = Head::build(toy(HeadKind::Rn), &mut derive_rng(2, "rn-train", 0)).unwrap();
    // targets depend on frame order, so training builds temporal sensitivity
    let x = normal_tensor((16, 4, 8), 21);
    let target: Array1<f64> = x.axis_iter(Axis(0)).map(|v| v[[3, 0]] - v[[0, 0]]).collect();
    let mut adam = Adam::new(1e-2);
    for _ in 0..50 {
        loss_and_grads(&mut head, &x, &target);
        adam.step(&mut head);
    }
    head
}

#[test]
fn rn_is_sensitive_to_frame_order() {
    let head = trained_rn();
    let x = normal_tensor((1, 4, 8), 33);
    let mut reversed = x.clone();
    reversed.invert_axis(Axis(1));
    let a = head.predict_batch(x.view())[0];
    let b = head.predict_batch(reversed.view())[0];
    assert!((a - b).abs() > 1e-4, "{a} vs {b}");
}

fn trained_ff() -> Head {
    let mut head = Head::build(toy(HeadKind::Ff), &mut derive_rng(4, "ff-train", 0)).unwrap();
    let x = normal_tensor((16, 1, 8), 41);
    let target: Array1<f64> = x.axis_iter(Axis(0)).map(|v| v.sum() / 8.0).collect();
    let mut adam = Adam::new(1e-2);
    for _ in 0..20 {
        loss_and_grads(&mut head, &x, &target);
        adam.step(&mut head);
    }
    head
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ff_ignores_frame_order_and_duplication(seed in 0u64..1000, frames in 1usize..9, shift in 1usize..8) {
        let head = trained_ff();
        let x = normal_tensor((1, frames, 8), seed);
        let base = head.predict_batch(x.view())[0];

        let order: Vec<usize> = (0..frames).map(|i| (i + shift) % frames).rev().collect();
        let permuted = x.select(Axis(1), &order);
        prop_assert!((head.predict_batch(permuted.view())[0] - base).abs() < 1e-5);

        let doubled = ndarray::concatenate(Axis(1), &[x.view(), x.view()]).unwrap();
        prop_assert!((head.predict_batch(doubled.view())[0] - base).abs() < 1e-5);
    }

    #[test]
    fn inference_is_deterministic(seed in 0u64..1000, kind in prop::sample::select(HeadKind::ALL.to_vec())) {
        let head = Head::build(toy(kind), &mut derive_rng(seed, "det", 0)).unwrap();
        let x = normal_tensor((2, 4, 8), seed + 1);
        prop_assert_eq!(head.predict_batch(x.view()), head.predict_batch(x.view()));
    }
}

#[test]
fn zero_weights_give_the_output_bias() {
    let mut head = Head::build(toy(HeadKind::Ff), &mut derive_rng(0, "zero", 0)).unwrap();
    head.visit_params(&mut |_, v, _| v.fill(0.0));
    let y = head.predict_batch(normal_tensor((2, 3, 8), 1).view());
    assert_eq!(y.to_vec(), vec![0.0, 0.0]);
}
