#![allow(dead_code)]

use std::collections::HashMap;

use mlspvqa::data::{DatasetManifest, RatingScale, VideoRecord};
use mlspvqa::nn::{Head, HeadConfig, HeadKind};
use mlspvqa::seed::derive_rng;
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Features = HashMap<String, Array2<f32>>;

/// `n` videos with `frames x dim` uniform features and MOS given by `mos`
/// applied to the first frame's row.
pub fn synthetic(
    name: &str,
    n: usize,
    dim: usize,
    frames: usize,
    seed: u64,
    mos: impl Fn(&[f32], &mut dyn rand::RngCore) -> f64,
) -> (DatasetManifest, Features) {
    let mut rng = derive_rng(seed, "synthetic", 0);
    let mut features = HashMap::new();
    let mut records = Vec::new();
    for i in 0..n {
        let id = format!("{name}-{i:04}");
        let row: Vec<f32> = (0..dim).map(|_| rng.random::<f32>()).collect();
        let rows = Array2::from_shape_fn((frames, dim), |(_, d)| row[d]);
        let m = mos(&row, &mut rng).clamp(1.0, 5.0);
        records.push(VideoRecord::from_mos(id.clone(), m));
        features.insert(id, rows);
    }
    (DatasetManifest::new(name, records, RatingScale::ACR).unwrap(), features)
}

pub fn ids(m: &DatasetManifest) -> Vec<String> {
    m.records().iter().map(|r| r.video_id.clone()).collect()
}

/// Toy head sizes for gradient checks: `D = 8`, `T = 4`, widths of 4.
pub fn toy(kind: HeadKind) -> HeadConfig {
    let mut c = HeadConfig::new(kind, 8).with_sequence_length(4);
    c.ff_widths = vec![4, 4, 4];
    c.rnn_hidden = vec![4, 4, 4];
    c.hyb_frame_widths = vec![4, 4, 4];
    c
}

pub fn normal_tensor(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let mut rng = derive_rng(seed, "tensor", 0);
    Array3::from_shape_fn(shape, |_| StandardNormal.sample(&mut rng))
}

fn mse(head: &mut Head, x: &Array3<f64>, target: &Array1<f64>) -> f64 {
    // same dropout masks on every evaluation
    let y = head.forward_train(x.view(), &mut derive_rng(9, "dropout", 0));
    (&y - target).mapv(|d| d * d).mean().unwrap()
}

/// MSE loss and backprop gradients, one vector per parameter tensor.
pub fn loss_and_grads(head: &mut Head, x: &Array3<f64>, target: &Array1<f64>) -> (f64, Vec<Vec<f64>>) {
    head.zero_grad();
    let y = head.forward_train(x.view(), &mut derive_rng(9, "dropout", 0));
    let n = y.len() as f64;
    let loss = (&y - target).mapv(|d| d * d).mean().unwrap();
    head.backward(&((&y - target) * (2.0 / n)));
    let mut grads = Vec::new();
    head.visit_params(&mut |_, _, g| grads.push(g.to_vec()));
    (loss, grads)
}

fn nudge(head: &mut Head, tensor: usize, index: usize, delta: f64) {
    let mut i = 0;
    head.visit_params(&mut |_, v, _| {
        if i == tensor {
            v[index] += delta;
        }
        i += 1;
    });
}

/// Largest relative error between backprop and central differences over
/// every parameter of a toy head. Magnitudes below 1e-6 count as 1e-6.
pub fn worst_gradient_error(kind: HeadKind) -> f64 {
    let mut head = Head::build(toy(kind), &mut derive_rng(5, "grad", 0)).unwrap();
    let x = normal_tensor((3, 4, 8), 11);
    let target = Array1::from(vec![0.2, 0.7, 0.4]);
    let (_, grads) = loss_and_grads(&mut head, &x, &target);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (t, g) in grads.iter().enumerate() {
        for (k, &analytic) in g.iter().enumerate() {
            nudge(&mut head, t, k, h);
            let up = mse(&mut head, &x, &target);
            nudge(&mut head, t, k, -2.0 * h);
            let down = mse(&mut head, &x, &target);
            nudge(&mut head, t, k, h);
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}
