use ndarray::{Array1, Array2, ArrayView2, Axis, Ix1, Ix2};
use rand::Rng;

use crate::nn::{Param, ParamVisitor, StateMutVisitor, StateVisitor};

/// Fully connected layer, `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param<Ix2>,
    pub b: Param<Ix1>,
    cache: Option<Array2<f64>>,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-limit..=limit));
        Dense {
            w: Param::new(w),
            b: Param::new(Array1::zeros(outputs)),
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.w.value.len() + self.b.value.len()
    }

    pub fn infer(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w.value) + &self.b.value
    }

    pub fn forward(&mut self, x: Array2<f64>) -> Array2<f64> {
        let y = self.infer(x.view());
        self.cache = Some(x);
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        self.backward_params(dy);
        dy.dot(&self.w.value.t())
    }

    /// Accumulates parameter gradients without forming the input gradient.
    pub fn backward_params(&mut self, dy: &Array2<f64>) {
        let x = self.cache.take().expect("Dense::backward without forward");
        self.w.grad += &x.t().dot(dy);
        self.b.grad += &dy.sum_axis(Axis(0));
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.w.visit(&format!("{prefix}.w"), f);
        self.b.visit(&format!("{prefix}.b"), f);
    }

    pub fn visit_state(&self, prefix: &str, f: &mut StateVisitor<'_>) {
        f(&format!("{prefix}.w"), self.w.value.shape(), self.w.value.as_slice().expect("standard layout"));
        f(&format!("{prefix}.b"), self.b.value.shape(), self.b.value.as_slice().expect("standard layout"));
    }

    pub fn visit_state_mut(&mut self, prefix: &str, f: &mut StateMutVisitor<'_>) {
        for (name, arr) in [("w", self.w.value.view_mut().into_dyn()), ("b", self.b.value.view_mut().into_dyn())] {
            let shape = arr.shape().to_vec();
            let mut arr = arr;
            f(&format!("{prefix}.{name}"), &shape, arr.as_slice_mut().expect("standard layout"));
        }
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    // keeps NaN, unlike f64::max
    x.mapv(|v| if v < 0.0 { 0.0 } else { v })
}

/// Passes `dy` where the ReLU input was positive.
pub fn relu_backward(dy: &Array2<f64>, activated: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(activated, |d, &a| {
        if a <= 0.0 {
            *d = 0.0
        }
    });
    dx
}

/// Batch normalisation over the rows of a `batch x features` matrix.
///
/// Training uses batch statistics and updates exponential running
/// averages; inference uses the running averages.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param<Ix1>,
    pub beta: Param<Ix1>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Array2<f64>, Array1<f64>)>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Array1::ones(features)),
            beta: Param::new(Array1::zeros(features)),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: 0.99,
            eps: 1e-3,
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.value.len() + self.beta.value.len()
    }

    pub fn infer(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let scale = &self.gamma.value / &self.running_var.mapv(|v| (v + self.eps).sqrt());
        let shift = &self.beta.value - &(&self.running_mean * &scale);
        &x * &scale + &shift
    }

    pub fn forward(&mut self, x: Array2<f64>, update_running: bool) -> Array2<f64> {
        let mean = x.mean_axis(Axis(0)).expect("nonempty batch");
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("nonempty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = &centered * &inv_std;
        let y = &xhat * &self.gamma.value + &self.beta.value;
        if update_running {
            let m = self.momentum;
            self.running_mean = &self.running_mean * m + &mean * (1.0 - m);
            self.running_var = &self.running_var * m + &var * (1.0 - m);
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let (xhat, inv_std) = self.cache.take().expect("BatchNorm::backward without forward");
        let n = dy.nrows() as f64;
        self.gamma.grad += &(dy * &xhat).sum_axis(Axis(0));
        self.beta.grad += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma.value;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &xhat).sum_axis(Axis(0));
        let inner = &dxhat * n - &sum_dxhat - &(&xhat * &sum_dxhat_xhat);
        inner * &(inv_std / n)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.gamma.visit(&format!("{prefix}.gamma"), f);
        self.beta.visit(&format!("{prefix}.beta"), f);
    }

    pub fn visit_state(&self, prefix: &str, f: &mut StateVisitor<'_>) {
        for (name, arr) in [
            ("gamma", &self.gamma.value),
            ("beta", &self.beta.value),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            f(&format!("{prefix}.{name}"), arr.shape(), arr.as_slice().expect("standard layout"));
        }
    }

    pub fn visit_state_mut(&mut self, prefix: &str, f: &mut StateMutVisitor<'_>) {
        for (name, arr) in [
            ("gamma", &mut self.gamma.value),
            ("beta", &mut self.beta.value),
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ] {
            let shape = arr.shape().to_vec();
            f(&format!("{prefix}.{name}"), &shape, arr.as_slice_mut().expect("standard layout"));
        }
    }
}

/// Inverted dropout mask: kept units are scaled by `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), rate: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}
