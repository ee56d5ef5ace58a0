use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis, Ix1, Ix2};
use rand::Rng;

use crate::nn::{Param, ParamVisitor, StateMutVisitor, StateVisitor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepCache {
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

struct SeqCache {
    /// `(batch * steps) x inputs`, batch-major.
    x: Array2<f64>,
    steps: Vec<StepCache>,
}

/// Single LSTM layer emitting its hidden state at every step.
///
/// Gate pre-activations are `x W + h U + b`, packed as
/// `[input, forget, cell, output]` along the last axis.
pub struct Lstm {
    pub w: Param<Ix2>,
    pub u: Param<Ix2>,
    pub b: Param<Ix1>,
    hidden: usize,
    cache: Option<SeqCache>,
}

impl Clone for Lstm {
    fn clone(&self) -> Self {
        Lstm {
            w: self.w.clone(),
            u: self.u.clone(),
            b: self.b.clone(),
            hidden: self.hidden,
            cache: None,
        }
    }
}

impl std::fmt::Debug for Lstm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lstm")
            .field("inputs", &self.inputs())
            .field("hidden", &self.hidden)
            .finish()
    }
}

impl Lstm {
    /// Glorot-uniform input weights, uniform `±1/sqrt(hidden)` recurrent
    /// weights, forget-gate bias 1.
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + 4 * hidden) as f64).sqrt();
        let w = Array2::from_shape_fn((inputs, 4 * hidden), |_| rng.random_range(-limit..=limit));
        let rlimit = 1.0 / (hidden as f64).sqrt();
        let u = Array2::from_shape_fn((hidden, 4 * hidden), |_| rng.random_range(-rlimit..=rlimit));
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Lstm {
            w: Param::new(w),
            u: Param::new(u),
            b: Param::new(b),
            hidden,
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Sequence length of the pending training pass, or 0.
    pub fn cached_steps(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.steps.len())
    }

    pub fn param_count(&self) -> usize {
        self.w.value.len() + self.u.value.len() + self.b.value.len()
    }

    fn run(&self, x: ArrayView3<'_, f64>, mut record: Option<&mut Vec<StepCache>>) -> (Array2<f64>, Array3<f64>) {
        let (batch, steps, inputs) = x.dim();
        let hsz = self.hidden;
        let flat = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch * steps, inputs))
            .expect("contiguous");
        // input projections for every step in one product
        let proj = flat.dot(&self.w.value) + &self.b.value;
        let proj = proj.into_shape_with_order((batch, steps, 4 * hsz)).expect("contiguous");

        let mut h = Array2::<f64>::zeros((batch, hsz));
        let mut c = Array2::<f64>::zeros((batch, hsz));
        let mut out = Array3::<f64>::zeros((batch, steps, hsz));
        for t in 0..steps {
            let z = &proj.slice(s![.., t, ..]) + &h.dot(&self.u.value);
            let i = z.slice(s![.., 0..hsz]).mapv(sigmoid);
            let f = z.slice(s![.., hsz..2 * hsz]).mapv(sigmoid);
            let g = z.slice(s![.., 2 * hsz..3 * hsz]).mapv(f64::tanh);
            let o = z.slice(s![.., 3 * hsz..]).mapv(sigmoid);
            let c_new = &f * &c + &i * &g;
            let tanh_c = c_new.mapv(f64::tanh);
            let h_new = &o * &tanh_c;
            out.slice_mut(s![.., t, ..]).assign(&h_new);
            let h_prev = std::mem::replace(&mut h, h_new);
            let c_prev = std::mem::replace(&mut c, c_new);
            if let Some(rec) = record.as_deref_mut() {
                rec.push(StepCache {
                    h_prev,
                    c_prev,
                    i,
                    f,
                    g,
                    o,
                    tanh_c,
                });
            }
        }
        (flat, out)
    }

    pub fn infer(&self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        self.run(x, None).1
    }

    pub fn forward(&mut self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        let mut steps = Vec::with_capacity(x.dim().1);
        let (flat, out) = self.run(x, Some(&mut steps));
        self.cache = Some(SeqCache { x: flat, steps });
        out
    }

    /// Backpropagation through time. `dh` is the loss gradient with respect
    /// to every emitted hidden state. The input gradient is only formed when
    /// `input_grad` is set, since the bottom layer's is never needed.
    pub fn backward(&mut self, dh: &Array3<f64>, input_grad: bool) -> Option<Array3<f64>> {
        let cache = self.cache.take().expect("Lstm::backward without forward");
        let (batch, steps, hsz) = dh.dim();
        let mut dz_all = Array3::<f64>::zeros((batch, steps, 4 * hsz));
        let mut dh_next = Array2::<f64>::zeros((batch, hsz));
        let mut dc_next = Array2::<f64>::zeros((batch, hsz));

        for t in (0..steps).rev() {
            let st = &cache.steps[t];
            let dh_t = &dh.slice(s![.., t, ..]) + &dh_next;
            let d_o = &dh_t * &st.tanh_c;
            let dc = &(&dh_t * &st.o * &st.tanh_c.mapv(|v| 1.0 - v * v)) + &dc_next;
            let di = &dc * &st.g;
            let dg = &dc * &st.i;
            let df = &dc * &st.c_prev;
            dc_next = &dc * &st.f;

            let mut dz = dz_all.slice_mut(s![.., t, ..]);
            dz.slice_mut(s![.., 0..hsz]).assign(&(&di * &st.i.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![.., hsz..2 * hsz]).assign(&(&df * &st.f.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![.., 2 * hsz..3 * hsz]).assign(&(&dg * &st.g.mapv(|v| 1.0 - v * v)));
            dz.slice_mut(s![.., 3 * hsz..]).assign(&(&d_o * &st.o.mapv(|v| v * (1.0 - v))));

            let dz = dz_all.slice(s![.., t, ..]);
            self.u.grad += &st.h_prev.t().dot(&dz);
            dh_next = dz.dot(&self.u.value.t());
        }

        let dz_flat = dz_all.into_shape_with_order((batch * steps, 4 * hsz)).expect("contiguous");
        self.w.grad += &cache.x.t().dot(&dz_flat);
        self.b.grad += &dz_flat.sum_axis(Axis(0));
        input_grad.then(|| {
            let dx = dz_flat.dot(&self.w.value.t());
            dx.into_shape_with_order((batch, steps, self.inputs())).expect("contiguous")
        })
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.w.visit(&format!("{prefix}.w"), f);
        self.u.visit(&format!("{prefix}.u"), f);
        self.b.visit(&format!("{prefix}.b"), f);
    }

    pub fn visit_state(&self, prefix: &str, f: &mut StateVisitor<'_>) {
        f(&format!("{prefix}.w"), self.w.value.shape(), self.w.value.as_slice().expect("standard layout"));
        f(&format!("{prefix}.u"), self.u.value.shape(), self.u.value.as_slice().expect("standard layout"));
        f(&format!("{prefix}.b"), self.b.value.shape(), self.b.value.as_slice().expect("standard layout"));
    }

    pub fn visit_state_mut(&mut self, prefix: &str, f: &mut StateMutVisitor<'_>) {
        for (name, arr) in [
            ("w", self.w.value.view_mut().into_dyn()),
            ("u", self.u.value.view_mut().into_dyn()),
            ("b", self.b.value.view_mut().into_dyn()),
        ] {
            let shape = arr.shape().to_vec();
            let mut arr = arr;
            f(&format!("{prefix}.{name}"), &shape, arr.as_slice_mut().expect("standard layout"));
        }
    }
}
