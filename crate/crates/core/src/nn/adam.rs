use crate::nn::heads::Head;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update from the gradients currently held by `head`.
    pub fn step(&mut self, head: &mut Head) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let lr_t = self.learning_rate * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step));
        let moments = &mut self.moments;
        let mut idx = 0;
        head.visit_params(&mut |_, value, grad| {
            if moments.len() <= idx {
                moments.push((vec![0.0; value.len()], vec![0.0; value.len()]));
            }
            let (m, v) = &mut moments[idx];
            for k in 0..value.len() {
                let g = grad[k];
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                value[k] -= lr_t * m[k] / (v[k].sqrt() + eps);
            }
            idx += 1;
        });
    }
}
