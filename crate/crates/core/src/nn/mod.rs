//! The three MLSP regression heads and the small amount of neural-network
//! machinery they need: dense, batch-norm and LSTM layers with hand-written
//! backpropagation, Adam, and a versioned weight container.

pub mod adam;
pub mod heads;
pub mod io;
pub mod layers;
pub mod lstm;

use ndarray::{Array, Dimension};

pub use adam::Adam;
pub use heads::{Head, HeadConfig, HeadKind};
pub use io::{load_head, save_head, EpochRecord, TrainedHead};

/// Callback over trainable tensors: `(name, values, gradients)`.
pub type ParamVisitor<'a> = dyn FnMut(&str, &mut [f64], &mut [f64]) + 'a;

/// Callback over every persisted tensor: `(name, shape, values)`.
pub type StateVisitor<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;

/// Callback used when restoring persisted tensors in place.
pub type StateMutVisitor<'a> = dyn FnMut(&str, &[usize], &mut [f64]) + 'a;

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<D: Dimension> {
    pub value: Array<f64, D>,
    pub grad: Array<f64, D>,
}

impl<D: Dimension> Param<D> {
    pub fn new(value: Array<f64, D>) -> Self {
        let value = value.as_standard_layout().into_owned();
        let grad = Array::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn visit(&mut self, name: &str, f: &mut ParamVisitor<'_>) {
        f(
            name,
            self.value.as_slice_mut().expect("standard layout"),
            self.grad.as_slice_mut().expect("standard layout"),
        );
    }
}
