//! Hand-backpropagated building blocks. Everything is `f64`; there is no
//! autodiff graph. Each layer caches what its backward pass needs and
//! gradients accumulate into [`Param::grad`] until the optimizer consumes
//! them.

mod adam;
mod container;
mod dense;
mod gradcheck;
pub(crate) mod linalg;
mod loss;

pub use adam::{Adam, AdamConfig};
pub use container::{ModelContainer, ScalerEntry, TensorEntry, FORMAT_VERSION};
pub use dense::{Activation, Dense};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use loss::{bernoulli_kl, l2_penalty, mse_grad, mse_loss, sparse_kl_act_grad, sparse_kl_penalty};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A named parameter tensor paired with its gradient accumulator.
/// `value` and `grad` always have identical shape (`rows * cols`, row-major;
/// vectors use `cols == 1`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Param {
            name: name.into(),
            rows,
            cols,
            value: vec![0.0; rows * cols],
            grad: vec![0.0; rows * cols],
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut p = Param::zeros(name, rows, cols);
        for v in &mut p.value {
            *v = rng.gen_range(-bound..=bound);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Uniform access to every parameter of a network, in a stable order.
/// The order must not change between calls; the optimizer and the model
/// container both rely on it.
pub trait NetParams {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Total number of trainable scalars.
    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
