use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg;
use super::{NetParams, Param};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Sigmoid,
    Tanh,
    /// Linear output, used by every regression head.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output, which is all the
    /// backward pass caches.
    #[inline]
    pub fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer `a = act(W x + b)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
    pub act: Activation,
}

impl Dense {
    pub fn new(
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        Dense {
            w: Param::uniform(format!("{prefix}.w"), out_dim, in_dim, in_dim, rng),
            b: Param::zeros(format!("{prefix}.b"), out_dim, 1),
            act,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.value.clone();
        linalg::matvec_add(&self.w.value, self.out_dim(), self.in_dim(), x, &mut out);
        for v in &mut out {
            *v = self.act.apply(*v);
        }
        out
    }

    /// Backward for one sample. `a` is the cached forward output for `x`,
    /// `d_a` the loss gradient at that output. Accumulates into `w.grad` /
    /// `b.grad` and adds the input gradient into `dx`.
    pub fn backward(&mut self, x: &[f64], a: &[f64], d_a: &[f64], dx: &mut [f64]) {
        let (rows, cols) = (self.out_dim(), self.in_dim());
        let mut dz = vec![0.0; rows];
        for r in 0..rows {
            dz[r] = d_a[r] * self.act.deriv_from_output(a[r]);
        }
        linalg::outer_add(&dz, x, &mut self.w.grad);
        linalg::add_assign(&mut self.b.grad, &dz);
        linalg::matvec_t_add(&self.w.value, rows, cols, &dz, dx);
    }
}

impl NetParams for Dense {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}
