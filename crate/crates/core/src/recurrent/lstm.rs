//! Single LSTM layer with explicit caches and full backpropagation through
//! time. Gate order in the stacked 4H blocks is input, forget, candidate,
//! output:
//!
//! ```text
//! i = sigmoid(Wi x + Ui h + bi)      c_t = f * c_{t-1} + i * g
//! f = sigmoid(Wf x + Uf h + bf)      h_t = o * tanh(c_t)
//! g = tanh   (Wg x + Ug h + bg)
//! o = sigmoid(Wo x + Uo h + bo)
//! ```
//!
//! One shared bias vector (not two) so a layer holds exactly
//! `4 (H (H + D) + H)` trainable scalars.

use rand::Rng;

use crate::nn::linalg;
use crate::nn::{NetParams, Param};

#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w_ih: Param,
    pub w_hh: Param,
    pub b: Param,
    pub input: usize,
    pub hidden: usize,
}

/// Everything one step's backward pass needs.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SeqTrace {
    pub steps: Vec<StepCache>,
}

impl SeqTrace {
    pub fn h_final(&self) -> &[f64] {
        &self.steps.last().expect("non-empty sequence").h
    }

    pub fn c_final(&self) -> &[f64] {
        &self.steps.last().expect("non-empty sequence").c
    }

    /// Hidden outputs flattened to `[T x H]`, the input layout of a stacked
    /// layer above this one.
    pub fn outputs_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps.len() * self.steps[0].h.len());
        for s in &self.steps {
            out.extend_from_slice(&s.h);
        }
        out
    }
}

impl LstmLayer {
    /// Uniform `±1/sqrt(fan_in)` init; forget-gate bias starts at +1 so
    /// early training keeps cell state flowing.
    pub fn new(prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fan_in = input + hidden;
        let w_ih = Param::uniform(format!("{prefix}.w_ih"), 4 * hidden, input, fan_in, rng);
        let w_hh = Param::uniform(format!("{prefix}.w_hh"), 4 * hidden, hidden, fan_in, rng);
        let mut b = Param::zeros(format!("{prefix}.b"), 4 * hidden, 1);
        for v in &mut b.value[hidden..2 * hidden] {
            *v = 1.0;
        }
        LstmLayer {
            w_ih,
            w_hh,
            b,
            input,
            hidden,
        }
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
        let hh = self.hidden;
        let mut pre = self.b.value.clone();
        linalg::matvec_add(&self.w_ih.value, 4 * hh, self.input, x, &mut pre);
        linalg::matvec_add(&self.w_hh.value, 4 * hh, hh, h_prev, &mut pre);

        let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut cache = StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i: vec![0.0; hh],
            f: vec![0.0; hh],
            g: vec![0.0; hh],
            o: vec![0.0; hh],
            c: vec![0.0; hh],
            tanh_c: vec![0.0; hh],
            h: vec![0.0; hh],
        };
        for j in 0..hh {
            cache.i[j] = sigmoid(pre[j]);
            cache.f[j] = sigmoid(pre[hh + j]);
            cache.g[j] = pre[2 * hh + j].tanh();
            cache.o[j] = sigmoid(pre[3 * hh + j]);
            cache.c[j] = cache.f[j] * c_prev[j] + cache.i[j] * cache.g[j];
            cache.tanh_c[j] = cache.c[j].tanh();
            cache.h[j] = cache.o[j] * cache.tanh_c[j];
        }
        cache
    }

    /// Run a sequence given as flat `[T x input]`, starting from the given
    /// or zero initial states.
    pub fn forward_seq(
        &self,
        xs: &[f64],
        seq_len: usize,
        init: Option<(&[f64], &[f64])>,
    ) -> SeqTrace {
        debug_assert_eq!(xs.len(), seq_len * self.input);
        let zero = vec![0.0; self.hidden];
        let (mut h, mut c) = match init {
            Some((h0, c0)) => (h0.to_vec(), c0.to_vec()),
            None => (zero.clone(), zero),
        };
        let mut steps = Vec::with_capacity(seq_len);
        for t in 0..seq_len {
            let cache = self.step(&xs[t * self.input..(t + 1) * self.input], &h, &c);
            h = cache.h.clone();
            c = cache.c.clone();
            steps.push(cache);
        }
        SeqTrace { steps }
    }

    /// BPTT over a cached sequence. `d_h[t]` carries the loss gradient
    /// injected at each step's hidden output; `dc_final` adds a gradient on
    /// the last cell state. Parameter gradients accumulate; the flat input
    /// gradient accumulates into `dx`. Returns gradients with respect to
    /// the initial states, for chaining into whatever produced them.
    pub fn backward_seq(
        &mut self,
        trace: &SeqTrace,
        d_h: &[Vec<f64>],
        dc_final: Option<&[f64]>,
        dx: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let hh = self.hidden;
        let t_len = trace.steps.len();
        debug_assert_eq!(d_h.len(), t_len);
        debug_assert_eq!(dx.len(), t_len * self.input);

        let mut dh_carry = vec![0.0; hh];
        let mut dc_carry = match dc_final {
            Some(d) => d.to_vec(),
            None => vec![0.0; hh],
        };
        let mut da = vec![0.0; 4 * hh];
        for t in (0..t_len).rev() {
            let s = &trace.steps[t];
            for j in 0..hh {
                let dh = d_h[t][j] + dh_carry[j];
                let d_o = dh * s.tanh_c[j];
                let dc = dc_carry[j] + dh * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                let d_i = dc * s.g[j];
                let d_g = dc * s.i[j];
                let d_f = dc * s.c_prev[j];
                dc_carry[j] = dc * s.f[j];
                da[j] = d_i * s.i[j] * (1.0 - s.i[j]);
                da[hh + j] = d_f * s.f[j] * (1.0 - s.f[j]);
                da[2 * hh + j] = d_g * (1.0 - s.g[j] * s.g[j]);
                da[3 * hh + j] = d_o * s.o[j] * (1.0 - s.o[j]);
            }
            linalg::outer_add(&da, &s.x, &mut self.w_ih.grad);
            linalg::outer_add(&da, &s.h_prev, &mut self.w_hh.grad);
            linalg::add_assign(&mut self.b.grad, &da);
            linalg::matvec_t_add(
                &self.w_ih.value,
                4 * hh,
                self.input,
                &da,
                &mut dx[t * self.input..(t + 1) * self.input],
            );
            dh_carry.fill(0.0);
            linalg::matvec_t_add(&self.w_hh.value, 4 * hh, hh, &da, &mut dh_carry);
        }
        (dh_carry, dc_carry)
    }
}

impl NetParams for LstmLayer {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_ih, &self.w_hh, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b]
    }
}
