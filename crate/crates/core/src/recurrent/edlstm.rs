//! Encoder-decoder forecaster. A 3-layer LSTM encoder compresses the lag
//! sequence into fixed-length context (the per-layer final states); a
//! 3-layer LSTM decoder starts from those states, receives the top context
//! vector as its input at every step, and a linear head reads one
//! prediction per decoder step. Decoding is causal: prediction `s` never
//! depends on how many further steps are requested.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::Result;
use crate::nn::{Activation, Dense, ModelContainer, NetParams, Param};

use super::bilstm::apply_dropout;
use super::lstm::{LstmLayer, SeqTrace};

pub const EDLSTM_HIDDEN: usize = 7;
pub const EDLSTM_LAYERS: usize = 3;
pub const CONTAINER_KIND_EDLSTM: &str = "edlstm";

#[derive(Clone, Debug)]
pub struct EdLstmNet {
    pub enc: Vec<LstmLayer>,
    pub dec: Vec<LstmLayer>,
    pub head: Dense,
    pub dropout: f64,
    pub in_dim: usize,
}

#[derive(Clone, Debug)]
pub struct EdTrace {
    pub enc: Vec<SeqTrace>,
    pub dec: Vec<SeqTrace>,
    pub context: Vec<f64>,
    pub dropped: Vec<Vec<f64>>,
    pub masks: Vec<Option<Vec<f64>>>,
    pub head_outs: Vec<Vec<f64>>,
    /// One prediction per decoder step.
    pub outputs: Vec<f64>,
    pub seq_len: usize,
}

impl EdLstmNet {
    pub fn new(in_dim: usize, dropout: f64, rng: &mut impl Rng) -> Self {
        let h = EDLSTM_HIDDEN;
        let enc = (0..EDLSTM_LAYERS)
            .map(|l| {
                let d = if l == 0 { in_dim } else { h };
                LstmLayer::new(&format!("enc{l}"), d, h, rng)
            })
            .collect();
        let dec = (0..EDLSTM_LAYERS)
            .map(|l| LstmLayer::new(&format!("dec{l}"), h, h, rng))
            .collect();
        EdLstmNet {
            enc,
            dec,
            head: Dense::new("head", h, 1, Activation::Identity, rng),
            dropout,
            in_dim,
        }
    }

    pub fn forward(
        &self,
        xs: &[f64],
        seq_len: usize,
        horizon_steps: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> EdTrace {
        debug_assert!(horizon_steps >= 1);
        let h = EDLSTM_HIDDEN;
        let mut enc_traces: Vec<SeqTrace> = Vec::with_capacity(EDLSTM_LAYERS);
        let mut layer_in = xs.to_vec();
        for layer in &self.enc {
            let trace = layer.forward_seq(&layer_in, seq_len, None);
            layer_in = trace.outputs_flat();
            enc_traces.push(trace);
        }
        let context = enc_traces[EDLSTM_LAYERS - 1].h_final().to_vec();

        // The decoder sees the context at every step.
        let mut dec_in: Vec<f64> = Vec::with_capacity(horizon_steps * h);
        for _ in 0..horizon_steps {
            dec_in.extend_from_slice(&context);
        }
        let mut dec_traces: Vec<SeqTrace> = Vec::with_capacity(EDLSTM_LAYERS);
        for (l, layer) in self.dec.iter().enumerate() {
            let init = (enc_traces[l].h_final(), enc_traces[l].c_final());
            let trace = layer.forward_seq(&dec_in, horizon_steps, Some(init));
            dec_in = trace.outputs_flat();
            dec_traces.push(trace);
        }

        let mut dropped = Vec::with_capacity(horizon_steps);
        let mut masks = Vec::with_capacity(horizon_steps);
        let mut head_outs = Vec::with_capacity(horizon_steps);
        let mut outputs = Vec::with_capacity(horizon_steps);
        for s in 0..horizon_steps {
            let h_top = &dec_traces[EDLSTM_LAYERS - 1].steps[s].h;
            let (d, m) = apply_dropout(h_top, self.dropout, rng.as_deref_mut());
            let out = self.head.forward(&d);
            outputs.push(out[0]);
            dropped.push(d);
            masks.push(m);
            head_outs.push(out);
        }
        EdTrace {
            enc: enc_traces,
            dec: dec_traces,
            context,
            dropped,
            masks,
            head_outs,
            outputs,
            seq_len,
        }
    }

    pub fn backward(&mut self, trace: &EdTrace, d_preds: &[f64]) {
        let h = EDLSTM_HIDDEN;
        let steps = trace.outputs.len();
        debug_assert_eq!(d_preds.len(), steps);

        // Head and dropout, per decoder step.
        let mut inject_top = vec![vec![0.0; h]; steps];
        for s in 0..steps {
            let mut d_dropped = vec![0.0; h];
            self.head.backward(
                &trace.dropped[s],
                &trace.head_outs[s],
                &[d_preds[s]],
                &mut d_dropped,
            );
            if let Some(mask) = &trace.masks[s] {
                for (d, m) in d_dropped.iter_mut().zip(mask) {
                    *d *= m;
                }
            }
            inject_top[s] = d_dropped;
        }

        // Decoder stack, top down. dx of each layer becomes the injection
        // for the layer below; the bottom layer's dx accumulates onto the
        // context vector.
        let mut inject = inject_top;
        let mut init_grads: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); EDLSTM_LAYERS];
        let mut d_context = vec![0.0; h];
        for l in (0..EDLSTM_LAYERS).rev() {
            let mut dx = vec![0.0; steps * h];
            let (dh0, dc0) = self.dec[l].backward_seq(&trace.dec[l], &inject, None, &mut dx);
            init_grads[l] = (dh0, dc0);
            if l > 0 {
                inject = (0..steps).map(|s| dx[s * h..(s + 1) * h].to_vec()).collect();
            } else {
                for s in 0..steps {
                    for j in 0..h {
                        d_context[j] += dx[s * h + j];
                    }
                }
            }
        }

        // Encoder stack, top down. Decoder initial-state gradients re-enter
        // at each encoder layer's final step; the context gradient lands on
        // the top layer's final hidden state.
        let t_len = trace.seq_len;
        let mut inject: Vec<Vec<f64>> = vec![vec![0.0; h]; t_len];
        for l in (0..EDLSTM_LAYERS).rev() {
            let (dh0, dc0) = &init_grads[l];
            for j in 0..h {
                inject[t_len - 1][j] += dh0[j];
            }
            if l == EDLSTM_LAYERS - 1 {
                for j in 0..h {
                    inject[t_len - 1][j] += d_context[j];
                }
            }
            let in_dim = self.enc[l].input;
            let mut dx = vec![0.0; t_len * in_dim];
            self.enc[l]
                .backward_seq(&trace.enc[l], &inject, Some(dc0), &mut dx);
            if l > 0 {
                inject = (0..t_len)
                    .map(|t| dx[t * in_dim..(t + 1) * in_dim].to_vec())
                    .collect();
            }
        }
    }

    /// Deterministic one-step-ahead prediction (first decoder output).
    pub fn predict(&self, xs: &[f64], seq_len: usize) -> f64 {
        self.forward(xs, seq_len, 1, None).outputs[0]
    }

    pub fn to_container(&self) -> ModelContainer {
        let mut c = ModelContainer::new(
            CONTAINER_KIND_EDLSTM,
            json!({
                "in_dim": self.in_dim,
                "hidden": EDLSTM_HIDDEN,
                "layers": EDLSTM_LAYERS,
                "dropout": self.dropout,
            }),
        );
        c.capture(self);
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        c.expect_kind(CONTAINER_KIND_EDLSTM)?;
        let in_dim = c.meta["in_dim"].as_u64().unwrap_or(2) as usize;
        let dropout = c.meta["dropout"].as_f64().unwrap_or(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = EdLstmNet::new(in_dim, dropout, &mut rng);
        c.restore(&mut net)?;
        Ok(net)
    }
}

impl NetParams for EdLstmNet {
    fn params(&self) -> Vec<&Param> {
        let mut p = Vec::new();
        for l in &self.enc {
            p.extend(l.params());
        }
        for l in &self.dec {
            p.extend(l.params());
        }
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = Vec::new();
        for l in &mut self.enc {
            p.extend(l.params_mut());
        }
        for l in &mut self.dec {
            p.extend(l.params_mut());
        }
        p.extend(self.head.params_mut());
        p
    }
}
