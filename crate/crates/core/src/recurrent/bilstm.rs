//! Bidirectional forecaster: one forward-time LSTM layer and one
//! reverse-time LSTM layer over the same lag sequence. Their final states
//! are concatenated, optionally dropped out, and fed to a 7-unit linear
//! head. Head unit 0 is the horizon prediction; the remaining units are
//! trained toward recent power lags as auxiliary targets, which keeps the
//! head width at 7 without leaving dead parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::Result;
use crate::nn::{Activation, Dense, ModelContainer, NetParams, Param};

use super::lstm::{LstmLayer, SeqTrace};

pub const BILSTM_HIDDEN: usize = 7;
pub const BILSTM_HEAD: usize = 7;
pub const CONTAINER_KIND_BILSTM: &str = "bilstm";

#[derive(Clone, Debug)]
pub struct BiLstmNet {
    pub fwd: LstmLayer,
    pub rev: LstmLayer,
    pub head: Dense,
    pub dropout: f64,
    pub in_dim: usize,
}

#[derive(Clone, Debug)]
pub struct BiTrace {
    pub fwd: SeqTrace,
    pub rev: SeqTrace,
    pub xs_rev: Vec<f64>,
    /// Concatenated final states before dropout.
    pub concat: Vec<f64>,
    /// After dropout (equals `concat` at inference).
    pub dropped: Vec<f64>,
    pub mask: Option<Vec<f64>>,
    pub outputs: Vec<f64>,
    pub seq_len: usize,
}

impl BiLstmNet {
    pub fn new(in_dim: usize, dropout: f64, rng: &mut impl Rng) -> Self {
        BiLstmNet {
            fwd: LstmLayer::new("fwd", in_dim, BILSTM_HIDDEN, rng),
            rev: LstmLayer::new("rev", in_dim, BILSTM_HIDDEN, rng),
            head: Dense::new(
                "head",
                2 * BILSTM_HIDDEN,
                BILSTM_HEAD,
                Activation::Identity,
                rng,
            ),
            dropout,
            in_dim,
        }
    }

    /// Forward over one flat `[T x in_dim]` sequence. Pass an RNG to enable
    /// inverted dropout (training); `None` runs deterministically.
    pub fn forward(&self, xs: &[f64], seq_len: usize, rng: Option<&mut ChaCha8Rng>) -> BiTrace {
        debug_assert_eq!(xs.len(), seq_len * self.in_dim);
        let mut xs_rev = vec![0.0; xs.len()];
        for t in 0..seq_len {
            xs_rev[t * self.in_dim..(t + 1) * self.in_dim]
                .copy_from_slice(&xs[(seq_len - 1 - t) * self.in_dim..(seq_len - t) * self.in_dim]);
        }
        let fwd = self.fwd.forward_seq(xs, seq_len, None);
        let rev = self.rev.forward_seq(&xs_rev, seq_len, None);
        let mut concat = Vec::with_capacity(2 * BILSTM_HIDDEN);
        concat.extend_from_slice(fwd.h_final());
        concat.extend_from_slice(rev.h_final());

        let (dropped, mask) = apply_dropout(&concat, self.dropout, rng);
        let outputs = self.head.forward(&dropped);
        BiTrace {
            fwd,
            rev,
            xs_rev,
            concat,
            dropped,
            mask,
            outputs,
            seq_len,
        }
    }

    /// Accumulate gradients for one sample given the loss gradient at the
    /// head outputs.
    pub fn backward(&mut self, trace: &BiTrace, d_out: &[f64]) {
        let mut d_dropped = vec![0.0; 2 * BILSTM_HIDDEN];
        self.head
            .backward(&trace.dropped, &trace.outputs, d_out, &mut d_dropped);
        if let Some(mask) = &trace.mask {
            for (d, m) in d_dropped.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        let t_len = trace.seq_len;
        let mut inject_fwd = vec![vec![0.0; BILSTM_HIDDEN]; t_len];
        inject_fwd[t_len - 1].copy_from_slice(&d_dropped[..BILSTM_HIDDEN]);
        let mut inject_rev = vec![vec![0.0; BILSTM_HIDDEN]; t_len];
        inject_rev[t_len - 1].copy_from_slice(&d_dropped[BILSTM_HIDDEN..]);

        let mut dx_scratch = vec![0.0; t_len * self.in_dim];
        self.fwd
            .backward_seq(&trace.fwd, &inject_fwd, None, &mut dx_scratch);
        dx_scratch.fill(0.0);
        self.rev
            .backward_seq(&trace.rev, &inject_rev, None, &mut dx_scratch);
    }

    /// Deterministic scalar prediction (head unit 0, dropout off).
    pub fn predict(&self, xs: &[f64], seq_len: usize) -> f64 {
        self.forward(xs, seq_len, None).outputs[0]
    }

    pub fn to_container(&self) -> ModelContainer {
        let mut c = ModelContainer::new(
            CONTAINER_KIND_BILSTM,
            json!({
                "in_dim": self.in_dim,
                "hidden": BILSTM_HIDDEN,
                "head": BILSTM_HEAD,
                "dropout": self.dropout,
            }),
        );
        c.capture(self);
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        c.expect_kind(CONTAINER_KIND_BILSTM)?;
        let in_dim = c.meta["in_dim"].as_u64().unwrap_or(2) as usize;
        let dropout = c.meta["dropout"].as_f64().unwrap_or(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = BiLstmNet::new(in_dim, dropout, &mut rng);
        c.restore(&mut net)?;
        Ok(net)
    }
}

use rand::SeedableRng;

/// Inverted dropout: scale kept units by `1/(1-p)` so inference needs no
/// correction. Returns the (possibly identical) vector and the mask.
pub(crate) fn apply_dropout(
    v: &[f64],
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> (Vec<f64>, Option<Vec<f64>>) {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mask: Vec<f64> = v
                .iter()
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let dropped = v.iter().zip(&mask).map(|(x, m)| x * m).collect();
            (dropped, Some(mask))
        }
        _ => (v.to_vec(), None),
    }
}

impl NetParams for BiLstmNet {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.fwd.params();
        p.extend(self.rev.params());
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.fwd.params_mut();
        p.extend(self.rev.params_mut());
        p.extend(self.head.params_mut());
        p
    }
}
