//! Shared mini-batch training loop for the two forecaster families.
//!
//! Both networks read the same lag-window records; they differ in how the
//! loss is assembled. The bidirectional net trains all 7 head units (unit 0
//! toward the target, units 1..7 toward the six most recent power lags as
//! auxiliary reconstruction targets); the encoder-decoder trains its single
//! one-step output. Validation always scores unit 0 only.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SupervisedSet;
use crate::error::{Error, Result};
use crate::nn::{check_gradients, Adam, AdamConfig, GradCheckReport, ModelContainer, NetParams, Param};

use super::bilstm::{BiLstmNet, BILSTM_HEAD};
use super::edlstm::EdLstmNet;

#[derive(Clone, Debug)]
pub enum TurbineNet {
    Bi(BiLstmNet),
    Ed(EdLstmNet),
}

impl TurbineNet {
    pub fn in_dim(&self) -> usize {
        match self {
            TurbineNet::Bi(n) => n.in_dim,
            TurbineNet::Ed(n) => n.in_dim,
        }
    }

    pub fn dropout(&self) -> f64 {
        match self {
            TurbineNet::Bi(n) => n.dropout,
            TurbineNet::Ed(n) => n.dropout,
        }
    }

    /// Deterministic point prediction (dropout off).
    pub fn predict(&self, xs: &[f64], seq_len: usize) -> f64 {
        match self {
            TurbineNet::Bi(n) => n.predict(xs, seq_len),
            TurbineNet::Ed(n) => n.predict(xs, seq_len),
        }
    }

    fn target_dim(&self) -> usize {
        match self {
            TurbineNet::Bi(_) => BILSTM_HEAD,
            TurbineNet::Ed(_) => 1,
        }
    }

    pub fn to_container(&self) -> ModelContainer {
        match self {
            TurbineNet::Bi(n) => n.to_container(),
            TurbineNet::Ed(n) => n.to_container(),
        }
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        match c.kind.as_str() {
            super::bilstm::CONTAINER_KIND_BILSTM => Ok(TurbineNet::Bi(BiLstmNet::from_container(c)?)),
            super::edlstm::CONTAINER_KIND_EDLSTM => Ok(TurbineNet::Ed(EdLstmNet::from_container(c)?)),
            other => Err(Error::WrongContainerKind {
                expected: "bilstm|edlstm".into(),
                found: other.into(),
            }),
        }
    }
}

impl NetParams for TurbineNet {
    fn params(&self) -> Vec<&Param> {
        match self {
            TurbineNet::Bi(n) => n.params(),
            TurbineNet::Ed(n) => n.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            TurbineNet::Bi(n) => n.params_mut(),
            TurbineNet::Ed(n) => n.params_mut(),
        }
    }
}

/// Per-record regression targets. Unit 0 is always the forecast target.
fn record_targets(net: &TurbineNet, set: &SupervisedSet, i: usize) -> Vec<f64> {
    match net {
        TurbineNet::Ed(_) => vec![set.targets[i]],
        TurbineNet::Bi(_) => {
            let lags = set.spec.lag_count;
            let mut t = Vec::with_capacity(BILSTM_HEAD);
            t.push(set.targets[i]);
            // six most recent power lags, oldest first
            t.extend_from_slice(&set.power_lags[i * lags + 1..(i + 1) * lags]);
            t
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSpec {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub restore_best: bool,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            min_delta: 1e-6,
            seed: 0,
            restore_best: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

fn check_compat(net: &TurbineNet, set: &SupervisedSet, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Shape {
            op: "train",
            detail: format!("empty {what} set"),
        });
    }
    if set.seq_dim() != net.in_dim() {
        return Err(Error::Shape {
            op: "train",
            detail: format!(
                "{} features per step but network expects {}",
                set.seq_dim(),
                net.in_dim()
            ),
        });
    }
    Ok(())
}

/// One forward/backward pass over `batch`, gradients accumulated into the
/// network. Returns the summed per-record loss (mean over target units).
fn batch_pass(
    net: &mut TurbineNet,
    set: &SupervisedSet,
    batch: &[usize],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let seq_len = set.seq_len();
    let dim = set.seq_dim();
    let t_dim = net.target_dim();
    let scale = 1.0 / (batch.len() * t_dim) as f64;
    let mut xs = vec![0.0; seq_len * dim];
    let mut loss_sum = 0.0;
    for &i in batch {
        set.write_seq(i, &mut xs);
        let targets = record_targets(net, set, i);
        match net {
            TurbineNet::Bi(n) => {
                let trace = n.forward(&xs, seq_len, Some(rng));
                let mut d_out = vec![0.0; t_dim];
                for k in 0..t_dim {
                    let e = trace.outputs[k] - targets[k];
                    loss_sum += e * e / t_dim as f64;
                    d_out[k] = 2.0 * e * scale;
                }
                n.backward(&trace, &d_out);
            }
            TurbineNet::Ed(n) => {
                let trace = n.forward(&xs, seq_len, 1, Some(rng));
                let e = trace.outputs[0] - targets[0];
                loss_sum += e * e;
                n.backward(&trace, &[2.0 * e * scale]);
            }
        }
    }
    loss_sum
}

/// Mean squared error of unit-0 predictions over a whole set, dropout off.
pub fn validation_loss(net: &TurbineNet, set: &SupervisedSet) -> f64 {
    let seq_len = set.seq_len();
    let mut xs = vec![0.0; seq_len * set.seq_dim()];
    let mut sum = 0.0;
    for i in 0..set.len() {
        set.write_seq(i, &mut xs);
        let e = net.predict(&xs, seq_len) - set.targets[i];
        sum += e * e;
    }
    sum / set.len() as f64
}

/// Standardized unit-0 predictions for every record, in order.
pub fn predict_set(net: &TurbineNet, set: &SupervisedSet) -> Vec<f64> {
    let seq_len = set.seq_len();
    let mut xs = vec![0.0; seq_len * set.seq_dim()];
    (0..set.len())
        .map(|i| {
            set.write_seq(i, &mut xs);
            net.predict(&xs, seq_len)
        })
        .collect()
}

/// Adam mini-batch training with optional early stopping.
///
/// With a validation set, training stops once the unit-0 validation MSE has
/// failed to improve by `min_delta` for `patience` consecutive epochs, and
/// the best-epoch weights are restored when `restore_best` is set. Without
/// one it runs exactly `max_epochs` epochs, which is how a fold-selected
/// epoch count is replayed on the full training split.
pub fn train_network(
    net: &mut TurbineNet,
    train: &SupervisedSet,
    val: Option<&SupervisedSet>,
    spec: &TrainSpec,
) -> Result<TrainReport> {
    check_compat(net, train, "training")?;
    if let Some(v) = val {
        check_compat(net, v, "validation")?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut adam = Adam::new(spec.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_weights: Option<ModelContainer> = None;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..spec.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(spec.batch_size) {
            loss_sum += batch_pass(net, train, batch, &mut rng);
            adam.step(&mut net.params_mut());
        }
        train_losses.push(loss_sum / train.len() as f64);
        epochs_run = epoch + 1;

        if let Some(v) = val {
            let vl = validation_loss(net, v);
            val_losses.push(vl);
            if vl < best_val - spec.min_delta {
                best_val = vl;
                best_epoch = epoch;
                since_best = 0;
                if spec.restore_best {
                    best_weights = Some(net.to_container());
                }
            } else {
                since_best += 1;
                if since_best > spec.patience {
                    break;
                }
            }
        } else {
            best_epoch = epoch;
        }
    }

    if let Some(snapshot) = best_weights {
        snapshot.restore(net)?;
    }
    Ok(TrainReport {
        epochs_run,
        best_epoch,
        best_val_loss: val.map(|_| best_val),
        train_losses,
        val_losses,
    })
}

fn batch_loss(net: &TurbineNet, set: &SupervisedSet, batch: &[usize]) -> f64 {
    let seq_len = set.seq_len();
    let t_dim = net.target_dim();
    let mut xs = vec![0.0; seq_len * set.seq_dim()];
    let mut sum = 0.0;
    for &i in batch {
        set.write_seq(i, &mut xs);
        let targets = record_targets(net, set, i);
        let outs = match net {
            TurbineNet::Bi(n) => n.forward(&xs, seq_len, None).outputs,
            TurbineNet::Ed(n) => n.forward(&xs, seq_len, 1, None).outputs,
        };
        for k in 0..t_dim {
            let e = outs[k] - targets[k];
            sum += e * e / t_dim as f64;
        }
    }
    sum / batch.len() as f64
}

/// Finite-difference audit of the full training gradient on a small batch.
/// Refuses to run while dropout is active, because the loss would not be a
/// deterministic function of the parameters.
pub fn grad_check_turbine(
    net: &mut TurbineNet,
    set: &SupervisedSet,
    max_records: usize,
    epsilon: f64,
) -> Result<GradCheckReport> {
    if net.dropout() > 0.0 {
        return Err(Error::NondeterministicLoss(net.dropout()));
    }
    check_compat(net, set, "gradient-check")?;
    let batch: Vec<usize> = (0..set.len().min(max_records)).collect();
    net.zero_grads();
    // batch_pass draws nothing from the rng when dropout is off
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    batch_pass(net, set, &batch, &mut rng);
    Ok(check_gradients(net, |n| batch_loss(n, set, &batch), epsilon))
}
