//! Teacher-student distillation for regression.
//!
//! The teacher is a park-scale forecaster whose per-hour relative errors
//! are precomputed and frozen; the student is a turbine forecaster trained
//! on its own data. The distillation loss mixes the student's squared
//! relative error with a gated comparison against the teacher: the
//! comparison only pulls when the student is doing worse than the teacher
//! on the batch, and training halts once the student's validation error
//! drops below the teacher's.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SupervisedSet;
use crate::error::{Error, Result};
use crate::nn::{Adam, ModelContainer, NetParams};
use crate::recurrent::{train_network, TrainReport, TrainSpec, TurbineNet};

/// Relative prediction error `|measured - predicted| / denom` in physical
/// units, where the denominator is `|measured|` floored at
/// `floor_frac * cap` so zero-power hours stay finite.
pub fn rel_error(measured: f64, predicted: f64, cap: f64, floor_frac: f64) -> f64 {
    debug_assert!(cap > 0.0 && floor_frac > 0.0);
    (measured - predicted).abs() / measured.abs().max(floor_frac * cap)
}

/// Time-aligned relative-error vectors for one batch. The reference the
/// student is scored against is zero error, so the student's "distance to
/// target" is just its own error vector.
#[derive(Clone, Debug)]
pub struct RelErrBatch {
    pub student: Vec<f64>,
    pub teacher: Vec<f64>,
}

impl RelErrBatch {
    pub fn new(student: Vec<f64>, teacher: Vec<f64>) -> Result<Self> {
        if student.len() != teacher.len() {
            return Err(Error::LengthMismatch(student.len(), teacher.len()));
        }
        if student.is_empty() {
            return Err(Error::EmptySample);
        }
        debug_assert!(student.iter().chain(&teacher).all(|v| *v >= 0.0));
        Ok(RelErrBatch { student, teacher })
    }

    pub fn len(&self) -> usize {
        self.student.len()
    }

    pub fn is_empty(&self) -> bool {
        self.student.is_empty()
    }
}

/// Gated comparison term: squared distance between the error vectors when
/// the student's norm strictly exceeds the teacher's, else exactly zero.
pub fn compare_term(student: &[f64], teacher: &[f64]) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(Error::LengthMismatch(student.len(), teacher.len()));
    }
    let s2: f64 = student.iter().map(|v| v * v).sum();
    let t2: f64 = teacher.iter().map(|v| v * v).sum();
    if s2 > t2 {
        Ok(student.iter().zip(teacher).map(|(s, t)| (s - t) * (s - t)).sum())
    } else {
        Ok(0.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KdConfig {
    /// Mix between the student's own error term and the teacher comparison.
    pub alpha: f64,
    /// Denominator floor as a fraction of capacity.
    pub denom_floor: f64,
    /// Halt once the student's validation error beats the teacher's.
    pub stop_on_beating_teacher: bool,
    /// Evaluate the gate per sample instead of per batch.
    pub gate_per_sample: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            alpha: 0.8,
            denom_floor: 0.01,
            stop_on_beating_teacher: true,
            gate_per_sample: false,
        }
    }
}

/// Batch distillation loss:
/// `(1/n) (alpha * Σ s_i² + (1-alpha) * compare)`, where `compare` is the
/// gated term over the whole batch, or the sum of per-sample gated terms
/// when `gate_per_sample` is set.
pub fn kd_loss(batch: &RelErrBatch, cfg: &KdConfig) -> Result<f64> {
    debug_assert!((0.0..=1.0).contains(&cfg.alpha));
    let n = batch.len() as f64;
    let hard: f64 = batch.student.iter().map(|v| v * v).sum();
    let cmp = if cfg.gate_per_sample {
        batch
            .student
            .iter()
            .zip(&batch.teacher)
            .map(|(s, t)| if s > t { (s - t) * (s - t) } else { 0.0 })
            .sum()
    } else {
        compare_term(&batch.student, &batch.teacher)?
    };
    Ok((cfg.alpha * hard + (1.0 - cfg.alpha) * cmp) / n)
}

/// The ungated min-form of the loss. Kept for reference and testing; the
/// training path uses the gated [`kd_loss`] exclusively.
pub fn kd_loss_min_form(batch: &RelErrBatch) -> f64 {
    let n = batch.len() as f64;
    batch
        .student
        .iter()
        .zip(&batch.teacher)
        .map(|(s, t)| (s * s).min((s - t) * (s - t)))
        .sum::<f64>()
        / n
}

// ---------------------------------------------------------------------------
// teacher error lookup

/// Frozen teacher relative errors keyed by target hour. Built once from the
/// park-side predictions; the student loop only reads from it.
#[derive(Clone, Debug, Default)]
pub struct TeacherErrors {
    map: HashMap<DateTime<Utc>, f64>,
}

impl TeacherErrors {
    pub fn new(times: &[DateTime<Utc>], rel_errs: &[f64]) -> Result<Self> {
        if times.len() != rel_errs.len() {
            return Err(Error::LengthMismatch(times.len(), rel_errs.len()));
        }
        Ok(TeacherErrors {
            map: times.iter().copied().zip(rel_errs.iter().copied()).collect(),
        })
    }

    pub fn get(&self, t: DateTime<Utc>) -> Option<f64> {
        self.map.get(&t).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Teacher errors aligned to a window set's target hours, in record
    /// order. Any uncovered hour fails the alignment.
    fn aligned(&self, set: &SupervisedSet) -> Result<Vec<f64>> {
        set.target_times
            .iter()
            .map(|t| self.get(*t).ok_or(Error::NoOverlap))
            .collect()
    }

    pub fn mean(&self, times: &[DateTime<Utc>]) -> Result<f64> {
        if times.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut sum = 0.0;
        for t in times {
            sum += self.get(*t).ok_or(Error::NoOverlap)?;
        }
        Ok(sum / times.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// the student training loop

/// One row of the per-epoch distillation log.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KdEpochLog {
    pub epoch: usize,
    pub hard_term: f64,
    pub compare_term: f64,
    pub total: f64,
    pub gate_open_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct KdReport {
    pub pretrain: TrainReport,
    pub epochs_run: usize,
    pub stopped_beating_teacher: bool,
    pub student_val_rel_err: f64,
    pub teacher_val_rel_err: f64,
    pub logs: Vec<KdEpochLog>,
}

/// Mean relative error of inference predictions over a set, physical units.
pub fn set_rel_error(net: &TurbineNet, set: &SupervisedSet, denom_floor: f64) -> f64 {
    let seq_len = set.seq_len();
    let mut xs = vec![0.0; seq_len * set.seq_dim()];
    let scaler = &set.scalers.power;
    let mut sum = 0.0;
    for i in 0..set.len() {
        set.write_seq(i, &mut xs);
        let pred = scaler.invert(net.predict(&xs, seq_len));
        let measured = scaler.invert(set.targets[i]);
        sum += rel_error(measured, pred, set.capacity_kw, denom_floor);
    }
    sum / set.len() as f64
}

/// Distillation training: a plain regression pretrain on the turbine data,
/// then fine-tuning under the gated teacher-comparison loss. The teacher
/// enters only through its frozen per-hour relative errors; with
/// `alpha = 1` those values never influence a gradient.
pub fn train_student_kd(
    student: &mut TurbineNet,
    train: &SupervisedSet,
    val: &SupervisedSet,
    teacher: &TeacherErrors,
    cfg: &KdConfig,
    pretrain: &TrainSpec,
    finetune: &TrainSpec,
) -> Result<KdReport> {
    let teacher_train = teacher.aligned(train)?;
    let teacher_val_rel_err = teacher.mean(&val.target_times)?;

    let pretrain_report = train_network(student, train, Some(val), pretrain)?;

    let seq_len = train.seq_len();
    let dim = train.seq_dim();
    let scaler = train.scalers.power;
    let cap = train.capacity_kw;
    let mut rng = ChaCha8Rng::seed_from_u64(finetune.seed);
    let mut adam = Adam::new(finetune.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut logs = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_weights: Option<ModelContainer> = None;
    let mut since_best = 0usize;
    let mut stopped_beating = false;
    let mut epochs_run = 0usize;
    let mut student_val = set_rel_error(student, val, cfg.denom_floor);

    for epoch in 0..finetune.max_epochs {
        order.shuffle(&mut rng);
        let mut hard_sum = 0.0;
        let mut cmp_sum = 0.0;
        let mut gates_open = 0usize;
        let mut gate_slots = 0usize;
        let mut xs = vec![0.0; seq_len * dim];

        for batch in order.chunks(finetune.batch_size) {
            let b = batch.len() as f64;
            // forward pass first; the gate needs the whole batch
            let mut preds = Vec::with_capacity(batch.len());
            let mut s = Vec::with_capacity(batch.len());
            let mut t = Vec::with_capacity(batch.len());
            let mut traces = Vec::with_capacity(batch.len());
            for &i in batch {
                train.write_seq(i, &mut xs);
                let (out0, trace) = match &mut *student {
                    TurbineNet::Bi(n) => {
                        let tr = n.forward(&xs, seq_len, Some(&mut rng));
                        (tr.outputs[0], KdTrace::Bi(tr))
                    }
                    TurbineNet::Ed(n) => {
                        let tr = n.forward(&xs, seq_len, 1, Some(&mut rng));
                        (tr.outputs[0], KdTrace::Ed(tr))
                    }
                };
                let pred = scaler.invert(out0);
                let measured = scaler.invert(train.targets[i]);
                s.push(rel_error(measured, pred, cap, cfg.denom_floor));
                t.push(teacher_train[i]);
                preds.push((pred, measured));
                traces.push(trace);
            }

            let gate_open = if cfg.alpha == 1.0 {
                false
            } else if cfg.gate_per_sample {
                true // per-sample gates are resolved inside the loop below
            } else {
                let s2: f64 = s.iter().map(|v| v * v).sum();
                let t2: f64 = t.iter().map(|v| v * v).sum();
                s2 > t2
            };

            for (k, trace) in traces.into_iter().enumerate() {
                let (pred, measured) = preds[k];
                let denom = measured.abs().max(cfg.denom_floor * cap);
                // d s / d standardized output
                let ds_dy = (pred - measured).signum() / denom * scaler.std;
                let mut d_loss_ds = 2.0 * cfg.alpha * s[k];
                if cfg.alpha < 1.0 {
                    let open = if cfg.gate_per_sample {
                        let o = s[k] > t[k];
                        gate_slots += 1;
                        if o {
                            gates_open += 1;
                            cmp_sum += (s[k] - t[k]) * (s[k] - t[k]);
                        }
                        o
                    } else {
                        gate_open
                    };
                    if open {
                        d_loss_ds += 2.0 * (1.0 - cfg.alpha) * (s[k] - t[k]);
                    }
                }
                let d_out0 = d_loss_ds * ds_dy / b;
                match (&mut *student, trace) {
                    (TurbineNet::Bi(n), KdTrace::Bi(tr)) => {
                        let mut d_out = vec![0.0; tr.outputs.len()];
                        d_out[0] = d_out0;
                        n.backward(&tr, &d_out);
                    }
                    (TurbineNet::Ed(n), KdTrace::Ed(tr)) => {
                        n.backward(&tr, &[d_out0]);
                    }
                    _ => unreachable!("trace kind follows the network kind"),
                }
                hard_sum += s[k] * s[k];
            }
            if !cfg.gate_per_sample && cfg.alpha < 1.0 {
                gate_slots += 1;
                if gate_open {
                    gates_open += 1;
                    cmp_sum += s
                        .iter()
                        .zip(&t)
                        .map(|(si, ti)| (si - ti) * (si - ti))
                        .sum::<f64>();
                }
            }
            adam.step(&mut student.params_mut());
        }

        let n = train.len() as f64;
        let hard_term = hard_sum / n;
        let cmp_term = cmp_sum / n;
        let log = KdEpochLog {
            epoch,
            hard_term,
            compare_term: cmp_term,
            total: cfg.alpha * hard_term + (1.0 - cfg.alpha) * cmp_term,
            gate_open_fraction: if gate_slots == 0 {
                0.0
            } else {
                gates_open as f64 / gate_slots as f64
            },
        };
        logs.push(log);
        epochs_run = epoch + 1;

        student_val = set_rel_error(student, val, cfg.denom_floor);
        if cfg.stop_on_beating_teacher && student_val < teacher_val_rel_err {
            stopped_beating = true;
            best_weights = None; // current weights already beat the teacher
            break;
        }
        if student_val < best_val - finetune.min_delta {
            best_val = student_val;
            since_best = 0;
            if finetune.restore_best {
                best_weights = Some(student.to_container());
            }
        } else {
            since_best += 1;
            if since_best > finetune.patience {
                break;
            }
        }
    }

    if let Some(snapshot) = best_weights {
        snapshot.restore(student)?;
        student_val = set_rel_error(student, val, cfg.denom_floor);
    }
    Ok(KdReport {
        pretrain: pretrain_report,
        epochs_run,
        stopped_beating_teacher: stopped_beating,
        student_val_rel_err: student_val,
        teacher_val_rel_err,
        logs,
    })
}

enum KdTrace {
    Bi(crate::recurrent::bilstm::BiTrace),
    Ed(crate::recurrent::edlstm::EdTrace),
}
