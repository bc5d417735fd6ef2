//! Park-to-turbine wind power forecasting.
//!
//! The library covers the full chain from raw SCADA-style series to an
//! evaluated multi-model comparison:
//!
//! * [`data`] — ingestion, hourly averaging, standardization, windowing,
//!   white-noise augmentation, chronological splits.
//! * [`nn`] — dense layers, losses, Adam, finite-difference gradient checks,
//!   model containers. All math is `f64` and hand-backpropagated.
//! * [`recurrent`] — LSTM layers with full BPTT, a bidirectional forecaster
//!   and an encoder-decoder forecaster, plus the shared training loop.
//! * [`transfer`] — sparse regularized training of the univariate relation
//!   network and its MMD-aligned fine-tuning to a new domain.
//! * [`distill`] — relative-error operators and the gated teacher-student
//!   distillation loss and loop.
//! * [`pipeline`] — park teachers, residual relation fitting, turbine
//!   bundles and the label-free test-time correction path.
//! * [`synth`] — a seeded synthetic wind park generator with terrain
//!   profiles and a coarse forecast-speed proxy channel.
//! * [`evaluate`] — RMSE, qualified rate, rank-based significance testing,
//!   rising rates and parameter counting.
//! * [`run`] — experiment drivers: grid search, the six-model comparison
//!   run, and report emission. The `windkd` binary is a thin wrapper over
//!   this module.

pub mod data;
pub mod distill;
pub mod error;
pub mod evaluate;
pub mod nn;
pub mod pipeline;
pub mod recurrent;
pub mod run;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
