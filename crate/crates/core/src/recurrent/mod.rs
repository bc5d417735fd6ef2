//! Recurrent forecasting networks and their shared training loop.

pub mod bilstm;
pub mod edlstm;
pub mod lstm;
pub mod train;

pub use bilstm::{BiLstmNet, BILSTM_HIDDEN, CONTAINER_KIND_BILSTM};
pub use edlstm::{EdLstmNet, CONTAINER_KIND_EDLSTM, EDLSTM_HIDDEN, EDLSTM_LAYERS};
pub use lstm::{LstmLayer, SeqTrace};
pub use train::{grad_check_turbine, predict_set, train_network, TrainReport, TrainSpec, TurbineNet};
