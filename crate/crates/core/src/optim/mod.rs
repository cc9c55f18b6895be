//! Loss, Adam and the training loop with early stopping and plateau
//! learning-rate reduction.

pub mod adam;
pub mod loss;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use loss::{bce_data, bce_loss};
pub use train::{evaluate, train, train_with, EpochRecord, PlateauMonitor, TrainHyper, TrainState};
