//! Delay- and resistance-conditioned GAN.
//!
//! The generator predicts the resistance after an arbitrary delay from the
//! current one. Training pits it against a packed sequence discriminator fed
//! closed-loop rollouts, and against a delay discriminator that compares a
//! single call at delay `d` with `q` chained calls at `d / q`.

mod config;
mod data;
mod discriminator;
mod generator;
mod model;
mod train;

pub use config::{GanArch, TrainConfig};
pub use data::{sample_real_subsequences, TrainingData};
pub use discriminator::{DiscTrace, Discriminator, PackInput};
pub use generator::{GenTrace, Generator, Rollout};
pub use model::GanModel;
pub use train::{write_log, LogRow, PhaseOutcome, StepLosses, Trainer, LOG_HEADER};
