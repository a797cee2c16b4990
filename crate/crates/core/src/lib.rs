//! Stochastic memristor drift: a metastable-switch simulator, a delay- and
//! resistance-conditioned GAN trained on its output, and gradient-based
//! design of multilevel storage quantizers on top of the trained generator.

pub mod cgan;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod normalization;
pub mod quantizer;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
