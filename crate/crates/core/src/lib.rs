//! Causal multi-task deep ensembles: networks whose untrained outputs follow a
//! multi-task Gaussian process prior over potential outcomes, together with an
//! exact GP reference model, data generators and evaluation metrics.

pub mod cmgp;
pub mod datagen;
pub mod ensemble;
pub mod error;
pub mod gpkernels;
pub mod kernelcheck;
pub mod learner;
pub mod metrics;
pub mod nets;
pub mod numerics;
pub mod synthetic;

pub use error::{Error, Result};
