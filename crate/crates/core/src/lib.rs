//! Sequence-labeling engine for 1D physiological signals: a local-global
//! temporal fusion network (TCN blocks with multiscale fusion, temporal
//! self-attention skip connections, and a dilated bridge) that assigns a
//! class to every time step, plus the preprocessing, compound loss, event
//! postprocessing, and episode/duration evaluation around it.

pub mod config;
pub mod error;
pub mod explain;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
#[cfg(test)]
mod model_tests;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod postprocess;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
