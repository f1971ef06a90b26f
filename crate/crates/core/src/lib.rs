//! Gaussian-process surrogate modeling for response surfaces with jumps.

pub mod error;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod local;

pub use error::{Error, Result};
pub use gp::{Dataset, FitConfig, FitOutcome, GpModel, PredictiveResult};
pub use kernel::{CovFactor, Hyperparams};
pub use local::{Method, Neighborhood, OlagpConfig, OlagpTrace, RefitSchedule};
