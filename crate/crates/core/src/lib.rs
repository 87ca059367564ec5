//! Survey-signal case regression: panel ingestion, F-score feature ranking,
//! tabular models, global and per-state training suites, and error and
//! importance reports.

pub mod error;
pub mod featsel;
pub mod ingest;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod orchestrate;
mod serde_float;
pub mod tabmodels;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{fit_model, Estimator, ModelFamily, ModelParams, TrainedModel};

pub use symcast_neural as neural;
