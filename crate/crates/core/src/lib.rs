//! Multi-scale time-informed patch forecasting.
//!
//! A forecast runs through three stages. The representation cuts the
//! lookback into patches at K scales and embeds each patch together with
//! its calendar context. A stack of mixer blocks with optional sparse
//! attention enriches the patch tokens. Per-scale recurrent heads project
//! back to the horizon and their forecasts are summed.
//!
//! The [`experiments`] module drives training runs, random search,
//! ablation analytics and efficiency profiling.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod memory;
pub mod model;
pub mod nn;
pub mod params;
pub mod projection;
pub mod representation;
pub mod training;

pub use config::{ExperimentConfig, ModelConfig, TrainConfig};
pub use error::{Error, Result};
pub use model::{build_model, Model, ParamCount};
pub use training::{fit, RunReport};
