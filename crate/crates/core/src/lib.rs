//! Agentic time series forecasting anchored on a classical model ensemble.
//!
//! A case library of clustered training windows picks softmax weights for a
//! pool of classical forecasters. A policy (a deterministic mock or a remote
//! chat endpoint) plans diagnostic tools, refines the ensemble baseline and
//! has its candidate checked by a reflector, with bounded retries and a mean
//! fallback. A strategy memory stores the best tool schedules found on
//! training data, and the reward module scores trajectories for external
//! fine-tuning.

pub mod error;
pub mod ingest;
pub mod memory;
pub mod metrics;
pub mod model_pool;
pub mod reward;
pub(crate) mod serde_nan;
pub mod series;
pub mod stats;
pub mod synthetic;
pub mod toolkit;
pub mod workflow;

pub use error::{Error, Result, ToolFailure, WorkflowFailure};
pub use metrics::{Forecast, Provenance};
pub use series::{ChannelLayout, LookbackView, TimeSeries, Window};
pub use toolkit::Mode;
