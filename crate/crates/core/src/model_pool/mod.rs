//! The anchorer: a pool of classical forecasters, a clustered case library
//! with per-cluster model losses, and the softmax-weighted ensemble baseline.

mod library;
mod models;
mod plugin;
mod snapshot;

pub use library::{
    anchor_forecast, baseline_mse, build_case_library, cluster_purity, ensemble_weights, CaseLibrary, Cluster,
    EnsembleBaseline, ExcludedModel, LibraryConfig, ModelOutput, ModelWeight,
};
pub use models::{
    Autoregressive, ExponentialSmoothing, ForecastModel, LinearTrend, ModelSpec, MovingAverage, Naive, SeasonalNaive,
};
pub use plugin::{lookback_csv, parse_plugin_output, ExternalModel, HORIZON_ENV};
pub use snapshot::{load_library, read_library, save_library, write_library, LibraryManifest, MAGIC, VERSION};
