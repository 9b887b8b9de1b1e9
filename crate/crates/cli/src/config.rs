//! The experiment config: one TOML document with a section per module.
//!
//! Every section has defaults; see `anchorcast.example.toml` at the
//! repository root for a commented copy.

use std::path::{Path, PathBuf};

use anchorcast::ingest::ChannelRoles;
use anchorcast::memory::{DistanceConfig, MedoidInit, MemoryConfig};
use anchorcast::model_pool::{LibraryConfig, ModelSpec};
use anchorcast::reward::RewardConfig;
use anchorcast::series::SplitSpec;
use anchorcast::toolkit::ToolkitConfig;
use anchorcast::workflow::{MockConfig, RemoteConfig, WorkflowConfig};
use anchorcast::Mode;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub window: WindowSection,
    pub split: SplitSection,
    pub toolkit: ToolkitConfig,
    pub library: LibrarySection,
    pub memory: MemoryConfig,
    pub workflow: WorkflowConfig,
    pub run: RunSection,
    pub reward: RewardConfig,
    pub calibration: CalibrationSection,
    pub export: ExportSection,
    pub adapter: AdapterSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV path, relative to the config file.
    pub path: PathBuf,
    pub target: String,
    pub exogenous: Vec<String>,
    /// Optional regime label column, used only for the purity report.
    pub label: Option<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { path: PathBuf::from("data.csv"), target: "value".into(), exogenous: vec![], label: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    pub lookback: usize,
    pub horizon: usize,
    /// Window stride, applied to every split.
    pub stride: usize,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self { lookback: 96, horizon: 96, stride: 24 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { train: 0.7, validation: 0.1, test: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibrarySection {
    /// Pool members. Empty means the default pool at `period`.
    pub pool: Vec<ModelSpec>,
    pub period: usize,
    pub k_clusters: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub init: MedoidInit,
    pub distance: DistanceConfig,
}

impl Default for LibrarySection {
    fn default() -> Self {
        let lib = LibraryConfig::default();
        Self {
            pool: vec![],
            period: 24,
            k_clusters: lib.k_clusters,
            max_iter: lib.max_iter,
            seed: lib.seed,
            init: lib.init,
            distance: lib.distance,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: Mode,
    /// Worker threads for window-level parallelism; 0 uses all cores.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Stride of the validation windows used to estimate gamma and nu.
    pub stride: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self { stride: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    /// Rollouts per validation window.
    pub group_size: usize,
    /// Base seed of the sampled rollouts.
    pub seed: u64,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self { group_size: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    #[default]
    Mock,
    Remote,
}

impl std::str::FromStr for AdapterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(AdapterKind::Mock),
            "remote" => Ok(AdapterKind::Remote),
            other => Err(format!("unknown adapter {other:?}, expected mock or remote")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSection {
    pub kind: AdapterKind,
    pub mock: MockConfig,
    pub remote: RemoteConfig,
    /// Prompt template file, relative to the config file. Built-in
    /// templates are used when unset.
    pub prompts: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config { path: origin.to_path_buf(), message: e.to_string() })?;
        cfg.validate().map_err(|message| CliError::Config { path: origin.to_path_buf(), message })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.path = base.join(&cfg.data.path);
        if let Some(p) = cfg.adapter.prompts.take() {
            cfg.adapter.prompts = Some(base.join(p));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let w = &self.window;
        if w.lookback == 0 || w.horizon == 0 || w.stride == 0 {
            return Err("window lookback, horizon and stride must be positive".into());
        }
        if self.library.period == 0 {
            return Err("library period must be positive".into());
        }
        if self.calibration.stride == 0 {
            return Err("calibration stride must be positive".into());
        }
        if self.export.group_size < 2 {
            return Err("export group_size must be at least 2".into());
        }
        self.split_spec(w.stride).validate().map_err(|e| e.to_string())?;
        for m in &self.pool() {
            m.validate().map_err(|e| e.to_string())?;
        }
        self.memory.validate().map_err(|e| e.to_string())?;
        self.workflow.validate().map_err(|e| e.to_string())?;
        self.reward.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn roles(&self) -> ChannelRoles {
        ChannelRoles {
            target: self.data.target.clone(),
            exogenous: self.data.exogenous.clone(),
            label: self.data.label.clone(),
        }
    }

    pub fn split_spec(&self, stride: usize) -> SplitSpec {
        SplitSpec {
            train_fraction: self.split.train,
            validation_fraction: self.split.validation,
            test_fraction: self.split.test,
            stride,
        }
    }

    pub fn pool(&self) -> Vec<ModelSpec> {
        if self.library.pool.is_empty() {
            ModelSpec::default_pool(self.library.period)
        } else {
            self.library.pool.clone()
        }
    }

    pub fn library_config(&self) -> LibraryConfig {
        LibraryConfig {
            lookback: self.window.lookback,
            horizon: self.window.horizon,
            stride: self.window.stride,
            k_clusters: self.library.k_clusters,
            max_iter: self.library.max_iter,
            seed: self.library.seed,
            init: self.library.init,
            distance: self.library.distance,
        }
    }

    /// Applies a `--seed` override to every seeded stage.
    pub fn reseed(&mut self, seed: u64) {
        self.library.seed = seed;
        self.memory.seed = seed;
        self.export.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let cfg = RunConfig::from_toml("", Path::new("x.toml")).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.pool().len(), 6);
        assert_eq!(cfg.export.group_size, 8);
    }

    #[test]
    fn example_config_documents_the_defaults() {
        let text = include_str!("../../../anchorcast.example.toml");
        assert_eq!(RunConfig::from_toml(text, Path::new("example.toml")).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in ["bogus = 1", "[window]\nlookbak = 3", "[memory]\nk = 2", "[adapter.remote]\nkey = \"x\""] {
            let err = RunConfig::from_toml(doc, Path::new("x.toml")).unwrap_err().to_string();
            assert!(err.contains("x.toml"), "{err}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for doc in [
            "[window]\nhorizon = 0",
            "[split]\ntrain = 0.5",
            "[workflow]\nc_max = 0",
            "[export]\ngroup_size = 1",
            "[[library.pool]]\nkind = \"moving_average\"\nwindow = 0",
        ] {
            assert!(RunConfig::from_toml(doc, Path::new("x.toml")).is_err(), "{doc}");
        }
    }

    #[test]
    fn sections_parse() {
        let doc = r#"
[data]
path = "epf.csv"
target = "price"
exogenous = ["gen", "load"]

[window]
lookback = 168
horizon = 24
stride = 24

[workflow]
arch = "anchorer-only"

[run]
mode = "train"

[[library.pool]]
kind = "naive"

[[library.pool]]
kind = "seasonal_naive"
period = 168

[adapter]
kind = "remote"
"#;
        let cfg = RunConfig::from_toml(doc, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.roles().exogenous, vec!["gen", "load"]);
        assert_eq!(cfg.library_config().lookback, 168);
        assert_eq!(cfg.pool()[1], ModelSpec::SeasonalNaive { period: 168 });
        assert_eq!(cfg.run.mode, Mode::Train);
        assert_eq!(cfg.adapter.kind, AdapterKind::Remote);
    }
}
