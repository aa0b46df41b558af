//! JSON run configurations. Precedence: built-in defaults, then the config
//! file, then command-line flags.

use std::path::{Path, PathBuf};

use daml_core::data::{
    gen_negbin_panel, gen_synthetic_1d, load_panel_csv, make_lag_features, standardize_features, NegBinPanelSpec,
    PanelDataset, Split, SplitName,
};
use daml_core::eval::BaselineRanker;
use daml_core::models::ModelSpec;
use daml_core::training::{ParetoConfig, SweepGrid, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn default_true() -> bool {
    true
}
fn default_train_frac() -> f64 {
    0.7
}
fn default_val_frac() -> f64 {
    0.15
}
fn default_sites() -> usize {
    NegBinPanelSpec::default().n_sites
}
fn default_periods() -> usize {
    NegBinPanelSpec::default().n_periods
}
fn default_features() -> usize {
    NegBinPanelSpec::default().n_features
}
fn default_q_range() -> (f64, f64) {
    NegBinPanelSpec::default().q_range
}

/// Where the panel comes from and how it is prepared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Seven-site benchmark with a fixed 400 / 50 / 50 split.
    Synthetic1d {
        #[serde(default)]
        seed: u64,
    },
    Negbin {
        #[serde(default = "default_sites")]
        n_sites: usize,
        #[serde(default = "default_periods")]
        n_periods: usize,
        #[serde(default = "default_features")]
        n_features: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_q_range")]
        q_range: (f64, f64),
        #[serde(default = "default_true")]
        standardize: bool,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_train_frac")]
        train_frac: f64,
        #[serde(default = "default_val_frac")]
        val_frac: f64,
        #[serde(default = "default_true")]
        standardize: bool,
        /// Lagged counts appended as features; 0 adds none.
        #[serde(default)]
        lags: usize,
    },
}

impl DataConfig {
    pub fn load(&self) -> CliResult<PanelDataset> {
        let panel = match self {
            DataConfig::Synthetic1d { seed } => gen_synthetic_1d(*seed),
            DataConfig::Negbin { n_sites, n_periods, n_features, seed, q_range, standardize } => {
                let spec = NegBinPanelSpec {
                    n_sites: *n_sites,
                    n_periods: *n_periods,
                    n_features: *n_features,
                    seed: *seed,
                    q_range: *q_range,
                };
                let panel = gen_negbin_panel(spec)?;
                if *standardize {
                    standardize_features(&panel)
                } else {
                    panel
                }
            }
            DataConfig::Csv { path, train_frac, val_frac, standardize, lags } => {
                let raw = load_panel_csv(path)?;
                let split = Split::by_fraction(raw.n_periods(), *train_frac, *val_frac)?;
                let mut panel = raw.with_split(split)?;
                if *lags > 0 {
                    panel = make_lag_features(&panel, *lags)?;
                }
                if *standardize {
                    standardize_features(&panel)
                } else {
                    panel
                }
            }
        };
        Ok(panel)
    }
}

/// `daml train`: one run, or one run per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: SweepGrid,
    /// Test-split evaluation of the selected run; 0 trials skips it.
    #[serde(default = "default_test_trials")]
    pub test_trials: usize,
    #[serde(default = "default_test_trials")]
    pub test_samples: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_test_trials() -> usize {
    1000
}

/// `daml pareto`: the likelihood / BPR / DAML frontier experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoRunConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub pareto: ParetoConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// `daml evaluate`: a checkpoint or a reference ranker on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub baseline: Option<BaselineRanker>,
    /// Needed only when the checkpoint does not record its model.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_test_trials")]
    pub n_samples: usize,
    #[serde(default = "default_test_trials")]
    pub n_trials: usize,
    #[serde(default = "default_split")]
    pub split: SplitName,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    1
}
fn default_split() -> SplitName {
    SplitName::Test
}

/// Reads a config file, or the `config` of a manifest written by the same
/// command, so a manifest reruns its result.
pub fn read_config<T: DeserializeOwned>(path: &Path, command: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let value = match value {
        serde_json::Value::Object(ref map) if map.contains_key("manifest_schema_version") => {
            let recorded = map.get("command").and_then(|c| c.as_str()).unwrap_or_default();
            if recorded != command {
                return Err(CliError::config(format!(
                    "{}: manifest is for '{recorded}', not '{command}'",
                    path.display()
                )));
            }
            map.get("config").cloned().ok_or_else(|| CliError::config("manifest has no config"))?
        }
        other => other,
    };
    serde_json::from_value(value).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}
