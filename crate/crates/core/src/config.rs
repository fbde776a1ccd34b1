//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! dataset = "mnist"
//! dir = "data/mnist"
//!
//! [model]
//! arch = "mnist-dwsep"
//!
//! [search]
//! candidates = [1, 8]
//! lr_alpha = 0.003
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::train::TrainConfig;
use crate::nn::zoo::Architecture;
use crate::oracle::OracleConfig;
use crate::search::SearchConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    /// Synthetic planted-sensitivity task (see [`crate::data::planted_task`]).
    Planted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    /// Directory with the raw files; defaults to `data/<dataset>`.
    pub dir: Option<PathBuf>,
    /// Stratified subsample of the training file before splitting.
    pub train_limit: Option<usize>,
    /// Stratified subsample of the test file.
    pub test_limit: Option<usize>,
    /// Share of the training data held out for the validation loss.
    pub valid_fraction: f64,
    /// Number of CIFAR-10 training batch files to read (1 to 5).
    pub cifar_batches: usize,
    /// Sample counts and input width of the planted task.
    pub planted_train: usize,
    pub planted_test: usize,
    pub planted_dim: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            dir: None,
            train_limit: None,
            test_limit: None,
            valid_fraction: 0.1,
            cifar_batches: 1,
            planted_train: 3000,
            planted_test: 1000,
            planted_dim: 8,
        }
    }
}

impl DataConfig {
    pub fn resolved_dir(&self) -> PathBuf {
        self.dir.clone().unwrap_or_else(|| {
            Path::new("data").join(match self.dataset {
                DatasetKind::Mnist => "mnist",
                DatasetKind::Cifar10 => "cifar10",
                DatasetKind::Planted => "planted",
            })
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Also fine-tune uniform 8-bit and binary models for the scheme table.
    pub uniform_baselines: bool,
    /// Loss tolerances for `sweep`.
    pub sweep_thetas: Vec<f64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            uniform_baselines: true,
            sweep_thetas: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataConfig,
    pub model: Architecture,
    pub pretrain: TrainConfig,
    pub search: SearchConfig,
    pub finetune: TrainConfig,
    pub oracle: OracleConfig,
    pub report: ReportConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: Architecture::MnistDwsep {
                widths: [16, 32],
                dw_multiplier: 8,
            },
            pretrain: TrainConfig {
                epochs: 8,
                ..TrainConfig::default()
            },
            search: SearchConfig::default(),
            finetune: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            oracle: OracleConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.data.valid_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("data.valid_fraction must lie in (0, 1), got {f}")));
        }
        for (name, t) in [("pretrain", &self.pretrain), ("finetune", &self.finetune), ("oracle.budget", &self.oracle.budget)] {
            if t.batch_size == 0 {
                return Err(Error::Config(format!("{name}.batch_size must be positive")));
            }
        }
        self.search.candidate_list()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Config::default();
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = Config::from_toml(
            "seed = 3\n[data]\ndataset = \"planted\"\n[model]\narch = \"mlp\"\ndims = [8, 1, 16, 2]\n[search]\ntheta = 0.25\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.search.theta, Some(0.25));
        assert_eq!(cfg.search.candidates, vec![1, 8]);
        assert_eq!(cfg.model, Architecture::Mlp { dims: vec![8, 1, 16, 2] });
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(Config::from_toml("[search]\nlr_alhpa = 1.0\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[data]\nvalid_fraction = 1.0\n"), Err(Error::Config(_))));
        assert!(Config::from_toml("[search]\ncandidates = [0]\n").is_err());
    }
}
