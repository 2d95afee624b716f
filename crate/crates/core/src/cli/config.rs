use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ColumnSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// GloVe-format text file; its dimension must equal `model.word_dim`.
    pub embeddings: Option<PathBuf>,
    pub columns: ColumnSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub epsilon: f64,
    /// Coordinates sampled per loss term.
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            samples: 40,
            seed: 0,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub slot_types: usize,
    pub vocab_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            train_size: 200,
            dev_size: 50,
            test_size: 50,
            slot_types: 4,
            vocab_size: 60,
        }
    }
}

/// Everything a subcommand can read, as stored in the TOML config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Column name in the ablation table.
    pub dataset_name: String,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gradcheck: GradcheckConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("slotfill-out"),
            dataset_name: "data".into(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            gradcheck: GradcheckConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let g = &self.gradcheck;
        if !(g.epsilon > 0.0) || !(g.tolerance > 0.0) || g.samples == 0 {
            return Err(Error::Config(
                "gradcheck needs epsilon > 0, tolerance > 0 and samples >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Path of a required input, or a config error naming the key.
    pub fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        path.clone()
            .ok_or_else(|| Error::Config(format!("`data.{key}` is not set (config file or --{key})")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PosSource;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = RunConfig::from_toml(
            "[train]\nlearning_rate = 0.01\n[train.weights]\nalpha = 0.0\n[data.columns]\ntag_col = 1\npos = { kind = \"hash\" }\n",
        )
        .unwrap();
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!((c.train.weights.alpha, c.train.weights.beta), (0.0, 0.1));
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.data.columns.pos, PosSource::Hash);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = RunConfig::from_toml("[train]\nlearning_rat = 0.01\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
}
