use std::fs;
use std::path::{Path, PathBuf};

use qapseg::data::Normalization;
use qapseg::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Number of synthetic phantoms to generate.
    pub synthetic: Option<usize>,
    /// Dataset manifest; mutually exclusive with `synthetic`.
    pub manifest: Option<PathBuf>,
    /// Side length every sample is resized to.
    pub size: usize,
    pub normalization: Normalization,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: Some(200),
            manifest: None,
            size: 64,
            normalization: Normalization::MinMax,
        }
    }
}

/// Everything a training or ablation run depends on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives model initialisation, data generation, splitting and training.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| qapseg::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Tie dependent fields together and check the result.
    pub fn finish(mut self) -> CliResult<Self> {
        match (&self.data.synthetic, &self.data.manifest) {
            (Some(_), Some(_)) => {
                return Err(CliError::config(
                    "choose either a synthetic dataset or a manifest, not both",
                ))
            }
            (None, None) => {
                return Err(CliError::config(
                    "no dataset: pass --synthetic N or --manifest PATH",
                ))
            }
            (Some(n), None) if *n < 10 => {
                return Err(CliError::config(format!(
                    "synthetic dataset needs at least 10 samples, got {n}"
                )))
            }
            _ => {}
        }
        if self.data.synthetic.is_some() && self.data.size < 32 {
            return Err(CliError::config(format!(
                "synthetic phantoms need size >= 32, got {}",
                self.data.size
            )));
        }
        self.model.input_size = (self.data.size, self.data.size);
        self.train.seed = self.seed;
        self.model.validate()?;
        self.train.validate(self.model.num_classes)?;
        Ok(self)
    }
}
