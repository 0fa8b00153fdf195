pub mod ablate;
pub mod analyze;
pub mod evaluate;
pub mod overlay;
pub mod synthetic;
pub mod train;

use std::path::PathBuf;

use clap::Args as ClapArgs;
use qapseg::AblationFlags;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::config(format!("invalid {what} {p:?} in {s:?}")))
        })
        .collect()
}

/// Dataset, model and optimiser options shared by `train` and `ablate`.
/// Each flag overrides the matching field of `--config`.
#[derive(Debug, Clone, ClapArgs, Serialize)]
pub struct RunArgs {
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generate N synthetic phantoms.
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    /// Dataset manifest (JSON).
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Resize samples to SIZE x SIZE.
    #[arg(long)]
    pub size: Option<usize>,
    /// Seed for data generation, splitting, initialisation and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Channels at the first encoder level; doubles per level.
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Number of encoder levels.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Maximum training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Samples per optimiser step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Floor for plateau reductions.
    #[arg(long)]
    pub lr_min: Option<f64>,
    /// Focal loss focusing exponent.
    #[arg(long)]
    pub focal_gamma: Option<f64>,
    /// Per-class focal weights, comma-separated.
    #[arg(long, value_name = "W0,W1,..")]
    pub focal_alpha: Option<String>,
    /// Disable rotation/crop/flip augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

impl RunArgs {
    pub fn resolve(&self, flags: Option<AblationFlags>) -> CliResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.synthetic.is_some() && self.manifest.is_some() {
            return Err(CliError::config(
                "--synthetic and --manifest are mutually exclusive",
            ));
        }
        if let Some(n) = self.synthetic {
            c.data.synthetic = Some(n);
            c.data.manifest = None;
        }
        if let Some(p) = &self.manifest {
            c.data.manifest = Some(p.clone());
            c.data.synthetic = None;
        }
        if let Some(v) = self.size {
            c.data.size = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.base_channels {
            c.model.base_channels = v;
        }
        if let Some(v) = self.depth {
            c.model.depth = v;
        }
        if let Some(f) = flags {
            c.model.flags = f;
        }
        if let Some(v) = self.epochs {
            c.train.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.train.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.train.lr_init = v;
        }
        if let Some(v) = self.lr_min {
            c.train.lr_min = v;
        }
        if let Some(v) = self.focal_gamma {
            c.train.focal_gamma = v;
        }
        if let Some(s) = &self.focal_alpha {
            c.train.focal_alpha = Some(parse_list(s, "focal weight")?);
        }
        if self.no_augment {
            c.train.augment = false;
        }
        c.finish()
    }
}

pub fn parse_flags(s: &str) -> CliResult<AblationFlags> {
    AblationFlags::parse(s).map_err(CliError::from)
}
