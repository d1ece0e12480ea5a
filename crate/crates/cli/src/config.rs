use std::path::PathBuf;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use rbnn_core::bayesmodel::RbnnConfig;
use rbnn_core::datapipe::{ConstantFieldPolicy, SplitSpec};
use rbnn_core::detmodel::RffnnConfig;

use crate::io::{coded, EXIT_CONFIG};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ffnn,
    Rffnn,
    Rbnn,
}

fn default_policy() -> ConstantFieldPolicy {
    ConstantFieldPolicy::Center
}

fn default_level() -> f64 {
    0.95
}

fn default_nmc() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(rename = "H")]
    pub hs: Vec<usize>,
    /// Reduced epoch budget per entry.
    pub epochs: usize,
    #[serde(default = "default_sweep_nmc")]
    pub n_mc: usize,
}

fn default_sweep_nmc() -> usize {
    100
}

/// Shared by `train`, `sweep` and the predict/evaluate defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub split: SplitSpec,
    pub model: ModelKind,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(default = "default_policy")]
    pub constant_fields: ConstantFieldPolicy,
    #[serde(default)]
    pub rffnn: RffnnConfig,
    #[serde(default)]
    pub rbnn: RbnnConfig,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_nmc")]
    pub n_mc: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub model: Option<ModelKind>,
    pub h: Option<usize>,
    pub dataset: Option<PathBuf>,
}

impl TrainConfig {
    /// Applies overrides and folds `ffnn` into `rffnn` with `H = 1`.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(m) = o.model {
            self.model = m;
        }
        if let Some(h) = o.h {
            self.h = h;
        }
        if let Some(d) = &o.dataset {
            self.dataset = d.clone();
        }
        if let Some(s) = o.seed {
            self.rffnn.seed = s;
            self.rbnn.seed = s;
        }
        if self.model == ModelKind::Ffnn {
            if o.h.is_some_and(|h| h != 1) {
                return Err(coded(EXIT_CONFIG, "model ffnn implies H = 1"));
            }
            self.model = ModelKind::Rffnn;
            self.h = 1;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        match self.model {
            ModelKind::Rbnn => self.rbnn.seed,
            _ => self.rffnn.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| coded(EXIT_CONFIG, m);
        if self.h == 0 {
            return Err(bad("H must be at least 1".into()));
        }
        if self.n_mc == 0 {
            return Err(bad("n_mc must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(bad(format!("level {} outside (0, 1)", self.level)));
        }
        self.rffnn.validate().map_err(|e| bad(e.to_string()))?;
        self.rbnn.validate().map_err(|e| bad(e.to_string()))?;
        if let Some(s) = &self.sweep {
            if s.hs.is_empty() || s.hs.contains(&0) || s.epochs == 0 || s.n_mc == 0 {
                return Err(bad("sweep needs non-empty H values >= 1, epochs > 0 and n_mc > 0".into()));
            }
        }
        Ok(())
    }
}
