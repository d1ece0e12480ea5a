use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use rbnn_core::bayesmodel::VariationalParams;
use rbnn_core::datapipe::{load_csv, split_dataset, Dataset, NormStats, TestKind};
use rbnn_core::detmodel::StopReason;
use rbnn_core::gradcore::{NetArch, ParamVector};

use crate::config::TrainConfig;
use crate::io::{coded, require_file, EXIT_CONFIG, EXIT_MISMATCH};

pub const CHECKPOINT_FORMAT: &str = "rbnn-checkpoint/1";

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    require_file(path)?;
    load_csv(path).map_err(|e| coded(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

/// Train and validation splits normalized with stats fitted on train.
pub struct Prepared {
    pub norm: NormStats,
    pub train: Dataset,
    pub val: Dataset,
}

pub fn prepare(cfg: &TrainConfig, ds: &Dataset) -> Result<Prepared> {
    let (train, val, _) = split_dataset(ds, &cfg.split).map_err(|e| coded(EXIT_CONFIG, e.to_string()))?;
    if train.is_empty() {
        return Err(coded(EXIT_CONFIG, "training split is empty"));
    }
    let norm = NormStats::fit(&train, cfg.constant_fields).map_err(|e| coded(EXIT_CONFIG, e.to_string()))?;
    Ok(Prepared {
        train: norm.normalize(&train)?,
        val: norm.normalize(&val)?,
        norm,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Trained {
    Rffnn { params: ParamVector },
    Rbnn { posterior: VariationalParams },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    #[serde(flatten)]
    pub model: Trained,
    pub arch: NetArch,
    pub test_kind: TestKind,
    #[serde(rename = "H")]
    pub h: usize,
    pub norm_stats: NormStats,
    pub config: TrainConfig,
    pub seed: u64,
    pub best_epoch: usize,
    pub stop: StopReason,
}

impl Checkpoint {
    pub fn check_format(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(coded(EXIT_CONFIG, format!("unsupported checkpoint format `{}`", self.format)));
        }
        Ok(())
    }

    /// Normalizes `ds` with the stored stats; any disagreement with the
    /// dataset is a mismatch.
    pub fn normalize(&self, ds: &Dataset) -> Result<Dataset> {
        let kind = ds.kind().map_err(|e| coded(EXIT_MISMATCH, e.to_string()))?;
        if kind != self.test_kind {
            return Err(coded(
                EXIT_MISMATCH,
                format!("dataset holds {} tests, checkpoint was trained on {}", kind.as_str(), self.test_kind.as_str()),
            ));
        }
        self.norm_stats
            .normalize(ds)
            .map_err(|e| coded(EXIT_MISMATCH, format!("normalization stats do not match the dataset: {e}")))
    }
}
