use std::fmt::Display;

use serde::{Deserialize, Serialize};

use super::{mae_rmse, predict_bayesian, predict_deterministic, predictive_nll, EvalError, TestPrediction};
use crate::bayesmodel::{train_rbnn, RbnnConfig};
use crate::datapipe::{segment_windows, Dataset, State, STATE_DIM};
use crate::detmodel::{train_rffnn, RffnnConfig, StopReason};

/// Validation scores for one window length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HMetrics {
    pub rmse: [f64; STATE_DIM],
    pub nll: Option<f64>,
}

impl HMetrics {
    fn mean_rmse(&self) -> f64 {
        self.rmse.iter().sum::<f64>() / STATE_DIM as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h: usize,
    pub metrics: Option<HMetrics>,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Smallest channel-averaged RMSE.
    #[default]
    MinRmse,
    /// Smallest rank(RMSE) + rank(NLL).
    RankSum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rule: SelectionRule,
    pub rows: Vec<SweepRow>,
    pub chosen: Option<usize>,
}

/// Rank as the number of strictly smaller values.
fn rank(values: &[f64], x: f64) -> usize {
    values.iter().filter(|v| **v < x).count()
}

/// Chosen window length among successful rows; ties go to the smaller `H`.
pub fn select_h(rows: &[SweepRow], rule: SelectionRule) -> Option<usize> {
    let mut ok: Vec<(usize, HMetrics)> = rows.iter().filter_map(|r| r.metrics.map(|m| (r.h, m))).collect();
    if rule == SelectionRule::RankSum {
        ok.retain(|(_, m)| m.nll.is_some());
    }
    ok.sort_by_key(|(h, _)| *h);
    let score: Vec<f64> = match rule {
        SelectionRule::MinRmse => ok.iter().map(|(_, m)| m.mean_rmse()).collect(),
        SelectionRule::RankSum => {
            let rm: Vec<f64> = ok.iter().map(|(_, m)| m.mean_rmse()).collect();
            let nl: Vec<f64> = ok.iter().map(|(_, m)| m.nll.unwrap()).collect();
            rm.iter().zip(&nl).map(|(r, n)| (rank(&rm, *r) + rank(&nl, *n)) as f64).collect()
        }
    };
    let mut best: Option<(usize, f64)> = None;
    for ((h, _), s) in ok.iter().zip(score) {
        if best.map_or(true, |(_, b)| s < b) {
            best = Some((*h, s));
        }
    }
    best.map(|(h, _)| h)
}

/// Runs `train_eval(h, seed)` for every requested `H` in order. A failure is
/// recorded in its row and the sweep moves on.
pub fn h_sweep<F, E>(hs: &[usize], seed: u64, rule: SelectionRule, train_eval: F) -> SweepTable
where
    F: Fn(usize, u64) -> Result<HMetrics, E>,
    E: Display,
{
    let rows: Vec<SweepRow> = hs
        .iter()
        .map(|&h| match train_eval(h, seed) {
            Ok(m) => SweepRow {
                h,
                metrics: Some(m),
                error: None,
            },
            Err(e) => {
                log::warn!("sweep H={h} failed: {e}");
                SweepRow {
                    h,
                    metrics: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    let chosen = select_h(&rows, rule);
    SweepTable { rule, rows, chosen }
}

fn pooled(preds: &[TestPrediction]) -> (Vec<State>, Vec<State>, Vec<State>) {
    let mut mean = Vec::new();
    let mut var = Vec::new();
    let mut truth = Vec::new();
    for p in preds {
        mean.extend_from_slice(&p.mean);
        truth.extend_from_slice(&p.truth);
        if let Some(v) = &p.var {
            var.extend_from_slice(v);
        }
    }
    (mean, var, truth)
}

fn diverged(stop: &StopReason) -> Option<String> {
    match stop {
        StopReason::Diverged { epoch } => Some(format!("training diverged at epoch {epoch}")),
        _ => None,
    }
}

/// Window-length sweep for the deterministic model on normalized data.
pub fn sweep_rffnn(train: &Dataset, val: &Dataset, hs: &[usize], cfg: &RffnnConfig) -> SweepTable {
    h_sweep(hs, cfg.seed, SelectionRule::MinRmse, |h, seed| -> Result<HMetrics, String> {
        let tw = segment_windows(train, h).map_err(|e| e.to_string())?;
        let vw = segment_windows(val, h).map_err(|e| e.to_string())?;
        let run = train_rffnn(&tw, &vw, &RffnnConfig { seed, ..cfg.clone() }).map_err(|e| e.to_string())?;
        if let Some(msg) = diverged(&run.stop) {
            return Err(msg);
        }
        let preds = predict_deterministic(&run.model, &run.arch, val).map_err(|e| e.to_string())?;
        let (mean, _, truth) = pooled(&preds);
        let ch = mae_rmse(&mean, &truth).map_err(|e| e.to_string())?;
        Ok(HMetrics {
            rmse: ch.map(|c| c.rmse),
            nll: None,
        })
    })
}

/// Window-length sweep for the Bayesian model on normalized data.
pub fn sweep_rbnn(train: &Dataset, val: &Dataset, hs: &[usize], cfg: &RbnnConfig, n_mc: usize) -> SweepTable {
    h_sweep(hs, cfg.seed, SelectionRule::RankSum, |h, seed| -> Result<HMetrics, String> {
        let tw = segment_windows(train, h).map_err(|e| e.to_string())?;
        let vw = segment_windows(val, h).map_err(|e| e.to_string())?;
        let run = train_rbnn(&tw, &vw, &RbnnConfig { seed, ..cfg.clone() }).map_err(|e| e.to_string())?;
        if let Some(msg) = diverged(&run.stop) {
            return Err(msg);
        }
        let preds = predict_bayesian(&run.model, &run.arch, val, n_mc, seed).map_err(|e| e.to_string())?;
        let (mean, var, truth) = pooled(&preds);
        let ch = mae_rmse(&mean, &truth).map_err(|e| e.to_string())?;
        Ok(HMetrics {
            rmse: ch.map(|c| c.rmse),
            nll: Some(predictive_nll(&mean, &var, &truth).map_err(|e| e.to_string())?),
        })
    })
}

/// Columns `H, val_rmse_p, val_rmse_q, val_rmse_third, val_nll`; failed rows
/// and deterministic NLL are left empty.
pub fn write_sweep_csv<W: std::io::Write>(table: &SweepTable, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["H", "val_rmse_p", "val_rmse_q", "val_rmse_third", "val_nll"])?;
    for r in &table.rows {
        let mut rec = vec![r.h.to_string()];
        match &r.metrics {
            Some(m) => {
                rec.extend(m.rmse.iter().map(|x| x.to_string()));
                rec.push(m.nll.map_or(String::new(), |x| x.to_string()));
            }
            None => rec.extend(std::iter::repeat(String::new()).take(4)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
