//! Error metrics, predictive scores and the window-length sweep.
//!
//! Every metric pools (step, channel) pairs over all tests handed to it, so
//! results do not depend on test order.

mod sweep;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::bayesmodel::{posterior_predict, VariationalParams};
use crate::datapipe::{full_sequence, Dataset, State, STATE_DIM};
use crate::detmodel::{rollout_window, ModelError};
use crate::gradcore::{NetArch, ParamVector};

pub use sweep::{h_sweep, select_h, sweep_rbnn, sweep_rffnn, write_sweep_csv, HMetrics, SelectionRule, SweepRow, SweepTable};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("confidence level {0} outside (0, 1)")]
    Level(f64),
    #[error("test `{0}` has no prediction")]
    MissingTest(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelError {
    pub mae: f64,
    pub rmse: f64,
}

fn check_len(a: usize, b: usize, what: &str) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::Shape(format!("{what}: {a} vs {b} steps")));
    }
    Ok(())
}

/// Per-channel mean absolute and root-mean-square error over all steps.
pub fn mae_rmse(pred: &[State], truth: &[State]) -> Result<[ChannelError; STATE_DIM], EvalError> {
    check_len(pred.len(), truth.len(), "predictions vs truth")?;
    if pred.is_empty() {
        return Err(EvalError::Shape("no steps".into()));
    }
    let n = pred.len() as f64;
    let mut out = [ChannelError::default(); STATE_DIM];
    for c in 0..STATE_DIM {
        let (mut abs, mut sq) = (0.0, 0.0);
        for (p, t) in pred.iter().zip(truth) {
            let e = p[c] - t[c];
            abs += e.abs();
            sq += e * e;
        }
        out[c] = ChannelError {
            mae: abs / n,
            rmse: (sq / n).sqrt(),
        };
    }
    Ok(out)
}

fn mean_norm(pred: &[State], truth: &[State], norm: impl Fn(&[f64; STATE_DIM]) -> f64) -> Result<f64, EvalError> {
    check_len(pred.len(), truth.len(), "predictions vs truth")?;
    if pred.is_empty() {
        return Err(EvalError::Shape("no steps".into()));
    }
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| norm(&[p[0] - t[0], p[1] - t[1], p[2] - t[2]]))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Mean over steps of the L1 norm of the state error vector.
pub fn mean_l1(pred: &[State], truth: &[State]) -> Result<f64, EvalError> {
    mean_norm(pred, truth, |e| e.iter().map(|x| x.abs()).sum())
}

/// Mean over steps of the Euclidean norm of the state error vector.
pub fn mean_l2(pred: &[State], truth: &[State]) -> Result<f64, EvalError> {
    mean_norm(pred, truth, |e| e.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Gaussian negative log density averaged over steps and channels.
pub fn predictive_nll(mean: &[State], var: &[State], truth: &[State]) -> Result<f64, EvalError> {
    check_len(mean.len(), truth.len(), "mean vs truth")?;
    check_len(var.len(), truth.len(), "variance vs truth")?;
    if mean.is_empty() {
        return Err(EvalError::Shape("no steps".into()));
    }
    let mut acc = 0.0;
    for ((m, v), t) in mean.iter().zip(var).zip(truth) {
        for c in 0..STATE_DIM {
            let r = t[c] - m[c];
            acc += 0.5 * (LN_2PI + v[c].ln() + r * r / v[c]);
        }
    }
    Ok(acc / (mean.len() * STATE_DIM) as f64)
}

/// Two-sided standard-normal quantile for a central interval of mass `level`.
pub fn z_value(level: f64) -> Result<f64, EvalError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::Level(level));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}

/// Fraction of (step, channel) pairs whose truth lies in `mean -/+ z sqrt(var)`.
pub fn ci_coverage(mean: &[State], var: &[State], truth: &[State], level: f64) -> Result<f64, EvalError> {
    let z = z_value(level)?;
    check_len(mean.len(), truth.len(), "mean vs truth")?;
    check_len(var.len(), truth.len(), "variance vs truth")?;
    if mean.is_empty() {
        return Err(EvalError::Shape("no steps".into()));
    }
    let mut inside = 0usize;
    for ((m, v), t) in mean.iter().zip(var).zip(truth) {
        for c in 0..STATE_DIM {
            let half = z * v[c].sqrt();
            if (t[c] - m[c]).abs() <= half {
                inside += 1;
            }
        }
    }
    Ok(inside as f64 / (mean.len() * STATE_DIM) as f64)
}

/// Full-sequence prediction for one test, aligned with `truth = s_1..s_N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestPrediction {
    pub test_id: String,
    pub mean: Vec<State>,
    /// Predictive variance; absent for deterministic models.
    pub var: Option<Vec<State>>,
    pub epistemic: Option<Vec<State>>,
    pub truth: Vec<State>,
}

/// Rolls the deterministic model from `s_0` through every series of `ds`.
pub fn predict_deterministic(params: &ParamVector, arch: &NetArch, ds: &Dataset) -> Result<Vec<TestPrediction>, EvalError> {
    ds.series
        .iter()
        .enumerate()
        .map(|(m, s)| {
            let w = full_sequence(s, m);
            let r = rollout_window(params, arch, &w)?;
            Ok(TestPrediction {
                test_id: s.test_id.clone(),
                mean: r.predictions,
                var: None,
                epistemic: None,
                truth: w.targets,
            })
        })
        .collect()
}

/// Monte Carlo posterior prediction from `s_0` through every series of `ds`.
pub fn predict_bayesian(
    vp: &VariationalParams,
    arch: &NetArch,
    ds: &Dataset,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<TestPrediction>, EvalError> {
    ds.series
        .iter()
        .enumerate()
        .map(|(m, s)| {
            let w = full_sequence(s, m);
            let r = posterior_predict(vp, arch, &w.init, &w.exo, n_mc, seed)?;
            Ok(TestPrediction {
                test_id: s.test_id.clone(),
                mean: r.mean,
                var: Some(r.var),
                epistemic: Some(r.epistemic),
                truth: w.targets,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub test_id: String,
    pub channels: [ChannelError; STATE_DIM],
    pub mean_l1: f64,
    pub mean_l2: f64,
    pub nll: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub channels: [ChannelError; STATE_DIM],
    pub mean_l1: f64,
    pub mean_l2: f64,
    /// Present only when every prediction carries a variance.
    pub nll: Option<f64>,
    pub coverage: Option<f64>,
    pub level: f64,
    pub per_test: Vec<TestMetrics>,
}

fn metrics_for(id: &str, mean: &[State], var: Option<&[State]>, truth: &[State], level: f64) -> Result<TestMetrics, EvalError> {
    let (nll, coverage) = match var {
        Some(v) => (Some(predictive_nll(mean, v, truth)?), Some(ci_coverage(mean, v, truth, level)?)),
        None => (None, None),
    };
    Ok(TestMetrics {
        test_id: id.to_string(),
        channels: mae_rmse(mean, truth)?,
        mean_l1: mean_l1(mean, truth)?,
        mean_l2: mean_l2(mean, truth)?,
        nll,
        coverage,
    })
}

impl MetricReport {
    pub fn compute(preds: &[TestPrediction], level: f64) -> Result<Self, EvalError> {
        z_value(level)?;
        if preds.is_empty() {
            return Err(EvalError::Shape("no tests".into()));
        }
        let probabilistic = preds.iter().all(|p| p.var.is_some());
        let mut mean = Vec::new();
        let mut var = Vec::new();
        let mut truth = Vec::new();
        let mut per_test = Vec::with_capacity(preds.len());
        for p in preds {
            let v = if probabilistic { p.var.as_deref() } else { None };
            per_test.push(metrics_for(&p.test_id, &p.mean, v, &p.truth, level)?);
            mean.extend_from_slice(&p.mean);
            truth.extend_from_slice(&p.truth);
            if let Some(v) = v {
                var.extend_from_slice(v);
            }
        }
        let all = metrics_for("all", &mean, probabilistic.then_some(&var[..]), &truth, level)?;
        Ok(Self {
            channels: all.channels,
            mean_l1: all.mean_l1,
            mean_l2: all.mean_l2,
            nll: all.nll,
            coverage: all.coverage,
            level,
            per_test,
        })
    }

    /// One row per test plus a final `all` row. The coverage and NLL columns
    /// appear only for probabilistic reports.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), EvalError> {
        let probabilistic = self.nll.is_some();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "test_id", "mae_p", "mae_q", "mae_third", "rmse_p", "rmse_q", "rmse_third", "mean_l1", "mean_l2",
        ];
        if probabilistic {
            header.extend(["nll", "coverage"]);
        }
        w.write_record(&header)?;
        let total = TestMetrics {
            test_id: "all".into(),
            channels: self.channels,
            mean_l1: self.mean_l1,
            mean_l2: self.mean_l2,
            nll: self.nll,
            coverage: self.coverage,
        };
        for t in self.per_test.iter().chain(std::iter::once(&total)) {
            let mut rec = vec![t.test_id.clone()];
            rec.extend(t.channels.iter().map(|c| c.mae.to_string()));
            rec.extend(t.channels.iter().map(|c| c.rmse.to_string()));
            rec.push(t.mean_l1.to_string());
            rec.push(t.mean_l2.to_string());
            if probabilistic {
                rec.push(t.nll.map_or(String::new(), |x| x.to_string()));
                rec.push(t.coverage.map_or(String::new(), |x| x.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
