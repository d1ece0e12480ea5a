//! Deterministic recursive feedforward network: windowed rollout, Huber loss
//! and training. With `H = 1` it is a plain one-step regressor.

mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapipe::{DataError, State, Window, STATE_DIM};
use crate::gradcore::{mlp_forward_unchecked, GradError, GradTape, NetArch, ParamVector};
use crate::parallel;

pub use train::{train_rffnn, EpochRecord, RffnnConfig, StopReason, TrainRun};
pub(crate) use train::{arch_for, shuffled_batches, TAG_INIT};
#[cfg(test)]
pub(crate) use train::toy;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },
    #[error("no windows to evaluate")]
    EmptyWindows,
    #[error("{divergent} of {total} posterior samples diverged")]
    TooManyDivergent { divergent: usize, total: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub predictions: Vec<State>,
    /// Averaged elementwise Huber loss per step; empty when no targets.
    pub step_losses: Vec<f64>,
}

pub(crate) fn net_input(state: &State, exo: &[f64], buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(state);
    buf.extend_from_slice(exo);
}

pub(crate) fn check_arch(arch: &NetArch, exo: &[Vec<f64>]) -> Result<(), ModelError> {
    if arch.state_dim() != STATE_DIM {
        return Err(ModelError::Config(format!("state_dim {} != {STATE_DIM}", arch.state_dim())));
    }
    if let Some(row) = exo.first() {
        if row.len() + STATE_DIM != arch.input_dim() {
            return Err(GradError::Dimension {
                what: "network input",
                expected: arch.input_dim(),
                got: row.len() + STATE_DIM,
            }
            .into());
        }
    }
    Ok(())
}

/// Feeds each predicted mean back as the next input:
/// `s_hat_t = f(s_hat_{t-1}, u_t, theta)` starting from the measured `init`.
/// Each `exo` row is `[u_t..., theta...]`.
pub fn recursive_rollout(
    params: &ParamVector,
    arch: &NetArch,
    init: &State,
    exo: &[Vec<f64>],
) -> Result<Vec<State>, ModelError> {
    params.check(arch)?;
    check_arch(arch, exo)?;
    let mut s = *init;
    let mut x = Vec::with_capacity(arch.input_dim());
    let mut out = Vec::with_capacity(exo.len());
    for (t, row) in exo.iter().enumerate() {
        net_input(&s, row, &mut x);
        let y = mlp_forward_unchecked(params.as_slice(), arch, &x);
        s = [y.mean[0], y.mean[1], y.mean[2]];
        if s.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Divergence { step: t + 1 });
        }
        out.push(s);
    }
    Ok(out)
}

/// Rollout over a window, with per-step losses against its targets.
pub fn rollout_window(params: &ParamVector, arch: &NetArch, w: &Window) -> Result<RolloutResult, ModelError> {
    let predictions = recursive_rollout(params, arch, &w.init, &w.exo)?;
    let step_losses = predictions
        .iter()
        .zip(&w.targets)
        .map(|(p, t)| state_loss(t, p))
        .collect();
    Ok(RolloutResult {
        predictions,
        step_losses,
    })
}

pub fn huber(x: f64, xhat: f64) -> f64 {
    let r = (x - xhat).abs();
    if r < 1.0 {
        0.5 * r * r
    } else {
        r - 0.5
    }
}

/// d huber / d xhat.
fn huber_slope(x: f64, xhat: f64) -> f64 {
    -(x - xhat).clamp(-1.0, 1.0)
}

/// Huber loss averaged over state channels.
pub fn state_loss(s: &State, shat: &State) -> f64 {
    s.iter().zip(shat).map(|(a, b)| huber(*a, *b)).sum::<f64>() / STATE_DIM as f64
}

/// Mean over the window of the per-step averaged Huber loss.
pub fn window_loss(predictions: &[State], targets: &[State]) -> f64 {
    assert_eq!(predictions.len(), targets.len(), "window length mismatch");
    let h = targets.len() as f64;
    predictions.iter().zip(targets).map(|(p, t)| state_loss(t, p)).sum::<f64>() / h
}

/// Mean window loss over all windows.
pub fn total_loss(params: &ParamVector, arch: &NetArch, windows: &[Window]) -> Result<f64, ModelError> {
    if windows.is_empty() {
        return Err(ModelError::EmptyWindows);
    }
    let losses = parallel::map(windows.len(), |i| {
        rollout_window(params, arch, &windows[i]).map(|r| window_loss(&r.predictions, &windows[i].targets))
    });
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / windows.len() as f64)
}

/// Window loss and its gradient by backpropagation through the recursion.
/// The gradient is added into `grad`, scaled by `weight`.
pub fn window_loss_grad(params: &[f64], arch: &NetArch, w: &Window, weight: f64, grad: &mut [f64]) -> f64 {
    let h = w.targets.len();
    let mut tape = GradTape::new(params, arch);
    let mut s = w.init;
    let mut x = Vec::with_capacity(arch.input_dim());
    let mut preds = Vec::with_capacity(h);
    for row in &w.exo {
        net_input(&s, row, &mut x);
        let y = tape.forward(&x);
        s = [y.mean[0], y.mean[1], y.mean[2]];
        preds.push(s);
    }
    let loss = window_loss(&preds, &w.targets);
    let c = weight / (h as f64 * STATE_DIM as f64);
    let zeros = [0.0; STATE_DIM];
    let mut carry = [0.0; STATE_DIM];
    for t in (0..h).rev() {
        let mut d_mean = carry;
        for ch in 0..STATE_DIM {
            d_mean[ch] += c * huber_slope(w.targets[t][ch], preds[t][ch]);
        }
        let d_in = tape.backward_step(t, &d_mean, &zeros, grad);
        carry.copy_from_slice(&d_in[..STATE_DIM]);
    }
    loss
}

/// Mean window loss over `idx` (indices into `windows`) and its gradient.
pub fn batch_loss_grad(params: &[f64], arch: &NetArch, windows: &[Window], idx: &[usize]) -> (f64, Vec<f64>) {
    let wgt = 1.0 / idx.len() as f64;
    let (sum, grad) = parallel::sum_with_grad(idx.len(), params.len(), |i, g| {
        window_loss_grad(params, arch, &windows[idx[i]], wgt, g)
    });
    (sum * wgt, grad)
}
