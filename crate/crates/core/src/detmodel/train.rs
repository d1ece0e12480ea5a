use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{batch_loss_grad, total_loss, ModelError};
use crate::datapipe::{Window, STATE_DIM};
use crate::gradcore::{Adam, ExpDecay, NetArch, ParamVector};
use crate::rng;

pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_SHUFFLE: u64 = 2;

fn default_hidden() -> Vec<usize> {
    vec![110, 110]
}
fn default_lr() -> ExpDecay {
    ExpDecay {
        lr0: 1e-3,
        decay: 0.9,
        decay_steps: 100.0,
    }
}
fn default_epochs() -> usize {
    3000
}
fn default_batch() -> usize {
    16
}
fn default_patience() -> Option<usize> {
    Some(300)
}
fn default_val_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RffnnConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_lr")]
    pub lr: ExpDecay,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; `None` disables.
    #[serde(default = "default_patience")]
    pub patience: Option<usize>,
    #[serde(default = "default_val_every")]
    pub val_every: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RffnnConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            lr: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            patience: default_patience(),
            val_every: default_val_every(),
            seed: 0,
        }
    }
}

impl RffnnConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.val_every == 0 {
            return Err(ModelError::Config("batch_size and val_every must be at least 1".into()));
        }
        if !(self.lr.lr0 >= 0.0 && self.lr.decay > 0.0 && self.lr.decay_steps > 0.0) {
            return Err(ModelError::Config("learning-rate schedule must be non-negative with positive decay".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "reason")]
pub enum StopReason {
    Completed,
    EarlyStopped,
    /// A non-finite loss or gradient appeared; the model is the last
    /// checkpoint taken before it.
    Diverged { epoch: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun<M, R> {
    pub model: M,
    pub arch: NetArch,
    pub history: Vec<R>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stop: StopReason,
}

/// Architecture for windows whose exogenous rows have the given width.
pub(crate) fn arch_for(windows: &[Window], hidden: &[usize]) -> Result<NetArch, ModelError> {
    let row = windows
        .first()
        .and_then(|w| w.exo.first())
        .ok_or(ModelError::EmptyWindows)?;
    Ok(NetArch::new(STATE_DIM + row.len(), hidden.to_vec(), STATE_DIM)?)
}

pub(crate) fn shuffled_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, TAG_SHUFFLE, epoch as u64));
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Minimizes the mean window Huber loss with Adam over shuffled mini-batches
/// and keeps the parameters with the best validation loss (training loss when
/// `val` is empty).
pub fn train_rffnn(
    train: &[Window],
    val: &[Window],
    cfg: &RffnnConfig,
) -> Result<TrainRun<ParamVector, EpochRecord>, ModelError> {
    cfg.validate()?;
    let arch = arch_for(train, &cfg.hidden)?;
    let mut params = ParamVector::init(&arch, &mut rng::stream(cfg.seed, TAG_INIT, 0));
    let mut adam = Adam::new(params.len());
    let mut best = (f64::INFINITY, params.clone(), 0);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut since_best = 0;
    let mut stop = StopReason::Completed;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr.lr_at(epoch);
        let mut sum = 0.0;
        for batch in shuffled_batches(train.len(), cfg.batch_size, cfg.seed, epoch) {
            let (loss, g) = batch_loss_grad(params.as_slice(), &arch, train, &batch);
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                log::warn!("non-finite loss at epoch {epoch}; keeping epoch {} parameters", best.2);
                stop = StopReason::Diverged { epoch };
                break 'epochs;
            }
            sum += loss * batch.len() as f64;
            adam.step(params.as_mut_slice(), &g, lr);
        }
        let train_loss = sum / train.len() as f64;
        let val_loss = if !val.is_empty() && (epoch % cfg.val_every == 0 || epoch + 1 == cfg.epochs) {
            match total_loss(&params, &arch, val) {
                Ok(v) if v.is_finite() => Some(v),
                Ok(_) | Err(ModelError::Divergence { .. }) => Some(f64::INFINITY),
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        let score = if val.is_empty() { Some(train_loss) } else { val_loss };
        if let Some(score) = score {
            if score < best.0 {
                best = (score, params.clone(), epoch);
                since_best = 0;
            } else {
                since_best += cfg.val_every.max(1);
            }
            if cfg.patience.is_some_and(|p| since_best >= p) {
                log::info!("early stop at epoch {epoch}, best epoch {}", best.2);
                stop = StopReason::EarlyStopped;
                break;
            }
        }
        if epoch % 100 == 0 {
            log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:?}");
        }
    }
    Ok(TrainRun {
        model: best.1,
        arch,
        history,
        best_epoch: best.2,
        stop,
    })
}


#[cfg(test)]
mod tests {
    use super::toy::linear_system_windows;
    use super::*;
    use crate::detmodel::rollout_window;

    fn small_cfg(epochs: usize) -> RffnnConfig {
        RffnnConfig {
            hidden: vec![16],
            lr: ExpDecay {
                lr0: 5e-3,
                decay: 0.5,
                decay_steps: 500.0,
            },
            epochs,
            batch_size: 16,
            patience: None,
            val_every: 1,
            seed: 3,
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let ws = linear_system_windows(1, 20, 5, 1);
        let cfg = RffnnConfig {
            lr: ExpDecay::constant(0.0),
            ..small_cfg(2)
        };
        let run = train_rffnn(&ws, &[], &cfg).unwrap();
        let init = ParamVector::init(&run.arch, &mut rng::stream(cfg.seed, TAG_INIT, 0));
        assert_eq!(run.model, init);
        assert_eq!(run.history.len(), 2);
    }

    #[test]
    fn learns_linear_system() {
        let train = linear_system_windows(4, 40, 5, 2);
        let val = linear_system_windows(1, 40, 5, 3);
        let run = train_rffnn(&train, &val, &small_cfg(2000)).unwrap();
        let mut se = 0.0;
        let mut count = 0.0;
        for w in &val {
            let r = rollout_window(&run.model, &run.arch, w).unwrap();
            for (p, t) in r.predictions.iter().zip(&w.targets) {
                for c in 0..3 {
                    se += (p[c] - t[c]).powi(2);
                    count += 1.0;
                }
            }
        }
        let rmse = (se / count).sqrt();
        assert!(rmse < 1e-2, "val rmse {rmse}");

    }

    #[test]
    fn full_batch_loss_is_monotone_in_moving_average() {
        let train = linear_system_windows(4, 40, 5, 2);
        let cfg = RffnnConfig {
            batch_size: train.len(),
            lr: ExpDecay { lr0: 2e-3, decay: 0.5, decay_steps: 500.0 },
            ..small_cfg(2000)
        };
        let run = train_rffnn(&train, &[], &cfg).unwrap();
        let l: Vec<f64> = run.history.iter().map(|r| r.train_loss).collect();
        let ma: Vec<f64> = l.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        assert!((1..ma.len()).all(|i| ma[i] <= ma[i - 1]));
    }

    #[test]
    fn nan_input_reports_divergence_and_keeps_checkpoint() {
        let mut ws = linear_system_windows(1, 20, 5, 4);
        ws[3].targets[0][0] = f64::NAN;
        let run = train_rffnn(&ws, &[], &small_cfg(5)).unwrap();
        assert_eq!(run.stop, StopReason::Diverged { epoch: 0 });
        assert!(run.model.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn early_stopping_triggers() {
        let train = linear_system_windows(1, 20, 5, 5);
        let val = linear_system_windows(1, 20, 5, 6);
        let cfg = RffnnConfig {
            lr: ExpDecay::constant(0.0),
            patience: Some(3),
            ..small_cfg(50)
        };
        let run = train_rffnn(&train, &val, &cfg).unwrap();
        assert_eq!(run.stop, StopReason::EarlyStopped);
        assert_eq!(run.history.len(), 4);
        assert_eq!(run.best_epoch, 0);
    }

    #[test]
    fn same_seed_same_result() {
        let ws = linear_system_windows(2, 20, 3, 7);
        let a = train_rffnn(&ws, &[], &small_cfg(5)).unwrap();
        let b = train_rffnn(&ws, &[], &small_cfg(5)).unwrap();
        assert_eq!(a, b);
    }
}
