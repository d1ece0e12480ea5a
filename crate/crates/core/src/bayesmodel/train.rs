use serde::{Deserialize, Serialize};

use super::{draw_gamma, kl_grad, kl_to_prior, PseudoLikelihood, VariationalParams, WindowLikelihood, TAG_GAMMA};
use crate::datapipe::Window;
use crate::detmodel::{arch_for, shuffled_batches, ModelError, StopReason, TrainRun, TAG_INIT};
use crate::gradcore::{sigmoid, softplus, Adam, ExpDecay};
use crate::{parallel, rng};

/// How the KL term is weighted against the window-averaged log
/// pseudo-likelihood in the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlWeighting {
    /// `-mean_w log L_w + KL`.
    #[default]
    Literal,
    /// `-mean_w log L_w + KL / W`, i.e. the standard ELBO over the summed
    /// window terms divided by the window count `W`.
    PerWindow,
}

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
fn default_n_q() -> usize {
    25
}
fn default_patience() -> Option<usize> {
    Some(300)
}
fn default_one() -> usize {
    1
}
fn default_sigma0() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbnnConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_lr")]
    pub lr: ExpDecay,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Posterior samples per gradient step.
    #[serde(default = "default_n_q")]
    pub n_q: usize,
    #[serde(default = "default_patience")]
    pub patience: Option<usize>,
    #[serde(default = "default_one")]
    pub val_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kl_weighting: KlWeighting,
    /// Linear KL warm-up over this many epochs; off when absent.
    #[serde(default)]
    pub kl_anneal_epochs: Option<usize>,
    /// Initial posterior standard deviation.
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
}

impl Default for RbnnConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            lr: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            n_q: default_n_q(),
            patience: default_patience(),
            val_every: 1,
            seed: 0,
            kl_weighting: KlWeighting::Literal,
            kl_anneal_epochs: None,
            sigma0: default_sigma0(),
        }
    }
}

impl RbnnConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.n_q == 0 || self.val_every == 0 {
            return Err(ModelError::Config("batch_size, n_q and val_every must be at least 1".into()));
        }
        if !(self.sigma0 > 0.0) {
            return Err(ModelError::Config("sigma0 must be positive".into()));
        }
        if !(self.lr.lr0 >= 0.0 && self.lr.decay > 0.0 && self.lr.decay_steps > 0.0) {
            return Err(ModelError::Config("learning-rate schedule must be non-negative with positive decay".into()));
        }
        if self.kl_anneal_epochs == Some(0) {
            return Err(ModelError::Config("kl_anneal_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesEpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Sum over the epoch's mini-batch objectives (one MC estimate of the
    /// negative ELBO).
    pub neg_elbo: f64,
    pub kl: f64,
    /// Per-element Gaussian NLL of the sampled training terms.
    pub train_nll: f64,
    /// Per-element Gaussian NLL on validation items at the posterior mean.
    pub val_nll: Option<f64>,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-element NLL of `model` at `beta`.
pub(crate) fn nll_at<M: PseudoLikelihood>(model: &M, beta: &[f64]) -> f64 {
    let vals = parallel::map(model.len(), |i| model.log_lik(beta, i));
    let elems: usize = (0..model.len()).map(|i| model.elements(i)).sum();
    -vals.iter().sum::<f64>() / elems as f64 + HALF_LN_2PI
}

/// Value and gradient of the fixed-noise objective on a subset of items.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedNoiseObjective {
    pub value: f64,
    pub grad_mu: Vec<f64>,
    pub grad_sigma_raw: Vec<f64>,
    /// Sum of item log-likelihoods over all samples.
    pub loglik_sum: f64,
    /// Number of scalar terms behind `loglik_sum`.
    pub elements: usize,
}

/// `-(1 / (N_q W)) sum_i sum_{w in items} log L_w(beta_i) + kl_weight * KL`
/// with `beta_i = mu + softplus(sigma_raw) * gammas[i]`.
pub(crate) fn batch_objective<M: PseudoLikelihood>(
    model: &M,
    vp: &VariationalParams,
    items: &[usize],
    gammas: &[Vec<f64>],
    w_total: f64,
    kl_weight: f64,
) -> FixedNoiseObjective {
    let l = vp.len();
    let mut grad_mu = vec![0.0; l];
    let mut grad_raw = vec![0.0; l];
    let mut value = 0.0;
    let mut loglik_sum = 0.0;
    let mut elements = 0;
    let c = -1.0 / (gammas.len() as f64 * w_total);
    let sig: Vec<f64> = vp.sigma_raw.iter().map(|r| sigmoid(*r)).collect();
    for gamma in gammas {
        let beta: Vec<f64> = (0..l).map(|k| vp.mu[k] + softplus(vp.sigma_raw[k]) * gamma[k]).collect();
        let (ll, gb) = parallel::sum_with_grad(items.len(), l, |k, gr| model.log_lik_grad(&beta, items[k], 1.0, gr));
        value += c * ll;
        loglik_sum += ll;
        elements += items.iter().map(|&k| model.elements(k)).sum::<usize>();
        for k in 0..l {
            grad_mu[k] += c * gb[k];
            grad_raw[k] += c * gb[k] * gamma[k] * sig[k];
        }
    }
    value += kl_weight * kl_to_prior(vp);
    kl_grad(&vp.mu, &vp.sigma_raw, kl_weight, &mut grad_mu, &mut grad_raw);
    FixedNoiseObjective {
        value,
        grad_mu,
        grad_sigma_raw: grad_raw,
        loglik_sum,
        elements,
    }
}

/// Negative ELBO over all items for fixed noise draws:
/// `-(1/N_q) sum_i mean_w log L_w(beta_i) + kl_weight * KL`.
pub fn neg_elbo_fixed_noise<M: PseudoLikelihood>(
    model: &M,
    vp: &VariationalParams,
    gammas: &[Vec<f64>],
    kl_weight: f64,
) -> FixedNoiseObjective {
    let items: Vec<usize> = (0..model.len()).collect();
    batch_objective(model, vp, &items, gammas, model.len() as f64, kl_weight)
}

/// Minimizes the negative ELBO of `model` by Adam on `(mu, sigma_raw)` with
/// reparameterized gradients. One epoch visits every item once in shuffled
/// mini-batches and applies the KL term once in total.
///
/// With validation items the posterior with the lowest validation NLL is
/// kept; without, the last one.
pub fn fit_variational<M: PseudoLikelihood>(
    model: &M,
    val: Option<&M>,
    init: VariationalParams,
    cfg: &RbnnConfig,
) -> Result<VariationalFit, ModelError> {
    cfg.validate()?;
    let l = model.num_params();
    if init.len() != l {
        return Err(ModelError::Config(format!("variational params have {} entries, model {l}", init.len())));
    }
    if model.is_empty() {
        return Err(ModelError::EmptyWindows);
    }
    let val = val.filter(|v| !v.is_empty());
    let w_total = model.len() as f64;
    let kl_base = match cfg.kl_weighting {
        KlWeighting::Literal => 1.0,
        KlWeighting::PerWindow => 1.0 / w_total,
    };

    let mut eta = init.mu.clone();
    eta.extend_from_slice(&init.sigma_raw);
    let mut adam = Adam::new(2 * l);
    let mut best = (f64::INFINITY, init, 0usize);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut since_best = 0;
    let mut stop = StopReason::Completed;
    let mut g = vec![0.0; 2 * l];

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr.lr_at(epoch);
        let anneal = cfg.kl_anneal_epochs.map_or(1.0, |k| ((epoch + 1) as f64 / k as f64).min(1.0));
        let batches = shuffled_batches(model.len(), cfg.batch_size, cfg.seed, epoch);
        let n_b = batches.len();
        let kl_w = anneal * kl_base / n_b as f64;
        let (mut neg_elbo, mut nll_sum, mut nll_elems) = (0.0, 0.0, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            let vp = VariationalParams {
                mu: eta[..l].to_vec(),
                sigma_raw: eta[l..].to_vec(),
            };
            let gammas: Vec<Vec<f64>> = (0..cfg.n_q)
                .map(|i| {
                    let idx = ((epoch * n_b + b) * cfg.n_q + i) as u64;
                    draw_gamma(l, &mut rng::stream(cfg.seed, TAG_GAMMA, idx))
                })
                .collect();
            let o = batch_objective(model, &vp, batch, &gammas, w_total, kl_w);
            nll_sum -= o.loglik_sum;
            nll_elems += o.elements;
            let obj = o.value;
            g[..l].copy_from_slice(&o.grad_mu);
            g[l..].copy_from_slice(&o.grad_sigma_raw);
            if !obj.is_finite() || g.iter().any(|v| !v.is_finite()) {
                log::warn!("non-finite objective at epoch {epoch}; keeping epoch {} posterior", best.2);
                stop = StopReason::Diverged { epoch };
                break 'epochs;
            }
            neg_elbo += obj;
            adam.step(&mut eta, &g, lr);
        }

        let vp = VariationalParams {
            mu: eta[..l].to_vec(),
            sigma_raw: eta[l..].to_vec(),
        };
        let kl = kl_to_prior(&vp);
        let train_nll = nll_sum / nll_elems as f64 + HALF_LN_2PI;
        let val_nll = match val {
            Some(v) if epoch % cfg.val_every == 0 || epoch + 1 == cfg.epochs => {
                let x = nll_at(v, &vp.mu);
                Some(if x.is_finite() { x } else { f64::INFINITY })
            }
            _ => None,
        };
        history.push(BayesEpochRecord {
            epoch,
            lr,
            neg_elbo,
            kl,
            train_nll,
            val_nll,
        });
        if epoch % 50 == 0 {
            log::debug!("epoch {epoch}: -elbo {neg_elbo:.5e} kl {kl:.4e} train nll {train_nll:.4} val nll {val_nll:?}");
        }
        if val.is_none() {
            // the MC objective is too noisy to pick a checkpoint from
            best = (neg_elbo, vp, epoch);
            continue;
        }
        if let Some(score) = val_nll {
            if score < best.0 {
                best = (score, vp, epoch);
                since_best = 0;
            } else {
                since_best += cfg.val_every;
            }
            if cfg.patience.is_some_and(|p| since_best >= p) {
                log::info!("early stop at epoch {epoch}, best epoch {}", best.2);
                stop = StopReason::EarlyStopped;
                break;
            }
        }
    }
    Ok(VariationalFit {
        posterior: best.1,
        history,
        best_epoch: best.2,
        stop,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalFit {
    pub posterior: VariationalParams,
    pub history: Vec<BayesEpochRecord>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

/// Bayes-by-backprop training of the recursive network on sliding windows.
pub fn train_rbnn(
    train: &[Window],
    val: &[Window],
    cfg: &RbnnConfig,
) -> Result<TrainRun<VariationalParams, BayesEpochRecord>, ModelError> {
    cfg.validate()?;
    let arch = arch_for(train, &cfg.hidden)?;
    let init = VariationalParams::init(&arch, cfg.sigma0, &mut rng::stream(cfg.seed, TAG_INIT, 0));
    let tr = WindowLikelihood::new(&arch, train);
    let va = WindowLikelihood::new(&arch, val);
    let fit = fit_variational(&tr, Some(&va), init, cfg)?;
    Ok(TrainRun {
        model: fit.posterior,
        arch,
        history: fit.history,
        best_epoch: fit.best_epoch,
        stop: fit.stop,
    })
}
