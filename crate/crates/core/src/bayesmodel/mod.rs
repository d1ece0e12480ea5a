//! Recursive Bayesian network: factorized Gaussian variational posterior over
//! the weights, sliding-window pseudo-likelihood and Monte-Carlo ELBO.

mod predict;
mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datapipe::{Window, STATE_DIM};
use crate::detmodel::{check_arch, net_input, ModelError};
use crate::gradcore::{mlp_forward_unchecked, sigmoid, softplus, softplus_inv, GradTape, NetArch, ParamVector};
use crate::{parallel, rng};

pub use predict::{posterior_predict, PredictiveRollout, MAX_DIVERGENT_FRACTION};
pub use train::{
    fit_variational, neg_elbo_fixed_noise, train_rbnn, BayesEpochRecord, FixedNoiseObjective, KlWeighting,
    RbnnConfig, VariationalFit,
};

/// Lower bound on predicted variances inside the log and quotient terms.
pub const VAR_FLOOR: f64 = 1e-6;

pub(crate) const TAG_GAMMA: u64 = 3;
pub(crate) const TAG_PREDICT: u64 = 4;
pub(crate) const TAG_ELBO: u64 = 5;

/// Variational posterior `q(beta) = N(mu, diag(softplus(sigma_raw))^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub sigma_raw: Vec<f64>,
}

impl VariationalParams {
    pub fn new(mu: Vec<f64>, sigma_raw: Vec<f64>) -> Result<Self, ModelError> {
        if mu.len() != sigma_raw.len() {
            return Err(ModelError::Config(format!(
                "mu has {} entries, sigma_raw {}",
                mu.len(),
                sigma_raw.len()
            )));
        }
        Ok(Self { mu, sigma_raw })
    }

    /// Posterior with the given mean and a common standard deviation.
    pub fn with_std(mu: Vec<f64>, sigma: f64) -> Self {
        let raw = softplus_inv(sigma);
        let sigma_raw = vec![raw; mu.len()];
        Self { mu, sigma_raw }
    }

    /// Means from the deterministic initializer, spread `sigma0`.
    pub fn init<R: Rng + ?Sized>(arch: &NetArch, sigma0: f64, rng: &mut R) -> Self {
        Self::with_std(ParamVector::init(arch, rng).into_inner(), sigma0)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.sigma_raw.iter().map(|r| softplus(*r)).collect()
    }

    pub fn mean_params(&self) -> ParamVector {
        ParamVector::new(self.mu.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSample {
    pub beta: ParamVector,
    pub gamma: Vec<f64>,
}

pub fn draw_gamma<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// `beta = mu + softplus(sigma_raw) * gamma`.
pub fn reparameterize(vp: &VariationalParams, gamma: &[f64]) -> PosteriorSample {
    assert_eq!(gamma.len(), vp.len(), "gamma length");
    let beta = vp
        .mu
        .iter()
        .zip(&vp.sigma_raw)
        .zip(gamma)
        .map(|((m, r), g)| m + softplus(*r) * g)
        .collect();
    PosteriorSample {
        beta: ParamVector::new(beta),
        gamma: gamma.to_vec(),
    }
}

/// Standard-normal log density, summed over entries.
pub fn prior_log_density(beta: &[f64]) -> f64 {
    let c = 0.5 * (2.0 * std::f64::consts::PI).ln();
    beta.iter().map(|b| -c - 0.5 * b * b).sum()
}

/// `KL(q || N(0, I))` in closed form.
pub fn kl_to_prior(vp: &VariationalParams) -> f64 {
    vp.mu
        .iter()
        .zip(&vp.sigma_raw)
        .map(|(m, r)| {
            let s = softplus(*r);
            -s.ln() + 0.5 * (m * m + s * s - 1.0)
        })
        .sum()
}

/// Adds `weight * dKL/d(mu, sigma_raw)` into the two gradient halves.
pub(crate) fn kl_grad(mu: &[f64], sigma_raw: &[f64], weight: f64, g_mu: &mut [f64], g_raw: &mut [f64]) {
    for i in 0..mu.len() {
        let s = softplus(sigma_raw[i]);
        g_mu[i] += weight * mu[i];
        g_raw[i] += weight * (s - 1.0 / s) * sigmoid(sigma_raw[i]);
    }
}

fn gauss_term(target: f64, mean: f64, var: f64) -> f64 {
    let r = target - mean;
    var.ln() + r * r / var
}

/// `-1/2 sum_t sum_c [log var + (s - mu)^2 / var]` along the recursive
/// rollout from the window's measured initial state, feeding predicted means
/// forward.
pub fn window_log_pseudolikelihood(beta: &ParamVector, arch: &NetArch, w: &Window) -> Result<f64, ModelError> {
    beta.check(arch)?;
    check_arch(arch, &w.exo)?;
    Ok(window_lpl(beta.as_slice(), arch, w, VAR_FLOOR))
}

pub(crate) fn window_lpl(beta: &[f64], arch: &NetArch, w: &Window, floor: f64) -> f64 {
    let mut s = w.init;
    let mut x = Vec::with_capacity(arch.input_dim());
    let mut acc = 0.0;
    for (row, target) in w.exo.iter().zip(&w.targets) {
        net_input(&s, row, &mut x);
        let y = mlp_forward_unchecked(beta, arch, &x);
        for c in 0..STATE_DIM {
            acc += gauss_term(target[c], y.mean[c], y.var[c].max(floor));
        }
        s = [y.mean[0], y.mean[1], y.mean[2]];
    }
    -0.5 * acc
}

/// Window log pseudo-likelihood; `weight * d/d beta` is added into `grad`.
pub(crate) fn window_lpl_grad(beta: &[f64], arch: &NetArch, w: &Window, floor: f64, weight: f64, grad: &mut [f64]) -> f64 {
    let h = w.targets.len();
    let mut tape = GradTape::new(beta, arch);
    let mut s = w.init;
    let mut x = Vec::with_capacity(arch.input_dim());
    let mut outs = Vec::with_capacity(h);
    let mut acc = 0.0;
    for (row, target) in w.exo.iter().zip(&w.targets) {
        net_input(&s, row, &mut x);
        let y = tape.forward(&x);
        for c in 0..STATE_DIM {
            acc += gauss_term(target[c], y.mean[c], y.var[c].max(floor));
        }
        s = [y.mean[0], y.mean[1], y.mean[2]];
        outs.push(y);
    }
    let mut carry = [0.0; STATE_DIM];
    for t in (0..h).rev() {
        let y = &outs[t];
        let mut d_mean = carry;
        let mut d_var = [0.0; STATE_DIM];
        for c in 0..STATE_DIM {
            let v = y.var[c];
            let r = w.targets[t][c] - y.mean[c];
            let vf = v.max(floor);
            d_mean[c] += weight * r / vf;
            if v > floor {
                d_var[c] = weight * -0.5 * (1.0 / v - r * r / (v * v));
            }
        }
        let d_in = tape.backward_step(t, &d_mean, &d_var, grad);
        carry.copy_from_slice(&d_in[..STATE_DIM]);
    }
    -0.5 * acc
}

/// Mean window log pseudo-likelihood. Every series contributes `N - H + 1`
/// windows, so the per-series weighting reduces to a plain average.
pub fn total_log_pseudolikelihood(beta: &ParamVector, arch: &NetArch, windows: &[Window]) -> Result<f64, ModelError> {
    if windows.is_empty() {
        return Err(ModelError::EmptyWindows);
    }
    beta.check(arch)?;
    check_arch(arch, &windows[0].exo)?;
    let vals = parallel::map(windows.len(), |i| window_lpl(beta.as_slice(), arch, &windows[i], VAR_FLOOR));
    Ok(vals.iter().sum::<f64>() / windows.len() as f64)
}

/// `(1/N_q) sum_i total_log_pseudolikelihood(beta_i) - KL(q || p)` with
/// `beta_i` drawn from per-sample streams of `seed`.
pub fn elbo_estimate(
    vp: &VariationalParams,
    arch: &NetArch,
    windows: &[Window],
    n_q: usize,
    seed: u64,
) -> Result<f64, ModelError> {
    if n_q == 0 {
        return Err(ModelError::Config("N_q must be at least 1".into()));
    }
    let model = WindowLikelihood::new(arch, windows);
    let mean = mc_mean_loglik(vp, &model, n_q, seed)?;
    Ok(mean - kl_to_prior(vp))
}

/// `(1/N_q) sum_i (1/W) sum_w log L_w(beta_i)`.
pub(crate) fn mc_mean_loglik<M: PseudoLikelihood>(
    vp: &VariationalParams,
    model: &M,
    n_q: usize,
    seed: u64,
) -> Result<f64, ModelError> {
    if model.len() == 0 {
        return Err(ModelError::EmptyWindows);
    }
    let mut total = 0.0;
    for i in 0..n_q {
        let gamma = draw_gamma(vp.len(), &mut rng::stream(seed, TAG_ELBO, i as u64));
        let beta = reparameterize(vp, &gamma).beta;
        let vals = parallel::map(model.len(), |k| model.log_lik(beta.as_slice(), k));
        total += vals.iter().sum::<f64>() / model.len() as f64;
    }
    Ok(total / n_q as f64)
}

/// A sum of per-item log (pseudo-)likelihood terms in a flat parameter
/// vector. Items are windows for the network model.
pub trait PseudoLikelihood: Sync {
    fn num_params(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Number of scalar Gaussian terms in item `i`.
    fn elements(&self, i: usize) -> usize;
    fn log_lik(&self, beta: &[f64], i: usize) -> f64;
    /// Returns the log-likelihood of item `i`; adds `weight * gradient` into
    /// `grad`.
    fn log_lik_grad(&self, beta: &[f64], i: usize, weight: f64, grad: &mut [f64]) -> f64;
}

pub struct WindowLikelihood<'a> {
    pub arch: &'a NetArch,
    pub windows: &'a [Window],
    pub var_floor: f64,
}

impl<'a> WindowLikelihood<'a> {
    pub fn new(arch: &'a NetArch, windows: &'a [Window]) -> Self {
        Self {
            arch,
            windows,
            var_floor: VAR_FLOOR,
        }
    }
}

impl PseudoLikelihood for WindowLikelihood<'_> {
    fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    fn len(&self) -> usize {
        self.windows.len()
    }

    fn elements(&self, i: usize) -> usize {
        self.windows[i].targets.len() * STATE_DIM
    }

    fn log_lik(&self, beta: &[f64], i: usize) -> f64 {
        window_lpl(beta, self.arch, &self.windows[i], self.var_floor)
    }

    fn log_lik_grad(&self, beta: &[f64], i: usize, weight: f64, grad: &mut [f64]) -> f64 {
        window_lpl_grad(beta, self.arch, &self.windows[i], self.var_floor, weight, grad)
    }
}

#[cfg(test)]
pub(crate) mod tests;
