use serde::{Deserialize, Serialize};

use super::{draw_gamma, reparameterize, VariationalParams, TAG_PREDICT, VAR_FLOOR};
use crate::datapipe::{State, STATE_DIM};
use crate::detmodel::{check_arch, net_input, ModelError};
use crate::gradcore::{mlp_forward_unchecked, NetArch};
use crate::{parallel, rng};

/// Posterior samples with non-finite rollouts are dropped up to this fraction
/// of `N_mc`; more is an error.
pub const MAX_DIVERGENT_FRACTION: f64 = 0.01;

/// Per-step predictive moments. `var` is the mean of the per-sample variance
/// heads; `epistemic` is the variance of the per-sample means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRollout {
    pub mean: Vec<State>,
    pub var: Vec<State>,
    pub epistemic: Vec<State>,
    pub n_samples: usize,
    pub n_divergent: usize,
}

impl PredictiveRollout {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `mean -/+ z * sqrt(var)` per step and channel.
    pub fn bounds(&self, z: f64) -> (Vec<State>, Vec<State>) {
        let mut lo = Vec::with_capacity(self.len());
        let mut hi = Vec::with_capacity(self.len());
        for (m, v) in self.mean.iter().zip(&self.var) {
            let mut l = [0.0; STATE_DIM];
            let mut h = [0.0; STATE_DIM];
            for c in 0..STATE_DIM {
                let half = z * v[c].sqrt();
                l[c] = m[c] - half;
                h[c] = m[c] + half;
            }
            lo.push(l);
            hi.push(h);
        }
        (lo, hi)
    }
}

type SampleRollout = (Vec<State>, Vec<State>);

fn sample_rollout(beta: &[f64], arch: &NetArch, init: &State, exo: &[Vec<f64>]) -> Option<SampleRollout> {
    let mut s = *init;
    let mut x = Vec::with_capacity(arch.input_dim());
    let mut means = Vec::with_capacity(exo.len());
    let mut vars = Vec::with_capacity(exo.len());
    for row in exo {
        net_input(&s, row, &mut x);
        let y = mlp_forward_unchecked(beta, arch, &x);
        s = [y.mean[0], y.mean[1], y.mean[2]];
        let v = [y.var[0].max(VAR_FLOOR), y.var[1].max(VAR_FLOOR), y.var[2].max(VAR_FLOOR)];
        if s.iter().chain(&v).any(|z| !z.is_finite()) {
            return None;
        }
        means.push(s);
        vars.push(v);
    }
    Some((means, vars))
}

/// Monte-Carlo posterior predictive over a full autoregressive rollout from
/// `init`, driven only by the exogenous rows `[u_t..., theta...]`.
pub fn posterior_predict(
    vp: &VariationalParams,
    arch: &NetArch,
    init: &State,
    exo: &[Vec<f64>],
    n_mc: usize,
    seed: u64,
) -> Result<PredictiveRollout, ModelError> {
    if n_mc == 0 {
        return Err(ModelError::Config("N_mc must be at least 1".into()));
    }
    if vp.len() != arch.num_params() {
        return Err(ModelError::Config(format!(
            "posterior has {} entries, architecture needs {}",
            vp.len(),
            arch.num_params()
        )));
    }
    check_arch(arch, exo)?;
    let samples = parallel::map(n_mc, |j| {
        let gamma = draw_gamma(vp.len(), &mut rng::stream(seed, TAG_PREDICT, j as u64));
        let beta = reparameterize(vp, &gamma).beta;
        sample_rollout(beta.as_slice(), arch, init, exo)
    });
    let n_div = samples.iter().filter(|s| s.is_none()).count();
    if n_div as f64 > MAX_DIVERGENT_FRACTION * n_mc as f64 {
        return Err(ModelError::TooManyDivergent {
            divergent: n_div,
            total: n_mc,
        });
    }
    if n_div > 0 {
        log::warn!("{n_div} of {n_mc} posterior samples diverged and were dropped");
    }
    let n = exo.len();
    let mut mean = vec![[0.0; STATE_DIM]; n];
    let mut var = vec![[0.0; STATE_DIM]; n];
    let mut sq = vec![[0.0; STATE_DIM]; n];
    let kept: Vec<&SampleRollout> = samples.iter().flatten().collect();
    let k = kept.len() as f64;
    for (m, v) in &kept {
        for t in 0..n {
            for c in 0..STATE_DIM {
                mean[t][c] += m[t][c];
                var[t][c] += v[t][c];
            }
        }
    }
    for t in 0..n {
        for c in 0..STATE_DIM {
            mean[t][c] /= k;
            var[t][c] /= k;
        }
    }
    for (m, _) in &kept {
        for t in 0..n {
            for c in 0..STATE_DIM {
                sq[t][c] += (m[t][c] - mean[t][c]).powi(2);
            }
        }
    }
    for row in sq.iter_mut() {
        for v in row.iter_mut() {
            *v /= k;
        }
    }
    Ok(PredictiveRollout {
        mean,
        var,
        epistemic: sq,
        n_samples: kept.len(),
        n_divergent: n_div,
    })
}
