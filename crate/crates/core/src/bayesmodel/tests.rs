use super::*;
use crate::detmodel::{recursive_rollout, StopReason};
use crate::gradcore::{fd_check, ExpDecay};
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, Normal};

const LN_2PI: f64 = 1.8378770664093453;

fn toy_windows(n: usize, h: usize, exo_dim: usize, seed: u64) -> Vec<Window> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| Window {
            series: 0,
            start: k + 1,
            init: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            exo: (0..h).map(|_| (0..exo_dim).map(|_| rng.gen_range(0.0..1.0)).collect()).collect(),
            targets: (0..h)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect(),
        })
        .collect()
}

fn arch(exo_dim: usize, hidden: Vec<usize>) -> NetArch {
    NetArch::new(3 + exo_dim, hidden, 3).unwrap()
}

/// Net whose output ignores its input: mean = `mean`, raw variance head =
/// `raw_var`.
fn constant_net(a: &NetArch, mean: [f64; 3], raw_var: [f64; 3]) -> ParamVector {
    let mut v = vec![0.0; a.num_params()];
    let n = v.len();
    v[n - 6..n - 3].copy_from_slice(&mean);
    v[n - 3..].copy_from_slice(&raw_var);
    ParamVector::new(v)
}

#[test]
fn prior_density_points() {
    assert!((prior_log_density(&[0.0; 4]) + 2.0 * LN_2PI).abs() < 1e-14);
    assert!((prior_log_density(&[1.0]) - (-0.5 * LN_2PI - 0.5)).abs() < 1e-15);
    assert_eq!(prior_log_density(&[0.3, -1.2]), prior_log_density(&[-0.3, 1.2]));
}

#[test]
fn reparameterize_cases() {
    let vp = VariationalParams::new(vec![0.5, -1.0, 2.0], vec![0.1, -3.0, 1.0]).unwrap();
    assert_eq!(reparameterize(&vp, &[0.0; 3]).beta.as_slice(), &vp.mu[..]);
    let degenerate = VariationalParams::new(vp.mu.clone(), vec![-40.0; 3]).unwrap();
    let s = reparameterize(&degenerate, &[3.0, -2.0, 5.0]);
    for (b, m) in s.beta.as_slice().iter().zip(&vp.mu) {
        assert!((b - m).abs() < 1e-12);
    }
    // d beta_i / d sigma_raw_i = gamma_i * sigmoid(sigma_raw_i)
    let gamma = [0.7, -1.3, 0.4];
    for i in 0..3 {
        let h = 1e-6;
        let mut up = vp.clone();
        up.sigma_raw[i] += h;
        let mut dn = vp.clone();
        dn.sigma_raw[i] -= h;
        let fd = (reparameterize(&up, &gamma).beta.as_slice()[i] - reparameterize(&dn, &gamma).beta.as_slice()[i]) / (2.0 * h);
        let want = gamma[i] * sigmoid(vp.sigma_raw[i]);
        assert!((fd - want).abs() < 1e-8, "{fd} vs {want}");
    }
}

#[test]
fn kl_points() {
    assert_eq!(kl_to_prior(&VariationalParams::with_std(vec![0.0; 5], 1.0)), 0.0);
    assert!((kl_to_prior(&VariationalParams::with_std(vec![1.0], 1.0)) - 0.5).abs() < 1e-15);
    let v = kl_to_prior(&VariationalParams::with_std(vec![0.0], 2.0));
    assert!((v - (1.5 - 2f64.ln())).abs() < 1e-14);
    assert!((v - 0.806853).abs() < 1e-6);
}

#[test]
fn kl_gradient_matches_finite_differences() {
    let vp = VariationalParams::new(vec![0.3, -0.8], vec![-1.0, 0.5]).unwrap();
    let mut gm = vec![0.0; 2];
    let mut gr = vec![0.0; 2];
    kl_grad(&vp.mu, &vp.sigma_raw, 1.0, &mut gm, &mut gr);
    let mut at = vp.mu.clone();
    at.extend(&vp.sigma_raw);
    let analytic: Vec<f64> = gm.iter().chain(&gr).cloned().collect();
    let f = |x: &[f64]| kl_to_prior(&VariationalParams::new(x[..2].to_vec(), x[2..].to_vec()).unwrap());
    assert!(fd_check(f, &at, &analytic, 1e-6, 1e-6, 1e-9).passed());
}

#[test]
fn pseudolikelihood_closed_forms() {
    let a = arch(2, vec![4]);
    let mut w = toy_windows(1, 3, 2, 1).remove(0);
    let target = [0.2, -0.4, 0.9];
    w.targets = vec![target; 3];
    let p = constant_net(&a, target, [softplus_inv(1.0); 3]);
    assert!(window_log_pseudolikelihood(&p, &a, &w).unwrap().abs() < 1e-14);

    // H = 1, first channel s = mu = 0 with var e, other channels exact with var 1
    let mut w1 = toy_windows(1, 1, 2, 2).remove(0);
    w1.targets = vec![[0.0, 0.0, 0.0]];
    let p = constant_net(&a, [0.0; 3], [softplus_inv(std::f64::consts::E), softplus_inv(1.0), softplus_inv(1.0)]);
    assert!((window_log_pseudolikelihood(&p, &a, &w1).unwrap() + 0.5).abs() < 1e-14);
}

#[test]
fn h1_is_plain_gaussian_log_density() {
    let a = arch(2, vec![6]);
    let beta = ParamVector::init(&a, &mut ChaCha8Rng::seed_from_u64(3));
    let w = &toy_windows(1, 1, 2, 4)[0];
    let mut x = w.init.to_vec();
    x.extend(&w.exo[0]);
    let y = crate::gradcore::mlp_forward(&beta, &a, &x).unwrap();
    let direct: f64 = (0..3)
        .map(|c| Normal::new(y.mean[c], y.var[c].sqrt()).unwrap().ln_pdf(w.targets[0][c]))
        .sum();
    let lpl = window_log_pseudolikelihood(&beta, &a, w).unwrap();
    assert!((lpl - (direct + 1.5 * LN_2PI)).abs() < 1e-12);
}

/// Straight-line reimplementation for a 4-2-6 net: no shared code with the
/// library forward pass.
#[test]
fn h2_window_matches_straight_line_oracle() {
    let a = NetArch::new(4, vec![2], 3).unwrap();
    let v: Vec<f64> = (0..a.num_params()).map(|i| ((i * 37 % 17) as f64 - 8.0) / 10.0).collect();
    let beta = ParamVector::new(v.clone());
    let w = Window {
        series: 0,
        start: 1,
        init: [0.5, -0.2, 0.1],
        exo: vec![vec![0.3], vec![0.8]],
        targets: vec![[0.4, 0.0, -0.3], [0.6, 0.2, -0.1]],
    };
    // layer 0: W0 rows at 0..4 and 4..8, b0 at 8..10; layer 1: W1 rows of 2 at
    // 10..22, b1 at 22..28
    let relu = |z: f64| if z > 0.0 { z } else { 0.0 };
    let sp = |z: f64| (1.0 + z.exp()).ln();
    let step = |s: [f64; 3], u: f64| -> ([f64; 3], [f64; 3]) {
        let x = [s[0], s[1], s[2], u];
        let h0 = relu(v[0] * x[0] + v[1] * x[1] + v[2] * x[2] + v[3] * x[3] + v[8]);
        let h1 = relu(v[4] * x[0] + v[5] * x[1] + v[6] * x[2] + v[7] * x[3] + v[9]);
        let o = |k: usize| v[10 + 2 * k] * h0 + v[11 + 2 * k] * h1 + v[22 + k];
        ([o(0), o(1), o(2)], [sp(o(3)), sp(o(4)), sp(o(5))])
    };
    let (m1, v1) = step(w.init, 0.3);
    let (m2, v2) = step(m1, 0.8);
    let term = |s: f64, m: f64, var: f64| var.ln() + (s - m) * (s - m) / var;
    let mut acc = 0.0;
    for c in 0..3 {
        acc += term(w.targets[0][c], m1[c], v1[c]);
        acc += term(w.targets[1][c], m2[c], v2[c]);
    }
    let oracle = -0.5 * acc;
    let got = window_log_pseudolikelihood(&beta, &a, &w).unwrap();
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
}

#[test]
fn total_lpl_averaging() {
    let a = arch(2, vec![5]);
    let beta = ParamVector::init(&a, &mut ChaCha8Rng::seed_from_u64(5));
    let ws = toy_windows(4, 3, 2, 6);
    assert!(matches!(total_log_pseudolikelihood(&beta, &a, &[]), Err(ModelError::EmptyWindows)));
    let one = window_log_pseudolikelihood(&beta, &a, &ws[0]).unwrap();
    assert_eq!(total_log_pseudolikelihood(&beta, &a, &ws[..1]).unwrap(), one);
    let two = total_log_pseudolikelihood(&beta, &a, &[ws[0].clone(), ws[0].clone()]).unwrap();
    assert_eq!(two, one);
    let mut rev = ws.clone();
    rev.reverse();
    let f = total_log_pseudolikelihood(&beta, &a, &ws).unwrap();
    assert!((total_log_pseudolikelihood(&beta, &a, &rev).unwrap() - f).abs() < 1e-12);
}

#[test]
fn fused_window_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let a = arch(2, vec![6, 5]);
        let beta = ParamVector::init(&a, &mut ChaCha8Rng::seed_from_u64(seed));
        let w = &toy_windows(1, 4, 2, seed + 10)[0];
        let mut g = vec![0.0; a.num_params()];
        window_lpl_grad(beta.as_slice(), &a, w, VAR_FLOOR, 1.0, &mut g);
        let r = fd_check(|b| window_lpl(b, &a, w, VAR_FLOOR), beta.as_slice(), &g, 1e-5, 1e-4, 1e-8);
        assert!(r.passed(), "{:?}", r.failures);
    }
}

fn fixed_noise_fd(seed: u64, h: usize, kl_weight: f64) {
    let a = arch(2, vec![5, 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vp = VariationalParams::init(&a, 0.05, &mut rng);
    let n = vp.len();
    // keep the variance head well above the floor: last layer is 4 -> 6
    vp.mu[n - 18..n - 6].iter_mut().for_each(|w| *w *= 0.1);
    vp.mu[n - 3..].iter_mut().for_each(|b| *b = 1.0);
    let ws = toy_windows(3, h, 2, seed + 100);
    let model = WindowLikelihood::new(&a, &ws);
    let gammas: Vec<Vec<f64>> = (0..2).map(|_| draw_gamma(vp.len(), &mut rng)).collect();
    let o = neg_elbo_fixed_noise(&model, &vp, &gammas, kl_weight);
    let l = vp.len();
    let mut at = vp.mu.clone();
    at.extend(&vp.sigma_raw);
    let analytic: Vec<f64> = o.grad_mu.iter().chain(&o.grad_sigma_raw).cloned().collect();
    let f = |x: &[f64]| {
        let v = VariationalParams::new(x[..l].to_vec(), x[l..].to_vec()).unwrap();
        neg_elbo_fixed_noise(&model, &v, &gammas, kl_weight).value
    };
    let r = fd_check(f, &at, &analytic, 1e-5, 1e-4, 1e-8);
    assert!(r.passed(), "seed {seed}: {:?}", r.failures);
    assert!(r.kinks * 10 <= at.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]
    #[test]
    fn fixed_noise_objective_gradient(seed in 0u64..100_000, h in 1usize..4) {
        fixed_noise_fd(seed, h, 1.0);
    }

    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-3.0f64..3.0, 1..8), raw in -5.0f64..3.0) {
        let vp = VariationalParams::new(mu.clone(), vec![raw; mu.len()]).unwrap();
        prop_assert!(kl_to_prior(&vp) >= 0.0);
    }
}

#[test]
fn kl_zero_only_at_prior() {
    let at_prior = VariationalParams::with_std(vec![0.0; 3], 1.0);
    assert_eq!(kl_to_prior(&at_prior), 0.0);
    let off = VariationalParams::with_std(vec![0.0, 1e-4, 0.0], 1.0);
    assert!(kl_to_prior(&off) > 0.0);
}

/// Two-parameter heteroscedastic Gaussian: `log L_i = -1/2 (b1 + (y_i - b0)^2 e^{-b1})`.
struct TwoParam {
    y: Vec<f64>,
}

impl PseudoLikelihood for TwoParam {
    fn num_params(&self) -> usize {
        2
    }
    fn len(&self) -> usize {
        self.y.len()
    }
    fn elements(&self, _: usize) -> usize {
        1
    }
    fn log_lik(&self, b: &[f64], i: usize) -> f64 {
        -0.5 * (b[1] + (self.y[i] - b[0]).powi(2) * (-b[1]).exp())
    }
    fn log_lik_grad(&self, b: &[f64], i: usize, w: f64, g: &mut [f64]) -> f64 {
        let r = self.y[i] - b[0];
        let e = (-b[1]).exp();
        g[0] += w * r * e;
        g[1] += w * -0.5 * (1.0 - r * r * e);
        self.log_lik(b, i)
    }
}

fn two_param_setup() -> (TwoParam, VariationalParams) {
    (
        TwoParam {
            y: vec![0.3, -0.5, 1.1, 0.8, 0.1],
        },
        VariationalParams::new(vec![0.2, -0.3], vec![softplus_inv(0.4), softplus_inv(0.25)]).unwrap(),
    )
}

/// `E_q[mean_i log L_i]` by a tensor-product trapezoid rule over +-9 sd.
fn quadrature_expectation(model: &TwoParam, vp: &VariationalParams) -> f64 {
    let s = vp.sigma();
    let n = 801;
    let span = 9.0;
    let hstep = 2.0 * span / (n - 1) as f64;
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    for i in 0..n {
        let z0 = -span + i as f64 * hstep;
        for j in 0..n {
            let z1 = -span + j as f64 * hstep;
            let b = [vp.mu[0] + s[0] * z0, vp.mu[1] + s[1] * z1];
            let f: f64 = (0..model.len()).map(|k| model.log_lik(&b, k)).sum::<f64>() / model.len() as f64;
            let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            acc += wi * wj * phi(z0) * phi(z1) * f;
        }
    }
    acc * hstep * hstep
}

fn per_sample_values(model: &TwoParam, vp: &VariationalParams, n: usize, seed: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let gamma = draw_gamma(2, &mut rng::stream(seed, TAG_ELBO, i as u64));
            let b = reparameterize(vp, &gamma).beta;
            (0..model.len()).map(|k| model.log_lik(b.as_slice(), k)).sum::<f64>() / model.len() as f64
        })
        .collect()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn elbo_estimate_matches_quadrature() {
    let (model, vp) = two_param_setup();
    let exact = quadrature_expectation(&model, &vp) - kl_to_prior(&vp);
    let n = 100_000;
    let vals = per_sample_values(&model, &vp, n, 9);
    let est = mc_mean_loglik(&vp, &model, n, 9).unwrap() - kl_to_prior(&vp);
    let (m, se) = mean_se(&vals);
    assert!((est - (m - kl_to_prior(&vp))).abs() < 1e-9);
    assert!((est - exact).abs() < 3.0 * se, "{est} vs {exact} (se {se})");

    // unbiased: 200 single-sample estimates average to the large-N value
    let singles: Vec<f64> = (0..200).map(|k| mc_mean_loglik(&vp, &model, 1, 1000 + k).unwrap()).collect();
    let (ms, ses) = mean_se(&singles);
    let combined = (ses * ses + se * se).sqrt();
    assert!((ms - m).abs() < 3.0 * combined, "{ms} vs {m}");
}

#[test]
fn degenerate_posterior_elbo_has_no_mc_spread() {
    let a = arch(2, vec![5]);
    let ws = toy_windows(3, 2, 2, 7);
    let vp = VariationalParams::with_std(ParamVector::init(&a, &mut ChaCha8Rng::seed_from_u64(1)).into_inner(), 1e-300);
    let e1 = elbo_estimate(&vp, &a, &ws, 3, 1).unwrap();
    let e2 = elbo_estimate(&vp, &a, &ws, 3, 2).unwrap();
    assert_eq!(e1, e2);
    assert!(elbo_estimate(&vp, &a, &ws, 0, 1).is_err());
}

/// Scalar mean of i.i.d. Gaussian observations with known variance.
struct ScalarGaussian {
    y: Vec<f64>,
    s2: f64,
}

impl PseudoLikelihood for ScalarGaussian {
    fn num_params(&self) -> usize {
        1
    }
    fn len(&self) -> usize {
        self.y.len()
    }
    fn elements(&self, _: usize) -> usize {
        1
    }
    fn log_lik(&self, b: &[f64], i: usize) -> f64 {
        -0.5 * (self.s2.ln() + (self.y[i] - b[0]).powi(2) / self.s2)
    }
    fn log_lik_grad(&self, b: &[f64], i: usize, w: f64, g: &mut [f64]) -> f64 {
        g[0] += w * (self.y[i] - b[0]) / self.s2;
        self.log_lik(b, i)
    }
}

/// Minimizer of `-mean_i log L_i + kappa KL` over Gaussians: the posterior
/// with likelihood raised to `1 / (kappa n)`.
fn conjugate_oracle(y: &[f64], s2: f64, kappa: f64) -> (f64, f64) {
    let n = y.len() as f64;
    let a = 1.0 / (kappa * n);
    let prec = 1.0 + a * n / s2;
    let mean = a * y.iter().sum::<f64>() / s2 / prec;
    (mean, prec.sqrt().recip())
}

fn conjugate_run(weighting: KlWeighting) -> ((f64, f64), (f64, f64)) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let noise = Normal::new(1.5, 0.5).unwrap();
    let y: Vec<f64> = (0..20).map(|_| rand::distributions::Distribution::sample(&noise, &mut rng)).collect();
    let model = ScalarGaussian { y: y.clone(), s2: 0.25 };
    let cfg = RbnnConfig {
        hidden: vec![1],
        lr: ExpDecay {
            lr0: 0.05,
            decay: 0.1,
            decay_steps: 1000.0,
        },
        epochs: 3000,
        batch_size: 20,
        n_q: 8,
        patience: None,
        seed: 4,
        kl_weighting: weighting,
        ..RbnnConfig::default()
    };
    let fit = fit_variational(&model, None, VariationalParams::with_std(vec![0.0], 0.05), &cfg).unwrap();
    let kappa = match weighting {
        KlWeighting::Literal => 1.0,
        KlWeighting::PerWindow => 1.0 / y.len() as f64,
    };
    let got = (fit.posterior.mu[0], fit.posterior.sigma()[0]);
    (got, conjugate_oracle(&y, 0.25, kappa))
}

#[test]
fn conjugate_gaussian_recovery() {
    for w in [KlWeighting::Literal, KlWeighting::PerWindow] {
        let ((m, s), (m0, s0)) = conjugate_run(w);
        assert!((m - m0).abs() <= 0.05 * m0.abs(), "{w:?}: mean {m} vs {m0}");
        assert!((s - s0).abs() <= 0.05 * s0, "{w:?}: std {s} vs {s0}");
    }
}

fn lin_cfg(epochs: usize) -> RbnnConfig {
    RbnnConfig {
        hidden: vec![16],
        lr: ExpDecay {
            lr0: 5e-3,
            decay: 0.5,
            decay_steps: 500.0,
        },
        epochs,
        batch_size: 16,
        n_q: 2,
        patience: None,
        seed: 6,
        kl_weighting: KlWeighting::PerWindow,
        ..RbnnConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_posterior() {
    let ws = crate::detmodel::toy::linear_system_windows(1, 20, 5, 1);
    let cfg = RbnnConfig {
        lr: ExpDecay::constant(0.0),
        ..lin_cfg(3)
    };
    let run = train_rbnn(&ws, &[], &cfg).unwrap();
    let init = VariationalParams::init(&run.arch, cfg.sigma0, &mut rng::stream(cfg.seed, crate::detmodel::TAG_INIT, 0));
    assert_eq!(run.model, init);
    assert!((run.model.sigma()[0] - 0.05).abs() < 1e-12);
}

#[test]
fn neg_elbo_closes_half_the_gap_on_linear_system() {
    let ws = crate::detmodel::toy::linear_system_windows(4, 40, 5, 2);
    let ma = |h: &[BayesEpochRecord], from: usize| h[from..from + 5].iter().map(|r| r.neg_elbo).sum::<f64>() / 5.0;
    let run = train_rbnn(&ws, &[], &lin_cfg(300)).unwrap();
    let reference = train_rbnn(&ws, &[], &lin_cfg(1200)).unwrap();
    let start = ma(&run.history, 0);
    let end = ma(&run.history, run.history.len() - 5);
    let floor = ma(&reference.history, reference.history.len() - 5);
    assert!(start - end >= 0.5 * (start - floor), "start {start} end {end} floor {floor}");
    assert_eq!(run.stop, StopReason::Completed);
}

#[test]
fn rbnn_training_is_reproducible() {
    let ws = crate::detmodel::toy::linear_system_windows(2, 15, 3, 3);
    let a = train_rbnn(&ws, &ws[..4], &lin_cfg(3)).unwrap();
    let b = train_rbnn(&ws, &ws[..4], &lin_cfg(3)).unwrap();
    assert_eq!(a, b);
    assert!(a.history.iter().all(|r| r.val_nll.is_some()));
}

#[test]
fn nan_target_stops_with_divergence() {
    let mut ws = crate::detmodel::toy::linear_system_windows(1, 20, 5, 4);
    ws[2].targets[1][2] = f64::NAN;
    let run = train_rbnn(&ws, &[], &lin_cfg(4)).unwrap();
    assert_eq!(run.stop, StopReason::Diverged { epoch: 0 });
}

fn predict_setup(sigma: f64) -> (NetArch, VariationalParams, Window) {
    let a = arch(4, vec![12, 12]);
    let mu = ParamVector::init(&a, &mut ChaCha8Rng::seed_from_u64(8)).into_inner();
    let w = toy_windows(1, 40, 4, 9).remove(0);
    (a, VariationalParams::with_std(mu, sigma), w)
}

#[test]
fn degenerate_posterior_prediction_is_the_mean_network() {
    let (a, vp, w) = predict_setup(1e-14);
    let pred = posterior_predict(&vp, &a, &w.init, &w.exo, 16, 1).unwrap();
    let det = recursive_rollout(&vp.mean_params(), &a, &w.init, &w.exo).unwrap();
    let mut s = w.init;
    for t in 0..w.exo.len() {
        let mut x = s.to_vec();
        x.extend(&w.exo[t]);
        let y = crate::gradcore::mlp_forward(&vp.mean_params(), &a, &x).unwrap();
        s = det[t];
        for c in 0..3 {
            assert!((pred.mean[t][c] - det[t][c]).abs() < 1e-9, "t {t} c {c}: {} vs {}", pred.mean[t][c], det[t][c]);
            assert!((pred.var[t][c] - y.var[c].max(VAR_FLOOR)).abs() < 1e-9);
        }
    }
}

#[test]
fn single_sample_moments() {
    let (a, vp, w) = predict_setup(0.05);
    let pred = posterior_predict(&vp, &a, &w.init, &w.exo, 1, 3).unwrap();
    let gamma = draw_gamma(vp.len(), &mut rng::stream(3, TAG_PREDICT, 0));
    let beta = reparameterize(&vp, &gamma).beta;
    let r = recursive_rollout(&beta, &a, &w.init, &w.exo).unwrap();
    assert_eq!(pred.mean, r);
    assert!(pred.epistemic.iter().flatten().all(|v| *v == 0.0));
    let (lo, hi) = pred.bounds(1.96);
    assert!(lo.iter().flatten().zip(hi.iter().flatten()).all(|(l, h)| l < h));
}

#[test]
fn aggregated_variance_dominates_sample_minimum() {
    let (a, vp, w) = predict_setup(0.1);
    let n = 20;
    let pred = posterior_predict(&vp, &a, &w.init, &w.exo, n, 5).unwrap();
    let mut min = vec![[f64::INFINITY; 3]; w.exo.len()];
    for j in 0..n {
        let gamma = draw_gamma(vp.len(), &mut rng::stream(5, TAG_PREDICT, j as u64));
        let beta = reparameterize(&vp, &gamma).beta;
        let mut s = w.init;
        for t in 0..w.exo.len() {
            let mut x = s.to_vec();
            x.extend(&w.exo[t]);
            let y = crate::gradcore::mlp_forward(&beta, &a, &x).unwrap();
            for c in 0..3 {
                min[t][c] = min[t][c].min(y.var[c].max(VAR_FLOOR));
            }
            s = [y.mean[0], y.mean[1], y.mean[2]];
        }
    }
    for t in 0..w.exo.len() {
        for c in 0..3 {
            assert!(pred.var[t][c] >= min[t][c] * (1.0 - 1e-12));
        }
    }
}

#[test]
fn prediction_ignores_future_targets() {
    let (a, vp, mut w) = predict_setup(0.05);
    let p1 = posterior_predict(&vp, &a, &w.init, &w.exo, 8, 2).unwrap();
    w.targets.iter_mut().for_each(|t| *t = [0.0; 3]);
    let p2 = posterior_predict(&vp, &a, &w.init, &w.exo, 8, 2).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn mc_means_are_self_consistent() {
    let (a, vp, w) = predict_setup(0.05);
    let p1 = posterior_predict(&vp, &a, &w.init, &w.exo, 1000, 11).unwrap();
    let p4 = posterior_predict(&vp, &a, &w.init, &w.exo, 4000, 12).unwrap();
    for t in 0..w.exo.len() {
        for c in 0..3 {
            let se = (p1.epistemic[t][c] / 1000.0 + p4.epistemic[t][c] / 4000.0).sqrt();
            assert!((p1.mean[t][c] - p4.mean[t][c]).abs() <= 3.0 * se + 1e-12, "t {t} c {c}");
        }
    }
}

#[test]
fn divergent_samples_beyond_tolerance_fail() {
    let (a, mut vp, w) = predict_setup(0.05);
    vp.mu.iter_mut().for_each(|m| *m = 1e300);
    assert!(matches!(
        posterior_predict(&vp, &a, &w.init, &w.exo, 10, 1),
        Err(ModelError::TooManyDivergent { divergent: 10, total: 10 })
    ));
}
