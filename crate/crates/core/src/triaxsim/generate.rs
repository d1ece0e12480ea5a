use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use super::{step_drained, step_undrained, ConstitutiveParams, PathKind, PathSpec, SimError, SimState, StrainPath};
use crate::datapipe::{Dataset, SplitSpec, State, TestKind, Theta, TriaxSeries};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Drainage {
    Drained,
    Undrained,
}

/// What to do when series end at different step counts (undrained series stop
/// once `r_u` reaches the trigger).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthPolicy {
    #[default]
    Strict,
    /// Cut every series to the shortest one.
    Truncate,
    /// Extend short series by holding the last state while the strain path
    /// continues.
    PadHold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    pub test_id: String,
    pub e0: f64,
    pub sigma3: f64,
    pub drainage: Drainage,
    pub path: PathSpec,
}

impl SeriesSpec {
    pub fn kind(&self) -> Result<TestKind, SimError> {
        match (self.path.kind, self.drainage) {
            (PathKind::Monotonic, Drainage::Drained) => Ok(TestKind::MonotonicCd),
            (PathKind::Cyclic, Drainage::Drained) => Ok(TestKind::CyclicCd),
            (PathKind::Cyclic, Drainage::Undrained) => Ok(TestKind::CyclicCu),
            (PathKind::Monotonic, Drainage::Undrained) => Err(SimError::Config(format!(
                "`{}`: monotonic undrained tests are not supported",
                self.test_id
            ))),
        }
    }
}

fn default_substeps() -> usize {
    1
}

fn default_ru_stop() -> f64 {
    0.95
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub params: ConstitutiveParams,
    pub entries: Vec<SeriesSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Std of additive Gaussian noise on `[p, q, third]`, in output units.
    #[serde(default)]
    pub noise_sigma: [f64; 3],
    /// Euler sub-increments per recorded strain step.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub length_policy: LengthPolicy,
    /// Undrained series stop at the first step with `r_u` at or above this.
    #[serde(default = "default_ru_stop")]
    pub ru_stop: f64,
}

impl SimConfig {
    pub fn new(entries: Vec<SeriesSpec>) -> Self {
        Self {
            params: ConstitutiveParams::default(),
            entries,
            seed: 0,
            noise_sigma: [0.0; 3],
            substeps: 1,
            length_policy: LengthPolicy::Strict,
            ru_stop: default_ru_stop(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        if self.substeps == 0 {
            return Err(SimError::Config("substeps must be at least 1".into()));
        }
        if self.noise_sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(SimError::Config("noise_sigma entries must be finite and non-negative".into()));
        }
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.test_id.as_str()) {
                return Err(SimError::Config(format!("duplicate test id `{}`", e.test_id)));
            }
            if !(e.e0 > 0.0 && e.sigma3 > 0.0) {
                return Err(SimError::Config(format!("`{}`: e0 and sigma3 must be positive", e.test_id)));
            }
            e.kind()?;
            e.path.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesFailure {
    pub test_id: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimOutput {
    pub dataset: Dataset,
    /// Series aborted by a step failure; absent from `dataset`.
    pub failures: Vec<SeriesFailure>,
    /// `(test_id, step)` of undrained series stopped by the `r_u` trigger.
    pub stopped: Vec<(String, usize)>,
}

fn record(s: &SimState, kind: TestKind) -> State {
    let third = match kind {
        TestKind::MonotonicCd => s.e,
        TestKind::CyclicCd => s.eps_v,
        TestKind::CyclicCu => s.r_u(),
    };
    [s.p_eff, s.q, third]
}

/// Runs one test; returns the series and the step at which the `r_u` trigger
/// fired, if it did.
pub(crate) fn simulate_series(
    spec: &SeriesSpec,
    path: &StrainPath,
    cp: &ConstitutiveParams,
    substeps: usize,
    ru_stop: f64,
) -> Result<(TriaxSeries, Option<usize>), SimError> {
    let kind = spec.kind()?;
    let step_fn = match spec.drainage {
        Drainage::Drained => step_drained,
        Drainage::Undrained => step_undrained,
    };
    let mut s = SimState::isotropic(spec.e0, spec.sigma3);
    let mut states = vec![record(&s, kind)];
    let mut inputs = Vec::with_capacity(path.len());
    let mut stopped = None;
    for (t, st) in path.steps.iter().enumerate() {
        s.cycle = st.cycle;
        let sub = st.deps / substeps as f64;
        for _ in 0..substeps {
            s = step_fn(&s, sub, cp).map_err(|e| match e {
                // report recorded step indices, not sub-increments
                SimError::Instability { p_eff, .. } => SimError::Instability { step: t + 1, p_eff },
                SimError::Liquefaction { p_eff, .. } => SimError::Liquefaction { step: t + 1, p_eff },
                other => other,
            })?;
        }
        states.push(record(&s, kind));
        inputs.push(st.input());
        if spec.drainage == Drainage::Undrained && s.r_u() >= ru_stop {
            stopped = Some(t + 1);
            break;
        }
    }
    let series = TriaxSeries {
        test_id: spec.test_id.clone(),
        kind,
        theta: Theta {
            sigma3: spec.sigma3,
            e0: spec.e0,
        },
        states,
        inputs,
    };
    Ok((series, stopped))
}

/// One series per config entry, in entry order. Failed series are reported in
/// `failures` and left out of the dataset.
pub fn generate_dataset(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let results: Vec<_> = cfg
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let path = spec.path.build();
            let (mut series, stop) = simulate_series(spec, &path, &cfg.params, cfg.substeps, cfg.ru_stop)?;
            if cfg.noise_sigma.iter().any(|s| *s > 0.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                let dists: Vec<Normal<f64>> = cfg
                    .noise_sigma
                    .iter()
                    .map(|s| Normal::new(0.0, *s).expect("validated sigma"))
                    .collect();
                for state in series.states.iter_mut().skip(1) {
                    for (v, d) in state.iter_mut().zip(&dists) {
                        *v += d.sample(&mut rng);
                    }
                }
            }
            Ok::<_, SimError>((series, stop, path))
        })
        .collect();

    let mut out = SimOutput::default();
    let mut kept = Vec::new();
    for (spec, r) in cfg.entries.iter().zip(results) {
        match r {
            Ok((series, stop, path)) => {
                if let Some(step) = stop {
                    log::info!("{}: r_u trigger reached at step {step}", spec.test_id);
                    out.stopped.push((spec.test_id.clone(), step));
                }
                kept.push((series, path));
            }
            Err(e) => {
                log::warn!("{}: {e}", spec.test_id);
                out.failures.push(SeriesFailure {
                    test_id: spec.test_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    if let (Some(min), Some(max)) = (
        kept.iter().map(|(s, _)| s.n_steps()).min(),
        kept.iter().map(|(s, _)| s.n_steps()).max(),
    ) {
        if min != max {
            match cfg.length_policy {
                LengthPolicy::Strict => return Err(SimError::RaggedLengths(min, max)),
                LengthPolicy::Truncate => {
                    for (s, _) in kept.iter_mut() {
                        *s = s.truncated(min);
                    }
                }
                LengthPolicy::PadHold => {
                    for (s, path) in kept.iter_mut() {
                        let last = *s.states.last().expect("series has s_0");
                        let horizon = max.min(path.len());
                        for t in s.n_steps()..horizon {
                            s.states.push(last);
                            s.inputs.push(path.steps[t].input());
                        }
                    }
                }
            }
        }
    }
    out.dataset = Dataset::new(kept.into_iter().map(|(s, _)| s).collect());
    Ok(out)
}

/// Largest difference between runs at `substeps` and `2 * substeps`, as a
/// fraction of each channel's range, over the shared steps.
pub fn halving_discrepancy(spec: &SeriesSpec, cp: &ConstitutiveParams, substeps: usize) -> Result<f64, SimError> {
    let path = spec.path.build();
    let (coarse, _) = simulate_series(spec, &path, cp, substeps, f64::INFINITY)?;
    let (fine, _) = simulate_series(spec, &path, cp, 2 * substeps, f64::INFINITY)?;
    let mut worst = 0.0f64;
    for c in 0..3 {
        let vals = fine.states.iter().map(|s| s[c]);
        let lo = vals.clone().fold(f64::INFINITY, f64::min);
        let hi = vals.fold(f64::NEG_INFINITY, f64::max);
        let range = if hi > lo { hi - lo } else { 1.0 };
        for (a, b) in coarse.states.iter().zip(&fine.states) {
            worst = worst.max((a[c] - b[c]).abs() / range);
        }
    }
    Ok(worst)
}

/// A default study: simulation config plus its train/val/test partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub sim: SimConfig,
    pub split: SplitSpec,
}

fn cyclic_e0_ids(prefix: &str) -> (Vec<(String, f64)>, SplitSpec) {
    let all: Vec<(String, f64)> = (0..16)
        .map(|i| {
            let e0 = (575 + 25 * i) as f64 / 1000.0;
            (format!("{prefix}-e{e0:.3}"), e0)
        })
        .collect();
    let id = |e0: f64| format!("{prefix}-e{e0:.3}");
    let val = vec![id(0.600)];
    let test = vec![id(0.575), id(0.775), id(0.950)];
    let train = all
        .iter()
        .map(|(i, _)| i.clone())
        .filter(|i| !val.contains(i) && !test.contains(i))
        .collect();
    (
        all,
        SplitSpec {
            train: Some(train),
            val,
            test,
        },
    )
}

fn cyclic_suite(prefix: &str, drainage: Drainage, sigma3: f64, amplitude: f64) -> Suite {
    let (ids, split) = cyclic_e0_ids(prefix);
    let entries = ids
        .into_iter()
        .map(|(test_id, e0)| SeriesSpec {
            test_id,
            e0,
            sigma3,
            drainage,
            path: PathSpec {
                kind: PathKind::Cyclic,
                amplitude,
                n_cycles: 3,
                steps_per_branch: 10,
            },
        })
        .collect();
    Suite {
        sim: SimConfig {
            substeps: 20,
            ..SimConfig::new(entries)
        },
        split,
    }
}

/// 16 undrained cyclic tests at 300 kPa, e0 from 0.575 to 0.950.
pub fn cyclic_cu_suite() -> Suite {
    cyclic_suite("CU", Drainage::Undrained, 300.0, 0.001)
}

/// 16 drained cyclic tests at 98 kPa, e0 from 0.575 to 0.950.
pub fn cyclic_cd_suite() -> Suite {
    cyclic_suite("CD", Drainage::Drained, 98.0, 0.01)
}

/// Drained monotonic compression to 10% strain over a grid of confining
/// pressures and initial void ratios; extreme pressures held out for testing.
pub fn monotonic_suite() -> Suite {
    let pressures = [5.0, 10.0, 20.0, 40.0, 80.0, 100.0, 120.0, 180.0, 220.0, 300.0, 480.0, 640.0, 800.0];
    let e0s = [0.60, 0.65, 0.70, 0.75, 0.80, 0.85];
    let mut entries = Vec::new();
    let (mut val, mut test) = (Vec::new(), Vec::new());
    for &s3 in &pressures {
        for &e0 in &e0s {
            let test_id = format!("MON-s{s3}-e{e0:.2}");
            if s3 == 10.0 || s3 == 640.0 {
                val.push(test_id.clone());
            } else if s3 == 5.0 || s3 == 800.0 {
                test.push(test_id.clone());
            }
            entries.push(SeriesSpec {
                test_id,
                e0,
                sigma3: s3,
                drainage: Drainage::Drained,
                path: PathSpec {
                    kind: PathKind::Monotonic,
                    amplitude: 0.1,
                    n_cycles: 1,
                    steps_per_branch: 100,
                },
            });
        }
    }
    Suite {
        sim: SimConfig {
            substeps: 10,
            ..SimConfig::new(entries)
        },
        split: SplitSpec { train: None, val, test },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{split_dataset, ThirdKind};

    fn cu(e0: f64) -> SeriesSpec {
        SeriesSpec {
            test_id: format!("t{e0}"),
            e0,
            sigma3: 300.0,
            drainage: Drainage::Undrained,
            path: PathSpec {
                kind: PathKind::Cyclic,
                amplitude: 0.001,
                n_cycles: 1,
                steps_per_branch: 10,
            },
        }
    }

    #[test]
    fn empty_config_gives_empty_dataset() {
        let out = generate_dataset(&SimConfig::new(vec![])).unwrap();
        assert!(out.dataset.is_empty() && out.failures.is_empty());
    }

    #[test]
    fn default_cu_suite_shape_and_split() {
        let suite = cyclic_cu_suite();
        let out = generate_dataset(&suite.sim).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        let ds = &out.dataset;
        assert_eq!(ds.len(), 16);
        assert_eq!(ds.kind().unwrap().third_kind(), ThirdKind::PorePressureRatio);
        assert!(ds.series.iter().all(|s| s.theta.sigma3 == 300.0));
        let (tr, va, te) = split_dataset(ds, &suite.split).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (12, 1, 3));
        assert_eq!(va.series[0].theta.e0, 0.6);
        let mut test_e0: Vec<f64> = te.series.iter().map(|s| s.theta.e0).collect();
        test_e0.sort_by(f64::total_cmp);
        assert_eq!(test_e0, vec![0.575, 0.775, 0.95]);
    }

    #[test]
    fn default_cd_and_monotonic_suites_run() {
        let cd = generate_dataset(&cyclic_cd_suite().sim).unwrap();
        assert_eq!(cd.dataset.len(), 16);
        assert!(cd.dataset.series.iter().all(|s| s.theta.sigma3 == 98.0));
        let mono = monotonic_suite();
        let out = generate_dataset(&mono.sim).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        assert_eq!(out.dataset.len(), 78);
        assert_eq!(out.dataset.common_steps().unwrap(), Some(100));
        let (tr, va, te) = split_dataset(&out.dataset, &mono.split).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (54, 12, 12));
    }

    #[test]
    fn deterministic_noise_per_seed() {
        let mut cfg = SimConfig::new(vec![cu(0.7), cu(0.8)]);
        cfg.noise_sigma = [1.0, 1.0, 0.01];
        let a = generate_dataset(&cfg).unwrap().dataset;
        let b = generate_dataset(&cfg).unwrap().dataset;
        assert_eq!(a, b);
        cfg.seed = 1;
        assert_ne!(generate_dataset(&cfg).unwrap().dataset, a);
        assert_eq!(a.series[0].states[0], [300.0, 0.0, 0.0]);
    }

    #[test]
    fn failing_series_does_not_stop_others() {
        let mut bad = cu(0.95);
        bad.test_id = "bad".into();
        bad.sigma3 = 5.0;
        bad.path.amplitude = 0.02;
        let mut cfg = SimConfig::new(vec![cu(0.7), bad]);
        cfg.ru_stop = f64::INFINITY;
        let out = generate_dataset(&cfg).unwrap();
        assert_eq!(out.dataset.ids(), vec!["t0.7"]);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].test_id, "bad");
    }

    #[test]
    fn length_policies() {
        let mut trig = cu(0.95);
        trig.test_id = "trig".into();
        trig.path.amplitude = 0.01;
        trig.path.n_cycles = 2;
        let mut other = cu(0.7);
        other.path.n_cycles = 2;
        let mut cfg = SimConfig::new(vec![other, trig]);
        cfg.substeps = 20;
        assert!(matches!(generate_dataset(&cfg), Err(SimError::RaggedLengths(..))));

        cfg.length_policy = LengthPolicy::Truncate;
        let out = generate_dataset(&cfg).unwrap();
        assert_eq!(out.stopped.len(), 1);
        let n = out.stopped[0].1;
        assert_eq!(out.dataset.common_steps().unwrap(), Some(n));
        assert!(out.dataset.series[1].states[n][2] >= 0.95);

        cfg.length_policy = LengthPolicy::PadHold;
        let out = generate_dataset(&cfg).unwrap();
        assert_eq!(out.dataset.common_steps().unwrap(), Some(80));
        let s = &out.dataset.series[1];
        assert_eq!(s.states[80], s.states[n]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut mono_u = cu(0.7);
        mono_u.path.kind = PathKind::Monotonic;
        assert!(generate_dataset(&SimConfig::new(vec![mono_u])).is_err());
        assert!(generate_dataset(&SimConfig::new(vec![cu(0.7), cu(0.7)])).is_err());
        let mut neg = cu(0.7);
        neg.e0 = -1.0;
        assert!(generate_dataset(&SimConfig::new(vec![neg])).is_err());
    }

    #[test]
    fn shipped_suites_converge_under_halving() {
        let cp = ConstitutiveParams::default();
        for suite in [cyclic_cu_suite(), cyclic_cd_suite()] {
            for spec in [&suite.sim.entries[0], &suite.sim.entries[15]] {
                let d = halving_discrepancy(spec, &cp, suite.sim.substeps).unwrap();
                assert!(d < 0.01, "{}: {d}", spec.test_id);
            }
        }
    }

    #[test]
    fn config_json_defaults() {
        let text = r#"{"entries": [{"test_id": "a", "e0": 0.7, "sigma3": 300,
            "drainage": "undrained",
            "path": {"kind": "cyclic", "amplitude": 0.001, "steps_per_branch": 10}}]}"#;
        let cfg: SimConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.params, ConstitutiveParams::default());
        assert_eq!(cfg.substeps, 1);
        assert_eq!(cfg.entries[0].path.n_cycles, 1);
        assert_eq!(cfg.length_policy, LengthPolicy::Strict);
        assert!(serde_json::from_str::<SimConfig>(r#"{"entries": [], "bogus": 1}"#).is_err());
    }
}
