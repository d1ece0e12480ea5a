//! Dataset schema, CSV ingestion, normalization, splitting and sliding windows.

mod csvio;
mod normalize;
mod split;
mod window;

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub use csvio::{load_csv, read_csv, save_csv, write_csv, CSV_COLUMNS};
pub use normalize::{
    minmax_scale, rms_normalize, ConstantFieldPolicy, NormStats, Range, RangeStats, RmsGroup,
    RmsStats,
};
pub use split::{split_dataset, SplitSpec};
pub use window::{full_sequence, segment_windows, Window};

/// `[p, q, third]`.
pub type State = [f64; 3];

pub const STATE_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("series `{id}` has {got} steps, expected {expected}")]
    InconsistentLength { id: String, expected: usize, got: usize },
    #[error("zero RMS for {channel} in the sigma3 = {sigma3} kPa group")]
    ZeroRms { sigma3: f64, channel: &'static str },
    #[error("field `{0}` is constant; cannot min-max scale")]
    DegenerateRange(&'static str),
    #[error("window length {h} outside 1..={n}")]
    WindowLength { h: usize, n: usize },
    #[error("split: {0}")]
    Split(String),
    #[error("dataset mixes test kinds {0} and {1}")]
    MixedKinds(TestKind, TestKind),
    #[error("no normalization group for sigma3 = {0}")]
    NoGroup(f64),
    #[error("dataset is empty")]
    Empty,
    #[error("invalid series `{id}`: {msg}")]
    Invalid { id: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestKind {
    #[serde(rename = "monotonic-CD")]
    MonotonicCd,
    #[serde(rename = "cyclic-CD")]
    CyclicCd,
    #[serde(rename = "cyclic-CU")]
    CyclicCu,
}

impl TestKind {
    pub fn third_kind(self) -> ThirdKind {
        match self {
            TestKind::MonotonicCd => ThirdKind::VoidRatio,
            TestKind::CyclicCd => ThirdKind::VolStrain,
            TestKind::CyclicCu => ThirdKind::PorePressureRatio,
        }
    }

    /// Number of exogenous features: `(eps, deps)` for monotonic tests,
    /// `(eps, deps, delta, cycle)` for cyclic ones.
    pub fn input_width(self) -> usize {
        match self {
            TestKind::MonotonicCd => 2,
            TestKind::CyclicCd | TestKind::CyclicCu => 4,
        }
    }

    /// Width of the network input `[state, u, theta]`.
    pub fn net_input_dim(self) -> usize {
        STATE_DIM + self.input_width() + 2
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::MonotonicCd => "monotonic-CD",
            TestKind::CyclicCd => "cyclic-CD",
            TestKind::CyclicCu => "cyclic-CU",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "monotonic-CD" => Some(TestKind::MonotonicCd),
            "cyclic-CD" => Some(TestKind::CyclicCd),
            "cyclic-CU" => Some(TestKind::CyclicCu),
            _ => None,
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ThirdKind {
    #[serde(rename = "e")]
    VoidRatio,
    #[serde(rename = "eps_v")]
    VolStrain,
    #[serde(rename = "r_u")]
    PorePressureRatio,
}

impl ThirdKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ThirdKind::VoidRatio => "e",
            ThirdKind::VolStrain => "eps_v",
            ThirdKind::PorePressureRatio => "r_u",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "e" => Some(ThirdKind::VoidRatio),
            "eps_v" => Some(ThirdKind::VolStrain),
            "r_u" => Some(ThirdKind::PorePressureRatio),
            _ => None,
        }
    }
}

/// Per-step controls `u_t = (eps, deps, delta, cycle)`.
///
/// Held as reals so the same type carries raw and scaled values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExogenousInput {
    pub eps: f64,
    pub deps: f64,
    pub delta: f64,
    pub cycle: f64,
}

impl ExogenousInput {
    pub fn push_features(&self, kind: TestKind, out: &mut Vec<f64>) {
        out.push(self.eps);
        out.push(self.deps);
        if kind.input_width() == 4 {
            out.push(self.delta);
            out.push(self.cycle);
        }
    }
}

/// Test constants `theta = (sigma3, e0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub sigma3: f64,
    pub e0: f64,
}

impl Theta {
    pub fn as_array(&self) -> [f64; 2] {
        [self.sigma3, self.e0]
    }
}

/// One triaxial test: states `s_0..s_N` and inputs `u_1..u_N`
/// (`inputs[t - 1]` drives the step from `s_{t-1}` to `s_t`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriaxSeries {
    pub test_id: String,
    pub kind: TestKind,
    pub theta: Theta,
    pub states: Vec<State>,
    pub inputs: Vec<ExogenousInput>,
}

impl TriaxSeries {
    /// Number of load steps `N`.
    pub fn n_steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.states.len() != self.inputs.len() + 1 {
            return Err(DataError::Invalid {
                id: self.test_id.clone(),
                msg: format!(
                    "{} states for {} inputs",
                    self.states.len(),
                    self.inputs.len()
                ),
            });
        }
        Ok(())
    }

    /// Copy truncated to the first `n` load steps.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.n_steps());
        Self {
            states: self.states[..=n].to_vec(),
            inputs: self.inputs[..n].to_vec(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub series: Vec<TriaxSeries>,
}

impl Dataset {
    pub fn new(series: Vec<TriaxSeries>) -> Self {
        Self { series }
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn get(&self, test_id: &str) -> Option<&TriaxSeries> {
        self.series.iter().find(|s| s.test_id == test_id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.series.iter().map(|s| s.test_id.as_str()).collect()
    }

    /// The single test kind shared by all series.
    pub fn kind(&self) -> Result<TestKind, DataError> {
        let first = self.series.first().ok_or(DataError::Empty)?.kind;
        for s in &self.series[1..] {
            if s.kind != first {
                return Err(DataError::MixedKinds(first, s.kind));
            }
        }
        Ok(first)
    }

    /// Common `N` across all series; `None` for an empty dataset.
    pub fn common_steps(&self) -> Result<Option<usize>, DataError> {
        let Some(first) = self.series.first() else {
            return Ok(None);
        };
        for s in &self.series {
            s.validate()?;
            if s.n_steps() != first.n_steps() {
                return Err(DataError::InconsistentLength {
                    id: s.test_id.clone(),
                    expected: first.n_steps(),
                    got: s.n_steps(),
                });
            }
        }
        Ok(Some(first.n_steps()))
    }

    /// Sub-dataset with the given ids, in the given order.
    pub fn select(&self, ids: &[String]) -> Result<Dataset, DataError> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| DataError::Split(format!("unknown test id `{id}`")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Dataset::new)
    }
}

/// Mean effective stress and deviatoric stress from principal stresses.
pub fn compute_invariants(sigma1: f64, sigma3: f64) -> (f64, f64) {
    ((sigma1 + 2.0 * sigma3) / 3.0, sigma1 - sigma3)
}
