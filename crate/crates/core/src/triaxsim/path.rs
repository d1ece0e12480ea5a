use serde::{Deserialize, Serialize};

use super::SimError;
use crate::datapipe::ExogenousInput;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Monotonic,
    Cyclic,
}

/// Strain history description. For cyclic paths a branch is a quarter cycle
/// (0 to +a, +a to 0, 0 to -a, -a to 0); for monotonic paths
/// `steps_per_branch` is the total number of increments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub kind: PathKind,
    pub amplitude: f64,
    #[serde(default = "one")]
    pub n_cycles: u32,
    pub steps_per_branch: usize,
}

fn one() -> u32 {
    1
}

impl PathSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(SimError::Config(format!("amplitude must be positive, got {}", self.amplitude)));
        }
        if self.n_cycles == 0 || self.steps_per_branch == 0 {
            return Err(SimError::Config("n_cycles and steps_per_branch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> StrainPath {
        make_strain_path(self.kind, self.amplitude, self.n_cycles, self.steps_per_branch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrainStep {
    pub eps: f64,
    pub deps: f64,
    pub delta: f64,
    pub cycle: u32,
}

impl StrainStep {
    pub fn input(&self) -> ExogenousInput {
        ExogenousInput {
            eps: self.eps,
            deps: self.deps,
            delta: self.delta,
            cycle: self.cycle as f64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrainPath {
    pub steps: Vec<StrainStep>,
}

impl StrainPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Monotonic ramp to `amplitude`, or a triangular wave between `-amplitude`
/// and `+amplitude` starting in compression.
///
/// # Panics
/// If `amplitude` is not positive or a count is zero.
pub fn make_strain_path(kind: PathKind, amplitude: f64, n_cycles: u32, steps_per_branch: usize) -> StrainPath {
    assert!(amplitude > 0.0 && n_cycles >= 1 && steps_per_branch >= 1);
    let inc = amplitude / steps_per_branch as f64;
    let mut steps = Vec::new();
    let mut eps = 0.0;
    let mut push = |deps: f64, cycle: u32| {
        eps += deps;
        steps.push(StrainStep {
            eps,
            deps,
            delta: deps.signum(),
            cycle,
        });
    };
    match kind {
        PathKind::Monotonic => {
            for _ in 0..steps_per_branch {
                push(inc, 1);
            }
        }
        PathKind::Cyclic => {
            for c in 1..=n_cycles {
                for sign in [1.0, -1.0, -1.0, 1.0] {
                    for _ in 0..steps_per_branch {
                        push(sign * inc, c);
                    }
                }
            }
        }
    }
    StrainPath { steps }
}
