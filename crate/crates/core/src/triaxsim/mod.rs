//! Strain-controlled triaxial simulator for the exponential critical-state
//! model, drained and undrained.

mod generate;
mod path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{
    cyclic_cd_suite, cyclic_cu_suite, generate_dataset, halving_discrepancy, monotonic_suite,
    Drainage, LengthPolicy, SeriesFailure, SeriesSpec, SimConfig, SimOutput, Suite,
};
pub use path::{make_strain_path, PathKind, PathSpec, StrainPath, StrainStep};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("degenerate state: e = {e}, e_c = {e_c}")]
    DegenerateState { e: f64, e_c: f64 },
    #[error("p' = {p_eff} kPa after step {step}")]
    Instability { step: usize, p_eff: f64 },
    #[error("liquefaction limit at step {step}: p' = {p_eff} kPa")]
    Liquefaction { step: usize, p_eff: f64 },
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("series lengths differ ({0} vs {1}) under the strict length policy")]
    RaggedLengths(usize, usize),
}

/// Exponential-model parameters. Pressures in kPa, `phi_c` in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstitutiveParams {
    pub g0: f64,
    pub nu: f64,
    pub n: f64,
    pub phi_c: f64,
    pub e_c0: f64,
    pub lambda_cs: f64,
    pub xi: f64,
    pub d_exp: f64,
    pub p_atm: f64,
}

impl Default for ConstitutiveParams {
    fn default() -> Self {
        Self {
            g0: 3000.0,
            nu: 0.3,
            n: 0.67,
            phi_c: 31.2,
            e_c0: 0.937,
            lambda_cs: 0.022,
            xi: 0.71,
            d_exp: 2.0,
            p_atm: 101.325,
        }
    }
}

impl ConstitutiveParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("G0", self.g0),
            ("n", self.n),
            ("e_c0", self.e_c0),
            ("lambda_cs", self.lambda_cs),
            ("xi", self.xi),
            ("d_exp", self.d_exp),
            ("p_atm", self.p_atm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(SimError::Config(format!("nu must lie in (0, 0.5), got {}", self.nu)));
        }
        if !(self.phi_c > 0.0 && self.phi_c < 90.0) {
            return Err(SimError::Config(format!("phi_c must lie in (0, 90), got {}", self.phi_c)));
        }
        Ok(())
    }

    /// Critical stress ratio in triaxial compression.
    pub fn m_c(&self) -> f64 {
        let s = self.phi_c.to_radians().sin();
        6.0 * s / (3.0 - s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateFunctions {
    pub g: f64,
    pub k: f64,
    pub e_c: f64,
    pub m_p: f64,
    pub m_pt: f64,
}

/// Shear and bulk moduli, critical void ratio, and peak / phase-transformation
/// stress ratios at `(e, p')`.
pub fn state_functions(e: f64, p_eff: f64, cp: &ConstitutiveParams) -> Result<StateFunctions, SimError> {
    let pr = p_eff / cp.p_atm;
    let e_c = cp.e_c0 - cp.lambda_cs * pr.powf(cp.xi);
    if !(e > 0.0) || !(e_c > 0.0) || !(p_eff > 0.0) {
        return Err(SimError::DegenerateState { e, e_c });
    }
    let g = cp.g0 * (2.97 - e).powi(2) / (1.0 + e) * pr.powf(cp.n);
    let k = 2.0 * g * (1.0 + cp.nu) / (3.0 * (1.0 - 2.0 * cp.nu));
    let m_c = cp.m_c();
    Ok(StateFunctions {
        g,
        k,
        e_c,
        m_p: m_c * (e_c / e).powf(cp.d_exp),
        m_pt: m_c * (e / e_c).powf(cp.d_exp),
    })
}

/// Specimen state during a strain-controlled test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub p_eff: f64,
    pub q: f64,
    pub e: f64,
    pub eps_v: f64,
    pub eps_d: f64,
    pub u_excess: f64,
    pub cycle: u32,
    pub e0: f64,
    pub sigma3: f64,
    /// Number of increments applied so far.
    pub step: usize,
}

impl SimState {
    /// Isotropically consolidated specimen at `p' = sigma3`.
    pub fn isotropic(e0: f64, sigma3: f64) -> Self {
        Self {
            p_eff: sigma3,
            q: 0.0,
            e: e0,
            eps_v: 0.0,
            eps_d: 0.0,
            u_excess: 0.0,
            cycle: 0,
            e0,
            sigma3,
            step: 0,
        }
    }

    pub fn r_u(&self) -> f64 {
        self.u_excess / self.sigma3
    }
}

/// Rates shared by both drainage conditions: `(dq, deps_v)` where `deps_v` is
/// the plastic volumetric increment.
fn shear_increments(s: &SimState, f: &StateFunctions, deps_d: f64) -> (f64, f64) {
    let eta = s.q / s.p_eff;
    let dq = 3.0 * f.g * (deps_d - eta / f.m_p * deps_d.abs());
    let dv = f.m_pt * deps_d.abs() - eta * deps_d;
    (dq, dv)
}

/// One explicit-Euler drained increment at constant `sigma3`.
pub fn step_drained(s: &SimState, deps_d: f64, cp: &ConstitutiveParams) -> Result<SimState, SimError> {
    let f = state_functions(s.e, s.p_eff, cp)?;
    let (dq, dv) = shear_increments(s, &f, deps_d);
    let next = SimState {
        p_eff: s.p_eff + dq / 3.0,
        q: s.q + dq,
        e: s.e - (1.0 + s.e0) * dv,
        eps_v: s.eps_v + dv,
        eps_d: s.eps_d + deps_d,
        step: s.step + 1,
        ..*s
    };
    if !(next.p_eff > 0.0) {
        return Err(SimError::Instability {
            step: next.step,
            p_eff: next.p_eff,
        });
    }
    Ok(next)
}

/// One explicit-Euler undrained increment: total volume is held fixed and the
/// plastic tendency is converted into a change of `p'` through `K`.
pub fn step_undrained(s: &SimState, deps_d: f64, cp: &ConstitutiveParams) -> Result<SimState, SimError> {
    let f = state_functions(s.e, s.p_eff, cp)?;
    let (dq, dvp) = shear_increments(s, &f, deps_d);
    let dp = -f.k * dvp;
    let next = SimState {
        p_eff: s.p_eff + dp,
        q: s.q + dq,
        u_excess: s.u_excess + dq / 3.0 - dp,
        eps_d: s.eps_d + deps_d,
        step: s.step + 1,
        ..*s
    };
    if !(next.p_eff > 0.0) {
        return Err(SimError::Liquefaction {
            step: next.step,
            p_eff: next.p_eff,
        });
    }
    Ok(next)
}
