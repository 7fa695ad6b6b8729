//! One spin: Bloch equations `dS/dt = S × B − relaxation`.
//!
//! The field is `B = (2π·A(s)·10³, 0, −2π·B(s)·h1·10³)` rad/μs and the
//! relaxation follows from the dissipators `σ⁺`, `σ⁻`, `σ_z` with rates
//! `γ₁`, `γ₂`, `γ₃`:
//! `T₁ = 1/(γ₁+γ₂)`, `T₂ = 2/(γ₁+γ₂+4γ₃)`, `M₀ = (γ₁−γ₂)/(γ₁+γ₂)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{self, LinearSystem, ProbTrajectory, StepPlan};
use crate::problems::parse_state_label;
use crate::schedule::{AnnealSchedule, ReverseProtocol};
use crate::GHZ_TO_RAD_PER_US;

const PRESETS_JSON: &str = include_str!("../data/bloch_presets.json");

/// Relaxation parameters; times in μs, infinite times mean no relaxation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochParams {
    #[serde(rename = "T1_us")]
    pub t1: f64,
    #[serde(rename = "T2_us")]
    pub t2: f64,
    #[serde(rename = "M0")]
    pub m0: f64,
}

impl BlochParams {
    pub fn new(t1: f64, t2: f64, m0: f64) -> Result<Self> {
        let p = BlochParams { t1, t2, m0 };
        p.validate()?;
        Ok(p)
    }

    /// No relaxation at all.
    pub fn closed() -> Self {
        BlochParams {
            t1: f64::INFINITY,
            t2: f64::INFINITY,
            m0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0 && self.t2 > 0.0) {
            return Err(Error::input(format!(
                "T1 and T2 must be positive, got {} and {}",
                self.t1, self.t2
            )));
        }
        if self.t2 > 2.0 * self.t1 * (1.0 + 1.0e-12) {
            return Err(Error::input(format!(
                "T2 = {} exceeds 2·T1 = {}",
                self.t2,
                2.0 * self.t1
            )));
        }
        if !(self.m0.abs() <= 1.0) {
            return Err(Error::input(format!("M0 must lie in [-1, 1], got {}", self.m0)));
        }
        Ok(())
    }

    /// Forward relations from the dissipator rates (per μs).
    pub fn from_rates(g1: f64, g2: f64, g3: f64) -> Result<Self> {
        if [g1, g2, g3].iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::domain(format!(
                "rates must be finite and >= 0, got ({g1}, {g2}, {g3})"
            )));
        }
        let sum = g1 + g2;
        let t1 = if sum > 0.0 { 1.0 / sum } else { f64::INFINITY };
        let m0 = if sum > 0.0 { (g1 - g2) / sum } else { 0.0 };
        let d2 = g1 + g2 + 4.0 * g3;
        let t2 = if d2 > 0.0 { 2.0 / d2 } else { f64::INFINITY };
        Ok(BlochParams { t1, t2, m0 })
    }

    /// Inverse relations: `γ₁+γ₂ = 1/T₁`, `γ₁−γ₂ = M₀/T₁`,
    /// `γ₃ = (2/T₂ − 1/T₁)/4`.
    pub fn to_rates(&self) -> (f64, f64, f64) {
        let r1 = 1.0 / self.t1;
        let g1 = 0.5 * (r1 + self.m0 * r1);
        let g2 = 0.5 * (r1 - self.m0 * r1);
        let g3 = (2.0 / self.t2 - r1) / 4.0;
        (g1, g2, g3)
    }
}

/// Named parameter sets shipped with the crate: `wts`, `ats`,
/// `degenerate`.
pub fn presets() -> BTreeMap<String, BlochParams> {
    serde_json::from_str(PRESETS_JSON).expect("bundled presets are valid")
}

pub fn preset(name: &str) -> Result<BlochParams> {
    presets().remove(name).ok_or_else(|| {
        Error::input(format!(
            "unknown Bloch preset {name:?}; available: {}",
            presets().keys().cloned().collect::<Vec<_>>().join(", ")
        ))
    })
}

/// Spin expectation values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochState {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl BlochState {
    pub fn from_vector(v: &DVector<f64>) -> Self {
        BlochState {
            sx: v[0],
            sy: v[1],
            sz: v[2],
        }
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_row_slice(&[self.sx, self.sy, self.sz])
    }

    /// Classical start state from a label `u`/`d`.
    pub fn from_label(label: &str) -> Result<Self> {
        let (n, index) = parse_state_label(label)?;
        if n != 1 {
            return Err(Error::input(format!("{label:?} is not a one-spin state")));
        }
        let sz = if index == 0 { 1.0 } else { -1.0 };
        Ok(BlochState { sx: 0.0, sy: 0.0, sz })
    }

    pub fn norm(&self) -> f64 {
        (self.sx * self.sx + self.sy * self.sy + self.sz * self.sz).sqrt()
    }
}

/// `(p_up, p_down)`.
pub fn probs_from_bloch(state: &BlochState) -> (f64, f64) {
    (0.5 * (1.0 + state.sz), 0.5 * (1.0 - state.sz))
}

/// Field vector in rad/μs.
pub fn field_of_s(sched: &AnnealSchedule, s: f64, h1: f64) -> Result<[f64; 3]> {
    let a = sched.eval_a(s)?;
    let b = sched.eval_b(s)?;
    Ok([GHZ_TO_RAD_PER_US * a, 0.0, -GHZ_TO_RAD_PER_US * b * h1])
}

/// Matrix `C` with `C S = S × B`.
pub fn cross_matrix(field: [f64; 3]) -> DMatrix<f64> {
    let [bx, by, bz] = field;
    DMatrix::from_row_slice(3, 3, &[0.0, bz, -by, -bz, 0.0, bx, by, -bx, 0.0])
}

/// The 3-dimensional linear system for a spin in field `h1`.
pub fn bloch_system(sched: &AnnealSchedule, h1: f64, params: &BlochParams) -> Result<LinearSystem> {
    params.validate()?;
    if !h1.is_finite() {
        return Err(Error::input("h1 must be finite"));
    }
    let k_a = cross_matrix([GHZ_TO_RAD_PER_US, 0.0, 0.0]);
    let k_b = cross_matrix([0.0, 0.0, -GHZ_TO_RAD_PER_US * h1]);
    let r2 = 1.0 / params.t2;
    let r1 = 1.0 / params.t1;
    let d = DMatrix::from_diagonal(&DVector::from_row_slice(&[-r2, -r2, -r1]));
    let y = DVector::from_row_slice(&[0.0, 0.0, params.m0 * r1]);
    LinearSystem::new(sched.clone(), k_a, k_b, d, y)
}

/// Runs a protocol from the classical state in `protocol.initial_state`
/// and returns `(p_up, p_down)` at the observer times (final time only
/// when `observers` is empty).
pub fn run_1spin_protocol(
    sched: &AnnealSchedule,
    h1: f64,
    params: &BlochParams,
    protocol: &ReverseProtocol,
    plan: StepPlan,
    observers: &[f64],
) -> Result<ProbTrajectory> {
    let sys = bloch_system(sched, h1, params)?;
    let x0 = BlochState::from_label(&protocol.initial_state)?.to_vector();
    let traj = integrators::propagate(&sys, plan, protocol, &x0, observers)?;
    Ok(probabilities(&traj))
}

pub(crate) fn probabilities(traj: &integrators::Trajectory) -> ProbTrajectory {
    let probs = traj
        .states
        .iter()
        .map(|x| {
            let (u, d) = probs_from_bloch(&BlochState::from_vector(x));
            vec![u, d]
        })
        .collect();
    ProbTrajectory {
        times: traj.times.clone(),
        probs,
        fallbacks: traj.fallbacks,
    }
}
