//! Two spins: Lindblad master equation in a real Pauli product basis.
//!
//! The density matrix is written `ρ = Σ_k x_k e_k` with
//! `e_{4a+b+1} = P_a ⊗ P_b / 2`, `P = (I, σx, σy, σz)`, the first factor
//! acting on spin 1. Basis states are ordered `uu, ud, du, dd` (spin 1
//! first). The Hamiltonian is `H/ħ = π·10³ (A(s) H_D + B(s) H_P)` rad/μs with
//! `H_D = −(σx₁ + σx₂)` and `H_P = h₁σz₁ + h₂σz₂ + J σz₁σz₂`.
//!
//! Dissipators (rates `γ₁ … γ₇`):
//! `|uu⟩⟨dd|`, `|dd⟩⟨uu|`, `σz₁σz₂`, `|uu⟩⟨du|`, `|du⟩⟨uu|`, `|uu⟩⟨ud|`,
//! `|ud⟩⟨uu|`.
//!
//! The generator is obtained by evaluating `dx_k/dt = Tr(e_k 𝓛[ρ])` on the
//! basis, so no equation is typed in by hand.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::equilibrium;
use crate::error::{Error, Result};
use crate::integrators::{self, LinearSystem, ProbTrajectory, StepPlan};
use crate::problems::{parse_state_label, IsingProblem};
use crate::schedule::{AnnealSchedule, ReverseProtocol};

type C64 = Complex<f64>;

/// `π·10³`: converts `A/h`, `B/h` in GHz to the angular prefactor of `H/ħ`
/// in rad/μs for the `σ`-based Hamiltonian.
const HALF_GHZ_TO_RAD_PER_US: f64 = std::f64::consts::PI * 1.0e3;

/// Unit of configured rates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateUnit {
    #[default]
    #[serde(rename = "per_us")]
    PerMicrosecond,
    #[serde(rename = "per_ms")]
    PerMillisecond,
    #[serde(rename = "Hz")]
    Hertz,
}

impl RateUnit {
    /// Factor converting a rate in this unit to per μs.
    pub fn to_per_us(self) -> f64 {
        match self {
            RateUnit::PerMicrosecond => 1.0,
            RateUnit::PerMillisecond => 1.0e-3,
            RateUnit::Hertz => 1.0e-6,
        }
    }
}

/// Dissipation rates `γ₁ … γ₇` in per μs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RateSet {
    pub g: [f64; 7],
}

impl RateSet {
    pub fn new(g: [f64; 7]) -> Result<Self> {
        if let Some((i, v)) = g.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::input(format!("rate g{} = {v} must be finite and >= 0", i + 1)));
        }
        Ok(RateSet { g })
    }

    pub fn scaled(&self, factor: f64) -> RateSet {
        RateSet {
            g: self.g.map(|v| v * factor),
        }
    }
}

/// Rate configuration as written in JSON: `{"g1": .., …, "g7": .., "unit": ..}`.
/// Missing rates are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    #[serde(default)]
    pub g1: f64,
    #[serde(default)]
    pub g2: f64,
    #[serde(default)]
    pub g3: f64,
    #[serde(default)]
    pub g4: f64,
    #[serde(default)]
    pub g5: f64,
    #[serde(default)]
    pub g6: f64,
    #[serde(default)]
    pub g7: f64,
    #[serde(default)]
    pub unit: RateUnit,
}

impl RateConfig {
    pub fn from_values(g: [f64; 7], unit: RateUnit) -> Self {
        let [g1, g2, g3, g4, g5, g6, g7] = g;
        RateConfig {
            g1,
            g2,
            g3,
            g4,
            g5,
            g6,
            g7,
            unit,
        }
    }

    /// Rates converted to per μs.
    pub fn to_rates(&self) -> Result<RateSet> {
        let f = self.unit.to_per_us();
        RateSet::new(
            [self.g1, self.g2, self.g3, self.g4, self.g5, self.g6, self.g7].map(|v| v * f),
        )
    }
}

fn pauli(k: usize) -> DMatrix<C64> {
    let (z, o, i) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0));
    match k {
        0 => DMatrix::from_row_slice(2, 2, &[o, z, z, o]),
        1 => DMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        2 => DMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        3 => DMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => unreachable!(),
    }
}

/// `P_a ⊗ P_b` (first factor spin 1).
fn pauli2(a: usize, b: usize) -> DMatrix<C64> {
    pauli(a).kronecker(&pauli(b))
}

fn basis() -> Vec<DMatrix<C64>> {
    (0..16)
        .map(|k| pauli2(k / 4, k % 4) * C64::new(0.5, 0.0))
        .collect()
}

fn projector(i: usize, j: usize) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(4, 4);
    m[(i, j)] = C64::new(1.0, 0.0);
    m
}

/// Jump operators for `γ₁ … γ₇` in the `uu, ud, du, dd` basis.
pub fn dissipators() -> [DMatrix<C64>; 7] {
    const UU: usize = 0;
    const UD: usize = 1;
    const DU: usize = 2;
    const DD: usize = 3;
    [
        projector(UU, DD),
        projector(DD, UU),
        pauli2(3, 3),
        projector(UU, DU),
        projector(DU, UU),
        projector(UU, UD),
        projector(UD, UU),
    ]
}

/// Real 16×16 matrix of a linear superoperator in the `e_k` basis.
fn superoperator(f: impl Fn(&DMatrix<C64>) -> DMatrix<C64>) -> DMatrix<f64> {
    let e = basis();
    let mut m = DMatrix::zeros(16, 16);
    for (l, el) in e.iter().enumerate() {
        let image = f(el);
        for (k, ek) in e.iter().enumerate() {
            m[(k, l)] = (&image * ek).trace().re;
        }
    }
    m
}

fn commutator_superop(h: &DMatrix<C64>) -> DMatrix<f64> {
    let mi = C64::new(0.0, -1.0);
    superoperator(|rho| (h * rho - rho * h) * mi)
}

fn dissipator_superop(rates: &RateSet) -> DMatrix<f64> {
    let ls = dissipators();
    superoperator(|rho| {
        let mut out = DMatrix::zeros(4, 4);
        for (l, &g) in ls.iter().zip(&rates.g) {
            if g == 0.0 {
                continue;
            }
            let ld = l.adjoint();
            let ldl = &ld * l;
            let term = l * rho * &ld - (&ldl * rho + rho * &ldl) * C64::new(0.5, 0.0);
            out += term * C64::new(g, 0.0);
        }
        out
    })
}

/// Driver Hamiltonian `H_D = −(σx₁ + σx₂)`.
pub fn driver_hamiltonian() -> DMatrix<C64> {
    -(pauli2(1, 0) + pauli2(0, 1))
}

/// Problem Hamiltonian `H_P` of a two-spin problem.
pub fn problem_hamiltonian(problem: &IsingProblem) -> Result<DMatrix<C64>> {
    if problem.n() != 2 {
        return Err(Error::input(format!(
            "two-spin dynamics needs a 2-spin problem, got {} spins",
            problem.n()
        )));
    }
    let h = problem.fields();
    let j = problem.coupling(0, 1);
    let c = |v: f64| C64::new(v, 0.0);
    Ok(pauli2(3, 0) * c(h[0]) + pauli2(0, 3) * c(h[1]) + pauli2(3, 3) * c(j))
}

/// Switches for the two-spin system.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TwoSpinOptions {
    /// Drop the transverse field (`A(s) ≡ 0`), leaving only the diagonal
    /// Hamiltonian.
    pub suppress_transverse: bool,
}

fn drop_first(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.view((1, 1), (15, 15)).into_owned()
}

/// 15-dimensional linear system for `(x₂ … x₁₆)`.
pub fn twospin_system(
    sched: &AnnealSchedule,
    problem: &IsingProblem,
    rates: &RateSet,
    opts: TwoSpinOptions,
) -> Result<LinearSystem> {
    let hp = problem_hamiltonian(problem)?;
    let k_a = if opts.suppress_transverse {
        DMatrix::zeros(15, 15)
    } else {
        drop_first(&commutator_superop(&driver_hamiltonian())) * HALF_GHZ_TO_RAD_PER_US
    };
    let k_b = drop_first(&commutator_superop(&hp)) * HALF_GHZ_TO_RAD_PER_US;
    let full = dissipator_superop(rates);
    let d = drop_first(&full);
    // x₁ = 1/2 is constant; its column becomes the source term.
    let y = full.view((1, 0), (15, 1)).column(0).into_owned() * 0.5;
    LinearSystem::new(sched.clone(), k_a, k_b, d, y)
}

/// `C(s) + D` and `y` at a single `s`.
pub fn build_generator(
    sched: &AnnealSchedule,
    problem: &IsingProblem,
    rates: &RateSet,
    s: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    sched.eval_a(s)?;
    let sys = twospin_system(sched, problem, rates, TwoSpinOptions::default())?;
    Ok((sys.generator(s), sys.source().clone()))
}

/// Pauli coefficients `x₁ … x₁₆` of a two-spin density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliCoeffs {
    pub x: [f64; 16],
}

impl PauliCoeffs {
    /// Coefficients from the 15 propagated components (`x₁ = 1/2`).
    pub fn from_reduced(v: &DVector<f64>) -> Self {
        let mut x = [0.0; 16];
        x[0] = 0.5;
        x[1..].copy_from_slice(v.as_slice());
        PauliCoeffs { x }
    }

    pub fn reduced(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.x[1..])
    }

    /// `x_k = Tr(ρ e_k)`.
    pub fn from_density(rho: &DMatrix<C64>) -> Self {
        let e = basis();
        let mut x = [0.0; 16];
        for (k, ek) in e.iter().enumerate() {
            x[k] = (rho * ek).trace().re;
        }
        PauliCoeffs { x }
    }

    pub fn density(&self) -> DMatrix<C64> {
        basis()
            .iter()
            .zip(&self.x)
            .fold(DMatrix::zeros(4, 4), |acc, (e, &v)| acc + e * C64::new(v, 0.0))
    }

    /// Smallest eigenvalue of the reconstructed density matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let eig = nalgebra::linalg::SymmetricEigen::new(self.density());
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Projector onto a classical state (`"uu"`, `"ud"`, `"du"`, `"dd"`).
pub fn coeffs_from_state(label: &str) -> Result<PauliCoeffs> {
    let (n, index) = parse_state_label(label)?;
    if n != 2 {
        return Err(Error::input(format!("{label:?} is not a two-spin state")));
    }
    let z1 = if index & 2 == 0 { 1.0 } else { -1.0 };
    let z2 = if index & 1 == 0 { 1.0 } else { -1.0 };
    // |σ₁σ₂⟩⟨σ₁σ₂| = (I + z₁σz₁)(I + z₂σz₂)/4.
    let mut x = [0.0; 16];
    x[0] = 0.5;
    x[3] = 0.5 * z2;
    x[12] = 0.5 * z1;
    x[15] = 0.5 * z1 * z2;
    Ok(PauliCoeffs { x })
}

/// `(p_uu, p_ud, p_du, p_dd)`, the diagonal of `ρ`.
pub fn probs_from_coeffs(c: &PauliCoeffs) -> [f64; 4] {
    let x = &c.x;
    let p = |z1: f64, z2: f64| 0.5 * (x[0] + z2 * x[3] + z1 * x[12] + z1 * z2 * x[15]);
    [p(1.0, 1.0), p(1.0, -1.0), p(-1.0, 1.0), p(-1.0, -1.0)]
}

/// Detailed-balance rates relative to `uu`: `γ₁ = γ₃ = γ₄ = γ₆ = base`,
/// `γ₂ = base·p_dd/p_uu`, `γ₅ = base·p_du/p_uu`, `γ₇ = base·p_ud/p_uu`.
pub fn rates_from_equilibrium(problem: &IsingProblem, beta: f64, base_rate: f64) -> Result<RateSet> {
    if problem.n() != 2 {
        return Err(Error::input("detailed-balance rates need a 2-spin problem"));
    }
    if !(base_rate > 0.0 && base_rate.is_finite()) {
        return Err(Error::domain(format!("base rate must be > 0, got {base_rate}")));
    }
    let p = equilibrium::state_probs(problem, beta)?;
    if p[0] <= f64::MIN_POSITIVE {
        return Err(Error::domain(
            "reference state uu has zero equilibrium probability",
        ));
    }
    let ratio = |q: f64| {
        let r = q / p[0];
        if r < 1.0e-300 {
            0.0
        } else {
            r
        }
    };
    RateSet::new([
        base_rate,
        base_rate * ratio(p[3]),
        base_rate,
        base_rate,
        base_rate * ratio(p[2]),
        base_rate,
        base_rate * ratio(p[1]),
    ])
}

/// Runs a protocol from the classical state in `protocol.initial_state`
/// and returns `(p_uu, p_ud, p_du, p_dd)` at the observer times.
pub fn run_2spin_protocol(
    sched: &AnnealSchedule,
    problem: &IsingProblem,
    rates: &RateSet,
    opts: TwoSpinOptions,
    protocol: &ReverseProtocol,
    plan: StepPlan,
    observers: &[f64],
) -> Result<ProbTrajectory> {
    let sys = twospin_system(sched, problem, rates, opts)?;
    let x0 = coeffs_from_state(&protocol.initial_state)?.reduced();
    let traj = integrators::propagate(&sys, plan, protocol, &x0, observers)?;
    Ok(probabilities(&traj))
}

pub(crate) fn probabilities(traj: &integrators::Trajectory) -> ProbTrajectory {
    ProbTrajectory {
        times: traj.times.clone(),
        probs: traj
            .states
            .iter()
            .map(|x| probs_from_coeffs(&PauliCoeffs::from_reduced(x)).to_vec())
            .collect(),
        fallbacks: traj.fallbacks,
    }
}
