//! Simulation laboratory for reverse quantum annealing.
//!
//! The crate models a small annealer register driven through a reverse
//! annealing protocol (ramp from `s = 1` down to a reversal point, optional
//! pause, ramp back up) and coupled to an environment. Three dynamical
//! descriptions are available, from most to least quantum:
//!
//! * [`bloch`]: one spin, Bloch equations with `T1`, `T2`, `M0`;
//! * [`lindblad2`]: two spins, Lindblad master equation in a real Pauli basis;
//! * [`markov`]: classical rate equations `dP/dt = W P` on the diagonal.
//!
//! All of them reduce to linear systems `dx/dt = (C(s) + D) x + y` that are
//! propagated by the exponential integrators in [`integrators`]. The
//! equilibrium side ([`equilibrium`]) and the curve fits ([`fitting`]) are
//! used to compare long-time sampling statistics with Gibbs distributions.
//!
//! Units: annealing schedule values are `A(s)/h`, `B(s)/h` in GHz, times are
//! in microseconds, rates are per microsecond and angular frequencies are in
//! rad/μs.

pub mod bloch;
pub mod equilibrium;
pub mod error;
pub mod fitting;
pub mod integrators;
pub mod lindblad2;
mod linalg;
pub mod markov;
pub mod problems;
pub mod scans;
pub mod schedule;

pub use error::{Error, Result};
pub use integrators::{LinearSystem, Method, StepPlan, Trajectory};
pub use problems::{IsingProblem, Spectrum, TwoSatInstance};
pub use schedule::{AnnealSchedule, ReverseProtocol, TemperatureConversion};

/// GHz → rad/μs conversion factor for angular frequencies (2π · 10³).
pub const GHZ_TO_RAD_PER_US: f64 = 2.0 * std::f64::consts::PI * 1.0e3;
