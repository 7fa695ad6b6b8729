//! Fixtures shared by the benchmarks.

use revanneal::bloch::{self, BlochState};
use revanneal::lindblad2::{self, RateSet, TwoSpinOptions};
use revanneal::problems::builtin;
use revanneal::{AnnealSchedule, IsingProblem, LinearSystem, TwoSatInstance};

/// 1-spin Bloch system at `h₁ = 0.1` with the `wts` relaxation preset.
pub fn one_spin() -> LinearSystem {
    let sched = AnnealSchedule::default_advantage();
    bloch::bloch_system(&sched, 0.1, &bloch::preset("wts").unwrap()).unwrap()
}

pub fn one_spin_start() -> nalgebra::DVector<f64> {
    BlochState::from_label("d").unwrap().to_vector()
}

/// 2-spin Lindblad system for `2S1` (15 real Pauli coefficients).
pub fn two_spin() -> LinearSystem {
    let sched = AnnealSchedule::default_advantage();
    let rates = RateSet::new([1.5, 0.0, 1.5, 1.5, 0.6582, 1.5, 0.6582]).unwrap();
    lindblad2::twospin_system(&sched, &builtin("2S1").unwrap(), &rates, TwoSpinOptions::default()).unwrap()
}

/// A fixed 16-variable 2-SAT instance: a ring of implications plus a few
/// chords, so the spectrum has many distinct levels.
pub fn sat16() -> IsingProblem {
    let mut text = String::from("16 20\n");
    for v in 1..=16i64 {
        text.push_str(&format!("{} {}\n", -v, v % 16 + 1));
    }
    text.push_str("1 -9\n-3 11\n5 13\n-7 -15\n");
    TwoSatInstance::parse(&text).unwrap().to_ising().problem
}
