//! Gibbs distributions, effective temperatures and open-chain closed forms.
//!
//! `β` is measured in inverse units of the dimensionless problem energies;
//! conversion to kelvin goes through [`TemperatureConversion`].

use crate::error::{Error, Result};
use crate::problems::{IsingProblem, Spectrum};
use crate::schedule::TemperatureConversion;

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::domain(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(())
}

/// Normalizes `ln w_i` into probabilities with a max shift.
fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Level probabilities `g_i e^{−β(E_i − E_min)} / Z`.
pub fn gibbs_probs(spec: &Spectrum, beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if spec.levels.is_empty() {
        return Err(Error::input("empty spectrum"));
    }
    let e0 = spec.levels[0].energy;
    let logs: Vec<f64> = spec
        .levels
        .iter()
        .map(|l| (l.degeneracy as f64).ln() - beta * (l.energy - e0))
        .collect();
    Ok(softmax(&logs))
}

/// Per-basis-state Gibbs probabilities (`2ⁿ` entries, enumeration order).
pub fn state_probs(problem: &IsingProblem, beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if problem.n() > crate::problems::MAX_ENUMERATION_SPINS {
        return Err(Error::Capability(format!(
            "{} spins are too many for a per-state table",
            problem.n()
        )));
    }
    let logs: Vec<f64> = (0..1usize << problem.n())
        .map(|k| -beta * problem.energy_of_index(k))
        .collect();
    Ok(softmax(&logs))
}

fn ground_prob(spec: &Spectrum, beta: f64) -> f64 {
    gibbs_probs(spec, beta).expect("beta checked")[0]
}

/// The `β ≥ 0` at which the ground level carries probability `p0`.
///
/// The map `β ↦ p₀(β)` is increasing, so plain bisection is used; it runs
/// until the bracket no longer shrinks in floating point.
pub fn effective_beta(p0: f64, spec: &Spectrum) -> Result<f64> {
    if spec.levels.len() < 2 {
        return Err(Error::domain("effective beta needs at least two levels"));
    }
    let total = spec.total_states() as f64;
    let p_min = spec.levels[0].degeneracy as f64 / total;
    let tol = 1.0e-12;
    if (p0 - p_min).abs() <= tol {
        return Ok(0.0);
    }
    if !(p0 > p_min && p0 < 1.0) {
        return Err(Error::domain(format!(
            "ground probability {p0} outside attainable range ({p_min}, 1)"
        )));
    }
    let mut hi = 1.0 / (spec.levels[1].energy - spec.levels[0].energy);
    while ground_prob(spec, hi) < p0 {
        hi *= 2.0;
        if !hi.is_finite() || hi > 1.0e300 {
            return Err(Error::domain(format!("ground probability {p0} not attainable")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ground_prob(spec, mid) < p0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Temperature in millikelvin, `T = η/β · 1000`.
pub fn beta_to_temperature(beta: f64, conv: &TemperatureConversion) -> Result<f64> {
    conv.beta_to_millikelvin(beta)
}

fn check_chain(n: usize, j: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::input(format!("chain needs at least 2 spins, got {n}")));
    }
    if !(j.is_finite() && j != 0.0) {
        return Err(Error::input(format!("chain coupling must be non-zero, got {j}")));
    }
    Ok(())
}

fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

/// Open-chain level `k` (number of domain walls): `E_k = J(N−1−2k)` with
/// `ln g_k = ln 2 + ln C(N−1, k)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainLevel {
    pub domain_walls: usize,
    pub energy: f64,
    pub ln_degeneracy: f64,
}

pub fn chain_levels(n: usize, j: f64) -> Result<Vec<ChainLevel>> {
    check_chain(n, j)?;
    let mut levels: Vec<ChainLevel> = (0..n)
        .map(|k| ChainLevel {
            domain_walls: k,
            energy: j * (n as f64 - 1.0 - 2.0 * k as f64),
            ln_degeneracy: std::f64::consts::LN_2 + ln_choose(n - 1, k),
        })
        .collect();
    levels.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(levels)
}

/// Gibbs probabilities over the chain levels, in increasing energy.
pub fn chain_level_probs(n: usize, j: f64, beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let levels = chain_levels(n, j)?;
    let logs: Vec<f64> = levels
        .iter()
        .map(|l| l.ln_degeneracy - beta * l.energy)
        .collect();
    Ok(softmax(&logs))
}

/// Probability of the two-fold degenerate ground level, `2e^{−βE₀}/Z`.
pub fn chain_ground_probability(n: usize, j: f64, beta: f64) -> Result<f64> {
    Ok(chain_level_probs(n, j, beta)?[0])
}

/// Equilibrium mean energy of an open chain, `−J(N−1)·tanh(βJ)`.
pub fn chain_mean_energy(n: usize, j: f64, beta: f64) -> Result<f64> {
    check_chain(n, j)?;
    check_beta(beta)?;
    Ok(-j * (n as f64 - 1.0) * (beta * j).tanh())
}

/// Result of [`fit_beta_to_energies`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaFit {
    pub beta: f64,
    /// Sum of squared residuals at the optimum.
    pub residual: f64,
}

/// Least-squares `β` for measured chain mean energies `(N, ⟨E⟩)`.
///
/// Golden-section search on `[0, 40/|J|]` brackets the minimum; a few
/// Gauss-Newton steps then polish it.
pub fn fit_beta_to_energies(data: &[(usize, f64)], j: f64) -> Result<BetaFit> {
    if data.len() < 2 {
        return Err(Error::input(format!(
            "beta fit needs at least 2 points, got {}",
            data.len()
        )));
    }
    for &(n, e) in data {
        check_chain(n, j)?;
        if !e.is_finite() {
            return Err(Error::input("mean energies must be finite"));
        }
    }
    if data.iter().all(|&(_, e)| e == 0.0) {
        return Err(Error::Fit {
            message: "all mean energies are zero; beta is not determined".into(),
            residual: 0.0,
            last: vec![0.0],
        });
    }

    let model = |n: usize, beta: f64| -j * (n as f64 - 1.0) * (beta * j).tanh();
    let sse = |beta: f64| -> f64 {
        data.iter()
            .map(|&(n, e)| (e - model(n, beta)).powi(2))
            .sum()
    };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 40.0 / j.abs());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (sse(c), sse(d));
    while b - a > 1.0e-8 * b.max(1.0) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = sse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = sse(d);
        }
    }
    let mut beta = 0.5 * (a + b);

    for _ in 0..20 {
        let (mut num, mut den) = (0.0, 0.0);
        for &(n, e) in data {
            let r = e - model(n, beta);
            let sech2 = 1.0 - (beta * j).tanh().powi(2);
            let deriv = -j * j * (n as f64 - 1.0) * sech2;
            num += r * deriv;
            den += deriv * deriv;
        }
        if den <= 0.0 {
            break;
        }
        let next = (beta + num / den).max(0.0);
        if sse(next) > sse(beta) {
            break;
        }
        let done = (next - beta).abs() <= 1.0e-15 * beta.max(1.0);
        beta = next;
        if done {
            break;
        }
    }
    Ok(BetaFit {
        beta,
        residual: sse(beta),
    })
}
