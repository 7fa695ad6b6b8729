//! Classical rate equations `dP/dt = W P` on basis-state populations.
//!
//! `W` has non-negative off-diagonal entries and zero column sums, so
//! `exp(tW)` is a stochastic matrix. The four-level builder uses the same
//! rate labels as the two-spin Lindblad dissipators, with states ordered
//! `uu, ud, du, dd`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lindblad2::RateSet;
use crate::linalg;

/// Column-sum tolerance relative to the largest rate.
const COLUMN_SUM_TOL: f64 = 1.0e-12;

/// Probability drift that is silently renormalized; more is an error.
const DRIFT_TOL: f64 = 1.0e-12;

/// Singular values below this fraction of the largest count as zero.
const KERNEL_TOL: f64 = 1.0e-10;

/// Column-sum error above which `exp(tW)` is recomputed by Padé.
const STOCHASTIC_TOL: f64 = 1.0e-13;

/// Allowed violation of the four-level balance identities, per unit rate.
const BALANCE_TOL: f64 = 1.0e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct RateMatrix {
    w: DMatrix<f64>,
    /// Set by [`RateMatrix::four_level`]; the stationary vector is then
    /// checked against the balance identities.
    four_level: Option<RateSet>,
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::input(format!("rate {name} = {v} must be finite and >= 0")));
    }
    Ok(())
}

impl RateMatrix {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if !w.is_square() || w.nrows() == 0 {
            return Err(Error::input("rate matrix must be square and non-empty"));
        }
        let n = w.nrows();
        let scale = w.amax().max(1.0);
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    check_rate(&format!("W[{i}][{j}]"), w[(i, j)])?;
                }
            }
            let sum: f64 = w.column(j).sum();
            if sum.abs() > COLUMN_SUM_TOL * scale {
                return Err(Error::input(format!("column {j} of W sums to {sum:e}")));
            }
        }
        Ok(RateMatrix { w, four_level: None })
    }

    /// Generator built from off-diagonal rates `W[i][j]` (flow `j → i`);
    /// the diagonal is filled in.
    pub fn from_rates(rates: DMatrix<f64>) -> Result<Self> {
        let mut w = rates;
        for j in 0..w.ncols() {
            w[(j, j)] = 0.0;
            let out: f64 = w.column(j).sum();
            w[(j, j)] = -out;
        }
        Self::new(w)
    }

    /// Two-level generator on `(p_up, p_down)`: `γ₁` pumps down → up,
    /// `γ₂` up → down.
    pub fn two_level(g1: f64, g2: f64) -> Result<Self> {
        check_rate("g1", g1)?;
        check_rate("g2", g2)?;
        Self::new(DMatrix::from_row_slice(2, 2, &[-g2, g1, g2, -g1]))
    }

    /// Four-level generator on `(uu, ud, du, dd)`: `uu` exchanges with `dd`
    /// through `γ₁` (in) and `γ₂` (out), with `du` through `γ₄`/`γ₅` and
    /// with `ud` through `γ₆`/`γ₇`. `γ₃` (pure dephasing) does not enter.
    pub fn four_level(rates: &RateSet) -> Result<Self> {
        let [g1, g2, _g3, g4, g5, g6, g7] = rates.g;
        for (i, v) in rates.g.iter().enumerate() {
            check_rate(&format!("g{}", i + 1), *v)?;
        }
        let mut r = DMatrix::zeros(4, 4);
        r[(3, 0)] = g2;
        r[(0, 3)] = g1;
        r[(2, 0)] = g5;
        r[(0, 2)] = g4;
        r[(1, 0)] = g7;
        r[(0, 1)] = g6;
        let mut w = Self::from_rates(r)?;
        w.four_level = Some(*rates);
        Ok(w)
    }

    /// Two-level rates whose stationary vector is `(p_up, 1 − p_up)`:
    /// `γ₁ = base`, `γ₂ = base·p_up/(1 − p_up)` capped so the larger rate is
    /// `base`.
    pub fn two_level_equilibrium(p_up: f64, base_rate: f64) -> Result<Self> {
        if !(p_up > 0.0 && p_up < 1.0) {
            return Err(Error::domain(format!("p_up must lie in (0, 1), got {p_up}")));
        }
        check_rate("base", base_rate)?;
        let ratio = p_up / (1.0 - p_up);
        let (g1, g2) = if ratio >= 1.0 {
            (base_rate, base_rate / ratio)
        } else {
            (base_rate * ratio, base_rate)
        };
        Self::two_level(g1, g2)
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn scaled(&self, factor: f64) -> RateMatrix {
        RateMatrix {
            w: &self.w * factor,
            four_level: self.four_level.map(|r| r.scaled(factor)),
        }
    }

    /// `exp(tW)` by eigendecomposition, or scaling and squaring when the
    /// eigenvectors are ill-conditioned.
    pub fn transition_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("time must be finite and >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(DMatrix::identity(self.dim(), self.dim()));
        }
        if let Ok(eig) = linalg::eigen(&self.w) {
            let mut scaled = eig.vectors.clone();
            for j in 0..self.dim() {
                let e = (eig.values[j] * t).exp();
                for i in 0..self.dim() {
                    scaled[(i, j)] *= e;
                }
            }
            let e = scaled * &eig.inverse;
            if linalg::imaginary_residue(&e) <= 1.0e-10 {
                let e = e.map(|z| z.re);
                // Nearly defective W: the eigenbasis may be too ill-conditioned
                // to keep the columns stochastic.
                let drift = (0..self.dim())
                    .map(|j| (e.column(j).sum() - 1.0).abs())
                    .fold(0.0, f64::max);
                if drift <= STOCHASTIC_TOL {
                    return Ok(e);
                }
            }
        }
        Ok((&self.w * t).exp())
    }

    /// `exp(tW) p0`.
    pub fn propagate(&self, p0: &[f64], t: f64) -> Result<Vec<f64>> {
        check_probability(p0, self.dim())?;
        let e = self.transition_matrix(t)?;
        let p = e * DVector::from_column_slice(p0);
        // Rounding in exp(tW) grows with ‖tW‖, most visibly through the
        // squarings of the Padé route.
        let scale = (self.w.abs().column_sum().max() * t).max(1.0);
        finish(p.as_slice(), DRIFT_TOL * scale)
    }

    /// The normalized kernel vector of `W`.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let n = self.dim();
        if n == 1 {
            return Ok(vec![1.0]);
        }
        let svd = self.w.clone().svd(false, true);
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let smax = svd.singular_values.max().max(f64::MIN_POSITIVE);
        let kernel: Vec<usize> = (0..n)
            .filter(|&k| svd.singular_values[k] <= KERNEL_TOL * smax)
            .collect();
        if kernel.len() > 1 {
            let basis = kernel
                .iter()
                .map(|&k| v_t.row(k).iter().copied().collect())
                .collect();
            return Err(Error::DegenerateChain {
                dimension: kernel.len(),
                basis,
            });
        }
        // Replace one balance equation by the normalization.
        let mut a = self.w.clone();
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = DVector::zeros(n);
        b[n - 1] = 1.0;
        let p = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Numerical("stationary solve is singular".into()))?;
        let p = finish(p.as_slice(), DRIFT_TOL)?;
        if let Some(rates) = &self.four_level {
            let scale = rates.g.iter().copied().fold(1.0, f64::max);
            let r = balance_residual(rates, &p);
            if r > BALANCE_TOL * scale {
                return Err(Error::Numerical(format!(
                    "stationary vector violates balance identities by {r:e}"
                )));
            }
        }
        Ok(p)
    }
}

fn check_probability(p: &[f64], dim: usize) -> Result<()> {
    if p.len() != dim {
        return Err(Error::input(format!(
            "probability vector has {} entries, chain has {dim}",
            p.len()
        )));
    }
    if p.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
        return Err(Error::input("probabilities must lie in [0, 1]"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1.0e-9 {
        return Err(Error::input(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// Drops round-off below zero and renormalizes, refusing real drift.
fn finish(p: &[f64], tol: f64) -> Result<Vec<f64>> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite probability".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol * p.len() as f64 {
        return Err(Error::Numerical(format!("probability drift: sum = {sum}")));
    }
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(Error::Numerical(format!("negative probability {min:e}")));
    }
    let clipped: Vec<f64> = p.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = clipped.iter().sum();
    Ok(clipped.into_iter().map(|v| v / s).collect())
}

/// Largest violation of the stationary identities
/// `γ₂p_uu = γ₁p_dd`, `γ₅p_uu = γ₄p_du`, `γ₇p_uu = γ₆p_ud`.
pub fn balance_residual(rates: &RateSet, p: &[f64]) -> f64 {
    let g = rates.g;
    [
        g[1] * p[0] - g[0] * p[3],
        g[4] * p[0] - g[3] * p[2],
        g[6] * p[0] - g[5] * p[1],
    ]
    .iter()
    .fold(0.0, |m, v| f64::max(m, v.abs()))
}

/// Indicator vector of basis state `index`.
pub fn indicator(dim: usize, index: usize) -> Vec<f64> {
    let mut p = vec![0.0; dim];
    p[index] = 1.0;
    p
}
