//! Curve fits for scan output: the saturating exponential
//! `f₁(1 − f₂e^{−f₃t})`, an exponential decay `a·e^{−bΔ}` and a power law
//! `a·x^b`.
//!
//! The two scaling fits are linear least squares in log space; the
//! `*_nonlinear` variants fit the same models directly with damped
//! Gauss-Newton for sensitivity checks. Inputs are sorted before use so the
//! results do not depend on point order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 200;
pub const PARAM_TOL: f64 = 1.0e-9;

/// Only points with `Δ` above this enter the exponential-decay fit.
pub const EXP_DECAY_MIN_GAP: f64 = 1.0;

/// Outcome of a damped least-squares run.
#[derive(Clone, Debug, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Sum of squared residuals at `params`.
    pub residual: f64,
    pub iterations: usize,
    /// Residual after every accepted step, starting with the initial guess.
    pub history: Vec<f64>,
}

/// Levenberg-Marquardt with Marquardt's diagonal scaling.
///
/// `model(params, x)` returns the value and the gradient with respect to
/// the parameters. `admissible` can veto steps (e.g. sign constraints).
pub fn levenberg_marquardt<M, A>(
    points: &[(f64, f64)],
    init: &[f64],
    model: M,
    admissible: A,
) -> Result<LmOutcome>
where
    M: Fn(&[f64], f64) -> (f64, Vec<f64>),
    A: Fn(&[f64]) -> bool,
{
    let np = init.len();
    let sse = |p: &[f64]| -> f64 {
        points
            .iter()
            .map(|&(x, y)| {
                let r = model(p, x).0 - y;
                r * r
            })
            .sum()
    };
    let mut params = init.to_vec();
    let mut residual = sse(&params);
    if !residual.is_finite() {
        return Err(Error::Fit {
            message: "non-finite residual at the initial guess".into(),
            residual,
            last: params,
        });
    }
    let mut history = vec![residual];
    let mut lambda = 1.0e-3;

    for iteration in 1..=MAX_ITERATIONS {
        let mut jac = DMatrix::zeros(points.len(), np);
        let mut r = DVector::zeros(points.len());
        for (i, &(x, y)) in points.iter().enumerate() {
            let (v, g) = model(&params, x);
            r[i] = y - v;
            for k in 0..np {
                jac[(i, k)] = g[k];
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        if jtr.amax() == 0.0 {
            return Ok(LmOutcome {
                params,
                residual,
                iterations: iteration,
                history,
            });
        }

        // Raise the damping until a step lowers the residual.
        let mut accepted = None;
        while lambda < 1.0e16 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * jtj[(k, k)].max(1.0e-300);
            }
            if let Some(delta) = a.cholesky().map(|c| c.solve(&jtr)) {
                let trial: Vec<f64> = params.iter().zip(delta.iter()).map(|(p, d)| p + d).collect();
                if admissible(&trial) {
                    let tr = sse(&trial);
                    if tr.is_finite() && tr <= residual {
                        accepted = Some((trial, tr, delta));
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        let Some((trial, tr, delta)) = accepted else {
            // No descent direction left: we are at a minimum to round-off.
            return Ok(LmOutcome {
                params,
                residual,
                iterations: iteration,
                history,
            });
        };
        let rel = delta
            .iter()
            .zip(&params)
            .map(|(d, p)| d.abs() / p.abs().max(1.0e-300))
            .fold(0.0, f64::max);
        params = trial;
        residual = tr;
        history.push(residual);
        lambda = (lambda / 10.0).max(1.0e-12);
        if rel < PARAM_TOL {
            return Ok(LmOutcome {
                params,
                residual,
                iterations: iteration,
                history,
            });
        }
    }
    Err(Error::Fit {
        message: format!("no convergence in {MAX_ITERATIONS} iterations"),
        residual,
        last: params,
    })
}

fn sorted(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut v = points.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v
}

fn check_finite(points: &[(f64, f64)]) -> Result<()> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::input("fit data must be finite"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturatingFit {
    pub f1: f64,
    pub f2: f64,
    /// `None` when the data carry no curvature to pin the rate down.
    pub f3: Option<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl SaturatingFit {
    pub fn eval(&self, t: f64) -> f64 {
        match self.f3 {
            Some(f3) => self.f1 * (1.0 - self.f2 * (-f3 * t).exp()),
            None => self.f1,
        }
    }
}

/// Options for [`fit_saturating_exp`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaturatingOptions {
    /// If every residual of the best constant fit is below this, the data
    /// are treated as flat and `f₃` is reported unidentifiable.
    pub noise_floor: f64,
}

impl Default for SaturatingOptions {
    fn default() -> Self {
        SaturatingOptions { noise_floor: 1.0e-9 }
    }
}

fn saturating_model(p: &[f64], t: f64) -> (f64, Vec<f64>) {
    let (f1, f2, f3) = (p[0], p[1], p[2]);
    let e = (-f3 * t).exp();
    let v = f1 * (1.0 - f2 * e);
    (v, vec![1.0 - f2 * e, -f1 * e, f1 * f2 * t * e])
}

/// Fits `p(t) = f₁(1 − f₂e^{−f₃t})` to `(t_end, p)` pairs.
///
/// Starts from `f₁ = max p` (the last value when the data decrease),
/// `f₂ = 1 − p_first/f₁`, `f₃ = 1/median(t)`.
pub fn fit_saturating_exp(points: &[(f64, f64)], opts: SaturatingOptions) -> Result<SaturatingFit> {
    check_finite(points)?;
    if points.len() < 4 {
        return Err(Error::input(format!(
            "saturating fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(t, p)| t <= 0.0 || !(0.0..=1.0).contains(&p)) {
        return Err(Error::input("saturating fit needs t > 0 and p in [0, 1]"));
    }
    let pts = sorted(points);
    let n = pts.len() as f64;
    let mean = pts.iter().map(|p| p.1).sum::<f64>() / n;
    if pts.iter().all(|p| (p.1 - mean).abs() <= opts.noise_floor) {
        let residual = pts.iter().map(|p| (p.1 - mean).powi(2)).sum();
        return Ok(SaturatingFit {
            f1: mean,
            f2: 0.0,
            f3: None,
            residual,
            iterations: 0,
        });
    }

    let first = pts[0].1;
    let last = pts[pts.len() - 1].1;
    let f1 = if last < first {
        last
    } else {
        pts.iter().map(|p| p.1).fold(f64::MIN, f64::max)
    };
    if f1 <= 0.0 {
        return Err(Error::input("saturating fit needs a positive plateau"));
    }
    let f2 = 1.0 - first / f1;
    let times: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let median = if times.len() % 2 == 1 {
        times[times.len() / 2]
    } else {
        0.5 * (times[times.len() / 2 - 1] + times[times.len() / 2])
    };
    let init = [f1, f2, 1.0 / median];
    let out = levenberg_marquardt(&pts, &init, saturating_model, |p| p[2] > 0.0)?;
    Ok(SaturatingFit {
        f1: out.params[0],
        f2: out.params[1],
        f3: Some(out.params[2]),
        residual: out.residual,
        iterations: out.iterations,
    })
}

/// `a·e^{−bx}` or `a·x^b`, with the fit residual and the input indices
/// that were left out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub a: f64,
    pub b: f64,
    /// Sum of squared residuals in the space the fit was done in.
    pub residual: f64,
    pub excluded: Vec<usize>,
}

/// Ordinary least-squares line `y = c + m·x`; returns `(c, m, sse)`.
fn line_fit(xy: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::input("fit needs at least two distinct abscissae"));
    }
    let m = sxy / sxx;
    let c = my - m * mx;
    let sse = xy.iter().map(|p| (p.1 - c - m * p.0).powi(2)).sum();
    Ok((c, m, sse))
}

/// Keeps `Δ > 1` points; all `f₃` must be positive.
fn exp_decay_data(points: &[(f64, f64)]) -> Result<(Vec<(f64, f64)>, Vec<usize>)> {
    check_finite(points)?;
    if points.iter().any(|p| p.1 <= 0.0) {
        return Err(Error::input("exponential-decay fit needs f3 > 0"));
    }
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        if p.0 > EXP_DECAY_MIN_GAP {
            kept.push(p);
        } else {
            excluded.push(i);
        }
    }
    if kept.len() < 2 {
        return Err(Error::input(format!(
            "exponential-decay fit needs at least 2 points with gap > {EXP_DECAY_MIN_GAP}, got {}",
            kept.len()
        )));
    }
    Ok((sorted(&kept), excluded))
}

fn power_law_data(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    check_finite(points)?;
    if points.iter().any(|p| p.0 <= 0.0 || p.1 <= 0.0) {
        return Err(Error::input("power-law fit needs positive x and y"));
    }
    if points.len() < 2 {
        return Err(Error::input("power-law fit needs at least 2 points"));
    }
    Ok(sorted(points))
}

/// `f₃ ≈ a·e^{−bΔ}` by least squares on `ln f₃`.
pub fn fit_exp_decay(points: &[(f64, f64)]) -> Result<ScalingFit> {
    let (kept, excluded) = exp_decay_data(points)?;
    let logs: Vec<(f64, f64)> = kept.iter().map(|&(d, f)| (d, f.ln())).collect();
    let (c, m, residual) = line_fit(&logs)?;
    Ok(ScalingFit {
        a: c.exp(),
        b: -m,
        residual,
        excluded,
    })
}

/// `f₃ ≈ a·x^b` by least squares in log-log space.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<ScalingFit> {
    let pts = power_law_data(points)?;
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let (c, m, residual) = line_fit(&logs)?;
    Ok(ScalingFit {
        a: c.exp(),
        b: m,
        residual,
        excluded: Vec::new(),
    })
}

/// Same model as [`fit_exp_decay`], fitted on the raw values and started
/// from the log-space solution.
pub fn fit_exp_decay_nonlinear(points: &[(f64, f64)]) -> Result<ScalingFit> {
    let start = fit_exp_decay(points)?;
    let (kept, excluded) = exp_decay_data(points)?;
    let out = levenberg_marquardt(
        &kept,
        &[start.a, start.b],
        |p, x| {
            let e = (-p[1] * x).exp();
            (p[0] * e, vec![e, -p[0] * x * e])
        },
        |p| p[0] > 0.0,
    )?;
    Ok(ScalingFit {
        a: out.params[0],
        b: out.params[1],
        residual: out.residual,
        excluded,
    })
}

/// Same model as [`fit_power_law`], fitted on the raw values.
pub fn fit_power_law_nonlinear(points: &[(f64, f64)]) -> Result<ScalingFit> {
    let start = fit_power_law(points)?;
    let pts = power_law_data(points)?;
    let out = levenberg_marquardt(
        &pts,
        &[start.a, start.b],
        |p, x| {
            let v = x.powf(p[1]);
            (p[0] * v, vec![v, p[0] * v * x.ln()])
        },
        |p| p[0] > 0.0,
    )?;
    Ok(ScalingFit {
        a: out.params[0],
        b: out.params[1],
        residual: out.residual,
        excluded: Vec::new(),
    })
}

/// JSON fit report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub kind: String,
    pub parameters: serde_json::Map<String, serde_json::Value>,
    pub residual: f64,
    pub iterations: usize,
    pub excluded: Vec<usize>,
}

impl From<&SaturatingFit> for FitReport {
    fn from(f: &SaturatingFit) -> Self {
        let mut parameters = serde_json::Map::new();
        parameters.insert("f1".into(), f.f1.into());
        parameters.insert("f2".into(), f.f2.into());
        parameters.insert("f3".into(), f.f3.map_or(serde_json::Value::Null, Into::into));
        FitReport {
            kind: "saturating".into(),
            parameters,
            residual: f.residual,
            iterations: f.iterations,
            excluded: Vec::new(),
        }
    }
}

impl FitReport {
    pub fn scaling(kind: &str, f: &ScalingFit) -> Self {
        let mut parameters = serde_json::Map::new();
        parameters.insert("a".into(), f.a.into());
        parameters.insert("b".into(), f.b.into());
        FitReport {
            kind: kind.into(),
            parameters,
            residual: f.residual,
            iterations: 0,
            excluded: f.excluded.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(f1: f64, f2: f64, f3: f64, ts: &[f64]) -> Vec<(f64, f64)> {
        ts.iter().map(|&t| (t, f1 * (1.0 - f2 * (-f3 * t).exp()))).collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn saturating_round_trip() {
        let ts: Vec<f64> = (1..=30).map(|k| 10.0 * k as f64).collect();
        let fit = fit_saturating_exp(&synth(0.8, 0.9, 0.01, &ts), Default::default()).unwrap();
        assert!(rel(fit.f1, 0.8) < 1e-6, "{fit:?}");
        assert!(rel(fit.f2, 0.9) < 1e-6);
        assert!(rel(fit.f3.unwrap(), 0.01) < 1e-6);
    }

    #[test]
    fn saturating_decreasing_data() {
        let ts: Vec<f64> = (1..=20).map(|k| 50.0 * k as f64).collect();
        let fit = fit_saturating_exp(&synth(0.83, -0.15, 0.004, &ts), Default::default()).unwrap();
        assert!(rel(fit.f3.unwrap(), 0.004) < 1e-6, "{fit:?}");
    }

    #[test]
    fn saturating_history_non_increasing() {
        let ts: Vec<f64> = (1..=12).map(|k| 3.0 * k as f64).collect();
        let pts = synth(0.5, 0.7, 0.2, &ts);
        let out = levenberg_marquardt(&pts, &[0.5, 0.1, 1.0], saturating_model, |p| p[2] > 0.0)
            .unwrap();
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn constant_data_unidentifiable() {
        let pts: Vec<(f64, f64)> = (1..=6).map(|k| (k as f64, 0.42)).collect();
        let fit = fit_saturating_exp(&pts, Default::default()).unwrap();
        assert_eq!(fit.f3, None);
        assert_eq!(fit.f2, 0.0);
        assert!((fit.f1 - 0.42).abs() < 1e-15);
    }

    #[test]
    fn saturating_input_checks() {
        assert!(fit_saturating_exp(&[(1.0, 0.1), (2.0, 0.2), (3.0, 0.3)], Default::default()).is_err());
        let bad = [(0.0, 0.1), (1.0, 0.2), (2.0, 0.3), (3.0, 0.3)];
        assert!(fit_saturating_exp(&bad, Default::default()).is_err());
    }

    #[test]
    fn exp_decay_excludes_small_gaps() {
        let pts: Vec<(f64, f64)> = [0.5f64, 1.0, 2.0, 5.0, 9.0]
            .iter()
            .map(|&d| (d, 0.12 * (-0.06 * d).exp()))
            .collect();
        let fit = fit_exp_decay(&pts).unwrap();
        assert_eq!(fit.excluded, vec![0, 1]);
        assert!(rel(fit.a, 0.12) < 1e-12 && rel(fit.b, 0.06) < 1e-12);
        assert!(fit_exp_decay(&[(2.0, 0.1), (3.0, -0.1)]).is_err());
        let two = fit_exp_decay(&[(2.0, 1.0), (3.0, (-1.0f64).exp())]).unwrap();
        assert!((two.b - 1.0).abs() < 1e-14 && two.residual < 1e-28);
    }

    #[test]
    fn power_law_constant() {
        let pts: Vec<(f64, f64)> = (1..5).map(|k| (0.01 * k as f64, 3.0)).collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!(fit.b.abs() < 1e-12 && rel(fit.a, 3.0) < 1e-12);
    }

    #[test]
    fn nonlinear_matches_log_space_on_exact_data() {
        let pts: Vec<(f64, f64)> = [0.001, 0.003, 0.01, 0.02]
            .iter()
            .map(|&x: &f64| (x, 1615.79 * x.powf(2.31)))
            .collect();
        let a = fit_power_law(&pts).unwrap();
        let b = fit_power_law_nonlinear(&pts).unwrap();
        assert!(rel(a.b, b.b) < 0.01 && rel(a.a, b.a) < 0.01);
    }

    #[test]
    fn report_json_shape() {
        let fit = SaturatingFit {
            f1: 0.8,
            f2: 0.1,
            f3: None,
            residual: 0.0,
            iterations: 0,
        };
        let v = serde_json::to_value(FitReport::from(&fit)).unwrap();
        assert!(v["parameters"]["f3"].is_null());
        assert_eq!(v["kind"], "saturating");
    }
}
