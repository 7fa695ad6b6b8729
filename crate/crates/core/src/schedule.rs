//! Annealing schedule `A(s)`, `B(s)` and the reverse-annealing time course.
//!
//! Schedule values are `A(s)/h` and `B(s)/h` in GHz. Angular-frequency
//! factors belong to the dynamics modules.

use std::io::Read;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planck constant (J s).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;

const DEFAULT_SCHEDULE_JSON: &str = include_str!("../data/default_schedule.json");

/// Roundoff allowance when checking `s ∈ [0, 1]`.
const S_SLACK: f64 = 1.0e-12;

/// `A(s)/h = (1−s)·exp(A_a + A_b s + A_c s² + A_d s³)`,
/// `B(s)/h = B_a + B_b s + B_c s²`, both in GHz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    #[serde(rename = "A_a")]
    pub a_a: f64,
    #[serde(rename = "A_b")]
    pub a_b: f64,
    #[serde(rename = "A_c")]
    pub a_c: f64,
    #[serde(rename = "A_d")]
    pub a_d: f64,
    #[serde(rename = "B_a")]
    pub b_a: f64,
    #[serde(rename = "B_b")]
    pub b_b: f64,
    #[serde(rename = "B_c")]
    pub b_c: f64,
    /// Residuals of the fit that produced the coefficients, if any.
    #[serde(skip)]
    pub residuals: Option<FitResiduals>,
}

/// Largest relative deviation of the fitted curves from the fitted table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitResiduals {
    pub max_rel_a: f64,
    pub max_rel_b: f64,
}

/// One row of a tabulated schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub s: f64,
    #[serde(rename = "A_over_h_GHz")]
    pub a: f64,
    #[serde(rename = "B_over_h_GHz")]
    pub b: f64,
}

#[derive(Serialize, Deserialize)]
struct CoefficientFile {
    #[serde(flatten)]
    schedule: AnnealSchedule,
    #[serde(default)]
    eta: Option<f64>,
}

fn check_s(s: f64) -> Result<f64> {
    if !(s.is_finite() && (-S_SLACK..=1.0 + S_SLACK).contains(&s)) {
        return Err(Error::domain(format!("s = {s} outside [0, 1]")));
    }
    Ok(s.clamp(0.0, 1.0))
}

impl AnnealSchedule {
    /// Builds a schedule and checks that `A`, `B` are non-negative on a
    /// dense grid of `[0, 1]`.
    pub fn new(a: [f64; 4], b: [f64; 3]) -> Result<Self> {
        let sched = AnnealSchedule {
            a_a: a[0],
            a_b: a[1],
            a_c: a[2],
            a_d: a[3],
            b_a: b[0],
            b_b: b[1],
            b_c: b[2],
            residuals: None,
        };
        sched.validate()?;
        Ok(sched)
    }

    fn validate(&self) -> Result<()> {
        let coeffs = [
            self.a_a, self.a_b, self.a_c, self.a_d, self.b_a, self.b_b, self.b_c,
        ];
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("schedule coefficients must be finite"));
        }
        for k in 0..=1000 {
            let s = k as f64 / 1000.0;
            if self.b_unchecked(s) < 0.0 {
                return Err(Error::input(format!("B(s) negative at s = {s}")));
            }
            if !self.a_unchecked(s).is_finite() {
                return Err(Error::input(format!("A(s) overflows at s = {s}")));
            }
        }
        Ok(())
    }

    /// Representative Advantage-generation schedule shipped with the crate.
    pub fn default_advantage() -> Self {
        Self::from_json_str(DEFAULT_SCHEDULE_JSON).expect("bundled schedule is valid")
    }

    /// Parses the coefficient JSON (`A_a … B_c`, optional `eta`). A stored
    /// `eta` that disagrees with the coefficients by more than 5 % is
    /// reported as a warning.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CoefficientFile = serde_json::from_str(text)?;
        let sched = file.schedule;
        sched.validate()?;
        if let Some(stored) = file.eta {
            let computed = sched.eta();
            if ((stored - computed) / computed).abs() > 0.05 {
                warn!("stored eta {stored} differs from B(1)-derived value {computed:.4}");
            }
        }
        Ok(sched)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Coefficient JSON including the derived `eta`.
    pub fn to_json_string(&self) -> String {
        let file = CoefficientFile {
            schedule: self.clone(),
            eta: Some(self.eta()),
        };
        serde_json::to_string_pretty(&file).expect("plain struct serializes")
    }

    pub(crate) fn a_unchecked(&self, s: f64) -> f64 {
        let poly = self.a_a + s * (self.a_b + s * (self.a_c + s * self.a_d));
        (1.0 - s) * poly.exp()
    }

    pub(crate) fn b_unchecked(&self, s: f64) -> f64 {
        self.b_a + s * (self.b_b + s * self.b_c)
    }

    /// `A(s)/h` in GHz.
    pub fn eval_a(&self, s: f64) -> Result<f64> {
        Ok(self.a_unchecked(check_s(s)?))
    }

    /// `B(s)/h` in GHz.
    pub fn eval_b(&self, s: f64) -> Result<f64> {
        Ok(self.b_unchecked(check_s(s)?))
    }

    /// Single-spin gap `Δ/h = 2·sqrt(A² + B²·h1²)` in GHz.
    pub fn energy_gap(&self, s: f64, h1: f64) -> Result<f64> {
        let s = check_s(s)?;
        let a = self.a_unchecked(s);
        let b = self.b_unchecked(s);
        Ok(2.0 * (a * a + b * b * h1 * h1).sqrt())
    }

    /// `η = h·B(1)/(2 k_B)·10⁹`.
    pub fn eta(&self) -> f64 {
        PLANCK * self.b_unchecked(1.0) / (2.0 * BOLTZMANN) * 1.0e9
    }
}

/// Reads a schedule table with header `s,A_over_h_GHz,B_over_h_GHz`.
pub fn read_schedule_csv<R: Read>(reader: R) -> Result<Vec<ScheduleRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for expected in ["s", "A_over_h_GHz", "B_over_h_GHz"] {
        if !headers.iter().any(|h| h == expected) {
            return Err(Error::input(format!("schedule table lacks column `{expected}`")));
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Writes a schedule table in the same format as [`read_schedule_csv`].
pub fn write_schedule_csv<W: std::io::Write>(writer: W, rows: &[ScheduleRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Tabulates a schedule on `n` equally spaced points of `[0, 1]`.
pub fn tabulate(sched: &AnnealSchedule, n: usize) -> Vec<ScheduleRow> {
    (0..n)
        .map(|k| {
            let s = k as f64 / (n - 1) as f64;
            ScheduleRow {
                s,
                a: sched.a_unchecked(s),
                b: sched.b_unchecked(s),
            }
        })
        .collect()
}

fn least_squares(design: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let svd = design.svd(true, true);
    svd.solve(&rhs, 1.0e-14)
        .map_err(|e| Error::Numerical(format!("least-squares solve failed: {e}")))
}

/// Unweighted least-squares fit of the two closed forms to a table.
///
/// `A` is fitted as a cubic in `ln(A/(1−s))` over rows with `s < 1` and
/// `A > 0`; `B` as a quadratic directly.
pub fn fit_schedule(rows: &[ScheduleRow]) -> Result<AnnealSchedule> {
    if rows.len() < 8 {
        return Err(Error::input(format!(
            "schedule fit needs at least 8 rows, got {}",
            rows.len()
        )));
    }
    for w in rows.windows(2) {
        if w[1].s <= w[0].s {
            return Err(Error::input("schedule rows must have strictly increasing s"));
        }
    }
    for r in rows {
        if !(0.0..=1.0).contains(&r.s) {
            return Err(Error::input(format!("s = {} outside [0, 1]", r.s)));
        }
        if !(r.a >= 0.0 && r.b >= 0.0) {
            return Err(Error::input(format!("negative schedule value at s = {}", r.s)));
        }
    }

    let a_rows: Vec<&ScheduleRow> = rows.iter().filter(|r| r.s < 1.0 && r.a > 0.0).collect();
    if a_rows.len() < 4 {
        return Err(Error::input("too few rows with A > 0 to fit A(s)"));
    }
    let design_a = DMatrix::from_fn(a_rows.len(), 4, |i, j| a_rows[i].s.powi(j as i32));
    let rhs_a = DVector::from_iterator(
        a_rows.len(),
        a_rows.iter().map(|r| (r.a / (1.0 - r.s)).ln()),
    );
    let ca = least_squares(design_a, rhs_a)?;

    let design_b = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i].s.powi(j as i32));
    let rhs_b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.b));
    let cb = least_squares(design_b, rhs_b)?;

    let mut sched = AnnealSchedule::new([ca[0], ca[1], ca[2], ca[3]], [cb[0], cb[1], cb[2]])?;
    let rel = |fit: f64, data: f64| {
        if data == 0.0 {
            fit.abs()
        } else {
            ((fit - data) / data).abs()
        }
    };
    let max_rel_a = a_rows
        .iter()
        .map(|r| rel(sched.a_unchecked(r.s), r.a))
        .fold(0.0, f64::max);
    let max_rel_b = rows
        .iter()
        .map(|r| rel(sched.b_unchecked(r.s), r.b))
        .fold(0.0, f64::max);
    sched.residuals = Some(FitResiduals {
        max_rel_a,
        max_rel_b,
    });
    Ok(sched)
}

/// Converts between inverse temperature `β` of the dimensionless problem
/// energies and physical temperature, `β = η / T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureConversion {
    pub eta: f64,
}

impl Default for TemperatureConversion {
    fn default() -> Self {
        TemperatureConversion { eta: 0.206 }
    }
}

impl TemperatureConversion {
    pub fn from_schedule(sched: &AnnealSchedule) -> Self {
        TemperatureConversion { eta: sched.eta() }
    }

    /// Temperature in millikelvin.
    pub fn beta_to_millikelvin(&self, beta: f64) -> Result<f64> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::domain(format!("beta must be positive, got {beta}")));
        }
        Ok(self.eta / beta * 1.0e3)
    }

    pub fn millikelvin_to_beta(&self, t_mk: f64) -> Result<f64> {
        if !(t_mk > 0.0 && t_mk.is_finite()) {
            return Err(Error::domain(format!("temperature must be positive, got {t_mk}")));
        }
        Ok(self.eta / (t_mk * 1.0e-3))
    }
}

/// Reverse annealing protocol: linear ramp `1 → s_r` over `t_reverse`,
/// pause for `t_wait`, linear ramp `s_r → 1` over `t_forward` (all in μs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseProtocol {
    pub t_reverse: f64,
    pub t_wait: f64,
    pub t_forward: f64,
    pub s_r: f64,
    /// Classical start configuration, e.g. `"d"` or `"uu"`.
    pub initial_state: String,
}

impl ReverseProtocol {
    pub fn new(
        t_reverse: f64,
        t_wait: f64,
        t_forward: f64,
        s_r: f64,
        initial_state: impl Into<String>,
    ) -> Result<Self> {
        if !(t_reverse > 0.0 && t_reverse.is_finite()) {
            return Err(Error::input(format!("t_reverse must be > 0, got {t_reverse}")));
        }
        if !(t_forward > 0.0 && t_forward.is_finite()) {
            return Err(Error::input(format!("t_forward must be > 0, got {t_forward}")));
        }
        if !(t_wait >= 0.0 && t_wait.is_finite()) {
            return Err(Error::input(format!("t_wait must be >= 0, got {t_wait}")));
        }
        if !(s_r > 0.0 && s_r < 1.0) {
            return Err(Error::input(format!("s_r must lie in (0, 1), got {s_r}")));
        }
        Ok(ReverseProtocol {
            t_reverse,
            t_wait,
            t_forward,
            s_r,
            initial_state: initial_state.into(),
        })
    }

    /// Waiting-time scan point: 1 μs ramps, variable pause.
    pub fn wts(t_end: f64, s_r: f64, initial_state: impl Into<String>) -> Result<Self> {
        Self::new(1.0, t_end - 2.0, 1.0, s_r, initial_state)
    }

    /// Annealing-time scan point: no pause, ramps of `t_end/2` each.
    pub fn ats(t_end: f64, s_r: f64, initial_state: impl Into<String>) -> Result<Self> {
        Self::new(t_end / 2.0, 0.0, t_end / 2.0, s_r, initial_state)
    }

    pub fn t_end(&self) -> f64 {
        self.t_reverse + self.t_wait + self.t_forward
    }

    /// Segment boundaries `[0, t_reverse, t_reverse + t_wait, t_end]`.
    pub fn breakpoints(&self) -> [f64; 4] {
        [
            0.0,
            self.t_reverse,
            self.t_reverse + self.t_wait,
            self.t_end(),
        ]
    }

    pub fn s_of_t(&self, t: f64) -> Result<f64> {
        let t_end = self.t_end();
        let slack = 1.0e-12 * t_end.max(1.0);
        if !(t.is_finite() && t >= -slack && t <= t_end + slack) {
            return Err(Error::domain(format!("t = {t} outside [0, {t_end}]")));
        }
        Ok(self.s_unchecked(t.clamp(0.0, t_end)))
    }

    pub(crate) fn s_unchecked(&self, t: f64) -> f64 {
        let [_, t1, t2, _] = self.breakpoints();
        if t <= t1 {
            1.0 - (1.0 - self.s_r) * t / self.t_reverse
        } else if t <= t2 {
            self.s_r
        } else {
            (self.s_r + (1.0 - self.s_r) * (t - t2) / self.t_forward).min(1.0)
        }
    }
}
