//! Waiting-time scans (WTS) and annealing-time scans (ATS), finite
//! sampling, and sweeps over `h₁`, `s_r` and chain length.
//!
//! A WTS point with total time `t_end` uses 1 μs ramps and pauses for
//! `t_end − 2` μs at `s_r`; an ATS point ramps down and up in `t_end/2` each
//! without pausing. Every point propagates the configured start state to
//! `t_end`, records the exact final probabilities, then draws
//! `samples_per_point` readouts from them. The generator of point `k` is
//! ChaCha8 seeded with `rng_seed` on stream `k`, so results do not depend
//! on the number of worker threads.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{self, BlochParams, BlochState};
use crate::equilibrium;
use crate::error::{Error, Result};
use crate::integrators::{self, protocol_segments, LinearSystem, Method, StepPlan, Stepper};
use crate::lindblad2::{self, PauliCoeffs, RateConfig, RateSet, TwoSpinOptions};
use crate::markov::{self, RateMatrix};
use crate::problems::{self, parse_problem, state_label, IsingProblem, ProblemSpec};
use crate::schedule::{AnnealSchedule, ReverseProtocol};

pub const DEFAULT_SAMPLES: u64 = 4500;
pub const DEFAULT_T_MAX_US: f64 = 2000.0;

/// Reversal distances accepted by [`sweep_sr`].
pub const SR_SWEEP_BOUNDS: (f64, f64) = (0.5, 0.9);

/// WTS ramp duration (μs).
const WTS_RAMP_US: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanMode {
    #[serde(rename = "WTS", alias = "wts")]
    Wts,
    #[serde(rename = "ATS", alias = "ats")]
    Ats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Bloch,
    Lindblad2,
    Markov,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Log,
    Linear,
}

/// Explicit list of `t_end` values or an evenly spaced range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeGrid {
    Explicit(Vec<f64>),
    Range {
        start: f64,
        stop: f64,
        n: usize,
        #[serde(default)]
        spacing: Spacing,
    },
}

impl TimeGrid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            TimeGrid::Explicit(ref v) => v.clone(),
            TimeGrid::Range {
                start,
                stop,
                n,
                spacing,
            } => {
                if n == 1 {
                    return vec![start];
                }
                (0..n)
                    .map(|k| {
                        let f = k as f64 / (n - 1) as f64;
                        match spacing {
                            Spacing::Linear => start + (stop - start) * f,
                            Spacing::Log => start * (stop / start).powf(f),
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Relaxation parameters given by preset name or explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlochSource {
    Preset(String),
    Params(BlochParams),
}

/// Optional rescaling of all relaxation rates by
/// `prefactor·exp(−c₁Δ(s_r))·A(s_r)^{c₂}`, with `Δ` the one-spin gap at the
/// first field of the problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateModel {
    #[serde(default = "one")]
    pub prefactor: f64,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
}

fn one() -> f64 {
    1.0
}
fn default_c1() -> f64 {
    0.06
}
fn default_c2() -> f64 {
    2.31
}

impl Default for RateModel {
    fn default() -> Self {
        RateModel {
            prefactor: 1.0,
            c1: default_c1(),
            c2: default_c2(),
        }
    }
}

impl RateModel {
    pub fn multiplier(&self, sched: &AnnealSchedule, s_r: f64, h1: f64) -> Result<f64> {
        let gap = sched.energy_gap(s_r, h1)?;
        let a = sched.eval_a(s_r)?;
        Ok(self.prefactor * (-self.c1 * gap).exp() * a.powf(self.c2))
    }
}

fn default_samples() -> u64 {
    DEFAULT_SAMPLES
}
fn default_tau() -> f64 {
    integrators::DEFAULT_TAU_US
}
fn default_t_max() -> f64 {
    DEFAULT_T_MAX_US
}

/// Scan configuration as read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub mode: ScanMode,
    /// `t_end` values in μs.
    pub t_grid: TimeGrid,
    pub s_r: f64,
    /// Problem label (`1S(0.1)`, `2S1`, `chain(8)`, a file path, …).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bloch: Option<BlochSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<RateConfig>,
    /// Explicit Markov generator (rows of `W`, per μs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_labels: Option<Vec<String>>,
    pub initial_state: String,
    #[serde(default = "default_samples")]
    pub samples_per_point: u64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_tau")]
    pub tau_us: f64,
    #[serde(default)]
    pub method: Method,
    /// Schedule coefficient JSON; the bundled default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_model: Option<RateModel>,
    /// Splits degenerate fields by this amount before the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy_lift: Option<f64>,
    /// Drop the transverse field in the two-spin model.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub suppress_transverse: bool,
    #[serde(default = "default_t_max")]
    pub t_max_us: f64,
}

impl ScanConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config; relative schedule and problem paths are taken
    /// relative to the config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_json_str(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        if let Some(s) = &cfg.schedule {
            if s.is_relative() {
                cfg.schedule = Some(dir.join(s));
            }
        }
        if let Some(p) = &cfg.problem {
            let candidate = dir.join(p);
            if Path::new(p).is_relative() && !Path::new(p).is_file() && candidate.is_file() {
                cfg.problem = Some(candidate.to_string_lossy().into_owned());
            }
        }
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn times(&self) -> Vec<f64> {
        self.t_grid.values()
    }

    fn problem_spec(&self) -> Result<Option<ProblemSpec>> {
        self.problem.as_deref().map(parse_problem).transpose()
    }

    /// Checks everything that can be checked without propagating and
    /// reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let times = self.times();
        if let TimeGrid::Range { start, stop, n, .. } = self.t_grid {
            if n == 0 {
                errs.push("t_grid.n must be >= 1".into());
            }
            if !(start > 0.0 && stop >= start) {
                errs.push(format!("t_grid range needs 0 < start <= stop, got {start}..{stop}"));
            }
        }
        if times.is_empty() {
            errs.push("t_grid is empty".into());
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            errs.push("t_grid must be strictly increasing".into());
        }
        let t_min = match self.mode {
            ScanMode::Wts => 2.0 * WTS_RAMP_US,
            ScanMode::Ats => 0.0,
        };
        if let Some(t) = times
            .iter()
            .find(|&&t| !(t.is_finite() && t >= t_min && t > 0.0 && t <= self.t_max_us))
        {
            errs.push(format!(
                "t_grid value {t} outside [{t_min}, {}] μs for {:?}",
                self.t_max_us, self.mode
            ));
        }
        if !(self.s_r > 0.0 && self.s_r < 1.0) {
            errs.push(format!("s_r must lie in (0, 1), got {}", self.s_r));
        }
        if !(self.tau_us > 0.0 && self.tau_us.is_finite()) {
            errs.push(format!("tau_us must be > 0, got {}", self.tau_us));
        }
        if self.samples_per_point == 0 {
            errs.push("samples_per_point must be >= 1".into());
        }
        if let Some(eps) = self.degeneracy_lift {
            if !eps.is_finite() {
                errs.push("degeneracy_lift must be finite".into());
            }
        }
        if let Some(m) = &self.rate_model {
            if !(m.prefactor >= 0.0 && m.prefactor.is_finite()) {
                errs.push("rate_model.prefactor must be >= 0".into());
            }
        }
        if let Some(r) = &self.rates {
            if let Err(e) = r.to_rates() {
                errs.push(e.to_string());
            }
        }
        if let Some(s) = &self.schedule {
            if !s.is_file() {
                errs.push(format!("schedule file {} not found", s.display()));
            }
        }

        let spec = match self.problem_spec() {
            Ok(s) => s,
            Err(e) => {
                errs.push(e.to_string());
                None
            }
        };
        let n = spec.as_ref().and_then(|s| match s {
            ProblemSpec::Chain { n, .. } => Some(*n),
            other => other.problem().ok().map(|p| p.n()),
        });
        match self.backend {
            Backend::Bloch => {
                if self.problem.is_none() {
                    errs.push("bloch backend needs a problem".into());
                }
                if n.is_some_and(|n| n != 1) {
                    errs.push(format!("bloch backend needs a 1-spin problem, got {} spins", n.unwrap()));
                }
                match &self.bloch {
                    Some(BlochSource::Preset(name)) => {
                        if let Err(e) = bloch::preset(name) {
                            errs.push(e.to_string());
                        }
                    }
                    Some(BlochSource::Params(p)) => {
                        if let Err(e) = p.validate() {
                            errs.push(e.to_string());
                        }
                    }
                    None if self.rates.is_none() => {
                        errs.push("bloch backend needs `bloch` parameters or `rates`".into())
                    }
                    None => {}
                }
                if n == Some(1) {
                    if let Err(e) = BlochState::from_label(&self.initial_state) {
                        errs.push(e.to_string());
                    }
                }
            }
            Backend::Lindblad2 => {
                if self.problem.is_none() {
                    errs.push("lindblad2 backend needs a problem".into());
                }
                if n.is_some_and(|n| n != 2) {
                    errs.push(format!("lindblad2 backend needs a 2-spin problem, got {} spins", n.unwrap()));
                }
                if self.rates.is_none() {
                    errs.push("lindblad2 backend needs `rates`".into());
                }
                if n == Some(2) {
                    if let Err(e) = lindblad2::coeffs_from_state(&self.initial_state) {
                        errs.push(e.to_string());
                    }
                }
            }
            Backend::Markov => {
                if self.generator.is_none() && self.rates.is_none() {
                    errs.push("markov backend needs `rates` or `generator`".into());
                }
                if self.generator.is_none() && self.problem.is_none() {
                    errs.push("markov backend needs a problem unless `generator` is given".into());
                }
                if let Some(g) = &self.generator {
                    let dim = g.len();
                    if g.iter().any(|r| r.len() != dim) {
                        errs.push("generator must be square".into());
                    }
                    if let Some(labels) = &self.state_labels {
                        if labels.len() != dim {
                            errs.push(format!(
                                "{} state labels for a {dim}-state generator",
                                labels.len()
                            ));
                        }
                    }
                }
            }
        }
        if self.backend != Backend::Markov && self.generator.is_some() {
            errs.push("`generator` is only used by the markov backend".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Input(errs.join("; ")))
        }
    }

    fn load_schedule(&self) -> Result<AnnealSchedule> {
        match &self.schedule {
            Some(p) => AnnealSchedule::load_json(p),
            None => Ok(AnnealSchedule::default_advantage()),
        }
    }

    fn protocol(&self, t_end: f64) -> Result<ReverseProtocol> {
        match self.mode {
            ScanMode::Wts => ReverseProtocol::wts(t_end, self.s_r, self.initial_state.clone()),
            ScanMode::Ats => ReverseProtocol::ats(t_end, self.s_r, self.initial_state.clone()),
        }
    }
}

/// One scan point.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanPoint {
    pub t_end: f64,
    pub exact: Vec<f64>,
    pub sampled: Vec<f64>,
    pub n_samples: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub state_labels: Vec<String>,
    pub points: Vec<ScanPoint>,
    /// Diagonalization steps that fell back to the product formula.
    pub fallbacks: u64,
}

impl ScanResult {
    /// `(t_end, p)` series of one state.
    pub fn series(&self, label: &str, sampled: bool) -> Result<Vec<(f64, f64)>> {
        let k = self
            .state_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::input(format!("no state {label:?} in scan")))?;
        Ok(self
            .points
            .iter()
            .map(|p| (p.t_end, if sampled { p.sampled[k] } else { p.exact[k] }))
            .collect())
    }

    pub fn rows(&self) -> Vec<ScanRow> {
        let mut out = Vec::with_capacity(self.points.len() * self.state_labels.len());
        for p in &self.points {
            for (k, label) in self.state_labels.iter().enumerate() {
                out.push(ScanRow {
                    t_end_us: p.t_end,
                    state_label: label.clone(),
                    p_exact: p.exact[k],
                    p_sampled: p.sampled[k],
                    n_samples: p.n_samples,
                });
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One line of the scan CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub t_end_us: f64,
    pub state_label: String,
    pub p_exact: f64,
    pub p_sampled: f64,
    pub n_samples: u64,
}

pub const SCAN_COLUMNS: [&str; 5] = ["t_end_us", "state_label", "p_exact", "p_sampled", "n_samples"];

/// Reads a scan CSV, naming any missing column.
pub fn read_scan_csv<R: Read>(reader: R) -> Result<Vec<ScanRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    for col in SCAN_COLUMNS {
        if !headers.iter().any(|h| h.trim() == col) {
            return Err(Error::input(format!("scan CSV is missing column {col:?}")));
        }
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<ScanRow>, _>>()?;
    Ok(rows)
}

/// Reproducibility record written next to a scan CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanMeta {
    pub config: ScanConfig,
    pub rng_seed: u64,
    pub version: String,
    pub state_labels: Vec<String>,
    pub fallbacks: u64,
}

impl ScanMeta {
    pub fn new(cfg: &ScanConfig, result: &ScanResult) -> Self {
        ScanMeta {
            config: cfg.clone(),
            rng_seed: cfg.rng_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            state_labels: result.state_labels.clone(),
            fallbacks: result.fallbacks,
        }
    }
}

/// `<out>.meta.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Draws `n` readouts from `probs` (clipped to the simplex) as a sequence
/// of conditional binomials.
pub fn sample_frequencies(probs: &[f64], n: u64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::input("sample count must be >= 1"));
    }
    let clipped: Vec<f64> = probs.iter().map(|p| p.clamp(0.0, 1.0)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("probabilities sum to zero".into()));
    }
    let mut counts = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (k, p) in clipped.iter().map(|p| p / total).enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == probs.len() {
            counts[k] = left;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(left, q)
            .map_err(|e| Error::Numerical(format!("binomial sampler: {e}")))?
            .sample(rng);
        counts[k] = draw;
        left -= draw;
        mass -= p;
    }
    Ok(counts.iter().map(|&c| c as f64 / n as f64).collect())
}

/// Generator for point `index` of a run seeded with `seed`.
pub fn point_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// A prepared dynamical model with its readout.
enum Model {
    Linear {
        sys: LinearSystem,
        x0: DVector<f64>,
        two_spin: bool,
    },
    Markov {
        w: RateMatrix,
        p0: Vec<f64>,
    },
}

impl Model {
    fn readout(&self, x: &DVector<f64>) -> Vec<f64> {
        match self {
            Model::Linear { two_spin: true, .. } => {
                lindblad2::probs_from_coeffs(&PauliCoeffs::from_reduced(x)).to_vec()
            }
            _ => {
                let (u, d) = bloch::probs_from_bloch(&BlochState::from_vector(x));
                vec![u, d]
            }
        }
    }
}

fn bloch_params(cfg: &ScanConfig) -> Result<BlochParams> {
    match &cfg.bloch {
        Some(BlochSource::Preset(name)) => bloch::preset(name),
        Some(BlochSource::Params(p)) => {
            p.validate()?;
            Ok(*p)
        }
        None => {
            let r = cfg
                .rates
                .as_ref()
                .ok_or_else(|| Error::input("bloch backend needs `bloch` or `rates`"))?
                .to_rates()?;
            BlochParams::from_rates(r.g[0], r.g[1], r.g[2])
        }
    }
}

fn rate_multiplier(cfg: &ScanConfig, sched: &AnnealSchedule, problem: Option<&IsingProblem>) -> Result<f64> {
    match &cfg.rate_model {
        None => Ok(1.0),
        Some(m) => {
            let h1 = problem.and_then(|p| p.fields().first().copied()).unwrap_or(0.0);
            m.multiplier(sched, cfg.s_r, h1)
        }
    }
}

fn markov_model(cfg: &ScanConfig, problem: Option<&IsingProblem>, mult: f64) -> Result<(RateMatrix, Vec<String>)> {
    if let Some(rows) = &cfg.generator {
        let dim = rows.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        if flat.len() != dim * dim {
            return Err(Error::input("generator must be square"));
        }
        let w = RateMatrix::new(DMatrix::from_row_slice(dim, dim, &flat))?.scaled(mult);
        let labels = cfg
            .state_labels
            .clone()
            .unwrap_or_else(|| (1..=dim).map(|k| format!("s{k}")).collect());
        return Ok((w, labels));
    }
    let problem = problem.ok_or_else(|| Error::input("markov backend needs a problem"))?;
    let rates = cfg
        .rates
        .as_ref()
        .ok_or_else(|| Error::input("markov backend needs `rates`"))?
        .to_rates()?
        .scaled(mult);
    match problem.n() {
        1 => Ok((
            RateMatrix::two_level(rates.g[0], rates.g[1])?,
            vec!["u".into(), "d".into()],
        )),
        2 => Ok((
            RateMatrix::four_level(&rates)?,
            (0..4).map(|i| state_label(2, i)).collect(),
        )),
        n => {
            let spec = problem.enumerate_spectrum()?;
            let g = spec.ground().degeneracy;
            if g != 4 {
                return Err(Error::input(format!(
                    "markov backend on a {n}-spin problem needs a 4-fold ground level, found {g}"
                )));
            }
            Ok((
                RateMatrix::four_level(&rates)?,
                (1..=4).map(|k| format!("gs{k}")).collect(),
            ))
        }
    }
}

fn build_model(cfg: &ScanConfig, sched: &AnnealSchedule) -> Result<(Model, Vec<String>)> {
    let mut problem = cfg.problem_spec()?.map(|s| s.problem()).transpose()?;
    if let (Some(eps), Some(p)) = (cfg.degeneracy_lift, problem.as_mut()) {
        *p = p.with_degeneracy_lift(eps)?;
    }
    let mult = rate_multiplier(cfg, sched, problem.as_ref())?;
    match cfg.backend {
        Backend::Bloch => {
            let problem = problem.ok_or_else(|| Error::input("bloch backend needs a problem"))?;
            if problem.n() != 1 {
                return Err(Error::input("bloch backend needs a 1-spin problem"));
            }
            let params = bloch_params(cfg)?;
            let params = if mult == 1.0 {
                params
            } else {
                let (g1, g2, g3) = params.to_rates();
                BlochParams::from_rates(g1 * mult, g2 * mult, g3 * mult)?
            };
            let sys = bloch::bloch_system(sched, problem.fields()[0], &params)?;
            let x0 = BlochState::from_label(&cfg.initial_state)?.to_vector();
            Ok((
                Model::Linear {
                    sys,
                    x0,
                    two_spin: false,
                },
                vec![state_label(1, 0), state_label(1, 1)],
            ))
        }
        Backend::Lindblad2 => {
            let problem = problem.ok_or_else(|| Error::input("lindblad2 backend needs a problem"))?;
            let rates: RateSet = cfg
                .rates
                .as_ref()
                .ok_or_else(|| Error::input("lindblad2 backend needs `rates`"))?
                .to_rates()?
                .scaled(mult);
            let opts = TwoSpinOptions {
                suppress_transverse: cfg.suppress_transverse,
            };
            let sys = lindblad2::twospin_system(sched, &problem, &rates, opts)?;
            let x0 = lindblad2::coeffs_from_state(&cfg.initial_state)?.reduced();
            Ok((
                Model::Linear {
                    sys,
                    x0,
                    two_spin: true,
                },
                (0..4).map(|i| state_label(2, i)).collect(),
            ))
        }
        Backend::Markov => {
            let (w, labels) = markov_model(cfg, problem.as_ref(), mult)?;
            let index = labels
                .iter()
                .position(|l| *l == cfg.initial_state)
                .or_else(|| {
                    problems::parse_state_label(&cfg.initial_state)
                        .ok()
                        .filter(|(n, _)| 1usize << n == labels.len())
                        .map(|(_, i)| i)
                })
                .ok_or_else(|| {
                    Error::input(format!(
                        "initial state {:?} is not one of {}",
                        cfg.initial_state,
                        labels.join(", ")
                    ))
                })?;
            let p0 = markov::indicator(w.dim(), index);
            Ok((Model::Markov { w, p0 }, labels))
        }
    }
}

/// Runs a scan on the current rayon pool.
pub fn run_scan(cfg: &ScanConfig) -> Result<ScanResult> {
    cfg.validate()?;
    let sched = cfg.load_schedule()?;
    let (model, labels) = build_model(cfg, &sched)?;
    let plan = StepPlan::new(cfg.tau_us, cfg.method)?;
    let times = cfg.times();

    // WTS points share both ramps; only the pause differs.
    let ramps = match (&model, cfg.mode) {
        (Model::Linear { sys, .. }, ScanMode::Wts) => {
            let segs = protocol_segments(&cfg.protocol(2.0 * WTS_RAMP_US)?);
            let mut stepper = Stepper::new(sys, plan);
            let down = stepper.segment_map(&segs[0]);
            let up = stepper.segment_map(&segs[1]);
            Some((down, up, stepper.fallbacks))
        }
        _ => None,
    };

    let exact: Vec<Result<(Vec<f64>, u64)>> = times
        .par_iter()
        .map(|&t_end| -> Result<(Vec<f64>, u64)> {
            match &model {
                Model::Markov { w, p0 } => Ok((w.propagate(p0, t_end)?, 0)),
                Model::Linear { sys, x0, .. } => {
                    let protocol = cfg.protocol(t_end)?;
                    if let Some((down, up, _)) = &ramps {
                        let mut x = down.apply(x0);
                        let mut fallbacks = 0;
                        let segs = protocol_segments(&protocol);
                        if let Some(wait) = segs.iter().find(|s| s.is_constant()) {
                            let mut stepper = Stepper::new(sys, plan);
                            x = stepper.segment_map(wait).apply(&x);
                            fallbacks = stepper.fallbacks;
                        }
                        Ok((model.readout(&up.apply(&x)), fallbacks))
                    } else {
                        let traj = integrators::propagate(sys, plan, &protocol, x0, &[])?;
                        let x = traj.last().expect("final state recorded");
                        Ok((model.readout(x), traj.fallbacks))
                    }
                }
            }
        })
        .collect();

    let mut points = Vec::with_capacity(times.len());
    let mut fallbacks = ramps.as_ref().map_or(0, |r| r.2);
    for (k, (t_end, res)) in times.iter().zip(exact).enumerate() {
        let (p, fb) = res?;
        fallbacks += fb;
        let mut rng = point_rng(cfg.rng_seed, k);
        let sampled = sample_frequencies(&p, cfg.samples_per_point, &mut rng)?;
        points.push(ScanPoint {
            t_end: *t_end,
            exact: p,
            sampled,
            n_samples: cfg.samples_per_point,
        });
    }
    Ok(ScanResult {
        state_labels: labels,
        points,
        fallbacks,
    })
}

/// Runs `f` on a dedicated pool of `workers` threads. Results do not
/// depend on the worker count.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(f)
}

pub fn run_scan_with_workers(cfg: &ScanConfig, workers: usize) -> Result<ScanResult> {
    with_workers(workers, || run_scan(cfg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    /// The swept value (`h₁` or `s_r`).
    pub value: f64,
    /// `Δ(s_r, h₁)` for `h₁` sweeps, `A(s_r)` for `s_r` sweeps.
    pub derived: f64,
    pub result: ScanResult,
}

fn check_template(cfg: &ScanConfig) -> Result<()> {
    if cfg.backend != Backend::Bloch {
        return Err(Error::input("sweeps run on the bloch backend"));
    }
    Ok(())
}

/// One WTS/ATS per field value; reports the one-spin gap at `s_r`.
pub fn sweep_h1(template: &ScanConfig, h1_list: &[f64]) -> Result<Vec<SweepEntry>> {
    check_template(template)?;
    let sched = template.load_schedule()?;
    h1_list
        .iter()
        .map(|&h1| {
            let mut cfg = template.clone();
            cfg.problem = Some(format!("1S({h1})"));
            Ok(SweepEntry {
                value: h1,
                derived: sched.energy_gap(cfg.s_r, h1)?,
                result: run_scan(&cfg)?,
            })
        })
        .collect()
}

/// One WTS/ATS per reversal distance; reports `A(s_r)`.
pub fn sweep_sr(template: &ScanConfig, sr_list: &[f64]) -> Result<Vec<SweepEntry>> {
    check_template(template)?;
    let (lo, hi) = SR_SWEEP_BOUNDS;
    if let Some(s) = sr_list.iter().find(|&&s| !(lo..=hi).contains(&s)) {
        return Err(Error::input(format!("s_r = {s} outside the sweep range [{lo}, {hi}]")));
    }
    let sched = template.load_schedule()?;
    sr_list
        .iter()
        .map(|&s_r| {
            let mut cfg = template.clone();
            cfg.s_r = s_r;
            Ok(SweepEntry {
                value: s_r,
                derived: sched.eval_a(s_r)?,
                result: run_scan(&cfg)?,
            })
        })
        .collect()
}

/// Writes `<name>,<derived_name>,t_end_us,state_label,p_exact,p_sampled,n_samples`.
pub fn write_sweep_csv<W: Write>(
    writer: W,
    entries: &[SweepEntry],
    name: &str,
    derived_name: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![name, derived_name];
    header.extend(SCAN_COLUMNS);
    w.write_record(&header)?;
    for e in entries {
        for row in e.result.rows() {
            w.write_record(&[
                e.value.to_string(),
                e.derived.to_string(),
                row.t_end_us.to_string(),
                row.state_label,
                row.p_exact.to_string(),
                row.p_sampled.to_string(),
                row.n_samples.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Equilibrium statistics of one chain length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSweepRow {
    pub n: usize,
    pub p0_exact: f64,
    pub p0_sampled: f64,
    pub mean_energy_exact: f64,
    pub mean_energy_sampled: f64,
    pub abs_mean_energy: f64,
}

/// Gibbs ground-state probability and mean energy of ferromagnetic chains,
/// exact (closed form) and from `samples` draws over the energy levels.
pub fn chain_equilibrium_sweep(
    n_list: &[usize],
    j: f64,
    beta: f64,
    samples: u64,
    seed: u64,
) -> Result<Vec<ChainSweepRow>> {
    n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let levels = equilibrium::chain_levels(n, j)?;
            let probs = equilibrium::chain_level_probs(n, j, beta)?;
            let mut rng = point_rng(seed, k);
            let freq = sample_frequencies(&probs, samples, &mut rng)?;
            let mean_exact = equilibrium::chain_mean_energy(n, j, beta)?;
            let mean_sampled = freq.iter().zip(&levels).map(|(f, l)| f * l.energy).sum();
            Ok(ChainSweepRow {
                n,
                p0_exact: probs[0],
                p0_sampled: freq[0],
                mean_energy_exact: mean_exact,
                mean_energy_sampled: mean_sampled,
                abs_mean_energy: mean_exact.abs(),
            })
        })
        .collect()
}

pub fn write_chain_csv<W: Write>(writer: W, rows: &[ChainSweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_chain_csv<R: Read>(reader: R) -> Result<Vec<ChainSweepRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    for col in ["n", "mean_energy_sampled"] {
        if !headers.iter().any(|h| h.trim() == col) {
            return Err(Error::input(format!("chain CSV is missing column {col:?}")));
        }
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<ChainSweepRow>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wts_1spin() -> ScanConfig {
        ScanConfig::from_json_str(
            r#"{"mode": "WTS", "t_grid": [2, 10, 50], "s_r": 0.7, "problem": "1S(0.1)",
                "backend": "bloch", "bloch": "wts", "initial_state": "d", "rng_seed": 7}"#,
        )
        .unwrap()
    }

    #[test]
    fn grid_values() {
        let g = TimeGrid::Range {
            start: 2.0,
            stop: 2000.0,
            n: 4,
            spacing: Spacing::Log,
        };
        let v = g.values();
        assert!((v[1] - 20.0).abs() < 1e-12 && (v[3] - 2000.0).abs() < 1e-9);
        let lin: TimeGrid = serde_json::from_str(r#"{"start": 0, "stop": 3, "n": 4, "spacing": "linear"}"#).unwrap();
        assert_eq!(lin.values(), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn validation_collects_errors() {
        let mut cfg = wts_1spin();
        cfg.t_grid = TimeGrid::Explicit(vec![1.0, 3000.0]);
        cfg.s_r = 1.5;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("t_grid") && msg.contains("s_r"), "{msg}");
        let mut cfg = wts_1spin();
        cfg.problem = Some("2S1".into());
        assert!(cfg.validate().is_err());
        assert!(ScanConfig::from_json_str(r#"{"mode": "WTS", "backend": "quantum"}"#).is_err());
    }

    #[test]
    fn wts_and_ats_meet_at_two_microseconds() {
        let mut cfg = wts_1spin();
        cfg.t_grid = TimeGrid::Explicit(vec![2.0]);
        let a = run_scan(&cfg).unwrap();
        cfg.mode = ScanMode::Ats;
        let b = run_scan(&cfg).unwrap();
        for (x, y) in a.points[0].exact.iter().zip(&b.points[0].exact) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn wts_shortcut_matches_direct_propagation() {
        let cfg = wts_1spin();
        let res = run_scan(&cfg).unwrap();
        let sched = AnnealSchedule::default_advantage();
        let params = bloch::preset("wts").unwrap();
        for p in &res.points {
            let protocol = ReverseProtocol::wts(p.t_end, 0.7, "d").unwrap();
            let direct = bloch::run_1spin_protocol(&sched, 0.1, &params, &protocol, StepPlan::default(), &[])
                .unwrap();
            let d = direct.last().unwrap();
            assert!((d[1] - p.exact[1]).abs() < 1e-10, "{} vs {}", d[1], p.exact[1]);
        }
    }

    #[test]
    fn zero_generator_is_frozen() {
        let cfg = ScanConfig::from_json_str(
            r#"{"mode": "ATS", "t_grid": [1, 10, 100], "s_r": 0.7, "backend": "markov",
                "generator": [[0,0,0],[0,0,0],[0,0,0]], "state_labels": ["a","b","c"],
                "initial_state": "b"}"#,
        )
        .unwrap();
        let res = run_scan(&cfg).unwrap();
        for p in &res.points {
            assert_eq!(p.exact, vec![0.0, 1.0, 0.0]);
            assert_eq!(p.sampled, vec![0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn seeds_are_reproducible_and_exact_column_seed_free() {
        let cfg = wts_1spin();
        let a = run_scan(&cfg).unwrap();
        let b = run_scan_with_workers(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.rng_seed = 8;
        other.samples_per_point = 100;
        let c = run_scan(&other).unwrap();
        for (p, q) in a.points.iter().zip(&c.points) {
            assert_eq!(p.exact, q.exact);
        }
    }

    #[test]
    fn sampling_sums_to_one() {
        let mut rng = point_rng(1, 0);
        let f = sample_frequencies(&[0.2, 0.5, 0.3, -1e-17], 4500, &mut rng).unwrap();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(f[3], 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let res = run_scan(&wts_1spin()).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_end_us,state_label,p_exact,p_sampled,n_samples"));
        let rows = read_scan_csv(text.as_bytes()).unwrap();
        assert_eq!(rows, res.rows());
        let bad = "t_end,state_label,p_exact,p_sampled,n_samples\n";
        let err = read_scan_csv(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("t_end_us"));
    }

    #[test]
    fn degeneracy_lift_splits_2s2() {
        let p = problems::builtin("2S2").unwrap().with_degeneracy_lift(0.001).unwrap();
        assert!((p.fields()[0] + 1.001).abs() < 1e-15);
        assert!((p.fields()[1] + 0.999).abs() < 1e-15);
    }

    #[test]
    fn chain_sweep_matches_closed_form() {
        let rows = chain_equilibrium_sweep(&[10, 20, 50], -0.1, 7.64, 5000, 3).unwrap();
        for r in &rows {
            assert!((r.abs_mean_energy - 0.0643 * (r.n as f64 - 1.0)).abs() < 1e-4 * r.n as f64);
            assert!((r.p0_sampled - r.p0_exact).abs() < 0.03);
        }
        assert!(rows.windows(2).all(|w| w[1].p0_exact < w[0].p0_exact));
    }

    #[test]
    fn sr_sweep_bounds() {
        assert!(sweep_sr(&wts_1spin(), &[0.4]).is_err());
    }
}
