//! Exponential integrators for `dx/dt = (C(s) + D) x + y`.
//!
//! `C(s) = A(s)·K_A + B(s)·K_B` is skew-symmetric with fixed `K_A`, `K_B`
//! (constants such as `2π·10³` are folded into them), `D` and `y` are
//! constant. Along a protocol `s(t)` the generator is frozen at the midpoint
//! of each step and the step is integrated exactly (diagonalization) or by a
//! symmetric splitting (product formula).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SkewExp, C64};
use crate::schedule::{AnnealSchedule, ReverseProtocol};

/// Imaginary parts larger than this (relative) reject a diagonalization.
pub const MAX_IMAGINARY_RESIDUE: f64 = 1.0e-10;

/// Default step, 1 ns.
pub const DEFAULT_TAU_US: f64 = 1.0e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Diagonalization,
    ProductFormula,
}

/// Step size and stepper.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepPlan {
    pub tau: f64,
    pub method: Method,
}

impl Default for StepPlan {
    fn default() -> Self {
        StepPlan {
            tau: DEFAULT_TAU_US,
            method: Method::Diagonalization,
        }
    }
}

impl StepPlan {
    pub fn new(tau: f64, method: Method) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::input(format!("step size must be > 0, got {tau}")));
        }
        Ok(StepPlan { tau, method })
    }
}

/// Affine map `x ↦ M x + q`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        AffineMap {
            matrix: DMatrix::identity(dim, dim),
            offset: DVector::zeros(dim),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }

    /// `next ∘ self`.
    pub fn then(&self, next: &AffineMap) -> AffineMap {
        AffineMap {
            matrix: &next.matrix * &self.matrix,
            offset: &next.matrix * &self.offset + &next.offset,
        }
    }

    /// Applies the map `k` times to `x` by binary powering.
    pub fn apply_power(&self, x: &DVector<f64>, mut k: u64) -> DVector<f64> {
        let mut x = x.clone();
        let mut base = self.clone();
        while k > 0 {
            if k & 1 == 1 {
                x = base.apply(&x);
            }
            k >>= 1;
            if k > 0 {
                base = base.then(&base);
            }
        }
        x
    }

    /// The map composed with itself `k` times.
    pub fn power(&self, mut k: u64) -> AffineMap {
        let mut acc = AffineMap::identity(self.offset.len());
        let mut base = self.clone();
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.then(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.then(&base);
            }
        }
        acc
    }
}

/// How the product formula splits the coherent part.
#[derive(Clone, Debug)]
enum Splitting {
    /// Three-dimensional rotation: `C(s)` is exponentiated in closed form
    /// and sandwiched between half steps of `D`.
    Rotation,
    /// `e^{τA₁/2} e^{τA₂/2} e^{τD} e^{τA₂/2} e^{τA₁/2}` with
    /// `A₁ = A(s)K_A`, `A₂ = B(s)K_B`.
    Parts { exp_a: SkewExp, exp_b: SkewExp },
}

/// Linear system `dx/dt = (A(s)K_A + B(s)K_B + D) x + y`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    schedule: AnnealSchedule,
    k_a: DMatrix<f64>,
    k_b: DMatrix<f64>,
    dissipator: DMatrix<f64>,
    source: DVector<f64>,
    splitting: Splitting,
}

fn skew_error(k: &DMatrix<f64>) -> f64 {
    (k + k.transpose()).amax()
}

impl LinearSystem {
    pub fn new(
        schedule: AnnealSchedule,
        k_a: DMatrix<f64>,
        k_b: DMatrix<f64>,
        dissipator: DMatrix<f64>,
        source: DVector<f64>,
    ) -> Result<Self> {
        let dim = source.len();
        for (name, m) in [("K_A", &k_a), ("K_B", &k_b), ("D", &dissipator)] {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::input(format!("{name} must be {dim}x{dim}")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("{name} has non-finite entries")));
            }
        }
        for (name, m) in [("K_A", &k_a), ("K_B", &k_b)] {
            let scale = m.amax().max(1.0);
            if skew_error(m) > 1.0e-12 * scale {
                return Err(Error::input(format!("{name} is not skew-symmetric")));
            }
        }
        let splitting = if dim == 3 {
            Splitting::Rotation
        } else {
            Splitting::Parts {
                exp_a: SkewExp::new(&k_a),
                exp_b: SkewExp::new(&k_b),
            }
        };
        Ok(LinearSystem {
            schedule,
            k_a,
            k_b,
            dissipator,
            source,
            splitting,
        })
    }

    pub fn dim(&self) -> usize {
        self.source.len()
    }

    pub fn schedule(&self) -> &AnnealSchedule {
        &self.schedule
    }

    pub fn dissipator(&self) -> &DMatrix<f64> {
        &self.dissipator
    }

    pub fn source(&self) -> &DVector<f64> {
        &self.source
    }

    fn ab(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(0.0, 1.0);
        (self.schedule.a_unchecked(s), self.schedule.b_unchecked(s))
    }

    /// `C(s)` in rad/μs.
    pub fn coherent(&self, s: f64) -> DMatrix<f64> {
        let (a, b) = self.ab(s);
        &self.k_a * a + &self.k_b * b
    }

    /// `C(s) + D`.
    pub fn generator(&self, s: f64) -> DMatrix<f64> {
        self.coherent(s) + &self.dissipator
    }

    /// Right-hand side `(C(s) + D) x + y`.
    pub fn derivative(&self, s: f64, x: &DVector<f64>) -> DVector<f64> {
        self.generator(s) * x + &self.source
    }

    /// Exact step map for the generator frozen at `s`, by diagonalization.
    pub fn step_map_diag(&self, s: f64, tau: f64) -> Result<AffineMap> {
        let m = self.generator(s);
        let eig = linalg::eigen(&m).map_err(|e| {
            Error::Numerical(format!("diagonalization refused at s = {s}: {e:?}"))
        })?;
        let n = self.dim();
        let mut scaled = eig.vectors.clone();
        let mut scaled_phi = eig.vectors.clone();
        for j in 0..n {
            let lambda = eig.values[j];
            let e = (lambda * tau).exp();
            let p = linalg::phi1(lambda, tau);
            for i in 0..n {
                scaled[(i, j)] *= e;
                scaled_phi[(i, j)] *= p;
            }
        }
        let e = scaled * &eig.inverse;
        let y = self.source.map(|v| C64::new(v, 0.0));
        let q = scaled_phi * (&eig.inverse * y);
        let q_mat = DMatrix::from_column_slice(n, 1, q.as_slice());
        let residue = linalg::imaginary_residue(&e).max(linalg::imaginary_residue(&q_mat));
        if residue > MAX_IMAGINARY_RESIDUE {
            return Err(Error::Numerical(format!(
                "imaginary residue {residue:.2e} at s = {s}"
            )));
        }
        Ok(AffineMap {
            matrix: e.map(|z| z.re),
            offset: q.map(|z| z.re),
        })
    }

    /// Second-order splitting step map for the generator frozen at `s`.
    pub fn step_map_product(&self, s: f64, tau: f64) -> AffineMap {
        let mut cache = DissipatorCache::default();
        self.step_map_product_cached(s, tau, &mut cache)
    }

    fn step_map_product_cached(&self, s: f64, tau: f64, cache: &mut DissipatorCache) -> AffineMap {
        let (a, b) = self.ab(s);
        let e = match &self.splitting {
            Splitting::Rotation => {
                let half = cache.get(&self.dissipator, 0.5 * tau);
                let rot = rotation_exp(&(&self.k_a * a + &self.k_b * b), tau);
                half * rot * half
            }
            Splitting::Parts { exp_a, exp_b } => {
                let full = cache.get(&self.dissipator, tau);
                let ea = exp_a.exp(0.5 * tau * a);
                let eb = exp_b.exp(0.5 * tau * b);
                &ea * &eb * full * &eb * &ea
            }
        };
        let offset = (&e * &self.source + &self.source) * (0.5 * tau);
        AffineMap { matrix: e, offset }
    }
}

/// `exp(τC)` for a 3×3 skew matrix via the axis-angle form.
fn rotation_exp(c: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let w = (c[(1, 2)].powi(2) + c[(2, 0)].powi(2) + c[(0, 1)].powi(2)).sqrt();
    let id = DMatrix::<f64>::identity(3, 3);
    if w == 0.0 {
        return id;
    }
    let k = c / w;
    let k2 = &k * &k;
    let theta = w * tau;
    id + k * theta.sin() + k2 * (1.0 - theta.cos())
}

/// Run-local cache of `exp(τD)` keyed by `τ`.
#[derive(Default)]
struct DissipatorCache {
    entries: HashMap<u64, DMatrix<f64>>,
}

impl DissipatorCache {
    fn get(&mut self, d: &DMatrix<f64>, tau: f64) -> &DMatrix<f64> {
        self.entries
            .entry(tau.to_bits())
            .or_insert_with(|| exp_constant(d, tau))
    }
}

fn exp_constant(d: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let n = d.nrows();
    let off_diagonal = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .any(|(i, j)| i != j && d[(i, j)] != 0.0);
    if !off_diagonal {
        return DMatrix::from_diagonal(&d.diagonal().map(|v| (v * tau).exp()));
    }
    if let Ok(eig) = linalg::eigen(d) {
        let mut scaled = eig.vectors.clone();
        for j in 0..n {
            let e = (eig.values[j] * tau).exp();
            for i in 0..n {
                scaled[(i, j)] *= e;
            }
        }
        let e = scaled * &eig.inverse;
        if linalg::imaginary_residue(&e) <= MAX_IMAGINARY_RESIDUE {
            return e.map(|z| z.re);
        }
    }
    (d * tau).exp()
}

/// Single diagonalization step from `x`.
pub fn step_diag(sys: &LinearSystem, x: &DVector<f64>, s: f64, tau: f64) -> Result<DVector<f64>> {
    Ok(sys.step_map_diag(s, tau)?.apply(x))
}

/// Single product-formula step from `x`.
pub fn step_product(sys: &LinearSystem, x: &DVector<f64>, s: f64, tau: f64) -> DVector<f64> {
    sys.step_map_product(s, tau).apply(x)
}

/// A stretch of the annealing path on which `s` varies linearly in time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub s_start: f64,
    pub s_end: f64,
}

impl Segment {
    pub fn is_constant(&self) -> bool {
        self.s_start == self.s_end
    }

    /// Step count and effective step for a nominal `tau`.
    pub fn steps(&self, tau: f64) -> (u64, f64) {
        let n = ((self.duration / tau) - 1.0e-9).ceil().max(1.0) as u64;
        (n, self.duration / n as f64)
    }

    fn s_mid(&self, k: u64, n: u64) -> f64 {
        let frac = (k as f64 + 0.5) / n as f64;
        self.s_start + (self.s_end - self.s_start) * frac
    }
}

/// The three segments of a reverse protocol, zero-length ones dropped.
pub fn protocol_segments(p: &ReverseProtocol) -> Vec<Segment> {
    [
        Segment {
            duration: p.t_reverse,
            s_start: 1.0,
            s_end: p.s_r,
        },
        Segment {
            duration: p.t_wait,
            s_start: p.s_r,
            s_end: p.s_r,
        },
        Segment {
            duration: p.t_forward,
            s_start: p.s_r,
            s_end: 1.0,
        },
    ]
    .into_iter()
    .filter(|s| s.duration > 0.0)
    .collect()
}

/// Recorded states and bookkeeping of a propagation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    /// Times (μs) of the recorded states, after snapping to step boundaries.
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Steps taken, counting each powered constant-segment step.
    pub steps: u64,
    /// Diagonalization steps that fell back to the product formula.
    pub fallbacks: u64,
}

impl Trajectory {
    pub fn last(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }
}

/// State probabilities recorded along a propagation, one vector per
/// observer time, in basis-state order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbTrajectory {
    pub times: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
    pub fallbacks: u64,
}

impl ProbTrajectory {
    pub fn last(&self) -> Option<&[f64]> {
        self.probs.last().map(Vec::as_slice)
    }
}

/// Stepping engine holding the run-local caches.
pub struct Stepper<'a> {
    sys: &'a LinearSystem,
    plan: StepPlan,
    cache: DissipatorCache,
    pub fallbacks: u64,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a LinearSystem, plan: StepPlan) -> Self {
        Stepper {
            sys,
            plan,
            cache: DissipatorCache::default(),
            fallbacks: 0,
        }
    }

    /// Step map at `s` with the plan's method, falling back to the product
    /// formula when diagonalization is refused.
    pub fn step_map(&mut self, s: f64, tau: f64) -> AffineMap {
        match self.plan.method {
            Method::Diagonalization => match self.sys.step_map_diag(s, tau) {
                Ok(m) => m,
                Err(e) => {
                    self.fallbacks += 1;
                    log::debug!("{e}; using product formula");
                    self.sys.step_map_product_cached(s, tau, &mut self.cache)
                }
            },
            Method::ProductFormula => self.sys.step_map_product_cached(s, tau, &mut self.cache),
        }
    }

    /// Composite map of a whole segment.
    pub fn segment_map(&mut self, seg: &Segment) -> AffineMap {
        let (n, tau) = seg.steps(self.plan.tau);
        if seg.is_constant() {
            return self.step_map(seg.s_start, tau).power(n);
        }
        let mut acc = AffineMap::identity(self.sys.dim());
        for k in 0..n {
            acc = acc.then(&self.step_map(seg.s_mid(k, n), tau));
        }
        acc
    }
}

/// Propagates `x0` along `segments`, recording the state at each observer
/// time (snapped to the nearest step boundary). Without observers only the
/// final state is recorded.
pub fn propagate_segments(
    sys: &LinearSystem,
    plan: StepPlan,
    segments: &[Segment],
    x0: &DVector<f64>,
    observers: &[f64],
) -> Result<Trajectory> {
    if x0.len() != sys.dim() {
        return Err(Error::input(format!(
            "initial state has dimension {}, system has {}",
            x0.len(),
            sys.dim()
        )));
    }
    let total: f64 = segments.iter().map(|s| s.duration).sum();
    let slack = 1.0e-12 * total.max(1.0);
    let mut obs: Vec<f64> = observers.to_vec();
    if obs.iter().any(|t| !(t.is_finite() && *t >= -slack && *t <= total + slack)) {
        return Err(Error::domain(format!("observer times must lie in [0, {total}]")));
    }
    obs.sort_by(f64::total_cmp);
    let record_final_only = obs.is_empty();

    let mut stepper = Stepper::new(sys, plan);
    let mut traj = Trajectory::default();
    let mut x = x0.clone();
    let mut t0 = 0.0;
    let mut next_obs = 0usize;

    for (si, seg) in segments.iter().enumerate() {
        let (n, tau) = seg.steps(plan.tau);
        let last_segment = si + 1 == segments.len();
        // Observer step indices within this segment.
        let mut marks: Vec<u64> = Vec::new();
        while next_obs < obs.len() {
            let t = obs[next_obs];
            let local = t - t0;
            if local > seg.duration && !last_segment {
                break;
            }
            let k = ((local / tau).round().max(0.0) as u64).min(n);
            marks.push(k);
            next_obs += 1;
        }

        let mut k_done = 0u64;
        let record = |traj: &mut Trajectory, x: &DVector<f64>, k: u64| {
            traj.times.push(t0 + k as f64 * tau);
            traj.states.push(x.clone());
        };
        if seg.is_constant() {
            let map = stepper.step_map(seg.s_start, tau);
            for &k in &marks {
                x = map.apply_power(&x, k - k_done);
                k_done = k;
                record(&mut traj, &x, k);
            }
            x = map.apply_power(&x, n - k_done);
        } else {
            let mut mi = 0;
            while mi < marks.len() && marks[mi] == 0 {
                record(&mut traj, &x, 0);
                mi += 1;
            }
            for k in 0..n {
                let map = stepper.step_map(seg.s_mid(k, n), tau);
                x = map.apply(&x);
                while mi < marks.len() && marks[mi] == k + 1 {
                    record(&mut traj, &x, k + 1);
                    mi += 1;
                }
            }
        }
        traj.steps += n;
        t0 += seg.duration;
    }
    // Observers at t = 0 with no segments at all.
    while next_obs < obs.len() {
        traj.times.push(t0);
        traj.states.push(x.clone());
        next_obs += 1;
    }
    if record_final_only {
        traj.times.push(t0);
        traj.states.push(x);
    }
    traj.fallbacks = stepper.fallbacks;
    Ok(traj)
}

/// Propagates `x0` through a reverse protocol.
pub fn propagate(
    sys: &LinearSystem,
    plan: StepPlan,
    protocol: &ReverseProtocol,
    x0: &DVector<f64>,
    observers: &[f64],
) -> Result<Trajectory> {
    propagate_segments(sys, plan, &protocol_segments(protocol), x0, observers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_schedule() -> AnnealSchedule {
        // A ≡ 1 − s, B ≡ 1.
        AnnealSchedule::new([0.0; 4], [1.0, 0.0, 0.0]).unwrap()
    }

    fn rotation_system(omega: f64, d: [f64; 3], y: [f64; 3]) -> LinearSystem {
        let zero = DMatrix::zeros(3, 3);
        let mut kb = DMatrix::zeros(3, 3);
        kb[(0, 1)] = omega;
        kb[(1, 0)] = -omega;
        LinearSystem::new(
            flat_schedule(),
            zero,
            kb,
            DMatrix::from_diagonal(&DVector::from_row_slice(&d)),
            DVector::from_row_slice(&y),
        )
        .unwrap()
    }

    #[test]
    fn diag_step_rotation() {
        let omega = 2.3;
        let sys = rotation_system(omega, [0.0; 3], [0.0; 3]);
        let x = DVector::from_row_slice(&[1.0, 0.0, 0.0]);
        let tau = 0.7;
        let out = step_diag(&sys, &x, 1.0, tau).unwrap();
        assert!((out[0] - (omega * tau).cos()).abs() < 1e-13);
        assert!((out[1] + (omega * tau).sin()).abs() < 1e-13);
        let out = step_product(&sys, &x, 1.0, tau);
        assert!((out[0] - (omega * tau).cos()).abs() < 1e-13);
        assert!((out[1] + (omega * tau).sin()).abs() < 1e-13);
    }

    #[test]
    fn diag_step_decay_and_fixed_point() {
        let sys = rotation_system(0.0, [-1.0, -0.5, -0.25], [0.0; 3]);
        let x = DVector::from_row_slice(&[1.0, 1.0, 1.0]);
        let out = step_diag(&sys, &x, 1.0, 0.4).unwrap();
        for (i, r) in [1.0f64, 0.5, 0.25].iter().enumerate() {
            assert!((out[i] - (-r * 0.4f64).exp()).abs() < 1e-14);
        }
        let t1 = 3.0;
        let m0 = -0.4;
        let sys = rotation_system(0.0, [-1.0 / t1; 3], [0.0, 0.0, m0 / t1]);
        let x = DVector::from_row_slice(&[0.0, 0.0, m0]);
        let out = step_diag(&sys, &x, 1.0, 5.0).unwrap();
        assert!((out[2] - m0).abs() < 1e-14);
    }

    #[test]
    fn diag_map_matches_augmented_exponential() {
        let d = DMatrix::from_row_slice(
            3,
            3,
            &[-0.3, 0.1, 0.0, 0.05, -0.7, 0.2, 0.0, 0.4, -0.2],
        );
        let mut kb = DMatrix::zeros(3, 3);
        kb[(0, 1)] = 4.0;
        kb[(1, 0)] = -4.0;
        let mut ka = DMatrix::zeros(3, 3);
        ka[(1, 2)] = 1.5;
        ka[(2, 1)] = -1.5;
        let y = DVector::from_row_slice(&[0.0, 0.1, -0.3]);
        let sys = LinearSystem::new(flat_schedule(), ka, kb, d, y).unwrap();
        for (s, tau) in [(0.2, 0.05), (0.7, 0.9), (1.0, 2.5)] {
            let map = sys.step_map_diag(s, tau).unwrap();
            let (e, q) = linalg::expm_affine(&sys.generator(s), sys.source(), tau);
            assert!((&map.matrix - e).amax() < 1e-12);
            assert!((&map.offset - q).amax() < 1e-12);
        }
    }

    #[test]
    fn power_matches_repeated_application() {
        let sys = rotation_system(1.3, [-0.1, -0.1, -0.2], [0.0, 0.0, 0.05]);
        let map = sys.step_map_diag(0.5, 0.01).unwrap();
        let x0 = DVector::from_row_slice(&[0.3, -0.2, 0.9]);
        let mut x = x0.clone();
        for _ in 0..37 {
            x = map.apply(&x);
        }
        assert!((map.apply_power(&x0, 37) - &x).amax() < 1e-13);
        assert!((map.power(37).apply(&x0) - &x).amax() < 1e-13);
    }

    #[test]
    fn observers_snap_to_boundaries() {
        let sys = rotation_system(1.0, [-0.1; 3], [0.0; 3]);
        let p = ReverseProtocol::new(1.0, 2.0, 1.0, 0.5, "u").unwrap();
        let plan = StepPlan::new(0.1, Method::Diagonalization).unwrap();
        let x0 = DVector::from_row_slice(&[1.0, 0.0, 0.0]);
        let traj = propagate(&sys, plan, &p, &x0, &[0.0, 0.52, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(traj.states.len(), 5);
        assert!((traj.times[1] - 0.5).abs() < 1e-12);
        assert!((traj.times[3] - 2.0).abs() < 1e-12);
        assert_eq!(traj.states[0], x0);
        let end = propagate(&sys, plan, &p, &x0, &[]).unwrap();
        assert!((end.last().unwrap() - &traj.states[4]).amax() < 1e-13);
        let empty = propagate_segments(&sys, plan, &[], &x0, &[]).unwrap();
        assert_eq!(empty.states, vec![x0]);
    }
}
