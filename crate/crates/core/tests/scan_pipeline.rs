//! Scans, sweeps and the fits applied to their output.

use revanneal::fitting::{fit_saturating_exp, SaturatingOptions};
use revanneal::scans::{run_scan, sweep_h1, sweep_sr, RateModel, ScanConfig, SweepEntry};
use revanneal::AnnealSchedule;

fn config(json: &str) -> ScanConfig {
    ScanConfig::from_json_str(json).unwrap()
}

fn sign_changes(ys: &[f64]) -> usize {
    let d: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).filter(|d| d.abs() > 1e-9).collect();
    d.windows(2).filter(|w| w[0] * w[1] < 0.0).count()
}

fn fitted_f3(entry: &SweepEntry) -> f64 {
    let series = entry.result.series("d", false).unwrap();
    fit_saturating_exp(&series, SaturatingOptions::default())
        .unwrap()
        .f3
        .expect("curve is not flat")
}

/// Prefactor that puts the fastest point of a sweep at the preset's own rates.
fn prefactor(points: &[(f64, f64)]) -> f64 {
    let sched = AnnealSchedule::default_advantage();
    let unit = RateModel {
        prefactor: 1.0,
        ..RateModel::default()
    };
    let max = points
        .iter()
        .map(|&(s_r, h1)| unit.multiplier(&sched, s_r, h1).unwrap())
        .fold(0.0, f64::max);
    1.0 / max
}

const TEMPLATE: &str = r#"{"mode": "WTS", "t_grid": {"start": 2, "stop": 2000, "n": 30},
    "s_r": 0.7, "problem": "1S(0.1)", "backend": "bloch", "bloch": "wts",
    "initial_state": "d", "rate_model": {"prefactor": PREFACTOR}}"#;

#[test]
fn f3_falls_with_gap_under_the_rate_model() {
    let h1s = [0.1, 0.2, 0.4, 0.8];
    let pts: Vec<(f64, f64)> = h1s.iter().map(|&h| (0.7, h)).collect();
    let cfg = config(&TEMPLATE.replace("PREFACTOR", &prefactor(&pts).to_string()));
    let entries = sweep_h1(&cfg, &h1s).unwrap();
    let gaps: Vec<f64> = entries.iter().map(|e| e.derived).collect();
    assert!(gaps.windows(2).all(|w| w[1] > w[0]), "{gaps:?}");
    let f3: Vec<f64> = entries.iter().map(fitted_f3).collect();
    assert!(f3.windows(2).all(|w| w[1] < w[0]), "{f3:?}");
}

#[test]
fn f3_rises_as_reversal_deepens() {
    let srs = [0.72, 0.71, 0.70, 0.69];
    let pts: Vec<(f64, f64)> = srs.iter().map(|&s| (s, 0.1)).collect();
    let cfg = config(&TEMPLATE.replace("PREFACTOR", &prefactor(&pts).to_string()));
    let entries = sweep_sr(&cfg, &srs).unwrap();
    let a: Vec<f64> = entries.iter().map(|e| e.derived).collect();
    assert!(a.windows(2).all(|w| w[1] > w[0]), "{a:?}");
    let f3: Vec<f64> = entries.iter().map(fitted_f3).collect();
    assert!(f3.windows(2).all(|w| w[1] > w[0]), "{f3:?}");
}

#[test]
fn shallow_reversal_leaves_state_untouched() {
    let cfg = config(
        r#"{"mode": "WTS", "t_grid": [2, 20, 200], "s_r": 0.9, "problem": "1S(0.3)",
            "backend": "bloch", "bloch": {"T1_us": 1e12, "T2_us": 1e12, "M0": 0}, "initial_state": "u"}"#,
    );
    let r = run_scan(&cfg).unwrap();
    for p in &r.points {
        assert!((p.exact[0] - 1.0).abs() < 1e-6, "{:?}", p.exact);
    }
}

#[test]
fn closed_degenerate_pair_oscillates() {
    let ts: Vec<f64> = (0..=300).map(|k| 2.0 + 0.02 * k as f64).collect();
    let cfg = config(&format!(
        r#"{{"mode": "WTS", "t_grid": {}, "s_r": 0.7, "problem": "2S2", "backend": "lindblad2",
            "rates": {{}}, "initial_state": "uu"}}"#,
        serde_json::to_string(&ts).unwrap()
    ));
    let r = run_scan(&cfg).unwrap();
    let uu: Vec<f64> = r.series("uu", false).unwrap().iter().map(|p| p.1).collect();
    assert!(sign_changes(&uu) >= 2, "uu population is monotone");
    // The excited state dd stays empty without dissipation.
    assert!(r.series("dd", false).unwrap().iter().all(|p| p.1 < 1e-6));

    let closed = config(&format!(
        r#"{{"mode": "WTS", "t_grid": {}, "s_r": 0.7, "problem": "1S(0)", "backend": "bloch",
            "bloch": {{"T1_us": 1e12, "T2_us": 1e12, "M0": 0}}, "initial_state": "u"}}"#,
        serde_json::to_string(&ts).unwrap()
    ));
    let r = run_scan(&closed).unwrap();
    let up: Vec<f64> = r.series("u", false).unwrap().iter().map(|p| p.1).collect();
    assert!(sign_changes(&up) >= 2);
}

#[test]
fn long_waits_approach_the_plateau_monotonically() {
    // 3·T1 for the wts preset is 125 μs.
    let ts: Vec<f64> = (0..25).map(|k| 125.0 * (16.0f64).powf(k as f64 / 24.0)).collect();
    let cfg = config(&format!(
        r#"{{"mode": "WTS", "t_grid": {}, "s_r": 0.7, "problem": "1S(0.1)", "backend": "bloch",
            "bloch": "wts", "initial_state": "u"}}"#,
        serde_json::to_string(&ts).unwrap()
    ));
    let r = run_scan(&cfg).unwrap();
    let down: Vec<f64> = r.series("d", false).unwrap().iter().map(|p| p.1).collect();
    assert!(down.windows(2).all(|w| w[1] >= w[0] - 1e-10), "{down:?}");
    assert!((down.last().unwrap() - 0.83).abs() < 2e-3);
}
