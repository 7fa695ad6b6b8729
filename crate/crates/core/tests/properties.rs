use nalgebra::DMatrix;
use proptest::prelude::*;

use revanneal::bloch::{self, BlochParams, BlochState};
use revanneal::equilibrium::{effective_beta, gibbs_probs, state_probs};
use revanneal::integrators;
use revanneal::lindblad2::{self, PauliCoeffs, RateSet, TwoSpinOptions};
use revanneal::markov::{indicator, RateMatrix};
use revanneal::problems::{builtin, config_of_index, make_ferro_chain, Literal};
use revanneal::{AnnealSchedule, IsingProblem, Method, ReverseProtocol, StepPlan, TwoSatInstance};

fn problem_strategy(max_n: usize) -> impl Strategy<Value = IsingProblem> {
    (1..=max_n).prop_flat_map(|n| {
        let h = prop::collection::vec(-2.0..2.0f64, n);
        let pairs = n * (n - 1) / 2;
        let j = prop::collection::vec(prop::option::of(-2.0..2.0f64), pairs);
        (h, j).prop_map(move |(h, j)| {
            let mut couplings = Vec::new();
            let mut k = 0;
            for a in 0..n {
                for b in a + 1..n {
                    if let Some(v) = j[k] {
                        couplings.push((a, b, v));
                    }
                    k += 1;
                }
            }
            IsingProblem::new(h, &couplings).unwrap()
        })
    })
}

fn naive_energy(p: &IsingProblem, s: &[i8]) -> f64 {
    let n = p.n();
    let mut e = 0.0;
    for i in 0..n {
        e += p.fields()[i] * s[i] as f64;
        for j in 0..i {
            e += p.coupling(i, j) * s[i] as f64 * s[j] as f64;
        }
    }
    e
}

fn rates_strategy() -> impl Strategy<Value = [f64; 7]> {
    prop::array::uniform7(0.01..3.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn energy_matches_double_loop(p in problem_strategy(10), seed in any::<u64>()) {
        let index = (seed % (1u64 << p.n())) as usize;
        let config = config_of_index(p.n(), index);
        let want = naive_energy(&p, &config);
        prop_assert!((p.energy(&config).unwrap() - want).abs() < 1e-12);
        prop_assert!((p.energy_of_index(index) - want).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn spectrum_and_gibbs_consistent(p in problem_strategy(8), beta in 0.01..20.0f64) {
        let spec = p.enumerate_spectrum().unwrap();
        prop_assert_eq!(spec.total_states(), 1u64 << p.n());
        prop_assert!(spec.levels.windows(2).all(|w| w[0].energy < w[1].energy));

        // Brute-force state sum.
        let energies: Vec<f64> = (0..1usize << p.n())
            .map(|k| naive_energy(&p, &config_of_index(p.n(), k)))
            .collect();
        let e0 = energies.iter().cloned().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = energies.iter().map(|e| (-beta * (e - e0)).exp()).collect();
        let z: f64 = w.iter().sum();
        let per_state = state_probs(&p, beta).unwrap();
        for (a, b) in per_state.iter().zip(&w) {
            prop_assert!((a - b / z).abs() < 1e-10);
        }
        let levels = gibbs_probs(&spec, beta).unwrap();
        prop_assert!((levels.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (level, p_level) in spec.levels.iter().zip(&levels) {
            let brute: f64 = energies
                .iter()
                .zip(&w)
                .filter(|(e, _)| (*e - level.energy).abs() < 1e-9)
                .map(|(_, w)| w / z)
                .sum();
            prop_assert!((brute - p_level).abs() < 1e-10);
        }
        // Per state, probability never increases with energy.
        let mut order: Vec<usize> = (0..energies.len()).collect();
        order.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]));
        for w in order.windows(2) {
            prop_assert!(per_state[w[1]] <= per_state[w[0]] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn effective_beta_inverts_ground_probability(p in problem_strategy(6), beta in 0.05..15.0f64) {
        let spec = p.enumerate_spectrum().unwrap();
        prop_assume!(spec.levels.len() > 1);
        let p0 = gibbs_probs(&spec, beta).unwrap()[0];
        // Saturated ground probabilities carry no information about β.
        prop_assume!(p0 < 1.0 - 1e-6);
        let back = effective_beta(p0, &spec).unwrap();
        let again = gibbs_probs(&spec, back).unwrap()[0];
        prop_assert!((again - p0).abs() < 1e-9);
    }

    #[test]
    fn two_sat_energy_counts_violations(
        n in 2usize..=10,
        raw in prop::collection::vec((0usize..100, 0usize..100, any::<bool>(), any::<bool>()), 1..20),
    ) {
        let clauses: Vec<[Literal; 2]> = raw
            .iter()
            .map(|&(a, b, sa, sb)| {
                let (a, mut b) = (a % n, b % n);
                if a == b {
                    b = (b + 1) % n;
                }
                let lit = |var: usize, s: bool| Literal { var: var + 1, sign: if s { 1 } else { -1 } };
                [lit(a, sa), lit(b, sb)]
            })
            .collect();
        let inst = TwoSatInstance::new(n, clauses).unwrap();
        let ising = inst.to_ising();
        for k in 0..1usize << n {
            let config = config_of_index(n, k);
            let assignment: Vec<bool> = config.iter().map(|&s| s == 1).collect();
            let e = ising.problem.energy(&config).unwrap() + ising.offset;
            prop_assert!((e - 4.0 * inst.violated(&assignment) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn protocol_reaches_minimum_on_pause(
        t_rev in 0.1..5.0f64, t_wait in 0.0..5.0f64, t_fwd in 0.1..5.0f64, s_r in 0.05..0.95f64,
    ) {
        let p = ReverseProtocol::new(t_rev, t_wait, t_fwd, s_r, "u").unwrap();
        let t_end = p.t_end();
        let n = 400;
        let mut prev = p.s_of_t(0.0).unwrap();
        prop_assert!((prev - 1.0).abs() < 1e-12);
        let max_slope = (1.0 - s_r) / t_rev.min(t_fwd);
        for k in 1..=n {
            let t = t_end * k as f64 / n as f64;
            let s = p.s_of_t(t).unwrap();
            prop_assert!(s >= s_r - 1e-12 && s <= 1.0 + 1e-12);
            prop_assert!((s - prev).abs() <= max_slope * t_end / n as f64 + 1e-12);
            if t > t_rev + 1e-9 && t < t_rev + t_wait - 1e-9 {
                prop_assert!((s - s_r).abs() < 1e-12);
            }
            prev = s;
        }
        prop_assert!((p.s_of_t(t_end).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gap_bounded_by_transverse_field(s in 0.0..=1.0f64, h1 in -2.0..2.0f64) {
        let sched = AnnealSchedule::default_advantage();
        let a = sched.eval_a(s).unwrap();
        let gap = sched.energy_gap(s, h1).unwrap();
        prop_assert!(gap >= 2.0 * a - 1e-15);
        if h1 == 0.0 {
            prop_assert!((gap - 2.0 * a).abs() < 1e-15);
        }
    }

    #[test]
    fn markov_simplex_and_semigroup(
        rates in prop::collection::vec(0.0..2.0f64, 9),
        start in 0usize..3,
        t1 in 0.0..50.0f64,
        t2 in 0.0..50.0f64,
    ) {
        let mut r = DMatrix::zeros(3, 3);
        let mut k = 0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    r[(i, j)] = rates[k];
                    k += 1;
                }
            }
        }
        let w = RateMatrix::from_rates(r).unwrap();
        let p0 = indicator(3, start);
        for t in [1e-3, 0.1, 1.0, 10.0, 100.0, 1e3, 1e4] {
            let p = w.propagate(&p0, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| (-1e-10..=1.0 + 1e-10).contains(v)));
        }
        let direct = w.propagate(&p0, t1 + t2).unwrap();
        let composed = w.propagate(&w.propagate(&p0, t1).unwrap(), t2).unwrap();
        for (a, b) in direct.iter().zip(&composed) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn bloch_norm_contracts(
        t1 in 0.5..50.0f64,
        t2_frac in 0.05..1.0f64,
        m0 in -1.0..=1.0f64,
        h1 in -1.0..1.0f64,
        s_r in 0.3..0.9f64,
        start in prop::sample::select(vec!["u", "d"]),
    ) {
        let sched = AnnealSchedule::default_advantage();
        let params = BlochParams::new(t1, 2.0 * t1 * t2_frac, m0).unwrap();
        let sys = bloch::bloch_system(&sched, h1, &params).unwrap();
        let p = ReverseProtocol::ats(0.4, s_r, start).unwrap();
        let x0 = BlochState::from_label(start).unwrap().to_vector();
        let observers: Vec<f64> = (0..=40).map(|k| 0.01 * k as f64).collect();
        let plan = StepPlan::new(1e-3, Method::Diagonalization).unwrap();
        let traj = integrators::propagate(&sys, plan, &p, &x0, &observers).unwrap();
        for x in &traj.states {
            prop_assert!(x.norm() <= 1.0 + 1e-9);
            let (u, d) = bloch::probs_from_bloch(&BlochState::from_vector(x));
            prop_assert!((u + d - 1.0).abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn two_spin_trajectories_stay_physical(
        g in rates_strategy(),
        label in prop::sample::select(vec!["2S1", "2S2", "2S3"]),
        start in prop::sample::select(vec!["uu", "ud", "du", "dd"]),
        s_r in 0.3..0.9f64,
    ) {
        let sched = AnnealSchedule::default_advantage();
        let rates = RateSet::new(g).unwrap();
        let sys = lindblad2::twospin_system(&sched, &builtin(label).unwrap(), &rates, TwoSpinOptions::default()).unwrap();
        let p = ReverseProtocol::ats(0.3, s_r, start).unwrap();
        let x0 = lindblad2::coeffs_from_state(start).unwrap().reduced();
        let observers: Vec<f64> = (0..=30).map(|k| 0.01 * k as f64).collect();
        let plan = StepPlan::new(1e-3, Method::Diagonalization).unwrap();
        let traj = integrators::propagate(&sys, plan, &p, &x0, &observers).unwrap();
        for x in &traj.states {
            let c = PauliCoeffs::from_reduced(x);
            let probs = lindblad2::probs_from_coeffs(&c);
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&v| v >= -1e-8));
            prop_assert!(c.min_eigenvalue() >= -1e-6);
        }
    }

    #[test]
    fn diagonal_sector_matches_markov(
        g in rates_strategy(),
        label in prop::sample::select(vec!["2S1", "2S2", "2S3"]),
        start in 0usize..4,
    ) {
        let sched = AnnealSchedule::default_advantage();
        let rates = RateSet::new(g).unwrap();
        let opts = TwoSpinOptions { suppress_transverse: true };
        let sys = lindblad2::twospin_system(&sched, &builtin(label).unwrap(), &rates, opts).unwrap();
        let names = ["uu", "ud", "du", "dd"];
        let p = ReverseProtocol::ats(2.0, 0.6, names[start]).unwrap();
        let x0 = lindblad2::coeffs_from_state(names[start]).unwrap().reduced();
        let observers: Vec<f64> = (0..=20).map(|k| 0.1 * k as f64).collect();
        let plan = StepPlan::new(1e-3, Method::Diagonalization).unwrap();
        let traj = integrators::propagate(&sys, plan, &p, &x0, &observers).unwrap();
        let w = RateMatrix::four_level(&rates).unwrap();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let c = PauliCoeffs::from_reduced(x);
            // Only I/σz products survive: indices 4a + b with a, b in {0, 3}.
            for k in 1..16usize {
                let (a, b) = (k / 4, k % 4);
                if !(a == 0 || a == 3) || !(b == 0 || b == 3) {
                    prop_assert!(c.x[k].abs() < 1e-10);
                }
            }
            let q = w.propagate(&indicator(4, start), *t).unwrap();
            let probs = lindblad2::probs_from_coeffs(&c);
            for (a, b) in probs.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn two_sat_sixteen_variables_exhaustive() {
    let n = 16;
    let clauses: Vec<[Literal; 2]> = (0..24)
        .map(|k| {
            let a = k % n;
            let b = (k * 7 + 3) % n;
            let b = if a == b { (b + 1) % n } else { b };
            [
                Literal { var: a + 1, sign: if k % 3 == 0 { -1 } else { 1 } },
                Literal { var: b + 1, sign: if k % 2 == 0 { 1 } else { -1 } },
            ]
        })
        .collect();
    let inst = TwoSatInstance::new(n, clauses).unwrap();
    let ising = inst.to_ising();
    for k in 0..1usize << n {
        let config = config_of_index(n, k);
        let assignment: Vec<bool> = config.iter().map(|&s| s == 1).collect();
        let e = ising.problem.energy_of_index(k) + ising.offset;
        assert!((e - 4.0 * inst.violated(&assignment) as f64).abs() < 1e-9);
    }
}

#[test]
fn chain_levels_follow_domain_walls() {
    fn binom(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }
    for n in 2..=12usize {
        let j = -0.1;
        let spec = make_ferro_chain(n, j).unwrap().enumerate_spectrum().unwrap();
        assert_eq!(spec.levels.len(), n);
        for (k, level) in spec.levels.iter().enumerate() {
            let want = j * (n as f64 - 1.0 - 2.0 * k as f64);
            assert!((level.energy - want).abs() < 1e-12, "N={n} k={k}");
            assert_eq!(level.degeneracy, 2 * binom(n as u64 - 1, k as u64));
        }
    }
}
