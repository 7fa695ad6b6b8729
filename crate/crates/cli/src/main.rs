//! `revanneal`: schedule fits, scans, sweeps, curve fits and equilibrium
//! tables from the command line. Every command writes CSV or JSON; plotting
//! is left to external tools.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::json;

use revanneal::equilibrium::{self, fit_beta_to_energies};
use revanneal::fitting::{fit_exp_decay, fit_power_law, fit_saturating_exp, FitReport, SaturatingOptions};
use revanneal::problems::{parse_problem, state_label, ProblemSpec, DEFAULT_CHAIN_COUPLING};
use revanneal::scans::{
    self, chain_equilibrium_sweep, read_chain_csv, read_scan_csv, run_scan, run_scan_with_workers, sidecar_path,
    sweep_h1, sweep_sr, write_chain_csv, write_sweep_csv, ScanConfig, ScanMeta, SCAN_COLUMNS,
};
use revanneal::schedule::{fit_schedule, read_schedule_csv};
use revanneal::{AnnealSchedule, Error, TemperatureConversion};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "revanneal", version, about = "Reverse-annealing simulation lab")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the A(s), B(s) closed forms to a tabulated schedule.
    ScheduleFit {
        /// CSV with columns s,A_over_h_GHz,B_over_h_GHz.
        input: PathBuf,
        /// Coefficient JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a WTS or ATS scan described by a JSON config.
    RunScan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's rng_seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Repeat a 1-spin scan over field values or reversal points.
    Sweep {
        /// Template scan config (bloch backend).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Sampled equilibrium energies of ferromagnetic chains.
    ChainSweep {
        /// Comma-separated chain lengths.
        #[arg(long = "n", value_delimiter = ',', required = true)]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_CHAIN_COUPLING, allow_hyphen_values = true)]
        coupling: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = scans::DEFAULT_SAMPLES)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to scan, sweep or chain output.
    Fit {
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: FitKind,
        /// Report JSON; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// State whose probability is fitted (default: first in the file).
        #[arg(long)]
        state: Option<String>,
        /// Use exact probabilities instead of sampled frequencies.
        #[arg(long)]
        exact: bool,
        /// Chain coupling for beta_energy.
        #[arg(long, default_value_t = DEFAULT_CHAIN_COUPLING, allow_hyphen_values = true)]
        coupling: f64,
        /// Schedule coefficient JSON for the temperature conversion.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Spectrum and Gibbs probabilities of a problem.
    Equilibrium {
        /// 1S(h), 2S1, 2S2, 2S3, chain(N[,J]) or a problem file.
        problem: String,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        json: bool,
        /// Per-state rows are listed up to this many basis states.
        #[arg(long, default_value_t = 64)]
        max_states: usize,
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    H1,
    #[value(name = "s_r", alias = "sr")]
    SR,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitKind {
    Saturating,
    #[value(alias = "exp_decay")]
    Expdecay,
    #[value(alias = "power_law")]
    Powerlaw,
    #[value(name = "beta_energy")]
    BetaEnergy,
}

type CliResult<T> = Result<T, Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::ScheduleFit { input, out } => cmd_schedule_fit(&input, &out),
        Command::RunScan {
            config,
            out,
            seed,
            workers,
        } => cmd_run_scan(&config, &out, seed, workers),
        Command::Sweep {
            config,
            param,
            values,
            out,
            seed,
            workers,
        } => cmd_sweep(&config, param, &values, &out, seed, workers),
        Command::ChainSweep {
            lengths,
            coupling,
            beta,
            samples,
            seed,
            out,
        } => cmd_chain_sweep(&lengths, coupling, beta, samples, seed, &out),
        Command::Fit {
            input,
            kind,
            out,
            state,
            exact,
            coupling,
            schedule,
        } => cmd_fit(&input, kind, out.as_deref(), state.as_deref(), exact, coupling, schedule.as_deref()),
        Command::Equilibrium {
            problem,
            beta,
            json,
            max_states,
            schedule,
        } => cmd_equilibrium(&problem, beta, json, max_states, schedule.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { EXIT_INPUT } else { EXIT_NUMERICAL })
        }
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_schedule(path: Option<&Path>) -> CliResult<AnnealSchedule> {
    match path {
        Some(p) => AnnealSchedule::load_json(p),
        None => Ok(AnnealSchedule::default_advantage()),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> CliResult<ScanConfig> {
    let mut cfg = ScanConfig::load(path)
        .map_err(|e| Error::Input(format!("config {}: {e}", path.display())))?;
    if let Some(seed) = seed {
        cfg.rng_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_schedule_fit(input: &Path, out: &Path) -> CliResult<()> {
    let rows = read_schedule_csv(open(input)?)?;
    let sched = fit_schedule(&rows)?;
    if let Some(r) = sched.residuals {
        println!("rows: {}", rows.len());
        println!("max relative residual A: {:.3e}", r.max_rel_a);
        println!("max relative residual B: {:.3e}", r.max_rel_b);
    }
    println!("eta: {:.5}", sched.eta());
    let mut w = create(out)?;
    writeln!(w, "{}", sched.to_json_string())?;
    w.flush()?;
    Ok(())
}

fn cmd_run_scan(config: &Path, out: &Path, seed: Option<u64>, workers: Option<usize>) -> CliResult<()> {
    let cfg = load_config(config, seed)?;
    info!("scan of {} points", cfg.times().len());
    let result = match workers {
        Some(n) => run_scan_with_workers(&cfg, n)?,
        None => run_scan(&cfg)?,
    };
    if result.fallbacks > 0 {
        log::warn!("{} steps fell back to the product formula", result.fallbacks);
    }
    let mut w = create(out)?;
    result.write_csv(&mut w)?;
    w.flush()?;
    write_json(&sidecar_path(out), &ScanMeta::new(&cfg, &result))?;
    println!("wrote {} rows to {}", result.rows().len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SweepMeta<'a> {
    template: &'a ScanConfig,
    parameter: &'a str,
    values: &'a [f64],
    rng_seed: u64,
    version: &'a str,
}

fn cmd_sweep(
    config: &Path,
    param: SweepParam,
    values: &[f64],
    out: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
) -> CliResult<()> {
    let cfg = load_config(config, seed)?;
    let run = || match param {
        SweepParam::H1 => sweep_h1(&cfg, values),
        SweepParam::SR => sweep_sr(&cfg, values),
    };
    let entries = match workers {
        Some(n) => scans::with_workers(n, run)?,
        None => run()?,
    };
    let (name, derived) = match param {
        SweepParam::H1 => ("h1", "gap_GHz"),
        SweepParam::SR => ("s_r", "A_GHz"),
    };
    let mut w = create(out)?;
    write_sweep_csv(&mut w, &entries, name, derived)?;
    w.flush()?;
    let meta = SweepMeta {
        template: &cfg,
        parameter: name,
        values,
        rng_seed: cfg.rng_seed,
        version: env!("CARGO_PKG_VERSION"),
    };
    write_json(&sidecar_path(out), &meta)?;
    println!("wrote {} sweep points to {}", entries.len(), out.display());
    Ok(())
}

fn cmd_chain_sweep(lengths: &[usize], j: f64, beta: f64, samples: u64, seed: u64, out: &Path) -> CliResult<()> {
    let rows = chain_equilibrium_sweep(lengths, j, beta, samples, seed)?;
    let mut w = create(out)?;
    write_chain_csv(&mut w, &rows)?;
    w.flush()?;
    let meta = json!({
        "lengths": lengths,
        "coupling": j,
        "beta": beta,
        "samples": samples,
        "rng_seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_json(&sidecar_path(out), &meta)?;
    println!("wrote {} chain lengths to {}", rows.len(), out.display());
    Ok(())
}

fn headers(path: &Path) -> CliResult<Vec<String>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let h = r.headers()?;
    if h.iter().all(|c| c.trim().is_empty()) {
        return Err(Error::Input(format!("{} is empty", path.display())));
    }
    Ok(h.iter().map(|c| c.trim().to_string()).collect())
}

fn read_xy(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for rec in r.deserialize::<(f64, f64)>() {
        out.push(rec?);
    }
    Ok(out)
}

/// `(t_end, p)` of one state from a scan CSV.
fn scan_series(path: &Path, state: Option<&str>, exact: bool) -> CliResult<Vec<(f64, f64)>> {
    let rows = read_scan_csv(open(path)?)?;
    let label = match state {
        Some(s) => s.to_string(),
        None => rows
            .first()
            .map(|r| r.state_label.clone())
            .ok_or_else(|| Error::Input(format!("{} has no data rows", path.display())))?,
    };
    let series: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.state_label == label)
        .map(|r| (r.t_end_us, if exact { r.p_exact } else { r.p_sampled }))
        .collect();
    if series.is_empty() {
        return Err(Error::Input(format!("no rows for state {label:?}")));
    }
    Ok(series)
}

/// `(derived, f₃)` pairs from a sweep CSV: one saturating fit per swept value.
fn sweep_rates(path: &Path, cols: &[String], state: Option<&str>, exact: bool) -> CliResult<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut groups: BTreeMap<usize, (f64, String, Vec<(f64, f64)>)> = BTreeMap::new();
    let mut order: Vec<f64> = Vec::new();
    let p_col = if exact { "p_exact" } else { "p_sampled" };
    let idx = |name: &str| cols.iter().position(|c| c == name).expect("checked");
    let (ti, li, pi) = (idx("t_end_us"), idx("state_label"), idx(p_col));
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| -> CliResult<f64> {
            rec[k]
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("column {:?}: not a number: {:?}", cols[k], &rec[k])))
        };
        let value = num(0)?;
        let key = match order.iter().position(|&v| v == value) {
            Some(k) => k,
            None => {
                order.push(value);
                order.len() - 1
            }
        };
        let label = rec[li].trim().to_string();
        let entry = groups.entry(key).or_insert_with(|| (num(1).unwrap_or(f64::NAN), label.clone(), Vec::new()));
        let want = state.unwrap_or(&entry.1);
        if label == want {
            entry.2.push((num(ti)?, num(pi)?));
        }
    }
    if groups.is_empty() {
        return Err(Error::Input(format!("{} has no data rows", path.display())));
    }
    let mut out = Vec::with_capacity(groups.len());
    for (k, (derived, label, series)) in groups {
        if series.is_empty() {
            return Err(Error::Input(format!("no rows for state {label:?} at {} = {}", cols[0], order[k])));
        }
        let fit = fit_saturating_exp(&series, SaturatingOptions::default())?;
        let f3 = fit.f3.ok_or_else(|| Error::Fit {
            message: format!("flat curve at {} = {}; f3 not identifiable", cols[0], order[k]),
            residual: fit.residual,
            last: vec![fit.f1, fit.f2],
        })?;
        info!("{} = {}: {} = {derived}, f3 = {f3:.4e}", cols[0], order[k], cols[1]);
        out.push((derived, f3));
    }
    Ok(out)
}

fn scaling_points(path: &Path, state: Option<&str>, exact: bool) -> CliResult<Vec<(f64, f64)>> {
    let cols = headers(path)?;
    let has = |c: &str| cols.iter().any(|h| h == c);
    if SCAN_COLUMNS.iter().all(|c| has(c)) && cols.len() == SCAN_COLUMNS.len() + 2 {
        sweep_rates(path, &cols, state, exact)
    } else if cols.len() == 2 {
        read_xy(path)
    } else {
        Err(Error::Input(format!(
            "{}: expected a sweep CSV or two columns, found [{}]",
            path.display(),
            cols.join(", ")
        )))
    }
}

fn cmd_fit(
    input: &Path,
    kind: FitKind,
    out: Option<&Path>,
    state: Option<&str>,
    exact: bool,
    coupling: f64,
    schedule: Option<&Path>,
) -> CliResult<()> {
    let cols = headers(input)?;
    let summary;
    let report = match kind {
        FitKind::Saturating => {
            let series = if cols.len() == 2 {
                read_xy(input)?
            } else {
                scan_series(input, state, exact)?
            };
            let fit = fit_saturating_exp(&series, SaturatingOptions::default())?;
            summary = format!(
                "f1 = {:.6}  f2 = {:.6}  f3 = {}  residual = {:.3e}",
                fit.f1,
                fit.f2,
                fit.f3.map_or("unidentifiable".into(), |v| format!("{v:.6e}")),
                fit.residual
            );
            FitReport::from(&fit)
        }
        FitKind::Expdecay | FitKind::Powerlaw => {
            let pts = scaling_points(input, state, exact)?;
            let (name, fit) = if kind == FitKind::Expdecay {
                ("expdecay", fit_exp_decay(&pts)?)
            } else {
                ("powerlaw", fit_power_law(&pts)?)
            };
            summary = format!("a = {:.6e}  b = {:.6}  residual = {:.3e}", fit.a, fit.b, fit.residual);
            FitReport::scaling(name, &fit)
        }
        FitKind::BetaEnergy => {
            let rows = read_chain_csv(open(input)?)?;
            if rows.is_empty() {
                return Err(Error::Input(format!("{} has no data rows", input.display())));
            }
            let data: Vec<(usize, f64)> = rows
                .iter()
                .map(|r| (r.n, if exact { r.mean_energy_exact } else { r.mean_energy_sampled }))
                .collect();
            let fit = fit_beta_to_energies(&data, coupling)?;
            let conv = TemperatureConversion::from_schedule(&load_schedule(schedule)?);
            let t_mk = equilibrium::beta_to_temperature(fit.beta, &conv)?;
            summary = format!("beta = {:.4}  T = {t_mk:.3} mK  (eta = {:.5})", fit.beta, conv.eta);
            let mut parameters = serde_json::Map::new();
            parameters.insert("beta".into(), fit.beta.into());
            parameters.insert("temperature_mK".into(), t_mk.into());
            parameters.insert("eta".into(), conv.eta.into());
            parameters.insert("coupling".into(), coupling.into());
            FitReport {
                kind: "beta_energy".into(),
                parameters,
                residual: fit.residual,
                iterations: 0,
                excluded: Vec::new(),
            }
        }
    };
    let mut doc = serde_json::to_value(&report)?;
    doc["source"] = json!(input.display().to_string());
    // With no output file stdout carries only the JSON document.
    match out {
        Some(path) => {
            write_json(path, &doc)?;
            println!("{summary}");
        }
        None => {
            eprintln!("{summary}");
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct LevelRow {
    energy: f64,
    degeneracy: f64,
    probability: f64,
}

#[derive(Serialize)]
struct StateRow {
    label: String,
    energy: f64,
    probability: f64,
}

#[derive(Serialize)]
struct EquilibriumReport {
    problem: String,
    n: usize,
    beta: f64,
    /// `null` at `β = 0`.
    temperature_mk: Option<f64>,
    route: &'static str,
    mean_energy: f64,
    levels: Vec<LevelRow>,
    /// Omitted when the register exceeds `--max-states`.
    states: Option<Vec<StateRow>>,
}

fn cmd_equilibrium(label: &str, beta: f64, as_json: bool, max_states: usize, schedule: Option<&Path>) -> CliResult<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Input(format!("beta must be finite and >= 0, got {beta}")));
    }
    let conv = TemperatureConversion::from_schedule(&load_schedule(schedule)?);
    let temperature_mk = if beta > 0.0 {
        Some(conv.beta_to_millikelvin(beta)?)
    } else {
        None
    };
    let spec = parse_problem(label)?;
    let small = |n: usize| n < usize::BITS as usize && (1usize << n) <= max_states;
    let report = match spec {
        ProblemSpec::Chain { n, j } => {
            let levels = equilibrium::chain_levels(n, j)?;
            let probs = equilibrium::chain_level_probs(n, j, beta)?;
            let states = if small(n) {
                Some(state_rows(&spec.problem()?, beta)?)
            } else {
                None
            };
            EquilibriumReport {
                problem: label.to_string(),
                n,
                beta,
                temperature_mk,
                route: "closed_form",
                mean_energy: equilibrium::chain_mean_energy(n, j, beta)?,
                levels: levels
                    .iter()
                    .zip(&probs)
                    .map(|(l, &p)| LevelRow {
                        energy: l.energy,
                        degeneracy: l.ln_degeneracy.exp().round(),
                        probability: p,
                    })
                    .collect(),
                states,
            }
        }
        other => {
            let problem = other.problem()?;
            let spectrum = problem.enumerate_spectrum()?;
            let probs = equilibrium::gibbs_probs(&spectrum, beta)?;
            EquilibriumReport {
                problem: label.to_string(),
                n: problem.n(),
                beta,
                temperature_mk,
                route: "enumeration",
                mean_energy: spectrum.levels.iter().zip(&probs).map(|(l, p)| l.energy * p).sum(),
                levels: spectrum
                    .levels
                    .iter()
                    .zip(&probs)
                    .map(|(l, &p)| LevelRow {
                        energy: l.energy,
                        degeneracy: l.degeneracy as f64,
                        probability: p,
                    })
                    .collect(),
                states: if small(problem.n()) {
                    Some(state_rows(&problem, beta)?)
                } else {
                    None
                },
            }
        }
    };
    let mut out = std::io::stdout().lock();
    let written = if as_json {
        serde_json::to_writer_pretty(&mut out, &report)
            .map_err(std::io::Error::from)
            .and_then(|()| writeln!(out))
    } else {
        print_equilibrium(&mut out, &report)
    };
    match written {
        // A closed pipe (`| head`) is not an error for a table printer.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn state_rows(problem: &revanneal::IsingProblem, beta: f64) -> CliResult<Vec<StateRow>> {
    let probs = equilibrium::state_probs(problem, beta)?;
    Ok(probs
        .iter()
        .enumerate()
        .map(|(k, &p)| StateRow {
            label: state_label(problem.n(), k),
            energy: problem.energy_of_index(k),
            probability: p,
        })
        .collect())
}

fn print_equilibrium(w: &mut impl Write, r: &EquilibriumReport) -> std::io::Result<()> {
    let temp = r.temperature_mk.map_or("inf".to_string(), |t| format!("{t:.3}"));
    writeln!(w, "# {}  n={}  beta={}  T={} mK  route={}", r.problem, r.n, r.beta, temp, r.route)?;
    writeln!(w, "# mean energy {:.6}", r.mean_energy)?;
    writeln!(w, "energy\tdegeneracy\tprobability")?;
    for l in &r.levels {
        writeln!(w, "{:.6}\t{:.6e}\t{:.6}", l.energy, l.degeneracy, l.probability)?;
    }
    match &r.states {
        Some(states) => {
            writeln!(w)?;
            writeln!(w, "state\tenergy\tprobability")?;
            for s in states {
                writeln!(w, "{}\t{:.6}\t{:.6}", s.label, s.energy, s.probability)?;
            }
        }
        None => writeln!(w, "# per-state table omitted ({} spins)", r.n)?,
    }
    Ok(())
}
