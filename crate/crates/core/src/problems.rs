//! Ising problem instances, classical energies and exact spectra.
//!
//! Spin configurations are slices of `±1` (`+1` = up). Basis states of an
//! `n`-spin register are indexed with spin 0 as the most significant bit and
//! a set bit meaning "down", so for two spins the order is `uu, ud, du, dd`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest register that [`IsingProblem::enumerate_spectrum`] will visit.
pub const MAX_ENUMERATION_SPINS: usize = 24;

/// Energies closer than this are merged into one level.
pub const LEVEL_MERGE_TOL: f64 = 1.0e-12;

/// At most this many representative states are kept per level.
const MAX_REPRESENTATIVES: usize = 16;

/// `H = Σ h_i σ_i + Σ_{i>j} J_ij σ_i σ_j` on classical configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct IsingProblem {
    n: usize,
    h: Vec<f64>,
    couplings: BTreeMap<(usize, usize), f64>,
}

impl IsingProblem {
    /// `couplings` entries `(i, j, J)` may be given in either order; repeated
    /// pairs are summed.
    pub fn new(h: Vec<f64>, couplings: &[(usize, usize, f64)]) -> Result<Self> {
        let n = h.len();
        if n == 0 {
            return Err(Error::input("problem needs at least one spin"));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("fields must be finite"));
        }
        let mut map = BTreeMap::new();
        for &(i, j, v) in couplings {
            if i == j {
                return Err(Error::input(format!("self-coupling on spin {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::input(format!("coupling ({i},{j}) out of range for {n} spins")));
            }
            if !v.is_finite() {
                return Err(Error::input("couplings must be finite"));
            }
            *map.entry((i.max(j), i.min(j))).or_insert(0.0) += v;
        }
        Ok(IsingProblem {
            n,
            h,
            couplings: map,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fields(&self) -> &[f64] {
        &self.h
    }

    /// Copy with the fields pushed apart by `eps`: even-indexed spins get
    /// `|h|` larger, odd-indexed ones smaller, signs kept (`sgn 0 = +1`).
    /// On 2S2 this turns `(−1, −1)` into `(−1−ε, −1+ε)`.
    pub fn with_degeneracy_lift(&self, eps: f64) -> Result<IsingProblem> {
        if !eps.is_finite() {
            return Err(Error::input("degeneracy lift must be finite"));
        }
        let mut out = self.clone();
        for (i, h) in out.h.iter_mut().enumerate() {
            let sign = if *h < 0.0 { -1.0 } else { 1.0 };
            *h += if i % 2 == 0 { eps * sign } else { -eps * sign };
        }
        Ok(out)
    }

    /// `J_ij` (zero when the pair is not coupled).
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings
            .get(&(i.max(j), i.min(j)))
            .copied()
            .unwrap_or(0.0)
    }

    /// Coupled pairs as `(i, j, J_ij)` with `i > j`.
    pub fn couplings(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.couplings.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn energy(&self, config: &[i8]) -> Result<f64> {
        if config.len() != self.n {
            return Err(Error::input(format!(
                "configuration has {} spins, problem has {}",
                config.len(),
                self.n
            )));
        }
        if config.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::input("spin values must be +1 or -1"));
        }
        Ok(self.energy_unchecked(|i| config[i] as f64))
    }

    /// Energy of basis state `index` (see module docs for the ordering).
    pub fn energy_of_index(&self, index: usize) -> f64 {
        let n = self.n;
        self.energy_unchecked(|i| if index >> (n - 1 - i) & 1 == 1 { -1.0 } else { 1.0 })
    }

    fn energy_unchecked(&self, spin: impl Fn(usize) -> f64) -> f64 {
        let mut e = 0.0;
        for (i, &hi) in self.h.iter().enumerate() {
            e += hi * spin(i);
        }
        for (&(i, j), &v) in &self.couplings {
            e += v * spin(i) * spin(j);
        }
        e
    }

    /// Exhaustive spectrum with degeneracies.
    pub fn enumerate_spectrum(&self) -> Result<Spectrum> {
        if self.n > MAX_ENUMERATION_SPINS {
            return Err(Error::Capability(format!(
                "{} spins exceed the enumeration limit of {MAX_ENUMERATION_SPINS}; \
                 use the closed-form chain routines for large chains",
                self.n
            )));
        }
        let dim = 1usize << self.n;
        let energies: Vec<f64> = (0..dim).map(|k| self.energy_of_index(k)).collect();
        let mut sorted = energies.clone();
        sorted.sort_by(f64::total_cmp);

        let mut levels: Vec<Level> = Vec::new();
        for &e in &sorted {
            match levels.last_mut() {
                Some(l) if e - l.energy <= LEVEL_MERGE_TOL => l.degeneracy += 1,
                _ => levels.push(Level {
                    energy: e,
                    degeneracy: 1,
                    representatives: Vec::new(),
                }),
            }
        }
        let last = levels.len() - 1;
        for (k, &e) in energies.iter().enumerate() {
            let pos = levels.partition_point(|l| l.energy + LEVEL_MERGE_TOL < e);
            let level = &mut levels[pos.min(last)];
            if level.representatives.len() < MAX_REPRESENTATIVES {
                level.representatives.push(k);
            }
        }
        Ok(Spectrum { n: self.n, levels })
    }

    /// Parses the JSON form `{"n": .., "h": [..], "J": [[i, j, value], ..]}`
    /// with 0-based spin indices.
    pub fn from_json_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            n: usize,
            h: Vec<f64>,
            #[serde(rename = "J", default)]
            j: Vec<(usize, usize, f64)>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        if raw.h.len() != raw.n {
            return Err(Error::input(format!(
                "field vector has {} entries but n = {}",
                raw.h.len(),
                raw.n
            )));
        }
        Self::new(raw.h, &raw.j)
    }

    pub fn to_json_string(&self) -> String {
        #[derive(Serialize)]
        struct Raw<'a> {
            n: usize,
            h: &'a [f64],
            #[serde(rename = "J")]
            j: Vec<(usize, usize, f64)>,
        }
        serde_json::to_string(&Raw {
            n: self.n,
            h: &self.h,
            j: self.couplings().collect(),
        })
        .expect("plain struct serializes")
    }
}

/// One energy level of a [`Spectrum`].
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub energy: f64,
    pub degeneracy: u64,
    /// Up to a handful of basis-state indices on this level, ascending.
    pub representatives: Vec<usize>,
}

/// Energy levels sorted by strictly increasing energy.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub n: usize,
    pub levels: Vec<Level>,
}

impl Spectrum {
    pub fn ground(&self) -> &Level {
        &self.levels[0]
    }

    pub fn total_states(&self) -> u64 {
        self.levels.iter().map(|l| l.degeneracy).sum()
    }
}

/// Label of basis state `index` of an `n`-spin register, e.g. `"ud"`.
pub fn state_label(n: usize, index: usize) -> String {
    (0..n)
        .map(|i| if index >> (n - 1 - i) & 1 == 1 { 'd' } else { 'u' })
        .collect()
}

/// Parses `"ud"`-style labels; arrows `↑`/`↓` are accepted as well.
pub fn parse_state_label(label: &str) -> Result<(usize, usize)> {
    let mut index = 0usize;
    let mut n = 0usize;
    for c in label.trim().chars() {
        let bit = match c {
            'u' | 'U' | '↑' | '+' => 0,
            'd' | 'D' | '↓' | '-' => 1,
            _ => return Err(Error::input(format!("bad character {c:?} in state label {label:?}"))),
        };
        index = index << 1 | bit;
        n += 1;
    }
    if n == 0 {
        return Err(Error::input("empty state label"));
    }
    Ok((n, index))
}

pub fn config_of_index(n: usize, index: usize) -> Vec<i8> {
    (0..n)
        .map(|i| if index >> (n - 1 - i) & 1 == 1 { -1 } else { 1 })
        .collect()
}

/// One literal of a 2-SAT clause: variable `var` (1-based) negated when
/// `sign == -1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Literal {
    pub var: usize,
    pub sign: i8,
}

/// 2-SAT formula in conjunctive normal form.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoSatInstance {
    pub n_vars: usize,
    pub clauses: Vec<[Literal; 2]>,
}

/// Ising form of a 2-SAT instance. `energy + offset` is four times the
/// number of violated clauses.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoSatIsing {
    pub problem: IsingProblem,
    pub offset: f64,
}

impl TwoSatInstance {
    pub fn new(n_vars: usize, clauses: Vec<[Literal; 2]>) -> Result<Self> {
        if n_vars == 0 {
            return Err(Error::input("2-SAT instance needs at least one variable"));
        }
        for (k, c) in clauses.iter().enumerate() {
            for lit in c {
                if lit.var == 0 || lit.var > n_vars {
                    return Err(Error::input(format!(
                        "clause {k}: variable {} outside 1..={n_vars}",
                        lit.var
                    )));
                }
                if lit.sign != 1 && lit.sign != -1 {
                    return Err(Error::input(format!("clause {k}: sign must be ±1")));
                }
            }
            if c[0].var == c[1].var {
                return Err(Error::input(format!("clause {k}: literals share a variable")));
            }
        }
        Ok(TwoSatInstance { n_vars, clauses })
    }

    /// Text format: first line `N M`, then `M` lines of two signed integers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::input("empty 2-SAT file"))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::input(format!("bad header token {t:?}"))))
            .collect::<Result<_>>()?;
        let [n, m] = nums[..] else {
            return Err(Error::input("2-SAT header must be `N M`"));
        };
        let mut clauses = Vec::with_capacity(m);
        for line in lines {
            let lits: Vec<i64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::input(format!("bad literal {t:?}"))))
                .collect::<Result<_>>()?;
            let [a, b] = lits[..] else {
                return Err(Error::input(format!("clause line {line:?} needs two literals")));
            };
            let lit = |v: i64| -> Result<Literal> {
                if v == 0 {
                    return Err(Error::input("literal 0 is not allowed"));
                }
                Ok(Literal {
                    var: v.unsigned_abs() as usize,
                    sign: v.signum() as i8,
                })
            };
            clauses.push([lit(a)?, lit(b)?]);
        }
        if clauses.len() != m {
            return Err(Error::input(format!(
                "header announces {m} clauses, file has {}",
                clauses.len()
            )));
        }
        Self::new(n, clauses)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n_vars, self.clauses.len());
        for c in &self.clauses {
            let v = |l: &Literal| l.sign as i64 * l.var as i64;
            out.push_str(&format!("{} {}\n", v(&c[0]), v(&c[1])));
        }
        out
    }

    /// Number of clauses violated by a boolean assignment (`true` ⇔ spin up).
    pub fn violated(&self, assignment: &[bool]) -> usize {
        self.clauses
            .iter()
            .filter(|c| {
                c.iter()
                    .all(|l| assignment[l.var - 1] != (l.sign == 1))
            })
            .count()
    }

    /// Expands `Σ_α (ε₁ s₁ − 1)(ε₂ s₂ − 1)` into fields and couplings.
    pub fn to_ising(&self) -> TwoSatIsing {
        let mut h = vec![0.0; self.n_vars];
        let mut j = Vec::with_capacity(self.clauses.len());
        for c in &self.clauses {
            let (a, b) = (c[0].var - 1, c[1].var - 1);
            let (ea, eb) = (c[0].sign as f64, c[1].sign as f64);
            h[a] -= ea;
            h[b] -= eb;
            j.push((a, b, ea * eb));
        }
        TwoSatIsing {
            problem: IsingProblem::new(h, &j).expect("validated instance"),
            offset: self.clauses.len() as f64,
        }
    }
}

/// Open ferromagnetic chain with nearest-neighbour coupling `j < 0`.
pub fn make_ferro_chain(n: usize, j: f64) -> Result<IsingProblem> {
    if n < 2 {
        return Err(Error::input(format!("chain needs at least 2 spins, got {n}")));
    }
    if !(j < 0.0) {
        return Err(Error::input(format!("ferromagnetic coupling must be negative, got {j}")));
    }
    let couplings: Vec<_> = (1..n).map(|i| (i, i - 1, j)).collect();
    IsingProblem::new(vec![0.0; n], &couplings)
}

/// Default chain coupling.
pub const DEFAULT_CHAIN_COUPLING: f64 = -0.1;

/// A problem label after parsing, keeping the chain parameters available
/// for closed-form routines that do not need an explicit problem.
#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSpec {
    Explicit(IsingProblem),
    Chain { n: usize, j: f64 },
    TwoSat(TwoSatInstance),
}

impl ProblemSpec {
    /// Explicit Ising form. Chains are materialized here, so very long
    /// chains are cheap only through the closed-form routines.
    pub fn problem(&self) -> Result<IsingProblem> {
        match self {
            ProblemSpec::Explicit(p) => Ok(p.clone()),
            ProblemSpec::Chain { n, j } => make_ferro_chain(*n, *j),
            ProblemSpec::TwoSat(inst) => Ok(inst.to_ising().problem),
        }
    }
}

fn parse_args(label: &str, prefix: &str) -> Option<Vec<String>> {
    let rest = label.strip_prefix(prefix)?;
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.split(',').map(|s| s.trim().to_string()).collect())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::input(format!("cannot parse {what} from {s:?}")))
}

/// Resolves `1S(h)`, `2S1`, `2S2`, `2S3`, `chain(N)`, `chain(N,J)`, an Ising
/// JSON file (`*.json`) or a 2-SAT file path.
pub fn parse_problem(label: &str) -> Result<ProblemSpec> {
    let label = label.trim();
    match label {
        "2S1" => return Ok(ProblemSpec::Explicit(IsingProblem::new(vec![-1.0, -1.0], &[(1, 0, 0.95)])?)),
        "2S2" => return Ok(ProblemSpec::Explicit(IsingProblem::new(vec![-1.0, -1.0], &[(1, 0, 1.0)])?)),
        "2S3" => return Ok(ProblemSpec::Explicit(IsingProblem::new(vec![-0.95, -0.95], &[(1, 0, 1.0)])?)),
        _ => {}
    }
    if let Some(args) = parse_args(label, "1S") {
        let [h] = &args[..] else {
            return Err(Error::input("1S takes one field, e.g. 1S(0.1)"));
        };
        return Ok(ProblemSpec::Explicit(IsingProblem::new(vec![parse_f64(h, "field")?], &[])?));
    }
    if let Some(args) = parse_args(label, "chain") {
        let n: usize = args[0]
            .parse()
            .map_err(|_| Error::input(format!("bad chain length {:?}", args[0])))?;
        let j = match &args[..] {
            [_] => DEFAULT_CHAIN_COUPLING,
            [_, j] => parse_f64(j, "coupling")?,
            _ => return Err(Error::input("chain takes (N) or (N,J)")),
        };
        if n < 2 {
            return Err(Error::input(format!("chain needs at least 2 spins, got {n}")));
        }
        if !(j < 0.0) {
            return Err(Error::input(format!("ferromagnetic coupling must be negative, got {j}")));
        }
        return Ok(ProblemSpec::Chain { n, j });
    }
    let path = Path::new(label);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            return Ok(ProblemSpec::Explicit(IsingProblem::from_json_str(&text)?));
        }
        return Ok(ProblemSpec::TwoSat(TwoSatInstance::parse(&text)?));
    }
    Err(Error::input(format!(
        "unknown problem {label:?}; expected 1S(h), 2S1, 2S2, 2S3, chain(N[,J]) or a file path"
    )))
}

/// Shorthand for `parse_problem(label)?.problem()`.
pub fn builtin(label: &str) -> Result<IsingProblem> {
    parse_problem(label)?.problem()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_energies() {
        let p = builtin("2S1").unwrap();
        assert!((p.energy(&[1, 1]).unwrap() + 1.05).abs() < 1e-12);
        let p = builtin("2S3").unwrap();
        assert!((p.energy(&[1, -1]).unwrap() + 1.0).abs() < 1e-12);
        let z = IsingProblem::new(vec![0.0; 3], &[]).unwrap();
        assert_eq!(z.energy(&[1, -1, 1]).unwrap(), 0.0);
        assert!(p.energy(&[1]).is_err());
    }

    #[test]
    fn spectra() {
        let s = builtin("1S(0.1)").unwrap().enumerate_spectrum().unwrap();
        assert_eq!(s.levels.len(), 2);
        assert!((s.levels[0].energy + 0.1).abs() < 1e-15);
        assert_eq!(s.levels[0].representatives, vec![1]);
        let s = builtin("2S2").unwrap().enumerate_spectrum().unwrap();
        assert_eq!(s.levels.len(), 2);
        assert_eq!(s.levels[0].degeneracy, 3);
        assert!((s.levels[1].energy - 3.0).abs() < 1e-12);
        let s = make_ferro_chain(3, -0.1).unwrap().enumerate_spectrum().unwrap();
        assert!((s.levels[0].energy + 0.2).abs() < 1e-12);
        assert_eq!(s.levels[0].degeneracy, 2);
        let s = make_ferro_chain(2, -0.1).unwrap().enumerate_spectrum().unwrap();
        assert_eq!(
            s.levels.iter().map(|l| l.degeneracy).collect::<Vec<_>>(),
            vec![2, 2]
        );
    }

    #[test]
    fn chain_ground_energy() {
        let p = make_ferro_chain(10, -0.1).unwrap();
        assert!((p.energy(&[1; 10]).unwrap() + 0.9).abs() < 1e-12);
        assert!(make_ferro_chain(2, 0.1).is_err());
        assert!(make_ferro_chain(1, -0.1).is_err());
    }

    #[test]
    fn two_sat_clause_energies() {
        let inst = TwoSatInstance::parse("2 1\n1 -2\n").unwrap();
        let m = inst.to_ising();
        // x1 = F, x2 = T violates (x1 ∨ ¬x2).
        let e = m.problem.energy(&[-1, 1]).unwrap() + m.offset;
        assert!((e - 4.0).abs() < 1e-12);
        let inst = TwoSatInstance::parse("2 1\n1 2\n").unwrap();
        let m = inst.to_ising();
        assert!((m.problem.energy(&[1, -1]).unwrap() + m.offset).abs() < 1e-12);
    }

    #[test]
    fn two_sat_parse_errors() {
        assert!(TwoSatInstance::parse("").is_err());
        assert!(TwoSatInstance::parse("2 2\n1 2\n").is_err());
        assert!(TwoSatInstance::parse("2 1\n1 1\n").is_err());
        assert!(TwoSatInstance::parse("2 1\n1 3\n").is_err());
    }

    #[test]
    fn labels_round_trip() {
        for k in 0..4 {
            let l = state_label(2, k);
            assert_eq!(parse_state_label(&l).unwrap(), (2, k));
        }
        assert_eq!(parse_state_label("↑↓").unwrap(), (2, 1));
        assert_eq!(state_label(2, 2), "du");
        assert!(parse_state_label("ux").is_err());
    }

    #[test]
    fn problem_labels() {
        assert!(matches!(parse_problem("chain(5)"), Ok(ProblemSpec::Chain { n: 5, .. })));
        assert!(matches!(parse_problem("chain(5,-0.2)"), Ok(ProblemSpec::Chain { n: 5, j }) if j == -0.2));
        assert!(parse_problem("chain(1)").is_err());
        assert!(parse_problem("3S9").is_err());
        let json = IsingProblem::new(vec![0.5, -0.2], &[(0, 1, 0.3)]).unwrap();
        let back = IsingProblem::from_json_str(&json.to_json_string()).unwrap();
        assert_eq!(json, back);
    }
}
