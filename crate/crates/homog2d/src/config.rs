//! Run configuration: strict TOML parsing with defaults, validation that
//! names the offending key, and a deterministic echo serializer so every
//! run can record the exact configuration it resolved to.
//!
//! Coefficients are given either as `preset = "name"` or inline under
//! `[coefficients]` with 1-based dotted indices, e.g.
//!
//! ```toml
//! [coefficients]
//! m = 1
//! [coefficients.A.1.1.1.1]
//! constant = 2.0
//! modes = [[1, 0, 0.0, 1.0]]  # [k1, k2, cos_amp, sin_amp]
//! ```
//!
//! `mu` declares the two-sided ellipticity constant of A and `kappa` a sup
//! bound for V, B, c; `kappa` defaults to a bound derived from the entries.

use crate::coefficients::{preset, CoefficientSet, FourierEntry, PRESET_NAMES};
use crate::error::{Error, Result};
use crate::solver::validate_eps;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const DEFAULT_TORUS_N: usize = 256;
pub const DEFAULT_CELLS_PER_PERIOD: usize = 16;
pub const DEFAULT_EPS: [f64; 4] = [0.25, 0.125, 0.0625, 0.03125];
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_OUT_DIR: &str = "homog2d_out";

/// Pipeline stage selection, either from the config file or the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Cell,
    Effective,
    Solve,
    Green,
    Rates,
    All,
}

impl Command {
    pub const NAMES: [&'static str; 6] = ["cell", "effective", "solve", "green", "rates", "all"];

    pub fn parse(s: &str) -> Result<Command> {
        Ok(match s {
            "cell" => Command::Cell,
            "effective" => Command::Effective,
            "solve" => Command::Solve,
            "green" => Command::Green,
            "rates" => Command::Rates,
            "all" => Command::All,
            other => {
                return Err(Error::Config(format!(
                    "unknown command {other:?}; expected one of {:?}",
                    Command::NAMES
                )))
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Cell => "cell",
            Command::Effective => "effective",
            Command::Solve => "solve",
            Command::Green => "green",
            Command::Rates => "rates",
            Command::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPolicy {
    /// Probe the coercivity ladder at run time.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Command given in the file, if any; the command line takes precedence.
    pub command: Option<Command>,
    /// Preset name when the coefficients came from a preset.
    pub preset: Option<String>,
    pub set: CoefficientSet,
    pub torus_n: usize,
    pub cells_per_period: usize,
    /// Dyadic eps values in file order.
    pub eps_list: Vec<f64>,
    pub tol: f64,
    pub seed: u64,
    pub lambda: LambdaPolicy,
    pub out_dir: PathBuf,
    /// None means `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn label(&self) -> &str {
        self.preset.as_deref().unwrap_or("inline")
    }

    pub fn resolved_cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("cache"))
    }
}

type Map<T> = BTreeMap<String, T>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    command: Option<String>,
    preset: Option<String>,
    coefficients: Option<RawCoefficients>,
    run: Option<RawRun>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoefficients {
    m: usize,
    mu: Option<f64>,
    kappa: Option<f64>,
    #[serde(rename = "A", default)]
    a: Map<Map<Map<Map<RawEntry>>>>,
    #[serde(rename = "V", default)]
    v: Map<Map<Map<RawEntry>>>,
    #[serde(rename = "B", default)]
    b: Map<Map<Map<RawEntry>>>,
    #[serde(rename = "c", default)]
    c: Map<Map<RawEntry>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    #[serde(default)]
    constant: f64,
    #[serde(default)]
    modes: Vec<(i32, i32, f64, f64)>,
}

impl RawEntry {
    fn build(&self) -> FourierEntry {
        let mut e = FourierEntry::constant(self.constant);
        for &(k1, k2, ca, sa) in &self.modes {
            e = e.with_mode(k1, k2, ca, sa);
        }
        e
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    torus_n: Option<usize>,
    cells_per_period: Option<usize>,
    eps: Option<Vec<f64>>,
    tol: Option<f64>,
    seed: Option<u64>,
    lambda: Option<RawLambda>,
    out: Option<String>,
    cache: Option<String>,
    threads: Option<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawLambda {
    Number(f64),
    Word(String),
}

/// 1-based index in a dotted key, validated against its range.
fn index(key: &str, max: usize, path: &str) -> Result<usize> {
    match key.parse::<usize>() {
        Ok(v) if (1..=max).contains(&v) => Ok(v - 1),
        _ => Err(Error::Config(format!(
            "{path}.{key}: index must be an integer in 1..={max}"
        ))),
    }
}

fn build_set(raw: &RawCoefficients) -> Result<CoefficientSet> {
    if raw.m == 0 || raw.m > 4 {
        return Err(Error::Config(format!(
            "coefficients.m: {} is out of the supported range 1..=4",
            raw.m
        )));
    }
    let m = raw.m;
    let mut set = CoefficientSet::zeros(m);
    if let Some(mu) = raw.mu {
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::Config(format!(
                "coefficients.mu: {mu} must lie in (0, 1]"
            )));
        }
        set.mu = mu;
    }
    for (ks, lvl1) in &raw.a {
        let i = index(ks, 2, "coefficients.A")?;
        for (ks2, lvl2) in lvl1 {
            let j = index(ks2, 2, &format!("coefficients.A.{ks}"))?;
            for (ks3, lvl3) in lvl2 {
                let al = index(ks3, m, &format!("coefficients.A.{ks}.{ks2}"))?;
                for (ks4, entry) in lvl3 {
                    let be = index(ks4, m, &format!("coefficients.A.{ks}.{ks2}.{ks3}"))?;
                    set.set_a(i, j, al, be, entry.build());
                }
            }
        }
    }
    for (name, tree, setter) in [
        ("V", &raw.v, CoefficientSet::set_v as fn(&mut CoefficientSet, usize, usize, usize, FourierEntry)),
        ("B", &raw.b, CoefficientSet::set_b),
    ] {
        for (ks, lvl1) in tree {
            let i = index(ks, 2, &format!("coefficients.{name}"))?;
            for (ks2, lvl2) in lvl1 {
                let al = index(ks2, m, &format!("coefficients.{name}.{ks}"))?;
                for (ks3, entry) in lvl2 {
                    let be = index(ks3, m, &format!("coefficients.{name}.{ks}.{ks2}"))?;
                    setter(&mut set, i, al, be, entry.build());
                }
            }
        }
    }
    for (ks, lvl1) in &raw.c {
        let al = index(ks, m, "coefficients.c")?;
        for (ks2, entry) in lvl1 {
            let be = index(ks2, m, &format!("coefficients.c.{ks}"))?;
            set.set_c(al, be, entry.build());
        }
    }
    set.kappa = match raw.kappa {
        Some(k) if k.is_finite() && k >= 0.0 => k,
        Some(k) => {
            return Err(Error::Config(format!(
                "coefficients.kappa: {k} must be a finite nonnegative sup bound"
            )))
        }
        // Default: a triangle-inequality sup bound over V, B, c.
        None => set
            .v
            .iter()
            .chain(&set.b)
            .chain(&set.c)
            .fold(0.0f64, |k, e| k.max(e.sup_bound())),
    };
    set.validate()?;
    Ok(set)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let command = raw.command.as_deref().map(Command::parse).transpose()?;

    let (set, preset_name) = match (&raw.preset, &raw.coefficients) {
        (Some(name), None) => (preset(name)?, Some(name.clone())),
        (None, Some(c)) => (build_set(c)?, None),
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "give either `preset` or `[coefficients]`, not both".into(),
            ))
        }
        (None, None) => {
            return Err(Error::Config(format!(
                "no coefficients: set `preset` (one of {:?}) or a `[coefficients]` table",
                PRESET_NAMES
            )))
        }
    };

    let run = raw.run.unwrap_or(RawRun {
        torus_n: None,
        cells_per_period: None,
        eps: None,
        tol: None,
        seed: None,
        lambda: None,
        out: None,
        cache: None,
        threads: None,
    });
    let torus_n = run.torus_n.unwrap_or(DEFAULT_TORUS_N);
    if !torus_n.is_power_of_two() || torus_n < 4 {
        return Err(Error::Config(format!(
            "run.torus_n: {torus_n} must be a power of two, at least 4"
        )));
    }
    let cells_per_period = run.cells_per_period.unwrap_or(DEFAULT_CELLS_PER_PERIOD);
    if cells_per_period < 2 {
        return Err(Error::Config(format!(
            "run.cells_per_period: {cells_per_period} must be at least 2"
        )));
    }
    if torus_n < 4 * cells_per_period {
        return Err(Error::Config(format!(
            "run.torus_n: {torus_n} must be at least 4 * cells_per_period = {}; \
             coarser corrector grids would be undersampled on the mesh",
            4 * cells_per_period
        )));
    }
    let eps_list = run.eps.unwrap_or_else(|| DEFAULT_EPS.to_vec());
    if eps_list.is_empty() {
        return Err(Error::Config("run.eps: the list must not be empty".into()));
    }
    for &eps in &eps_list {
        validate_eps(eps)?;
    }
    let tol = run.tol.unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(Error::Config(format!(
            "run.tol: {tol} must lie in (0, 1e-2]"
        )));
    }
    let lambda = match run.lambda {
        None => LambdaPolicy::Auto,
        Some(RawLambda::Number(v)) if v.is_finite() => LambdaPolicy::Fixed(v),
        Some(RawLambda::Number(v)) => {
            return Err(Error::Config(format!("run.lambda: {v} is not finite")))
        }
        Some(RawLambda::Word(w)) if w == "auto" => LambdaPolicy::Auto,
        Some(RawLambda::Word(w)) => {
            return Err(Error::Config(format!(
                "run.lambda: {w:?} is not a number or \"auto\""
            )))
        }
    };
    if run.threads == Some(0) {
        return Err(Error::Config("run.threads: must be at least 1".into()));
    }

    Ok(RunConfig {
        command,
        preset: preset_name,
        set,
        torus_n,
        cells_per_period,
        eps_list,
        tol,
        seed: run.seed.unwrap_or(DEFAULT_SEED),
        lambda,
        out_dir: PathBuf::from(run.out.unwrap_or_else(|| DEFAULT_OUT_DIR.into())),
        cache_dir: run.cache.map(PathBuf::from),
        threads: run.threads,
    })
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read {}: {e}", path.display()))
    })?;
    parse_config_str(&text)
}

fn entry_value(e: &FourierEntry) -> toml::Value {
    let mut t = toml::map::Map::new();
    t.insert("constant".into(), toml::Value::Float(e.constant));
    if !e.modes.is_empty() {
        let modes: Vec<toml::Value> = e
            .modes
            .iter()
            .map(|m| {
                toml::Value::Array(vec![
                    toml::Value::Integer(m.k1 as i64),
                    toml::Value::Integer(m.k2 as i64),
                    toml::Value::Float(m.cos_amp),
                    toml::Value::Float(m.sin_amp),
                ])
            })
            .collect();
        t.insert("modes".into(), toml::Value::Array(modes));
    }
    toml::Value::Table(t)
}

/// The `[coefficients]` table for a set, listing only nonzero entries.
pub fn coefficients_to_value(set: &CoefficientSet) -> toml::Value {
    let m = set.m;
    let mut root = toml::map::Map::new();
    root.insert("m".into(), toml::Value::Integer(m as i64));
    root.insert("mu".into(), toml::Value::Float(set.mu));
    root.insert("kappa".into(), toml::Value::Float(set.kappa));
    let insert4 = |tensor: &mut toml::map::Map<String, toml::Value>,
                       keys: [usize; 2],
                       al: usize,
                       be: usize,
                       e: &FourierEntry| {
        let mut node = tensor;
        for k in [keys[0], keys[1], al, be] {
            node = node
                .entry((k + 1).to_string())
                .or_insert_with(|| toml::Value::Table(toml::map::Map::new()))
                .as_table_mut()
                .unwrap();
        }
        *node = entry_value(e).as_table().unwrap().clone();
    };
    let mut a_tree = toml::map::Map::new();
    for i in 0..2 {
        for j in 0..2 {
            for al in 0..m {
                for be in 0..m {
                    let e = set.a_e(i, j, al, be);
                    if !e.is_zero() {
                        insert4(&mut a_tree, [i, j], al, be, e);
                    }
                }
            }
        }
    }
    if !a_tree.is_empty() {
        root.insert("A".into(), toml::Value::Table(a_tree));
    }
    for (name, get) in [
        ("V", CoefficientSet::v_e as fn(&CoefficientSet, usize, usize, usize) -> &FourierEntry),
        ("B", CoefficientSet::b_e),
    ] {
        let mut tree = toml::map::Map::new();
        for i in 0..2 {
            for al in 0..m {
                for be in 0..m {
                    let e = get(set, i, al, be);
                    if !e.is_zero() {
                        let mut node = &mut tree;
                        for k in [i, al, be] {
                            node = node
                                .entry((k + 1).to_string())
                                .or_insert_with(|| toml::Value::Table(toml::map::Map::new()))
                                .as_table_mut()
                                .unwrap();
                        }
                        *node = entry_value(e).as_table().unwrap().clone();
                    }
                }
            }
        }
        if !tree.is_empty() {
            root.insert(name.into(), toml::Value::Table(tree));
        }
    }
    let mut c_tree = toml::map::Map::new();
    for al in 0..m {
        for be in 0..m {
            let e = set.c_e(al, be);
            if !e.is_zero() {
                let mut node = &mut c_tree;
                for k in [al, be] {
                    node = node
                        .entry((k + 1).to_string())
                        .or_insert_with(|| toml::Value::Table(toml::map::Map::new()))
                        .as_table_mut()
                        .unwrap();
                }
                *node = entry_value(e).as_table().unwrap().clone();
            }
        }
    }
    if !c_tree.is_empty() {
        root.insert("c".into(), toml::Value::Table(c_tree));
    }
    toml::Value::Table(root)
}

/// Deterministic echo of the resolved configuration; parses back to an
/// equivalent `RunConfig`.
pub fn to_toml_string(cfg: &RunConfig) -> String {
    let mut root = toml::map::Map::new();
    if let Some(cmd) = cfg.command {
        root.insert("command".into(), toml::Value::String(cmd.as_str().into()));
    }
    if let Some(name) = &cfg.preset {
        root.insert("preset".into(), toml::Value::String(name.clone()));
    } else {
        root.insert("coefficients".into(), coefficients_to_value(&cfg.set));
    }
    let mut run = toml::map::Map::new();
    run.insert("torus_n".into(), toml::Value::Integer(cfg.torus_n as i64));
    run.insert(
        "cells_per_period".into(),
        toml::Value::Integer(cfg.cells_per_period as i64),
    );
    run.insert(
        "eps".into(),
        toml::Value::Array(cfg.eps_list.iter().map(|&e| toml::Value::Float(e)).collect()),
    );
    run.insert("tol".into(), toml::Value::Float(cfg.tol));
    run.insert("seed".into(), toml::Value::Integer(cfg.seed as i64));
    run.insert(
        "lambda".into(),
        match cfg.lambda {
            LambdaPolicy::Auto => toml::Value::String("auto".into()),
            LambdaPolicy::Fixed(v) => toml::Value::Float(v),
        },
    );
    run.insert(
        "out".into(),
        toml::Value::String(cfg.out_dir.to_string_lossy().into_owned()),
    );
    if let Some(c) = &cfg.cache_dir {
        run.insert(
            "cache".into(),
            toml::Value::String(c.to_string_lossy().into_owned()),
        );
    }
    if let Some(t) = cfg.threads {
        run.insert("threads".into(), toml::Value::Integer(t as i64));
    }
    root.insert("run".into(), toml::Value::Table(run));
    toml::to_string(&toml::Value::Table(root)).expect("config serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config_str("command = \"rates\"\npreset = \"laminate\"\n").unwrap();
        assert_eq!(cfg.command, Some(Command::Rates));
        assert_eq!(cfg.preset.as_deref(), Some("laminate"));
        assert_eq!(cfg.torus_n, 256);
        assert_eq!(cfg.cells_per_period, 16);
        assert_eq!(cfg.eps_list, DEFAULT_EPS.to_vec());
        assert_eq!(cfg.tol, 1e-10);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.lambda, LambdaPolicy::Auto);
        assert_eq!(cfg.out_dir, PathBuf::from(DEFAULT_OUT_DIR));
        assert_eq!(cfg.resolved_cache_dir(), PathBuf::from(DEFAULT_OUT_DIR).join("cache"));
        assert_eq!(cfg.label(), "laminate");
    }

    #[test]
    fn inline_coefficients_build_the_right_set() {
        let text = r#"
[coefficients]
m = 2
mu = 0.3
[coefficients.A.1.1.1.1]
constant = 2.0
modes = [[1, 0, 0.0, 1.0]]
[coefficients.A.2.2.2.2]
constant = 3.0
[coefficients.V.1.1.2]
modes = [[0, 1, 0.5, 0.0]]
[coefficients.c.2.1]
constant = 0.25
[run]
eps = [0.25, 0.125, 0.0625]
lambda = 2.5
seed = 7
"#;
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.set.m, 2);
        assert_eq!(cfg.set.mu, 0.3);
        let e = cfg.set.a_e(0, 0, 0, 0);
        assert_eq!(e.constant, 2.0);
        assert_eq!(e.modes.len(), 1);
        assert_eq!(cfg.set.a_e(1, 1, 1, 1).constant, 3.0);
        assert_eq!(cfg.set.v_e(0, 0, 1).modes[0].cos_amp, 0.5);
        assert_eq!(cfg.set.c_e(1, 0).constant, 0.25);
        assert_eq!(cfg.lambda, LambdaPolicy::Fixed(2.5));
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.label(), "inline");
    }

    #[test]
    fn echo_round_trips_inline_and_preset_configs() {
        let text = r#"
command = "all"
[coefficients]
m = 1
mu = 0.25
[coefficients.A.1.1.1.1]
constant = 2.0
modes = [[1, 0, 0.0, 1.0]]
[coefficients.A.2.2.1.1]
constant = 2.0
[coefficients.B.1.1.1]
modes = [[1, 1, 0.125, -0.25]]
[run]
torus_n = 128
cells_per_period = 8
eps = [0.25, 0.125]
tol = 1e-9
seed = 3
lambda = 4.0
out = "artifacts"
threads = 2
"#;
        let cfg = parse_config_str(text).unwrap();
        let echo = to_toml_string(&cfg);
        let cfg2 = parse_config_str(&echo).unwrap();
        assert_eq!(cfg.set.canonical_string(), cfg2.set.canonical_string());
        assert_eq!(cfg2.command, Some(Command::All));
        assert_eq!(cfg2.torus_n, 128);
        assert_eq!(cfg2.cells_per_period, 8);
        assert_eq!(cfg2.eps_list, vec![0.25, 0.125]);
        assert_eq!(cfg2.tol, 1e-9);
        assert_eq!(cfg2.seed, 3);
        assert_eq!(cfg2.lambda, LambdaPolicy::Fixed(4.0));
        assert_eq!(cfg2.out_dir, PathBuf::from("artifacts"));
        assert_eq!(cfg2.threads, Some(2));

        let pre = parse_config_str("preset = \"smooth-checkerboard\"\n").unwrap();
        let echo2 = to_toml_string(&pre);
        let pre2 = parse_config_str(&echo2).unwrap();
        assert_eq!(pre2.preset.as_deref(), Some("smooth-checkerboard"));
        assert_eq!(pre.set.canonical_string(), pre2.set.canonical_string());
    }

    #[test]
    fn constant_set_round_trips_through_coefficient_table() {
        let mut set = CoefficientSet::zeros(2);
        set.set_a(0, 0, 0, 0, FourierEntry::constant(1.75));
        set.set_a(1, 1, 0, 0, FourierEntry::constant(2.0));
        set.set_a(0, 0, 1, 1, FourierEntry::constant(1.0));
        set.set_a(1, 1, 1, 1, FourierEntry::constant(1.0));
        set.set_v(0, 0, 1, FourierEntry::constant(0.5));
        set.set_c(0, 0, FourierEntry::constant(0.125));
        set.mu = 0.4;
        let mut root = toml::map::Map::new();
        root.insert("coefficients".into(), coefficients_to_value(&set));
        let text = toml::to_string(&toml::Value::Table(root)).unwrap();
        let cfg = parse_config_str(&text).unwrap();
        assert_eq!(cfg.set.canonical_string(), set.canonical_string());

        // A nonzero declared kappa survives the round trip too.
        set.kappa = 0.625;
        let mut root = toml::map::Map::new();
        root.insert("coefficients".into(), coefficients_to_value(&set));
        let text = toml::to_string(&toml::Value::Table(root)).unwrap();
        let cfg = parse_config_str(&text).unwrap();
        assert_eq!(cfg.set.canonical_string(), set.canonical_string());
    }

    #[test]
    fn kappa_defaults_to_an_entry_bound_and_rejects_negatives() {
        let base = "\
[coefficients]
m = 1
[coefficients.A.1.1.1.1]
constant = 2.0
[coefficients.c.1.1]
constant = 0.3
modes = [[1, 0, 0.4, 0.3]]
";
        let cfg = parse_config_str(base).unwrap();
        assert!((cfg.set.kappa - 0.8).abs() < 1e-12, "kappa {}", cfg.set.kappa);

        let declared = base.replace("m = 1", "m = 1\nkappa = 0.9");
        let cfg = parse_config_str(&declared).unwrap();
        assert_eq!(cfg.set.kappa, 0.9);

        let bad = base.replace("m = 1", "m = 1\nkappa = -1.0");
        let err = parse_config_str(&bad).unwrap_err();
        assert!(err.to_string().contains("kappa"), "{err}");
    }

    #[test]
    fn config_errors_name_the_offense() {
        // Unknown top-level key, with the key named in the message.
        let err = parse_config_str("preset = \"laminate\"\ntorus = 5\n").unwrap_err();
        assert!(err.to_string().contains("torus"), "{err}");
        // Duplicate key is a parse error.
        assert!(parse_config_str("preset = \"laminate\"\npreset = \"identity\"\n").is_err());
        // Non-dyadic eps.
        let err =
            parse_config_str("preset = \"laminate\"\n[run]\neps = [0.3333333333333333]\n")
                .unwrap_err();
        assert!(matches!(err, Error::Commensurability { .. }), "{err}");
        // Out-of-range index names the full path.
        let err = parse_config_str(
            "[coefficients]\nm = 1\n[coefficients.A.3.1.1.1]\nconstant = 1.0\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("coefficients.A.3"), "{err}");
        // Component index beyond m.
        let err = parse_config_str(
            "[coefficients]\nm = 1\n[coefficients.A.1.1.1.2]\nconstant = 1.0\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("coefficients.A.1.1.1.2"), "{err}");
        // Both preset and coefficients.
        let err = parse_config_str(
            "preset = \"laminate\"\n[coefficients]\nm = 1\n[coefficients.A.1.1.1.1]\nconstant = 1.0\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("not both"), "{err}");
        // Neither.
        assert!(parse_config_str("command = \"all\"\n").is_err());
        // Unknown preset.
        assert!(matches!(
            parse_config_str("preset = \"zigzag\"\n"),
            Err(Error::UnknownPreset { .. })
        ));
        // Bad lambda word.
        let err = parse_config_str("preset = \"laminate\"\n[run]\nlambda = \"sometimes\"\n")
            .unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
        // torus_n must dominate the mesh sampling.
        let err = parse_config_str(
            "preset = \"laminate\"\n[run]\ntorus_n = 32\ncells_per_period = 16\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("torus_n"), "{err}");
    }
}
