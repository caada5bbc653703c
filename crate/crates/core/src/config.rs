//! Plain-text experiment files.
//!
//! One `key = value` pair per line; `#` starts a comment. Class data are
//! exact rationals (`3`, `-1/2`, `0.75`). Intersection numbers are written
//! as `gen1.gen2…genN = p/q` with generator labels from `generators`.
//!
//! ```text
//! kind = projective_bundle_k1
//! n = 2
//! r = 1
//! generators = E S
//! E.E = -1
//! E.S = 0
//! S.S = 1
//! cone = 1 0; -1 1
//! omega0 = 2 3
//! c1 = 1 3
//! target = 3/2 3/2
//! N = 512
//! R = 12
//! rate.diam_fiber = 0.5 0.05
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::Zero;
use thiserror::Error;

use crate::calabi::AnsatzKind;
use crate::classes::{GeneratorBasis, IntersectionTable, KahlerClass, PositivityCone};
use crate::flow::Gauge;
use crate::{ExactClass, ExactCone, ExactTable, Rational};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

fn at(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Line { line, msg: msg.into() }
}

/// Two-sided `|p − expected| ≤ tol` or one-sided `p ≥ expected − tol`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sidedness {
    TwoSided,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCheck {
    /// Trajectory CSV column.
    pub column: String,
    pub expected: f64,
    pub tol: f64,
    pub sided: Sidedness,
}

impl RateCheck {
    pub fn accepts(&self, exponent: f64) -> bool {
        match self.sided {
            Sidedness::TwoSided => (exponent - self.expected).abs() <= self.tol,
            Sidedness::AtLeast => exponent >= self.expected - self.tol,
        }
    }
}

impl fmt::Display for RateCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sided {
            Sidedness::TwoSided => write!(f, "{} ± {}", self.expected, self.tol),
            Sidedness::AtLeast => write!(f, "≥ {} − {}", self.expected, self.tol),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub kind: AnsatzKind,
    pub basis: GeneratorBasis,
    pub table: ExactTable,
    pub cone: ExactCone,
    pub omega0: ExactClass,
    pub c1: ExactClass,
    /// `[π*ω_Σ]`
    pub target: ExactClass,
    pub convention: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverBlock {
    pub nodes: usize,
    pub half_width: f64,
    pub dt_max: f64,
    pub eps_stop: f64,
    pub tol: f64,
    pub kappa: f64,
    pub dt_floor: f64,
    pub gauge: Gauge,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorBlock {
    pub cadence: usize,
    pub b: f64,
    /// `None` selects the computed default.
    pub a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatesBlock {
    /// Number of trailing decades of `T − t` fitted; the last one decides.
    pub windows: usize,
    pub checks: Vec<RateCheck>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub solver: SolverBlock,
    pub monitor: MonitorBlock,
    pub rates: RatesBlock,
    pub out: Option<PathBuf>,
    /// Verbatim file contents, hashed into the run manifest.
    pub source: String,
}

/// Exact rational from `p`, `p/q` or a finite decimal such as `-0.125`.
pub fn parse_rational(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p = BigInt::from_str(p.trim()).map_err(|_| format!("bad numerator in `{s}`"))?;
        let q = BigInt::from_str(q.trim()).map_err(|_| format!("bad denominator in `{s}`"))?;
        if q.is_zero() {
            return Err(format!("zero denominator in `{s}`"));
        }
        return Ok(Rational::new(p, q));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty()
        || !int.chars().all(|c| c.is_ascii_digit())
        || !frac.chars().all(|c| c.is_ascii_digit())
    {
        return Err(format!("not a rational number: `{s}`"));
    }
    let digits = format!("{int}{frac}");
    let num = BigInt::from_str(if digits.is_empty() { "0" } else { &digits }).map_err(|e| e.to_string())?;
    let den = num_traits::pow(BigInt::from(10), frac.len());
    let r = Rational::new(num, den);
    Ok(if neg { -r } else { r })
}

fn parse_class(s: &str, len: usize) -> Result<ExactClass, String> {
    let coeffs = s.split_whitespace().map(parse_rational).collect::<Result<Vec<_>, _>>()?;
    if coeffs.len() != len {
        return Err(format!("expected {len} coefficients, found {}", coeffs.len()));
    }
    Ok(KahlerClass::new(coeffs))
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: `{}`", s.trim()))?;
    if !v.is_finite() {
        return Err(format!("not finite: `{}`", s.trim()));
    }
    Ok(v)
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.trim().parse().map_err(|_| format!("not a nonnegative integer: `{}`", s.trim()))
}

fn positive(v: f64, key: &str) -> Result<f64, String> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("`{key}` must be positive, got {v}"))
    }
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn require(&mut self, key: &'static str) -> Result<(usize, String), ConfigError> {
        self.take(key).ok_or(ConfigError::Missing(key))
    }

    fn opt<T>(
        &mut self,
        key: &str,
        default: T,
        f: impl FnOnce(&str) -> Result<T, String>,
    ) -> Result<T, ConfigError> {
        match self.take(key) {
            Some((line, v)) => f(&v).map_err(|m| at(line, m)),
            None => Ok(default),
        }
    }
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| at(line, format!("expected `key = value`, found `{content}`")))?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(at(line, "empty key"));
            }
            if let Some((prev, _)) = map.get(&k) {
                return Err(at(line, format!("duplicate key `{k}` (first set on line {prev})")));
            }
            map.insert(k, (line, v.trim().to_string()));
        }
        let mut e = Entries { map };

        if let Some((line, v)) = e.take("version") {
            let ver = parse_usize(&v).map_err(|m| at(line, m))?;
            if ver != FORMAT_VERSION as usize {
                return Err(at(line, format!("unsupported format version {ver}")));
            }
        }

        let (line, v) = e.require("kind")?;
        let kind = AnsatzKind::from_str(&v).map_err(|err| at(line, err.to_string()))?;
        let (line, v) = e.require("n")?;
        let n = parse_usize(&v).map_err(|m| at(line, m))?;
        let (line_r, v) = e.require("r")?;
        let r = parse_usize(&v).map_err(|m| at(line_r, m))?;
        let (line, v) = e.require("generators")?;
        let labels: Vec<String> = v.split_whitespace().map(str::to_string).collect();
        if labels.iter().any(|l| l.contains('.') || l == "rate") {
            return Err(at(line, "generator labels may not contain `.` or be `rate`"));
        }
        let basis = GeneratorBasis::new(labels, n, r).map_err(|err| at(line, err.to_string()))?;
        let g = basis.len();

        let mut table = IntersectionTable::new(n, g);
        let keys: Vec<String> = e.map.keys().cloned().collect();
        for key in keys {
            let parts: Vec<&str> = key.split('.').collect();
            if parts.len() < 2 || parts[0] == "rate" || !parts.iter().all(|p| basis.index_of(p).is_some()) {
                continue;
            }
            let (line, v) = e.take(&key).expect("key listed");
            if parts.len() != n {
                return Err(at(line, format!("intersection entry `{key}` must have degree {n}")));
            }
            let mono: Vec<usize> = parts.iter().map(|p| basis.index_of(p).expect("checked")).collect();
            let value = parse_rational(&v).map_err(|m| at(line, m))?;
            table.insert(&mono, value).map_err(|err| at(line, err.to_string()))?;
        }

        let (line, v) = e.require("cone")?;
        let rows = v
            .split(';')
            .map(|row| parse_class(row, g).map(|c| c.coeffs))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|m| at(line, format!("cone: {m}")))?;
        let cone = PositivityCone::new(rows);

        let mut class = |key: &'static str| -> Result<ExactClass, ConfigError> {
            let (line, v) = e.require(key)?;
            parse_class(&v, g).map_err(|m| at(line, format!("{key}: {m}")))
        };
        let omega0 = class("omega0")?;
        let c1 = class("c1")?;
        let target = class("target")?;
        let convention = e.take("convention").map(|(_, v)| v);

        let d = SolverBlock {
            nodes: 512,
            half_width: 12.0,
            dt_max: 1e-2,
            eps_stop: 1e-4,
            tol: 1e-7,
            kappa: 0.05,
            dt_floor: 1e-13,
            gauge: Gauge::Zero,
            max_steps: 1_000_000,
        };
        let solver = SolverBlock {
            nodes: e.opt("N", d.nodes, parse_usize)?,
            half_width: e.opt("R", d.half_width, |s| positive(parse_f64(s)?, "R"))?,
            dt_max: e.opt("dt_max", d.dt_max, |s| positive(parse_f64(s)?, "dt_max"))?,
            eps_stop: e.opt("eps_stop", d.eps_stop, |s| positive(parse_f64(s)?, "eps_stop"))?,
            tol: e.opt("tol", d.tol, |s| positive(parse_f64(s)?, "tol"))?,
            kappa: e.opt("kappa", d.kappa, |s| positive(parse_f64(s)?, "kappa"))?,
            dt_floor: e.opt("dt_floor", d.dt_floor, |s| positive(parse_f64(s)?, "dt_floor"))?,
            gauge: e.opt("gauge", d.gauge, |s| Gauge::from_str(s).map_err(|err| err.to_string()))?,
            max_steps: e.opt("max_steps", d.max_steps, parse_usize)?,
        };

        let monitor = MonitorBlock {
            cadence: e.opt("cadence", 1, |s| {
                let c = parse_usize(s)?;
                if c == 0 {
                    Err("`cadence` must be at least 1".into())
                } else {
                    Ok(c)
                }
            })?,
            b: e.opt("B", 10.0, |s| positive(parse_f64(s)?, "B"))?,
            a: e.opt("A", None, |s| {
                if s.trim() == "auto" {
                    Ok(None)
                } else {
                    let a = parse_f64(s)?;
                    if a < 0.0 {
                        Err(format!("`A` must be nonnegative, got {a}"))
                    } else {
                        Ok(Some(a))
                    }
                }
            })?,
        };

        let windows = e.opt("windows", 3, |s| {
            let w = parse_usize(s)?;
            if w == 0 {
                Err("`windows` must be at least 1".into())
            } else {
                Ok(w)
            }
        })?;
        let mut checks = Vec::new();
        let rate_keys: Vec<String> = e.map.keys().filter(|k| k.starts_with("rate.")).cloned().collect();
        for key in rate_keys {
            let (line, v) = e.take(&key).expect("key listed");
            let column = key["rate.".len()..].to_string();
            if !crate::monitors::CSV_COLUMNS.contains(&column.as_str()) || column == "t" {
                return Err(at(line, format!("`{column}` is not a trajectory column")));
            }
            let words: Vec<&str> = v.split_whitespace().collect();
            if !(2..=3).contains(&words.len()) {
                return Err(at(line, "expected `expected tol [two_sided|at_least]`"));
            }
            let expected = parse_f64(words[0]).map_err(|m| at(line, m))?;
            let tol = parse_f64(words[1]).and_then(|t| positive(t, &key)).map_err(|m| at(line, m))?;
            let sided = match words.get(2).copied().unwrap_or("two_sided") {
                "two_sided" => Sidedness::TwoSided,
                "at_least" => Sidedness::AtLeast,
                other => return Err(at(line, format!("unknown sidedness `{other}`"))),
            };
            checks.push(RateCheck { column, expected, tol, sided });
        }

        let out = e.take("out").map(|(_, v)| PathBuf::from(v));

        if let Some((key, (line, _))) = e.map.iter().next() {
            return Err(at(*line, format!("unknown key `{key}`")));
        }
        if !(solver.eps_stop >= 10.0 * solver.dt_floor) {
            return Err(ConfigError::Invalid("eps_stop must be at least 10·dt_floor".into()));
        }
        Ok(ExperimentConfig {
            model: ModelBlock { kind, basis, table, cone, omega0, c1, target, convention },
            solver,
            monitor,
            rates: RatesBlock { windows, checks },
            out,
            source: text.to_string(),
        })
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| ConfigError::Invalid(format!("cannot read {}: {err}", path.display())))?;
        text.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const F1: &str = "\
kind = projective_bundle_k1
n = 2
r = 1
generators = E S
E.E = -1
E.S = 0
S.S = 1
cone = 1 0; -1 1
omega0 = 2 3
c1 = 1 3
target = 3/2 3/2
rate.diam_fiber = 0.5 0.05
rate.Rm_sup = -2 0.1 at_least
";

    #[test]
    fn rationals() {
        let q = |n: i64, d: i64| Rational::new(n.into(), d.into());
        assert_eq!(parse_rational("3").unwrap(), q(3, 1));
        assert_eq!(parse_rational("-1/2").unwrap(), q(-1, 2));
        assert_eq!(parse_rational("0.75").unwrap(), q(3, 4));
        assert_eq!(parse_rational("-.5").unwrap(), q(-1, 2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("1e3").is_err());
        assert!(parse_rational(".").is_err());
    }

    #[test]
    fn parses_f1() {
        let cfg: ExperimentConfig = F1.parse().unwrap();
        assert_eq!(cfg.model.kind, AnsatzKind::ProjectiveBundleK1);
        assert_eq!(cfg.solver.nodes, 512);
        assert_eq!(cfg.rates.checks.len(), 2);
        let rm = cfg.rates.checks.iter().find(|c| c.column == "Rm_sup").unwrap();
        assert_eq!(rm.sided, Sidedness::AtLeast);
        assert!(rm.accepts(-1.0) && !rm.accepts(-2.2));
        let q = |n: i64| Rational::from_integer(n.into());
        let e = cfg.model.basis.index_of("E").unwrap();
        let s = cfg.model.basis.index_of("S").unwrap();
        assert_eq!(cfg.model.table.get(&[e, e]), Some(&q(-1)));
        assert_eq!(cfg.model.table.get(&[s, s]), Some(&q(1)));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = F1.replace("omega0 = 2 3", "omega0 = 2 x");
        match bad.parse::<ExperimentConfig>() {
            Err(ConfigError::Line { line, .. }) => assert_eq!(line, 9),
            other => panic!("{other:?}"),
        }
        let bad = format!("{F1}N = 12\nN = 13\n");
        assert!(matches!(bad.parse::<ExperimentConfig>(), Err(ConfigError::Line { line: 15, .. })));
        let bad = format!("{F1}frobnicate = 1\n");
        assert!(matches!(bad.parse::<ExperimentConfig>(), Err(ConfigError::Line { line: 14, .. })));
        let bad = format!("{F1}E.E.S = 1\n");
        assert!(matches!(bad.parse::<ExperimentConfig>(), Err(ConfigError::Line { line: 14, .. })));
        let bad = F1.replace("cone = 1 0; -1 1", "cone = 1 0; -1");
        assert!(matches!(bad.parse::<ExperimentConfig>(), Err(ConfigError::Line { line: 8, .. })));
        let bad = F1.replace("kind = projective_bundle_k1\n", "");
        assert_eq!(bad.parse::<ExperimentConfig>(), Err(ConfigError::Missing("kind")));
    }
}
