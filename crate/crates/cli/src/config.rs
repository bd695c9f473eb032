//! Experiment configuration: a TOML file with dotted keys, validated into an
//! [`ExperimentConfig`].

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use toml::Spanned;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Syntax(String),
    #[error("key `{key}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Invalid { key: String, line: Option<usize>, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Cubic1d,
    Gradient2d,
    Wave,
}

pub const SCENARIOS: [(Scenario, &str); 3] = [
    (Scenario::Cubic1d, "cubic1d: y' = y - y^3 with multiplicative noise; equilibria -1, 0, 1"),
    (Scenario::Gradient2d, "gradient2d: x' = x - x^3, y' = -y with multiplicative noise; saddle at the origin"),
    (Scenario::Wave, "wave: Galerkin damped wave equation on (0, pi) with noisy damping"),
];

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Cubic1d => "cubic1d",
            Scenario::Gradient2d => "gradient2d",
            Scenario::Wave => "wave",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        SCENARIOS.iter().map(|(sc, _)| *sc).find(|sc| sc.name() == s)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Check suites in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Check {
    Driver,
    Conjugation,
    Hyperbolic,
    Manifold,
    Attractor,
    Continuity,
    Gradient,
    Wave,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::Driver,
        Check::Conjugation,
        Check::Hyperbolic,
        Check::Manifold,
        Check::Attractor,
        Check::Continuity,
        Check::Gradient,
        Check::Wave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Driver => "driver",
            Check::Conjugation => "conjugation",
            Check::Hyperbolic => "hyperbolic",
            Check::Manifold => "manifold",
            Check::Attractor => "attractor",
            Check::Continuity => "continuity",
            Check::Gradient => "gradient",
            Check::Wave => "wave",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Check::ALL.into_iter().find(|c| c.name() == s)
    }

    fn allowed(self, scenario: Scenario) -> bool {
        match scenario {
            Scenario::Wave => matches!(self, Check::Driver | Check::Wave),
            _ => self != Check::Wave,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<Spanned<String>>,
    etas: Option<Spanned<Vec<f64>>>,
    seeds: Option<Spanned<Vec<u64>>>,
    t_anchors: Option<Spanned<Vec<f64>>>,
    checks: Option<Spanned<Vec<String>>>,
    out_dir: Option<Spanned<String>>,
    numeric: Option<RawNumeric>,
    wave: Option<RawWave>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumeric {
    dt: Option<Spanned<f64>>,
    #[serde(rename = "T_back")]
    t_back: Option<Spanned<f64>>,
    #[serde(rename = "T_h")]
    t_h: Option<Spanned<f64>>,
    eps_cluster: Option<Spanned<f64>>,
    grid_n: Option<Spanned<i64>>,
    #[serde(rename = "N_modes")]
    n_modes: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWave {
    beta: Option<Spanned<f64>>,
    mu: Option<Spanned<f64>>,
}

#[derive(Debug, Clone)]
pub struct Numeric {
    pub dt: f64,
    pub t_back: f64,
    pub t_h: f64,
    pub eps_cluster: f64,
    pub grid_n: usize,
    pub n_modes: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub etas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub t_anchors: Vec<f64>,
    pub checks: Vec<Check>,
    pub out_dir: PathBuf,
    pub numeric: Numeric,
    pub beta: f64,
    pub mu: f64,
    /// SHA-256 of the raw config text.
    pub hash: String,
}

struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn of<T>(&self, s: &Spanned<T>) -> Option<usize> {
        Some(self.0[..s.span().start.min(self.0.len())].matches('\n').count() + 1)
    }
}

fn invalid(key: &str, line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), line, message: message.into() }
}

fn required<T>(v: Option<Spanned<T>>, key: &str) -> Result<Spanned<T>, ConfigError> {
    v.ok_or_else(|| invalid(key, None, "missing"))
}

fn positive(lines: &Lines, v: &Spanned<f64>, key: &str) -> Result<f64, ConfigError> {
    let x = *v.get_ref();
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(invalid(key, lines.of(v), format!("must be positive, got {x}")))
    }
}

fn positive_int(lines: &Lines, v: &Spanned<i64>, key: &str) -> Result<usize, ConfigError> {
    let x = *v.get_ref();
    if x > 0 {
        Ok(x as usize)
    } else {
        Err(invalid(key, lines.of(v), format!("must be a positive integer, got {x}")))
    }
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse(&text, base)
}

/// Parses and validates config text; a relative `out_dir` is resolved against `base`.
pub fn parse(text: &str, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string().trim_end().to_string()))?;
    let lines = Lines(text);

    let sc = required(raw.scenario, "scenario")?;
    let scenario = Scenario::parse(sc.get_ref()).ok_or_else(|| {
        let names: Vec<&str> = SCENARIOS.iter().map(|(s, _)| s.name()).collect();
        invalid("scenario", lines.of(&sc), format!("unknown scenario `{}`; expected one of {}", sc.get_ref(), names.join(", ")))
    })?;

    let etas_s = required(raw.etas, "etas")?;
    let etas = etas_s.get_ref().clone();
    if etas.is_empty() {
        return Err(invalid("etas", lines.of(&etas_s), "needs at least one value"));
    }
    if let Some(e) = etas.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
        return Err(invalid("etas", lines.of(&etas_s), format!("noise amplitudes must be nonnegative, got {e}")));
    }

    let seeds_s = required(raw.seeds, "seeds")?;
    let seeds = seeds_s.get_ref().clone();
    if seeds.is_empty() {
        return Err(invalid("seeds", lines.of(&seeds_s), "needs at least one seed"));
    }

    let t_anchors = match raw.t_anchors {
        Some(a) if a.get_ref().is_empty() => return Err(invalid("t_anchors", lines.of(&a), "needs at least one anchor")),
        Some(a) => a.into_inner(),
        None => vec![0.0],
    };

    let checks_s = required(raw.checks, "checks")?;
    let mut checks = Vec::new();
    for c in checks_s.get_ref() {
        let check = Check::parse(c).ok_or_else(|| {
            let names: Vec<&str> = Check::ALL.iter().map(|c| c.name()).collect();
            invalid("checks", lines.of(&checks_s), format!("unknown check `{c}`; expected one of {}", names.join(", ")))
        })?;
        if !check.allowed(scenario) {
            return Err(invalid("checks", lines.of(&checks_s), format!("check `{c}` does not apply to scenario `{scenario}`")));
        }
        checks.push(check);
    }
    checks.sort();
    checks.dedup();
    if checks.is_empty() {
        return Err(invalid("checks", lines.of(&checks_s), "needs at least one check suite"));
    }

    let out_dir = match raw.out_dir {
        Some(o) => base.join(o.get_ref()),
        None => base.join("out"),
    };

    let num = raw.numeric.ok_or_else(|| invalid("numeric.dt", None, "missing"))?;
    let dt = positive(&lines, &required(num.dt, "numeric.dt")?, "numeric.dt")?;
    let opt = |v: &Option<Spanned<f64>>, key: &str, default: f64| -> Result<f64, ConfigError> {
        v.as_ref().map_or(Ok(default), |s| positive(&lines, s, key))
    };
    let opt_int = |v: &Option<Spanned<i64>>, key: &str, default: usize| -> Result<usize, ConfigError> {
        v.as_ref().map_or(Ok(default), |s| positive_int(&lines, s, key))
    };
    let numeric = match scenario {
        Scenario::Wave => Numeric {
            dt,
            t_back: opt(&num.t_back, "numeric.T_back", 10.0)?,
            t_h: opt(&num.t_h, "numeric.T_h", 30.0)?,
            eps_cluster: opt(&num.eps_cluster, "numeric.eps_cluster", 0.01)?,
            grid_n: opt_int(&num.grid_n, "numeric.grid_n", 41)?,
            n_modes: positive_int(&lines, &required(num.n_modes, "numeric.N_modes")?, "numeric.N_modes")?,
        },
        _ => Numeric {
            dt,
            t_back: positive(&lines, &required(num.t_back, "numeric.T_back")?, "numeric.T_back")?,
            t_h: positive(&lines, &required(num.t_h, "numeric.T_h")?, "numeric.T_h")?,
            eps_cluster: positive(&lines, &required(num.eps_cluster, "numeric.eps_cluster")?, "numeric.eps_cluster")?,
            grid_n: positive_int(&lines, &required(num.grid_n, "numeric.grid_n")?, "numeric.grid_n")?,
            n_modes: opt_int(&num.n_modes, "numeric.N_modes", 8)?,
        },
    };
    if numeric.n_modes > nrds_core::waveapp::MAX_MODES {
        return Err(invalid("numeric.N_modes", None, format!("at most {} modes", nrds_core::waveapp::MAX_MODES)));
    }
    if numeric.grid_n < 2 && scenario != Scenario::Wave {
        return Err(invalid("numeric.grid_n", None, "needs at least 2 points per axis"));
    }

    let (beta, mu) = match &raw.wave {
        Some(w) => (opt(&w.beta, "wave.beta", 1.0)?, w.mu.as_ref().map_or(1.0, |m| *m.get_ref())),
        None => (1.0, 1.0),
    };

    if checks.contains(&Check::Continuity) && etas.iter().filter(|e| **e > 0.0).count() < 2 {
        return Err(invalid("etas", lines.of(&etas_s), "the continuity check needs at least two positive noise amplitudes"));
    }

    Ok(ExperimentConfig {
        scenario,
        etas,
        seeds,
        t_anchors,
        checks,
        out_dir,
        numeric,
        beta,
        mu,
        hash: hex::encode(Sha256::digest(text.as_bytes())),
    })
}
