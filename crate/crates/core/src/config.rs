//! Experiment configuration: a line-oriented `section.key = value` file.
//!
//! ```text
//! # comment
//! model.n = 1
//! model.k = 1
//! model.A = [[0.3]]
//! model.R = [[0.8]]
//! grids.particles = 2000
//! initial.mean = [1.0]
//! ```
//!
//! Matrices are row-major bracketed lists (`[[1, 0], [0, 1]]`); a bare number
//! is accepted for a 1×1 matrix or a length-1 vector. Matrices other than R
//! default to zero. Keys are case-insensitive.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::riccati::LqModel;
use crate::verify::{Sizes, SuiteConfig};

/// The shipped scalar reference configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.cfg");

const MATRIX_KEYS: [&str; 11] = ["a", "abar", "b", "c", "cbar", "d", "q", "qbar", "r", "g", "gbar"];

const KNOWN_KEYS: &[&str] = &[
    "model.n",
    "model.k",
    "model.a",
    "model.abar",
    "model.b",
    "model.c",
    "model.cbar",
    "model.d",
    "model.q",
    "model.qbar",
    "model.r",
    "model.g",
    "model.gbar",
    "model.beta",
    "model.t",
    "model.delta",
    "grids.riccati_steps",
    "grids.sde_steps",
    "grids.particles",
    "grids.paths",
    "seeds.master",
    "initial.mean",
    "initial.std",
    "checks.only",
    "output.dir",
    "value.times",
    "dpp.t",
    "dpp.delta",
    "gexp.paths",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grids {
    pub riccati_steps: usize,
    pub sde_steps: usize,
    pub particles: usize,
    pub paths: usize,
}

impl Grids {
    pub fn sizes(&self) -> Sizes {
        Sizes {
            particles: self.particles,
            paths: self.paths,
            steps: self.sde_steps,
            riccati_steps: self.riccati_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: LqModel,
    pub grids: Grids,
    pub seed: u64,
    pub initial_mean: Vec<f64>,
    pub initial_std: f64,
    /// Check-name prefixes for `verify-all`; empty selects every check.
    pub checks: Vec<String>,
    pub output_dir: PathBuf,
    pub value_times: Vec<f64>,
    pub dpp_t: f64,
    pub dpp_delta: f64,
    pub gexp_paths: usize,
    entries: BTreeMap<String, String>,
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Parses `key = value` lines into a map, later lines winning.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(&format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`")))?;
        insert_entry(&mut map, key, value)?;
    }
    Ok(map)
}

fn insert_entry(map: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<()> {
    let key = key.trim().to_ascii_lowercase();
    if !KNOWN_KEYS.contains(&key.as_str()) {
        return Err(config_err(&key, "unknown key"));
    }
    map.insert(key, value.trim().to_string());
    Ok(())
}

fn parse_f64(field: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| config_err(field, format!("`{s}` is not a number")))
}

fn parse_usize(field: &str, s: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| config_err(field, format!("`{s}` is not a non-negative integer")))
}

/// `[1, 2, 3]` or a bare number.
pub fn parse_vector(field: &str, s: &str) -> Result<Vec<f64>> {
    let t = s.trim();
    let inner = match (t.strip_prefix('['), t.strip_suffix(']')) {
        (Some(_), Some(_)) => &t[1..t.len() - 1],
        (None, None) => t,
        _ => return Err(config_err(field, "unbalanced brackets")),
    };
    if inner.contains('[') || inner.contains(']') {
        return Err(config_err(field, "expected a flat list"));
    }
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(|v| parse_f64(field, v)).collect()
}

/// `[[a, b], [c, d]]` (row-major) or a bare number for 1×1.
pub fn parse_matrix(field: &str, s: &str) -> Result<DMatrix<f64>> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if !t.starts_with('[') {
        return Ok(DMatrix::from_element(1, 1, parse_f64(field, &t)?));
    }
    let inner = t
        .strip_prefix("[[")
        .and_then(|x| x.strip_suffix("]]"))
        .ok_or_else(|| config_err(field, "expected a matrix like [[1,0],[0,1]]"))?;
    let rows: Vec<Vec<f64>> = inner
        .split("],[")
        .map(|row| parse_vector(field, row))
        .collect::<Result<_>>()?;
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(config_err(field, "rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    /// Reads and validates a config file, then applies `key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_str_with(&text, overrides)
    }

    pub fn from_str_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries = parse_entries(text)?;
        for (k, v) in overrides {
            insert_entry(&mut entries, k, v)?;
        }
        Self::from_entries(entries)
    }

    fn from_entries(entries: BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| entries.get(k).map(String::as_str);
        let r_text = get("model.r").ok_or_else(|| config_err("model.R", "missing; the control weight R is required"))?;
        let r = parse_matrix("model.R", r_text)?;
        let k = match get("model.k") {
            Some(v) => parse_usize("model.k", v)?,
            None => r.nrows(),
        };
        let n = match get("model.n") {
            Some(v) => parse_usize("model.n", v)?,
            None => match get("model.q").or(get("model.a")) {
                Some(v) => parse_matrix("model.Q", v)?.nrows(),
                None => return Err(config_err("model.n", "missing and cannot be inferred")),
            },
        };
        if n == 0 || k == 0 {
            return Err(config_err("model.n", "dimensions must be positive"));
        }
        let mut b = LqModel::builder(n, k);
        for name in MATRIX_KEYS {
            let key = format!("model.{name}");
            if let Some(v) = get(&key) {
                let m = parse_matrix(&key, v)?;
                let (rows, cols) = match name {
                    "b" | "d" => (n, k),
                    "r" => (k, k),
                    _ => (n, n),
                };
                if m.shape() != (rows, cols) {
                    return Err(config_err(&key, format!("must be {rows}×{cols}, got {}×{}", m.nrows(), m.ncols())));
                }
                b = match name {
                    "a" => b.a(m),
                    "abar" => b.abar(m),
                    "b" => b.b(m),
                    "c" => b.c(m),
                    "cbar" => b.cbar(m),
                    "d" => b.d(m),
                    "q" => b.q(m),
                    "qbar" => b.qbar(m),
                    "r" => b.r(m),
                    "g" => b.g(m),
                    _ => b.gbar(m),
                };
            }
        }
        if let Some(v) = get("model.beta") {
            b = b.beta(parse_f64("model.beta", v)?);
        }
        if let Some(v) = get("model.t") {
            b = b.horizon(parse_f64("model.T", v)?);
        }
        if let Some(v) = get("model.delta") {
            b = b.delta_pd(parse_f64("model.delta", v)?);
        }
        let model = b.build().map_err(|e| config_err("model", e.to_string()))?;

        let positive = |key: &str, default: usize| -> Result<usize> {
            let v = match get(key) {
                Some(s) => parse_usize(key, s)?,
                None => default,
            };
            if v == 0 {
                return Err(config_err(key, "must be positive"));
            }
            Ok(v)
        };
        let grids = Grids {
            riccati_steps: positive("grids.riccati_steps", 2000)?,
            sde_steps: positive("grids.sde_steps", 200)?,
            particles: positive("grids.particles", 2000)?,
            paths: positive("grids.paths", 200)?,
        };
        if grids.particles < 2 {
            return Err(config_err("grids.particles", "need at least 2 particles"));
        }
        let seed = match get("seeds.master") {
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| config_err("seeds.master", format!("`{v}` is not a u64")))?,
            None => 2024,
        };
        let initial_mean = match get("initial.mean") {
            Some(v) => parse_vector("initial.mean", v)?,
            None => vec![0.0; n],
        };
        if initial_mean.len() != n {
            return Err(config_err("initial.mean", format!("expected {n} entries, got {}", initial_mean.len())));
        }
        let initial_std = match get("initial.std") {
            Some(v) => parse_f64("initial.std", v)?,
            None => 1.0,
        };
        if !(initial_std >= 0.0 && initial_std.is_finite()) {
            return Err(config_err("initial.std", "must be a finite non-negative number"));
        }
        let checks = get("checks.only")
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default();
        let horizon = model.horizon();
        let value_times = match get("value.times") {
            Some(v) => parse_vector("value.times", v)?,
            None => (0..=4).map(|i| horizon * i as f64 / 4.0).collect(),
        };
        if value_times.iter().any(|t| !(0.0..=horizon).contains(t)) {
            return Err(config_err("value.times", format!("times must lie in [0, {horizon}]")));
        }
        let dpp_t = match get("dpp.t") {
            Some(v) => parse_f64("dpp.t", v)?,
            None => 0.0,
        };
        let dpp_delta = match get("dpp.delta") {
            Some(v) => parse_f64("dpp.delta", v)?,
            None => 0.25 * horizon,
        };
        if !(dpp_t >= 0.0 && dpp_delta > 0.0 && dpp_t + dpp_delta <= horizon) {
            return Err(config_err("dpp.delta", "need 0 ≤ t < t + delta ≤ T"));
        }
        Ok(Self {
            model,
            grids,
            seed,
            initial_mean,
            initial_std,
            checks,
            output_dir: PathBuf::from(get("output.dir").unwrap_or("out")),
            value_times,
            dpp_t,
            dpp_delta,
            gexp_paths: positive("gexp.paths", 100_000)?,
            entries,
        })
    }

    /// Canonical text of the effective configuration (sorted keys).
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Suite settings derived from this config.
    pub fn suite(&self) -> SuiteConfig {
        let mut s = SuiteConfig::for_model(&self.model);
        s.sizes = self.grids.sizes();
        s.seed = self.seed;
        s.initial_mean = self.initial_mean.clone();
        s.initial_std = self.initial_std;
        s.gexp_paths = self.gexp_paths;
        s.only = self.checks.clone();
        s
    }
}
