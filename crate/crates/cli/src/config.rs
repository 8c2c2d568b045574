//! Flat `key = value` configuration.
//!
//! Layers apply in order: built-in defaults, then the config file, then each
//! `--set` override. `k` and `t_star` name the same quantity; within one layer
//! only one of them may appear, across layers the later one wins.

use std::fmt;

use fxtes::experiments::{ExperimentConfig, ExperimentError};
use fxtes::params::{gain_for_time, ParamError, Rational};
use fxtes::plant::{quadratic_map, quartic_map, Analytic, CostMap, MapError};
use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use thiserror::Error;

pub const KEYS: [&str; 22] = [
    "q1", "q2", "k", "t_star", "a", "eps1", "eps2", "theta", "map", "H", "b", "c", "z_star", "x0",
    "xi1_0", "h", "horizon", "nu", "seed", "runs", "tau_f", "stride",
];

/// Where a setting came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override(usize),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Override(n) => write!(f, "override #{n}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { key: String, origin: Origin },
    #[error("{origin}: {message}")]
    Parse { origin: Origin, message: String },
    #[error(transparent)]
    Admissibility(#[from] ParamError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

fn parse_error(origin: Origin, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        origin,
        message: message.into(),
    }
}

fn entry(line: &str, origin: Origin) -> Result<Option<Entry>, ConfigError> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let (key, value) = line
        .split_once('=')
        .ok_or_else(|| parse_error(origin, "expected `key = value`"))?;
    let key = key.trim();
    if !KEYS.contains(&key) {
        return Err(ConfigError::UnknownKey {
            key: key.to_string(),
            origin,
        });
    }
    Ok(Some(Entry {
        key: key.to_string(),
        value: value.trim().to_string(),
        origin,
    }))
}

fn check_exclusive(entries: &[Entry]) -> Result<(), ConfigError> {
    let k = entries.iter().find(|e| e.key == "k");
    let t = entries.iter().find(|e| e.key == "t_star");
    if let (Some(_), Some(t)) = (k, t) {
        return Err(parse_error(
            t.origin,
            "`k` and `t_star` are mutually exclusive",
        ));
    }
    Ok(())
}

/// Entries of a config file, in order.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        out.extend(entry(line, Origin::Line(i + 1))?);
    }
    check_exclusive(&out)?;
    Ok(out)
}

/// Entries from `--set key=value` arguments.
pub fn parse_overrides(sets: &[String]) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (i, s) in sets.iter().enumerate() {
        let origin = Origin::Override(i + 1);
        out.push(entry(s, origin)?.ok_or_else(|| parse_error(origin, "empty override"))?);
    }
    check_exclusive(&out)?;
    Ok(out)
}

fn real(e: &Entry) -> Result<f64, ConfigError> {
    e.value.parse::<f64>().map_err(|_| {
        parse_error(
            e.origin,
            format!("`{}` expects a number, got `{}`", e.key, e.value),
        )
    })
}

fn list(e: &Entry) -> Result<Vec<f64>, ConfigError> {
    e.value
        .split(',')
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| {
                parse_error(
                    e.origin,
                    format!("`{}` expects a comma list of numbers", e.key),
                )
            })
        })
        .collect()
}

fn integer<T: std::str::FromStr>(e: &Entry) -> Result<T, ConfigError> {
    e.value.parse::<T>().map_err(|_| {
        parse_error(
            e.origin,
            format!(
                "`{}` expects a non-negative integer, got `{}`",
                e.key, e.value
            ),
        )
    })
}

fn rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((p, q)) => {
            let (p, q) = (p.trim().parse().ok()?, q.trim().parse::<i64>().ok()?);
            (q != 0).then(|| Ratio::new(p, q))
        }
        None => s.parse().ok().map(Rational::from_integer),
    }
}

fn square(e: &Entry, values: Vec<f64>) -> Result<DMatrix<f64>, ConfigError> {
    let n = (values.len() as f64).sqrt().round() as usize;
    if n * n != values.len() || n == 0 {
        return Err(parse_error(
            e.origin,
            format!("`{}` needs n² entries in row-major order", e.key),
        ));
    }
    Ok(DMatrix::from_row_slice(n, n, &values))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Gain {
    K,
    TStar(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MapKind {
    Quadratic,
    Quartic,
}

/// Apply `layers` on top of `defaults` and validate the result.
pub fn resolve(
    defaults: ExperimentConfig,
    layers: &[Vec<Entry>],
) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = defaults;
    let (mut kind, mut h, mut b, mut c, mut z_star) = match &cfg.map {
        CostMap::Quadratic(m) => (
            MapKind::Quadratic,
            m.h().clone(),
            m.b().clone(),
            m.c(),
            None,
        ),
        CostMap::Quartic(m) => (
            MapKind::Quartic,
            m.h().clone(),
            DVector::zeros(m.h().nrows()),
            0.0,
            cfg.map.minimizer(),
        ),
    };
    let mut gain = Gain::K;
    let mut xi1_scale = None;
    for e in layers.iter().flatten() {
        match e.key.as_str() {
            "q1" => cfg.params.q1 = real(e)?,
            "q2" => cfg.params.q2 = real(e)?,
            "k" => {
                cfg.params.k = real(e)?;
                gain = Gain::K;
            }
            "t_star" => gain = Gain::TStar(real(e)?),
            "a" => cfg.params.a = real(e)?,
            "eps1" => cfg.params.eps1 = real(e)?,
            "eps2" => cfg.params.eps2 = real(e)?,
            "theta" => {
                cfg.params.theta = e
                    .value
                    .split(',')
                    .map(|s| {
                        rational(s).ok_or_else(|| {
                            parse_error(e.origin, format!("bad rational `{}`", s.trim()))
                        })
                    })
                    .collect::<Result<_, _>>()?;
            }
            "map" => {
                kind = match e.value.as_str() {
                    "quadratic" => MapKind::Quadratic,
                    "quartic" => MapKind::Quartic,
                    other => return Err(parse_error(e.origin, format!("unknown map `{other}`"))),
                }
            }
            "H" => h = square(e, list(e)?)?,
            "b" => b = DVector::from_vec(list(e)?),
            "c" => c = real(e)?,
            "z_star" => z_star = Some(DVector::from_vec(list(e)?)),
            "x0" => cfg.x0 = list(e)?,
            "xi1_0" => {
                let v = list(e)?;
                if v.len() == 1 {
                    xi1_scale = Some(v[0]);
                } else {
                    cfg.xi1_0 = square(e, v)?;
                    xi1_scale = None;
                }
            }
            "h" => cfg.h = real(e)?,
            "horizon" => cfg.horizon = real(e)?,
            "nu" => cfg.nu = real(e)?,
            "seed" => cfg.seed = integer(e)?,
            "runs" => cfg.runs = integer(e)?,
            "tau_f" => cfg.tau_f = real(e)?,
            "stride" => cfg.stride = integer(e)?,
            _ => unreachable!("keys are checked on entry"),
        }
    }
    if let Some(s) = xi1_scale {
        let n = cfg.params.dim();
        cfg.xi1_0 = DMatrix::identity(n, n) * s;
    }
    cfg.map = match kind {
        MapKind::Quadratic => quadratic_map(h, b, c)?,
        MapKind::Quartic => {
            let n = h.nrows();
            quartic_map(h, z_star.unwrap_or_else(|| DVector::zeros(n)))?
        }
    };
    if let Gain::TStar(t) = gain {
        cfg.params.k = gain_for_time(t, cfg.params.q1, cfg.params.q2)?;
    }
    match cfg.validate() {
        Ok(_) => Ok(cfg),
        Err(ExperimentError::Params(e)) => Err(ConfigError::Admissibility(e)),
        Err(e) => Err(e.into()),
    }
}

/// Resolve a config file on top of the `figure1` defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    resolve(ExperimentConfig::figure1(), &[parse_entries(text)?])
}

/// `key = value` lines that [`parse_config`] reads back to the same settings.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    for (k, v) in cfg.to_pairs() {
        out.push_str(&k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    }
    out
}
