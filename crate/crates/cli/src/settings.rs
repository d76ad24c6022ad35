//! JSON config files and the parsing of list-valued flags.
//!
//! A config file is a flat JSON object whose keys mirror the long flag names
//! with underscores (`eta0`, `stop_tol`, `tau_s`, ..). Explicit flags win over
//! the file, and the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// A scalar or a list; sweeps accept both, single runs only the former.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub problem: Option<String>,
    pub problem_file: Option<PathBuf>,
    pub dim: Option<usize>,
    pub kernel: Option<String>,
    pub scheme: Option<String>,
    pub eta0: Option<OneOrMany<f64>>,
    pub alpha: Option<OneOrMany<f64>>,
    pub cap: Option<f64>,
    pub iters: Option<usize>,
    pub noise: Option<OneOrMany<f64>>,
    pub seed: Option<OneOrMany<u64>>,
    pub stop_tol: Option<f64>,
    pub displacement_tol: Option<f64>,
    pub record_every: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub x: Option<Vec<f64>>,
    pub xbar: Option<Vec<f64>>,
    pub tau_s: Option<f64>,
    pub tau_k: Option<f64>,
    pub tau_act: Option<f64>,
    pub h: Option<f64>,
    pub tmax: Option<f64>,
    pub safety: Option<f64>,
    pub record_dt: Option<f64>,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub eps: Option<f64>,
    pub deltas: Option<Vec<f64>>,
    pub perturb: Option<f64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> CliResult<Settings> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config `{}`: {e}", path.display())))
    }
}

/// Comma-separated numbers; an empty string is an empty list.
pub fn parse_f64_list(flag: &str, text: &str) -> CliResult<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Config(format!("--{flag}: `{t}` is not a finite number")))
        })
        .collect()
}

/// Comma-separated seeds, or a half-open range `a..b`.
pub fn parse_seed_list(flag: &str, text: &str) -> CliResult<Vec<u64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let bad = |t: &str| CliError::Config(format!("--{flag}: `{t}` is not a seed or seed range"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad(text))?;
        let b: u64 = b.trim().parse().map_err(|_| bad(text))?;
        return Ok((a..b).collect());
    }
    text.split(',').map(|t| t.trim().parse().map_err(|_| bad(t))).collect()
}

pub fn single<T: Copy>(flag: &str, values: &[T]) -> CliResult<T> {
    match values {
        [v] => Ok(*v),
        _ => Err(CliError::Config(format!("--{flag} takes exactly one value here"))),
    }
}

/// Flag, then config entry, then default.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

pub fn positive(flag: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!(
            "--{flag} must be positive and finite, got {v}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_ranges() {
        assert_eq!(parse_f64_list("x", "0.5, 1,2e-3").unwrap(), vec![0.5, 1.0, 2e-3]);
        assert!(parse_f64_list("x", "").unwrap().is_empty());
        assert!(parse_f64_list("x", "1,nan").is_err());
        assert_eq!(parse_seed_list("s", "3..6").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_seed_list("s", "7,1").unwrap(), vec![7, 1]);
        assert!(parse_seed_list("s", "a").is_err());
    }

    #[test]
    fn config_accepts_scalars_and_lists() {
        let s: Settings = serde_json::from_str(r#"{"eta0": [0.1, 0.2], "seed": 4, "x0": [0.5, 0.5]}"#).unwrap();
        assert_eq!(s.eta0.unwrap().to_vec(), vec![0.1, 0.2]);
        assert_eq!(s.seed.unwrap().to_vec(), vec![4]);
        assert!(serde_json::from_str::<Settings>(r#"{"bogus": 1}"#).is_err());
    }
}
