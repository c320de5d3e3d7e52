//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kdvlab::RunConfig;

use crate::CliError;

/// Every accepted key with a one-line meaning.
pub const KEYS: &[(&str, &str)] = &[
    ("beta", "steady state; advection speed is 1 + beta"),
    ("L", "interval length"),
    ("N", "spatial cells"),
    ("T", "time horizon"),
    ("M", "time steps"),
    ("modes", "cosine modes spanning the Gramian state space"),
    ("svd_floor", "rank threshold for boundary matrices"),
    ("reg_eps", "Tikhonov shift relative to the largest Gramian eigenvalue"),
    ("fp_tol", "fixed-point stopping tolerance"),
    ("control_tol", "closed-loop error above which a synthesis is suspect"),
    ("residual_tol", "Gramian residual marking a near-critical target"),
    ("solver_gate", "smallness gate of the nonlinear forward solver"),
    ("steer_gate", "smallness gate of the nonlinear steering loop"),
    ("max_iterations", "fixed-point iteration cap"),
    ("seed", "seed of the random field generator"),
    ("output_dir", "artifact directory"),
];

fn valid_keys() -> String {
    KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut s = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Usage(format!("unknown key {key:?}; valid keys: {}", valid_keys())));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Parses `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn number<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_value(key, v),
        }
    }

    pub fn to_run_config(&self) -> Result<RunConfig, CliError> {
        let d = RunConfig::default();
        let beta = self.number("beta", d.params.beta)?;
        let l = match self.get("L") {
            None => d.sgrid.length(),
            Some(v) => parse_length(v).ok_or_else(|| bad("L", v))?,
        };
        let n = self.number("N", d.sgrid.cells())?;
        let t = self.number("T", d.tgrid.horizon())?;
        let m = self.number("M", d.tgrid.steps())?;
        let mut cfg = RunConfig::new(beta, l, n, t, m)?;
        if self.get("modes").is_some() {
            cfg.gramian_modes = Some(self.number("modes", 0usize)?);
        }
        cfg.tol.svd_floor = self.number("svd_floor", cfg.tol.svd_floor)?;
        cfg.tol.reg_eps = self.number("reg_eps", cfg.tol.reg_eps)?;
        cfg.tol.fp_tol = self.number("fp_tol", cfg.tol.fp_tol)?;
        cfg.tol.control_tol = self.number("control_tol", cfg.tol.control_tol)?;
        cfg.tol.residual_tol = self.number("residual_tol", cfg.tol.residual_tol)?;
        cfg.solver_gate = self.number("solver_gate", cfg.solver_gate)?;
        cfg.steer_gate = self.number("steer_gate", cfg.steer_gate)?;
        cfg.max_iterations = self.number("max_iterations", cfg.max_iterations)?;
        cfg.seed = self.number("seed", cfg.seed)?;
        if let Some(dir) = self.get("output_dir") {
            cfg.output_dir = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn bad(key: &str, v: &str) -> CliError {
    CliError::Usage(format!("invalid value {v:?} for key {key:?}"))
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| bad(key, v))
}

/// Accepts plain numbers and multiples of pi: `pi`, `2pi`, `2*pi`, `0.5*pi`.
pub fn parse_length(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Some(v);
    }
    let head = s.strip_suffix("pi")?.trim_end_matches('*').trim();
    let k = if head.is_empty() { 1.0 } else { head.parse::<f64>().ok()? };
    Some(k * std::f64::consts::PI)
}
