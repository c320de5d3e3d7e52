//! Tiny vocabularies for initial fields and boundary signals on the command line.
//!
//! A spec is `[coef*]name[:arg]`, for example `0.01*gauss`, `cos:2`, `const:0.3`.

use std::f64::consts::PI;

use kdvlab::{ScalarField, SpatialGrid, TimeGrid, TimeSignal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

fn split(spec: &str) -> Result<(f64, &str, Option<&str>), CliError> {
    let spec = spec.trim();
    let (coef, rest) = match spec.split_once('*') {
        Some((c, r)) => (
            c.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad coefficient in {spec:?}")))?,
            r.trim(),
        ),
        None => (1.0, spec),
    };
    let (name, arg) = match rest.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (rest, None),
    };
    Ok((coef, name, arg))
}

fn arg_f64(arg: Option<&str>, default: f64, spec: &str) -> Result<f64, CliError> {
    arg.map_or(Ok(default), |a| a.parse().map_err(|_| CliError::Usage(format!("bad argument in {spec:?}"))))
}

pub const FIELD_HELP: &str =
    "[coef*]NAME[:ARG], NAME one of zero, const:C, cos[:K] (cos(K pi x/L)), gauss[:X0] (exp(-20 (x-X0)^2), X0 = L/2), random[:K]";
pub const SIGNAL_HELP: &str =
    "[coef*]NAME[:ARG], NAME one of zero, pulse (sin^2(pi t/T)), sine[:K] (sin(K pi t/T)), random[:K]";

/// Builds a field; `random` draws from `rng`.
pub fn field(spec: &str, grid: &SpatialGrid, rng: &mut ChaCha8Rng) -> Result<ScalarField, CliError> {
    let (coef, name, arg) = split(spec)?;
    let l = grid.length();
    let f = match name {
        "zero" => ScalarField::zeros(*grid),
        "const" => ScalarField::constant(*grid, arg_f64(arg, 1.0, spec)?),
        "cos" => {
            let k = arg_f64(arg, 1.0, spec)?;
            ScalarField::from_fn(*grid, |x| (k * PI * x / l).cos())
        }
        "gauss" => {
            let x0 = arg_f64(arg, 0.5 * l, spec)?;
            ScalarField::from_fn(*grid, |x| (-20.0 * (x - x0).powi(2)).exp())
        }
        "random" => {
            let k = arg_f64(arg, 4.0, spec)? as usize;
            let c: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            ScalarField::from_fn(*grid, |x| {
                c.iter().enumerate().map(|(j, a)| a * ((j + 1) as f64 * PI * x / l).cos()).sum()
            })
        }
        _ => return Err(CliError::Usage(format!("unknown field {name:?}; expected {FIELD_HELP}"))),
    };
    Ok(f.scaled(coef))
}

pub fn signal(spec: &str, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> Result<TimeSignal, CliError> {
    let (coef, name, arg) = split(spec)?;
    let t_end = grid.horizon();
    let s = match name {
        "zero" => TimeSignal::zeros(*grid),
        "pulse" => TimeSignal::from_fn(*grid, |t| (PI * t / t_end).sin().powi(2)),
        "sine" => {
            let k = arg_f64(arg, 1.0, spec)?;
            TimeSignal::from_fn(*grid, |t| (k * PI * t / t_end).sin())
        }
        "random" => {
            let k = arg_f64(arg, 4.0, spec)? as usize;
            let c: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            kdvlab::hum::random_signal(grid, &c)
        }
        _ => return Err(CliError::Usage(format!("unknown signal {name:?}; expected {SIGNAL_HELP}"))),
    };
    Ok(s.scaled(coef))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `h2`, `h2,h3`, `h1+h2`.
pub fn controls(spec: &str) -> Result<kdvlab::ControlConfig, CliError> {
    let mut active = [false; 3];
    for part in spec.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "h1" => active[0] = true,
            "h2" => active[1] = true,
            "h3" => active[2] = true,
            _ => return Err(CliError::Usage(format!("unknown control slot {part:?}; expected h1, h2, h3"))),
        }
    }
    kdvlab::ControlConfig::new(active).map_err(|e| CliError::Usage(e.to_string()))
}
