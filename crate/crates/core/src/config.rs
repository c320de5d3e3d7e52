use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{KdvError, Result};
use crate::grid::{SpatialGrid, TimeGrid};

/// Physical parameters: the steady state `beta` sets the advection speed `a = 1 + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdvParams {
    pub beta: f64,
    pub nonlinear: bool,
}

impl KdvParams {
    pub fn linear(beta: f64) -> Self {
        Self { beta, nonlinear: false }
    }

    pub fn advection(&self) -> f64 {
        1.0 + self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Rank threshold for boundary matrices and Laplace determinants.
    pub svd_floor: f64,
    /// Tikhonov shift relative to the largest Gramian eigenvalue.
    pub reg_eps: f64,
    /// Stopping tolerance on successive controls in the fixed-point loop.
    pub fp_tol: f64,
    /// Closed-loop relative error above which a synthesis is suspect.
    pub control_tol: f64,
    /// Gramian residual above which a suspect synthesis is reported as near-critical.
    pub residual_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { svd_floor: 1e-10, reg_eps: 1e-10, fp_tol: 1e-8, control_tol: 0.05, residual_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: KdvParams,
    pub sgrid: SpatialGrid,
    pub tgrid: TimeGrid,
    pub tol: Tolerances,
    /// Cosine modes spanning the Gramian state space; `None` means `N / 8`.
    pub gramian_modes: Option<usize>,
    /// Smallness gate for the nonlinear forward solver.
    pub solver_gate: f64,
    /// Smallness gate `||u0|| + ||uT||` for the nonlinear steering loop.
    pub steer_gate: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(beta: f64, l: f64, n: usize, t: f64, m: usize) -> Result<Self> {
        Ok(Self {
            params: KdvParams::linear(beta),
            sgrid: SpatialGrid::new(l, n)?,
            tgrid: TimeGrid::new(t, m)?,
            tol: Tolerances::default(),
            gramian_modes: None,
            solver_gate: 1.0,
            steer_gate: 0.05,
            max_iterations: 25,
            seed: 0,
            output_dir: PathBuf::from("out"),
        })
    }

    pub fn with_length(&self, l: f64, n: usize) -> Result<Self> {
        let mut c = self.clone();
        c.sgrid = SpatialGrid::new(l, n)?;
        Ok(c)
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        let mut c = self.clone();
        c.params.beta = beta;
        c
    }

    pub fn modes(&self) -> usize {
        self.gramian_modes.unwrap_or((self.sgrid.cells() / 8).max(4)).min(self.sgrid.cells())
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tol;
        for (name, v) in [
            ("svd_floor", t.svd_floor),
            ("reg_eps", t.reg_eps),
            ("fp_tol", t.fp_tol),
            ("control_tol", t.control_tol),
            ("residual_tol", t.residual_tol),
            ("solver_gate", self.solver_gate),
            ("steer_gate", self.steer_gate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(KdvError::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.params.beta.is_finite() {
            return Err(KdvError::InvalidArgument("beta must be finite".into()));
        }
        if let Some(k) = self.gramian_modes {
            if k == 0 || k > self.sgrid.cells() {
                return Err(KdvError::InvalidArgument(format!(
                    "gramian_modes must lie in 1..={}, got {k}",
                    self.sgrid.cells()
                )));
            }
        }
        Ok(())
    }
}

impl Default for RunConfig {
    /// Reference configuration: `beta = 0`, `L = 2`, `N = 128`, `T = 1`, `M = 2000`.
    fn default() -> Self {
        Self::new(0.0, 2.0, 128, 1.0, 2000).expect("reference grid is valid")
    }
}
