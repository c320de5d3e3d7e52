use serde::{Deserialize, Serialize};

use crate::error::{KdvError, Result};

/// Uniform partition of `[0, L]` into `N` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    l: f64,
    n: usize,
}

impl SpatialGrid {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return Err(KdvError::InvalidGrid(format!("length must be positive, got {l}")));
        }
        if n < 8 {
            return Err(KdvError::InvalidGrid(format!("need at least 8 cells, got {n}")));
        }
        Ok(Self { l, n })
    }

    pub fn length(&self) -> f64 {
        self.l
    }

    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.l / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        // exact endpoint, no rounding drift
        if i == self.n {
            self.l
        } else {
            self.l * i as f64 / self.n as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.x(i)).collect()
    }

    pub fn trapezoid_weights(&self) -> Vec<f64> {
        trapezoid(self.n, self.dx())
    }
}

/// Uniform partition of `[0, T]` into `M` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t: f64,
    m: usize,
}

impl TimeGrid {
    pub fn new(t: f64, m: usize) -> Result<Self> {
        if !(t.is_finite() && t > 0.0) {
            return Err(KdvError::InvalidGrid(format!("horizon must be positive, got {t}")));
        }
        if m < 8 {
            return Err(KdvError::InvalidGrid(format!("need at least 8 steps, got {m}")));
        }
        Ok(Self { t, m })
    }

    pub fn horizon(&self) -> f64 {
        self.t
    }

    pub fn steps(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.m + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.t / self.m as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.m {
            self.t
        } else {
            self.t * n as f64 / self.m as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.m).map(|n| self.time(n)).collect()
    }

    pub fn trapezoid_weights(&self) -> Vec<f64> {
        trapezoid(self.m, self.dt())
    }
}

fn trapezoid(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n + 1];
    w[0] = 0.5 * h;
    w[n] = 0.5 * h;
    w
}

/// Nodal samples of a function on a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: SpatialGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(KdvError::GridMismatch(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: SpatialGrid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: SpatialGrid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.x(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|v| alpha * v).collect() }
    }

    pub fn axpy(&self, alpha: f64, other: &ScalarField) -> Result<Self> {
        check_same(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect();
        Ok(Self { grid: self.grid, values })
    }
}

pub(crate) fn check_same(a: &SpatialGrid, b: &SpatialGrid) -> Result<()> {
    if a.n != b.n || (a.l - b.l).abs() > 1e-14 * a.l.max(b.l) {
        return Err(KdvError::GridMismatch(format!(
            "(L={}, N={}) vs (L={}, N={})",
            a.l, a.n, b.l, b.n
        )));
    }
    Ok(())
}

/// Samples of a function of time on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl TimeSignal {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(KdvError::GridMismatch(format!(
                "signal has {} samples, time grid has {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.len()).map(|n| f(grid.time(n))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|v| alpha * v).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}
