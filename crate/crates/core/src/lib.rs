//! Boundary controllability of the Korteweg-de Vries equation on `(0, L)`.
//!
//! Grids and norms, a Laplace-transform kernel for the pure dispersive problem,
//! finite-difference solvers, the critical-length set, and HUM-type control
//! synthesis for the linear and nonlinear problems.

pub mod banded;
pub mod config;
pub mod criticality;
pub mod error;
pub mod grid;
pub mod hum;
pub mod laplace;
pub mod norms;
pub mod pde;

pub use config::{KdvParams, RunConfig, Tolerances};
pub use error::{KdvError, Result};
pub use grid::{ScalarField, SpatialGrid, TimeGrid, TimeSignal};
pub use norms::{fractional_time_norm, l2_inner, l2_norm, time_inner, time_l2_norm};
pub use pde::{BcConfig, BcKind, BoundarySignals, StepSource, TraceKind, Trajectory};
pub use criticality::{CriticalFamily, CriticalLength};
pub use hum::{ControlConfig, ControlSolution, Gramian};
