//! HUM control synthesis.
//!
//! The Gramian is `G = L L*`, where `L*` maps a terminal adjoint state to its
//! boundary traces and `L` maps controls to the state reached from rest. It is
//! represented on the span of the first `K` Neumann cosines, orthonormal for the
//! trapezoid inner product. Every column is one adjoint solve plus one forward
//! solve; the result is symmetrized and the defect is kept as a diagnostic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::criticality::enumerate_critical_lengths;
use crate::error::{KdvError, Result};
use crate::grid::{check_same, ScalarField, SpatialGrid, TimeSignal};
use crate::norms::{l2_inner, l2_norm};
use crate::pde::{
    dual_control, explicit_terms, linear_terminal, solve_adjoint, solve_linear_ibvp, solve_nonlinear_ibvp,
    BoundarySignals, Trajectory,
};

/// Which of `h1 = u_xx(0)`, `h2 = u_x(L)`, `h3 = u_xx(L)` are controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ControlConfig {
    pub active: [bool; 3],
}

impl ControlConfig {
    pub fn new(active: [bool; 3]) -> Result<Self> {
        let count = active.iter().filter(|a| **a).count();
        if count == 0 {
            return Err(KdvError::InvalidArgument("at least one control slot must be active".into()));
        }
        if count == 1 && !active[1] {
            return Err(KdvError::InvalidArgument("a single control must act on u_x(L) (slot h2)".into()));
        }
        Ok(Self { active })
    }

    pub fn h2() -> Self {
        Self { active: [false, true, false] }
    }

    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=3).filter(|k| self.active[k - 1])
    }

    pub fn label(&self) -> String {
        self.slots().map(|k| format!("h{k}")).collect::<Vec<_>>().join("+")
    }
}

/// `cos(k pi x / L)` for `k < K`, orthonormal under the trapezoid rule
/// (discrete cosine orthogonality makes this exact).
pub fn cosine_basis(grid: &SpatialGrid, k: usize) -> Vec<ScalarField> {
    let l = grid.length();
    (0..k)
        .map(|j| {
            let f = ScalarField::from_fn(*grid, |x| (j as f64 * std::f64::consts::PI * x / l).cos());
            let n = l2_norm(&f);
            f.scaled(1.0 / n)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Gramian {
    pub config: ControlConfig,
    pub basis: Vec<ScalarField>,
    /// Symmetrized matrix in basis coordinates.
    pub matrix: DMatrix<f64>,
    /// Eigenvalues, ascending.
    pub spectrum: Vec<f64>,
    eigvecs: DMatrix<f64>,
    /// Spectral norm of the antisymmetric part before symmetrization.
    pub assembly_asymmetry: f64,
}

impl Gramian {
    /// Wraps an already symmetric matrix; the basis is left empty.
    pub fn from_matrix(config: ControlConfig, m: DMatrix<f64>) -> Self {
        Self::finish(config, Vec::new(), m)
    }

    fn finish(config: ControlConfig, basis: Vec<ScalarField>, raw: DMatrix<f64>) -> Self {
        let anti = (&raw - raw.transpose()) * 0.5;
        let assembly_asymmetry = if anti.nrows() == 0 { 0.0 } else { anti.norm().min(spectral_norm(&anti)) };
        let matrix = (&raw + raw.transpose()) * 0.5;
        let eig = SymmetricEigen::new(matrix.clone());
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let spectrum = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigvecs = DMatrix::from_fn(matrix.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        Self { config, basis, matrix, spectrum, eigvecs, assembly_asymmetry }
    }

    pub fn lambda_min(&self) -> f64 {
        self.spectrum.first().copied().unwrap_or(0.0)
    }

    pub fn lambda_max(&self) -> f64 {
        self.spectrum.last().copied().unwrap_or(0.0)
    }

    pub fn relative_asymmetry(&self) -> f64 {
        self.assembly_asymmetry / self.lambda_max().abs().max(f64::MIN_POSITIVE)
    }

    pub fn coefficients(&self, f: &ScalarField) -> Result<DVector<f64>> {
        let mut c = DVector::zeros(self.basis.len());
        for (k, e) in self.basis.iter().enumerate() {
            c[k] = l2_inner(e, f)?;
        }
        Ok(c)
    }

    pub fn synthesize_field(&self, c: &DVector<f64>) -> ScalarField {
        let grid = *self.basis[0].grid();
        let mut v = vec![0.0; grid.len()];
        for (k, e) in self.basis.iter().enumerate() {
            for (a, b) in v.iter_mut().zip(e.values()) {
                *a += c[k] * b;
            }
        }
        ScalarField::new(grid, v).expect("basis shares the grid")
    }

    /// Gramian applied to a field, through its projection on the basis.
    pub fn apply_field(&self, f: &ScalarField) -> Result<ScalarField> {
        let c = self.coefficients(f)?;
        Ok(self.synthesize_field(&(&self.matrix * c)))
    }

    /// `(G_+ + eps I)^{-1} r` with negative eigenvalues clamped to zero.
    pub fn regularized_solve(&self, r: &DVector<f64>, reg_eps: f64) -> DVector<f64> {
        let eps = reg_eps * self.lambda_max().abs().max(f64::MIN_POSITIVE);
        let proj = self.eigvecs.transpose() * r;
        let scaled = DVector::from_iterator(
            proj.len(),
            proj.iter().zip(&self.spectrum).map(|(p, l)| p / (l.max(0.0) + eps)),
        );
        &self.eigvecs * scaled
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Controls dual to a terminal adjoint state: the traces paired with each active slot.
pub fn dual_controls(psi: &Trajectory, ctrl: &ControlConfig) -> BoundarySignals {
    let mut sig = BoundarySignals::zeros(psi.tgrid);
    for k in ctrl.slots() {
        sig = sig.with_slot(k, dual_control(psi, k));
    }
    sig
}

fn round_trip(psi_t: &ScalarField, cfg: &RunConfig, ctrl: &ControlConfig) -> Result<ScalarField> {
    let psi = solve_adjoint(psi_t, cfg)?;
    let sig = dual_controls(&psi, ctrl);
    linear_terminal(&ScalarField::zeros(cfg.sgrid), &sig, None, cfg)
}

pub fn assemble_gramian(cfg: &RunConfig, ctrl: &ControlConfig) -> Result<Gramian> {
    cfg.validate()?;
    let basis = cosine_basis(&cfg.sgrid, cfg.modes());
    let cols: Vec<Result<Vec<f64>>> = basis
        .par_iter()
        .map(|e| {
            let u = round_trip(e, cfg, ctrl)?;
            basis.iter().map(|f| l2_inner(f, &u)).collect()
        })
        .collect();
    let k = basis.len();
    let mut raw = DMatrix::zeros(k, k);
    for (j, col) in cols.into_iter().enumerate() {
        for (i, v) in col?.into_iter().enumerate() {
            raw[(i, j)] = v;
        }
    }
    Ok(Gramian::finish(*ctrl, basis, raw))
}

pub fn gramian_min_singular(g: &Gramian) -> f64 {
    g.lambda_min()
}

#[derive(Debug, Clone)]
pub struct ControlSolution {
    pub signals: BoundarySignals,
    pub psi_t: ScalarField,
    pub achieved: ScalarField,
    pub rel_error: f64,
    pub gramian_residual: f64,
    pub iterations: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Norm of the first nonlinear correction `nu` (zero for linear synthesis).
    pub first_correction: f64,
    /// Successive control differences of the fixed-point loop.
    pub history: Vec<f64>,
}

fn relative(err: f64, target: &ScalarField, u0: &ScalarField) -> f64 {
    err / l2_norm(target).max(l2_norm(u0)).max(1e-14)
}

/// Minimal-norm control steering `u0` to `ut` at time `T`.
pub fn synthesize_control(
    u0: &ScalarField,
    ut: &ScalarField,
    cfg: &RunConfig,
    ctrl: &ControlConfig,
) -> Result<ControlSolution> {
    let g = assemble_gramian(cfg, ctrl)?;
    synthesize_with(&g, u0, ut, cfg)
}

pub fn synthesize_with(g: &Gramian, u0: &ScalarField, ut: &ScalarField, cfg: &RunConfig) -> Result<ControlSolution> {
    check_same(u0.grid(), &cfg.sgrid)?;
    check_same(ut.grid(), &cfg.sgrid)?;
    let free = linear_terminal(u0, &BoundarySignals::zeros(cfg.tgrid), None, cfg)?;
    let r = ut.axpy(-1.0, &free)?;
    let rk = g.coefficients(&r)?;
    let c = g.regularized_solve(&rk, cfg.tol.reg_eps);
    let psi_t = g.synthesize_field(&c);
    let psi = solve_adjoint(&psi_t, cfg)?;
    let signals = dual_controls(&psi, &g.config);
    let achieved = linear_terminal(u0, &signals, None, cfg)?;
    let rel_error = relative(l2_norm(&achieved.axpy(-1.0, ut)?), ut, u0);
    let rn = rk.norm();
    let gramian_residual = if rn > 0.0 { (&g.matrix * &c - &rk).norm() / rn } else { 0.0 };
    if rel_error > cfg.tol.control_tol && gramian_residual > cfg.tol.residual_tol {
        return Err(KdvError::NearCriticalTarget {
            rel_error,
            gramian_residual,
            lambda_min: g.lambda_min(),
            lambda_max: g.lambda_max(),
            spectrum: g.spectrum.clone(),
        });
    }
    Ok(ControlSolution {
        signals,
        psi_t,
        achieved,
        rel_error,
        gramian_residual,
        iterations: 1,
        lambda_min: g.lambda_min(),
        lambda_max: g.lambda_max(),
        first_correction: 0.0,
        history: Vec::new(),
    })
}

/// Terminal value of the solution started at rest with homogeneous boundary
/// data and forcing `+(u^2/2)_x` recomputed from `traj`; this is the map
/// `nu(T, u)` that the fixed point must compensate.
pub fn nonlinear_correction(traj: &Trajectory, cfg: &RunConfig) -> Result<ScalarField> {
    let src = explicit_terms(traj).scaled(-1.0);
    linear_terminal(&ScalarField::zeros(cfg.sgrid), &BoundarySignals::zeros(cfg.tgrid), Some(&src), cfg)
}

/// Fixed-point iteration `h <- Psi(u0, uT + nu(T, u[h]))` for the nonlinear problem.
pub fn nonlinear_steer(u0: &ScalarField, ut: &ScalarField, cfg: &RunConfig) -> Result<ControlSolution> {
    let data = l2_norm(u0) + l2_norm(ut);
    if data > cfg.steer_gate {
        return Err(KdvError::SmallnessGate { norm: data, gate: cfg.steer_gate });
    }
    let beta = cfg.params.beta;
    let l = cfg.sgrid.length();
    let near = enumerate_critical_lengths(beta, l + 1.0)?
        .into_iter()
        .map(|c| (c.value - l).abs())
        .fold(f64::INFINITY, f64::min);
    if near < 1e-6 {
        return Err(KdvError::CriticalLength { l, distance: near });
    }
    let ctrl = ControlConfig::h2();
    let g = assemble_gramian(cfg, &ctrl)?;
    let lin = synthesize_with(&g, u0, ut, cfg)?;
    let mut h = lin.signals.clone();
    let mut u = solve_linear_ibvp(u0, &h, None, cfg)?;
    let mut history = Vec::new();
    let mut first_correction = None;
    for it in 1..=cfg.max_iterations {
        let nu = nonlinear_correction(&u, cfg)?;
        first_correction.get_or_insert(l2_norm(&nu));
        let step = synthesize_with(&g, u0, &ut.axpy(1.0, &nu)?, cfg)?;
        let next = step.signals;
        u = solve_nonlinear_ibvp(u0, &next, cfg)?.trajectory;
        let diff = next.distance(&h);
        history.push(diff);
        h = next;
        if diff <= cfg.tol.fp_tol {
            let achieved = u.terminal();
            let rel_error = relative(l2_norm(&achieved.axpy(-1.0, ut)?), ut, u0);
            return Ok(ControlSolution {
                signals: h,
                psi_t: step.psi_t,
                achieved,
                rel_error,
                gramian_residual: step.gramian_residual,
                iterations: it,
                lambda_min: g.lambda_min(),
                lambda_max: g.lambda_max(),
                first_correction: first_correction.unwrap_or(0.0),
                history,
            });
        }
    }
    Err(KdvError::ContractionFailed { history })
}

/// Largest drift of `<u(t), psi>` from its initial value along a trajectory.
pub fn pairing_drift(traj: &Trajectory, psi: &ScalarField) -> Result<f64> {
    let p0 = l2_inner(&traj.field(0), psi)?;
    let mut worst = 0.0f64;
    for n in 0..traj.tgrid.len() {
        worst = worst.max((l2_inner(&traj.field(n), psi)? - p0).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub l: f64,
    pub n: usize,
    pub modes: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub condition: f64,
    pub asymmetry: f64,
}

/// One Gramian per length at the template's cell size `dx`; the mode count
/// scales with `N` so the resolved wavenumbers stay fixed.
pub fn sweep_lengths(beta: f64, lengths: &[f64], ctrl: &ControlConfig, template: &RunConfig) -> Result<Vec<SweepRow>> {
    let dx = template.sgrid.dx();
    let k_ref = template.modes() as f64 / template.sgrid.cells() as f64;
    lengths
        .iter()
        .map(|&l| {
            let n = (l / dx).round().max(8.0) as usize;
            let mut cfg = template.with_beta(beta).with_length(l, n)?;
            cfg.gramian_modes = Some(((k_ref * n as f64).round() as usize).clamp(1, n));
            let g = assemble_gramian(&cfg, ctrl)?;
            let lmin = g.lambda_min();
            Ok(SweepRow {
                l,
                n,
                modes: g.basis.len(),
                lambda_min: lmin,
                lambda_max: g.lambda_max(),
                condition: if lmin > 0.0 { g.lambda_max() / lmin } else { f64::INFINITY },
                asymmetry: g.relative_asymmetry(),
            })
        })
        .collect()
}

/// Smooth signal with `h(0) = 0`: a random combination of `sin(k pi t / T)`, `k = 1..=modes`.
pub fn random_signal(tgrid: &crate::grid::TimeGrid, coeffs: &[f64]) -> TimeSignal {
    let t_end = tgrid.horizon();
    TimeSignal::from_fn(*tgrid, |t| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * t / t_end).sin())
            .sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_config_rules() {
        assert!(ControlConfig::new([false; 3]).is_err());
        assert!(ControlConfig::new([true, false, false]).is_err());
        assert!(ControlConfig::new([false, true, false]).is_ok());
        assert!(ControlConfig::new([true, true, false]).is_ok());
        assert_eq!(ControlConfig::new([false, true, true]).unwrap().label(), "h2+h3");
    }

    #[test]
    fn trivial_spectra() {
        let z = Gramian::from_matrix(ControlConfig::h2(), DMatrix::zeros(4, 4));
        assert_eq!(gramian_min_singular(&z), 0.0);
        let i = Gramian::from_matrix(ControlConfig::h2(), DMatrix::identity(4, 4));
        assert!((gramian_min_singular(&i) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn basis_is_orthonormal() {
        let g = SpatialGrid::new(2.0, 32).unwrap();
        let b = cosine_basis(&g, 8);
        for i in 0..8 {
            for j in 0..8 {
                let v = l2_inner(&b[i], &b[j]).unwrap();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-13);
            }
        }
    }
}
