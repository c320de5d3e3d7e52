//! Finite-difference solvers for the linear, adjoint, Dirichlet-type and
//! nonlinear boundary value problems on `(0, L)`, plus exact-identity checks.
//!
//! The spatial operator is `D = -a d/dx - d^3/dx^3` with `a = 1 + beta`. One
//! ghost node is eliminated on the left and two on the right, matching the
//! one-condition / two-condition split of the boundary data.

use serde::{Deserialize, Serialize};

use crate::banded::{BandLu, BandMatrix};
use crate::config::{KdvParams, RunConfig};
use crate::error::{KdvError, Result};
use crate::grid::{check_same, ScalarField, SpatialGrid, TimeGrid, TimeSignal};
use crate::norms::{l2_inner, l2_norm, time_l2_norm, weighted_dot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BcKind {
    /// `u_xx(0) = h1`, `u_x(L) = h2`, `u_xx(L) = h3`.
    NeumannForward,
    /// `a u + u_xx = 0` at both ends and `u_x(L) = 0`.
    AdjointForward,
    /// `u(0) = g1`, `u_x(L) = g2`, `u_xx(L) = g3`.
    DirichletForward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BcConfig {
    pub kind: BcKind,
    pub active: [bool; 3],
}

impl BcConfig {
    pub fn neumann(active: [bool; 3]) -> Self {
        Self { kind: BcKind::NeumannForward, active }
    }

    pub fn adjoint() -> Self {
        Self { kind: BcKind::AdjointForward, active: [false; 3] }
    }

    pub fn dirichlet() -> Self {
        Self { kind: BcKind::DirichletForward, active: [true; 3] }
    }
}

/// The three boundary inputs. Inactive slots hold zero signals.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySignals {
    slots: [TimeSignal; 3],
    active: [bool; 3],
}

impl BoundarySignals {
    pub fn zeros(tgrid: TimeGrid) -> Self {
        let z = TimeSignal::zeros(tgrid);
        Self { slots: [z.clone(), z.clone(), z], active: [false; 3] }
    }

    /// Single control acting on `u_x(L)`.
    pub fn h2(h: TimeSignal) -> Self {
        Self::zeros(*h.grid()).with_slot(2, h)
    }

    /// Sets slot `k` in `1..=3` and marks it active.
    pub fn with_slot(mut self, k: usize, h: TimeSignal) -> Self {
        assert!((1..=3).contains(&k), "slot index {k} outside 1..=3");
        self.slots[k - 1] = h;
        self.active[k - 1] = true;
        self
    }

    pub fn slot(&self, k: usize) -> &TimeSignal {
        &self.slots[k - 1]
    }

    pub fn active(&self) -> [bool; 3] {
        self.active
    }

    pub fn tgrid(&self) -> &TimeGrid {
        self.slots[0].grid()
    }

    fn at(&self, n: usize) -> [f64; 3] {
        [self.slots[0].values()[n], self.slots[1].values()[n], self.slots[2].values()[n]]
    }

    fn check(&self, tgrid: &TimeGrid) -> Result<()> {
        if self.slots.iter().any(|s| s.grid() != tgrid) {
            return Err(KdvError::GridMismatch("boundary signals on a different time grid".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { slots: self.slots.clone().map(|s| s.scaled(alpha)), active: self.active }
    }

    /// Euclidean combination of the slot L2 norms.
    pub fn norm(&self) -> f64 {
        self.slots.iter().map(|s| time_l2_norm(s).powi(2)).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &BoundarySignals) -> f64 {
        let mut acc = 0.0;
        for k in 0..3 {
            let w = self.slots[k].grid().trapezoid_weights();
            let d: Vec<f64> =
                self.slots[k].values().iter().zip(other.slots[k].values()).map(|(a, b)| a - b).collect();
            acc += weighted_dot(&w, &d, &d);
        }
        acc.sqrt()
    }
}

/// Space-time samples of a solution, one row per time level.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub sgrid: SpatialGrid,
    pub tgrid: TimeGrid,
    pub bc: BcConfig,
    pub params: KdvParams,
    /// Set when the solution was computed in reflected coordinates and mapped back.
    pub reflected: bool,
    pub signals: BoundarySignals,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(
        sgrid: SpatialGrid,
        tgrid: TimeGrid,
        bc: BcConfig,
        params: KdvParams,
        signals: BoundarySignals,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != sgrid.len() * tgrid.len() {
            return Err(KdvError::GridMismatch(format!(
                "trajectory holds {} values, grids need {}",
                values.len(),
                sgrid.len() * tgrid.len()
            )));
        }
        Ok(Self { sgrid, tgrid, bc, params, reflected: false, signals, values })
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let w = self.sgrid.len();
        &self.values[n * w..(n + 1) * w]
    }

    pub fn field(&self, n: usize) -> ScalarField {
        ScalarField::new(self.sgrid, self.level(n).to_vec()).expect("row length matches grid")
    }

    pub fn terminal(&self) -> ScalarField {
        self.field(self.tgrid.steps())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest deviation of the discrete boundary conditions over all time levels,
    /// evaluated with one-sided second-order differences.
    pub fn boundary_residuals(&self) -> [f64; 3] {
        let a = self.params.advection();
        let dx = self.sgrid.dx();
        let mut r = [0.0f64; 3];
        for n in 0..self.tgrid.len() {
            let u = self.level(n);
            let h = self.signals.at(n);
            let e = match (self.bc.kind, self.reflected) {
                (BcKind::NeumannForward, _) => {
                    [d2_left(u, dx) - h[0], d1_right(u, dx) - h[1], d2_right(u, dx) - h[2]]
                }
                (BcKind::DirichletForward, _) => {
                    [u[0] - h[0], d1_right(u, dx) - h[1], d2_right(u, dx) - h[2]]
                }
                (BcKind::AdjointForward, false) => {
                    [a * u[0] + d2_left(u, dx), a * u[u.len() - 1] + d2_right(u, dx), d1_right(u, dx)]
                }
                (BcKind::AdjointForward, true) => {
                    [a * u[0] + d2_left(u, dx), a * u[u.len() - 1] + d2_right(u, dx), d1_left(u, dx)]
                }
            };
            for k in 0..3 {
                r[k] = r[k].max(e[k].abs());
            }
        }
        r
    }
}

pub(crate) fn d1_left(u: &[f64], dx: f64) -> f64 {
    (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx)
}

pub(crate) fn d1_right(u: &[f64], dx: f64) -> f64 {
    let n = u.len() - 1;
    (3.0 * u[n] - 4.0 * u[n - 1] + u[n - 2]) / (2.0 * dx)
}

fn d2_left(u: &[f64], dx: f64) -> f64 {
    (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / (dx * dx)
}

fn d2_right(u: &[f64], dx: f64) -> f64 {
    let n = u.len() - 1;
    (2.0 * u[n] - 5.0 * u[n - 1] + 4.0 * u[n - 2] - u[n - 3]) / (dx * dx)
}

/// Per-step forcing: row `n` is applied on the step `t_n -> t_{n+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSource {
    width: usize,
    values: Vec<f64>,
}

impl StepSource {
    pub fn new(width: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || values.len() % width != 0 {
            return Err(KdvError::GridMismatch("step source is not rectangular".into()));
        }
        Ok(Self { width, values })
    }

    /// Midpoint averages of a source sampled at the `M + 1` time levels.
    pub fn from_levels(width: usize, levels: &[f64]) -> Result<Self> {
        let rows = levels.len() / width;
        if rows < 2 || levels.len() % width != 0 {
            return Err(KdvError::GridMismatch("level source is not rectangular".into()));
        }
        let mut values = Vec::with_capacity((rows - 1) * width);
        for n in 0..rows - 1 {
            for i in 0..width {
                values.push(0.5 * (levels[n * width + i] + levels[(n + 1) * width + i]));
            }
        }
        Ok(Self { width, values })
    }

    pub fn steps(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn step(&self, n: usize) -> &[f64] {
        &self.values[n * self.width..(n + 1) * self.width]
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { width: self.width, values: self.values.iter().map(|v| alpha * v).collect() }
    }
}

/// Banded matrix `D` after ghost elimination together with the boundary lift.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub matrix: BandMatrix,
    /// `lift[i][k]` multiplies boundary datum `k` in row `i`.
    pub lift: Vec<[f64; 3]>,
    /// Row 0 is the algebraic condition `u_0 = g1` (Dirichlet closure).
    pub algebraic_left: bool,
}

impl DiscreteOperator {
    pub fn apply(&self, u: &[f64], h: [f64; 3], out: &mut [f64]) {
        self.matrix.matvec(u, out);
        for (o, l) in out.iter_mut().zip(&self.lift) {
            *o += l[0] * h[0] + l[1] * h[1] + l[2] * h[2];
        }
    }
}

// Ghost value as an affine combination of nodal values and boundary data.
#[derive(Debug, Clone, Default)]
struct Ghost {
    coef: Vec<(usize, f64)>,
    lift: [f64; 3],
}

const KL: usize = 2;
const KU: usize = 3;

pub fn assemble_operator(params: &KdvParams, sgrid: &SpatialGrid, bc: &BcConfig) -> Result<DiscreteOperator> {
    let n = sgrid.cells();
    if n < 8 {
        return Err(KdvError::InvalidGrid(format!("need at least 8 cells, got {n}")));
    }
    if bc.kind == BcKind::AdjointForward && bc.active.iter().any(|a| *a) {
        return Err(KdvError::DegenerateBc("adjoint boundary conditions carry no data".into()));
    }
    let a = params.advection();
    let dx = sgrid.dx();
    let dx2 = dx * dx;

    let left = match bc.kind {
        BcKind::NeumannForward => {
            Some(Ghost { coef: vec![(0, 2.0), (1, -1.0)], lift: [dx2, 0.0, 0.0] })
        }
        BcKind::AdjointForward => Some(Ghost { coef: vec![(0, 2.0 - a * dx2), (1, -1.0)], lift: [0.0; 3] }),
        BcKind::DirichletForward => None,
    };

    // u_x(L) = r1, u_xx(L) = r2 through fourth-order central differences:
    // g1 = (12 dx^2 r2 - 12 dx r1 + 30 u_N - 24 u_{N-1} + 2 u_{N-2}) / 8
    // g2 = 8 g1 - 8 u_{N-1} + u_{N-2} - 12 dx r1
    let (r2_node, r1_lift, r2_lift) = match bc.kind {
        BcKind::AdjointForward => (-a, 0.0, 0.0),
        _ => (0.0, 1.0, 1.0),
    };
    let mut g1 = Ghost {
        coef: vec![(n, (30.0 + 12.0 * dx2 * r2_node) / 8.0), (n - 1, -3.0), (n - 2, 0.25)],
        lift: [0.0, -1.5 * dx * r1_lift, 1.5 * dx2 * r2_lift],
    };
    g1.coef.sort_by_key(|c| c.0);
    let mut g2 = Ghost { coef: Vec::new(), lift: [0.0; 3] };
    for &(j, c) in &g1.coef {
        push(&mut g2.coef, j, 8.0 * c);
    }
    push(&mut g2.coef, n - 1, -8.0);
    push(&mut g2.coef, n - 2, 1.0);
    for k in 0..3 {
        g2.lift[k] = 8.0 * g1.lift[k];
    }
    g2.lift[1] -= 12.0 * dx * r1_lift;

    let mut d = BandMatrix::zeros(n + 1, KL, KU);
    let mut lift = vec![[0.0; 3]; n + 1];
    let c3 = 1.0 / (2.0 * dx2 * dx);
    let c1 = a / (2.0 * dx);
    // stencil entries are (offset from node i, weight) for -a u_x - u_xxx
    let biased: [(isize, f64); 5] =
        [(-1, 3.0 * c3 + c1), (0, -10.0 * c3), (1, 12.0 * c3 - c1), (2, -6.0 * c3), (3, c3)];
    let central: [(isize, f64); 4] =
        [(-2, c3), (-1, -2.0 * c3 + c1), (1, 2.0 * c3 - c1), (2, -c3)];

    let first = if bc.kind == BcKind::DirichletForward { 1 } else { 0 };
    for i in first..=n {
        let stencil: &[(isize, f64)] = if i == first { &biased } else { &central };
        for &(off, w) in stencil {
            let j = i as isize + off;
            if j < 0 {
                let g = left.as_ref().ok_or_else(|| {
                    KdvError::DegenerateBc("left ghost requested without a left condition".into())
                })?;
                scatter(&mut d, &mut lift[i], i, g, w);
            } else if j as usize > n + 2 {
                unreachable!("stencil reaches beyond two right ghosts");
            } else if j as usize == n + 1 {
                scatter(&mut d, &mut lift[i], i, &g1, w);
            } else if j as usize == n + 2 {
                scatter(&mut d, &mut lift[i], i, &g2, w);
            } else {
                d.add(i, j as usize, w);
            }
        }
    }
    Ok(DiscreteOperator { matrix: d, lift, algebraic_left: bc.kind == BcKind::DirichletForward })
}

fn push(coef: &mut Vec<(usize, f64)>, j: usize, c: f64) {
    match coef.iter_mut().find(|e| e.0 == j) {
        Some(e) => e.1 += c,
        None => coef.push((j, c)),
    }
}

fn scatter(d: &mut BandMatrix, lift: &mut [f64; 3], i: usize, g: &Ghost, w: f64) {
    for &(j, c) in &g.coef {
        d.add(i, j, w * c);
    }
    for k in 0..3 {
        lift[k] += w * g.lift[k];
    }
}

/// Crank-Nicolson stepper with a single reusable factorization.
struct Stepper {
    op: DiscreteOperator,
    lu: BandLu,
    explicit: BandMatrix,
    dt: f64,
}

impl Stepper {
    fn new(params: &KdvParams, sgrid: &SpatialGrid, bc: &BcConfig, dt: f64) -> Result<Self> {
        let op = assemble_operator(params, sgrid, bc)?;
        let lhs = op.matrix.shifted(-0.5 * dt, 1.0);
        let lu = BandLu::factor(&lhs).map_err(|_| KdvError::SingularFactorization {
            beta: params.beta,
            l: sgrid.length(),
            n: sgrid.cells(),
        })?;
        let explicit = op.matrix.shifted(0.5 * dt, 1.0);
        Ok(Self { op, lu, explicit, dt })
    }

    fn step(&self, u: &[f64], h0: [f64; 3], h1: [f64; 3], src: Option<&[f64]>, out: &mut [f64]) {
        self.explicit.matvec(u, out);
        let dt = self.dt;
        for (i, o) in out.iter_mut().enumerate() {
            let l = &self.op.lift[i];
            *o += 0.5 * dt * (l[0] * (h0[0] + h1[0]) + l[1] * (h0[1] + h1[1]) + l[2] * (h0[2] + h1[2]));
            if let Some(s) = src {
                *o += dt * s[i];
            }
        }
        if self.op.algebraic_left {
            out[0] = h1[0];
        }
        self.lu.solve_in_place(out);
    }
}

fn march(
    cfg: &RunConfig,
    bc: &BcConfig,
    u0: &[f64],
    sig: &BoundarySignals,
    source: Option<&StepSource>,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    let m = cfg.tgrid.steps();
    if let Some(s) = source {
        if s.steps() != m || s.width != cfg.sgrid.len() {
            return Err(KdvError::GridMismatch(format!(
                "source has {} steps of width {}, expected {} of width {}",
                s.steps(),
                s.width,
                m,
                cfg.sgrid.len()
            )));
        }
    }
    let st = Stepper::new(&cfg.params, &cfg.sgrid, bc, cfg.tgrid.dt())?;
    let mut u = u0.to_vec();
    let mut next = vec![0.0; u.len()];
    visit(0, &u);
    for n in 0..m {
        st.step(&u, sig.at(n), sig.at(n + 1), source.map(|s| s.step(n)), &mut next);
        std::mem::swap(&mut u, &mut next);
        visit(n + 1, &u);
    }
    Ok(u)
}

fn check_inputs(cfg: &RunConfig, u0: &ScalarField, sig: &BoundarySignals) -> Result<()> {
    check_same(u0.grid(), &cfg.sgrid)?;
    sig.check(&cfg.tgrid)
}

/// Linear problem with Neumann data, optionally forced by a per-step source.
pub fn solve_linear_ibvp(
    u0: &ScalarField,
    sig: &BoundarySignals,
    source: Option<&StepSource>,
    cfg: &RunConfig,
) -> Result<Trajectory> {
    solve_with_bc(u0, sig, source, cfg, BcConfig::neumann(sig.active()))
}

/// Like [`solve_linear_ibvp`] but keeps only the state at `t = T`.
pub fn linear_terminal(
    u0: &ScalarField,
    sig: &BoundarySignals,
    source: Option<&StepSource>,
    cfg: &RunConfig,
) -> Result<ScalarField> {
    check_inputs(cfg, u0, sig)?;
    let u = march(cfg, &BcConfig::neumann(sig.active()), u0.values(), sig, source, |_, _| {})?;
    ScalarField::new(cfg.sgrid, u)
}

pub fn solve_with_bc(
    u0: &ScalarField,
    sig: &BoundarySignals,
    source: Option<&StepSource>,
    cfg: &RunConfig,
    bc: BcConfig,
) -> Result<Trajectory> {
    check_inputs(cfg, u0, sig)?;
    let mut values = Vec::with_capacity(cfg.sgrid.len() * cfg.tgrid.len());
    march(cfg, &bc, u0.values(), sig, source, |_, u| values.extend_from_slice(u))?;
    Trajectory::new(cfg.sgrid, cfg.tgrid, bc, cfg.params, sig.clone(), values)
}

/// Backward adjoint problem with terminal state `psi_t`, solved forward in the
/// reflected variables `x' = L - x`, `t' = T - t` and returned on the original grid.
pub fn solve_adjoint(psi_t: &ScalarField, cfg: &RunConfig) -> Result<Trajectory> {
    check_same(psi_t.grid(), &cfg.sgrid)?;
    let w = cfg.sgrid.len();
    let m = cfg.tgrid.steps();
    let phi0: Vec<f64> = psi_t.values().iter().rev().copied().collect();
    let sig = BoundarySignals::zeros(cfg.tgrid);
    let mut values = vec![0.0; w * (m + 1)];
    march(cfg, &BcConfig::adjoint(), &phi0, &sig, None, |n, phi| {
        let row = &mut values[(m - n) * w..(m - n + 1) * w];
        for (dst, src) in row.iter_mut().zip(phi.iter().rev()) {
            *dst = *src;
        }
    })?;
    let mut traj = Trajectory::new(cfg.sgrid, cfg.tgrid, BcConfig::adjoint(), cfg.params, sig, values)?;
    traj.reflected = true;
    Ok(traj)
}

/// Forward adjoint system in its own variables, started from `phi0`.
pub fn solve_adjoint_forward(phi0: &ScalarField, cfg: &RunConfig) -> Result<Trajectory> {
    solve_with_bc(phi0, &BoundarySignals::zeros(cfg.tgrid), None, cfg, BcConfig::adjoint())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceKind {
    PsiXAtL,
    PsiAt0,
    PsiAtL,
}

pub fn observation_trace(traj: &Trajectory, which: TraceKind) -> TimeSignal {
    let dx = traj.sgrid.dx();
    let n = traj.sgrid.cells();
    let values = (0..traj.tgrid.len())
        .map(|k| {
            let u = traj.level(k);
            match which {
                TraceKind::PsiXAtL => d1_right(u, dx),
                TraceKind::PsiAt0 => u[0],
                TraceKind::PsiAtL => u[n],
            }
        })
        .collect();
    TimeSignal::new(traj.tgrid, values).expect("one sample per level")
}

/// Control signal dual to boundary slot `k` under the pairing
/// `<u(T), psi_T> - <u0, psi(0)> = int h1 psi(0) + h2 psi_x(L) - h3 psi(L) dt`.
pub fn dual_control(traj: &Trajectory, k: usize) -> TimeSignal {
    match k {
        1 => observation_trace(traj, TraceKind::PsiAt0),
        2 => observation_trace(traj, TraceKind::PsiXAtL),
        3 => observation_trace(traj, TraceKind::PsiAtL).scaled(-1.0),
        _ => panic!("slot index {k} outside 1..=3"),
    }
}

/// Residual of the duality pairing between the forward and adjoint solutions.
pub fn duality_residual(
    u0: &ScalarField,
    sig: &BoundarySignals,
    psi_t: &ScalarField,
    cfg: &RunConfig,
) -> Result<f64> {
    let ut = linear_terminal(u0, sig, None, cfg)?;
    let psi = solve_adjoint(psi_t, cfg)?;
    let lhs = l2_inner(&ut, psi_t)? - l2_inner(u0, &psi.field(0))?;
    let mut rhs = 0.0;
    for k in 1..=3 {
        if sig.active()[k - 1] {
            rhs += crate::norms::time_inner(sig.slot(k), &dual_control(&psi, k))?;
        }
    }
    Ok((lhs - rhs).abs())
}

/// Both sides of the multiplier identity obtained by testing the forward
/// adjoint system with `(T - t) phi`.
pub fn multiplier_identity_sides(phi0: &ScalarField, cfg: &RunConfig) -> Result<(f64, f64)> {
    check_same(phi0.grid(), &cfg.sgrid)?;
    let a = cfg.params.advection();
    let big_t = cfg.tgrid.horizon();
    let traj = solve_adjoint_forward(phi0, cfg)?;
    let lhs = 0.5 * big_t * l2_norm(phi0).powi(2);
    let wx = cfg.sgrid.trapezoid_weights();
    let wt = cfg.tgrid.trapezoid_weights();
    let dx = cfg.sgrid.dx();
    let n = cfg.sgrid.cells();
    let mut rhs = 0.0;
    for (k, w) in wt.iter().enumerate() {
        let u = traj.level(k);
        let t = cfg.tgrid.time(k);
        let mass = weighted_dot(&wx, u, u);
        let ux0 = d1_left(u, dx);
        let bracket = -a * u[n] * u[n] + a * u[0] * u[0] + ux0 * ux0;
        rhs += w * (0.5 * mass + 0.5 * (big_t - t) * bracket);
    }
    Ok((lhs, rhs))
}

pub fn multiplier_identity_residual(phi0: &ScalarField, cfg: &RunConfig) -> Result<f64> {
    let (l, r) = multiplier_identity_sides(phi0, cfg)?;
    Ok((l - r).abs())
}

/// Solves the Neumann problem, reads off `u(0)`, `u_x(L)`, `u_xx(L)`, re-solves
/// the Dirichlet-type problem with those traces, and returns the largest L2
/// difference between the two trajectories over time.
pub fn bc_transfer_check(u0: &ScalarField, sig: &BoundarySignals, cfg: &RunConfig) -> Result<f64> {
    let neu = solve_linear_ibvp(u0, sig, None, cfg)?;
    let dx = cfg.sgrid.dx();
    let levels = 0..cfg.tgrid.len();
    let g1: Vec<f64> = levels.clone().map(|k| neu.level(k)[0]).collect();
    let g2: Vec<f64> = levels.clone().map(|k| d1_right(neu.level(k), dx)).collect();
    let g3: Vec<f64> = levels.map(|k| d2_right(neu.level(k), dx)).collect();
    let dsig = BoundarySignals::zeros(cfg.tgrid)
        .with_slot(1, TimeSignal::new(cfg.tgrid, g1)?)
        .with_slot(2, TimeSignal::new(cfg.tgrid, g2)?)
        .with_slot(3, TimeSignal::new(cfg.tgrid, g3)?);
    let dir = solve_with_bc(u0, &dsig, None, cfg, BcConfig::dirichlet())?;
    let w = cfg.sgrid.trapezoid_weights();
    let mut worst = 0.0f64;
    for k in 0..cfg.tgrid.len() {
        let d: Vec<f64> = neu.level(k).iter().zip(dir.level(k)).map(|(a, b)| a - b).collect();
        worst = worst.max(weighted_dot(&w, &d, &d).sqrt());
    }
    Ok(worst)
}

/// Conservative nonlinearity `-(u^2/2)_x`, centered inside and one-sided at the ends.
pub fn nonlinear_term(u: &[f64], dx: f64, out: &mut [f64]) {
    let n = u.len() - 1;
    let q = |i: usize| 0.5 * u[i] * u[i];
    out[0] = -(-3.0 * q(0) + 4.0 * q(1) - q(2)) / (2.0 * dx);
    for i in 1..n {
        out[i] = -(q(i + 1) - q(i - 1)) / (2.0 * dx);
    }
    out[n] = -(3.0 * q(n) - 4.0 * q(n - 1) + q(n - 2)) / (2.0 * dx);
}

/// Second-order Adams-Bashforth combination of the nonlinearity along a
/// trajectory: step `n` uses `3/2 f(u^n) - 1/2 f(u^{n-1})`, with `f(u^0)` on the first step.
pub fn explicit_terms(traj: &Trajectory) -> StepSource {
    let w = traj.sgrid.len();
    let m = traj.tgrid.steps();
    let dx = traj.sgrid.dx();
    let mut prev = vec![0.0; w];
    let mut cur = vec![0.0; w];
    nonlinear_term(traj.level(0), dx, &mut prev);
    let mut values = Vec::with_capacity(m * w);
    for n in 0..m {
        nonlinear_term(traj.level(n), dx, &mut cur);
        values.extend(cur.iter().zip(&prev).map(|(c, p)| 1.5 * c - 0.5 * p));
        std::mem::swap(&mut prev, &mut cur);
    }
    StepSource { width: w, values }
}

#[derive(Debug, Clone)]
pub struct NonlinearOutcome {
    pub trajectory: Trajectory,
    /// Number of steps that were redone with halved sub-steps.
    pub halvings: usize,
}

const MAX_HALVING_DEPTH: u32 = 4;

/// IMEX solve of the nonlinear problem: Crank-Nicolson for `D`, Adams-Bashforth 2
/// for the conservative nonlinearity.
pub fn solve_nonlinear_ibvp(u0: &ScalarField, sig: &BoundarySignals, cfg: &RunConfig) -> Result<NonlinearOutcome> {
    check_inputs(cfg, u0, sig)?;
    let data = l2_norm(u0) + sig.norm();
    if data > cfg.solver_gate {
        return Err(KdvError::SmallnessGate { norm: data, gate: cfg.solver_gate });
    }
    let bc = BcConfig::neumann(sig.active());
    let dt = cfg.tgrid.dt();
    let dx = cfg.sgrid.dx();
    let l = cfg.sgrid.length();
    let w = cfg.sgrid.len();
    let m = cfg.tgrid.steps();
    let mut steppers = vec![Stepper::new(&cfg.params, &cfg.sgrid, &bc, dt)?];

    let hmax = |k: usize| sig.slot(k).values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = (l.sqrt() * (l * hmax(2) + l * l * hmax(1).max(hmax(3)))).max(l2_norm(u0));

    let mut values = Vec::with_capacity(w * (m + 1));
    values.extend_from_slice(u0.values());
    let mut u = u0.values().to_vec();
    let mut f_prev = vec![0.0; w];
    let mut f_cur = vec![0.0; w];
    nonlinear_term(&u, dx, &mut f_prev);
    let mut src = vec![0.0; w];
    let mut next = vec![0.0; w];
    let mut halvings = 0;
    let wx = cfg.sgrid.trapezoid_weights();
    let norm = |v: &[f64]| weighted_dot(&wx, v, v).sqrt();
    for n in 0..m {
        nonlinear_term(&u, dx, &mut f_cur);
        for i in 0..w {
            src[i] = 1.5 * f_cur[i] - 0.5 * f_prev[i];
        }
        let (h0, h1) = (sig.at(n), sig.at(n + 1));
        steppers[0].step(&u, h0, h1, Some(&src), &mut next);
        let before = norm(&u);
        if before > 1e-12 * scale.max(f64::MIN_POSITIVE) && norm(&next) > 2.0 * before {
            halvings += 1;
            next = substep(cfg, &bc, &mut steppers, &u, h0, h1, 1)?;
        }
        let now = norm(&next);
        if !now.is_finite() || (scale > 0.0 && now > 10.0 * scale) {
            return Err(KdvError::BlowUp { t: cfg.tgrid.time(n + 1), growth: now / scale.max(f64::MIN_POSITIVE) });
        }
        std::mem::swap(&mut f_prev, &mut f_cur);
        std::mem::swap(&mut u, &mut next);
        values.extend_from_slice(&u);
    }
    let trajectory = Trajectory::new(cfg.sgrid, cfg.tgrid, bc, KdvParams { nonlinear: true, ..cfg.params }, sig.clone(), values)?;
    Ok(NonlinearOutcome { trajectory, halvings })
}

// Two half steps with a first-order explicit nonlinearity, recursing while the norm still doubles.
fn substep(
    cfg: &RunConfig,
    bc: &BcConfig,
    steppers: &mut Vec<Stepper>,
    u: &[f64],
    h0: [f64; 3],
    h1: [f64; 3],
    depth: u32,
) -> Result<Vec<f64>> {
    let dt = cfg.tgrid.dt() / 2f64.powi(depth as i32);
    while steppers.len() <= depth as usize {
        let k = steppers.len() as i32;
        steppers.push(Stepper::new(&cfg.params, &cfg.sgrid, bc, cfg.tgrid.dt() / 2f64.powi(k))?);
    }
    let hm = [0.5 * (h0[0] + h1[0]), 0.5 * (h0[1] + h1[1]), 0.5 * (h0[2] + h1[2])];
    let dx = cfg.sgrid.dx();
    let wx = cfg.sgrid.trapezoid_weights();
    let norm = |v: &[f64]| weighted_dot(&wx, v, v).sqrt();
    let mut cur = u.to_vec();
    for (a, b) in [(h0, hm), (hm, h1)] {
        let mut f = vec![0.0; cur.len()];
        nonlinear_term(&cur, dx, &mut f);
        let mut out = vec![0.0; cur.len()];
        steppers[depth as usize].step(&cur, a, b, Some(&f), &mut out);
        if norm(&out) > 2.0 * norm(&cur) && depth < MAX_HALVING_DEPTH {
            out = substep(cfg, bc, steppers, &cur, a, b, depth + 1)?;
        }
        cur = out;
    }
    debug_assert!(dt > 0.0);
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg(beta: f64, l: f64, n: usize, m: usize) -> RunConfig {
        RunConfig::new(beta, l, n, 1.0, m).unwrap()
    }

    #[test]
    fn constants_are_annihilated() {
        for kind in [BcKind::NeumannForward, BcKind::AdjointForward] {
            let beta = if kind == BcKind::AdjointForward { -1.0 } else { 0.7 };
            let g = SpatialGrid::new(2.0, 32).unwrap();
            let bc = BcConfig { kind, active: [false; 3] };
            let op = assemble_operator(&KdvParams::linear(beta), &g, &bc).unwrap();
            let one = vec![1.0; 33];
            let mut out = vec![0.0; 33];
            op.apply(&one, [0.0; 3], &mut out);
            assert!(out.iter().all(|v| v.abs() < 1e-9), "{kind:?}: {out:?}");
        }
    }

    #[test]
    fn operator_consistent_on_sine() {
        let g = SpatialGrid::new(PI, 128).unwrap();
        let op = assemble_operator(&KdvParams::linear(0.0), &g, &BcConfig::neumann([true; 3])).unwrap();
        let u: Vec<f64> = g.nodes().iter().map(|x| x.sin()).collect();
        let mut out = vec![0.0; 129];
        // sin: u_xx(0) = 0, u_x(pi) = -1, u_xx(pi) = 0
        op.apply(&u, [0.0, -1.0, 0.0], &mut out);
        let err = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 20.0 * g.dx() * g.dx(), "{err}");
    }

    #[test]
    fn bandwidth_is_structural() {
        let g = SpatialGrid::new(1.0, 16).unwrap();
        for bc in [BcConfig::neumann([true; 3]), BcConfig::adjoint(), BcConfig::dirichlet()] {
            let op = assemble_operator(&KdvParams::linear(0.0), &g, &bc).unwrap();
            assert!(op.matrix.lower() + op.matrix.upper() + 1 <= 7);
        }
    }

    #[test]
    fn adjoint_with_data_is_degenerate() {
        let g = SpatialGrid::new(1.0, 16).unwrap();
        let bc = BcConfig { kind: BcKind::AdjointForward, active: [true, false, false] };
        assert!(matches!(assemble_operator(&KdvParams::linear(0.0), &g, &bc), Err(KdvError::DegenerateBc(_))));
    }

    #[test]
    fn constant_state_is_steady() {
        for beta in [0.0, -1.0, 2.5] {
            let c = cfg(beta, 2.0, 32, 50);
            let u0 = ScalarField::constant(c.sgrid, 0.3);
            let tr = solve_linear_ibvp(&u0, &BoundarySignals::zeros(c.tgrid), None, &c).unwrap();
            assert!(tr.values().iter().all(|v| (v - 0.3).abs() < 1e-13));
        }
    }

    #[test]
    fn adjoint_cos_mode_is_steady() {
        let c = cfg(0.0, PI, 64, 200);
        let psi = solve_adjoint(&ScalarField::from_fn(c.sgrid, f64::cos), &c).unwrap();
        let target = ScalarField::from_fn(c.sgrid, f64::cos);
        for n in 0..=200 {
            let dev = psi.level(n).iter().zip(target.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(dev < 1e-3, "level {n}: {dev}");
        }
    }

    #[test]
    fn adjoint_reflection_puts_terminal_last() {
        let c = cfg(0.3, 1.5, 16, 20);
        let psi_t = ScalarField::from_fn(c.sgrid, |x| x * x);
        let tr = solve_adjoint(&psi_t, &c).unwrap();
        assert_eq!(tr.level(20), psi_t.values());
    }

    #[test]
    fn nonlinear_gate() {
        let c = cfg(0.0, 2.0, 16, 20);
        let big = ScalarField::constant(c.sgrid, 5.0);
        let r = solve_nonlinear_ibvp(&big, &BoundarySignals::zeros(c.tgrid), &c);
        assert!(matches!(r, Err(KdvError::SmallnessGate { .. })));
    }

    #[test]
    fn explicit_terms_match_solver() {
        let c = cfg(0.0, 2.0, 32, 40);
        let u0 = ScalarField::from_fn(c.sgrid, |x| 0.2 * (-10.0 * (x - 1.0) * (x - 1.0)).exp());
        let out = solve_nonlinear_ibvp(&u0, &BoundarySignals::zeros(c.tgrid), &c).unwrap();
        let src = explicit_terms(&out.trajectory);
        let lin = solve_linear_ibvp(&u0, &BoundarySignals::zeros(c.tgrid), Some(&src), &c).unwrap();
        let d = lin.values().iter().zip(out.trajectory.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d < 1e-13, "{d}");
    }
}
