//! Laplace-transform representation of the pure dispersive problem
//! `w_t + w_xxx = 0` on `(0, L)` with zero initial data and one Neumann input.
//!
//! For `s = i rho^3` the transformed solution is `sum_j c_j exp(lambda_j x)`
//! with `lambda_j^3 = -s`; the `c_j` solve the 3x3 boundary system `A c = h`.

use nalgebra::Matrix3;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::config::KdvParams;
use crate::error::{KdvError, Result};
use crate::grid::{SpatialGrid, TimeGrid, TimeSignal};
use crate::pde::{BcConfig, BoundarySignals, Trajectory};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootTriple {
    pub rho: f64,
    pub lambda: [Complex64; 3],
}

pub fn characteristic_roots(rho: f64) -> Result<RootTriple> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(KdvError::InvalidArgument(format!("rho must be nonnegative, got {rho}")));
    }
    let i = Complex64::i();
    let l1 = i * rho;
    let l2 = -i * rho * Complex64::new(1.0, SQRT3) / 2.0;
    let l3 = -i * rho * Complex64::new(1.0, -SQRT3) / 2.0;
    Ok(RootTriple { rho, lambda: [l1, l2, l3] })
}

/// `A` with column `j` divided by `exp(scale[j])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledKernel {
    pub matrix: Matrix3<Complex64>,
    pub scale: [f64; 3],
}

pub fn kernel_matrix(roots: &RootTriple, l: f64) -> ScaledKernel {
    let mut matrix = Matrix3::zeros();
    let mut scale = [0.0; 3];
    for (j, lam) in roots.lambda.iter().enumerate() {
        let s = (lam.re * l).max(0.0);
        scale[j] = s;
        let e = (lam * l - s).exp();
        let d = (-s).exp();
        matrix[(0, j)] = lam * lam * d;
        matrix[(1, j)] = lam * e;
        matrix[(2, j)] = lam * lam * e;
    }
    ScaledKernel { matrix, scale }
}

/// Cramer ratios `Delta_{j,m} / Delta`, i.e. the entries of `A^{-1}`.
///
/// `scaled[j][m] = exp(scale[j]) * Delta_{j,m} / Delta`; the unscaled ratio may
/// underflow and is best handled through [`KernelRatios::log_abs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelRatios {
    pub rho: f64,
    pub l: f64,
    pub scaled: [[Complex64; 3]; 3],
    pub scale: [f64; 3],
    /// `|det|` relative to its generic size `rho^5 min(rho L, 1)`.
    pub det_ratio: f64,
}

impl KernelRatios {
    /// Ratio for root `j` and input `m`, both in `1..=3`.
    pub fn ratio(&self, j: usize, m: usize) -> Complex64 {
        self.scaled[j - 1][m - 1] * (-self.scale[j - 1]).exp()
    }

    pub fn log_abs(&self, j: usize, m: usize) -> f64 {
        self.scaled[j - 1][m - 1].norm().ln() - self.scale[j - 1]
    }
}

pub fn kernel_ratios(rho: f64, l: f64) -> Result<KernelRatios> {
    kernel_ratios_with_floor(rho, l, 1e-10)
}

pub fn kernel_ratios_with_floor(rho: f64, l: f64, floor: f64) -> Result<KernelRatios> {
    if !(rho > 0.0) {
        return Err(KdvError::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    if !(l > 0.0) {
        return Err(KdvError::InvalidArgument(format!("L must be positive, got {l}")));
    }
    signed_ratios(rho, l, floor)
}

// same roots formula for negative rho: the conjugate branch s = i rho^3, rho < 0
fn signed_roots(rho: f64) -> RootTriple {
    let i = Complex64::i();
    RootTriple {
        rho,
        lambda: [i * rho, -i * rho * Complex64::new(1.0, SQRT3) / 2.0, -i * rho * Complex64::new(1.0, -SQRT3) / 2.0],
    }
}

fn signed_ratios(rho: f64, l: f64, floor: f64) -> Result<KernelRatios> {
    let k = kernel_matrix(&signed_roots(rho), l);
    let det = k.matrix.determinant().norm();
    let r = rho.abs();
    let det_ratio = det / (r.powi(5) * (r * l).min(1.0));
    if !(det_ratio >= floor) {
        return Err(KdvError::SingularKernel { rho, det });
    }
    let inv = k.matrix.try_inverse().ok_or(KdvError::SingularKernel { rho, det })?;
    let mut scaled = [[Complex64::default(); 3]; 3];
    for (j, row) in scaled.iter_mut().enumerate() {
        for (m, v) in row.iter_mut().enumerate() {
            *v = inv[(j, m)];
        }
    }
    Ok(KernelRatios { rho, l, scaled, scale: k.scale, det_ratio })
}

/// Transform of the piecewise-linear interpolant of the samples,
/// `int_0^T exp(-i omega t) I_h(t) dt`, evaluated exactly.
///
/// At `omega = 0` this is the trapezoid rule. Interior hats contribute
/// `dt sinc^2(omega dt / 2) exp(-i omega t_n)`, so the sum is a trigonometric
/// polynomial, tabulated by a zero-padded FFT and shifted to arbitrary
/// frequencies by a Taylor series. The plain trapezoid sum would be periodic in
/// `omega` and never decay.
struct DiscreteTransform {
    dt: f64,
    horizon: f64,
    size: usize,
    first: f64,
    last: f64,
    // tables[p][k] = sum_n c_n n^p exp(-2 pi i n k / size) over interior nodes
    tables: Vec<Vec<Complex64>>,
}

const TAYLOR_TERMS: usize = 14;

// int_0^1 (1 - u) exp(-i theta u) du
fn end_hat(theta: f64) -> Complex64 {
    let it = Complex64::new(0.0, theta);
    if theta.abs() < 1e-2 {
        let mut term = Complex64::from(1.0);
        let mut acc = Complex64::default();
        for k in 0..8 {
            if k > 0 {
                term = term * (-it) / k as f64;
            }
            acc += term / ((k + 1) * (k + 2)) as f64;
        }
        acc
    } else {
        1.0 / it - (1.0 - (-it).exp()) / (it * it)
    }
}

fn sinc2(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 3.0
    } else {
        (x.sin() / x).powi(2)
    }
}

impl DiscreteTransform {
    fn new(h: &TimeSignal) -> Self {
        let m = h.grid().steps();
        let dt = h.grid().dt();
        let size = (16 * (m + 1)).next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(size);
        let mut tables = Vec::with_capacity(TAYLOR_TERMS);
        for p in 0..TAYLOR_TERMS {
            let mut buf = vec![Complex64::default(); size];
            for n in 1..m {
                buf[n] = Complex64::from(h.values()[n] * (n as f64).powi(p as i32));
            }
            fft.process(&mut buf);
            tables.push(buf);
        }
        Self { dt, horizon: h.grid().horizon(), size, first: h.values()[0], last: h.values()[m], tables }
    }

    fn eval(&self, omega: f64) -> Complex64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        let theta = omega * self.dt;
        let pos = theta.rem_euclid(two_pi) / two_pi * self.size as f64;
        let k = pos.round();
        let delta = (pos - k) * two_pi / self.size as f64;
        let k = (k as usize) % self.size;
        let z = Complex64::new(0.0, -delta);
        let mut term = Complex64::from(1.0);
        let mut acc = Complex64::default();
        for (p, t) in self.tables.iter().enumerate() {
            if p > 0 {
                term = term * z / p as f64;
            }
            acc += term * t[k];
        }
        let mut out = acc * self.dt * sinc2(0.5 * theta);
        if self.first != 0.0 {
            out += self.first * self.dt * end_hat(theta);
        }
        if self.last != 0.0 {
            out += self.last * self.dt * Complex64::from_polar(1.0, -omega * self.horizon) * end_hat(-theta);
        }
        out
    }
}

/// Composite Gauss-Legendre panels on `[0, rho_max]` with width at most
/// `pi / (6 rho^2 T)`, capped at `0.25`.
pub fn quadrature_panels(rho_max: f64, horizon: f64) -> Vec<(f64, f64)> {
    let mut panels = Vec::new();
    let mut a = 0.0;
    while a < rho_max {
        let w0 = (std::f64::consts::PI / (6.0 * a * a * horizon)).min(0.25);
        let b = a + w0;
        let w = (std::f64::consts::PI / (6.0 * b * b * horizon)).min(w0);
        let b = (a + w).min(rho_max);
        panels.push((a, b));
        a = b;
    }
    panels
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
        x[i] = z;
    }
    (x, w)
}

#[derive(Debug, Clone)]
pub struct KernelEvaluation {
    pub trajectory: Trajectory,
    pub panels: usize,
    pub nodes: usize,
    /// Quadrature nodes dropped because the boundary determinant nearly vanished.
    pub skipped: Vec<f64>,
    /// `max |Im w| / max |Re w|` when both branches were integrated.
    pub imag_defect: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelEvalHeader {
    pub m: usize,
    pub rho_max: f64,
    pub quad_points: usize,
    pub panels: usize,
    pub nodes: usize,
    pub skipped: Vec<f64>,
    pub imag_defect: Option<f64>,
}

impl KernelEvaluation {
    pub fn header(&self, m: usize, rho_max: f64, quad_points: usize) -> KernelEvalHeader {
        KernelEvalHeader {
            m,
            rho_max,
            quad_points,
            panels: self.panels,
            nodes: self.nodes,
            skipped: self.skipped.clone(),
            imag_defect: self.imag_defect,
        }
    }
}

const PANELS_PER_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    pub rho_max: f64,
    /// Gauss-Legendre order per panel.
    pub quad_points: usize,
    /// Relative determinant below which a node is skipped.
    pub floor: f64,
    /// Also integrate the conjugate branch `rho < 0` independently and report
    /// the imaginary part of the sum.
    pub check_realness: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { rho_max: 60.0, quad_points: 16, floor: 1e-10, check_realness: false }
    }
}

/// Semi-analytic solution of `w_t + w_xxx = 0`, `w(x, 0) = 0`, with input `h`
/// in boundary slot `m` and the other two slots homogeneous.
///
/// `h` carries the fine time grid used for its transform; the solution is
/// reported on `grid_out`, which must share the horizon. `quad_points` is the
/// Gauss-Legendre order per panel. For `m = 1, 3` the transform has a simple
/// pole at `s = 0` (mass flux through the boundary); it lies on the contour and
/// contributes half its residue, `+- int h / (2 L)`.
pub fn evaluate_boundary_kernel(
    m: usize,
    h: &TimeSignal,
    sgrid: &SpatialGrid,
    grid_out: &TimeGrid,
    opts: &KernelOptions,
) -> Result<KernelEvaluation> {
    let KernelOptions { rho_max, quad_points, floor, check_realness } = *opts;
    if !(1..=3).contains(&m) {
        return Err(KdvError::InvalidArgument(format!("control index must be 1..=3, got {m}")));
    }
    if !(rho_max > 0.0) {
        return Err(KdvError::InvalidArgument(format!("rho_max must be positive, got {rho_max}")));
    }
    if quad_points < 16 {
        return Err(KdvError::InvalidArgument(format!("need at least 16 quadrature points, got {quad_points}")));
    }
    let horizon = h.grid().horizon();
    if (grid_out.horizon() - horizon).abs() > 1e-12 * horizon {
        return Err(KdvError::GridMismatch("output grid and signal grid differ in horizon".into()));
    }
    let l = sgrid.length();
    let nx = sgrid.len();
    let nt = grid_out.len();
    let dx = sgrid.dx();
    let times = grid_out.times();
    let panels = quadrature_panels(rho_max, horizon);
    let (gx, gw) = gauss_legendre(quad_points);
    let transform = DiscreteTransform::new(h);
    let pref = 3.0 / (2.0 * std::f64::consts::PI);

    let chunks: Vec<&[(f64, f64)]> = panels.chunks(PANELS_PER_CHUNK).collect();
    let branches: &[f64] = if check_realness { &[1.0, -1.0] } else { &[1.0] };
    let work: Vec<(f64, &[(f64, f64)])> =
        branches.iter().flat_map(|&sg| chunks.iter().map(move |c| (sg, *c))).collect();
    let partials: Vec<(Vec<Complex64>, Vec<f64>)> = work
        .par_iter()
        .map(|&(sign, chunk)| {
            let mut acc = vec![Complex64::default(); nt * nx];
            let mut skipped = Vec::new();
            let mut profile = vec![Complex64::default(); nx];
            for &(a, b) in chunk.iter() {
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                for (xq, wq) in gx.iter().zip(&gw) {
                    let rho = sign * (mid + half * xq);
                    let ratios = match signed_ratios(rho, l, floor) {
                        Ok(r) => r,
                        Err(_) => {
                            skipped.push(rho);
                            continue;
                        }
                    };
                    let hh = transform.eval(rho * rho * rho);
                    let weight = pref * half * wq * rho * rho;
                    let roots = signed_roots(rho);
                    profile.iter_mut().for_each(|p| *p = Complex64::default());
                    for j in 0..3 {
                        let lam = roots.lambda[j];
                        let coef = ratios.scaled[j][m - 1] * hh * weight;
                        // growing root is swept from x = L leftwards, the others from x = 0
                        if lam.re > 0.0 {
                            let step = (-lam * dx).exp();
                            let mut e = (lam * l - ratios.scale[j]).exp();
                            for i in (0..nx).rev() {
                                profile[i] += coef * e;
                                e *= step;
                            }
                        } else {
                            let step = (lam * dx).exp();
                            let mut e = Complex64::from((-ratios.scale[j]).exp());
                            for p in profile.iter_mut() {
                                *p += coef * e;
                                e *= step;
                            }
                        }
                    }
                    for (k, &t) in times.iter().enumerate() {
                        let ph = Complex64::from_polar(1.0, rho * rho * rho * t);
                        let row = &mut acc[k * nx..(k + 1) * nx];
                        for (r, p) in row.iter_mut().zip(&profile) {
                            *r += ph * p;
                        }
                    }
                }
            }
            (acc, skipped)
        })
        .collect();

    let mut total = vec![Complex64::default(); nt * nx];
    let mut skipped = Vec::new();
    for (acc, sk) in partials {
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a;
        }
        skipped.extend(sk);
    }
    let residue = match m {
        1 => 0.5 * transform.eval(0.0).re / l,
        3 => -0.5 * transform.eval(0.0).re / l,
        _ => 0.0,
    };
    // without the explicit conjugate branch, w^+ + w^- = 2 Re w^+
    let factor = if check_realness { 1.0 } else { 2.0 };
    let values: Vec<f64> = total.iter().map(|z| factor * z.re + residue).collect();
    let imag_defect = if check_realness {
        let max_re = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let max_im = total.iter().fold(0.0f64, |a, z| a.max(z.im.abs()));
        Some(max_im / max_re.max(f64::MIN_POSITIVE))
    } else {
        None
    };
    let sig = BoundarySignals::zeros(*grid_out).with_slot(m, resample(h, grid_out));
    let mut bc = BcConfig::neumann([false; 3]);
    bc.active[m - 1] = true;
    let trajectory = Trajectory::new(*sgrid, *grid_out, bc, KdvParams::linear(-1.0), sig, values)?;
    Ok(KernelEvaluation { trajectory, panels: panels.len(), nodes: panels.len() * quad_points, skipped, imag_defect })
}

fn resample(h: &TimeSignal, grid: &TimeGrid) -> TimeSignal {
    let src = h.grid();
    TimeSignal::from_fn(*grid, |t| {
        let pos = (t / src.dt()).clamp(0.0, src.steps() as f64);
        let i = (pos.floor() as usize).min(src.steps() - 1);
        let f = pos - i as f64;
        (1.0 - f) * h.values()[i] + f * h.values()[i + 1]
    })
}
