//! Critical lengths and the boundary eigen-matrix rank test.
//!
//! A length `L` is critical when `lambda psi = -a psi' - psi'''` admits a
//! nonzero solution satisfying all four homogeneous boundary conditions
//! (`a psi + psi'' = 0` and `psi' = 0` at both ends). With `lambda = -i p` the
//! solutions are spanned by `exp(i xi x)` over the roots of
//! `Q(xi) = xi^3 - a xi + p`.

use nalgebra::{Matrix3, Matrix4x3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KdvError, Result};
use crate::grid::{ScalarField, SpatialGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum CriticalFamily {
    A { k: u32, l: u32 },
    B { k: u32 },
}

/// One eigen-configuration producing a critical length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalMode {
    #[serde(flatten)]
    pub family: CriticalFamily,
    /// Eigenparameter, `lambda = -i p`.
    pub p: f64,
    /// Real roots `xi_0 < xi_1 < xi_2` of `Q` (family A only).
    pub xi: Option<[f64; 3]>,
}

/// A critical length with every family tag that produces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalLength {
    pub value: f64,
    pub modes: Vec<CriticalMode>,
}

impl CriticalLength {
    pub fn has_family(&self, f: CriticalFamily) -> bool {
        self.modes.iter().any(|m| m.family == f)
    }
}

fn advection_for_set(beta: f64) -> Result<f64> {
    let a = 1.0 + beta;
    if a == 0.0 {
        return Err(KdvError::DegenerateAdvection { beta });
    }
    if a < 0.0 || !a.is_finite() {
        return Err(KdvError::NegativeAdvection { a });
    }
    Ok(a)
}

pub fn family_a(beta: f64, k: u32, l: u32) -> Result<(f64, CriticalMode)> {
    let a = advection_for_set(beta)?;
    let (kf, lf) = (k as f64, l as f64);
    let value = 2.0 * std::f64::consts::PI * ((kf * kf + kf * lf + lf * lf) / (3.0 * a)).sqrt();
    let q = 2.0 * std::f64::consts::PI / value;
    let xi0 = -(2.0 * kf + lf) * q / 3.0;
    let xi1 = xi0 + kf * q;
    let xi2 = xi1 + lf * q;
    let p = -xi0 * xi1 * xi2;
    Ok((value, CriticalMode { family: CriticalFamily::A { k, l }, p, xi: Some([xi0, xi1, xi2]) }))
}

pub fn family_b(beta: f64, k: u32) -> Result<(f64, CriticalMode)> {
    let a = advection_for_set(beta)?;
    let value = k as f64 * std::f64::consts::PI / a.sqrt();
    Ok((value, CriticalMode { family: CriticalFamily::B { k }, p: 0.0, xi: None }))
}

/// All critical lengths up to `lmax`, ascending, coincident values merged.
pub fn enumerate_critical_lengths(beta: f64, lmax: f64) -> Result<Vec<CriticalLength>> {
    let a = advection_for_set(beta)?;
    if !(lmax.is_finite() && lmax > 0.0) {
        return Err(KdvError::InvalidArgument(format!("lmax must be positive, got {lmax}")));
    }
    let cap = lmax * (1.0 + 1e-14);
    let mut raw = Vec::new();
    let kmax = (lmax * (3.0 * a).sqrt() / (2.0 * std::f64::consts::PI)).floor() as u32 + 1;
    for k in 1..=kmax {
        for l in k..=kmax {
            let (v, m) = family_a(beta, k, l)?;
            if v <= cap {
                raw.push((v, m));
            }
        }
    }
    let bmax = (lmax * a.sqrt() / std::f64::consts::PI).floor() as u32 + 1;
    for k in 1..=bmax {
        let (v, m) = family_b(beta, k)?;
        if v <= cap {
            raw.push((v, m));
        }
    }
    raw.sort_by(|x, y| x.0.total_cmp(&y.0));
    let tol = 1e-12 * lmax;
    let mut out: Vec<CriticalLength> = Vec::new();
    for (v, m) in raw {
        match out.last_mut() {
            Some(last) if (v - last.value).abs() <= tol => last.modes.push(m),
            _ => out.push(CriticalLength { value: v, modes: vec![m] }),
        }
    }
    Ok(out)
}

/// Roots of `xi^3 - a xi + p`, sorted by real then imaginary part.
pub fn cubic_roots(a: f64, p: f64) -> [Complex64; 3] {
    let companion = Matrix3::new(0.0, a, -p, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let ev = companion.complex_eigenvalues();
    let mut r = [ev[0], ev[1], ev[2]];
    for z in r.iter_mut() {
        for _ in 0..3 {
            let f = *z * *z * *z - *z * a + p;
            let df = *z * *z * 3.0 - a;
            if df.norm() > 1e-300 {
                *z -= f / df;
            }
        }
    }
    r.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    r
}

fn min_separation(r: &[Complex64; 3]) -> f64 {
    let s = 1f64.max(r.iter().map(|z| z.norm()).fold(0.0, f64::max));
    (r[0] - r[1]).norm().min((r[0] - r[2]).norm()).min((r[1] - r[2]).norm()) / s
}

fn column(xi: Complex64, a: f64, l: f64) -> [Complex64; 4] {
    let e = (Complex64::i() * xi * l).exp();
    let q = Complex64::from(a) - xi * xi;
    let d = Complex64::i() * xi;
    [q, q * e, d, d * e]
}

#[derive(Debug, Clone)]
pub struct BoundaryMatrix {
    pub matrix: Matrix4x3<Complex64>,
    pub roots: [Complex64; 3],
    /// Column `j` was divided by `col_scale[j] = max(1, |exp(i xi_j L)|)`.
    pub col_scale: [f64; 3],
}

/// The four boundary functionals applied to the exponential basis.
pub fn boundary_eigen_matrix(p: f64, l: f64, beta: f64) -> Result<BoundaryMatrix> {
    if !(l.is_finite() && l > 0.0) {
        return Err(KdvError::InvalidArgument(format!("L must be positive, got {l}")));
    }
    let a = 1.0 + beta;
    let roots = cubic_roots(a, p);
    if min_separation(&roots) < 1e-8 {
        return Err(KdvError::DegenerateRoots { p });
    }
    let mut matrix = Matrix4x3::zeros();
    let mut col_scale = [1.0; 3];
    for (j, xi) in roots.iter().enumerate() {
        let s = (Complex64::i() * xi * l).exp().norm().max(1.0);
        col_scale[j] = s;
        for (i, v) in column(*xi, a, l).iter().enumerate() {
            matrix[(i, j)] = v / s;
        }
    }
    Ok(BoundaryMatrix { matrix, roots, col_scale })
}

pub fn sigma_min(m: &Matrix4x3<Complex64>) -> f64 {
    let sv = m.singular_values();
    sv.iter().copied().fold(f64::INFINITY, f64::min)
}

// exp(i x1 L) - exp(i x0 L) over (x1 - x0), stable for close roots
fn exp_dd(x0: Complex64, x1: Complex64, l: f64) -> Complex64 {
    let h = x1 - x0;
    let z = Complex64::i() * h * l;
    let em1 = if z.norm() < 1e-3 {
        z * (1.0 + z / 2.0 * (1.0 + z / 3.0 * (1.0 + z / 4.0)))
    } else {
        z.exp() - 1.0
    };
    (Complex64::i() * x0 * l).exp() * em1 / h
}

fn first_dd(x0: Complex64, x1: Complex64, a: f64, l: f64) -> [Complex64; 4] {
    let i = Complex64::i();
    let e1 = (i * x1 * l).exp();
    let ed = exp_dd(x0, x1, l);
    let qd = -(x0 + x1);
    // (f g)[x0, x1] = f[x0] g[x0, x1] + f[x0, x1] g[x1]
    let q0 = Complex64::from(a) - x0 * x0;
    [qd, q0 * ed + qd * e1, i, i * x0 * ed + i * e1]
}

/// Boundary matrix in the Newton divided-difference basis
/// `E[x0], E[x0, x1], E[x0, x1, x2]` with columns scaled to unit norm.
/// It has the same rank as the exponential basis for simple roots and stays
/// well conditioned when two roots merge.
#[derive(Debug, Clone)]
struct NewtonMatrix {
    matrix: Matrix4x3<Complex64>,
    nodes: [Complex64; 3],
    order: [usize; 3],
    norms: [f64; 3],
}

fn newton_matrix(p: f64, l: f64, a: f64) -> NewtonMatrix {
    let r = cubic_roots(a, p);
    // x0, x2 = the most separated pair
    let pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];
    let (i0, i2, i1) = *pairs
        .iter()
        .max_by(|u, v| (r[u.0] - r[u.1]).norm().total_cmp(&(r[v.0] - r[v.1]).norm()))
        .expect("three pairs");
    let (x0, x1, x2) = (r[i0], r[i1], r[i2]);
    let c0 = column(x0, a, l);
    let c1 = first_dd(x0, x1, a, l);
    let c12 = first_dd(x1, x2, a, l);
    let mut c2 = [Complex64::default(); 4];
    for k in 0..4 {
        c2[k] = (c12[k] - c1[k]) / (x2 - x0);
    }
    let mut matrix = Matrix4x3::zeros();
    let mut norms = [0.0; 3];
    for (j, c) in [c0, c1, c2].iter().enumerate() {
        let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        norms[j] = n;
        for k in 0..4 {
            matrix[(k, j)] = c[k] / n;
        }
    }
    NewtonMatrix { matrix, nodes: [x0, x1, x2], order: [i0, i1, i2], norms }
}

impl NewtonMatrix {
    fn sigma(&self) -> f64 {
        sigma_min(&self.matrix)
    }

    // right singular vector converted to exponential-basis coefficients (sorted-root order)
    fn nullvector(&self) -> [Complex64; 3] {
        let svd = self.matrix.svd(false, true);
        let vt = svd.v_t.expect("requested");
        let j = (0..3).min_by(|&u, &v| svd.singular_values[u].total_cmp(&svd.singular_values[v])).expect("3");
        let d: Vec<Complex64> = (0..3).map(|k| vt[(j, k)].conj() / self.norms[k]).collect();
        let [x0, x1, x2] = self.nodes;
        let c0 = d[0] - d[1] / (x1 - x0) + d[2] / ((x1 - x0) * (x2 - x0));
        let c1 = d[1] / (x1 - x0) - d[2] * (1.0 / (x2 - x1) + 1.0 / (x1 - x0)) / (x2 - x0);
        let c2 = d[2] / ((x2 - x1) * (x2 - x0));
        let mut out = [Complex64::default(); 3];
        out[self.order[0]] = c0;
        out[self.order[1]] = c1;
        out[self.order[2]] = c2;
        let n = out.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        out.map(|z| z / n)
    }
}

// exponential basis with unit columns; badly conditioned only when roots merge
fn unit_exp_matrix(p: f64, l: f64, a: f64) -> (Matrix4x3<Complex64>, [f64; 3]) {
    let r = cubic_roots(a, p);
    let mut m = Matrix4x3::zeros();
    let mut norms = [0.0; 3];
    for (j, xi) in r.iter().enumerate() {
        let c = column(*xi, a, l);
        let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        norms[j] = n;
        for k in 0..4 {
            m[(k, j)] = c[k] / n;
        }
    }
    (m, norms)
}

fn shifted_p(p: f64, a: f64) -> f64 {
    if min_separation(&cubic_roots(a, p)) < 1e-8 {
        p + 1e-7
    } else {
        p
    }
}

/// Smallest singular value of the boundary matrix at `p`.
///
/// Both bases have the same rank, so a genuine null vector zeroes both; each
/// one loses conditioning in a different regime (the divided differences when
/// `|xi| L` is large, the exponentials when two roots merge). The larger value
/// is therefore the reliable one.
pub fn boundary_sigma(p: f64, l: f64, beta: f64) -> f64 {
    let a = 1.0 + beta;
    let p = shifted_p(p, a);
    let newton = newton_matrix(p, l, a).sigma();
    let (e, _) = unit_exp_matrix(p, l, a);
    newton.max(sigma_min(&e))
}

fn second_singular(m: &Matrix4x3<Complex64>) -> f64 {
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(f64::total_cmp);
    sv[1]
}

// null vector in sorted-root order from the basis with the wider spectral gap
fn null_coefficients(p: f64, l: f64, a: f64) -> [Complex64; 3] {
    let nm = newton_matrix(p, l, a);
    let (e, norms) = unit_exp_matrix(p, l, a);
    if second_singular(&nm.matrix) >= second_singular(&e) {
        return nm.nullvector();
    }
    let svd = e.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let j = (0..3).min_by(|&u, &v| svd.singular_values[u].total_cmp(&svd.singular_values[v])).expect("3");
    let c: Vec<Complex64> = (0..3).map(|k| vt[(j, k)].conj() / norms[k]).collect();
    let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    [c[0] / n, c[1] / n, c[2] / n]
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralTestResult {
    pub l: f64,
    pub beta: f64,
    pub p: f64,
    /// `lambda = -i p`, as `(re, im)`.
    pub lambda: (f64, f64),
    pub sigma_min: f64,
    pub roots: Vec<(f64, f64)>,
    /// Coefficients of `exp(i xi_j x)` in sorted-root order, present when `sigma_min < floor`.
    pub nullvector: Option<Vec<(f64, f64)>>,
    #[serde(skip)]
    pub mode: Option<ScalarField>,
}

#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    /// `sigma_min` below this defines a null vector and a mode.
    pub floor: f64,
    /// Final golden-section bracket width.
    pub width: f64,
    /// Cells of the grid carrying the reconstructed mode.
    pub mode_cells: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { floor: 1e-8, width: 1e-10, mode_cells: 256 }
    }
}

/// Minimizes `sigma_min` over a uniform `p` grid and refines the best bracket
/// by golden-section search.
pub fn spectral_scan(l: f64, beta: f64, p_range: (f64, f64), samples: usize) -> Result<SpectralTestResult> {
    spectral_scan_with(l, beta, p_range, samples, ScanOptions::default())
}

pub fn spectral_scan_with(
    l: f64,
    beta: f64,
    p_range: (f64, f64),
    samples: usize,
    opts: ScanOptions,
) -> Result<SpectralTestResult> {
    if samples < 100 {
        return Err(KdvError::InvalidArgument(format!("need at least 100 scan samples, got {samples}")));
    }
    let (lo, hi) = p_range;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(KdvError::InvalidArgument(format!("bad p range [{lo}, {hi}]")));
    }
    if !(l.is_finite() && l > 0.0) {
        return Err(KdvError::InvalidArgument(format!("L must be positive, got {l}")));
    }
    let step = (hi - lo) / (samples - 1) as f64;
    let grid: Vec<f64> = (0..samples).map(|i| lo + step * i as f64).collect();
    let sig: Vec<f64> = grid.par_iter().map(|&p| boundary_sigma(p, l, beta)).collect();
    // ties resolved toward lower p
    let best = (0..samples).fold(0, |b, i| if sig[i] < sig[b] { i } else { b });
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(samples - 1)];
    let f = |p: f64| boundary_sigma(p, l, beta);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > opts.width {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mut candidates = [(grid[best], sig[best]), (c, fc), (d, fd), (0.5 * (a + b), f(0.5 * (a + b)))];
    candidates.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)));
    let (p, sigma) = candidates[0];
    Ok(result_at(l, beta, p, sigma, opts))
}

fn result_at(l: f64, beta: f64, p: f64, sigma: f64, opts: ScanOptions) -> SpectralTestResult {
    let a = 1.0 + beta;
    let pp = shifted_p(p, a);
    let roots = cubic_roots(a, pp);
    let (nullvector, mode) = if sigma < opts.floor {
        let c = null_coefficients(pp, l, a);
        let grid = SpatialGrid::new(l, opts.mode_cells.max(8)).expect("positive length");
        (Some(c.iter().map(|z| (z.re, z.im)).collect()), Some(reconstruct_mode(&grid, &roots, &c)))
    } else {
        (None, None)
    };
    SpectralTestResult {
        l,
        beta,
        p,
        lambda: (0.0, -p),
        sigma_min: sigma,
        roots: roots.iter().map(|z| (z.re, z.im)).collect(),
        nullvector,
        mode,
    }
}

/// Real part of `sum_j c_j exp(i xi_j x)` after removing the best global phase,
/// scaled to unit max-norm with a positive value at the origin.
pub fn reconstruct_mode(grid: &SpatialGrid, roots: &[Complex64; 3], c: &[Complex64; 3]) -> ScalarField {
    let z: Vec<Complex64> = grid
        .nodes()
        .iter()
        .map(|&x| (0..3).map(|j| c[j] * (Complex64::i() * roots[j] * x).exp()).sum())
        .collect();
    let s: Complex64 = z.iter().map(|v| v * v).sum();
    let rot = Complex64::from_polar(1.0, -0.5 * s.arg());
    let mut v: Vec<f64> = z.iter().map(|w| (w * rot).re).collect();
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let lead = v.iter().copied().find(|x| x.abs() > 1e-6 * m).unwrap_or(1.0);
    let sgn = if lead < 0.0 { -1.0 } else { 1.0 };
    v.iter_mut().for_each(|x| *x *= sgn / m);
    ScalarField::new(*grid, v).expect("mode sampled on grid")
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalityVerdict {
    pub critical: bool,
    pub nearest: Option<CriticalLength>,
    pub distance: f64,
    /// Spectral scan minimum near the nearest eigenparameter.
    pub spectral_sigma: f64,
    /// False when the scan disagrees with the formula; the formula verdict stands.
    pub agrees: bool,
}

pub fn is_critical(l: f64, beta: f64, tol: f64) -> Result<CriticalityVerdict> {
    let set = enumerate_critical_lengths(beta, l + 1.0)?;
    let nearest = set.iter().min_by(|u, v| (u.value - l).abs().total_cmp(&(v.value - l).abs())).cloned();
    let distance = nearest.as_ref().map_or(f64::INFINITY, |c| (c.value - l).abs());
    let critical = distance < tol;
    let pmax = nearest
        .as_ref()
        .map(|c| c.modes.iter().fold(0.0f64, |m, md| m.max(md.p.abs())))
        .unwrap_or(0.0);
    let span = (2.0 * pmax).max(3.0);
    let scan = spectral_scan(l, beta, (-span, span), 600)?;
    let spectral_critical = scan.sigma_min < 1e-6;
    Ok(CriticalityVerdict {
        critical,
        nearest,
        distance,
        spectral_sigma: scan.sigma_min,
        agrees: spectral_critical == critical,
    })
}
