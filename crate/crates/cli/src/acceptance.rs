//! The acceptance suite: every criterion evaluated at its stated tolerance.

use std::f64::consts::PI;
use std::time::Instant;

use kdvlab::criticality::{boundary_sigma, enumerate_critical_lengths, family_a, spectral_scan, CriticalFamily};
use kdvlab::hum::{
    nonlinear_steer, pairing_drift, random_signal, sweep_lengths, synthesize_control, ControlConfig,
};
use kdvlab::laplace::{evaluate_boundary_kernel, kernel_ratios, KernelOptions};
use kdvlab::pde::{
    duality_residual, multiplier_identity_residual, multiplier_identity_sides, observation_trace, solve_adjoint,
    solve_linear_ibvp,
};
use kdvlab::{
    l2_norm, time_l2_norm, BoundarySignals, KdvError, RunConfig, ScalarField, TimeGrid, TimeSignal, TraceKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    AtMost(f64),
    AtLeast(f64),
    Between(f64, f64),
}

impl Threshold {
    fn holds(&self, v: f64) -> bool {
        match *self {
            Threshold::AtMost(t) => v <= t,
            Threshold::AtLeast(t) => v >= t,
            Threshold::Between(a, b) => v >= a && v <= b,
        }
    }
}

impl std::fmt::Display for Threshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Threshold::AtMost(t) => write!(f, "<= {t:e}"),
            Threshold::AtLeast(t) => write!(f, ">= {t:e}"),
            Threshold::Between(a, b) => write!(f, "in [{a}, {b}]"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub id: String,
    pub criterion: u32,
    pub description: String,
    pub measured: f64,
    pub threshold: Threshold,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} [{}] {}: measured {:e}, required {}{}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.description,
            self.measured,
            self.threshold,
            self.note.as_ref().map(|n| format!(" ({n})")).unwrap_or_default()
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub n: usize,
    pub m: usize,
    pub horizon: f64,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceReport {
    pub criteria: Vec<CheckResult>,
    pub environment: Environment,
    pub pass: bool,
}

impl AcceptanceReport {
    pub fn failed(&self) -> Vec<&CheckResult> {
        self.criteria.iter().filter(|c| !c.pass).collect()
    }
}

struct Sink<'a> {
    criterion: u32,
    out: Vec<CheckResult>,
    progress: &'a mut dyn FnMut(&CheckResult),
}

impl Sink<'_> {
    fn check(&mut self, id: &str, description: &str, measured: f64, threshold: Threshold) {
        self.push(id, description, measured, threshold, None);
    }

    fn push(&mut self, id: &str, description: &str, measured: f64, threshold: Threshold, note: Option<String>) {
        let r = CheckResult {
            id: format!("{}{}", self.criterion, id),
            criterion: self.criterion,
            description: description.to_string(),
            measured,
            pass: threshold.holds(measured),
            threshold,
            note,
        };
        (self.progress)(&r);
        self.out.push(r);
    }

    fn flag(&mut self, id: &str, description: &str, ok: bool) {
        self.check(id, description, if ok { 1.0 } else { 0.0 }, Threshold::AtLeast(1.0));
    }

    fn runtime(&mut self, start: Instant, budget_s: f64) {
        self.check(".runtime", "wall time in seconds", start.elapsed().as_secs_f64(), Threshold::AtMost(budget_s));
    }
}

type Outcome = Result<(), KdvError>;

pub const DESCRIPTIONS: [&str; 10] = [
    "critical-set enumeration",
    "spectral certification",
    "unobservable steady modes",
    "Gramian dip at the critical length",
    "multi-control flatness",
    "linear steering",
    "conserved pairing at criticality",
    "nonlinear fixed point",
    "identity residuals under refinement",
    "Laplace kernel cross-validation",
];

fn reference(beta: f64, l: f64) -> RunConfig {
    RunConfig::new(beta, l, 128, 1.0, 2000).expect("reference grid")
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c1(s: &mut Sink) -> Outcome {
    let start = Instant::now();
    let set = enumerate_critical_lengths(0.0, 10.0)?;
    let want = [PI, 2.0 * PI, 3.0 * PI, 2.0 * PI * (7.0f64 / 3.0).sqrt()];
    let mut got: Vec<f64> = set.iter().map(|c| c.value).collect();
    got.sort_by(f64::total_cmp);
    let mut sorted = want;
    sorted.sort_by(f64::total_cmp);
    let dev = if got.len() == 4 { max_dev(&got, &sorted) } else { f64::INFINITY };
    s.check(".set", "sorted critical lengths below 10 vs {pi, 2pi, 3pi, 2pi sqrt(7/3)}", dev, Threshold::AtMost(1e-9));
    let two_pi = set.iter().find(|c| (c.value - 2.0 * PI).abs() < 1e-9);
    let dual = two_pi.is_some_and(|c| {
        c.has_family(CriticalFamily::A { k: 1, l: 1 }) && c.has_family(CriticalFamily::B { k: 2 })
    });
    s.flag(".tags", "2pi tagged both A(1,1) and B(2)", dual);
    s.runtime(start, 1.0);
    Ok(())
}

fn c2(s: &mut Sink) -> Outcome {
    let start = Instant::now();
    s.check(".pi", "sigma_min at (L = pi, p = 0)", boundary_sigma(0.0, PI, 0.0), Threshold::AtMost(1e-8));
    s.check(".2pi", "sigma_min at (L = 2pi, p = 0)", boundary_sigma(0.0, 2.0 * PI, 0.0), Threshold::AtMost(1e-8));
    let (la, mode) = family_a(0.0, 1, 2)?;
    let scan = spectral_scan(la, 0.0, (mode.p - 0.05, mode.p + 0.05), 200)?;
    s.check(".A12", "refined sigma_min at L = 2pi sqrt(7/3)", scan.sigma_min, Threshold::AtMost(1e-8));
    s.check(".A12p", "|p* + 0.207828|", (scan.p + 0.207828).abs(), Threshold::AtMost(1e-4));
    let at_pi = spectral_scan(PI, 0.0, (-0.5, 0.5), 200)?;
    let err = match &at_pi.mode {
        Some(m) => {
            let cos = ScalarField::from_fn(*m.grid(), f64::cos);
            max_dev(m.values(), cos.values()).min(max_dev(&m.scaled(-1.0).into_values(), cos.values()))
        }
        None => f64::INFINITY,
    };
    s.check(".mode", "recovered mode at L = pi vs cos(x), max norm", err, Threshold::AtMost(1e-8));
    let two = spectral_scan(2.0, 0.0, (-3.0, 3.0), 600)?;
    s.check(".L2", "scan minimum at L = 2", two.sigma_min, Threshold::AtLeast(1e-3));
    s.runtime(start, 10.0);
    Ok(())
}

fn steady_check(s: &mut Sink, id: &str, what: &str, cfg: &RunConfig, psi_t: &ScalarField) -> Outcome {
    let psi = solve_adjoint(psi_t, cfg)?;
    let dev = (0..cfg.tgrid.len()).map(|n| max_dev(psi.level(n), psi_t.values())).fold(0.0, f64::max);
    let trace = time_l2_norm(&observation_trace(&psi, TraceKind::PsiXAtL));
    s.check(&format!("{id}.state"), &format!("{what}: max deviation of the adjoint state"), dev, Threshold::AtMost(1e-4));
    s.check(&format!("{id}.trace"), &format!("{what}: L2 norm of psi_x(L, .)"), trace, Threshold::AtMost(1e-4));
    Ok(())
}

fn c3(s: &mut Sink) -> Outcome {
    let start = Instant::now();
    let cfg = reference(0.0, PI);
    steady_check(s, ".cos", "cos(x) at beta = 0, L = pi", &cfg, &ScalarField::from_fn(cfg.sgrid, f64::cos))?;
    for (id, l) in [(".one1", 1.0), (".one2.5", 2.5)] {
        let cfg = reference(-1.0, l);
        steady_check(s, id, &format!("constant at beta = -1, L = {l}"), &cfg, &ScalarField::constant(cfg.sgrid, 1.0))?;
    }
    s.runtime(start, 30.0);
    Ok(())
}

fn c4(s: &mut Sink) -> Outcome {
    let start = Instant::now();
    let rows = sweep_lengths(0.0, &[2.8, PI, 3.5], &ControlConfig::h2(), &reference(0.0, 2.0))?;
    let mid = rows[1].lambda_min;
    let note = Some(format!("lambda_min {:e}, {:e}, {:e}", rows[0].lambda_min, mid, rows[2].lambda_min));
    s.push(".2.8", "lambda_min(pi) / lambda_min(2.8)", mid / rows[0].lambda_min, Threshold::AtMost(0.01), note.clone());
    s.push(".3.5", "lambda_min(pi) / lambda_min(3.5)", mid / rows[2].lambda_min, Threshold::AtMost(0.01), note);
    s.runtime(start, 600.0);
    Ok(())
}

fn c5(s: &mut Sink) -> Outcome {
    let start = Instant::now();
    let ctrl = ControlConfig::new([false, true, true])?;
    let rows = sweep_lengths(0.0, &[2.8, PI, 3.5, 2.0 * PI], &ctrl, &reference(0.0, 2.0))?;
    let mins: Vec<f64> = rows.iter().map(|r| r.lambda_min).collect();
    let lo = mins.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let listed: Vec<String> = mins.iter().map(|v| format!("{v:.3e}")).collect();
    let note = Some(format!("lambda_min over 2.8, pi, 3.5, 2pi: {}", listed.join(", ")));
    s.push(".ratio", "max/min of lambda_min with controls {h2, h3}", ratio, Threshold::AtMost(10.0), note);
    s.runtime(start, 900.0);
    Ok(())
}

fn c6(s: &mut Sink) -> Outcome {
    let start = Instant::now();
    let cfg = reference(0.0, 2.0);
    let target = ScalarField::from_fn(cfg.sgrid, |x| (-20.0 * (x - 1.0).powi(2)).exp());
    let sol = synthesize_control(&ScalarField::zeros(cfg.sgrid), &target, &cfg, &ControlConfig::h2())?;
    s.check(".gauss", "closed-loop relative error, 0 -> exp(-20 (x-1)^2) at L = 2", sol.rel_error, Threshold::AtMost(1e-2));
    let cfg = reference(0.0, PI);
    let cos = ScalarField::from_fn(cfg.sgrid, f64::cos);
    let raised = matches!(
        synthesize_control(&ScalarField::zeros(cfg.sgrid), &cos, &cfg, &ControlConfig::h2()),
        Err(KdvError::NearCriticalTarget { .. })
    );
    s.flag(".cos", "steering toward cos(x) at L = pi raises NearCriticalTarget", raised);
    s.runtime(start, 300.0);
    Ok(())
}

pub const PAIRING_SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

fn c7(s: &mut Sink) -> Outcome {
    let cfg = reference(0.0, PI);
    let cos = ScalarField::from_fn(cfg.sgrid, f64::cos);
    let mut worst = 0.0f64;
    for seed in PAIRING_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hc: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let uc: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = random_signal(&cfg.tgrid, &hc);
        let u0 = ScalarField::from_fn(cfg.sgrid, |x| {
            uc.iter().enumerate().map(|(k, c)| c * (k as f64 * x).cos()).sum()
        });
        let traj = solve_linear_ibvp(&u0, &BoundarySignals::h2(h.clone()), None, &cfg)?;
        let scale = l2_norm(&u0) + time_l2_norm(&h);
        worst = worst.max(pairing_drift(&traj, &cos)? / scale);
    }
    s.check(".drift", "max_t |<u(t), cos> - <u0, cos>| / (||u0|| + ||h2||), 5 seeds", worst, Threshold::AtMost(1e-3));
    Ok(())
}

fn c8(s: &mut Sink) -> Outcome {
    let cfg = reference(0.0, 2.0);
    let zero = ScalarField::zeros(cfg.sgrid);
    let gauss = ScalarField::from_fn(cfg.sgrid, |x| (-20.0 * (x - 1.0).powi(2)).exp());
    let big = nonlinear_steer(&zero, &gauss.scaled(0.01), &cfg)?;
    let small = nonlinear_steer(&zero, &gauss.scaled(0.001), &cfg)?;
    s.check(".iterations", "fixed-point iterations at amplitude 0.01", big.iterations as f64, Threshold::AtMost(12.0));
    let last = big.history.last().copied().unwrap_or(f64::INFINITY);
    s.check(".step", "final successive-control difference", last, Threshold::AtMost(1e-8));
    s.check(".rel", "final relative error", big.rel_error, Threshold::AtMost(1e-2));
    let ratio = big.first_correction / small.first_correction;
    s.check(".nu", "||nu0||(0.01) / ||nu0||(0.001)", ratio, Threshold::Between(50.0, 200.0));
    s.flag(".monotone", "iteration count non-increasing as the amplitude drops", small.iterations <= big.iterations);
    Ok(())
}

fn c9(s: &mut Sink) -> Outcome {
    let levels = [(64usize, 500usize), (128, 2000), (256, 8000)];
    let mut dual = Vec::new();
    let mut mult = Vec::new();
    for (n, m) in levels {
        let cfg = RunConfig::new(0.0, 2.0, n, 1.0, m)?;
        let g = ScalarField::from_fn(cfg.sgrid, |x| (-20.0 * (x - 1.0).powi(2)).exp());
        let h = TimeSignal::from_fn(cfg.tgrid, |t| (PI * t).sin().powi(2));
        dual.push(duality_residual(&g, &BoundarySignals::h2(h), &g, &cfg)?);
        mult.push(multiplier_identity_residual(&g, &cfg)?);
    }
    for (name, r) in [("duality", &dual), ("multiplier", &mult)] {
        for i in 0..2 {
            let desc = format!("{name} residual ratio (N, M) = {:?} -> {:?}", levels[i], levels[i + 1]);
            s.check(&format!(".{name}{}", i + 1), &desc, r[i] / r[i + 1], Threshold::AtLeast(1.5));
        }
    }
    let cfg = reference(0.0, PI);
    let (lhs, rhs) = multiplier_identity_sides(&ScalarField::from_fn(cfg.sgrid, f64::cos), &cfg)?;
    let exact = cfg.tgrid.horizon() * PI / 4.0;
    s.check(".lhs", "multiplier identity left side with cos at L = pi, vs T pi / 4", (lhs - exact).abs(), Threshold::AtMost(1e-3));
    s.check(".rhs", "multiplier identity right side with cos at L = pi, vs T pi / 4", (rhs - exact).abs(), Threshold::AtMost(1e-3));
    Ok(())
}

/// Decay of `Delta_{j,m} / Delta` claimed by the asymptotic table, indexed
/// `[m - 1][j - 1]`: power of `rho`, and whether `exp(-sqrt(3)/2 rho L)` is present.
pub const ASYMPTOTIC_TABLE: [[(f64, bool); 3]; 3] = [
    [(-2.0, true), (-2.0, true), (-2.0, true)],
    [(-1.0, false), (-1.0, false), (-1.0, false)],
    [(-2.0, false), (-2.0, true), (-2.0, false)],
];

/// Checks one table entry over `rho` in `[10, 100]` at `L = 1`. Entries with the
/// exponential are tested for boundedness of `|R| rho^{-p} exp(sqrt(3)/2 rho L)`
/// (max at most 10x its value at rho = 10); others by the least-squares slope
/// of `log |R|` against `log rho`. Returns the measured quantity and whether it holds.
pub fn asymptotic_entry(j: usize, m: usize) -> Result<(f64, bool), KdvError> {
    let l = 1.0;
    let (power, expo) = ASYMPTOTIC_TABLE[m - 1][j - 1];
    let rhos: Vec<f64> = (0..=60).map(|i| 10.0 * 10f64.powf(i as f64 / 60.0)).collect();
    let logs = rhos.iter().map(|&r| Ok(kernel_ratios(r, l)?.log_abs(j, m))).collect::<Result<Vec<f64>, KdvError>>()?;
    if expo {
        let comp: Vec<f64> = rhos
            .iter()
            .zip(&logs)
            .map(|(r, y)| y - power * r.ln() + 0.5 * 3f64.sqrt() * r * l)
            .collect();
        let growth = comp.iter().copied().fold(f64::NEG_INFINITY, f64::max) - comp[0];
        Ok((growth / std::f64::consts::LN_10, growth <= 10f64.ln()))
    } else {
        let x: Vec<f64> = rhos.iter().map(|r| r.ln()).collect();
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, logs.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(&logs).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = sxy / sxx;
        Ok((slope, (slope - power).abs() <= 0.1))
    }
}

fn c10(s: &mut Sink) -> Outcome {
    let cfg = RunConfig::new(-1.0, 1.0, 128, 1.0, 4000)?;
    let h = TimeSignal::from_fn(cfg.tgrid, |t| (PI * t).sin().powi(2));
    let fd = solve_linear_ibvp(&ScalarField::zeros(cfg.sgrid), &BoundarySignals::h2(h.clone()), None, &cfg)?;
    let out = TimeGrid::new(1.0, 20)?;
    let w = evaluate_boundary_kernel(2, &h, &cfg.sgrid, &out, &KernelOptions::default())?;
    let stride = cfg.tgrid.steps() / out.steps();
    let (mut err, mut size) = (0.0f64, 0.0f64);
    for n in 0..out.len() {
        err = err.max(max_dev(w.trajectory.level(n), fd.level(n * stride)));
        size = size.max(fd.level(n * stride).iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    s.check("a.fd", "max relative deviation, semi-analytic vs finite differences (h2 pulse)", err / size, Threshold::AtMost(0.05));
    let mut matched = 0.0;
    let mut misses = Vec::new();
    for m in 1..=3 {
        for j in 1..=3 {
            let (v, ok) = asymptotic_entry(j, m)?;
            if ok {
                matched += 1.0;
            } else {
                misses.push(format!("({j},{m}): {v:.2}"));
            }
        }
    }
    let note = (!misses.is_empty()).then(|| format!("mismatched entries (j,m): {}", misses.join(", ")));
    s.push("b.table", "asymptotic-ratio entries matching the table", matched, Threshold::AtLeast(9.0), note);
    Ok(())
}

fn runner(k: u32) -> fn(&mut Sink) -> Outcome {
    [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10][(k - 1) as usize]
}

/// Runs the listed criteria (1-based); `progress` sees each check as it completes.
pub fn run_criteria(ids: &[u32], progress: &mut dyn FnMut(&CheckResult)) -> AcceptanceReport {
    let start = Instant::now();
    let mut all = Vec::new();
    for &k in ids {
        let mut sink = Sink { criterion: k, out: Vec::new(), progress: &mut *progress };
        if let Err(e) = runner(k)(&mut sink) {
            let desc = DESCRIPTIONS[(k - 1) as usize];
            sink.push(".error", desc, f64::NAN, Threshold::AtMost(0.0), Some(e.to_string()));
        }
        all.extend(sink.out);
    }
    let pass = all.iter().all(|c| c.pass);
    AcceptanceReport {
        criteria: all,
        environment: Environment {
            n: 128,
            m: 2000,
            horizon: 1.0,
            seeds: PAIRING_SEEDS.to_vec(),
            threads: rayon::current_num_threads(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        pass,
    }
}

pub fn run_acceptance(progress: &mut dyn FnMut(&CheckResult)) -> AcceptanceReport {
    run_criteria(&(1..=10).collect::<Vec<_>>(), progress)
}
