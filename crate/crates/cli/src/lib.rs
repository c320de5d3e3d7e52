//! Front end for kdvlab: configuration, experiment dispatch and artifacts.

pub mod acceptance;
pub mod artifacts;
pub mod settings;
pub mod specs;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kdvlab::criticality::{enumerate_critical_lengths, spectral_scan};
use kdvlab::hum::{assemble_gramian, nonlinear_steer, sweep_lengths, synthesize_control, ControlSolution};
use kdvlab::laplace::{evaluate_boundary_kernel, KernelOptions};
use kdvlab::pde::{observation_trace, solve_adjoint, solve_linear_ibvp, solve_nonlinear_ibvp};
use kdvlab::{BoundarySignals, KdvError, RunConfig, TimeGrid, TraceKind, Trajectory};
use serde::Serialize;
use serde_json::json;

use artifacts::{emit_csv, write_json, Table};
use settings::{parse_length, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Domain(#[from] KdvError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("acceptance failed: {0} check(s) did not pass")]
    Acceptance(usize),
}

impl CliError {
    /// 1 for domain failures (including a failed acceptance run or I/O), 2 for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(e) if !e.is_domain() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kdvlab", version, about = "Boundary controllability experiments for the KdV equation on (0, L)")]
pub struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Directory receiving CSV and JSON artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

/// Grid and parameter flags; they win over the file and `--set`.
#[derive(Debug, Clone, Default, Args)]
pub struct GridArgs {
    /// Steady state beta (advection speed 1 + beta).
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    /// Interval length; accepts multiples of pi such as `pi` or `2*pi`.
    #[arg(long = "L", value_name = "L")]
    pub l: Option<String>,
    /// Spatial cells.
    #[arg(long = "N", value_name = "N")]
    pub n: Option<usize>,
    /// Time horizon.
    #[arg(long = "T", value_name = "T")]
    pub t: Option<f64>,
    /// Time steps.
    #[arg(long = "M", value_name = "M")]
    pub m: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the critical lengths up to LMAX as JSON.
    CriticalLengths {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long, default_value_t = 10.0)]
        lmax: f64,
    },
    /// Scan sigma_min of the boundary eigen-matrix over p; writes the result and the mode.
    SpectralCheck {
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long = "L", value_name = "L")]
        l: String,
        #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
        p_min: f64,
        #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
        p_max: f64,
        #[arg(long, default_value_t = 600)]
        samples: usize,
    },
    /// Forward Neumann solve; writes the trajectory as (t, x, u).
    Simulate {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "gauss", help = specs::FIELD_HELP)]
        u0: String,
        #[arg(long, default_value = "zero", help = specs::SIGNAL_HELP)]
        h1: String,
        #[arg(long, default_value = "zero", help = specs::SIGNAL_HELP)]
        h2: String,
        #[arg(long, default_value = "zero", help = specs::SIGNAL_HELP)]
        h3: String,
        /// Include the u u_x term.
        #[arg(long)]
        nonlinear: bool,
        /// Write every K-th time level.
        #[arg(long, default_value_t = 10)]
        every: usize,
    },
    /// Backward adjoint solve from a terminal state; writes the trajectory and its traces.
    Adjoint {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "cos", help = specs::FIELD_HELP)]
        psi_t: String,
        #[arg(long, default_value_t = 10)]
        every: usize,
    },
    /// Semi-analytic solution of w_t + w_xxx = 0 driven through one boundary slot.
    KernelEval {
        #[arg(long = "L", default_value = "1")]
        l: String,
        #[arg(long = "N", default_value_t = 128)]
        n: usize,
        #[arg(long = "T", default_value_t = 1.0)]
        t: f64,
        /// Steps of the fine grid carrying h.
        #[arg(long = "M", default_value_t = 4000)]
        m: usize,
        /// Boundary slot 1, 2 or 3.
        #[arg(long, default_value_t = 2)]
        slot: usize,
        #[arg(long, default_value = "pulse", help = specs::SIGNAL_HELP)]
        h: String,
        #[arg(long, default_value_t = 60.0)]
        rho_max: f64,
        /// Gauss-Legendre order per panel.
        #[arg(long, default_value_t = 16)]
        quad_points: usize,
        /// Output time levels.
        #[arg(long, default_value_t = 20)]
        out_steps: usize,
        /// Also run the finite-difference solver and report the deviation.
        #[arg(long)]
        compare_fd: bool,
        /// Integrate the conjugate branch independently and report the imaginary defect.
        #[arg(long)]
        realness: bool,
    },
    /// Assemble the Gramian; writes its spectrum.
    Gramian {
        #[command(flatten)]
        grid: GridArgs,
        /// Control slots, e.g. `h2` or `h2,h3`.
        #[arg(long, default_value = "h2")]
        ctrl: String,
    },
    /// Linear HUM steering from U0 to TARGET.
    Control {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "h2")]
        ctrl: String,
        #[arg(long, default_value = "zero", help = specs::FIELD_HELP)]
        u0: String,
        #[arg(long, default_value = "gauss", help = specs::FIELD_HELP)]
        target: String,
    },
    /// Fixed-point steering of the nonlinear equation with the control u_x(L).
    NonlinearControl {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "zero", help = specs::FIELD_HELP)]
        u0: String,
        #[arg(long, default_value = "0.01*gauss", help = specs::FIELD_HELP)]
        target: String,
    },
    /// Gramian extremes over a list of lengths at fixed cell size.
    Sweep {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "h2")]
        ctrl: String,
        /// Comma-separated lengths; multiples of pi allowed.
        #[arg(long, default_value = "2.8,3.0,pi,3.3,3.5")]
        lengths: String,
    },
    /// Run the acceptance suite and write the report.
    Accept {
        /// Only these criteria (comma-separated numbers 1..=10).
        #[arg(long)]
        only: Option<String>,
    },
}

fn resolve(cli: &Cli, grid: Option<&GridArgs>) -> Result<RunConfig, CliError> {
    let mut s = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    for pair in &cli.set {
        s.set_pair(pair)?;
    }
    if let Some(g) = grid {
        let pairs = [
            ("beta", g.beta.map(|v| v.to_string())),
            ("L", g.l.clone()),
            ("N", g.n.map(|v| v.to_string())),
            ("T", g.t.map(|v| v.to_string())),
            ("M", g.m.map(|v| v.to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                s.set(k, &v)?;
            }
        }
    }
    if let Some(d) = &cli.output_dir {
        s.set("output_dir", &d.to_string_lossy())?;
    }
    s.to_run_config()
}

fn length(s: &str) -> Result<f64, CliError> {
    parse_length(s).ok_or_else(|| CliError::Usage(format!("bad length {s:?}")))
}

#[derive(Serialize)]
struct ConfigSummary {
    beta: f64,
    l: f64,
    n: usize,
    t: f64,
    m: usize,
    modes: usize,
    seed: u64,
}

fn summary(cfg: &RunConfig) -> ConfigSummary {
    ConfigSummary {
        beta: cfg.params.beta,
        l: cfg.sgrid.length(),
        n: cfg.sgrid.cells(),
        t: cfg.tgrid.horizon(),
        m: cfg.tgrid.steps(),
        modes: cfg.modes(),
        seed: cfg.seed,
    }
}

fn trajectory_table(traj: &Trajectory, every: usize) -> Table {
    let mut t = Table::new(["t", "x", "u"]);
    let every = every.max(1);
    let last = traj.tgrid.steps();
    for n in (0..=last).filter(|n| n % every == 0 || *n == last) {
        for (i, u) in traj.level(n).iter().enumerate() {
            t.push(vec![traj.tgrid.time(n), traj.sgrid.x(i), *u]);
        }
    }
    t
}

fn signals_table(sig: &BoundarySignals) -> Table {
    let mut t = Table::new(["t", "h1", "h2", "h3"]);
    let g = sig.tgrid();
    for n in 0..g.len() {
        t.push(vec![g.time(n), sig.slot(1).values()[n], sig.slot(2).values()[n], sig.slot(3).values()[n]]);
    }
    t
}

fn solution_json(cfg: &RunConfig, sol: &ControlSolution) -> serde_json::Value {
    json!({
        "config": summary(cfg),
        "rel_error": sol.rel_error,
        "gramian_residual": sol.gramian_residual,
        "iterations": sol.iterations,
        "lambda_min": sol.lambda_min,
        "lambda_max": sol.lambda_max,
        "first_correction": sol.first_correction,
        "history": sol.history,
        "control_norm": sol.signals.norm(),
    })
}

fn path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn print_json(v: &impl Serialize) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Usage(format!("json encoding failed: {e}")))?;
    println!("{s}");
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::CriticalLengths { beta, lmax } => {
            let cfg = resolve(cli, None)?;
            let set = enumerate_critical_lengths(*beta, *lmax)?;
            write_json(&set, &path(&cfg, "critical_lengths.json"))?;
            print_json(&set)
        }
        Command::SpectralCheck { beta, l, p_min, p_max, samples } => {
            let cfg = resolve(cli, None)?;
            let res = spectral_scan(length(l)?, *beta, (*p_min, *p_max), *samples)?;
            if let Some(mode) = &res.mode {
                let mut t = Table::new(["x", "mode"]);
                for (i, v) in mode.values().iter().enumerate() {
                    t.push(vec![mode.grid().x(i), *v]);
                }
                emit_csv(&t, &path(&cfg, "spectral_mode.csv"))?;
            }
            write_json(&res, &path(&cfg, "spectral_check.json"))?;
            print_json(&res)
        }
        Command::Simulate { grid, u0, h1, h2, h3, nonlinear, every } => {
            let mut cfg = resolve(cli, Some(grid))?;
            let mut rng = specs::rng(cfg.seed);
            let u0 = specs::field(u0, &cfg.sgrid, &mut rng)?;
            let mut sig = BoundarySignals::zeros(cfg.tgrid);
            for (k, spec) in [(1, h1), (2, h2), (3, h3)] {
                let s = specs::signal(spec, &cfg.tgrid, &mut rng)?;
                if !s.is_zero() {
                    sig = sig.with_slot(k, s);
                }
            }
            let (traj, halvings) = if *nonlinear {
                cfg.params.nonlinear = true;
                let out = solve_nonlinear_ibvp(&u0, &sig, &cfg)?;
                (out.trajectory, out.halvings)
            } else {
                (solve_linear_ibvp(&u0, &sig, None, &cfg)?, 0)
            };
            emit_csv(&trajectory_table(&traj, *every), &path(&cfg, "simulate.csv"))?;
            let meta = json!({
                "config": summary(&cfg),
                "nonlinear": nonlinear,
                "halvings": halvings,
                "max_abs": traj.max_abs(),
                "terminal_norm": kdvlab::l2_norm(&traj.terminal()),
                "boundary_residuals": traj.boundary_residuals(),
            });
            write_json(&meta, &path(&cfg, "simulate.json"))?;
            print_json(&meta)
        }
        Command::Adjoint { grid, psi_t, every } => {
            let cfg = resolve(cli, Some(grid))?;
            let psi_t = specs::field(psi_t, &cfg.sgrid, &mut specs::rng(cfg.seed))?;
            let psi = solve_adjoint(&psi_t, &cfg)?;
            emit_csv(&trajectory_table(&psi, *every), &path(&cfg, "adjoint.csv"))?;
            let traces = [TraceKind::PsiAt0, TraceKind::PsiXAtL, TraceKind::PsiAtL].map(|k| observation_trace(&psi, k));
            let mut t = Table::new(["t", "psi_0", "psi_x_L", "psi_L"]);
            for n in 0..cfg.tgrid.len() {
                t.push(vec![cfg.tgrid.time(n), traces[0].values()[n], traces[1].values()[n], traces[2].values()[n]]);
            }
            emit_csv(&t, &path(&cfg, "adjoint_traces.csv"))?;
            let meta = json!({
                "config": summary(&cfg),
                "trace_norms": traces.iter().map(kdvlab::time_l2_norm).collect::<Vec<_>>(),
            });
            write_json(&meta, &path(&cfg, "adjoint.json"))?;
            print_json(&meta)
        }
        Command::KernelEval { l, n, t, m, slot, h, rho_max, quad_points, out_steps, compare_fd, realness } => {
            let base = resolve(cli, None)?;
            let cfg = {
                let mut c = RunConfig::new(-1.0, length(l)?, *n, *t, *m)?;
                c.output_dir = base.output_dir.clone();
                c
            };
            if *out_steps == 0 || m % out_steps != 0 {
                return Err(CliError::Usage(format!("out-steps must divide M = {m}")));
            }
            let hs = specs::signal(h, &cfg.tgrid, &mut specs::rng(base.seed))?;
            let out = TimeGrid::new(*t, *out_steps)?;
            let opts = KernelOptions { rho_max: *rho_max, quad_points: *quad_points, check_realness: *realness, ..Default::default() };
            let w = evaluate_boundary_kernel(*slot, &hs, &cfg.sgrid, &out, &opts)?;
            emit_csv(&trajectory_table(&w.trajectory, 1), &path(&cfg, "kernel_eval.csv"))?;
            let mut meta = serde_json::to_value(w.header(*slot, *rho_max, *quad_points))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            if *compare_fd {
                let sig = BoundarySignals::zeros(cfg.tgrid).with_slot(*slot, hs);
                let fd = solve_linear_ibvp(&kdvlab::ScalarField::zeros(cfg.sgrid), &sig, None, &cfg)?;
                let stride = m / out_steps;
                let (mut err, mut size) = (0.0f64, 0.0f64);
                for k in 0..out.len() {
                    for (a, b) in w.trajectory.level(k).iter().zip(fd.level(k * stride)) {
                        err = err.max((a - b).abs());
                        size = size.max(b.abs());
                    }
                }
                meta["fd_max_rel_deviation"] = json!(err / size.max(f64::MIN_POSITIVE));
            }
            write_json(&meta, &path(&cfg, "kernel_eval.json"))?;
            print_json(&meta)
        }
        Command::Gramian { grid, ctrl } => {
            let cfg = resolve(cli, Some(grid))?;
            let g = assemble_gramian(&cfg, &specs::controls(ctrl)?)?;
            let mut t = Table::new(["index", "eigenvalue"]);
            for (i, v) in g.spectrum.iter().enumerate() {
                t.push(vec![i as f64, *v]);
            }
            emit_csv(&t, &path(&cfg, "gramian_spectrum.csv"))?;
            let meta = json!({
                "config": summary(&cfg),
                "controls": g.config.label(),
                "lambda_min": g.lambda_min(),
                "lambda_max": g.lambda_max(),
                "assembly_asymmetry": g.assembly_asymmetry,
                "relative_asymmetry": g.relative_asymmetry(),
            });
            write_json(&meta, &path(&cfg, "gramian.json"))?;
            print_json(&meta)
        }
        Command::Control { grid, ctrl, u0, target } => {
            let cfg = resolve(cli, Some(grid))?;
            let mut rng = specs::rng(cfg.seed);
            let u0 = specs::field(u0, &cfg.sgrid, &mut rng)?;
            let ut = specs::field(target, &cfg.sgrid, &mut rng)?;
            let sol = match synthesize_control(&u0, &ut, &cfg, &specs::controls(ctrl)?) {
                Ok(s) => s,
                Err(e) => {
                    if let KdvError::NearCriticalTarget { rel_error, gramian_residual, lambda_min, lambda_max, spectrum } = &e {
                        let meta = json!({
                            "config": summary(&cfg),
                            "error": "NearCriticalTarget",
                            "rel_error": rel_error,
                            "gramian_residual": gramian_residual,
                            "lambda_min": lambda_min,
                            "lambda_max": lambda_max,
                            "spectrum": spectrum,
                        });
                        write_json(&meta, &path(&cfg, "control.json"))?;
                    }
                    return Err(e.into());
                }
            };
            emit_csv(&signals_table(&sol.signals), &path(&cfg, "control_signals.csv"))?;
            let meta = solution_json(&cfg, &sol);
            write_json(&meta, &path(&cfg, "control.json"))?;
            print_json(&meta)
        }
        Command::NonlinearControl { grid, u0, target } => {
            let cfg = resolve(cli, Some(grid))?;
            let mut rng = specs::rng(cfg.seed);
            let u0 = specs::field(u0, &cfg.sgrid, &mut rng)?;
            let ut = specs::field(target, &cfg.sgrid, &mut rng)?;
            let sol = nonlinear_steer(&u0, &ut, &cfg)?;
            emit_csv(&signals_table(&sol.signals), &path(&cfg, "nonlinear_control_signals.csv"))?;
            let meta = solution_json(&cfg, &sol);
            write_json(&meta, &path(&cfg, "nonlinear_control.json"))?;
            print_json(&meta)
        }
        Command::Sweep { grid, ctrl, lengths } => {
            let cfg = resolve(cli, Some(grid))?;
            let ls = lengths.split(',').map(length).collect::<Result<Vec<_>, _>>()?;
            let rows = sweep_lengths(cfg.params.beta, &ls, &specs::controls(ctrl)?, &cfg)?;
            emit_csv(&sweep_table(&rows), &path(&cfg, "sweep.csv"))?;
            print_json(&rows)
        }
        Command::Accept { only } => {
            let cfg = resolve(cli, None)?;
            let ids: Vec<u32> = match only {
                None => (1..=10).collect(),
                Some(s) => s
                    .split(',')
                    .map(|p| p.trim().parse::<u32>().ok().filter(|k| (1..=10).contains(k)))
                    .collect::<Option<_>>()
                    .ok_or_else(|| CliError::Usage(format!("bad criterion list {s:?}")))?,
            };
            let report = acceptance::run_criteria(&ids, &mut |c| eprintln!("{}", c.line()));
            write_json(&report, &path(&cfg, "acceptance.json"))?;
            print_json(&report)?;
            if report.pass {
                Ok(())
            } else {
                Err(CliError::Acceptance(report.failed().len()))
            }
        }
    }
}

pub fn sweep_table(rows: &[kdvlab::hum::SweepRow]) -> Table {
    let mut t = Table::new(["L", "N", "modes", "lambda_min", "lambda_max", "condition", "asymmetry"]);
    for r in rows {
        t.push(vec![r.l, r.n as f64, r.modes as f64, r.lambda_min, r.lambda_max, r.condition, r.asymmetry]);
    }
    t
}

/// Caps the global worker pool from `KDVLAB_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("KDVLAB_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("KDVLAB_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Parses, runs and maps the outcome to an exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let res = configure_threads().and_then(|_| run(&cli));
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
