//! Subcommand definitions and their adapters over the core library.

use std::path::{Path, PathBuf};
use std::time::Instant;

use barrierflow_core::diagnostics::{classify, complementarity_check, perturb, perturbed_residual_system, Tolerances};
use barrierflow_core::flow::{escape_from, integrate, require_spurious, FlowConfig};
use barrierflow_core::solvers::{run as run_solver, Scheme, SolverConfig, StepSchedule, Trace};
use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::output::{
    ensure_dir, report_json, timestamp, vec_json, write_exits_csv, write_flow_csv, write_index_csv, write_json,
    write_trace_csv, IndexRow, Manifest,
};
use crate::problems::{resolve, Resolved};
use crate::settings::{parse_f64_list, parse_seed_list, pick, positive, single, Settings};

pub const OUT_ENV: &str = "BARRIERFLOW_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "barrierflow",
    version,
    about = "Interior Riemannian subgradient methods: runs, flows and diagnostics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the barrier (rhb) or mirror scheme and write trace.csv and summary.json.
    Run(RunArgs),
    /// Integrate the continuous-time flow and write flow.csv.
    Flow(FlowArgs),
    /// Exit times from a neighborhood of a spurious point; writes exits.csv.
    Escape(EscapeArgs),
    /// Classify a point and write report.json.
    Diagnose(DiagnoseArgs),
    /// Run a parameter grid, one subdirectory per cell plus index.csv.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $BARRIERFLOW_OUT/<command>-<problem>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ProblemArgs {
    /// Registered problem: lin-simplex, nn-pca, l1-simplex, flat-simplex, ball-abs.
    #[arg(long)]
    pub problem: Option<String>,
    /// JSON problem file instead of a registered problem.
    #[arg(long)]
    pub problem_file: Option<PathBuf>,
    /// Dimension of the simplex problems.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Kernel id: entropy, neglog, power:<p>, ball, logdet.
    #[arg(long)]
    pub kernel: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ToleranceArgs {
    /// Stable residual threshold.
    #[arg(long)]
    pub tau_s: Option<f64>,
    /// KKT residual threshold.
    #[arg(long)]
    pub tau_k: Option<f64>,
    /// Active-set tolerance.
    #[arg(long)]
    pub tau_act: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// rhb or mirror.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Upper bound on the step size; larger steps that leave C are rejected.
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub stop_tol: Option<f64>,
    /// Also stop once the last 100 steps are all at most this long.
    #[arg(long)]
    pub displacement_tol: Option<f64>,
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Start point, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub tol: ToleranceArgs,
    /// Initial step size.
    #[arg(long)]
    pub eta0: Option<f64>,
    /// Decay exponent of eta0 / (k + 1)^alpha; 0 keeps the step constant.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Noise bound.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub tol: ToleranceArgs,
    /// Comma-separated initial step sizes.
    #[arg(long)]
    pub eta0: Option<String>,
    /// Comma-separated decay exponents.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Comma-separated noise bounds.
    #[arg(long)]
    pub noise: Option<String>,
    /// Comma-separated seeds or a range `a..b`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Worker threads [default: physical cores].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Euler step.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    /// Fraction of the boundary gauge each step must keep.
    #[arg(long)]
    pub safety: Option<f64>,
    /// Sampling interval of flow.csv.
    #[arg(long)]
    pub record_dt: Option<f64>,
    /// Center of a sup-norm box whose entries and exits are logged.
    #[arg(long, allow_hyphen_values = true)]
    pub center: Option<String>,
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EscapeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// The spurious point.
    #[arg(long, allow_hyphen_values = true)]
    pub xbar: Option<String>,
    /// Sup-norm radius of the neighborhood.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Comma-separated start distances.
    #[arg(long)]
    pub deltas: Option<String>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long)]
    pub safety: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub tol: ToleranceArgs,
    /// Point to classify, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub x: Option<String>,
    /// Also draw a perturbation of this size and evaluate its residual system.
    #[arg(long)]
    pub perturb: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// What a finished command reports on stdout.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub summary: Value,
}

pub fn dispatch(cli: Cli) -> CliResult<Outcome> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Flow(a) => cmd_flow(&a),
        Command::Escape(a) => cmd_escape(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn out_dir(common: &CommonArgs, settings: &Settings, default_name: &str) -> PathBuf {
    if let Some(dir) = common.out.clone().or_else(|| settings.out.clone()) {
        return dir;
    }
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("barrierflow-out"));
    root.join(default_name)
}

fn resolve_problem(args: &ProblemArgs, s: &Settings) -> CliResult<Resolved> {
    let name = args.problem.clone().or_else(|| s.problem.clone());
    let file = args.problem_file.clone().or_else(|| s.problem_file.clone());
    let kernel = args.kernel.clone().or_else(|| s.kernel.clone());
    resolve(name.as_deref(), file.as_deref(), args.dim.or(s.dim), kernel.as_deref())
}

fn tolerances(args: &ToleranceArgs, s: &Settings) -> CliResult<Tolerances> {
    let d = Tolerances::default();
    Ok(Tolerances {
        stable: positive("tau-s", pick(args.tau_s, s.tau_s, d.stable))?,
        kkt: positive("tau-k", pick(args.tau_k, s.tau_k, d.kkt))?,
        active: positive("tau-act", pick(args.tau_act, s.tau_act, d.active))?,
    })
}

fn tolerances_json(t: &Tolerances) -> Value {
    json!({ "stable": t.stable, "kkt": t.kkt, "active": t.active })
}

/// A point from a comma-separated flag or a config array, checked against `n`.
fn point_arg(
    flag: &str,
    text: Option<&String>,
    config: Option<&Vec<f64>>,
    n: usize,
) -> CliResult<Option<DVector<f64>>> {
    let values = match (text, config) {
        (Some(t), _) => parse_f64_list(flag, t)?,
        (None, Some(v)) => v.clone(),
        (None, None) => return Ok(None),
    };
    if values.len() != n {
        return Err(CliError::Config(format!(
            "--{flag} needs {n} coordinates, got {}",
            values.len()
        )));
    }
    Ok(Some(DVector::from_vec(values)))
}

fn list_arg(flag: &str, text: Option<&String>, config: Option<Vec<f64>>, default: f64) -> CliResult<Vec<f64>> {
    match (text, config) {
        (Some(t), _) => parse_f64_list(flag, t),
        (None, Some(v)) => Ok(v),
        (None, None) => Ok(vec![default]),
    }
}

fn jobs(flag: Option<usize>, s: &Settings) -> CliResult<usize> {
    let jobs = flag.or(s.jobs).unwrap_or_else(num_cpus::get_physical);
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    Ok(jobs)
}

fn pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))
}

/// Everything a single solver run depends on besides the problem.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub scheme: Scheme,
    pub eta0: f64,
    pub alpha: f64,
    pub cap: Option<f64>,
    pub iters: usize,
    pub noise: f64,
    pub seed: u64,
    pub stop_tol: f64,
    pub displacement_tol: Option<f64>,
    pub record_every: usize,
    pub x0: Option<DVector<f64>>,
    pub tolerances: Tolerances,
}

impl RunPlan {
    pub fn solver_config(&self) -> CliResult<SolverConfig> {
        let schedule = if self.alpha == 0.0 {
            StepSchedule::constant(self.eta0)
        } else {
            StepSchedule::polynomial(self.eta0, self.alpha)
        };
        let schedule = match self.cap {
            Some(cap) => schedule.with_cap(cap),
            None => schedule,
        };
        let cfg = SolverConfig {
            schedule,
            max_iters: self.iters,
            noise: self.noise,
            scheme: self.scheme,
            stop_tol: self.stop_tol,
            seed: self.seed,
            record_every: self.record_every,
            tolerances: self.tolerances,
            start: self.x0.clone(),
            displacement_tol: self.displacement_tol,
            ..SolverConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn echo(&self, r: &Resolved) -> Value {
        json!({
            "problem": r.problem.name,
            "dim": r.problem.dim(),
            "kernel": r.kernel.id(),
            "scheme": self.scheme.as_str(),
            "eta0": self.eta0,
            "alpha": self.alpha,
            "cap": self.cap,
            "iters": self.iters,
            "noise": self.noise,
            "seed": self.seed,
            "stop_tol": self.stop_tol,
            "displacement_tol": self.displacement_tol,
            "record_every": self.record_every,
            "x0": vec_json(self.x0.as_ref().unwrap_or(&r.problem.initial_point)),
            "tolerances": tolerances_json(&self.tolerances),
        })
    }
}

/// Shared solver settings of `run` and `sweep`; step, noise and seed are
/// filled in per cell.
fn base_plan(solver: &SolverArgs, tol: &ToleranceArgs, s: &Settings, r: &Resolved) -> CliResult<RunPlan> {
    let scheme: Scheme = pick(solver.scheme.clone(), s.scheme.clone(), "rhb".to_string())
        .parse()
        .map_err(CliError::from)?;
    let x0 = point_arg("x0", solver.x0.as_ref(), s.x0.as_ref(), r.problem.dim())?;
    Ok(RunPlan {
        scheme,
        eta0: 0.05,
        alpha: 0.0,
        cap: solver.cap.or(s.cap),
        iters: pick(solver.iters, s.iters, 1000),
        noise: 0.0,
        seed: 0,
        stop_tol: pick(solver.stop_tol, s.stop_tol, 1e-9),
        displacement_tol: solver.displacement_tol.or(s.displacement_tol),
        record_every: pick(solver.record_every, s.record_every, 1),
        x0,
        tolerances: tolerances(tol, s)?,
    })
}

/// Runs one plan and writes trace.csv, summary.json and manifest.json into `dir`.
pub fn execute_run(command: &str, r: &Resolved, plan: &RunPlan, dir: &Path, extra: Value) -> CliResult<(Trace, Value)> {
    let cfg = plan.solver_config()?;
    ensure_dir(dir)?;
    let started = Utc::now();
    let clock = Instant::now();
    let trace = run_solver(&r.problem, &r.kernel, &cfg)?;
    let wall = clock.elapsed().as_secs_f64();
    write_trace_csv(&dir.join("trace.csv"), &trace.records, r.problem.dim())?;
    let last = trace.records.last();
    let summary = json!({
        "command": command,
        "problem": r.problem.name,
        "kernel": r.kernel.id(),
        "scheme": plan.scheme.as_str(),
        "config": plan.echo(r),
        "cell": extra,
        "iterations": trace.iterations,
        "stop": trace.stop.as_str(),
        "halvings": trace.halvings,
        "tail_displacement": trace.tail_displacement,
        "classification": trace.report.classification.as_str(),
        "final_point": vec_json(trace.final_point()),
        "f": last.map(|l| l.f),
        "stable_residual": trace.report.stable_residual,
        "kkt_residual": trace.report.kkt_residual(),
        "report": report_json(&trace.report),
        "wall_time_s": wall,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: json!({ "run": plan.echo(r), "cell": extra }),
        problem: r.problem.name.clone(),
        problem_hash: r.hash(),
        seed: Some(plan.seed),
        started_at: timestamp(started),
        finished_at: timestamp(Utc::now()),
        artifacts: ["trace.csv", "summary.json", "manifest.json"]
            .map(PathBuf::from)
            .to_vec(),
    }
    .write(dir)?;
    Ok((trace, summary))
}

pub fn cmd_run(a: &RunArgs) -> CliResult<Outcome> {
    let s = Settings::load(a.common.config.as_deref())?;
    let r = resolve_problem(&a.problem, &s)?;
    let mut plan = base_plan(&a.solver, &a.tol, &s, &r)?;
    plan.eta0 = match a.eta0 {
        Some(v) => v,
        None => single("eta0", &s.eta0.as_ref().map_or(vec![0.05], |v| v.to_vec()))?,
    };
    plan.alpha = match a.alpha {
        Some(v) => v,
        None => single("alpha", &s.alpha.as_ref().map_or(vec![0.0], |v| v.to_vec()))?,
    };
    plan.noise = match a.noise {
        Some(v) => v,
        None => single("noise", &s.noise.as_ref().map_or(vec![0.0], |v| v.to_vec()))?,
    };
    plan.seed = match a.seed {
        Some(v) => v,
        None => single("seed", &s.seed.as_ref().map_or(vec![0], |v| v.to_vec()))?,
    };
    let dir = out_dir(
        &a.common,
        &s,
        &format!("run-{}-{}-seed{}", r.problem.name, plan.scheme.as_str(), plan.seed),
    );
    let (_, summary) = execute_run("run", &r, &plan, &dir, Value::Null)?;
    Ok(Outcome { out_dir: dir, summary })
}

/// SplitMix64 finalizer, used to derive per-cell seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn cell_seed(base: u64, index: usize) -> u64 {
    base ^ splitmix64(index as u64)
}

fn reject_duplicates<T: PartialEq + std::fmt::Debug>(flag: &str, values: &[T]) -> CliResult<()> {
    for (i, v) in values.iter().enumerate() {
        if values[..i].contains(v) {
            return Err(CliError::Config(format!("--{flag} lists {v:?} twice")));
        }
    }
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs) -> CliResult<Outcome> {
    let s = Settings::load(a.common.config.as_deref())?;
    let r = resolve_problem(&a.problem, &s)?;
    let base = base_plan(&a.solver, &a.tol, &s, &r)?;
    let eta0s = list_arg("eta0", a.eta0.as_ref(), s.eta0.as_ref().map(|v| v.to_vec()), 0.05)?;
    let alphas = list_arg("alpha", a.alpha.as_ref(), s.alpha.as_ref().map(|v| v.to_vec()), 0.0)?;
    let noises = list_arg("noise", a.noise.as_ref(), s.noise.as_ref().map(|v| v.to_vec()), 0.0)?;
    let seeds = match (&a.seeds, &s.seed) {
        (Some(t), _) => parse_seed_list("seeds", t)?,
        (None, Some(v)) => v.to_vec(),
        (None, None) => vec![0],
    };
    reject_duplicates("eta0", &eta0s)?;
    reject_duplicates("alpha", &alphas)?;
    reject_duplicates("noise", &noises)?;
    reject_duplicates("seeds", &seeds)?;

    let mut cells = Vec::new();
    for &eta0 in &eta0s {
        for &alpha in &alphas {
            for &noise in &noises {
                for &seed in &seeds {
                    cells.push((eta0, alpha, noise, seed));
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    let plans: Vec<RunPlan> = cells
        .iter()
        .enumerate()
        .map(|(i, &(eta0, alpha, noise, seed))| {
            let plan = RunPlan {
                eta0,
                alpha,
                noise,
                seed: cell_seed(seed, i),
                ..base.clone()
            };
            plan.solver_config().map(|_| plan)
        })
        .collect::<CliResult<_>>()?;

    let dir = out_dir(
        &a.common,
        &s,
        &format!("sweep-{}-{}", r.problem.name, base.scheme.as_str()),
    );
    ensure_dir(&dir)?;
    let started = Utc::now();
    let rows: Vec<IndexRow> = pool(jobs(a.jobs, &s)?)?.install(|| {
        plans
            .par_iter()
            .enumerate()
            .map(|(i, plan)| {
                let (eta0, alpha, noise, seed) = cells[i];
                let name = format!("cell-{i:04}");
                let extra = json!({ "index": i, "dir": name, "base_seed": seed, "cell_seed": plan.seed });
                let mut row = IndexRow {
                    cell: i,
                    dir: name.clone(),
                    eta0,
                    alpha,
                    noise,
                    seed,
                    cell_seed: plan.seed,
                    status: "ok".to_string(),
                    iterations: None,
                    stop: None,
                    classification: None,
                    f: None,
                    stable_res: None,
                    kkt_res: None,
                };
                match execute_run("sweep", &r, plan, &dir.join(&name), extra) {
                    Ok((trace, _)) => {
                        row.iterations = Some(trace.iterations);
                        row.stop = Some(trace.stop.as_str().to_string());
                        row.classification = Some(trace.report.classification.as_str().to_string());
                        row.f = trace.records.last().map(|l| l.f);
                        row.stable_res = Some(trace.report.stable_residual);
                        row.kkt_res = Some(trace.report.kkt_residual());
                    }
                    Err(e) => row.status = format!("error: {e}"),
                }
                row
            })
            .collect()
    });
    write_index_csv(&dir.join("index.csv"), &rows)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    Manifest {
        command: "sweep".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: json!({
            "base": base.echo(&r),
            "eta0": eta0s,
            "alpha": alphas,
            "noise": noises,
            "seeds": seeds,
        }),
        problem: r.problem.name.clone(),
        problem_hash: r.hash(),
        seed: None,
        started_at: timestamp(started),
        finished_at: timestamp(Utc::now()),
        artifacts: std::iter::once(PathBuf::from("index.csv"))
            .chain(rows.iter().map(|row| PathBuf::from(&row.dir)))
            .collect(),
    }
    .write(&dir)?;
    if let Some(bad) = rows.iter().find(|r| r.status != "ok") {
        return Err(CliError::Solver(barrierflow_core::Error::InvalidConfig(format!(
            "{failed} of {} sweep cells failed; first: {} {}",
            rows.len(),
            bad.dir,
            bad.status
        ))));
    }
    Ok(Outcome {
        out_dir: dir,
        summary: json!({ "command": "sweep", "cells": rows.len() }),
    })
}

fn flow_config(
    h: Option<f64>,
    tmax: Option<f64>,
    safety: Option<f64>,
    record_dt: Option<f64>,
    s: &Settings,
) -> FlowConfig {
    let d = FlowConfig::default();
    FlowConfig {
        h: pick(h, s.h, d.h),
        t_max: pick(tmax, s.tmax, d.t_max),
        safety: pick(safety, s.safety, d.safety),
        record_dt: pick(record_dt, s.record_dt, d.record_dt),
        neighborhood: None,
    }
}

fn flow_echo(cfg: &FlowConfig) -> Value {
    json!({
        "h": cfg.h,
        "tmax": cfg.t_max,
        "safety": cfg.safety,
        "record_dt": cfg.record_dt,
        "neighborhood": cfg.neighborhood.as_ref().map(|(c, r)| json!({ "center": vec_json(c), "radius": r })),
    })
}

pub fn cmd_flow(a: &FlowArgs) -> CliResult<Outcome> {
    let s = Settings::load(a.common.config.as_deref())?;
    let r = resolve_problem(&a.problem, &s)?;
    let n = r.problem.dim();
    let x0 = point_arg("x0", a.x0.as_ref(), s.x0.as_ref(), n)?.unwrap_or_else(|| r.problem.initial_point.clone());
    let mut cfg = flow_config(a.h, a.tmax, a.safety, a.record_dt, &s);
    let center = point_arg("center", a.center.as_ref(), s.center.as_ref(), n)?;
    cfg.neighborhood = match (center, a.radius.or(s.radius)) {
        (Some(c), Some(radius)) => Some((c, radius)),
        (None, None) => None,
        _ => return Err(CliError::Config("--center and --radius go together".into())),
    };
    cfg.validate()?;
    let dir = out_dir(&a.common, &s, &format!("flow-{}", r.problem.name));
    ensure_dir(&dir)?;
    let started = Utc::now();
    let clock = Instant::now();
    let trace = integrate(&r.problem, &r.kernel, &x0, &cfg)?;
    let wall = clock.elapsed().as_secs_f64();
    write_flow_csv(&dir.join("flow.csv"), &trace.samples, n)?;
    let report = classify(&r.problem, &r.kernel, &trace.final_point, &Tolerances::default()).ok();
    let config = json!({
        "problem": r.problem.name,
        "kernel": r.kernel.id(),
        "x0": vec_json(&x0),
        "flow": flow_echo(&cfg),
    });
    let summary = json!({
        "command": "flow",
        "config": config,
        "steps": trace.steps,
        "samples": trace.samples.len(),
        "max_increase": trace.max_increase,
        "events": trace.events.iter().map(|e| json!({ "t": e.t, "kind": format!("{:?}", e.kind).to_lowercase() })).collect::<Vec<_>>(),
        "first_exit": trace.first_exit(),
        "reentries": trace.reentries(),
        "min_distance_after_exit": trace.min_distance_after_exit,
        "final_point": vec_json(&trace.final_point),
        "final_stable_residual": trace.final_stable_residual,
        "boundary_stop": trace.boundary_stop,
        "classification": report.as_ref().map(|r| r.classification.as_str()),
        "wall_time_s": wall,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Manifest {
        command: "flow".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        problem: r.problem.name.clone(),
        problem_hash: r.hash(),
        seed: None,
        started_at: timestamp(started),
        finished_at: timestamp(Utc::now()),
        artifacts: ["flow.csv", "summary.json", "manifest.json"]
            .map(PathBuf::from)
            .to_vec(),
    }
    .write(&dir)?;
    Ok(Outcome { out_dir: dir, summary })
}

pub fn cmd_escape(a: &EscapeArgs) -> CliResult<Outcome> {
    let s = Settings::load(a.common.config.as_deref())?;
    let r = resolve_problem(&a.problem, &s)?;
    let n = r.problem.dim();
    let xbar = point_arg("xbar", a.xbar.as_ref(), s.xbar.as_ref(), n)?
        .ok_or_else(|| CliError::Config("missing --xbar".into()))?;
    let eps = positive(
        "eps",
        a.eps
            .or(s.eps)
            .ok_or_else(|| CliError::Config("missing --eps".into()))?,
    )?;
    let deltas = match (&a.deltas, &s.deltas) {
        (Some(t), _) => parse_f64_list("deltas", t)?,
        (None, Some(v)) => v.clone(),
        (None, None) => return Err(CliError::Config("missing --deltas".into())),
    };
    if deltas.is_empty() {
        return Err(CliError::Config("--deltas is empty".into()));
    }
    for &d in &deltas {
        positive("deltas", d)?;
    }
    let mut cfg = flow_config(a.h, a.tmax.or(s.tmax).or(Some(50.0)), a.safety, None, &s);
    cfg.record_dt = s.record_dt.unwrap_or(0.1);
    cfg.validate()?;
    require_spurious(&r.problem, &r.kernel, &xbar)?;

    let dir = out_dir(&a.common, &s, &format!("escape-{}", r.problem.name));
    ensure_dir(&dir)?;
    let started = Utc::now();
    let clock = Instant::now();
    let rows = pool(jobs(a.jobs, &s)?)?.install(|| {
        deltas
            .par_iter()
            .map(|&delta| escape_from(&r.problem, &r.kernel, &xbar, eps, delta, &cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let wall = clock.elapsed().as_secs_f64();
    write_exits_csv(&dir.join("exits.csv"), &rows, n)?;
    let config = json!({
        "problem": r.problem.name,
        "kernel": r.kernel.id(),
        "xbar": vec_json(&xbar),
        "eps": eps,
        "deltas": deltas,
        "flow": flow_echo(&cfg),
    });
    let missing: Vec<f64> = rows
        .iter()
        .filter(|row| row.t_exit.is_none())
        .map(|row| row.delta)
        .collect();
    let summary = json!({
        "command": "escape",
        "config": config,
        "exits": rows.iter().map(|row| json!({
            "delta": row.delta,
            "t_exit": row.t_exit,
            "reentries": row.reentries,
            "min_distance_after_exit": row.min_distance_after_exit,
        })).collect::<Vec<_>>(),
        "no_exit": missing,
        "wall_time_s": wall,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Manifest {
        command: "escape".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        problem: r.problem.name.clone(),
        problem_hash: r.hash(),
        seed: None,
        started_at: timestamp(started),
        finished_at: timestamp(Utc::now()),
        artifacts: ["exits.csv", "summary.json", "manifest.json"]
            .map(PathBuf::from)
            .to_vec(),
    }
    .write(&dir)?;
    if let Some(row) = rows.iter().find(|row| row.t_exit.is_none()) {
        row.require_exit(cfg.t_max)?;
    }
    Ok(Outcome { out_dir: dir, summary })
}

pub fn cmd_diagnose(a: &DiagnoseArgs) -> CliResult<Outcome> {
    let s = Settings::load(a.common.config.as_deref())?;
    let r = resolve_problem(&a.problem, &s)?;
    let n = r.problem.dim();
    let x = point_arg("x", a.x.as_ref(), s.x.as_ref(), n)?.ok_or_else(|| CliError::Config("missing --x".into()))?;
    let tol = tolerances(&a.tol, &s)?;
    let report = classify(&r.problem, &r.kernel, &x, &tol)?;
    let comp = complementarity_check(&report, tol.stable).ok();
    let seed = match a.seed {
        Some(v) => v,
        None => single("seed", &s.seed.as_ref().map_or(vec![0], |v| v.to_vec()))?,
    };
    let perturbation = match a.perturb.or(s.perturb) {
        None => Value::Null,
        Some(eps) => {
            let pp = perturb(&r.problem, &r.kernel, eps, seed)?;
            let residual = if r.kernel.is_interior(&x) {
                let (r1, r2) = perturbed_residual_system(&pp, &x, &report.y)?;
                json!({ "r1": vec_json(&r1), "r2": vec_json(&r2), "norm": (r1.norm_squared() + r2.norm_squared()).sqrt() })
            } else {
                Value::Null
            };
            let shifted = pp.problem()?;
            let on_shifted = shifted.manifold.contains(&x, 1e-6);
            let perturbed = if on_shifted {
                classify(&shifted, &r.kernel, &x, &tol)
                    .ok()
                    .map(|rep| report_json(&rep))
            } else {
                None
            };
            json!({
                "epsilon": eps,
                "seed": seed,
                "u": vec_json(&pp.u),
                "v": vec_json(&pp.v),
                "residual_system": residual,
                "on_shifted_manifold": on_shifted,
                "report": perturbed,
            })
        }
    };
    let config = json!({
        "problem": r.problem.name,
        "kernel": r.kernel.id(),
        "x": vec_json(&x),
        "tolerances": tolerances_json(&tol),
        "perturb": a.perturb.or(s.perturb),
        "seed": seed,
    });
    let mut body = report_json(&report);
    if let Value::Object(map) = &mut body {
        map.insert("command".into(), json!("diagnose"));
        map.insert("config".into(), config.clone());
        map.insert(
            "complementarity".into(),
            comp.map_or(Value::Null, |c| {
                json!({
                    "status": c.status.as_str(),
                    "reported_min": c.reported_min,
                    "best_min": c.best_min,
                    "exact": c.exact,
                })
            }),
        );
        map.insert("perturbation".into(), perturbation);
    }
    let dir = out_dir(&a.common, &s, &format!("diagnose-{}", r.problem.name));
    ensure_dir(&dir)?;
    let started = Utc::now();
    write_json(&dir.join("report.json"), &body)?;
    Manifest {
        command: "diagnose".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        problem: r.problem.name.clone(),
        problem_hash: r.hash(),
        seed: a.perturb.or(s.perturb).map(|_| seed),
        started_at: timestamp(started),
        finished_at: timestamp(Utc::now()),
        artifacts: ["report.json", "manifest.json"].map(PathBuf::from).to_vec(),
    }
    .write(&dir)?;
    Ok(Outcome {
        out_dir: dir,
        summary: body,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..1000).map(|i| cell_seed(42, i)).collect();
        for (i, s) in seeds.iter().enumerate() {
            assert!(!seeds[..i].contains(s));
        }
        assert_eq!(cell_seed(42, 7), 42 ^ splitmix64(7));
        // reference value of the SplitMix64 sequence started at 0
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
