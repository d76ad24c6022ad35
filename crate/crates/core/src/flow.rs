//! Fine-step integration of the barrier subgradient flow
//! `x' = -P_x H(x)^{-1} d(x)` on `M ∩ C`, with escape-time experiments
//! around spurious points.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::diagnostics::{classify, Classification, Tolerances};
use crate::error::{check_dim, domain, Error, Result};
use crate::geometry::{retract, search_direction, ON_MANIFOLD_TOL};
use crate::kernels::BarrierKernel;
use crate::linalg::Point;
use crate::oracles::Problem;

const MAX_STEP_HALVINGS: usize = 60;

/// Integration ends once the accepted step falls below this fraction of `h`:
/// the trajectory is then pressed against the interior floor of `C`.
pub const MIN_STEP_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Base Euler step.
    pub h: f64,
    pub t_max: f64,
    /// Each step keeps `gauge(x+) >= safety * gauge(x)`.
    pub safety: f64,
    /// Sampling interval of the stored trajectory.
    pub record_dt: f64,
    /// Sup-norm box `{ |x - center|_inf < radius }` whose entries and exits
    /// are logged.
    pub neighborhood: Option<(Point, f64)>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            h: 1e-4,
            t_max: 10.0,
            safety: 0.5,
            record_dt: 1e-2,
            neighborhood: None,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.h > 0.0
            && self.t_max > 0.0
            && self.t_max.is_finite()
            && self.safety > 0.0
            && self.safety < 1.0
            && self.record_dt > 0.0
            && self.neighborhood.as_ref().is_none_or(|(_, r)| *r > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!(
                "invalid flow configuration {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub t: f64,
    pub x: Point,
    pub f: f64,
    pub stable_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Enter,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowEvent {
    /// Crossing time, linearly interpolated within the step.
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub samples: Vec<FlowSample>,
    pub events: Vec<FlowEvent>,
    pub steps: usize,
    /// Largest single-step increase of `f` (negative when strictly decreasing).
    pub max_increase: f64,
    /// Smallest sup-norm distance to the neighborhood center after the first exit.
    pub min_distance_after_exit: Option<f64>,
    pub final_point: Point,
    pub final_stable_residual: f64,
    /// Time at which the step fell below `MIN_STEP_FRACTION * h`, if it did.
    pub boundary_stop: Option<f64>,
}

impl FlowTrace {
    pub fn first_exit(&self) -> Option<f64> {
        self.events.iter().find(|e| e.kind == EventKind::Exit).map(|e| e.t)
    }

    /// Entries after the first exit.
    pub fn reentries(&self) -> usize {
        match self.events.iter().position(|e| e.kind == EventKind::Exit) {
            Some(i) => self.events[i..].iter().filter(|e| e.kind == EventKind::Enter).count(),
            None => 0,
        }
    }
}

/// Explicit Euler with retraction: `x <- R_x(-h' P_x H^{-1} d)` where `h' <= h`
/// is halved until the boundary gauge shrinks by at most the safety factor.
pub fn integrate(problem: &Problem, kernel: &BarrierKernel, x0: &DVector<f64>, cfg: &FlowConfig) -> Result<FlowTrace> {
    cfg.validate()?;
    check_dim(problem.dim(), x0.len())?;
    if !problem.region.contains(x0) || !problem.manifold.contains(x0, ON_MANIFOLD_TOL) {
        return Err(domain("flow start must be interior and on the manifold"));
    }
    let oracle = problem.oracle.as_ref();
    let region = &problem.region;
    let dist = |x: &DVector<f64>| cfg.neighborhood.as_ref().map(|(c, _)| (x - c).amax());
    let radius = cfg.neighborhood.as_ref().map(|(_, r)| *r);

    let mut x = x0.clone();
    let mut t = 0.0;
    let mut f = oracle.value(&x);
    let mut d = oracle.subgradient(&x);
    let mut w = -search_direction(kernel, &problem.manifold, &x, &d)?.v;
    let mut samples = alloc::vec![FlowSample {
        t,
        x: x.clone(),
        f,
        stable_residual: w.norm(),
    }];
    let mut next_record = cfg.record_dt;
    let mut events = Vec::new();
    let mut inside = radius.zip(dist(&x)).map(|(r, dd)| dd < r);
    let mut exited = inside == Some(false);
    if exited {
        events.push(FlowEvent {
            t: 0.0,
            kind: EventKind::Exit,
        });
    }
    let mut min_after_exit = if exited { dist(&x) } else { None };
    let mut steps = 0;
    let mut max_increase = f64::NEG_INFINITY;
    let mut boundary_stop = None;

    while t < cfg.t_max * (1.0 - 1e-15) {
        let gauge = region.gauge(&x);
        let mut h = cfg.h.min(cfg.t_max - t);
        let mut accepted = None;
        for _ in 0..MAX_STEP_HALVINGS {
            let r = retract(&problem.manifold, &x, &(-&w * h), region)?;
            let dt = h / (1u64 << r.halvings.min(62)) as f64;
            if region.gauge(&r.point) >= cfg.safety * gauge {
                accepted = Some((r.point, dt));
                break;
            }
            h *= 0.5;
        }
        let Some((next, dt)) = accepted else {
            return Err(Error::RetractionFailed {
                halvings: MAX_STEP_HALVINGS,
            });
        };
        if dt < MIN_STEP_FRACTION * cfg.h && dt < cfg.t_max - t {
            boundary_stop = Some(t);
            break;
        }
        let t_next = t + dt;
        if let (Some(r), Some(d0), Some(d1)) = (radius, dist(&x), dist(&next)) {
            let now_inside = d1 < r;
            if inside != Some(now_inside) {
                let frac = if d1 != d0 {
                    ((r - d0) / (d1 - d0)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                let kind = if now_inside { EventKind::Enter } else { EventKind::Exit };
                events.push(FlowEvent { t: t + frac * dt, kind });
                inside = Some(now_inside);
                if kind == EventKind::Exit {
                    exited = true;
                }
            }
            if exited {
                min_after_exit = Some(min_after_exit.map_or(d1, |m: f64| m.min(d1)));
            }
        }
        x = next;
        t = t_next;
        steps += 1;
        let f_next = oracle.value(&x);
        max_increase = max_increase.max(f_next - f);
        f = f_next;
        d = oracle.subgradient(&x);
        w = -search_direction(kernel, &problem.manifold, &x, &d)?.v;
        let done = t >= cfg.t_max * (1.0 - 1e-15);
        if t >= next_record * (1.0 - 1e-12) || done {
            samples.push(FlowSample {
                t,
                x: x.clone(),
                f,
                stable_residual: w.norm(),
            });
            while next_record <= t * (1.0 + 1e-12) {
                next_record += cfg.record_dt;
            }
        }
    }
    if boundary_stop.is_some() && samples.last().is_some_and(|s| s.t < t) {
        samples.push(FlowSample {
            t,
            x: x.clone(),
            f,
            stable_residual: w.norm(),
        });
    }
    Ok(FlowTrace {
        samples,
        events,
        steps,
        max_increase,
        min_distance_after_exit: min_after_exit,
        final_stable_residual: w.norm(),
        final_point: x,
        boundary_stop,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeRow {
    pub delta: f64,
    pub start: Point,
    /// First time with `|x(t) - xbar|_inf >= eps`; `None` if none before `t_max`.
    pub t_exit: Option<f64>,
    pub reentries: usize,
    pub min_distance_after_exit: Option<f64>,
}

impl EscapeRow {
    pub fn require_exit(&self, t_max: f64) -> Result<f64> {
        self.t_exit.ok_or(Error::NoExit { t_max })
    }
}

/// Start at sup-norm distance `delta` from `xbar`, moving toward the
/// problem's interior initial point.
pub fn escape_start(problem: &Problem, xbar: &DVector<f64>, delta: f64) -> Result<Point> {
    let center = &problem.initial_point;
    let dir = center - xbar;
    let scale = dir.amax();
    if scale <= 0.0 {
        return Err(domain("reference point coincides with the initial point"));
    }
    let x0 = xbar + dir * (delta / scale);
    let x0 = if problem.manifold.is_affine() {
        x0
    } else {
        retract(&problem.manifold, &x0, &DVector::zeros(x0.len()), &problem.region)?.point
    };
    if !problem.region.contains(&x0) {
        return Err(domain("escape start is not interior"));
    }
    Ok(x0)
}

/// Exit time from the box `{ |x - xbar|_inf < eps }` for one start distance.
pub fn escape_from(
    problem: &Problem,
    kernel: &BarrierKernel,
    xbar: &DVector<f64>,
    eps: f64,
    delta: f64,
    cfg: &FlowConfig,
) -> Result<EscapeRow> {
    if !(eps > 0.0 && delta > 0.0) {
        return Err(Error::InvalidConfig("eps and delta must be positive".into()));
    }
    let start = escape_start(problem, xbar, delta)?;
    let cfg = FlowConfig {
        neighborhood: Some((xbar.clone(), eps)),
        ..cfg.clone()
    };
    let trace = integrate(problem, kernel, &start, &cfg)?;
    Ok(EscapeRow {
        delta,
        start,
        t_exit: trace.first_exit(),
        reentries: trace.reentries(),
        min_distance_after_exit: trace.min_distance_after_exit,
    })
}

/// Exit-time table over start distances, after checking that `xbar` is spurious.
pub fn escape_experiment(
    problem: &Problem,
    kernel: &BarrierKernel,
    xbar: &DVector<f64>,
    eps: f64,
    deltas: &[f64],
    cfg: &FlowConfig,
) -> Result<Vec<EscapeRow>> {
    require_spurious(problem, kernel, xbar)?;
    deltas
        .iter()
        .map(|&delta| escape_from(problem, kernel, xbar, eps, delta, cfg))
        .collect()
}

pub fn require_spurious(problem: &Problem, kernel: &BarrierKernel, xbar: &DVector<f64>) -> Result<()> {
    let report = classify(problem, kernel, xbar, &Tolerances::default())?;
    if report.classification == Classification::Spurious {
        Ok(())
    } else {
        Err(Error::NotSpurious)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaLimit {
    pub centroids: Vec<Point>,
    pub cluster_sizes: Vec<usize>,
    pub tail_samples: usize,
    pub max_stable_residual: f64,
}

pub const MIN_TAIL_SAMPLES: usize = 100;

/// Greedy sup-norm clustering of the trajectory tail.
pub fn omega_limit_estimate(trace: &FlowTrace, tail_fraction: f64, radius: f64) -> Result<OmegaLimit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) || !(radius > 0.0) {
        return Err(Error::InvalidConfig(
            "tail fraction in (0, 1] and positive radius".into(),
        ));
    }
    let count = ((trace.samples.len() as f64) * tail_fraction).ceil() as usize;
    if count < MIN_TAIL_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_TAIL_SAMPLES,
            have: count,
        });
    }
    let tail = &trace.samples[trace.samples.len() - count..];
    let mut sums: Vec<Point> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for s in tail {
        let hit = sums
            .iter()
            .zip(&sizes)
            .position(|(sum, &k)| (sum / k as f64 - &s.x).amax() <= radius);
        match hit {
            Some(i) => {
                sums[i] += &s.x;
                sizes[i] += 1;
            }
            None => {
                sums.push(s.x.clone());
                sizes.push(1);
            }
        }
    }
    Ok(OmegaLimit {
        centroids: sums.iter().zip(&sizes).map(|(s, &k)| s / k as f64).collect(),
        cluster_sizes: sizes,
        tail_samples: count,
        max_stable_residual: tail.iter().map(|s| s.stable_residual).fold(0.0, f64::max),
    })
}
