//! Discrete schemes: the Riemannian Hessian-barrier (RHB) step
//! `x+ = R_x(-eta P_x H(x)^{-1} (d + xi))` and the Bregman (mirror) step
//! `x+ = argmin { <d + xi, x> + D(x, x_k) / eta : A x = b }`.

use alloc::collections::VecDeque;
use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::{classify, StationarityReport, Tolerances};
use crate::error::{check_dim, domain, Error, Result};
use crate::geometry::{retract, search_direction, AffineManifold, Manifold, OpenRegion, ON_MANIFOLD_TOL};
use crate::kernels::BarrierKernel;
use crate::linalg::{lstsq, spd_solve, Point};
use crate::oracles::{NoiseSource, Problem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    Constant {
        eta: f64,
    },
    /// `eta_k = eta0 / (k + 1)^alpha`
    Polynomial {
        eta0: f64,
        alpha: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    /// Upper bound applied to every step.
    pub cap: Option<f64>,
}

impl StepSchedule {
    pub fn constant(eta: f64) -> Self {
        StepSchedule {
            kind: ScheduleKind::Constant { eta },
            cap: None,
        }
    }

    pub fn polynomial(eta0: f64, alpha: f64) -> Self {
        StepSchedule {
            kind: ScheduleKind::Polynomial { eta0, alpha },
            cap: None,
        }
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            ScheduleKind::Constant { eta } => eta > 0.0 && eta.is_finite(),
            ScheduleKind::Polynomial { eta0, alpha } => eta0 > 0.0 && eta0.is_finite() && alpha > 0.5 && alpha <= 1.0,
        };
        let cap_ok = self.cap.is_none_or(|c| c > 0.0);
        if ok && cap_ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("invalid step schedule {self:?}")))
        }
    }

    pub fn eta(&self, k: usize) -> f64 {
        let raw = match self.kind {
            ScheduleKind::Constant { eta } => eta,
            ScheduleKind::Polynomial { eta0, alpha } => eta0 / ((k + 1) as f64).powf(alpha),
        };
        self.cap.map_or(raw, |c| raw.min(c))
    }

    /// `sum eta_k = inf` and `eta_k = o(1 / log k)`, decided from the parameters.
    pub fn is_vanishing_divergent(&self) -> bool {
        match self.kind {
            ScheduleKind::Constant { .. } => false,
            ScheduleKind::Polynomial { alpha, .. } => alpha > 0.0 && alpha <= 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Rhb,
    Mirror,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Rhb => "rhb",
            Scheme::Mirror => "mirror",
        }
    }
}

impl core::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rhb" => Ok(Scheme::Rhb),
            "mirror" => Ok(Scheme::Mirror),
            other => Err(Error::InvalidConfig(alloc::format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub schedule: StepSchedule,
    pub max_iters: usize,
    /// Bound on the noise norm; zero disables noise.
    pub noise: f64,
    pub scheme: Scheme,
    /// Stop once the stable residual drops to this level.
    pub stop_tol: f64,
    pub seed: u64,
    pub record_every: usize,
    pub tolerances: Tolerances,
    /// Starting point; the problem's own initial point when absent.
    pub start: Option<Point>,
    /// Number of trailing steps over which the displacement is tracked.
    pub displacement_window: usize,
    /// Also stop once every step in the trailing window is at most this long.
    pub displacement_tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            schedule: StepSchedule::constant(0.05),
            max_iters: 1000,
            noise: 0.0,
            scheme: Scheme::Rhb,
            stop_tol: 1e-9,
            seed: 0,
            record_every: 1,
            tolerances: Tolerances::default(),
            start: None,
            displacement_window: 100,
            displacement_tol: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".to_string()));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::InvalidConfig("stop_tol must be positive".to_string()));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidConfig(
                "noise bound must be finite and nonnegative".to_string(),
            ));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".to_string()));
        }
        if let Some(tol) = self.displacement_tol {
            if !(tol > 0.0) || self.displacement_window == 0 {
                return Err(Error::InvalidConfig(
                    "displacement_tol needs a positive value and a nonempty window".to_string(),
                ));
            }
        }
        Ok(())
    }
}

/// One RHB update and its decomposition
/// `x+ = x - eta (drift + noise) + eta delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhbStep {
    pub point: Point,
    /// `P_x H(x)^{-1} d`
    pub drift: Point,
    /// `P_x H(x)^{-1} xi`
    pub noise: Point,
    /// Retraction defect `(x+ - (x - eta w)) / eta`.
    pub delta: Point,
    /// Tangent-step halvings spent keeping `x+` inside `C`.
    pub halvings: usize,
}

pub fn rhb_step(
    kernel: &BarrierKernel,
    manifold: &Manifold,
    region: &OpenRegion,
    x: &DVector<f64>,
    d: &DVector<f64>,
    xi: &DVector<f64>,
    eta: f64,
    cap: Option<f64>,
) -> Result<RhbStep> {
    check_dim(x.len(), xi.len())?;
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(domain("step size must be finite and nonnegative"));
    }
    if !region.contains(x) {
        return Err(domain("iterate left the open region"));
    }
    let drift = -search_direction(kernel, manifold, x, d)?.v;
    let noise = -search_direction(kernel, manifold, x, xi)?.v;
    let w = &drift + &noise;
    let raw = x - &w * eta;
    if let (true, Some(cap), Some(_)) = (manifold.is_affine(), cap, kernel.lhscb_theta(x.len())) {
        if eta > cap && !region.contains(&raw) {
            return Err(Error::StepRejected { eta, cap });
        }
    }
    let r = retract(manifold, x, &(-&w * eta), region)?;
    let delta = if eta > 0.0 {
        (&r.point - raw) / eta
    } else {
        DVector::zeros(x.len())
    };
    Ok(RhbStep {
        point: r.point,
        drift,
        noise,
        delta,
        halvings: r.halvings,
    })
}

/// Safe step `1 / (M_hat (M_d + M_xi)^2)` for self-concordant barriers, with
/// `M_hat` bounding `|H(x)^{-1}|` and `M_d`, `M_xi` the subgradient and
/// noise bounds.
pub fn safe_step_threshold(kernel: &BarrierKernel, m_d: f64, m_xi: f64, m_hat: f64) -> Result<f64> {
    if !matches!(kernel, BarrierKernel::NegLog | BarrierKernel::LogDet) {
        return Err(Error::NotSelfConcordant(kernel.id()));
    }
    let g = m_d + m_xi;
    if !(m_d >= 0.0 && m_xi >= 0.0 && g > 0.0 && m_hat > 0.0) || !g.is_finite() || !m_hat.is_finite() {
        return Err(Error::InvalidConfig("bounds must be positive and finite".to_string()));
    }
    Ok(1.0 / (m_hat * g * g))
}

/// Largest `|H(x)^{-1}|_2` over the given points.
pub fn estimate_metric_bound<'a>(kernel: &BarrierKernel, points: impl IntoIterator<Item = &'a Point>) -> Result<f64> {
    let mut best: f64 = 0.0;
    for x in points {
        best = best.max(kernel.metric(x)?.inv_norm());
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MirrorStep {
    pub point: Point,
    /// Multiplier of `A x = b` in `grad phi(x+) = grad phi(x) - eta (g - A^T y)`.
    pub y: DVector<f64>,
    /// Dual Newton iterations (zero for closed forms).
    pub newton_iters: usize,
}

const DUAL_NEWTON_TOL: f64 = 1e-11;
const DUAL_NEWTON_MAX_ITERS: usize = 100;

/// Bregman proximal step on `{ A x = b }`.
///
/// Entropy steps use the closed forms `x ∘ exp(-eta g)` (no constraints) and
/// the normalized exponentiated gradient (one constraint `alpha * sum x = beta`).
/// Everything else goes through [`mirror_step_newton`].
pub fn mirror_step(
    kernel: &BarrierKernel,
    manifold: &AffineManifold,
    x: &DVector<f64>,
    d: &DVector<f64>,
    xi: &DVector<f64>,
    eta: f64,
) -> Result<MirrorStep> {
    check_dim(x.len(), d.len())?;
    check_dim(x.len(), xi.len())?;
    if !kernel.is_interior(x) {
        return Err(domain("mirror step needs an interior iterate"));
    }
    let a = manifold.a();
    let g = d + xi;
    if matches!(kernel, BarrierKernel::Entropy) {
        if a.nrows() == 0 {
            let point = x.component_mul(&g.map(|t| (-eta * t).exp()));
            if !kernel.is_interior(&point) {
                return Err(domain("mirror step underflowed to the boundary"));
            }
            return Ok(MirrorStep {
                point,
                y: DVector::zeros(0),
                newton_iters: 0,
            });
        }
        let alpha = a[(0, 0)];
        if a.nrows() == 1 && alpha > 0.0 && a.iter().all(|&t| t == alpha) {
            return entropy_simplex_step(x, &g, eta, alpha, manifold.b()[0]);
        }
    }
    mirror_step_newton(kernel, manifold, x, d, xi, eta)
}

fn entropy_simplex_step(x: &DVector<f64>, g: &DVector<f64>, eta: f64, alpha: f64, beta: f64) -> Result<MirrorStep> {
    let logits = DVector::from_fn(x.len(), |i, _| x[i].ln() - eta * g[i]);
    let top = logits.max();
    let weights = logits.map(|t| (t - top).exp());
    let sum = weights.sum();
    let mass = beta / alpha;
    let point = &weights * (mass / sum);
    if !BarrierKernel::Entropy.is_interior(&point) {
        return Err(domain("mirror step underflowed to the boundary"));
    }
    // log x+ = log x - eta g + eta alpha y
    let y = if eta > 0.0 {
        ((mass / sum).ln() - top) / (eta * alpha)
    } else {
        0.0
    };
    Ok(MirrorStep {
        point,
        y: DVector::from_element(1, y),
        newton_iters: 0,
    })
}

/// Generic mirror step: Newton on the dual variable `y` for
/// `A x(y) = b`, `x(y) = (grad phi)^{-1}(grad phi(x) - eta (g - A^T y))`,
/// with Jacobian `eta A H(x(y))^{-1} A^T` and Armijo damping.
pub fn mirror_step_newton(
    kernel: &BarrierKernel,
    manifold: &AffineManifold,
    x: &DVector<f64>,
    d: &DVector<f64>,
    xi: &DVector<f64>,
    eta: f64,
) -> Result<MirrorStep> {
    let a = manifold.a();
    let b = manifold.b();
    let g = d + xi;
    let z0 = kernel.grad(x)?;
    let m = a.nrows();
    let primal = |y: &DVector<f64>| -> Option<Point> {
        let z = &z0 - (&g - a.transpose() * y) * eta;
        kernel.mirror_inverse(&z).ok()
    };
    if m == 0 {
        let point = primal(&DVector::zeros(0)).ok_or(Error::DualNewtonFailed {
            residual: f64::INFINITY,
        })?;
        return Ok(MirrorStep {
            point,
            y: DVector::zeros(0),
            newton_iters: 0,
        });
    }
    let starts = [DVector::zeros(m), lstsq(&a.transpose(), &g)];
    let (mut y, mut xp) =
        starts
            .iter()
            .find_map(|y| primal(y).map(|p| (y.clone(), p)))
            .ok_or(Error::DualNewtonFailed {
                residual: f64::INFINITY,
            })?;
    let mut f = a * &xp - b;
    let mut iters = 0;
    while f.amax() > DUAL_NEWTON_TOL {
        if iters >= DUAL_NEWTON_MAX_ITERS {
            return Err(Error::DualNewtonFailed { residual: f.amax() });
        }
        iters += 1;
        let ws = kernel.metric(&xp)?;
        let jac: DMatrix<f64> = a * ws.apply_inv_mat(&a.transpose()) * eta;
        let step = spd_solve(&jac, &f).map_err(|_| Error::DualNewtonFailed { residual: f.amax() })?;
        let merit = f.norm();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &y - &step * t;
            if let Some(p) = primal(&cand) {
                let fc = a * &p - b;
                if fc.norm() <= (1.0 - 1e-4 * t) * merit {
                    y = cand;
                    xp = p;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::DualNewtonFailed { residual: f.amax() });
        }
    }
    if !kernel.is_interior(&xp) {
        return Err(domain("mirror step reached the boundary"));
    }
    Ok(MirrorStep {
        point: xp,
        y,
        newton_iters: iters,
    })
}

/// `|mirror(x, d, eta) - (x - eta P_x H^{-1} d)| / eta` per step size: how far
/// the mirror step is from its first-order (barrier) linearization.
pub fn mirror_interpolation_ratios(
    kernel: &BarrierKernel,
    manifold: &AffineManifold,
    x: &DVector<f64>,
    d: &DVector<f64>,
    etas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let m = Manifold::Affine(manifold.clone());
    let w = -search_direction(kernel, &m, x, d)?.v;
    let zero = DVector::zeros(x.len());
    etas.iter()
        .map(|&eta| {
            if !(eta > 0.0) {
                return Err(domain("step sizes must be positive"));
            }
            let p = mirror_step(kernel, manifold, x, d, &zero, eta)?.point;
            Ok((eta, (p - (x - &w * eta)).norm() / eta))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub x: Point,
    pub f: f64,
    pub eta: f64,
    pub stable_residual: f64,
    pub kkt_residual: f64,
    pub gauge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    /// The trailing displacement dropped to `displacement_tol`.
    Stalled,
    MaxIters,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::Stalled => "stalled",
            StopReason::MaxIters => "max-iters",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub report: StationarityReport,
    pub iterations: usize,
    pub stop: StopReason,
    /// Total tangent-step halvings over the run.
    pub halvings: usize,
    /// Largest `|x_{k+1} - x_k|` over the last `displacement_window` steps;
    /// `None` for shorter runs.
    pub tail_displacement: Option<f64>,
}

impl Trace {
    pub fn final_point(&self) -> &Point {
        &self.report.point
    }
}

/// Runs the configured scheme from the start point until the stable residual
/// reaches `stop_tol` or `max_iters` steps are taken.
pub fn run(problem: &Problem, kernel: &BarrierKernel, config: &SolverConfig) -> Result<Trace> {
    config.validate()?;
    if OpenRegion::for_kernel(kernel).kind != problem.region.kind {
        return Err(Error::InvalidConfig(alloc::format!(
            "kernel `{}` does not match the region of `{}`",
            kernel.id(),
            problem.name
        )));
    }
    let affine = match (&problem.manifold, config.scheme) {
        (Manifold::Affine(m), _) => Some(m.clone()),
        (Manifold::Nonlinear(_), Scheme::Mirror) => {
            return Err(Error::InvalidConfig(
                "mirror scheme needs affine constraints".to_string(),
            ))
        }
        _ => None,
    };
    let n = problem.dim();
    let mut x = config.start.clone().unwrap_or_else(|| problem.initial_point.clone());
    check_dim(n, x.len())?;
    if !problem.region.contains(&x) || !problem.manifold.contains(&x, ON_MANIFOLD_TOL) {
        return Err(domain("start point must be interior and on the manifold"));
    }
    let oracle = problem.oracle.as_ref();
    let mut noise = NoiseSource::new(config.noise, config.seed);
    let mut records = Vec::new();
    let mut halvings = 0;
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(config.displacement_window + 1);
    let mut stop = StopReason::MaxIters;
    let mut k = 0;

    let record = |k: usize, x: &Point, eta: f64, stable: f64| -> Result<TraceRecord> {
        let report = classify(problem, kernel, x, &config.tolerances)?;
        Ok(TraceRecord {
            k,
            x: x.clone(),
            f: oracle.value(x),
            eta,
            stable_residual: stable,
            kkt_residual: report.kkt.residual,
            gauge: problem.region.gauge(x),
        })
    };

    loop {
        let d = oracle.subgradient(&x);
        let stable = search_direction(kernel, &problem.manifold, &x, &d)?.v.norm();
        let eta = config.schedule.eta(k);
        let stalled = config
            .displacement_tol
            .is_some_and(|tol| recent.len() == config.displacement_window && recent.iter().all(|&step| step <= tol));
        let done = stable <= config.stop_tol || stalled || k >= config.max_iters;
        if done || k % config.record_every == 0 {
            records.push(record(k, &x, eta, stable)?);
        }
        if done {
            if stable <= config.stop_tol {
                stop = StopReason::Converged;
            } else if stalled {
                stop = StopReason::Stalled;
            }
            break;
        }
        let xi = noise.sample(n);
        let next = match (&affine, config.scheme) {
            (Some(m), Scheme::Mirror) => mirror_step(kernel, m, &x, &d, &xi, eta)?.point,
            _ => {
                let s = rhb_step(
                    kernel,
                    &problem.manifold,
                    &problem.region,
                    &x,
                    &d,
                    &xi,
                    eta,
                    config.schedule.cap,
                )?;
                halvings += s.halvings;
                s.point
            }
        };
        recent.push_back((&next - &x).norm());
        if recent.len() > config.displacement_window {
            recent.pop_front();
        }
        x = next;
        k += 1;
    }

    let tail_displacement = (recent.len() == config.displacement_window && config.displacement_window > 0)
        .then(|| recent.iter().cloned().fold(0.0, f64::max));
    let report = classify(problem, kernel, &x, &config.tolerances)?;
    Ok(Trace {
        records,
        report,
        iterations: k,
        stop,
        halvings,
        tail_displacement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::Classification;
    use crate::oracles::{flat_simplex, l1_simplex, lin_simplex, nn_pca};
    use core::f64::consts::E;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn rhb_worked_step() {
        let p = lin_simplex(2);
        let s = rhb_step(
            &p.kernel,
            &p.manifold,
            &p.region,
            &v(&[0.5, 0.5]),
            &v(&[-1.0, 0.0]),
            &v(&[0.0, 0.0]),
            0.1,
            None,
        )
        .unwrap();
        assert!((&s.point - v(&[0.525, 0.475])).amax() < 1e-15);
        assert_eq!(s.halvings, 0);
        assert!(s.delta.amax() < 1e-14);

        let s = rhb_step(
            &p.kernel,
            &p.manifold,
            &p.region,
            &v(&[0.3, 0.7]),
            &v(&[1.0, -2.0]),
            &v(&[-1.0, 2.0]),
            0.5,
            None,
        )
        .unwrap();
        assert!((s.point - v(&[0.3, 0.7])).amax() < 1e-15);
    }

    #[test]
    fn rhb_on_sphere_stays_feasible() {
        let p = nn_pca();
        let x = p.initial_point.clone();
        let d = p.oracle.subgradient(&x);
        let s = rhb_step(&p.kernel, &p.manifold, &p.region, &x, &d, &DVector::zeros(5), 0.2, None).unwrap();
        assert!((s.point.norm() - 1.0).abs() < 1e-12);
        assert!(s.point.min() > 0.0);
        let rebuilt = &x - (&s.drift + &s.noise) * 0.2 + &s.delta * 0.2;
        assert!((rebuilt - &s.point).amax() < 1e-14);
    }

    #[test]
    fn safe_step_values() {
        let k = BarrierKernel::NegLog;
        assert_eq!(safe_step_threshold(&k, 3.0, 1.0, 1.0).unwrap(), 1.0 / 16.0);
        assert_eq!(safe_step_threshold(&k, 1.0, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(safe_step_threshold(&k, 1.0, 1.0, 4.0).unwrap(), 1.0 / 16.0);
        assert_eq!(
            safe_step_threshold(&BarrierKernel::Entropy, 1.0, 1.0, 1.0).unwrap_err(),
            Error::NotSelfConcordant("entropy".to_string())
        );
    }

    #[test]
    fn step_rejected_beyond_cap() {
        let m = Manifold::Affine(AffineManifold::whole_space(1));
        let r = OpenRegion::orthant();
        let err = rhb_step(
            &BarrierKernel::NegLog,
            &m,
            &r,
            &v(&[1.0]),
            &v(&[1.0]),
            &v(&[0.0]),
            2.0,
            Some(0.5),
        );
        assert_eq!(err.unwrap_err(), Error::StepRejected { eta: 2.0, cap: 0.5 });
        let ok = rhb_step(
            &BarrierKernel::Entropy,
            &m,
            &r,
            &v(&[1.0]),
            &v(&[1.0]),
            &v(&[0.0]),
            2.0,
            Some(0.5),
        )
        .unwrap();
        assert!(ok.halvings > 0 && ok.point[0] > 0.0);
    }

    #[test]
    fn entropy_mirror_closed_forms() {
        let free = AffineManifold::whole_space(2);
        let z = v(&[0.0, 0.0]);
        let s = mirror_step(
            &BarrierKernel::Entropy,
            &free,
            &v(&[1.0, 1.0]),
            &v(&[1.0, 0.0]),
            &z,
            1.0,
        )
        .unwrap();
        assert!((s.point - v(&[1.0 / E, 1.0])).amax() < 1e-15);

        let simplex = AffineManifold::simplex(2);
        let x = v(&[0.5, 0.5]);
        let s = mirror_step(&BarrierKernel::Entropy, &simplex, &x, &v(&[-1.0, 0.0]), &z, 1.0).unwrap();
        let expected = v(&[E / (E + 1.0), 1.0 / (E + 1.0)]);
        assert!((&s.point - &expected).amax() < 1e-15);
        let generic = mirror_step_newton(&BarrierKernel::Entropy, &simplex, &x, &v(&[-1.0, 0.0]), &z, 1.0).unwrap();
        assert!((&generic.point - &expected).amax() < 1e-10);
        assert!((generic.y[0] - s.y[0]).abs() < 1e-9);

        let s = mirror_step(&BarrierKernel::Entropy, &simplex, &x, &z, &z, 1.0).unwrap();
        assert!((s.point - x).amax() < 1e-15);
    }

    #[test]
    fn generic_mirror_step_solves_optimality_system() {
        let simplex = AffineManifold::simplex(3);
        let x = v(&[0.2, 0.3, 0.5]);
        let d = v(&[0.4, -1.0, 0.3]);
        let z = DVector::zeros(3);
        for kernel in [
            BarrierKernel::NegLog,
            BarrierKernel::power(1.5).unwrap(),
            BarrierKernel::Entropy,
        ] {
            let s = mirror_step_newton(&kernel, &simplex, &x, &d, &z, 0.1).unwrap();
            let lhs = kernel.grad(&s.point).unwrap();
            let rhs = kernel.grad(&x).unwrap() - (&d - DVector::from_element(3, s.y[0])) * 0.1;
            assert!((lhs - rhs).amax() < 1e-9, "{kernel}");
            assert!((s.point.sum() - 1.0).abs() < 1e-11);
        }
    }

    #[test]
    fn lin_simplex_converges_to_first_vertex() {
        let p = lin_simplex(2);
        let cfg = SolverConfig {
            schedule: StepSchedule::constant(0.05),
            max_iters: 500,
            stop_tol: 1e-300,
            ..SolverConfig::default()
        };
        let t = run(&p, &p.kernel, &cfg).unwrap();
        // x1+ = x1 + eta x1 (1 - x1)
        let mut x1 = 0.5f64;
        for _ in 0..500 {
            x1 += 0.05 * x1 * (1.0 - x1);
        }
        assert!(t.final_point()[0] >= 0.99);
        assert!((t.final_point()[0] - x1).abs() < 1e-12);
        assert_eq!(t.records.len(), 501);
        for w in t.records.windows(2) {
            assert!(w[1].f <= w[0].f + 1e-12);
        }
    }

    #[test]
    fn flat_simplex_is_a_fixed_point() {
        let p = flat_simplex(3);
        let t = run(&p, &p.kernel, &SolverConfig::default()).unwrap();
        assert_eq!(t.iterations, 0);
        assert_eq!(t.stop, StopReason::Converged);
        assert_eq!(t.report.classification, Classification::InteriorStationary);
    }

    #[test]
    fn l1_simplex_reaches_stop_tolerance() {
        let p = l1_simplex(2);
        let t = run(&p, &p.kernel, &SolverConfig::default()).unwrap();
        assert_eq!(t.stop, StopReason::Converged);
        assert!(t.report.stable_residual <= 1e-9);
        assert!(t.report.classification.is_stationary());
    }

    #[test]
    fn mirror_run_reaches_the_minimizer() {
        let p = lin_simplex(3);
        let cfg = SolverConfig {
            scheme: Scheme::Mirror,
            max_iters: 5000,
            ..SolverConfig::default()
        };
        let t = run(&p, &p.kernel, &cfg).unwrap();
        assert_eq!(t.stop, StopReason::Converged);
        assert_eq!(t.report.classification, Classification::BoundaryStationary);
        assert!(t.tail_displacement.unwrap() <= 1e-8);
    }

    #[test]
    fn schedules() {
        let s = StepSchedule::polynomial(1.0, 1.0).with_cap(0.25);
        assert_eq!(s.eta(0), 0.25);
        assert_eq!(s.eta(7), 0.125);
        assert!(s.is_vanishing_divergent());
        assert!(!StepSchedule::constant(0.1).is_vanishing_divergent());
        assert!(StepSchedule::polynomial(1.0, 0.5).validate().is_err());
        assert!(StepSchedule::constant(0.0).validate().is_err());
    }
}
