//! Stationarity diagnostics.
//!
//! Two residuals are compared at a feasible point `x`:
//!
//! * the stable residual `|P_x H(x)^{-1} d|`, whose zeros are the equilibria
//!   of the barrier flow, and
//! * the KKT residual `min |d + A_x^T mu + G_J lambda|` over free `mu` and
//!   `lambda >= 0` on the active inequalities `J(x)`.
//!
//! A point is spurious when the first vanishes and the second does not. At
//! kinks both residuals also minimize over the box of Clarke subgradients
//! reported by the oracle.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bvls::bounded_least_squares;
use crate::error::{check_dim, domain, Error, Result};
use crate::geometry::{retract, Manifold, OpenRegion, RegionKind};
use crate::kernels::BarrierKernel;
use crate::linalg::{lstsq, null_space, psd_pinv, smat, Point};
use crate::oracles::{Problem, SubgradientOracle};

/// Manifold residual accepted by [`classify`].
pub const CLASSIFY_MANIFOLD_TOL: f64 = 1e-6;
const CLOSURE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Classification {
    InteriorStationary,
    BoundaryStationary,
    Spurious,
    Nonstationary,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::InteriorStationary => "interior-stationary",
            Classification::BoundaryStationary => "boundary-stationary",
            Classification::Spurious => "spurious",
            Classification::Nonstationary => "nonstationary",
        }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(
            self,
            Classification::InteriorStationary | Classification::BoundaryStationary
        )
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Classification {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interior-stationary" => Ok(Classification::InteriorStationary),
            "boundary-stationary" => Ok(Classification::BoundaryStationary),
            "spurious" => Ok(Classification::Spurious),
            "nonstationary" => Ok(Classification::Nonstationary),
            other => Err(Error::InvalidConfig(alloc::format!("unknown classification `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Stable residual threshold.
    pub stable: f64,
    /// KKT residual threshold.
    pub kkt: f64,
    /// Active-set tolerance, also the width of the Clarke expansion.
    pub active: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            stable: 1e-7,
            kkt: 1e-5,
            active: 1e-7,
        }
    }
}

/// Minimizer of the KKT residual.
#[derive(Debug, Clone, PartialEq)]
pub struct KktCertificate {
    pub residual: f64,
    /// Multipliers of the manifold constraints.
    pub mu: DVector<f64>,
    /// Multipliers of the active inequalities, aligned with `active`.
    pub lambda: DVector<f64>,
    pub active: Vec<usize>,
    /// Subgradient realizing the residual (selection plus Clarke shift).
    pub subgradient: Point,
    /// Whether the minimization was confirmed by enumeration.
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub point: Point,
    /// The oracle's selection at `point`.
    pub subgradient: Point,
    /// Subgradient minimizing the stable residual.
    pub stable_subgradient: Point,
    pub stable_residual: f64,
    pub kkt: KktCertificate,
    /// Projection multiplier and slack `s = d - A^T y` at the stable subgradient.
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    /// `min_i (s_i + x_i)` on orthant regions.
    pub comp_gap: Option<f64>,
    pub classification: Classification,
    pub tolerances: Tolerances,
    pub region: RegionKind,
    pub jacobian: DMatrix<f64>,
}

impl StationarityReport {
    pub fn kkt_residual(&self) -> f64 {
        self.kkt.residual
    }
}

/// Continuous extension of `H(x)^{-1}` to the closure of the domain.
///
/// Interior points use the kernel's own inverse Hessian. On the boundary only
/// the entropy (`Diag(x)`) and ball (`s (I - x x^T)`, `s = sqrt(1 - |x|^2)`)
/// kernels have a closed form.
pub fn extended_inverse_metric(kernel: &BarrierKernel, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    if kernel.is_interior(x) {
        return Ok(kernel.metric(x)?.inv_matrix());
    }
    match kernel {
        BarrierKernel::Entropy => {
            if x.iter().any(|&t| t < -CLOSURE_TOL || !t.is_finite()) {
                return Err(domain("point outside the closed orthant"));
            }
            Ok(DMatrix::from_diagonal(&x.map(|t| t.max(0.0))))
        }
        BarrierKernel::Ball => {
            let r2 = x.norm_squared();
            if !(r2 <= 1.0 + CLOSURE_TOL) {
                return Err(domain("point outside the closed unit ball"));
            }
            let s = (1.0 - r2).max(0.0).sqrt();
            let n = x.len();
            Ok((DMatrix::identity(n, n) - x * x.transpose()) * s)
        }
        _ => Err(Error::ExtensionUnavailable(kernel.id())),
    }
}

/// `P_x E` for the (possibly extended) inverse metric `E`, using a
/// pseudo-inverse of `A E A^T` so that it stays defined on the boundary.
/// Also returns the multiplier map `y(d) = (A E A^T)^+ A E d`.
fn projected_inverse_metric(e: &DMatrix<f64>, a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    if a.nrows() == 0 {
        return (e.clone(), DMatrix::zeros(0, e.ncols()));
    }
    let e_at = e * a.transpose();
    let gram = a * &e_at;
    let y_map = psd_pinv(&gram) * a * e;
    let q = e - &e_at * &y_map;
    (q, y_map)
}

fn clarke_columns(n: usize, clarke: &[(usize, f64)]) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, clarke.len());
    for (c, &(j, _)) in clarke.iter().enumerate() {
        k[(j, c)] = 1.0;
    }
    k
}

/// `min_t |Q (d + K t)|` over the Clarke box; returns the residual and `d + K t`.
fn stable_residual_with_box(q: &DMatrix<f64>, d: &DVector<f64>, clarke: &[(usize, f64)]) -> (f64, Point) {
    if clarke.is_empty() {
        return ((q * d).norm(), d.clone());
    }
    let k = clarke_columns(d.len(), clarke);
    let m = q * &k;
    let r = -(q * d);
    let lo: Vec<f64> = clarke.iter().map(|&(_, rad)| -rad).collect();
    let hi: Vec<f64> = clarke.iter().map(|&(_, rad)| rad).collect();
    let sol = bounded_least_squares(&m, &r, &lo, &hi);
    (sol.residual, d + k * sol.z)
}

/// KKT residual `min |d + A^T mu + G_J lambda + K t|` with `lambda >= 0` and
/// `t` in the Clarke box.
pub fn kkt_residual(
    a: &DMatrix<f64>,
    region: &OpenRegion,
    x: &DVector<f64>,
    d: &DVector<f64>,
    clarke: &[(usize, f64)],
) -> KktCertificate {
    let n = x.len();
    let m = a.nrows();
    let active = region.active_set(x);
    let g_all = region.inequality_gradients(x);
    let p = active.len();
    let q = clarke.len();
    let mut mat = DMatrix::zeros(n, m + p + q);
    mat.view_mut((0, 0), (n, m)).copy_from(&a.transpose());
    for (c, &j) in active.iter().enumerate() {
        mat.set_column(m + c, &g_all.column(j));
    }
    for (c, &(j, _)) in clarke.iter().enumerate() {
        mat[(j, m + p + c)] = 1.0;
    }
    let mut lo = vec![f64::NEG_INFINITY; m];
    lo.extend(core::iter::repeat_n(0.0, p));
    lo.extend(clarke.iter().map(|&(_, r)| -r));
    let mut hi = vec![f64::INFINITY; m + p];
    hi.extend(clarke.iter().map(|&(_, r)| r));
    let sol = bounded_least_squares(&mat, &(-d), &lo, &hi);
    let mut shifted = d.clone();
    for (c, &(j, _)) in clarke.iter().enumerate() {
        shifted[j] += sol.z[m + p + c];
    }
    KktCertificate {
        residual: sol.residual,
        mu: sol.z.rows(0, m).into_owned(),
        lambda: sol.z.rows(m, p).into_owned(),
        active,
        subgradient: shifted,
        verified: sol.verified,
    }
}

/// Full stationarity report at a point of `M ∩ closure(C)`.
pub fn classify(
    problem: &Problem,
    kernel: &BarrierKernel,
    x: &DVector<f64>,
    tol: &Tolerances,
) -> Result<StationarityReport> {
    classify_parts(
        problem.oracle.as_ref(),
        &problem.manifold,
        &problem.region,
        kernel,
        x,
        tol,
    )
}

pub fn classify_parts(
    oracle: &dyn SubgradientOracle,
    manifold: &Manifold,
    region: &OpenRegion,
    kernel: &BarrierKernel,
    x: &DVector<f64>,
    tol: &Tolerances,
) -> Result<StationarityReport> {
    check_dim(oracle.dim(), x.len())?;
    if !x.iter().all(|t| t.is_finite()) {
        return Err(domain("non-finite coordinates"));
    }
    if !manifold.contains(x, CLASSIFY_MANIFOLD_TOL) {
        return Err(Error::DomainViolation(alloc::format!(
            "constraint residual {:e} exceeds {CLASSIFY_MANIFOLD_TOL:e}",
            manifold.residual(x).amax()
        )));
    }
    if !region.closure_contains(x, CLOSURE_TOL) {
        return Err(domain("point outside the closed region"));
    }
    let region = OpenRegion {
        active_tol: tol.active,
        ..*region
    };
    let d = oracle.subgradient(x);
    let clarke = oracle.clarke_box(x, tol.active);
    let e = extended_inverse_metric(kernel, x)?;
    let a = manifold.jacobian_checked(x)?;
    let (q, y_map) = projected_inverse_metric(&e, &a);
    let (stable_residual, d_stable) = stable_residual_with_box(&q, &d, &clarke);
    let y = &y_map * &d_stable;
    let s = &d_stable - a.transpose() * &y;
    let kkt = kkt_residual(&a, &region, x, &d, &clarke);

    let classification = if kkt.residual <= tol.kkt {
        if kkt.active.is_empty() {
            Classification::InteriorStationary
        } else {
            Classification::BoundaryStationary
        }
    } else if stable_residual <= tol.stable {
        Classification::Spurious
    } else {
        Classification::Nonstationary
    };
    let comp_gap = (region.kind == RegionKind::Orthant).then(|| (&s + x).min());
    Ok(StationarityReport {
        point: x.clone(),
        subgradient: d,
        stable_subgradient: d_stable,
        stable_residual,
        kkt,
        y,
        s,
        comp_gap,
        classification,
        tolerances: *tol,
        region: region.kind,
        jacobian: a,
    })
}

/// Largest `|E g|` over the generators `g` of the normal cone of `C` at `x`,
/// with `E` the extended inverse metric. Zero means the normal cone lies in
/// the null space of `E`.
pub fn normal_cone_annihilation(kernel: &BarrierKernel, region: &OpenRegion, x: &DVector<f64>) -> Result<f64> {
    let e = extended_inverse_metric(kernel, x)?;
    let g = region.inequality_gradients(x);
    Ok(region
        .active_set(x)
        .iter()
        .map(|&j| (&e * g.column(j)).norm())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComplementarityStatus {
    Holds,
    StrictlyViolated,
    Indeterminate,
}

impl ComplementarityStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ComplementarityStatus::Holds => "holds",
            ComplementarityStatus::StrictlyViolated => "strictly-violated",
            ComplementarityStatus::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplementarityOutcome {
    pub status: ComplementarityStatus,
    /// `min_i (s_i + x_i)` for the report's multiplier.
    pub reported_min: f64,
    /// Best `min_i (s_i + x_i)` over all multipliers keeping `x ∘ s = 0`;
    /// `None` when no such multiplier exists.
    pub best_min: Option<f64>,
    /// Whether `best_min` came from exact vertex enumeration.
    pub exact: bool,
}

/// Box on the free multiplier directions in the complementarity search.
const MULTIPLIER_BOX: f64 = 1e6;
const VERTEX_LIMIT: usize = 8;
const COMPLEMENTARITY_SAMPLES: usize = 4096;

/// Checks `s(x) + x >= 0` on orthant problems.
///
/// Valid multipliers are those `y` with `(d - A^T y)_i = 0` on the inactive
/// coordinates. The best achievable `min (s + x)` is a linear program in the
/// free part of `y`, solved by vertex enumeration when small and by sampling
/// otherwise.
pub fn complementarity_check(report: &StationarityReport, tol: f64) -> Result<ComplementarityOutcome> {
    if report.region != RegionKind::Orthant {
        return Err(Error::UnsupportedRegion);
    }
    let x = &report.point;
    let d = &report.stable_subgradient;
    let a = &report.jacobian;
    let n = x.len();
    let m = a.nrows();
    let reported_min = (&report.s + x).min();
    let act = report.tolerances.active;
    let inactive: Vec<usize> = (0..n).filter(|&i| x[i] > act).collect();
    let active: Vec<usize> = (0..n).filter(|&i| x[i] <= act).collect();

    let b = DMatrix::from_fn(inactive.len(), m, |r, c| a[(c, inactive[r])]);
    let d_in = DVector::from_fn(inactive.len(), |r, _| d[inactive[r]]);
    let y0 = lstsq(&b, &d_in);
    let consistent = (&b * &y0 - &d_in).amax() <= 1e-8 * (1.0 + d.amax());

    let (best_min, exact) = if !consistent {
        (None, true)
    } else {
        let inactive_min = inactive.iter().map(|&i| x[i]).fold(f64::INFINITY, f64::min);
        let basis = null_space(&b, m);
        let k = basis.ncols();
        let rows: Vec<(DVector<f64>, f64)> = active
            .iter()
            .map(|&j| {
                let aj = a.column(j).into_owned();
                let c = d[j] - aj.dot(&y0) + x[j];
                (basis.transpose() * aj, c)
            })
            .collect();
        let (value, exact) = if rows.is_empty() {
            (f64::INFINITY, true)
        } else if k == 0 {
            (rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min), true)
        } else if m + active.len() <= VERTEX_LIMIT {
            (max_min_by_vertices(&rows, k), true)
        } else {
            (max_min_by_sampling(&rows, k), false)
        };
        (Some(value.min(inactive_min)), exact)
    };

    let status = if reported_min >= -tol {
        ComplementarityStatus::Holds
    } else {
        match best_min {
            Some(v) if v < -tol && exact => ComplementarityStatus::StrictlyViolated,
            _ => ComplementarityStatus::Indeterminate,
        }
    };
    Ok(ComplementarityOutcome {
        status,
        reported_min,
        best_min,
        exact,
    })
}

/// `max_{z, tau} tau` s.t. `tau + h_j^T z <= c_j`, `|z| <= MULTIPLIER_BOX`.
fn max_min_by_vertices(rows: &[(DVector<f64>, f64)], k: usize) -> f64 {
    // Constraint rows as (coefficients on (z, tau), rhs).
    let mut cons: Vec<(DVector<f64>, f64)> = Vec::new();
    for (h, c) in rows {
        let mut w = DVector::zeros(k + 1);
        w.rows_mut(0, k).copy_from(h);
        w[k] = 1.0;
        cons.push((w, *c));
    }
    for l in 0..k {
        for sign in [1.0, -1.0] {
            let mut w = DVector::zeros(k + 1);
            w[l] = sign;
            cons.push((w, MULTIPLIER_BOX));
        }
    }
    let dim = k + 1;
    let mut best = f64::NEG_INFINITY;
    let mut idx: Vec<usize> = (0..dim).collect();
    let total = cons.len();
    loop {
        let mat = DMatrix::from_fn(dim, dim, |r, c| cons[idx[r]].0[c]);
        let rhs = DVector::from_fn(dim, |r, _| cons[idx[r]].1);
        if let Some(sol) = mat.lu().solve(&rhs) {
            let feasible = cons.iter().all(|(w, c)| w.dot(&sol) <= c + 1e-9 * (1.0 + c.abs()));
            if feasible && sol.iter().all(|v| v.is_finite()) {
                best = best.max(sol[k]);
            }
        }
        // Next combination in lexicographic order.
        let mut i = dim;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < total - dim + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..dim {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn max_min_by_sampling(rows: &[(DVector<f64>, f64)], k: usize) -> f64 {
    let eval = |z: &DVector<f64>| rows.iter().map(|(h, c)| c - h.dot(z)).fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best = eval(&DVector::zeros(k));
    for i in 0..COMPLEMENTARITY_SAMPLES {
        let scale = 10f64.powi((i % 7) as i32 - 3);
        let z = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0) * scale);
        best = best.max(eval(&z));
    }
    best
}

/// Uniform sample from the closed ball of radius `radius` in `R^dim`.
fn sample_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    if dim == 0 || radius == 0.0 {
        return DVector::zeros(dim);
    }
    let dir = loop {
        let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 1e-300 {
            break g / norm;
        }
    };
    let r: f64 = rng.random_range(0.0..1.0);
    dir * (radius * r.powf(1.0 / dim as f64))
}

/// Objective `f(x) + <grad phi(x), v>` with subgradient `d + H(x) v`.
#[derive(Debug, Clone)]
pub struct PerturbedOracle {
    pub base: Arc<dyn SubgradientOracle>,
    pub kernel: BarrierKernel,
    pub v: DVector<f64>,
}

impl SubgradientOracle for PerturbedOracle {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        let tilt = self.kernel.grad(x).map(|g| g.dot(&self.v)).unwrap_or(f64::INFINITY);
        self.base.value(x) + tilt
    }
    fn subgradient(&self, x: &DVector<f64>) -> Point {
        let d = self.base.subgradient(x);
        match self.kernel.hess_apply(x, &self.v) {
            Ok(hv) => d + hv,
            Err(_) => DVector::from_element(x.len(), f64::NAN),
        }
    }
    fn clarke_box(&self, x: &DVector<f64>, delta: f64) -> Vec<(usize, f64)> {
        self.base.clarke_box(x, delta)
    }
    /// The barrier tilt is unbounded near the boundary.
    fn lipschitz_bound(&self) -> f64 {
        if self.v.iter().all(|&t| t == 0.0) {
            self.base.lipschitz_bound()
        } else {
            f64::INFINITY
        }
    }
}

/// A problem with tilted objective `f_v` and shifted constraint `c + u`.
#[derive(Debug, Clone)]
pub struct PerturbedProblem {
    pub base: Problem,
    pub kernel: BarrierKernel,
    pub epsilon: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

/// Draws `u` and `v` uniformly from the `epsilon`-balls. On orthant regions
/// `v` is taken from the negative orthant so the induced slack `-H(x) v` is
/// nonnegative.
pub fn perturb(problem: &Problem, kernel: &BarrierKernel, epsilon: f64, seed: u64) -> Result<PerturbedProblem> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidConfig(alloc::format!("perturbation size {epsilon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = problem.manifold.codim();
    let n = problem.dim();
    let u = sample_ball(&mut rng, m, epsilon);
    let mut v = sample_ball(&mut rng, n, epsilon);
    if problem.region.kind == RegionKind::Orthant {
        v = -v.abs();
    }
    Ok(PerturbedProblem {
        base: problem.clone(),
        kernel: *kernel,
        epsilon,
        u,
        v,
    })
}

impl PerturbedProblem {
    /// Explicit perturbation, mainly for tests.
    pub fn with(base: &Problem, kernel: &BarrierKernel, u: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        check_dim(base.manifold.codim(), u.len())?;
        check_dim(base.dim(), v.len())?;
        Ok(PerturbedProblem {
            base: base.clone(),
            kernel: *kernel,
            epsilon: u.norm().max(v.norm()),
            u,
            v,
        })
    }

    pub fn is_trivial(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|&t| t == 0.0)
    }

    /// The perturbed problem as a runnable [`Problem`], with the base initial
    /// point moved onto the shifted manifold.
    pub fn problem(&self) -> Result<Problem> {
        if self.is_trivial() {
            return Ok(self.base.clone());
        }
        let manifold = self.base.manifold.shifted(&self.u)?;
        let x0 = &self.base.initial_point;
        let start = match &manifold {
            Manifold::Affine(aff) => {
                let a = aff.a();
                if a.nrows() == 0 {
                    x0.clone()
                } else {
                    let gap = aff.b() - a * x0;
                    x0 + a.transpose() * lstsq(&(a * a.transpose()), &gap)
                }
            }
            Manifold::Nonlinear(_) => retract(&manifold, x0, &DVector::zeros(x0.len()), &self.base.region)?.point,
        };
        if !self.base.region.contains(&start) {
            return Err(domain("shifted manifold misses the open region near the start"));
        }
        Ok(Problem {
            name: alloc::format!("{}+perturbed", self.base.name),
            oracle: Arc::new(PerturbedOracle {
                base: self.base.oracle.clone(),
                kernel: self.kernel,
                v: self.v.clone(),
            }),
            manifold,
            region: self.base.region,
            kernel: self.kernel,
            initial_point: start,
            known_points: Vec::new(),
            mfcq: self.base.mfcq,
        })
    }
}

/// `(H^{-1}(d - A^T y) + v, c(x) + u)` with `d` the base subgradient; both
/// parts vanish at stable points of the perturbed problem.
pub fn perturbed_residual_system(
    pp: &PerturbedProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dim(pp.base.dim(), x.len())?;
    check_dim(pp.base.manifold.codim(), y.len())?;
    let ws = pp.kernel.metric(x)?;
    let d = pp.base.oracle.subgradient(x);
    let a = pp.base.manifold.jacobian(x);
    let r1 = ws.apply_inv(&(d - a.transpose() * y)) + &pp.v;
    let r2 = pp.base.manifold.residual(x) + &pp.u;
    Ok((r1, r2))
}

/// `s = -H(X) V = -X^{-1} V X^{-1}` for the log-det kernel; returns whether
/// `s` is positive definite.
pub fn slack_sign_check_psd(x: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<bool> {
    if x.nrows() != x.ncols() || v.shape() != x.shape() {
        return Err(domain("X and V must be square of equal size"));
    }
    let sym = |m: &DMatrix<f64>| (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
    if !sym(x) || !sym(v) {
        return Err(domain("X and V must be symmetric"));
    }
    let chol = x
        .clone()
        .cholesky()
        .ok_or_else(|| domain("X is not positive definite"))?;
    let x_inv = chol.inverse();
    let s = -(&x_inv * v * &x_inv);
    let s = (&s + s.transpose()) * 0.5;
    Ok(s.cholesky().is_some())
}

/// Same check with `X` and `V` given as scaled upper-triangle vectors.
pub fn slack_sign_check_svec(x: &DVector<f64>, v: &DVector<f64>) -> Result<bool> {
    slack_sign_check_psd(&smat(x)?, &smat(v)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootCluster {
    /// Grid points in the connected component.
    pub size: usize,
    pub best_point: Point,
    pub best_residual: f64,
    /// Newton-refined root of the full residual system, if it converged.
    pub refined: Option<Point>,
    pub refined_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootScan {
    pub grid_points: usize,
    pub roots: usize,
    pub threshold: f64,
    pub clusters: Vec<RootCluster>,
}

/// Stable-set residual of the perturbed problem at `x`, minimized over `y`.
fn perturbed_stable_residual(pp: &PerturbedProblem, a: &DMatrix<f64>, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let ws = pp.kernel.metric(x)?;
    let d = pp.base.oracle.subgradient(x);
    let w = ws.apply_inv(&d) + &pp.v;
    let b = ws.apply_inv_mat(&a.transpose());
    let y = lstsq(&b, &w);
    Ok(((w - b * &y).norm(), y))
}

/// Dense grid scan of the perturbed stable equation on a simplex-type problem
/// `{ x > 0 : alpha * sum x = beta }`.
///
/// Grid points `x = T i / N` with `N = round(1 / spacing)`, positive integer
/// `i` summing to `N` and `T` the total mass. Points with residual below
/// `n * spacing * |v|` are roots; roots are grouped into connected grid
/// components and each component is refined by Newton on the full system.
pub fn scan_simplex_roots(pp: &PerturbedProblem, spacing: f64) -> Result<RootScan> {
    let Manifold::Affine(aff) = &pp.base.manifold else {
        return Err(Error::InvalidConfig(
            "grid scan needs an affine simplex constraint".to_string(),
        ));
    };
    let a = aff.a().clone();
    let n = a.ncols();
    let alpha = if a.nrows() == 1 { a[(0, 0)] } else { 0.0 };
    if a.nrows() != 1 || alpha <= 0.0 || a.iter().any(|&t| t != alpha) || n < 2 {
        return Err(Error::InvalidConfig(
            "grid scan needs a constraint alpha * sum x = beta".to_string(),
        ));
    }
    if !(spacing > 0.0 && spacing < 0.5) {
        return Err(Error::InvalidConfig(alloc::format!("grid spacing {spacing}")));
    }
    let total = (aff.b()[0] - pp.u[0]) / alpha;
    if total <= 0.0 {
        return Err(domain("shifted simplex is empty"));
    }
    let big_n = (1.0 / spacing).round() as usize;
    if big_n < n {
        return Err(Error::InvalidConfig("grid too coarse for the dimension".to_string()));
    }
    let threshold = n as f64 * spacing * pp.v.norm() + 1e-12;

    let base = (big_n + 1) as u64;
    let encode = |idx: &[usize]| idx.iter().fold(0u64, |acc, &i| acc * base + i as u64);

    let mut roots: Vec<(Vec<usize>, f64, Point)> = Vec::new();
    let mut grid_points = 0usize;
    let mut idx = vec![1usize; n];
    idx[n - 1] = big_n - (n - 1);
    loop {
        grid_points += 1;
        let x = DVector::from_fn(n, |i, _| total * idx[i] as f64 / big_n as f64);
        let (res, _) = perturbed_stable_residual(pp, &a, &x)?;
        if res <= threshold {
            roots.push((idx.clone(), res, x));
        }
        if !next_composition(&mut idx, big_n) {
            break;
        }
    }

    let lookup: BTreeMap<u64, usize> = roots.iter().enumerate().map(|(k, r)| (encode(&r.0), k)).collect();
    let mut component = vec![usize::MAX; roots.len()];
    let mut clusters = Vec::new();
    for start in 0..roots.len() {
        if component[start] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        component[start] = id;
        let mut queue = VecDeque::from([start]);
        let mut size = 0;
        let mut best = start;
        while let Some(k) = queue.pop_front() {
            size += 1;
            if roots[k].1 < roots[best].1 {
                best = k;
            }
            let cell = roots[k].0.clone();
            for from in 0..n {
                for to in 0..n {
                    if from == to || cell[from] <= 1 {
                        continue;
                    }
                    let mut nb = cell.clone();
                    nb[from] -= 1;
                    nb[to] += 1;
                    if let Some(&j) = lookup.get(&encode(&nb)) {
                        if component[j] == usize::MAX {
                            component[j] = id;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        let best_point = roots[best].2.clone();
        let (refined, refined_residual) = refine_root(pp, &best_point);
        clusters.push(RootCluster {
            size,
            best_residual: roots[best].1,
            best_point,
            refined,
            refined_residual,
        });
    }
    Ok(RootScan {
        grid_points,
        roots: roots.len(),
        threshold,
        clusters,
    })
}

/// Advances `idx` (positive entries summing to `total`) to the next
/// composition, treating all but the last entry as odometer digits.
fn next_composition(idx: &mut [usize], total: usize) -> bool {
    let n = idx.len();
    let mut i = n - 1;
    while i > 0 {
        i -= 1;
        let head: usize = idx[..n - 1].iter().sum();
        if head + 1 < total {
            idx[i] += 1;
            idx[n - 1] = total - head - 1;
            return true;
        }
        idx[i] = 1;
    }
    false
}

/// Newton with a finite-difference Jacobian on `(x, y) -> residual system`,
/// damped to stay inside the region.
fn refine_root(pp: &PerturbedProblem, x0: &DVector<f64>) -> (Option<Point>, f64) {
    let n = x0.len();
    let m = pp.base.manifold.codim();
    let a = pp.base.manifold.jacobian(x0);
    let Ok((_, y0)) = perturbed_stable_residual(pp, &a, x0) else {
        return (None, f64::INFINITY);
    };
    let stack = |x: &DVector<f64>, y: &DVector<f64>| -> Option<DVector<f64>> {
        let (r1, r2) = perturbed_residual_system(pp, x, y).ok()?;
        let mut out = DVector::zeros(n + m);
        out.rows_mut(0, n).copy_from(&r1);
        out.rows_mut(n, m).copy_from(&r2);
        Some(out)
    };
    let mut z = DVector::zeros(n + m);
    z.rows_mut(0, n).copy_from(x0);
    z.rows_mut(n, m).copy_from(&y0);
    let split = |z: &DVector<f64>| (z.rows(0, n).into_owned(), z.rows(n, m).into_owned());
    let Some(mut f) = stack(&split(&z).0, &split(&z).1) else {
        return (None, f64::INFINITY);
    };
    for _ in 0..50 {
        if f.norm() <= 1e-14 {
            break;
        }
        let mut jac = DMatrix::zeros(n + m, n + m);
        for c in 0..n + m {
            let h = 1e-7 * (1.0 + z[c].abs());
            let mut zp = z.clone();
            zp[c] += h;
            let (xp, yp) = split(&zp);
            let Some(fp) = stack(&xp, &yp) else {
                return (None, f.norm());
            };
            jac.set_column(c, &((fp - &f) / h));
        }
        let step = lstsq(&jac, &(-&f));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let zn = &z + &step * t;
            let (xn, yn) = split(&zn);
            if pp.base.region.contains(&xn) {
                if let Some(fn_) = stack(&xn, &yn) {
                    if fn_.norm() < f.norm() {
                        z = zn;
                        f = fn_;
                        accepted = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let res = f.norm();
    let (x, _) = split(&z);
    (res.is_finite().then_some(x), res)
}
