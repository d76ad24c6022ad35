//! Feasible geometry: a smooth manifold `M` (affine or given by `c(x) = 0`)
//! intersected with an open region `C`, together with the Hessian-metric
//! tangent projection, the dual multiplier and slack, and retractions.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt::Debug;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, domain, Error, Result};
use crate::kernels::{BarrierKernel, MetricWorkspace, BOUNDARY_GAUGE};
use crate::linalg::{full_row_rank, lstsq, min_sym_eigenvalue, smat, spd_solve, svec, Point};

/// Manifold membership tolerance for projection inputs.
pub const ON_MANIFOLD_TOL: f64 = 1e-8;
/// Feasibility reached by the nonlinear retraction.
pub const RETRACTION_TOL: f64 = 1e-12;
pub const MAX_RETRACTION_HALVINGS: usize = 60;
/// Default tolerance defining the active set `{ i : g_i(x) >= -tol }`.
pub const ACTIVE_TOL: f64 = 1e-7;

/// `{ x : A x = b }` with `A` of full row rank. Zero rows means `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineManifold {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl AffineManifold {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        check_dim(a.nrows(), b.len())?;
        if !full_row_rank(&a) {
            return Err(Error::RankDeficient);
        }
        Ok(AffineManifold { a, b })
    }

    pub fn whole_space(n: usize) -> Self {
        AffineManifold {
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
        }
    }

    /// `sum x_i = 1`
    pub fn simplex(n: usize) -> Self {
        AffineManifold {
            a: DMatrix::from_element(1, n, 1.0),
            b: DVector::from_element(1, 1.0),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
}

/// A smooth constraint map `c : R^n -> R^m` with Jacobian `A_x = grad c(x)^T`.
pub trait ConstraintMap: Debug + Send + Sync {
    fn name(&self) -> &str;
    fn ambient_dim(&self) -> usize;
    fn codim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `m x n` Jacobian.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `c(x) = |x|^2 - r^2`
#[derive(Debug, Clone, PartialEq)]
pub struct Sphere {
    pub n: usize,
    pub radius: f64,
}

impl ConstraintMap for Sphere {
    fn name(&self) -> &str {
        "sphere"
    }

    fn ambient_dim(&self) -> usize {
        self.n
    }

    fn codim(&self) -> usize {
        1
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x.norm_squared() - self.radius * self.radius)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, x.len(), (x * 2.0).as_slice())
    }
}

/// `{ x : c(x) + shift = 0 }`
#[derive(Debug, Clone)]
pub struct NonlinearManifold {
    map: Arc<dyn ConstraintMap>,
    shift: DVector<f64>,
}

impl NonlinearManifold {
    pub fn new(map: Arc<dyn ConstraintMap>) -> Self {
        let shift = DVector::zeros(map.codim());
        NonlinearManifold { map, shift }
    }

    pub fn map(&self) -> &dyn ConstraintMap {
        self.map.as_ref()
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }
}

#[derive(Debug, Clone)]
pub enum Manifold {
    Affine(AffineManifold),
    Nonlinear(NonlinearManifold),
}

impl Manifold {
    pub fn sphere(n: usize) -> Self {
        Manifold::Nonlinear(NonlinearManifold::new(Arc::new(Sphere { n, radius: 1.0 })))
    }

    pub fn name(&self) -> String {
        match self {
            Manifold::Affine(m) if m.a.nrows() == 0 => String::from("whole-space"),
            Manifold::Affine(_) => String::from("affine"),
            Manifold::Nonlinear(m) => String::from(m.map.name()),
        }
    }

    pub fn ambient_dim(&self) -> Option<usize> {
        match self {
            Manifold::Affine(m) => Some(m.a.ncols()),
            Manifold::Nonlinear(m) => Some(m.map.ambient_dim()),
        }
    }

    pub fn codim(&self) -> usize {
        match self {
            Manifold::Affine(m) => m.a.nrows(),
            Manifold::Nonlinear(m) => m.map.codim(),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Manifold::Affine(_))
    }

    /// Constraint value `c(x)`, i.e. `A x - b` in the affine case.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Manifold::Affine(m) => &m.a * x - &m.b,
            Manifold::Nonlinear(m) => m.map.eval(x) + &m.shift,
        }
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Manifold::Affine(m) => m.a.clone(),
            Manifold::Nonlinear(m) => m.map.jacobian(x),
        }
    }

    /// Jacobian with the full-row-rank check applied.
    pub fn jacobian_checked(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let a = self.jacobian(x);
        if self.is_affine() || full_row_rank(&a) {
            Ok(a)
        } else {
            Err(Error::RankDeficient)
        }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        let r = self.residual(x);
        r.is_empty() || r.amax() <= tol
    }

    /// The manifold `{ c(x) + u = 0 }`; for affine manifolds `b <- b - u`.
    pub fn shifted(&self, u: &DVector<f64>) -> Result<Manifold> {
        check_dim(self.codim(), u.len())?;
        Ok(match self {
            Manifold::Affine(m) => Manifold::Affine(AffineManifold {
                a: m.a.clone(),
                b: &m.b - u,
            }),
            Manifold::Nonlinear(m) => Manifold::Nonlinear(NonlinearManifold {
                map: m.map.clone(),
                shift: &m.shift + u,
            }),
        })
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if let Some(n) = self.ambient_dim() {
            check_dim(n, x.len())?;
        }
        if self.contains(x, ON_MANIFOLD_TOL) {
            Ok(())
        } else {
            Err(Error::DomainViolation(format!(
                "constraint residual {:e} exceeds {ON_MANIFOLD_TOL:e}",
                self.residual(x).amax()
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    /// `{ x > 0 }`, with `g_i(x) = -x_i`
    Orthant,
    /// `{ |x| < 1 }`, with `g(x) = |x|^2 - 1`
    UnitBall,
    /// Positive definite matrices, with `g(X) = -lambda_min(X)`
    PositiveDefinite,
}

/// Open region `C = { g(x) < 0 }`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenRegion {
    pub kind: RegionKind,
    pub active_tol: f64,
}

impl OpenRegion {
    pub fn new(kind: RegionKind) -> Self {
        OpenRegion {
            kind,
            active_tol: ACTIVE_TOL,
        }
    }

    pub fn orthant() -> Self {
        Self::new(RegionKind::Orthant)
    }

    pub fn unit_ball() -> Self {
        Self::new(RegionKind::UnitBall)
    }

    /// The region matching a kernel's domain.
    pub fn for_kernel(kernel: &BarrierKernel) -> Self {
        match kernel {
            BarrierKernel::Ball => Self::new(RegionKind::UnitBall),
            BarrierKernel::LogDet => Self::new(RegionKind::PositiveDefinite),
            _ => Self::new(RegionKind::Orthant),
        }
    }

    pub fn inequalities(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            RegionKind::Orthant => -x,
            RegionKind::UnitBall => DVector::from_element(1, x.norm_squared() - 1.0),
            RegionKind::PositiveDefinite => {
                let g = smat(x).map(|m| -min_sym_eigenvalue(&m)).unwrap_or(f64::NAN);
                DVector::from_element(1, g)
            }
        }
    }

    /// Gradients of the `g_i` as columns (`n x p`).
    pub fn inequality_gradients(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        match self.kind {
            RegionKind::Orthant => -DMatrix::<f64>::identity(n, n),
            RegionKind::UnitBall => DMatrix::from_column_slice(n, 1, (x * 2.0).as_slice()),
            RegionKind::PositiveDefinite => {
                let col = smat(x)
                    .ok()
                    .map(|m| {
                        let eig = m.symmetric_eigen();
                        let (idx, _) = eig
                            .eigenvalues
                            .iter()
                            .enumerate()
                            .fold((0, f64::INFINITY), |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc });
                        let q = eig.eigenvectors.column(idx).into_owned();
                        -svec(&(&q * q.transpose()))
                    })
                    .unwrap_or_else(|| DVector::zeros(n));
                DMatrix::from_column_slice(n, 1, col.as_slice())
            }
        }
    }

    /// `J(x) = { i : g_i(x) >= -active_tol }`
    pub fn active_set(&self, x: &DVector<f64>) -> Vec<usize> {
        self.inequalities(x)
            .iter()
            .enumerate()
            .filter(|(_, g)| **g >= -self.active_tol)
            .map(|(i, _)| i)
            .collect()
    }

    /// Boundary gauge of the region (`min x_i`, `1 - |x|`, `lambda_min`).
    pub fn gauge(&self, x: &DVector<f64>) -> f64 {
        match self.kind {
            RegionKind::Orthant => BarrierKernel::Entropy.gauge(x),
            RegionKind::UnitBall => BarrierKernel::Ball.gauge(x),
            RegionKind::PositiveDefinite => BarrierKernel::LogDet.gauge(x),
        }
    }

    /// Membership with the numerical boundary margin shared with the kernels.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.gauge(x) >= BOUNDARY_GAUGE
    }

    /// Membership in the closure, up to `tol`.
    pub fn closure_contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.gauge(x) >= -tol
    }
}

/// Multiplier `y`, dual slack `s = d - A^T y` and direction `v = -H^{-1} s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualData {
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    pub v: DVector<f64>,
}

fn prepare(kernel: &BarrierKernel, manifold: &Manifold, x: &DVector<f64>) -> Result<(MetricWorkspace, DMatrix<f64>)> {
    manifold.check_point(x)?;
    let ws = kernel.metric(x)?;
    let a = manifold.jacobian_checked(x)?;
    Ok((ws, a))
}

/// Multiplier `(A H^{-1} A^T)^{-1} A w` of the metric projection of `w`.
fn projection_multiplier(
    ws: &MetricWorkspace,
    a: &DMatrix<f64>,
    w: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let hinv_at = ws.apply_inv_mat(&a.transpose());
    if a.nrows() == 0 {
        return Ok((DVector::zeros(0), hinv_at));
    }
    let gram = a * &hinv_at;
    let y = spd_solve(&gram, &(a * w))?;
    Ok((y, hinv_at))
}

/// `P_x u = u - H^{-1} A^T (A H^{-1} A^T)^{-1} A u`, the projection onto
/// `ker A_x` that is orthogonal in the metric `H(x)`.
pub fn project_tangent(
    kernel: &BarrierKernel,
    manifold: &Manifold,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<Point> {
    check_dim(x.len(), u.len())?;
    let (ws, a) = prepare(kernel, manifold, x)?;
    let (y, hinv_at) = projection_multiplier(&ws, &a, u)?;
    Ok(u - hinv_at * y)
}

/// Primal-dual solution of `min_{A_x v = 0} <d, v> + |v|_x^2 / 2`.
pub fn search_direction(
    kernel: &BarrierKernel,
    manifold: &Manifold,
    x: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<DualData> {
    check_dim(x.len(), d.len())?;
    let (ws, a) = prepare(kernel, manifold, x)?;
    search_direction_with(&ws, &a, d)
}

pub(crate) fn search_direction_with(ws: &MetricWorkspace, a: &DMatrix<f64>, d: &DVector<f64>) -> Result<DualData> {
    let w = ws.apply_inv(d);
    let (y, hinv_at) = projection_multiplier(ws, a, &w)?;
    let v = -(w - hinv_at * &y);
    let s = d - a.transpose() * &y;
    Ok(DualData { y, s, v })
}

/// Stable-set gauge in multiplier form: `min_y |H^{-1}(d - A^T y)|`, solved as
/// an ordinary least-squares problem.
pub fn multiplier_form_residual(
    kernel: &BarrierKernel,
    manifold: &Manifold,
    x: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<f64> {
    check_dim(x.len(), d.len())?;
    let (ws, a) = prepare(kernel, manifold, x)?;
    let hinv_d = ws.apply_inv(d);
    if a.nrows() == 0 {
        return Ok(hinv_d.norm());
    }
    let hinv_at = ws.apply_inv_mat(&a.transpose());
    let y = lstsq(&hinv_at, &hinv_d);
    Ok((hinv_d - hinv_at * y).norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retraction {
    pub point: Point,
    /// Number of times the tangent step was halved to stay inside `C`.
    pub halvings: usize,
}

fn gauss_newton_restore(manifold: &Manifold, z: &DVector<f64>) -> Option<Point> {
    let mut z = z.clone();
    for _ in 0..50 {
        let c = manifold.residual(&z);
        if c.amax() <= RETRACTION_TOL {
            return Some(z);
        }
        let a = manifold.jacobian(&z);
        let gram = &a * a.transpose();
        let corr = spd_solve(&gram, &c).ok()?;
        z -= a.transpose() * corr;
        if !z.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    (manifold.residual(&z).amax() <= RETRACTION_TOL).then_some(z)
}

/// Map `x + step` back onto `M ∩ C`.
///
/// Affine manifolds use the identity; nonlinear ones use Gauss-Newton
/// restoration `z <- z - A_z^T (A_z A_z^T)^{-1} c(z)`. The tangent step is
/// halved until the restored point lies in `C`.
pub fn retract(manifold: &Manifold, x: &DVector<f64>, step: &DVector<f64>, region: &OpenRegion) -> Result<Retraction> {
    check_dim(x.len(), step.len())?;
    let mut t = 1.0;
    for halvings in 0..=MAX_RETRACTION_HALVINGS {
        let z = x + step * t;
        let restored = match manifold {
            Manifold::Affine(_) => Some(z),
            Manifold::Nonlinear(_) => gauss_newton_restore(manifold, &z),
        };
        if let Some(p) = restored {
            if region.contains(&p) {
                return Ok(Retraction { point: p, halvings });
            }
        }
        t *= 0.5;
    }
    Err(Error::RetractionFailed {
        halvings: MAX_RETRACTION_HALVINGS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetractionRatio {
    pub eta: f64,
    pub ratio: f64,
}

/// `|R_x(-eta w) - (x - eta w)| / eta` with `w = P_x H^{-1} d`, per step size.
pub fn first_order_retraction_check(
    manifold: &Manifold,
    kernel: &BarrierKernel,
    region: &OpenRegion,
    x: &DVector<f64>,
    d: &DVector<f64>,
    etas: &[f64],
) -> Result<Vec<RetractionRatio>> {
    let w = -search_direction(kernel, manifold, x, d)?.v;
    etas.iter()
        .map(|&eta| {
            if eta <= 0.0 {
                return Err(domain("step sizes must be positive"));
            }
            let step = &w * -eta;
            let r = retract(manifold, x, &step, region)?;
            let ratio = (r.point - (x + step)).norm() / eta;
            Ok(RetractionRatio { eta, ratio })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn simplex2() -> Manifold {
        Manifold::Affine(AffineManifold::simplex(2))
    }

    #[test]
    fn simplex_projection_worked_values() {
        let k = BarrierKernel::Entropy;
        let x = v(&[0.5, 0.5]);
        let p = project_tangent(&k, &simplex2(), &x, &v(&[1.0, 0.0])).unwrap();
        assert!((p - v(&[0.5, -0.5])).amax() < 1e-15);
        let p = project_tangent(&k, &simplex2(), &x, &v(&[1.0, -1.0])).unwrap();
        assert!((p - v(&[1.0, -1.0])).amax() < 1e-15);
        let free = Manifold::Affine(AffineManifold::whole_space(2));
        let p = project_tangent(&k, &free, &x, &v(&[0.3, 0.9])).unwrap();
        assert_eq!(p, v(&[0.3, 0.9]));
    }

    #[test]
    fn search_direction_worked_values() {
        let k = BarrierKernel::Entropy;
        let dd = search_direction(&k, &simplex2(), &v(&[0.5, 0.5]), &v(&[-1.0, 0.0])).unwrap();
        assert!((dd.y[0] + 0.5).abs() < 1e-15);
        assert!((&dd.s - v(&[-0.5, 0.5])).amax() < 1e-15);
        assert!((&dd.v - v(&[0.25, -0.25])).amax() < 1e-15);

        let dd = search_direction(&k, &simplex2(), &v(&[0.3, 0.7]), &v(&[2.0, 2.0])).unwrap();
        assert!(dd.v.amax() < 1e-15 && dd.s.amax() < 1e-15);

        let free = Manifold::Affine(AffineManifold::whole_space(2));
        let dd = search_direction(&k, &free, &v(&[2.0, 1.0]), &v(&[1.0, 1.0])).unwrap();
        assert_eq!(dd.v, v(&[-2.0, -1.0]));
        assert_eq!(dd.s, v(&[1.0, 1.0]));
    }

    #[test]
    fn projection_rejects_bad_inputs() {
        let k = BarrierKernel::Entropy;
        assert!(matches!(
            project_tangent(&k, &simplex2(), &v(&[0.5, 0.6]), &v(&[1.0, 0.0])),
            Err(Error::DomainViolation(_))
        ));
        assert!(matches!(
            project_tangent(&k, &simplex2(), &v(&[0.0, 1.0]), &v(&[1.0, 0.0])),
            Err(Error::DomainViolation(_))
        ));
        let rank_def = AffineManifold::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]), v(&[1.0, 2.0]));
        assert_eq!(rank_def.unwrap_err(), Error::RankDeficient);
    }

    #[test]
    fn sphere_retraction_normalizes() {
        let m = Manifold::sphere(2);
        let r = retract(&m, &v(&[1.0, 0.0]), &v(&[0.0, 0.1]), &OpenRegion::orthant()).unwrap();
        let expect = v(&[1.0, 0.1]).normalize();
        assert!((&r.point - &expect).amax() < 1e-12);
        assert!((r.point[0] - 0.99504).abs() < 1e-5 && (r.point[1] - 0.09950).abs() < 1e-5);
        assert!((r.point.norm() - 1.0).abs() < 1e-12);
        assert_eq!(r.halvings, 0);

        let r = retract(&m, &v(&[0.6, 0.8]), &v(&[0.0, 0.0]), &OpenRegion::orthant()).unwrap();
        assert_eq!(r.point, v(&[0.6, 0.8]));
    }

    #[test]
    fn affine_retraction_is_identity_or_halves() {
        let m = simplex2();
        let x = v(&[0.5, 0.5]);
        let r = retract(&m, &x, &v(&[0.1, -0.1]), &OpenRegion::orthant()).unwrap();
        assert_eq!(r.point, v(&[0.6, 0.4]));
        let r = retract(&m, &x, &v(&[0.8, -0.8]), &OpenRegion::orthant()).unwrap();
        assert_eq!(r.halvings, 1);
        assert!((&r.point - v(&[0.9, 0.1])).amax() < 1e-15);
    }

    #[test]
    fn retraction_ratios() {
        let k = BarrierKernel::Entropy;
        let ratios = first_order_retraction_check(
            &simplex2(),
            &k,
            &OpenRegion::orthant(),
            &v(&[0.4, 0.6]),
            &v(&[1.0, -2.0]),
            &[1e-1, 1e-2, 1e-3],
        )
        .unwrap();
        assert!(ratios.iter().all(|r| r.ratio == 0.0));

        let sphere = Manifold::sphere(2);
        let x = v(&[0.8, 0.6]);
        let ratios = first_order_retraction_check(
            &sphere,
            &k,
            &OpenRegion::orthant(),
            &x,
            &v(&[0.3, -0.7]),
            &[1e-1, 1e-2, 1e-3],
        )
        .unwrap();
        assert!(ratios[2].ratio < ratios[0].ratio / 10.0);
        assert!(ratios[0].ratio > 0.0);

        let ratios =
            first_order_retraction_check(&sphere, &k, &OpenRegion::orthant(), &x, &v(&[0.0, 0.0]), &[1e-1, 1e-2])
                .unwrap();
        assert!(ratios.iter().all(|r| r.ratio == 0.0));
    }

    #[test]
    fn active_sets() {
        let r = OpenRegion::orthant();
        assert_eq!(r.active_set(&v(&[0.0, 1.0, 5e-8])), alloc::vec![0, 2]);
        let b = OpenRegion::unit_ball();
        assert_eq!(b.active_set(&v(&[0.0, 1.0])), alloc::vec![0]);
        assert!(b.active_set(&v(&[0.0, 0.5])).is_empty());
        assert!(r.contains(&v(&[1e-3, 1.0])) && !r.contains(&v(&[0.0, 1.0])));
    }
}
