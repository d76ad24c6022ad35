//! Legendre barrier kernels and the Hessian metric they induce.
//!
//! Every kernel `phi` is strictly convex on an open convex set `C` and its
//! gradient blows up at the boundary of `C`. The Hessian `H(x)` defines the
//! local inner product `<u, v>_x = u^T H(x) v` used by the projections in
//! [`crate::geometry`].
//!
//! | id        | domain `C`              | `phi(x)`                                  |
//! |-----------|-------------------------|-------------------------------------------|
//! | `entropy` | positive orthant        | `sum x_i (log x_i - 1)`                   |
//! | `neglog`  | positive orthant        | `-sum log x_i`                            |
//! | `power:p` | positive orthant        | `sum x_i^(2-p) / ((2-p)(1-p))`, `1<p<2`   |
//! | `ball`    | open unit ball          | `-sqrt(1 - |x|^2)`                        |
//! | `logdet`  | positive definite cone  | `-log det X` (scaled upper triangle)      |

use alloc::format;
use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};
use crate::linalg::{min_sym_eigenvalue, smat, svec, sym_spectral_norm, tri_side, Point};

/// A point is numerically on the boundary once the kernel gauge drops below this.
pub const BOUNDARY_GAUGE: f64 = 1e-14;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 100;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BarrierKernel {
    Entropy,
    NegLog,
    /// Power kernel with exponent `p` in `(1, 2)`.
    Power {
        p: f64,
    },
    Ball,
    /// `-log det` on symmetric matrices stored through [`crate::linalg::svec`].
    LogDet,
}

impl BarrierKernel {
    pub fn power(p: f64) -> Result<Self> {
        if p > 1.0 && p < 2.0 {
            Ok(BarrierKernel::Power { p })
        } else {
            Err(Error::InvalidConfig(format!("power exponent {p} outside (1, 2)")))
        }
    }

    pub fn id(&self) -> String {
        match self {
            BarrierKernel::Entropy => "entropy".to_string(),
            BarrierKernel::NegLog => "neglog".to_string(),
            BarrierKernel::Power { p } => format!("power:{p}"),
            BarrierKernel::Ball => "ball".to_string(),
            BarrierKernel::LogDet => "logdet".to_string(),
        }
    }

    /// Kernels whose domain is the positive orthant and whose Hessian is diagonal.
    pub fn is_separable_orthant(&self) -> bool {
        matches!(
            self,
            BarrierKernel::Entropy | BarrierKernel::NegLog | BarrierKernel::Power { .. }
        )
    }

    /// Barrier parameter `theta` for the logarithmically homogeneous
    /// self-concordant kernels: `n` for `neglog`, the matrix side `d` for `logdet`.
    pub fn lhscb_theta(&self, dim: usize) -> Option<f64> {
        match self {
            BarrierKernel::NegLog => Some(dim as f64),
            BarrierKernel::LogDet => tri_side(dim).map(|d| d as f64),
            _ => None,
        }
    }

    /// Strong convexity modulus, valid on the compact set where every
    /// coordinate (or eigenvalue, for `logdet`) lies in `(0, 1]`; for `ball` it
    /// holds on the whole domain.
    pub fn strong_convexity_mu(&self) -> Option<f64> {
        Some(1.0)
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        if matches!(self, BarrierKernel::LogDet) && tri_side(x.len()).is_none() {
            return Err(Error::DimensionMismatch {
                expected: x.len() + 1,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Distance-like gauge to the boundary: `min x_i`, `1 - |x|`, or the
    /// smallest eigenvalue.
    pub fn gauge(&self, x: &DVector<f64>) -> f64 {
        if !x.iter().all(|v| v.is_finite()) {
            return f64::NAN;
        }
        match self {
            BarrierKernel::Entropy | BarrierKernel::NegLog | BarrierKernel::Power { .. } => {
                x.iter().cloned().fold(f64::INFINITY, f64::min)
            }
            BarrierKernel::Ball => 1.0 - x.norm(),
            BarrierKernel::LogDet => match smat(x) {
                Ok(m) => min_sym_eigenvalue(&m),
                Err(_) => f64::NAN,
            },
        }
    }

    pub fn is_interior(&self, x: &DVector<f64>) -> bool {
        self.check_len(x).is_ok() && self.gauge(x) >= BOUNDARY_GAUGE
    }

    fn require_interior(&self, x: &DVector<f64>) -> Result<()> {
        self.check_len(x)?;
        let g = self.gauge(x);
        if g >= BOUNDARY_GAUGE {
            Ok(())
        } else {
            Err(Error::DomainViolation(format!(
                "{} kernel gauge {g:e} below {BOUNDARY_GAUGE:e}",
                self.id()
            )))
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.require_interior(x)?;
        self.value_unchecked(x)
    }

    /// Value on `dom(phi)`, which includes boundary points for `entropy`,
    /// `power` and `ball` (with `0 log 0 = 0`).
    pub fn value_on_closure(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_len(x)?;
        match self {
            BarrierKernel::Entropy | BarrierKernel::Power { .. } => {
                if x.iter().all(|v| v.is_finite() && *v >= 0.0) {
                    self.value_unchecked(x)
                } else {
                    Err(domain("negative coordinate"))
                }
            }
            BarrierKernel::Ball => {
                let r2 = x.norm_squared();
                if x.iter().all(|v| v.is_finite()) && r2 <= 1.0 {
                    Ok(-(1.0 - r2).sqrt())
                } else {
                    Err(domain("outside the closed unit ball"))
                }
            }
            BarrierKernel::NegLog | BarrierKernel::LogDet => self.value(x),
        }
    }

    fn value_unchecked(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(match self {
            BarrierKernel::Entropy => x.iter().map(|&t| if t == 0.0 { 0.0 } else { t * (t.ln() - 1.0) }).sum(),
            BarrierKernel::NegLog => -x.iter().map(|t| t.ln()).sum::<f64>(),
            BarrierKernel::Power { p } => {
                let q = 2.0 - p;
                let c = 1.0 / (q * (1.0 - p));
                c * x.iter().map(|t| t.powf(q)).sum::<f64>()
            }
            BarrierKernel::Ball => -(1.0 - x.norm_squared()).sqrt(),
            BarrierKernel::LogDet => {
                let m = smat(x)?;
                let chol = m.cholesky().ok_or(Error::SingularMetric)?;
                let l = chol.l_dirty();
                -2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
            }
        })
    }

    pub fn grad(&self, x: &DVector<f64>) -> Result<Point> {
        self.require_interior(x)?;
        Ok(match self {
            BarrierKernel::Entropy => x.map(|t| t.ln()),
            BarrierKernel::NegLog => x.map(|t| -1.0 / t),
            BarrierKernel::Power { p } => x.map(|t| t.powf(1.0 - p) / (1.0 - p)),
            BarrierKernel::Ball => x / (1.0 - x.norm_squared()).sqrt(),
            BarrierKernel::LogDet => {
                let m = smat(x)?;
                let inv = m.try_inverse().ok_or(Error::SingularMetric)?;
                -svec(&inv)
            }
        })
    }

    /// Factor the metric at an interior point.
    pub fn metric(&self, x: &DVector<f64>) -> Result<MetricWorkspace> {
        self.require_interior(x)?;
        MetricWorkspace::new(self, x)
    }

    pub fn hess_apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<Point> {
        crate::error::check_dim(x.len(), v.len())?;
        Ok(self.metric(x)?.apply(v))
    }

    pub fn hess_inv_apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<Point> {
        crate::error::check_dim(x.len(), v.len())?;
        Ok(self.metric(x)?.apply_inv(v))
    }

    /// Whether `z` lies in the range of the mirror map `grad phi`.
    pub fn in_mirror_range(&self, z: &DVector<f64>) -> bool {
        if !z.iter().all(|v| v.is_finite()) {
            return false;
        }
        match self {
            BarrierKernel::Entropy | BarrierKernel::Ball => true,
            BarrierKernel::NegLog | BarrierKernel::Power { .. } => z.iter().all(|&t| t < 0.0),
            BarrierKernel::LogDet => match smat(z) {
                Ok(m) => min_sym_eigenvalue(&(-m)) > 0.0,
                Err(_) => false,
            },
        }
    }

    /// Inverse of the mirror map: the interior `x` with `grad phi(x) = z`.
    ///
    /// `entropy`, `neglog` and `ball` use their closed forms; the remaining kernels run
    /// a damped Newton iteration on `grad phi(x) - z` that halves the step until
    /// the iterate is interior and the residual decreases.
    pub fn mirror_inverse(&self, z: &DVector<f64>) -> Result<Point> {
        self.check_len(z)?;
        if !self.in_mirror_range(z) {
            return Err(Error::RangeViolation);
        }
        match self {
            BarrierKernel::Entropy => {
                let x = z.map(|t| t.exp());
                if self.is_interior(&x) {
                    Ok(x)
                } else {
                    Err(Error::RangeViolation)
                }
            }
            BarrierKernel::NegLog => Ok(z.map(|t| -1.0 / t)),
            BarrierKernel::Ball => {
                let x = z / (1.0 + z.norm_squared()).sqrt();
                if self.is_interior(&x) {
                    Ok(x)
                } else {
                    Err(Error::RangeViolation)
                }
            }
            _ => self.newton_mirror_inverse(z),
        }
    }

    fn newton_start(&self, z: &DVector<f64>) -> Result<Point> {
        Ok(match self {
            BarrierKernel::Ball => DVector::zeros(z.len()),
            BarrierKernel::LogDet => {
                // alpha I with alpha <= 1 / lambda_max(-Z) sits below (-Z)^{-1}
                let m = smat(z)?;
                let scale = m.norm().max(f64::MIN_POSITIVE);
                svec(&(DMatrix::identity(m.nrows(), m.nrows()) / scale))
            }
            _ => DVector::from_element(z.len(), 1.0),
        })
    }

    fn newton_mirror_inverse(&self, z: &DVector<f64>) -> Result<Point> {
        let scale = z.amax().max(1.0);
        let mut x = self.newton_start(z)?;
        let mut resid = self.grad(&x)? - z;
        for _ in 0..NEWTON_MAX_ITERS {
            if resid.amax() <= NEWTON_TOL * scale {
                return Ok(x);
            }
            let step = self.metric(&x)?.apply_inv(&resid);
            let merit = resid.norm();
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let cand = &x - &step * t;
                if self.is_interior(&cand) {
                    let r = self.grad(&cand)? - z;
                    if r.norm() < merit {
                        accepted = Some((cand, r));
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some((cand, r)) => {
                    x = cand;
                    resid = r;
                }
                None => break,
            }
        }
        let residual = resid.amax();
        if residual <= 1e-10 * scale {
            Ok(x)
        } else {
            Err(Error::NoConvergence { residual })
        }
    }

    /// `D(x, y) = phi(x) - phi(y) - <grad phi(y), x - y>` for `x` in `dom(phi)`
    /// and interior `y`.
    pub fn bregman_distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        crate::error::check_dim(y.len(), x.len())?;
        self.require_interior(y)?;
        let d = match self {
            BarrierKernel::Entropy => {
                if !x.iter().all(|v| v.is_finite() && *v >= 0.0) {
                    return Err(domain("negative coordinate"));
                }
                x.iter()
                    .zip(y.iter())
                    .map(|(&a, &b)| if a == 0.0 { b } else { a * (a / b).ln() - a + b })
                    .sum()
            }
            _ => {
                let fx = self.value_on_closure(x)?;
                let fy = self.value(y)?;
                let g = self.grad(y)?;
                fx - fy - g.dot(&(x - y))
            }
        };
        Ok(d.max(0.0))
    }
}

impl fmt::Display for BarrierKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for BarrierKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "entropy" => Ok(BarrierKernel::Entropy),
            "neglog" => Ok(BarrierKernel::NegLog),
            "ball" => Ok(BarrierKernel::Ball),
            "logdet" => Ok(BarrierKernel::LogDet),
            other => match other.strip_prefix("power:") {
                Some(p) => {
                    let p: f64 = p.parse().map_err(|_| Error::UnknownKernel(other.to_string()))?;
                    BarrierKernel::power(p)
                }
                None => Err(Error::UnknownKernel(other.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone)]
enum MetricRepr {
    Diagonal { h: DVector<f64>, h_inv: DVector<f64> },
    Dense { h: DMatrix<f64>, h_inv: DMatrix<f64> },
}

/// Cached Hessian and inverse Hessian of a kernel at one interior point.
#[derive(Debug, Clone)]
pub struct MetricWorkspace {
    x: Point,
    repr: MetricRepr,
}

impl MetricWorkspace {
    fn new(kernel: &BarrierKernel, x: &DVector<f64>) -> Result<Self> {
        let repr = match kernel {
            BarrierKernel::Entropy => MetricRepr::Diagonal {
                h: x.map(|t| 1.0 / t),
                h_inv: x.clone(),
            },
            BarrierKernel::NegLog => MetricRepr::Diagonal {
                h: x.map(|t| 1.0 / (t * t)),
                h_inv: x.map(|t| t * t),
            },
            BarrierKernel::Power { p } => MetricRepr::Diagonal {
                h: x.map(|t| t.powf(-p)),
                h_inv: x.map(|t| t.powf(*p)),
            },
            BarrierKernel::Ball => {
                let n = x.len();
                let s = (1.0 - x.norm_squared()).sqrt();
                let xxt = x * x.transpose();
                let h = DMatrix::identity(n, n) / s + &xxt / (s * s * s);
                let h_inv = (DMatrix::identity(n, n) - xxt) * s;
                MetricRepr::Dense { h, h_inv }
            }
            BarrierKernel::LogDet => {
                let m = smat(x)?;
                let m_inv = m.clone().try_inverse().ok_or(Error::SingularMetric)?;
                let n = x.len();
                let mut h = DMatrix::zeros(n, n);
                let mut h_inv = DMatrix::zeros(n, n);
                for j in 0..n {
                    let mut e = DVector::zeros(n);
                    e[j] = 1.0;
                    let ej = smat(&e)?;
                    h.set_column(j, &svec(&(&m_inv * &ej * &m_inv)));
                    h_inv.set_column(j, &svec(&(&m * &ej * &m)));
                }
                MetricRepr::Dense { h, h_inv }
            }
        };
        match &repr {
            MetricRepr::Diagonal { h, h_inv } => {
                let ok = h.iter().chain(h_inv.iter()).all(|v| v.is_finite() && *v > 0.0);
                if !ok {
                    return Err(Error::SingularMetric);
                }
            }
            MetricRepr::Dense { h, .. } => {
                if h.clone().cholesky().is_none() {
                    return Err(Error::SingularMetric);
                }
            }
        }
        Ok(MetricWorkspace { x: x.clone(), repr })
    }

    pub fn point(&self) -> &Point {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `H(x) v`
    pub fn apply(&self, v: &DVector<f64>) -> Point {
        match &self.repr {
            MetricRepr::Diagonal { h, .. } => h.component_mul(v),
            MetricRepr::Dense { h, .. } => h * v,
        }
    }

    /// `H(x)^{-1} v`
    pub fn apply_inv(&self, v: &DVector<f64>) -> Point {
        match &self.repr {
            MetricRepr::Diagonal { h_inv, .. } => h_inv.component_mul(v),
            MetricRepr::Dense { h_inv, .. } => h_inv * v,
        }
    }

    /// `H(x)^{-1} M` applied column-wise.
    pub fn apply_inv_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.repr {
            MetricRepr::Diagonal { h_inv, .. } => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= h_inv[i];
                }
                out
            }
            MetricRepr::Dense { h_inv, .. } => h_inv * m,
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.repr {
            MetricRepr::Diagonal { h, .. } => DMatrix::from_diagonal(h),
            MetricRepr::Dense { h, .. } => h.clone(),
        }
    }

    pub fn inv_matrix(&self) -> DMatrix<f64> {
        match &self.repr {
            MetricRepr::Diagonal { h_inv, .. } => DMatrix::from_diagonal(h_inv),
            MetricRepr::Dense { h_inv, .. } => h_inv.clone(),
        }
    }

    /// `|H(x)^{-1}|_2`
    pub fn inv_norm(&self) -> f64 {
        match &self.repr {
            MetricRepr::Diagonal { h_inv, .. } => h_inv.amax(),
            MetricRepr::Dense { h_inv, .. } => sym_spectral_norm(h_inv),
        }
    }

    /// Local norm `sqrt(v^T H(x) v)`.
    pub fn local_norm(&self, v: &DVector<f64>) -> f64 {
        self.apply(v).dot(v).max(0.0).sqrt()
    }
}
