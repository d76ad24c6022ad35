//! Objective oracles, bounded martingale-difference noise and the registry of
//! benchmark problems.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diagnostics::Classification;
use crate::error::{Error, Result};
use crate::geometry::{AffineManifold, Manifold, OpenRegion};
use crate::kernels::BarrierKernel;
use crate::linalg::Point;

/// Objective value plus a deterministic Clarke subgradient selection.
///
/// At kinks the selection is the midpoint of the sign interval, so for the
/// piecewise-linear oracles here the Clarke subdifferential is the box
/// `{ subgradient(x) + sum_j t_j e_j : |t_j| <= r_j }` described by
/// [`SubgradientOracle::clarke_box`].
pub trait SubgradientOracle: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn subgradient(&self, x: &DVector<f64>) -> Point;

    /// Coordinates `j` with radius `r_j` along which the subdifferential of
    /// the `delta`-expansion extends around the selection.
    fn clarke_box(&self, _x: &DVector<f64>, _delta: f64) -> Vec<(usize, f64)> {
        Vec::new()
    }

    fn is_smooth_at(&self, x: &DVector<f64>) -> bool {
        self.clarke_box(x, 1e-6).is_empty()
    }

    /// Bound on `|subgradient(x)|` over the box `[-1, 1]^n`.
    fn lipschitz_bound(&self) -> f64;
}

fn sign_mid(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `f(x) = <c, x>`
#[derive(Debug, Clone)]
pub struct Linear {
    pub c: DVector<f64>,
}

impl SubgradientOracle for Linear {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(x)
    }
    fn subgradient(&self, _x: &DVector<f64>) -> Point {
        self.c.clone()
    }
    fn lipschitz_bound(&self) -> f64 {
        self.c.norm()
    }
}

/// `f(x) = -x^T M x` for symmetric `M`.
#[derive(Debug, Clone)]
pub struct NegQuadratic {
    pub m: DMatrix<f64>,
}

impl SubgradientOracle for NegQuadratic {
    fn dim(&self) -> usize {
        self.m.nrows()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        -x.dot(&(&self.m * x))
    }
    fn subgradient(&self, x: &DVector<f64>) -> Point {
        &self.m * x * -2.0
    }
    fn lipschitz_bound(&self) -> f64 {
        let norm2 = crate::linalg::sym_spectral_norm(&self.m);
        2.0 * norm2 * (self.dim() as f64).sqrt()
    }
}

/// `f(x) = |x - a|_1`
#[derive(Debug, Clone)]
pub struct L1Distance {
    pub a: DVector<f64>,
}

impl SubgradientOracle for L1Distance {
    fn dim(&self) -> usize {
        self.a.len()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        (x - &self.a).lp_norm(1)
    }
    fn subgradient(&self, x: &DVector<f64>) -> Point {
        (x - &self.a).map(sign_mid)
    }
    fn clarke_box(&self, x: &DVector<f64>, delta: f64) -> Vec<(usize, f64)> {
        (x - &self.a)
            .iter()
            .enumerate()
            .filter(|(_, t)| t.abs() <= delta)
            .map(|(j, _)| (j, 1.0))
            .collect()
    }
    fn lipschitz_bound(&self) -> f64 {
        (self.dim() as f64).sqrt()
    }
}

/// `f = 0`
#[derive(Debug, Clone)]
pub struct Zero {
    pub n: usize,
}

impl SubgradientOracle for Zero {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }
    fn subgradient(&self, _x: &DVector<f64>) -> Point {
        DVector::zeros(self.n)
    }
    fn lipschitz_bound(&self) -> f64 {
        0.0
    }
}

/// `f(x) = |x_0| + <c, x>`
#[derive(Debug, Clone)]
pub struct AbsFirstPlusLinear {
    pub c: DVector<f64>,
}

impl SubgradientOracle for AbsFirstPlusLinear {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        x[0].abs() + self.c.dot(x)
    }
    fn subgradient(&self, x: &DVector<f64>) -> Point {
        let mut d = self.c.clone();
        d[0] += sign_mid(x[0]);
        d
    }
    fn clarke_box(&self, x: &DVector<f64>, delta: f64) -> Vec<(usize, f64)> {
        if x[0].abs() <= delta {
            vec![(0, 1.0)]
        } else {
            Vec::new()
        }
    }
    fn lipschitz_bound(&self) -> f64 {
        let mut c = self.c.map(f64::abs);
        c[0] += 1.0;
        c.norm()
    }
}

/// Bounded, zero-mean noise: a uniform direction on the unit sphere scaled by
/// a radius drawn uniformly from `[0, bound]`.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    bound: f64,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(bound: f64, seed: u64) -> Self {
        NoiseSource {
            bound: bound.max(0.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn sample(&mut self, n: usize) -> Point {
        if self.bound == 0.0 || n == 0 {
            return DVector::zeros(n);
        }
        let dir = loop {
            let g = DVector::from_fn(n, |_, _| self.rng.sample::<f64, _>(StandardNormal));
            let norm = g.norm();
            if norm > 1e-300 {
                break g / norm;
            }
        };
        let radius = self.rng.random_range(0.0..=self.bound);
        dir * radius
    }
}

/// A point with a known classification, used to anchor diagnostics tests.
#[derive(Debug, Clone)]
pub struct KnownPoint {
    pub point: Point,
    pub expected: Classification,
    pub source: &'static str,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub oracle: Arc<dyn SubgradientOracle>,
    pub manifold: Manifold,
    pub region: OpenRegion,
    pub kernel: BarrierKernel,
    /// Strictly interior starting point on the manifold.
    pub initial_point: Point,
    pub known_points: Vec<KnownPoint>,
    /// Whether MFCQ holds on the whole feasible set.
    pub mfcq: bool,
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.oracle.dim()
    }

    pub fn with_kernel(mut self, kernel: BarrierKernel) -> Self {
        self.region = OpenRegion::for_kernel(&kernel);
        self.kernel = kernel;
        self
    }
}

pub const PROBLEM_NAMES: [&str; 5] = ["lin-simplex", "nn-pca", "l1-simplex", "flat-simplex", "ball-abs"];

/// Fixed symmetric 5x5 matrix for `nn-pca`: entries drawn uniformly from
/// `[-1, 1]` with seed 20250 and symmetrized.
pub const NN_PCA_MATRIX: [[f64; 5]; 5] = [
    [
        0.7740888857689388,
        0.09419250780959942,
        0.18266440218874835,
        0.3807514146794513,
        -0.14609440018642084,
    ],
    [
        0.09419250780959942,
        0.4522817198280269,
        -0.18683095284713724,
        -0.6277444493920492,
        0.603808633870219,
    ],
    [
        0.18266440218874835,
        -0.18683095284713724,
        -0.8771336068074895,
        -0.2650082014916215,
        -0.03952470376612882,
    ],
    [
        0.3807514146794513,
        -0.6277444493920492,
        -0.2650082014916215,
        -0.3884036586187438,
        0.17891162209941736,
    ],
    [
        -0.14609440018642084,
        0.603808633870219,
        -0.03952470376612882,
        0.17891162209941736,
        0.07401004261634392,
    ],
];

fn basis(n: usize, i: usize) -> Point {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

fn barycenter(n: usize) -> Point {
    DVector::from_element(n, 1.0 / n as f64)
}

fn simplex_problem(name: &str, oracle: Arc<dyn SubgradientOracle>, n: usize) -> Problem {
    Problem {
        name: name.to_string(),
        oracle,
        manifold: Manifold::Affine(AffineManifold::simplex(n)),
        region: OpenRegion::orthant(),
        kernel: BarrierKernel::Entropy,
        initial_point: barycenter(n),
        known_points: Vec::new(),
        mfcq: true,
    }
}

/// `min -x_1` over the unit simplex.
pub fn lin_simplex(n: usize) -> Problem {
    let mut p = simplex_problem("lin-simplex", Arc::new(Linear { c: -basis(n, 0) }), n);
    p.known_points.push(KnownPoint {
        point: basis(n, 0),
        expected: Classification::BoundaryStationary,
        source: "global minimizer; multipliers mu = 1, lambda_j = 1 for j > 1",
    });
    for j in 1..n {
        p.known_points.push(KnownPoint {
            point: basis(n, j),
            expected: Classification::Spurious,
            source: "vertex fixed by x o s = 0 but lambda_1 = -1 is infeasible",
        });
    }
    p
}

/// `min |x - a|_1` over the unit simplex with `a = e_1 / 2`.
pub fn l1_simplex(n: usize) -> Problem {
    let a = basis(n, 0) * 0.5;
    let mut p = simplex_problem("l1-simplex", Arc::new(L1Distance { a }), n);
    p.known_points.push(KnownPoint {
        point: basis(n, 0),
        expected: Classification::BoundaryStationary,
        source: "minimizer; the kink in x_2 supplies the needed subgradient",
    });
    if n >= 2 {
        p.known_points.push(KnownPoint {
            point: basis(n, 1),
            expected: Classification::Spurious,
            source: "vertex in the stable set with no feasible multiplier",
        });
    }
    p
}

/// `f = 0` over the unit simplex: every feasible point is stable.
pub fn flat_simplex(n: usize) -> Problem {
    let mut p = simplex_problem("flat-simplex", Arc::new(Zero { n }), n);
    p.known_points.push(KnownPoint {
        point: barycenter(n),
        expected: Classification::InteriorStationary,
        source: "zero objective",
    });
    p.known_points.push(KnownPoint {
        point: basis(n, 0),
        expected: Classification::BoundaryStationary,
        source: "zero objective",
    });
    p
}

/// `min -x^T M x` over the unit sphere intersected with the nonnegative orthant.
pub fn nn_pca() -> Problem {
    let m = DMatrix::from_fn(5, 5, |i, j| NN_PCA_MATRIX[i][j]);
    let n = 5;
    Problem {
        name: "nn-pca".to_string(),
        oracle: Arc::new(NegQuadratic { m }),
        manifold: Manifold::sphere(n),
        region: OpenRegion::orthant(),
        kernel: BarrierKernel::Entropy,
        initial_point: DVector::from_element(n, 1.0 / (n as f64).sqrt()),
        known_points: vec![KnownPoint {
            point: basis(n, 0),
            expected: Classification::Spurious,
            source: "vertex with positive off-diagonal coupling M_0j > 0",
        }],
        mfcq: true,
    }
}

/// `min |x_1| + x_2 / 2` over the closed unit ball.
pub fn ball_abs() -> Problem {
    let c = DVector::from_column_slice(&[0.0, 0.5]);
    Problem {
        name: "ball-abs".to_string(),
        oracle: Arc::new(AbsFirstPlusLinear { c }),
        manifold: Manifold::Affine(AffineManifold::whole_space(2)),
        region: OpenRegion::unit_ball(),
        kernel: BarrierKernel::Ball,
        initial_point: DVector::from_column_slice(&[0.0, 0.5]),
        known_points: vec![
            KnownPoint {
                point: DVector::from_column_slice(&[0.0, -1.0]),
                expected: Classification::BoundaryStationary,
                source: "minimizer with ball multiplier 1/4",
            },
            KnownPoint {
                point: DVector::from_column_slice(&[0.0, 1.0]),
                expected: Classification::Spurious,
                source: "boundary point; the extended inverse metric vanishes",
            },
        ],
        mfcq: true,
    }
}

/// Look up a registered problem at its default dimension.
pub fn registry_get(name: &str) -> Result<Problem> {
    registry_get_dim(name, None)
}

/// Look up a registered problem; simplex problems accept a dimension (default 2).
pub fn registry_get_dim(name: &str, dim: Option<usize>) -> Result<Problem> {
    let simplex_dim = || -> Result<usize> {
        match dim {
            None => Ok(2),
            Some(n) if n >= 2 => Ok(n),
            Some(n) => Err(Error::InvalidConfig(alloc::format!("simplex dimension {n} < 2"))),
        }
    };
    let fixed = |n: usize| -> Result<()> {
        match dim {
            Some(d) if d != n => Err(Error::InvalidConfig(alloc::format!(
                "problem `{name}` has fixed dimension {n}"
            ))),
            _ => Ok(()),
        }
    };
    match name {
        "lin-simplex" => Ok(lin_simplex(simplex_dim()?)),
        "l1-simplex" => Ok(l1_simplex(simplex_dim()?)),
        "flat-simplex" => Ok(flat_simplex(simplex_dim()?)),
        "nn-pca" => fixed(5).map(|_| nn_pca()),
        "ball-abs" => fixed(2).map(|_| ball_abs()),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_resolve() {
        for name in PROBLEM_NAMES {
            let p = registry_get(name).unwrap();
            assert_eq!(p.name, name);
            assert!(p.region.contains(&p.initial_point));
            assert!(p.manifold.contains(&p.initial_point, 1e-12));
            for kp in &p.known_points {
                assert!(p.manifold.contains(&kp.point, 1e-12));
                assert!(p.region.closure_contains(&kp.point, 0.0));
            }
        }
        assert_eq!(
            registry_get("nope").unwrap_err(),
            Error::UnknownProblem("nope".to_string())
        );
        assert!(registry_get_dim("nn-pca", Some(3)).is_err());
        assert_eq!(registry_get_dim("lin-simplex", Some(4)).unwrap().dim(), 4);
    }

    #[test]
    fn noise_is_bounded_and_seeded() {
        let mut zero = NoiseSource::new(0.0, 1);
        assert_eq!(zero.sample(3), DVector::zeros(3));
        let mut a = NoiseSource::new(1.0, 42);
        let x = a.sample(3);
        let y = a.sample(3);
        assert!(x != y && x.norm() <= 1.0 && y.norm() <= 1.0);
        let mut b = NoiseSource::new(1.0, 42);
        assert_eq!(b.sample(3), x);
    }

    #[test]
    fn kink_selection_is_midpoint() {
        let o = L1Distance {
            a: DVector::from_column_slice(&[0.5, 0.0]),
        };
        let d = o.subgradient(&DVector::from_column_slice(&[0.5, 0.5]));
        assert_eq!(d, DVector::from_column_slice(&[0.0, 1.0]));
        assert_eq!(
            o.clarke_box(&DVector::from_column_slice(&[0.5, 0.5]), 0.0),
            vec![(0, 1.0)]
        );
        assert!(!o.is_smooth_at(&DVector::from_column_slice(&[0.5, 0.5])));
        assert!(o.is_smooth_at(&DVector::from_column_slice(&[0.3, 0.7])));
    }
}
