#![allow(dead_code)]

use barrierflow_core::kernels::BarrierKernel;
use barrierflow_core::linalg::svec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn all_kernels() -> Vec<BarrierKernel> {
    vec![
        BarrierKernel::Entropy,
        BarrierKernel::NegLog,
        BarrierKernel::power(1.5).unwrap(),
        BarrierKernel::Ball,
        BarrierKernel::LogDet,
    ]
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Random interior point of the kernel's domain, kept away from the boundary
/// so central differences stay inside. `n` is the ambient dimension except for
/// `logdet`, where it is the matrix side.
pub fn interior_point(kernel: &BarrierKernel, rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    match kernel {
        BarrierKernel::Ball => {
            let g = normal_vec(rng, n);
            let r = rng.random_range(0.0..0.9);
            g.normalize() * r
        }
        BarrierKernel::LogDet => {
            let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            svec(&(&b * b.transpose() + DMatrix::identity(n, n) * 0.2))
        }
        _ => DVector::from_fn(n, |_, _| rng.random_range(0.05..3.0)),
    }
}

/// Interior point with every coordinate (or eigenvalue) in `(0, 1]`.
pub fn unit_box_point(kernel: &BarrierKernel, rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    match kernel {
        BarrierKernel::Ball => interior_point(kernel, rng, n),
        BarrierKernel::LogDet => {
            let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
            let lam = DVector::from_fn(n, |_, _| rng.random_range(0.05..1.0));
            svec(&(&q * DMatrix::from_diagonal(&lam) * q.transpose()))
        }
        _ => DVector::from_fn(n, |_, _| rng.random_range(0.02..1.0)),
    }
}

/// Random `m x n` matrix with full row rank (Gaussian entries).
pub fn random_constraints(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}
