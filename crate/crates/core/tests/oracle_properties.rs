mod common;

use barrierflow_core::oracles::{registry_get, L1Distance, NoiseSource, SubgradientOracle, PROBLEM_NAMES};
use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

fn fd_gradient(f: &dyn SubgradientOracle, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += h;
        m[i] -= h;
        (f.value(&p) - f.value(&m)) / (2.0 * h)
    })
}

#[test]
fn registry_oracles_match_finite_differences_off_their_kinks() {
    let mut rng = rng(4);
    for name in PROBLEM_NAMES {
        let p = registry_get(name).unwrap();
        let f = p.oracle.as_ref();
        let mut checked = 0;
        while checked < 50 {
            let x = DVector::from_fn(p.dim(), |_, _| rng.random_range(-1.0..1.0));
            if !f.clarke_box(&x, 1e-4).is_empty() {
                continue;
            }
            let d = f.subgradient(&x);
            let err = (&d - fd_gradient(f, &x, 1e-6)).norm();
            assert!(err <= 1e-5 * (1.0 + d.norm()), "{name}: {err}");
            assert!(d.norm() <= f.lipschitz_bound() + 1e-12);
            checked += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn l1_selection_sits_inside_the_one_sided_derivative_interval(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let n = rng.random_range(1..6);
        let a = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mut x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        for j in 0..n {
            if rng.random_bool(0.5) {
                x[j] = a[j];
            }
        }
        let f = L1Distance { a: a.clone() };
        let d = f.subgradient(&x);
        let radius: Vec<f64> = (0..n)
            .map(|j| f.clarke_box(&x, 0.0).iter().find(|(i, _)| *i == j).map_or(0.0, |(_, r)| *r))
            .collect();
        let h = 1e-7;
        for j in 0..n {
            let mut p = x.clone();
            let mut m = x.clone();
            p[j] += h;
            m[j] -= h;
            let right = (f.value(&p) - f.value(&x)) / h;
            let left = (f.value(&x) - f.value(&m)) / h;
            prop_assert!((right - (d[j] + radius[j])).abs() <= 1e-6);
            prop_assert!((left - (d[j] - radius[j])).abs() <= 1e-6);
            prop_assert!(left <= d[j] + 1e-6 && d[j] <= right + 1e-6);
        }
    }
}

#[test]
fn noise_is_bounded_centered_and_reproducible() {
    let mut src = NoiseSource::new(1.0, 17);
    let n = 3;
    let draws = 100_000;
    let mut sum = DVector::zeros(n);
    for _ in 0..draws {
        let xi = src.sample(n);
        assert!(xi.norm() <= 1.0 + 1e-15);
        sum += xi;
    }
    let mean = sum / draws as f64;
    assert!(mean.norm() <= 3.0 / (draws as f64).sqrt(), "{}", mean.norm());

    let mut a = NoiseSource::new(0.5, 7);
    let mut b = NoiseSource::new(0.5, 7);
    for _ in 0..100 {
        assert_eq!(a.sample(4), b.sample(4));
    }
    assert_eq!(NoiseSource::new(0.0, 1).sample(5), DVector::zeros(5));
}
