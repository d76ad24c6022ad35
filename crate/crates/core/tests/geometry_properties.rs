mod common;

use barrierflow_core::geometry::{
    first_order_retraction_check, multiplier_form_residual, project_tangent, retract, search_direction, AffineManifold,
    Manifold, OpenRegion,
};
use barrierflow_core::kernels::BarrierKernel;
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random kernel, interior point and an affine manifold through it.
fn affine_setup(rng: &mut ChaCha8Rng) -> (BarrierKernel, DVector<f64>, Manifold, DMatrix<f64>) {
    let kernels = all_kernels();
    let k = kernels[rng.random_range(0..kernels.len())];
    let side = match k {
        BarrierKernel::LogDet => rng.random_range(2..4),
        _ => rng.random_range(2..7),
    };
    let x = interior_point(&k, rng, side);
    let n = x.len();
    let m = rng.random_range(0..n.min(4));
    let a = random_constraints(rng, m, n);
    let b = &a * &x;
    let manifold = Manifold::Affine(AffineManifold::new(a.clone(), b).unwrap());
    (k, x, manifold, a)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metric_projection_is_an_orthogonal_projector(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let (k, x, manifold, a) = affine_setup(&mut rng);
        let n = x.len();
        let ws = k.metric(&x).unwrap();
        let u = normal_vec(&mut rng, n);
        let w = normal_vec(&mut rng, n);
        let pu = project_tangent(&k, &manifold, &x, &u).unwrap();
        let pw = project_tangent(&k, &manifold, &x, &w).unwrap();
        let scale = 1.0 + u.norm() * (1.0 + ws.matrix().amax());
        if a.nrows() > 0 {
            prop_assert!((&a * &pu).amax() <= 1e-9 * scale);
        }
        let ppu = project_tangent(&k, &manifold, &x, &pu).unwrap();
        prop_assert!((&ppu - &pu).amax() <= 1e-9 * scale);
        let lhs = pu.dot(&ws.apply(&w));
        let rhs = u.dot(&ws.apply(&pw));
        prop_assert!((lhs - rhs).abs() <= 1e-9 * scale * (1.0 + w.norm()) * (1.0 + ws.matrix().amax()));
        prop_assert!(ws.local_norm(&pu) <= ws.local_norm(&u) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn search_direction_solves_the_kkt_system(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let (k, x, manifold, a) = affine_setup(&mut rng);
        let n = x.len();
        let m = a.nrows();
        let d = normal_vec(&mut rng, n);
        let dual = search_direction(&k, &manifold, &x, &d).unwrap();

        // [H A^T; A 0] [v; lam] = [-d; 0], with y = -lam
        let h = k.metric(&x).unwrap().matrix();
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(&a);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&d));
        let sol = kkt.lu().solve(&rhs).unwrap();
        let scale = 1.0 + sol.amax();
        prop_assert!((&dual.v - sol.rows(0, n)).amax() <= 1e-7 * scale);
        prop_assert!((&dual.y + sol.rows(n, m)).amax() <= 1e-7 * scale);

        prop_assert!((&h * &dual.v + &dual.s).amax() <= 1e-9 * (1.0 + d.amax()) * (1.0 + h.amax()));
        prop_assert!((&dual.s - (&d - a.transpose() * &dual.y)).amax() <= 1e-12 * scale);
        prop_assert!(d.dot(&dual.v) <= 1e-12);
    }

    #[test]
    fn projection_and_multiplier_forms_agree_on_stability(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let (k, x, manifold, a) = affine_setup(&mut rng);
        let n = x.len();
        let y0 = normal_vec(&mut rng, a.nrows());
        let e = normal_vec(&mut rng, n);
        for t in [0.0, 1e-13, 1.0] {
            let d = a.transpose() * &y0 + &e * t;
            let projected = search_direction(&k, &manifold, &x, &d).unwrap().v.norm();
            let multiplier = multiplier_form_residual(&k, &manifold, &x, &d).unwrap();
            prop_assert!(multiplier <= projected * (1.0 + 1e-9) + 1e-10, "t={t}: {projected} {multiplier}");
            let stable_p = projected <= 1e-7;
            let stable_m = multiplier <= 1e-8;
            if t == 1.0 {
                prop_assert!(!stable_p && !stable_m, "t=1: {projected} {multiplier}");
            } else {
                prop_assert!(stable_p && stable_m, "t={t}: {projected} {multiplier}");
            }
        }
    }

    #[test]
    fn sphere_jacobian_and_retraction(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let n = rng.random_range(2..6);
        let manifold = Manifold::sphere(n);
        let raw = DVector::from_fn(n, |_, _| rng.random_range(0.2..1.0));
        let x = raw.normalize();
        let h = 1e-6;
        let jac = manifold.jacobian(&x);
        for j in 0..n {
            let mut p = x.clone();
            let mut m = x.clone();
            p[j] += h;
            m[j] -= h;
            let fd = (manifold.residual(&p)[0] - manifold.residual(&m)[0]) / (2.0 * h);
            prop_assert!((fd - jac[(0, j)]).abs() <= 1e-7);
        }
        let region = OpenRegion::orthant();
        let k = BarrierKernel::NegLog;
        let d = normal_vec(&mut rng, n);
        let etas = [1e-2, 1e-3, 1e-4];
        let ratios = first_order_retraction_check(&manifold, &k, &region, &x, &d, &etas).unwrap();
        prop_assert!(ratios[2].ratio <= 1e-3 * (1.0 + d.norm()));
        prop_assert!(ratios[2].ratio <= ratios[0].ratio + 1e-12);

        let step = normal_vec(&mut rng, n) * 0.05;
        let r = retract(&manifold, &x, &step, &region).unwrap();
        prop_assert!(manifold.residual(&r.point).amax() <= 1e-10);
        prop_assert!(region.contains(&r.point));
    }
}
