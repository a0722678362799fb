mod common;

use common::{matrix, rng, vector};
use koopgen::numerics::{expm, gmres, integrate_bilinear, pinv, GmresOptions, Matrix, Scheme};
use proptest::prelude::*;

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    (a - b).norm() <= tol * b.norm().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn penrose_conditions_hold_for_every_rank(seed in any::<u64>(), m in 1usize..8, n in 1usize..8, r in 1usize..8) {
        let mut g = rng(seed);
        let r = r.min(m).min(n);
        let a = matrix(&mut g, m, r) * matrix(&mut g, r, n);
        let p = pinv(&a, 1e-10).unwrap();
        let ap = &a * &p;
        let pa = &p * &a;
        prop_assert!(close(&(&ap * &a), &a, 1e-9));
        prop_assert!(close(&(&pa * &p), &p, 1e-9));
        prop_assert!(close(&ap.transpose(), &ap, 1e-9));
        prop_assert!(close(&pa.transpose(), &pa, 1e-9));
    }

    #[test]
    fn expm_inverse_is_expm_of_negative(seed in any::<u64>(), n in 1usize..8, scale in 0.0f64..2.0) {
        let mut g = rng(seed);
        let a = matrix(&mut g, n, n) * scale;
        let prod = expm(&a).unwrap() * expm(&-&a).unwrap();
        prop_assert!(close(&prod, &Matrix::identity(n, n), 1e-10));
    }

    #[test]
    fn exact_scheme_is_a_semigroup(seed in any::<u64>(), n in 1usize..7, dt in 0.01f64..0.5) {
        let mut g = rng(seed);
        let k0 = matrix(&mut g, n, n);
        let b = vec![matrix(&mut g, n, n)];
        let u = [0.7];
        let z0 = vector(&mut g, n);
        let twice = integrate_bilinear(&k0, &b, &u, &integrate_bilinear(&k0, &b, &u, &z0, dt, Scheme::Exact).unwrap(), dt, Scheme::Exact).unwrap();
        let once = integrate_bilinear(&k0, &b, &u, &z0, 2.0 * dt, Scheme::Exact).unwrap();
        prop_assert!((&twice - &once).amax() <= 1e-10 * once.amax().max(1.0));
    }

    #[test]
    fn euler_is_first_order(seed in any::<u64>(), n in 1usize..5) {
        let mut g = rng(seed);
        let k0 = matrix(&mut g, n, n);
        let z0 = vector(&mut g, n);
        let exact = expm(&k0).unwrap() * &z0;
        let err = |steps: usize| {
            let mut z = z0.clone();
            for _ in 0..steps {
                z = integrate_bilinear(&k0, &[], &[], &z, 1.0 / steps as f64, Scheme::Euler).unwrap();
            }
            (z - &exact).norm()
        };
        let (e1, e2) = (err(400), err(800));
        prop_assume!(e1 > 1e-9);
        let order = (e1 / e2).log2();
        prop_assert!((0.9..=1.1).contains(&order), "order {order}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gmres_solves_well_conditioned_50x50(seed in any::<u64>()) {
        let mut g = rng(seed);
        let a = Matrix::identity(50, 50) * 8.0 + matrix(&mut g, 50, 50);
        let b = vector(&mut g, 50);
        let out = gmres(|v| &a * v, &b, &GmresOptions { tol: 1e-12, max_iter: 500, restart: 50 }).unwrap();
        prop_assert!(out.converged);
        prop_assert!((&a * &out.x - &b).norm() <= 1e-10 * b.norm());
    }
}
