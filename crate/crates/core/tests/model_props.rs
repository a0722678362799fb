mod common;

use common::{duffing_scattered, matrix, monomials, point, rel_err, rng, vector};
use koopgen::dictionary::{halton_rbf_centers, Basis, DelayBuffer, Dictionary, DictionarySpec, RbfKernel};
use koopgen::edmd::{
    fit_generator, fit_operators, fit_switched_generators, DerivativeMethod, GeneratorModel, Sample, TrajectoryDataset,
};
use koopgen::krom::{generator_to_operator, predict_continuous, predict_discrete, ModelBank, PiecewiseConstantSignal};
use koopgen::edmd::BilinearModel;
use koopgen::numerics::{Matrix, Scheme};
use koopgen::plants::{BurgersParams, DuffingParams, InputBox, Plant};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn bases(dim: usize) -> Vec<Basis> {
    let bounds = vec![(-1.0, 1.0); dim];
    let centers = halton_rbf_centers(dim, 6, &bounds).unwrap();
    vec![
        Basis::Identity,
        Basis::Monomials { degree: 3 },
        Basis::Rbf {
            centers: centers.clone(),
            shape: 0.7,
            kernel: RbfKernel::Gaussian,
        },
        Basis::Rbf {
            centers,
            shape: 0.7,
            kernel: RbfKernel::InverseMultiquadric,
        },
        Basis::Fourier {
            harmonics: 2,
            constant: true,
        },
        Basis::Stack {
            parts: vec![Basis::Monomials { degree: 1 }, Basis::Fourier { harmonics: 1, constant: false }],
        },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn jacobians_match_central_differences(seed in any::<u64>(), dim in 1usize..4) {
        let mut g = rng(seed);
        let x = point(&mut g, dim, 1.0);
        for basis in bases(dim) {
            let d = Dictionary::new(DictionarySpec::new(dim, basis.clone())).unwrap();
            let j = d.jacobian(&x).unwrap();
            let h = 1e-6;
            for c in 0..dim {
                let (mut p, mut m) = (x.clone(), x.clone());
                p[c] += h;
                m[c] -= h;
                let fd = (d.eval(&p).unwrap() - d.eval(&m).unwrap()) / (2.0 * h);
                let err = (j.column(c) - &fd).amax();
                prop_assert!(err <= 1e-6 * fd.amax().max(1.0), "{basis:?}: {err}");
            }
        }
    }

    #[test]
    fn batch_columns_are_independent(seed in any::<u64>(), dim in 1usize..4, count in 2usize..8, drop in 0usize..8) {
        let mut g = rng(seed);
        let xs: Vec<Vec<f64>> = (0..count).map(|_| point(&mut g, dim, 2.0)).collect();
        let drop = drop % count;
        let mut fewer = xs.clone();
        fewer.remove(drop);
        for basis in bases(dim) {
            let d = Dictionary::new(DictionarySpec::new(dim, basis)).unwrap();
            let full = d.eval_batch(&xs).unwrap();
            let part = d.eval_batch(&fewer).unwrap();
            prop_assert_eq!(&full.clone().remove_column(drop), &part);
            for (j, x) in xs.iter().enumerate() {
                prop_assert_eq!(full.column(j).into_owned(), d.eval(x).unwrap());
            }
        }
    }

    #[test]
    fn serialized_spec_evaluates_bitwise_equal(seed in any::<u64>(), dim in 1usize..4) {
        let mut g = rng(seed);
        let x = point(&mut g, dim, 2.0);
        for basis in bases(dim) {
            let spec = DictionarySpec::new(dim, basis);
            let back: DictionarySpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
            let (a, b) = (Dictionary::new(spec).unwrap(), Dictionary::new(back).unwrap());
            let (za, zb) = (a.eval(&x).unwrap(), b.eval(&x).unwrap());
            prop_assert!(za.iter().zip(zb.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn delay_buffer_keeps_newest_first(depth in 1usize..5, raw in 1usize..4, pushes in 0usize..12) {
        let mut buf = DelayBuffer::new(depth, raw).unwrap();
        let obs = |k: usize| (0..raw).map(|i| (k * 10 + i) as f64).collect::<Vec<_>>();
        for k in 0..pushes {
            buf.push(&obs(k)).unwrap();
        }
        match buf.stacked() {
            None => prop_assert!(pushes < depth),
            Some(s) => {
                prop_assert!(pushes >= depth);
                let expected: Vec<f64> = (0..depth).flat_map(|j| obs(pushes - 1 - j)).collect();
                prop_assert_eq!(s, expected);
            }
        }
        prop_assert!(buf.push(&vec![0.0; raw + 1]).is_err());
    }
}

fn affinity_defect(plant: &Plant, g: &mut rand_chacha::ChaCha8Rng, half: f64) -> f64 {
    let ib = &plant.input_box;
    let draw = |g: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        ib.lo.iter().zip(&ib.hi).map(|(l, h)| g.random_range(*l..=*h)).collect()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = point(g, plant.state_dim(), half);
        let (u1, u2, a) = (draw(g), draw(g), g.random::<f64>());
        let mix: Vec<f64> = u1.iter().zip(&u2).map(|(p, q)| a * p + (1.0 - a) * q).collect();
        let l = plant.rhs(&x, &mix).unwrap();
        let (r1, r2) = (plant.rhs(&x, &u1).unwrap(), plant.rhs(&x, &u2).unwrap());
        for i in 0..l.len() {
            let d = (l[i] - a * r1[i] - (1.0 - a) * r2[i]).abs() / l[i].abs().max(1.0);
            worst = worst.max(d);
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn plants_are_control_affine(seed in any::<u64>()) {
        let mut g = rng(seed);
        let linear = Plant::linear(matrix(&mut g, 3, 3), matrix(&mut g, 3, 2), InputBox::symmetric(1.0, 2)).unwrap();
        for plant in [
            Plant::duffing(DuffingParams::default()),
            Plant::burgers(BurgersParams::default()).unwrap(),
            linear,
            Plant::circle_rotation(),
        ] {
            prop_assert!(plant.is_control_affine());
            let d = affinity_defect(&plant, &mut g, 2.0);
            prop_assert!(d <= 1e-12, "{}: {d}", plant.name());
        }
    }

    #[test]
    fn plant_steps_compose(seed in any::<u64>(), u in -1.0f64..1.0) {
        let mut g = rng(seed);
        let duffing = Plant::duffing(DuffingParams::default());
        let burgers = Plant::burgers(BurgersParams::default()).unwrap();
        let x = point(&mut g, 2, 2.0);
        let two = duffing.step(&duffing.step(&x, &[u], 0.05).unwrap(), &[u], 0.05).unwrap();
        let one = duffing.step(&x, &[u], 0.1).unwrap();
        prop_assert!(two.iter().zip(&one).all(|(a, b)| (a - b).abs() <= 1e-7));
        let v0 = burgers.default_initial_state();
        let ub = [0.05 * u];
        let two = burgers.step(&burgers.step(&v0, &ub, 0.25).unwrap(), &ub, 0.25).unwrap();
        let one = burgers.step(&v0, &ub, 0.5).unwrap();
        prop_assert!(two.iter().zip(&one).all(|(a, b)| (a - b).abs() <= 1e-7));
    }

    #[test]
    fn forward_difference_generator_matches_operators(seed in 0u64..1000, dt in 0.001f64..0.1) {
        let (_, data) = duffing_scattered(40, Some(dt), seed);
        let dict = monomials(2, 3);
        let gm = fit_generator(&dict, &data, &DerivativeMethod::Forward, 1e-10).unwrap();
        let om = fit_operators(&dict, &data, 1e-10).unwrap();
        let n = dict.n_obs();
        prop_assert!(rel_err(&(Matrix::identity(n, n) + &gm.k0 * dt), &om.k0) <= 1e-9);
        prop_assert!(rel_err(&(&gm.b[0] * dt), &om.b[0]) <= 1e-9);
    }

    #[test]
    fn fits_ignore_sample_order_and_duplication(seed in 0u64..1000) {
        let (_, data) = duffing_scattered(30, Some(0.05), seed);
        let dict = monomials(2, 3);
        let base_g = fit_generator(&dict, &data, &DerivativeMethod::ChainRule, 1e-10).unwrap();
        let base_o = fit_operators(&dict, &data, 1e-10).unwrap();

        let mut shuffled = data.samples.clone();
        shuffled.shuffle(&mut rng(seed ^ 0x5eed));
        let perm = TrajectoryDataset::new(shuffled, data.input_box.clone(), None).unwrap();
        let pg = fit_generator(&dict, &perm, &DerivativeMethod::ChainRule, 1e-10).unwrap();
        let po = fit_operators(&dict, &perm, 1e-10).unwrap();
        prop_assert!(rel_err(&pg.k0, &base_g.k0) <= 1e-12 && rel_err(&pg.b[0], &base_g.b[0]) <= 1e-12);
        prop_assert!(rel_err(&po.k0, &base_o.k0) <= 1e-12 && rel_err(&po.b[0], &base_o.b[0]) <= 1e-12);

        let doubled: Vec<Sample> = data.samples.iter().flat_map(|s| [s.clone(), s.clone()]).collect();
        let dup = TrajectoryDataset::new(doubled, data.input_box.clone(), None).unwrap();
        let dg = fit_generator(&dict, &dup, &DerivativeMethod::ChainRule, 1e-10).unwrap();
        let dop = fit_operators(&dict, &dup, 1e-10).unwrap();
        prop_assert!(rel_err(&dg.k0, &base_g.k0) <= 1e-10 && rel_err(&dg.b[0], &base_g.b[0]) <= 1e-10);
        prop_assert!(rel_err(&dop.k0, &base_o.k0) <= 1e-10 && rel_err(&dop.b[0], &base_o.b[0]) <= 1e-10);
    }

    #[test]
    fn switched_generators_are_exact_on_linear_plants(seed in any::<u64>(), n in 1usize..4, nc in 1usize..3) {
        let mut g = rng(seed);
        let (a, b) = (matrix(&mut g, n, n), matrix(&mut g, n, nc));
        let plant = Plant::linear(a, b, InputBox::symmetric(1.0, nc)).unwrap();
        let dict = monomials(n, 1);
        let mut levels = vec![vec![0.0; nc]];
        for i in 0..nc {
            let mut e = vec![0.0; nc];
            e[i] = 1.0;
            levels.push(e);
        }
        let per_level: Vec<(Vec<f64>, TrajectoryDataset)> = levels
            .iter()
            .map(|u| {
                let samples = (0..3 * n + 2)
                    .map(|_| {
                        let x = point(&mut g, n, 1.0);
                        let xdot = plant.rhs(&x, u).unwrap();
                        Sample::with_derivative(x, u.clone(), xdot)
                    })
                    .collect();
                (u.clone(), TrajectoryDataset::new(samples, plant.input_box.clone(), None).unwrap())
            })
            .collect();
        let (_, model) = fit_switched_generators(&dict, &per_level, &DerivativeMethod::ChainRule, 1e-10).unwrap();
        let x = point(&mut g, n, 1.0);
        for i in 0..nc {
            let mut u = vec![0.0; nc];
            u[i] = 0.5;
            let pred = model.at(&u).unwrap() * dict.eval(&x).unwrap();
            let truth = dict.jacobian(&x).unwrap() * koopgen::numerics::Vector::from_vec(plant.rhs(&x, &u).unwrap());
            prop_assert!((pred - &truth).amax() <= 1e-9 * truth.amax().max(1.0));
        }
    }
}

fn random_generator(g: &mut rand_chacha::ChaCha8Rng, n: usize, nc: usize) -> GeneratorModel {
    GeneratorModel::new(
        matrix(g, n, n),
        (0..nc).map(|_| matrix(g, n, n)).collect(),
        DictionarySpec::new(n, Basis::Identity),
        InputBox::symmetric(1.0, nc),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn euler_prediction_equals_converted_operator(seed in any::<u64>(), n in 1usize..6, nc in 1usize..3, dt in 0.001f64..0.2) {
        let mut g = rng(seed);
        let gm = random_generator(&mut g, n, nc);
        let om = generator_to_operator(&gm, dt).unwrap();
        let signal = PiecewiseConstantSignal::new(dt, (0..10).map(|_| point(&mut g, nc, 1.0)).collect(), gm.input_box.clone()).unwrap();
        let z0 = vector(&mut g, n);
        let e = predict_continuous(&gm, &z0, &signal, Scheme::Euler).unwrap();
        let d = predict_discrete(&om, &z0, &signal).unwrap();
        for (a, b) in e.iter().zip(&d) {
            prop_assert!((a - b).amax() <= 1e-12 * b.amax().max(1.0));
        }
    }

    #[test]
    fn exact_prediction_is_a_semigroup(seed in any::<u64>(), n in 1usize..6, dt in 0.01f64..0.3) {
        let mut g = rng(seed);
        let gm = random_generator(&mut g, n, 1);
        let u = point(&mut g, 1, 1.0);
        let z0 = vector(&mut g, n);
        let fine = PiecewiseConstantSignal::new(dt, vec![u.clone(); 2], gm.input_box.clone()).unwrap();
        let coarse = PiecewiseConstantSignal::new(2.0 * dt, vec![u], gm.input_box.clone()).unwrap();
        let a = predict_continuous(&gm, &z0, &fine, Scheme::Exact).unwrap();
        let b = predict_continuous(&gm, &z0, &coarse, Scheme::Exact).unwrap();
        prop_assert!((&a[2] - &b[1]).amax() <= 1e-10 * b[1].amax().max(1.0));
    }

    #[test]
    fn models_are_affine_in_the_input(seed in any::<u64>(), n in 1usize..6, nc in 1usize..3, a in 0.0f64..1.0) {
        let mut g = rng(seed);
        let gm = random_generator(&mut g, n, nc);
        let (u1, u2) = (point(&mut g, nc, 1.0), point(&mut g, nc, 1.0));
        let mix: Vec<f64> = u1.iter().zip(&u2).map(|(p, q)| a * p + (1.0 - a) * q).collect();
        let lhs = gm.at(&mix).unwrap();
        let rhs = gm.at(&u1).unwrap() * a + gm.at(&u2).unwrap() * (1.0 - a);
        prop_assert!(rel_err(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn bank_selection_is_total_and_deterministic(seed in any::<u64>(), cuts in proptest::collection::vec(-0.99f64..0.99, 0..4)) {
        let mut g = rng(seed);
        let mut edges = vec![-1.0];
        let mut sorted = cuts.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        edges.extend(sorted);
        edges.push(1.0);
        let entries: Vec<(InputBox, BilinearModel)> = edges
            .windows(2)
            .map(|w| (InputBox::new(vec![w[0]], vec![w[1]]).unwrap(), BilinearModel::Generator(random_generator(&mut g, 2, 1))))
            .collect();
        let bank = ModelBank::new(InputBox::symmetric(1.0, 1), entries).unwrap();
        for _ in 0..50 {
            let u = [g.random_range(-1.0..=1.0)];
            let (i, _) = bank.select(&u).unwrap();
            prop_assert_eq!(bank.select(&u).unwrap().0, i);
            prop_assert!(edges[i] <= u[0] && u[0] <= edges[i + 1]);
        }
        prop_assert!(bank.select(&[1.5]).is_err());
    }
}
