//! Two bilinear generator surrogates of the forced Duffing oscillator:
//! v1 interpolates the generators fitted at u = ±1, v2 regresses on all data
//! at once. Both are compared against the reference integrator for one second.

use std::f64::consts::PI;

use koopgen::dictionary::{Basis, Dictionary, DictionarySpec};
use koopgen::edmd::{fit_generator, fit_switched_generators, BilinearModel, DerivativeMethod};
use koopgen::krom::{lift_and_predict, PiecewiseConstantSignal};
use koopgen::numerics::Scheme;
use koopgen::plants::{sample_training_set, DuffingParams, Plant, SamplingSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> koopgen::Result<()> {
    let plant = Plant::duffing(DuffingParams::default());
    let data = sample_training_set(
        &plant,
        &SamplingSpec::Scattered {
            count: 100,
            lo: vec![-3.0, -3.0],
            hi: vec![3.0, 3.0],
            inputs: vec![vec![-1.0], vec![1.0]],
            snapshot_dt: None,
            stencil_radius: 0,
        },
        1,
    )?;
    let dict = Dictionary::new(DictionarySpec::new(2, Basis::Monomials { degree: 5 }))?;
    let (_, v1) = fit_switched_generators(&dict, &data.split_by_input(), &DerivativeMethod::ChainRule, 1e-10)?;
    let v2 = fit_generator(&dict, &data, &DerivativeMethod::ChainRule, 1e-10)?;
    let models = [("v1", BilinearModel::Generator(v1)), ("v2", BilinearModel::Generator(v2))];

    let dt = 0.01;
    let steps = 100;
    let inputs: [(&str, fn(f64) -> f64); 4] = [
        ("u = -1", |_| -1.0),
        ("u = 0", |_| 0.0),
        ("u = +1", |_| 1.0),
        ("u = sin(pi t)", |t| (PI * t).sin()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ics: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();

    for (label, f) in inputs {
        let signal = PiecewiseConstantSignal::sampled(dt, steps, plant.input_box.clone(), |t| vec![f(t)])?;
        for (name, model) in &models {
            let mut worst: f64 = 0.0;
            for x0 in &ics {
                let truth = plant.simulate(x0, &signal.values, dt)?;
                let z = lift_and_predict(model, &dict, x0, &signal, Scheme::Exact)?;
                for (zk, xk) in z.iter().zip(&truth) {
                    worst = worst.max((zk[1] - xk[0]).abs());
                }
            }
            println!("{label:>14}  {name}: max |x1 error| over 1 s, 20 ICs = {worst:.2e}");
        }
    }
    Ok(())
}
