//! With forward-difference derivatives on snapshot data, the generator fit
//! and the operator fit are tied by K^dt = I + dt L. Shown on Duffing data
//! for a few hold intervals.

use koopgen::dictionary::{Basis, Dictionary, DictionarySpec};
use koopgen::edmd::{fit_generator, fit_operators, DerivativeMethod};
use koopgen::krom::generator_to_operator;
use koopgen::numerics::Matrix;
use koopgen::plants::{sample_training_set, DuffingParams, Plant, SamplingSpec};

fn main() -> koopgen::Result<()> {
    let plant = Plant::duffing(DuffingParams::default());
    let dict = Dictionary::new(DictionarySpec::new(2, Basis::Monomials { degree: 5 }))?;
    let n = dict.n_obs();
    println!("{n} observables");
    for dt in [0.1, 0.01, 0.001] {
        let sampling = SamplingSpec::Scattered {
            count: 100,
            lo: vec![-3.0, -3.0],
            hi: vec![3.0, 3.0],
            inputs: vec![vec![-1.0], vec![1.0]],
            snapshot_dt: Some(dt),
            stencil_radius: 0,
        };
        let data = sample_training_set(&plant, &sampling, 1)?;
        let generator = fit_generator(&dict, &data, &DerivativeMethod::Forward, 1e-10)?;
        let operators = fit_operators(&dict, &data, 1e-10)?;
        let converted = generator_to_operator(&generator, dt)?;
        let dk = (&operators.k0 - &converted.k0).norm() / operators.k0.norm();
        let db = (&operators.b[0] - &converted.b[0]).norm() / operators.b[0].norm();
        let drift = (&operators.k0 - Matrix::identity(n, n)).norm() / dt;
        println!("dt = {dt:<6} |K0 - (I + dt L0)| = {dk:.1e}  |B - dt L1| = {db:.1e}  |K0 - I|/dt = {drift:.3e}");
    }
    Ok(())
}
