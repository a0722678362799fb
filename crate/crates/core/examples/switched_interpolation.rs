//! Rotation on the circle, x' = u, lifted by (cos x, sin x). Operators fitted
//! at u = 0 and u = 1 are interpolated affinely; the error of the
//! interpolated operator at u = 0.5 shrinks like dt^2.

use std::f64::consts::PI;

use koopgen::dictionary::{Basis, Dictionary, DictionarySpec};
use koopgen::edmd::fit_switched_family;
use koopgen::plants::{sample_training_set, Plant, SamplingSpec};

fn main() -> koopgen::Result<()> {
    let plant = Plant::circle_rotation();
    let dict = Dictionary::new(DictionarySpec::new(1, Basis::Fourier { harmonics: 1, constant: false }))?;
    let mut previous: Option<f64> = None;
    for dt in [0.4, 0.2, 0.1, 0.05, 0.025] {
        let sampling = SamplingSpec::Scattered {
            count: 40,
            lo: vec![-PI],
            hi: vec![PI],
            inputs: vec![vec![0.0], vec![1.0]],
            snapshot_dt: Some(dt),
            stencil_radius: 0,
        };
        let data = sample_training_set(&plant, &sampling, 4)?;
        let (levels, model) = fit_switched_family(&dict, &data.split_by_input(), 1e-10)?;
        let k = model.at(&[0.5])?;
        let mut worst: f64 = 0.0;
        for i in 0..64 {
            let x = -PI + 2.0 * PI * i as f64 / 64.0;
            let truth = dict.eval(&plant.step(&[x], &[0.5], dt)?)?;
            worst = worst.max((&k * dict.eval(&[x])? - truth).norm());
        }
        let order = previous.map_or(String::new(), |p| format!("  observed order {:.2}", (p / worst).log2()));
        println!("dt = {dt:<6} levels {}  one-step error at u = 0.5: {worst:.3e}{order}", levels.len());
        previous = Some(worst);
    }
    Ok(())
}
