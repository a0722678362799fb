//! Duffing setpoint tracking with a generator surrogate learned from 200
//! derivative samples and discretized by one explicit Euler step.

use koopgen::dictionary::{Basis, Dictionary, DictionarySpec};
use koopgen::edmd::{fit_generator, DerivativeMethod};
use koopgen::numerics::{Matrix, Vector};
use koopgen::ocp::{mpc_loop, tracking_weights, ControlModel, InputBasis, MpcSettings, Solver};
use koopgen::plants::{sample_training_set, DuffingParams, Plant, SamplingSpec};

fn setpoint(t: f64) -> f64 {
    if t < 13.0 {
        1.0
    } else if t < 27.0 {
        -0.5
    } else {
        0.5
    }
}

fn main() -> koopgen::Result<()> {
    let plant = Plant::duffing(DuffingParams::default());
    let sampling = SamplingSpec::Scattered {
        count: 100,
        lo: vec![-3.0, -3.0],
        hi: vec![3.0, 3.0],
        inputs: vec![vec![-1.0], vec![1.0]],
        snapshot_dt: None,
        stencil_radius: 0,
    };
    let data = sample_training_set(&plant, &sampling, 1)?;
    let dict = Dictionary::new(DictionarySpec::new(2, Basis::Monomials { degree: 5 }))?;
    let generator = fit_generator(&dict, &data, &DerivativeMethod::ChainRule, 1e-10)?;
    println!("fitted generator with {} observables", generator.n_obs());

    let n_o = dict.n_obs();
    let settings = MpcSettings {
        dt: 0.1,
        horizon: 5,
        t_final: 40.0,
        q: tracking_weights(n_o, &[(1, 1.0)]),
        r: Matrix::from_element(1, 1, 1e-4),
        basis: InputBasis::Indicator,
        solver: Solver::Bfgs,
        tol: 1e-8,
        max_iter: 200,
        warm_start: true,
        preview: false,
    };
    let reference = |t: f64| {
        let mut a = Vector::zeros(n_o);
        a[1] = setpoint(t);
        a
    };
    let record = mpc_loop(&plant, &dict, &ControlModel::Generator(generator), &settings, &reference, &[0.0, 0.0])?;

    for (k, t) in record.times.iter().enumerate() {
        if k % 20 == 0 {
            let u = record.inputs.get(k).map_or(f64::NAN, |u| u[0]);
            println!("t = {t:5.1}  x1 = {:+.4}  ref = {:+.2}  u = {u:+.4}", record.states[k][0], setpoint(*t));
        }
    }
    let mut worst: f64 = 0.0;
    for (t, x) in record.times.iter().zip(&record.states) {
        let since = [0.0, 13.0, 27.0].iter().filter(|s| **s <= *t).fold(0.0f64, |a, b| a.max(*b));
        if *t - since >= 5.0 {
            worst = worst.max((x[0] - setpoint(*t)).abs());
        }
    }
    println!("max |x1 - ref| after 5 s transients: {worst:.4}");
    println!("tracking error integral: {:.4}", record.tracking_error());
    println!("total solve time: {:.1} ms over {} steps", record.total_solve_ms(), record.inputs.len());
    Ok(())
}
