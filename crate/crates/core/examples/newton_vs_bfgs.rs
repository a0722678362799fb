//! One tracking problem solved two ways: projected L-BFGS on the reduced
//! objective, and Newton-GMRES on the full optimality system.

use std::time::Instant;

use koopgen::dictionary::{Basis, DictionarySpec};
use koopgen::edmd::OperatorModel;
use koopgen::newton::{newton_solve, residuals, KktIterate, NewtonOptions};
use koopgen::numerics::{Matrix, Vector};
use koopgen::ocp::{bfgs_box, objective_of_coefficients, InputBasis, OcpSpec, QuadraticStageCost};
use koopgen::plants::InputBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> koopgen::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, nc, horizon) = (12, 2, 10);
    let mut noise = |s: f64| Matrix::from_fn(n, n, |_, _| rng.random_range(-s..s));
    let k0 = Matrix::identity(n, n) * 0.98 + noise(0.04);
    let b = vec![noise(0.01), noise(0.01)];
    let model = OperatorModel::new(k0, b, 0.1, DictionarySpec::new(n, Basis::Identity), InputBox::symmetric(1e3, nc))?;
    let target: Vector = Vector::from_fn(n, |i, _| if i < 3 { 1.0 } else { 0.0 });
    let cost = QuadraticStageCost::constant(Matrix::identity(n, n), Matrix::identity(nc, nc) * 0.1, vec![target; horizon]);
    let ib = model.input_box.clone();
    let spec = OcpSpec::new(model, cost, ib, InputBasis::Indicator)?;
    let z0 = Vector::from_fn(n, |i, _| 0.5 * (i as f64).cos());
    let start = vec![0.0; spec.n_coefficients()];

    let t = Instant::now();
    let bfgs = bfgs_box(&spec, &z0, &start, 1e-10, 1000)?;
    let t_bfgs = t.elapsed();

    let t = Instant::now();
    let (it, diag) = newton_solve(&spec, &KktIterate::consistent(&spec, &z0, start)?, &NewtonOptions::default())?;
    let t_newton = t.elapsed();
    let j_newton = objective_of_coefficients(&spec, &z0, &it.u_hat)?;

    println!("L-BFGS : J = {:.12e}  iterations {:>4}  {:?}  ({:?})", bfgs.f, bfgs.iterations, bfgs.termination, t_bfgs);
    println!("Newton : J = {j_newton:.12e}  iterations {:>4}  converged {}  ({t_newton:?})", diag.iterations, diag.converged);
    println!("Newton residual history: {:?}", diag.residual_norms.iter().map(|r| format!("{r:.1e}")).collect::<Vec<_>>());
    println!("GMRES iterations per step: {:?}", diag.gmres_iterations);
    println!("final optimality residual {:.2e}", residuals(&spec, &it)?.norm());
    let du = it.u_hat.iter().zip(&bfgs.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |u_newton - u_bfgs| = {du:.2e}");
    Ok(())
}
