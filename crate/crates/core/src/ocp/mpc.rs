//! Receding-horizon control of a plant with a surrogate model.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{bfgs_box, objective_of_coefficients, ControlModel, InputBasis, OcpSpec, QuadraticStageCost};
use crate::dictionary::{DelayBuffer, Dictionary};
use crate::error::{KoopError, Result};
use crate::newton::{newton_solve, KktIterate, NewtonOptions};
use crate::numerics::{Matrix, Vector};
use crate::plants::Plant;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Bfgs,
    Newton,
}

#[derive(Clone, Debug)]
pub struct MpcSettings {
    pub dt: f64,
    pub horizon: usize,
    pub t_final: f64,
    pub q: Matrix,
    pub r: Matrix,
    pub basis: InputBasis,
    pub solver: Solver,
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: bool,
    /// Use `a(t_k + iΔt)` over the horizon; otherwise hold `a(t_k)`.
    pub preview: bool,
}

/// Diagonal weight on the listed observables.
pub fn tracking_weights(n_obs: usize, tracked: &[(usize, f64)]) -> Matrix {
    let mut q = Matrix::zeros(n_obs, n_obs);
    for &(i, w) in tracked {
        q[(i, i)] = w;
    }
    q
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClosedLoopRecord {
    /// `t₀ … t_N`
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Lifted plant states `ψ(x_k)`.
    pub lifted: Vec<Vector>,
    /// Reference `a(t_k)`.
    pub references: Vec<Vector>,
    /// Applied inputs `u₀ … u_{N−1}`.
    pub inputs: Vec<Vec<f64>>,
    /// Optimal horizon objective of every solve.
    pub objectives: Vec<f64>,
    /// Objective of the initial guess of every solve.
    pub initial_objectives: Vec<f64>,
    pub solve_ms: Vec<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// Observables with a positive weight.
    pub tracked: Vec<usize>,
    /// Reason the loop stopped early.
    pub aborted: Option<String>,
}

impl ClosedLoopRecord {
    /// `Σ_k Δt ‖z_k − a(t_k)‖²` over tracked observables, `k ≥ 1`.
    pub fn tracking_error(&self) -> f64 {
        let mut acc = 0.0;
        for k in 1..self.lifted.len() {
            let dt = self.times[k] - self.times[k - 1];
            acc += dt
                * self
                    .tracked
                    .iter()
                    .map(|&i| (self.lifted[k][i] - self.references[k][i]).powi(2))
                    .sum::<f64>();
        }
        acc
    }

    pub fn total_solve_ms(&self) -> f64 {
        self.solve_ms.iter().sum()
    }

    pub fn unconverged_steps(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }
}

struct Lifter<'a> {
    dict: &'a Dictionary,
    buffer: Option<DelayBuffer>,
}

impl<'a> Lifter<'a> {
    /// Delay buffers start filled with copies of the first observation.
    fn new(dict: &'a Dictionary, x0: &[f64]) -> Result<Self> {
        let buffer = if dict.is_delayed() {
            let mut b = DelayBuffer::new(dict.spec().delay, dict.observation_dim())?;
            let obs = dict.observe(x0)?;
            for _ in 0..dict.spec().delay {
                b.push(&obs)?;
            }
            Some(b)
        } else {
            None
        };
        Ok(Self { dict, buffer })
    }

    fn current(&self, x: &[f64]) -> Result<Vector> {
        match &self.buffer {
            Some(b) => self.dict.eval(&b.stacked().expect("prefilled")),
            None => self.dict.eval(x),
        }
    }

    fn advance(&mut self, x: &[f64]) -> Result<Vector> {
        if let Some(b) = self.buffer.as_mut() {
            b.push(&self.dict.observe(x)?)?;
        }
        self.current(x)
    }
}

/// Closed-loop run from `x0` until `t_final`. Configuration problems are
/// errors; a failing plant step ends the run and is reported in the record.
pub fn mpc_loop(
    plant: &Plant,
    dict: &Dictionary,
    model: &ControlModel,
    settings: &MpcSettings,
    reference: &dyn Fn(f64) -> Vector,
    x0: &[f64],
) -> Result<ClosedLoopRecord> {
    let dt = settings.dt;
    if !(dt > 0.0) || settings.horizon == 0 || !(settings.t_final >= 0.0) {
        return Err(KoopError::invalid("MPC needs dt > 0, horizon ≥ 1 and t_final ≥ 0"));
    }
    let steps = (settings.t_final / dt + 1e-9).floor() as usize;
    let input_box = model.input_box().clone();
    if plant.input_dim() != input_box.dim() {
        return Err(KoopError::invalid("plant and model disagree on the input dimension"));
    }
    let n_o = dict.n_obs();
    let nc = input_box.dim();
    let tracked: Vec<usize> = (0..n_o).filter(|&i| settings.q[(i, i)] > 0.0).collect();

    let mut lifter = Lifter::new(dict, x0)?;
    let mut record = ClosedLoopRecord {
        tracked,
        ..Default::default()
    };
    let mut x = x0.to_vec();
    let mut z = lifter.current(&x)?;
    let rest = input_box.clamp(&vec![0.0; nc]);
    let mut previous_u = rest.clone();
    let mut previous_plan: Option<Vec<Vec<f64>>> = None;
    record.times.push(0.0);
    record.states.push(x.clone());
    record.lifted.push(z.clone());
    record.references.push(reference(0.0));

    for k in 0..steps {
        let t = k as f64 * dt;
        let a: Vec<Vector> = (1..=settings.horizon)
            .map(|i| reference(if settings.preview { t + i as f64 * dt } else { t }))
            .collect();
        if a.iter().any(|v| v.len() != n_o) {
            return Err(KoopError::invalid("reference has the wrong length"));
        }
        let om = model.resolve(dt, &previous_u)?;
        let cost = QuadraticStageCost::constant(settings.q.clone(), settings.r.clone(), a);
        let spec = OcpSpec::new(om, cost, input_box.clone(), settings.basis)?;

        let cold = spec.coefficients_from_inputs(&vec![rest.clone(); settings.horizon])?;
        let mut guess = cold.clone();
        let mut j_guess = objective_of_coefficients(&spec, &z, &cold)?;
        if let (true, Some(plan)) = (settings.warm_start, &previous_plan) {
            let mut shifted: Vec<Vec<f64>> = plan[1..].to_vec();
            shifted.push(plan.last().expect("nonempty").clone());
            let warm = spec.coefficients_from_inputs(&shifted)?;
            let j_warm = objective_of_coefficients(&spec, &z, &warm)?;
            if j_warm <= j_guess {
                guess = warm;
                j_guess = j_warm;
            }
        }

        let started = Instant::now();
        let (coeffs, j_opt, iters, ok) = match settings.solver {
            Solver::Bfgs => {
                let r = bfgs_box(&spec, &z, &guess, settings.tol, settings.max_iter)?;
                let ok = r.stationary();
                (r.x, r.f, r.iterations, ok)
            }
            Solver::Newton => {
                let it0 = KktIterate::consistent(&spec, &z, guess)?;
                let opts = NewtonOptions {
                    tol: settings.tol,
                    max_newton: settings.max_iter,
                    ..Default::default()
                };
                let (it, d) = newton_solve(&spec, &it0, &opts)?;
                let j = objective_of_coefficients(&spec, &z, &it.u_hat)?;
                (it.u_hat, j, d.iterations, d.converged && !d.clipped)
            }
        };
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        let plan: Vec<Vec<f64>> = spec
            .inputs_from_coefficients(&coeffs)?
            .iter()
            .map(|u| input_box.clamp(u))
            .collect();
        let u0 = plan[0].clone();

        record.inputs.push(u0.clone());
        record.objectives.push(j_opt);
        record.initial_objectives.push(j_guess);
        record.solve_ms.push(elapsed);
        record.iterations.push(iters);
        record.converged.push(ok);
        if !ok {
            log::debug!("step {k}: solver stopped before reaching tolerance");
        }

        match plant.step(&x, &u0, dt) {
            Ok(next) => x = next,
            Err(e) => {
                record.aborted = Some(format!("plant step {k} failed: {e}"));
                break;
            }
        }
        z = lifter.advance(&x)?;
        let t_next = (k + 1) as f64 * dt;
        record.times.push(t_next);
        record.states.push(x.clone());
        record.lifted.push(z.clone());
        record.references.push(reference(t_next));
        previous_u = u0;
        previous_plan = Some(plan);
    }
    Ok(record)
}
