//! Quadratic tracking problems over bilinear surrogate models.
//!
//! With `A(u) = K₀^Δt + Σⱼ uⱼ B^Δt_j`, the horizon objective is
//!
//! ```text
//! J = Σ_{i=0}^{ℓ−1} Δt [ (z_{i+1} − a_{i+1})ᵀ Q_{i+1} (z_{i+1} − a_{i+1}) + u_iᵀ R_i u_i ],
//! z_{i+1} = A(u_i) z_i.
//! ```
//!
//! Adjoints are indexed so that `λ_i = ∂J/∂z_{i+1}` (total derivative):
//! `λ_{ℓ} = 0`, `λ_i = A(u_{i+1})ᵀ λ_{i+1} + 2Δt Q_{i+1}(z_{i+1} − a_{i+1})`, and
//! the gradient with respect to `u_i` is `(B^Δt_j z_i)ᵀ λ_i + 2Δt (R_i u_i)_j`.

pub mod bfgs;
pub mod mpc;

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::edmd::{BilinearModel, GeneratorModel, OperatorModel};
use crate::error::{KoopError, Result};
use crate::krom::{generator_to_operator, ModelBank};
use crate::numerics::{Matrix, Vector};
use crate::plants::InputBox;

pub use bfgs::{minimize_box, BoxMinOptions, BoxMinResult, Termination};
pub use mpc::{mpc_loop, tracking_weights, ClosedLoopRecord, MpcSettings, Solver};

/// Time-indexed quadratic tracking cost. `q[i]` and `a[i]` weight `z_{i+1}`;
/// `r[i]` weights `u_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticStageCost {
    pub q: Vec<Matrix>,
    pub r: Vec<Matrix>,
    pub a: Vec<Vector>,
}

fn check_symmetric(m: &Matrix, what: &str, min_eig: f64) -> Result<()> {
    if !m.is_square() {
        return Err(KoopError::invalid(format!("{what} must be square")));
    }
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(KoopError::invalid(format!("{what} is not symmetric")));
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if eig < min_eig {
        return Err(KoopError::invalid(format!("{what} has eigenvalue {eig:.3e} below {min_eig:e}")));
    }
    Ok(())
}

impl QuadraticStageCost {
    /// Time-invariant weights with a per-step reference.
    pub fn constant(q: Matrix, r: Matrix, a: Vec<Vector>) -> Self {
        let l = a.len();
        Self {
            q: vec![q; l],
            r: vec![r; l],
            a,
        }
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self, n_o: usize, n_c: usize, horizon: usize) -> Result<()> {
        if self.q.len() != horizon || self.r.len() != horizon || self.a.len() != horizon {
            return Err(KoopError::invalid(format!(
                "cost schedule lengths ({}, {}, {}) differ from the horizon {horizon}",
                self.q.len(),
                self.r.len(),
                self.a.len()
            )));
        }
        for (i, q) in self.q.iter().enumerate() {
            if q.shape() != (n_o, n_o) {
                return Err(KoopError::invalid(format!("Q[{i}] must be {n_o}x{n_o}")));
            }
            check_symmetric(q, &format!("Q[{i}]"), -1e-10)?;
        }
        for (i, r) in self.r.iter().enumerate() {
            if r.shape() != (n_c, n_c) {
                return Err(KoopError::invalid(format!("R[{i}] must be {n_c}x{n_c}")));
            }
            check_symmetric(r, &format!("R[{i}]"), 1e-12)?;
        }
        if self.a.iter().any(|a| a.len() != n_o) {
            return Err(KoopError::invalid(format!("references must have length {n_o}")));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            q: self.q.iter().map(|q| q * s).collect(),
            r: self.r.iter().map(|r| r * s).collect(),
            a: self.a.clone(),
        }
    }
}

/// Parameterization of the input over the horizon.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputBasis {
    /// One coefficient per interval and channel; coefficients are the input values.
    #[default]
    Indicator,
    /// Orthonormal trigonometric basis on `[0, ℓΔt]`: constant, then cos/sin
    /// pairs of increasing frequency, `modes` functions in total.
    Fourier { modes: usize },
}

impl InputBasis {
    pub fn n_functions(&self, horizon: usize) -> usize {
        match self {
            InputBasis::Indicator => horizon,
            InputBasis::Fourier { modes } => *modes,
        }
    }

    /// `C[i, k] = (1/Δt) ∫_{I_i} φ_k`, so that `u_i = Σ_k C[i,k] û_k`.
    pub fn interval_matrix(&self, horizon: usize, dt: f64) -> Matrix {
        match self {
            InputBasis::Indicator => Matrix::identity(horizon, horizon),
            InputBasis::Fourier { modes } => {
                let t_end = horizon as f64 * dt;
                Matrix::from_fn(horizon, *modes, |i, k| {
                    let (t0, t1) = (i as f64 * dt, (i + 1) as f64 * dt);
                    if k == 0 {
                        return 1.0 / t_end.sqrt();
                    }
                    let m = k.div_ceil(2) as f64;
                    let w = 2.0 * PI * m / t_end;
                    let amp = (2.0 / t_end).sqrt();
                    let integral = if k % 2 == 1 {
                        ((w * t1).sin() - (w * t0).sin()) / w
                    } else {
                        ((w * t0).cos() - (w * t1).cos()) / w
                    };
                    amp * integral / dt
                })
            }
        }
    }
}

/// Model used for the horizon prediction.
#[derive(Clone, Debug)]
pub enum ControlModel {
    Operator(OperatorModel),
    /// Discretized by `K₀^Δt = I + Δt K₀`, `B^Δt = Δt B`.
    Generator(GeneratorModel),
    /// The region containing the previously applied input supplies the model.
    Bank(ModelBank),
}

impl ControlModel {
    pub fn from_bilinear(m: BilinearModel) -> Self {
        match m {
            BilinearModel::Operator(o) => ControlModel::Operator(o),
            BilinearModel::Generator(g) => ControlModel::Generator(g),
        }
    }

    pub fn resolve(&self, dt: f64, previous_input: &[f64]) -> Result<OperatorModel> {
        let from = |m: &BilinearModel| -> Result<OperatorModel> {
            match m {
                BilinearModel::Operator(o) => Ok(o.clone()),
                BilinearModel::Generator(g) => generator_to_operator(g, dt),
            }
        };
        let model = match self {
            ControlModel::Operator(o) => o.clone(),
            ControlModel::Generator(g) => generator_to_operator(g, dt)?,
            ControlModel::Bank(bank) => from(bank.select(previous_input)?.1)?,
        };
        if (model.dt - dt).abs() > 1e-12 * dt.max(1.0) {
            return Err(KoopError::invalid(format!(
                "model hold interval {} differs from the control interval {dt}",
                model.dt
            )));
        }
        Ok(model)
    }

    pub fn input_box(&self) -> &InputBox {
        match self {
            ControlModel::Operator(o) => &o.input_box,
            ControlModel::Generator(g) => &g.input_box,
            ControlModel::Bank(b) => &b.input_box,
        }
    }
}

/// One finite-horizon problem.
#[derive(Clone, Debug)]
pub struct OcpSpec {
    pub model: OperatorModel,
    pub horizon: usize,
    pub cost: QuadraticStageCost,
    pub input_box: InputBox,
    pub basis: InputBasis,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjointTrajectory {
    /// `λ₀ … λ_ℓ`
    pub lambda: Vec<Vector>,
}

impl OcpSpec {
    pub fn new(model: OperatorModel, cost: QuadraticStageCost, input_box: InputBox, basis: InputBasis) -> Result<Self> {
        let horizon = cost.horizon();
        if horizon == 0 {
            return Err(KoopError::invalid("horizon must be at least one step"));
        }
        if input_box.dim() != model.n_inputs() {
            return Err(KoopError::invalid("input box does not match the model's inputs"));
        }
        if let InputBasis::Fourier { modes } = basis {
            if modes == 0 || modes > horizon {
                return Err(KoopError::invalid("Fourier basis needs between 1 and horizon functions"));
            }
        }
        cost.validate(model.n_obs(), model.n_inputs(), horizon)?;
        Ok(Self {
            model,
            horizon,
            cost,
            input_box,
            basis,
        })
    }

    pub fn dt(&self) -> f64 {
        self.model.dt
    }

    pub fn n_obs(&self) -> usize {
        self.model.n_obs()
    }

    pub fn n_inputs(&self) -> usize {
        self.model.n_inputs()
    }

    pub fn n_coefficients(&self) -> usize {
        self.basis.n_functions(self.horizon) * self.n_inputs()
    }

    pub fn interval_matrix(&self) -> Matrix {
        self.basis.interval_matrix(self.horizon, self.dt())
    }

    /// Coefficients (function-major, channel-minor) to per-interval inputs.
    pub fn inputs_from_coefficients(&self, coeffs: &[f64]) -> Result<Vec<Vec<f64>>> {
        let nc = self.n_inputs();
        if coeffs.len() != self.n_coefficients() {
            return Err(KoopError::invalid(format!(
                "expected {} input coefficients, got {}",
                self.n_coefficients(),
                coeffs.len()
            )));
        }
        if self.basis == InputBasis::Indicator {
            return Ok(coeffs.chunks(nc).map(|c| c.to_vec()).collect());
        }
        let c = self.interval_matrix();
        Ok((0..self.horizon)
            .map(|i| {
                (0..nc)
                    .map(|j| (0..c.ncols()).map(|k| c[(i, k)] * coeffs[k * nc + j]).sum())
                    .collect()
            })
            .collect())
    }

    /// Least-squares coefficients reproducing the given per-interval inputs.
    pub fn coefficients_from_inputs(&self, u: &[Vec<f64>]) -> Result<Vec<f64>> {
        if u.len() != self.horizon {
            return Err(KoopError::invalid("input sequence length differs from the horizon"));
        }
        if self.basis == InputBasis::Indicator {
            return Ok(u.concat());
        }
        let nc = self.n_inputs();
        let c = self.interval_matrix();
        let cp = crate::numerics::pinv(&c, 1e-12)?;
        let mut out = vec![0.0; self.n_coefficients()];
        for k in 0..c.ncols() {
            for j in 0..nc {
                out[k * nc + j] = (0..self.horizon).map(|i| cp[(k, i)] * u[i][j]).sum();
            }
        }
        Ok(out)
    }

    /// `Cᵀ g` for a per-interval gradient `g`.
    pub fn project_gradient(&self, g: &[Vec<f64>]) -> Vec<f64> {
        if self.basis == InputBasis::Indicator {
            return g.concat();
        }
        let nc = self.n_inputs();
        let c = self.interval_matrix();
        let mut out = vec![0.0; self.n_coefficients()];
        for k in 0..c.ncols() {
            for j in 0..nc {
                out[k * nc + j] = (0..self.horizon).map(|i| c[(i, k)] * g[i][j]).sum();
            }
        }
        out
    }

    /// Box bounds in coefficient space; unbounded for non-indicator bases.
    pub fn coefficient_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self.basis {
            InputBasis::Indicator => (
                self.input_box.lo.repeat(self.horizon),
                self.input_box.hi.repeat(self.horizon),
            ),
            InputBasis::Fourier { .. } => (
                vec![f64::NEG_INFINITY; self.n_coefficients()],
                vec![f64::INFINITY; self.n_coefficients()],
            ),
        }
    }

    fn check_u(&self, u: &[Vec<f64>]) -> Result<()> {
        if u.len() != self.horizon || u.iter().any(|v| v.len() != self.n_inputs()) {
            return Err(KoopError::invalid(format!(
                "input sequence must be {} x {}",
                self.horizon,
                self.n_inputs()
            )));
        }
        Ok(())
    }

    fn check_z(&self, z: &[Vector]) -> Result<()> {
        if z.len() != self.horizon + 1 || z.iter().any(|v| v.len() != self.n_obs()) {
            return Err(KoopError::invalid(format!(
                "trajectory must hold {} vectors of length {}",
                self.horizon + 1,
                self.n_obs()
            )));
        }
        Ok(())
    }
}

/// `z₀ … z_ℓ` under per-interval inputs.
pub fn rollout(spec: &OcpSpec, z0: &Vector, u: &[Vec<f64>]) -> Result<Vec<Vector>> {
    spec.check_u(u)?;
    if z0.len() != spec.n_obs() {
        return Err(KoopError::invalid("initial lifted state has the wrong length"));
    }
    let mut z = Vec::with_capacity(spec.horizon + 1);
    z.push(z0.clone());
    for ui in u {
        let next = spec.model.at(ui)? * z.last().expect("nonempty");
        z.push(next);
    }
    Ok(z)
}

pub fn objective(spec: &OcpSpec, z: &[Vector], u: &[Vec<f64>]) -> Result<f64> {
    spec.check_z(z)?;
    spec.check_u(u)?;
    let dt = spec.dt();
    let mut j = 0.0;
    for i in 0..spec.horizon {
        let e = &z[i + 1] - &spec.cost.a[i];
        let ui = Vector::from_column_slice(&u[i]);
        j += dt * ((&spec.cost.q[i] * &e).dot(&e) + (&spec.cost.r[i] * &ui).dot(&ui));
    }
    Ok(j)
}

pub fn solve_adjoint_discrete(spec: &OcpSpec, z: &[Vector], u: &[Vec<f64>]) -> Result<AdjointTrajectory> {
    spec.check_z(z)?;
    spec.check_u(u)?;
    let l = spec.horizon;
    let dt = spec.dt();
    let mut lambda = vec![Vector::zeros(spec.n_obs()); l + 1];
    for i in (0..l).rev() {
        let gamma = &spec.cost.q[i] * (&z[i + 1] - &spec.cost.a[i]) * (2.0 * dt);
        lambda[i] = if i + 1 < l {
            spec.model.at(&u[i + 1])?.tr_mul(&lambda[i + 1]) + gamma
        } else {
            gamma
        };
    }
    Ok(AdjointTrajectory { lambda })
}

/// Per-interval gradient `∂J/∂u_i` (`ℓ × n_c`).
pub fn gradient(spec: &OcpSpec, z: &[Vector], adjoint: &AdjointTrajectory, u: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    spec.check_z(z)?;
    spec.check_u(u)?;
    if adjoint.lambda.len() != spec.horizon + 1 {
        return Err(KoopError::invalid("adjoint trajectory has the wrong length"));
    }
    let dt = spec.dt();
    Ok((0..spec.horizon)
        .map(|i| {
            let ru = &spec.cost.r[i] * Vector::from_column_slice(&u[i]);
            spec.model
                .b
                .iter()
                .enumerate()
                .map(|(j, bj)| (bj * &z[i]).dot(&adjoint.lambda[i]) + 2.0 * dt * ru[j])
                .collect()
        })
        .collect())
}

/// Objective and coefficient gradient in one forward/backward sweep.
pub fn value_and_gradient(spec: &OcpSpec, z0: &Vector, coeffs: &[f64]) -> Result<(f64, Vec<f64>)> {
    let u = spec.inputs_from_coefficients(coeffs)?;
    let z = rollout(spec, z0, &u)?;
    let j = objective(spec, &z, &u)?;
    let adj = solve_adjoint_discrete(spec, &z, &u)?;
    let g = gradient(spec, &z, &adj, &u)?;
    Ok((j, spec.project_gradient(&g)))
}

pub fn objective_of_coefficients(spec: &OcpSpec, z0: &Vector, coeffs: &[f64]) -> Result<f64> {
    let u = spec.inputs_from_coefficients(coeffs)?;
    objective(spec, &rollout(spec, z0, &u)?, &u)
}

/// Box-constrained quasi-Newton solve starting from `coeffs0`.
pub fn bfgs_box(spec: &OcpSpec, z0: &Vector, coeffs0: &[f64], tol: f64, max_iter: usize) -> Result<BoxMinResult> {
    let (lo, hi) = spec.coefficient_bounds();
    if spec.basis == InputBasis::Indicator
        && coeffs0.iter().zip(lo.iter().zip(&hi)).any(|(c, (l, h))| c < l || c > h)
    {
        return Err(KoopError::OutOfDomain(coeffs0.to_vec()));
    }
    let opts = BoxMinOptions {
        tol,
        max_iter,
        ..Default::default()
    };
    minimize_box(|c| value_and_gradient(spec, z0, c), coeffs0, &lo, &hi, &opts)
}
