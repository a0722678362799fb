//! Newton–Krylov solve of the discrete first-order optimality system.
//!
//! Unknowns are `z₁ … z_ℓ`, `λ₀ … λ_{ℓ−1}` and the input coefficients `û`
//! (`z₀` is fixed and `λ_ℓ = 0`). Residual blocks:
//!
//! ```text
//! r_z,i = z_{i+1} − A(u_i) z_i
//! r_λ,i = λ_i − A(u_{i+1})ᵀ λ_{i+1} − 2Δt Q_{i+1}(z_{i+1} − a_{i+1})
//! r_û   = Cᵀ g,   g_{i,j} = (B_j z_i)ᵀ λ_i + 2Δt (R_i u_i)_j
//! ```
//!
//! Every block is bilinear, so Jacobian-vector products are exact and the
//! Jacobian is never stored.

use crate::error::{KoopError, Result};
use crate::numerics::{gmres, GmresOptions, Vector};
use crate::ocp::{rollout, solve_adjoint_discrete, InputBasis, OcpSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct KktIterate {
    /// `z₀ … z_ℓ`
    pub z: Vec<Vector>,
    /// `λ₀ … λ_ℓ`
    pub lambda: Vec<Vector>,
    pub u_hat: Vec<f64>,
}

/// Residual blocks in the same layout as the unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct KktResidual {
    pub r_z: Vec<Vector>,
    pub r_lambda: Vec<Vector>,
    pub r_u: Vec<f64>,
}

impl KktResidual {
    pub fn norm(&self) -> f64 {
        self.to_flat().norm()
    }

    pub fn to_flat(&self) -> Vector {
        let mut v: Vec<f64> = Vec::new();
        for r in self.r_z.iter().chain(&self.r_lambda) {
            v.extend(r.iter());
        }
        v.extend(&self.r_u);
        Vector::from_vec(v)
    }
}

impl KktIterate {
    /// Forward rollout and adjoint sweep for the given coefficients, so that the
    /// dynamics and adjoint blocks vanish.
    pub fn consistent(spec: &OcpSpec, z0: &Vector, u_hat: Vec<f64>) -> Result<Self> {
        let u = spec.inputs_from_coefficients(&u_hat)?;
        let z = rollout(spec, z0, &u)?;
        let lambda = solve_adjoint_discrete(spec, &z, &u)?.lambda;
        Ok(Self { z, lambda, u_hat })
    }

    fn check(&self, spec: &OcpSpec) -> Result<()> {
        let (l, n) = (spec.horizon, spec.n_obs());
        if self.z.len() != l + 1
            || self.lambda.len() != l + 1
            || self.z.iter().chain(&self.lambda).any(|v| v.len() != n)
            || self.u_hat.len() != spec.n_coefficients()
        {
            return Err(KoopError::invalid("iterate shape does not match the problem"));
        }
        Ok(())
    }

    fn to_flat(&self) -> Vector {
        let mut v: Vec<f64> = Vec::new();
        for z in &self.z[1..] {
            v.extend(z.iter());
        }
        for l in &self.lambda[..self.lambda.len() - 1] {
            v.extend(l.iter());
        }
        v.extend(&self.u_hat);
        Vector::from_vec(v)
    }

    /// Direction with the same layout; `z₀` and `λ_ℓ` components are zero.
    fn direction_from_flat(spec: &OcpSpec, v: &Vector) -> Self {
        let (l, n) = (spec.horizon, spec.n_obs());
        let mut z = vec![Vector::zeros(n); l + 1];
        let mut lambda = vec![Vector::zeros(n); l + 1];
        for i in 0..l {
            z[i + 1] = v.rows(i * n, n).into_owned();
            lambda[i] = v.rows((l + i) * n, n).into_owned();
        }
        Self {
            z,
            lambda,
            u_hat: v.rows(2 * l * n, v.len() - 2 * l * n).iter().copied().collect(),
        }
    }

    fn axpy(&self, t: f64, d: &KktIterate) -> Self {
        Self {
            z: self.z.iter().zip(&d.z).map(|(a, b)| a + b * t).collect(),
            lambda: self.lambda.iter().zip(&d.lambda).map(|(a, b)| a + b * t).collect(),
            u_hat: self.u_hat.iter().zip(&d.u_hat).map(|(a, b)| a + t * b).collect(),
        }
    }
}

fn interval_inputs(spec: &OcpSpec, u_hat: &[f64]) -> Result<Vec<Vec<f64>>> {
    spec.inputs_from_coefficients(u_hat)
}

pub fn residuals(spec: &OcpSpec, it: &KktIterate) -> Result<KktResidual> {
    it.check(spec)?;
    let l = spec.horizon;
    let dt = spec.dt();
    let u = interval_inputs(spec, &it.u_hat)?;
    let mut r_z = Vec::with_capacity(l);
    let mut r_lambda = Vec::with_capacity(l);
    let mut g = Vec::with_capacity(l);
    for i in 0..l {
        r_z.push(&it.z[i + 1] - spec.model.at(&u[i])? * &it.z[i]);
        let mut rl = &it.lambda[i] - &spec.cost.q[i] * (&it.z[i + 1] - &spec.cost.a[i]) * (2.0 * dt);
        if i + 1 < l {
            rl -= spec.model.at(&u[i + 1])?.tr_mul(&it.lambda[i + 1]);
        }
        r_lambda.push(rl);
        let ru = &spec.cost.r[i] * Vector::from_column_slice(&u[i]);
        g.push(
            spec.model
                .b
                .iter()
                .enumerate()
                .map(|(j, bj)| (bj * &it.z[i]).dot(&it.lambda[i]) + 2.0 * dt * ru[j])
                .collect::<Vec<f64>>(),
        );
    }
    Ok(KktResidual {
        r_z,
        r_lambda,
        r_u: spec.project_gradient(&g),
    })
}

/// Directional derivative of [`residuals`] at `it` along `dir`.
pub fn jvp(spec: &OcpSpec, it: &KktIterate, dir: &KktIterate) -> Result<KktResidual> {
    it.check(spec)?;
    dir.check(spec)?;
    let l = spec.horizon;
    let dt = spec.dt();
    let u = interval_inputs(spec, &it.u_hat)?;
    let du = interval_inputs(spec, &dir.u_hat)?;
    let b = &spec.model.b;
    let mut r_z = Vec::with_capacity(l);
    let mut r_lambda = Vec::with_capacity(l);
    let mut dg = Vec::with_capacity(l);
    for i in 0..l {
        let mut rz = &dir.z[i + 1] - spec.model.at(&u[i])? * &dir.z[i];
        for (j, bj) in b.iter().enumerate() {
            if du[i][j] != 0.0 {
                rz -= bj * &it.z[i] * du[i][j];
            }
        }
        r_z.push(rz);

        let mut rl = &dir.lambda[i] - &spec.cost.q[i] * &dir.z[i + 1] * (2.0 * dt);
        if i + 1 < l {
            rl -= spec.model.at(&u[i + 1])?.tr_mul(&dir.lambda[i + 1]);
            for (j, bj) in b.iter().enumerate() {
                if du[i + 1][j] != 0.0 {
                    rl -= bj.tr_mul(&it.lambda[i + 1]) * du[i + 1][j];
                }
            }
        }
        r_lambda.push(rl);

        let rdu = &spec.cost.r[i] * Vector::from_column_slice(&du[i]);
        dg.push(
            b.iter()
                .enumerate()
                .map(|(j, bj)| {
                    (bj * &dir.z[i]).dot(&it.lambda[i]) + (bj * &it.z[i]).dot(&dir.lambda[i]) + 2.0 * dt * rdu[j]
                })
                .collect::<Vec<f64>>(),
        );
    }
    Ok(KktResidual {
        r_z,
        r_lambda,
        r_u: spec.project_gradient(&dg),
    })
}

#[derive(Clone, Debug)]
pub struct NewtonOptions {
    /// Stop when `‖r‖ ≤ tol·(1 + ‖r₀‖)`.
    pub tol: f64,
    pub max_newton: usize,
    pub gmres: GmresOptions,
    pub max_backtracks: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_newton: 20,
            gmres: GmresOptions {
                tol: 1e-13,
                max_iter: 2000,
                restart: 200,
            },
            max_backtracks: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonDiagnostics {
    /// Residual norm before the first step and after every step.
    pub residual_norms: Vec<f64>,
    pub gmres_iterations: Vec<usize>,
    pub gmres_residuals: Vec<f64>,
    pub step_lengths: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when some GMRES solve missed its tolerance.
    pub gmres_stagnated: bool,
    /// Set when the final inputs had to be moved into the box.
    pub clipped: bool,
}

pub fn newton_solve(spec: &OcpSpec, it0: &KktIterate, opts: &NewtonOptions) -> Result<(KktIterate, NewtonDiagnostics)> {
    it0.check(spec)?;
    if it0.to_flat().iter().any(|v| !v.is_finite()) {
        return Err(KoopError::invalid("initial iterate is not finite"));
    }
    let mut it = it0.clone();
    it.lambda[spec.horizon].fill(0.0);
    let mut r = residuals(spec, &it)?;
    let mut rn = r.norm();
    let target = opts.tol * (1.0 + rn);
    let mut diag = NewtonDiagnostics {
        residual_norms: vec![rn],
        ..Default::default()
    };
    while rn > target && diag.iterations < opts.max_newton {
        let rhs = -r.to_flat();
        let mut err = None;
        let outcome = gmres(
            |v| {
                let d = KktIterate::direction_from_flat(spec, v);
                match jvp(spec, &it, &d) {
                    Ok(jv) => jv.to_flat(),
                    Err(e) => {
                        err = Some(e);
                        Vector::zeros(v.len())
                    }
                }
            },
            &rhs,
            &opts.gmres,
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        diag.gmres_iterations.push(outcome.iterations);
        diag.gmres_residuals.push(outcome.relative_residual);
        if !outcome.converged {
            diag.gmres_stagnated = true;
            log::debug!("gmres stopped at relative residual {:.3e}", outcome.relative_residual);
        }
        let step = KktIterate::direction_from_flat(spec, &outcome.x);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial = it.axpy(t, &step);
            let tr = residuals(spec, &trial)?;
            let tn = tr.norm();
            if tn.is_finite() && tn < rn {
                accepted = Some((trial, tr, tn));
                break;
            }
            t *= 0.5;
        }
        diag.iterations += 1;
        let Some((trial, tr, tn)) = accepted else {
            diag.step_lengths.push(0.0);
            break;
        };
        diag.step_lengths.push(t);
        it = trial;
        r = tr;
        rn = tn;
        diag.residual_norms.push(rn);
    }
    diag.converged = rn <= target;

    let u = spec.inputs_from_coefficients(&it.u_hat)?;
    if u.iter().any(|ui| !spec.input_box.contains(ui)) {
        diag.clipped = true;
        if spec.basis == InputBasis::Indicator {
            let (lo, hi) = spec.coefficient_bounds();
            for (k, c) in it.u_hat.iter_mut().enumerate() {
                *c = c.clamp(lo[k], hi[k]);
            }
        }
    }
    Ok((it, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{Basis, DictionarySpec};
    use crate::edmd::OperatorModel;
    use crate::numerics::Matrix;
    use crate::ocp::{bfgs_box, QuadraticStageCost};
    use crate::plants::InputBox;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(rng: &mut ChaCha8Rng, n: usize, nc: usize, l: usize, basis: InputBasis) -> OcpSpec {
        let mut r = |_, _| rng.random_range(-1.0..1.0);
        let k0 = Matrix::identity(n, n) + Matrix::from_fn(n, n, &mut r) * (0.3 / n as f64);
        let b = (0..nc).map(|_| Matrix::from_fn(n, n, &mut r) * 0.2).collect();
        let model = OperatorModel::new(k0, b, 0.1, DictionarySpec::new(n, Basis::Identity), InputBox::symmetric(5.0, nc)).unwrap();
        let q = Matrix::identity(n, n);
        let rr = Matrix::identity(nc, nc) * 0.5;
        let a = (0..l).map(|_| Vector::from_fn(n, &mut r) * 0.3).collect();
        let bx = model.input_box.clone();
        OcpSpec::new(model, QuadraticStageCost::constant(q, rr, a), bx, basis).unwrap()
    }

    fn random_iterate(rng: &mut ChaCha8Rng, spec: &OcpSpec) -> KktIterate {
        let n = spec.n_obs();
        let mut v = |_, _| rng.random_range(-1.0..1.0);
        let z = (0..=spec.horizon).map(|_| Vector::from_fn(n, &mut v)).collect();
        let mut lambda: Vec<Vector> = (0..=spec.horizon).map(|_| Vector::from_fn(n, &mut v)).collect();
        lambda[spec.horizon].fill(0.0);
        let u_hat = (0..spec.n_coefficients()).map(|_| rng.random_range(-1.0..1.0)).collect();
        KktIterate { z, lambda, u_hat }
    }

    #[test]
    fn consistent_iterate_leaves_only_the_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = random_spec(&mut rng, 5, 2, 4, InputBasis::Indicator);
        let z0 = Vector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let c: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let it = KktIterate::consistent(&spec, &z0, c.clone()).unwrap();
        let r = residuals(&spec, &it).unwrap();
        assert!(r.r_z.iter().chain(&r.r_lambda).all(|v| v.amax() < 1e-12));
        let (_, g) = crate::ocp::value_and_gradient(&spec, &z0, &c).unwrap();
        for (a, b) in r.r_u.iter().zip(&g) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn dynamics_residual_matches_prediction_defect() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = random_spec(&mut rng, 4, 1, 5, InputBasis::Indicator);
        let it = random_iterate(&mut rng, &spec);
        let r = residuals(&spec, &it).unwrap();
        for i in 0..5 {
            let sig = crate::krom::PiecewiseConstantSignal::new(0.1, vec![vec![it.u_hat[i]]], spec.input_box.clone()).unwrap();
            let pred = crate::krom::predict_discrete(&spec.model, &it.z[i], &sig).unwrap();
            assert!((&r.r_z[i] - (&it.z[i + 1] - &pred[1])).amax() < 1e-13);
        }
    }

    #[test]
    fn jvp_is_exact_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for basis in [InputBasis::Indicator, InputBasis::Fourier { modes: 3 }] {
            let spec = random_spec(&mut rng, 4, 2, 5, basis);
            let it = random_iterate(&mut rng, &spec);
            let dir = random_iterate(&mut rng, &spec);
            let mut dir = dir;
            dir.z[0].fill(0.0);
            let jv = jvp(&spec, &it, &dir).unwrap().to_flat();
            let eps = 1e-6;
            let fd = (residuals(&spec, &it.axpy(eps, &dir)).unwrap().to_flat()
                - residuals(&spec, &it.axpy(-eps, &dir)).unwrap().to_flat())
                / (2.0 * eps);
            assert!((&jv - &fd).amax() <= 1e-6 * jv.amax().max(1.0));
            let zero = it.axpy(-1.0, &it);
            assert!(jvp(&spec, &it, &zero).unwrap().to_flat().amax() == 0.0);
            let two = KktIterate {
                z: dir.z.iter().map(|v| v * 2.0).collect(),
                lambda: dir.lambda.iter().map(|v| v * 2.0).collect(),
                u_hat: dir.u_hat.iter().map(|v| v * 2.0).collect(),
            };
            assert_eq!(jvp(&spec, &it, &two).unwrap().to_flat(), jv * 2.0);
        }
    }

    #[test]
    fn scalar_linear_quadratic_in_one_step() {
        // z1 = z0 + u·z0 with z0 = 1, J = Δt[(z1 − a)² + r u²]  ⇒  u* = (a − 1)/(1 + r)
        let (a, rw, dt) = (2.0, 0.5, 0.1);
        let model = OperatorModel::new(
            Matrix::from_element(1, 1, 1.0),
            vec![Matrix::from_element(1, 1, 1.0)],
            dt,
            DictionarySpec::new(1, Basis::Identity),
            InputBox::symmetric(10.0, 1),
        )
        .unwrap();
        let cost = QuadraticStageCost::constant(
            Matrix::from_element(1, 1, 1.0),
            Matrix::from_element(1, 1, rw),
            vec![Vector::from_element(1, a)],
        );
        let spec = OcpSpec::new(model, cost, InputBox::symmetric(10.0, 1), InputBasis::Indicator).unwrap();
        let it0 = KktIterate::consistent(&spec, &Vector::from_element(1, 1.0), vec![0.0]).unwrap();
        let (it, d) = newton_solve(&spec, &it0, &NewtonOptions::default()).unwrap();
        assert_eq!(d.iterations, 1);
        assert!((it.u_hat[0] - (a - 1.0) / (1.0 + rw)).abs() < 1e-12);
        assert!(d.converged && !d.clipped);
    }

    #[test]
    fn newton_polishes_bfgs_and_zero_cost_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = random_spec(&mut rng, 5, 1, 4, InputBasis::Indicator);
        let z0 = Vector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let b = bfgs_box(&spec, &z0, &[0.0; 4], 1e-7, 500).unwrap();
        let it0 = KktIterate::consistent(&spec, &z0, b.x.clone()).unwrap();
        let (it, d) = newton_solve(&spec, &it0, &NewtonOptions::default()).unwrap();
        assert!(d.converged && d.iterations <= 2, "{d:?}");
        assert!(*d.residual_norms.last().unwrap() <= 1e-10);
        let jn = crate::ocp::objective_of_coefficients(&spec, &z0, &it.u_hat).unwrap();
        assert!((jn - b.f).abs() < 1e-6);

        let mut zero = spec.clone();
        zero.cost = QuadraticStageCost::constant(Matrix::zeros(5, 5), Matrix::identity(1, 1), spec.cost.a.clone());
        let it0 = KktIterate::consistent(&zero, &z0, vec![0.0; 4]).unwrap();
        let (it, d) = newton_solve(&zero, &it0, &NewtonOptions::default()).unwrap();
        assert_eq!(it, it0);
        assert_eq!(d.iterations, 0);
    }
}
