//! Projected limited-memory BFGS for bound-constrained minimization.
//!
//! Steps follow the two-loop quasi-Newton direction restricted to the free
//! variables, are projected onto the box, and must satisfy a projected Armijo
//! condition. Termination is on the infinity norm of the projected gradient
//! `P(x − ∇f) − x`.

use std::collections::VecDeque;

use crate::error::{KoopError, Result};

#[derive(Clone, Debug)]
pub struct BoxMinOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
    pub max_backtracks: usize,
    pub armijo: f64,
}

impl Default for BoxMinOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            memory: 10,
            max_backtracks: 40,
            armijo: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    IterationLimit,
    /// No step decreased f, and the first-order decrease of a projected
    /// gradient step is below the floating-point resolution of f.
    PrecisionLimit,
    /// No step along the quasi-Newton or the steepest-descent path decreased f.
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct BoxMinResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub f_initial: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub projected_gradient: f64,
    pub termination: Termination,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

impl BoxMinResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// Converged, or stopped at the resolution limit of the objective.
    pub fn stationary(&self) -> bool {
        matches!(self.termination, Termination::Converged | Termination::PrecisionLimit)
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] - g[i]).clamp(lo[i], hi[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `f` over `lo ≤ x ≤ hi`. `f` returns the value and the gradient.
/// Bounds may be infinite.
pub fn minimize_box<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &BoxMinOptions) -> Result<BoxMinResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    if lo.len() != n || hi.len() != n {
        return Err(KoopError::invalid("bounds do not match the variable count"));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
        return Err(KoopError::invalid("empty box"));
    }
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(KoopError::Numerical("objective is not finite at the starting point".into()));
    }
    let f_initial = fx;
    let mut evaluations = 1;
    let mut history = vec![fx];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let termination = loop {
        let pg = projected_gradient_norm(&x, &g, lo, hi);
        if pg <= opts.tol {
            break Termination::Converged;
        }
        if iterations >= opts.max_iter {
            break Termination::IterationLimit;
        }
        let bound_eps = |i: usize| 1e-12 * (1.0 + x[i].abs());
        let free: Vec<bool> = (0..n)
            .map(|i| {
                !((x[i] <= lo[i] + bound_eps(i) && g[i] > 0.0) || (x[i] >= hi[i] - bound_eps(i) && g[i] < 0.0))
            })
            .collect();
        let masked = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| if free[i] { v[i] } else { 0.0 }).collect() };

        // two-loop recursion on the free subspace
        let mut q = masked(&g);
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(&masked(s), &q);
            for i in 0..n {
                q[i] -= a * if free[i] { y[i] } else { 0.0 };
            }
            alphas.push(a);
        }
        let gamma = mem
            .back()
            .map(|(s, y, _)| {
                let (sm, ym) = (masked(s), masked(y));
                let yy = dot(&ym, &ym);
                if yy > 0.0 && dot(&sm, &ym) > 0.0 {
                    dot(&sm, &ym) / yy
                } else {
                    1.0
                }
            })
            .unwrap_or_else(|| {
                let gi = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if gi > 1.0 {
                    1.0 / gi
                } else {
                    1.0
                }
            });
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(&masked(y), &q);
            for i in 0..n {
                q[i] += (a - b) * if free[i] { s[i] } else { 0.0 };
            }
        }
        let mut d: Vec<f64> = masked(&q).iter().map(|v| -v).collect();
        if dot(&d, &g) >= 0.0 {
            mem.clear();
            d = masked(&g).iter().map(|v| -v).collect();
        }

        let mut accepted = None;
        for attempt in 0..2 {
            let mut t = 1.0;
            for _ in 0..opts.max_backtracks {
                let mut xt: Vec<f64> = (0..n).map(|i| x[i] + t * d[i]).collect();
                project(&mut xt, lo, hi);
                let step: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
                let slope = dot(&g, &step);
                if step.iter().all(|v| *v == 0.0) {
                    break;
                }
                evaluations += 1;
                match f(&xt) {
                    Ok((ft, gt)) if ft.is_finite() && gt.iter().all(|v| v.is_finite()) => {
                        if ft < fx && ft <= fx + opts.armijo * slope.min(0.0) {
                            accepted = Some((xt, ft, gt, step));
                            break;
                        }
                    }
                    Ok(_) => log::debug!("non-finite objective during line search, backtracking"),
                    Err(e) => return Err(e),
                }
                t *= 0.5;
            }
            if accepted.is_some() || attempt == 1 {
                break;
            }
            // fall back to projected steepest descent
            mem.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let Some((xn, fnew, gn, s)) = accepted else {
            let predicted: f64 = (0..n)
                .map(|i| g[i] * ((x[i] - g[i]).clamp(lo[i], hi[i]) - x[i]))
                .sum::<f64>()
                .abs();
            if predicted <= 100.0 * f64::EPSILON * (1.0 + fx.abs()) {
                break Termination::PrecisionLimit;
            }
            break Termination::LineSearchFailed;
        };
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fnew;
        g = gn;
        history.push(fx);
        iterations += 1;
    };
    Ok(BoxMinResult {
        projected_gradient: projected_gradient_norm(&x, &g, lo, hi),
        x,
        f: fx,
        f_initial,
        iterations,
        evaluations,
        termination,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)]))
    }

    #[test]
    fn scalar_quadratic() {
        let o = BoxMinOptions::default();
        let r = minimize_box(quad, &[0.0], &[-10.0], &[10.0], &o).unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-8 && r.converged());
        let r = minimize_box(quad, &[0.0], &[-10.0], &[1.0], &o).unwrap();
        assert_eq!(r.x[0], 1.0);
        assert!(r.converged());
    }

    #[test]
    fn rosenbrock_in_box() {
        let rosen = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let f = 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
            let g = vec![
                -400.0 * x[0] * (x[1] - x[0] * x[0]) - 2.0 * (1.0 - x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ];
            Ok((f, g))
        };
        let o = BoxMinOptions {
            max_iter: 500,
            ..Default::default()
        };
        let r = minimize_box(rosen, &[-1.2, 1.0], &[-2.0, -2.0], &[2.0, 2.0], &o).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
        let r = minimize_box(rosen, &[-1.2, 1.0], &[-2.0, -2.0], &[0.5, 2.0], &o).unwrap();
        assert_eq!(r.x[0], 0.5);
        assert!((r.x[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn history_strictly_decreases_and_stays_in_box() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v: f64 = x.iter().enumerate().map(|(i, xi)| (i as f64 + 1.0) * (xi - 2.0).powi(2) + xi.powi(4)).sum();
            let g = x.iter().enumerate().map(|(i, xi)| 2.0 * (i as f64 + 1.0) * (xi - 2.0) + 4.0 * xi.powi(3)).collect();
            Ok((v, g))
        };
        let lo = vec![-1.0; 6];
        let hi = vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0];
        let r = minimize_box(f, &[0.0; 6], &lo, &hi, &BoxMinOptions::default()).unwrap();
        assert!(r.history.windows(2).all(|w| w[1] < w[0]));
        assert!(r.x.iter().zip(lo.iter().zip(&hi)).all(|(x, (l, h))| l <= x && x <= h));
        assert!(r.stationary(), "{:?} {:?} pg {}", r.termination, r.x, r.projected_gradient);
    }

    #[test]
    fn non_finite_region_is_avoided() {
        // blows up for x > 1, minimum of the finite branch sits at the edge
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] > 1.0 {
                Ok((f64::NAN, vec![f64::NAN]))
            } else {
                Ok((-x[0], vec![-1.0]))
            }
        };
        let r = minimize_box(f, &[0.0], &[-5.0], &[5.0], &BoxMinOptions::default()).unwrap();
        assert!(r.f <= 0.0 && r.x[0] <= 1.0);
        assert_eq!(r.termination, Termination::LineSearchFailed);
    }
}
