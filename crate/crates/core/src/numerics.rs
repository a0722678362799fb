//! Dense linear algebra and integration kernels.
//!
//! Everything here is a pure function of its arguments. Matrices are
//! `nalgebra` dynamic matrices; the SVD behind [`pinv`] comes from `nalgebra`
//! and is wrapped so that singular values are always sorted.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KoopError, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative truncation threshold for pseudoinverses.
pub const DEFAULT_RTOL: f64 = 1e-10;

fn ensure_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KoopError::invalid(format!("{what} has non-finite entries")))
    }
}

/// Thin SVD `A = U diag(s) Vᵀ` with singular values sorted nonincreasing.
#[derive(Clone, Debug)]
pub struct SvdFactorization {
    pub u: Matrix,
    pub singular_values: Vector,
    pub v_t: Matrix,
    /// Relative threshold used by [`SvdFactorization::rank`].
    pub rank_tol: f64,
}

impl SvdFactorization {
    pub fn new(a: &Matrix, rank_tol: f64) -> Result<Self> {
        ensure_finite(a, "matrix")?;
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(KoopError::invalid("empty matrix"));
        }
        let svd = a.clone().svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(KoopError::Numerical("svd did not converge".into())),
        };
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
        let k = s.len();
        let mut su = Matrix::zeros(u.nrows(), k);
        let mut sv = Matrix::zeros(k, v_t.ncols());
        let mut ss = Vector::zeros(k);
        for (dst, &src) in order.iter().enumerate() {
            su.set_column(dst, &u.column(src));
            sv.set_row(dst, &v_t.row(src));
            ss[dst] = s[src].max(0.0);
        }
        Ok(Self {
            u: su,
            singular_values: ss,
            v_t: sv,
            rank_tol,
        })
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.get(0).copied().unwrap_or(0.0)
    }

    /// Number of singular values above `rank_tol · σ_max`.
    pub fn rank(&self) -> usize {
        let cut = self.rank_tol * self.sigma_max();
        self.singular_values.iter().filter(|&&s| s > cut).count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.v_t
    }

    /// Moore–Penrose pseudoinverse from the retained singular triplets.
    pub fn pseudo_inverse(&self) -> Matrix {
        let r = self.rank();
        let mut v = self.v_t.rows(0, r).transpose();
        for j in 0..r {
            v.column_mut(j).scale_mut(1.0 / self.singular_values[j]);
        }
        v * self.u.columns(0, r).transpose()
    }
}

/// Moore–Penrose pseudoinverse, truncating singular values below `rtol · σ_max`.
pub fn pinv(a: &Matrix, rtol: f64) -> Result<Matrix> {
    if !(rtol > 0.0 && rtol < 1.0) {
        return Err(KoopError::invalid(format!("rtol must lie in (0, 1), got {rtol}")));
    }
    let svd = SvdFactorization::new(a, rtol)?;
    Ok(svd.pseudo_inverse())
}

/// Minimum-norm least-squares solution `M = Y X⁺` of `min ‖Y − M X‖_F`.
pub fn lstsq(y: &Matrix, x: &Matrix, rtol: f64) -> Result<Matrix> {
    if y.ncols() != x.ncols() {
        return Err(KoopError::invalid(format!(
            "column mismatch: Y has {} columns, X has {}",
            y.ncols(),
            x.ncols()
        )));
    }
    ensure_finite(y, "Y")?;
    let xp = pinv(x, rtol)?;
    Ok(y * xp)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(KoopError::invalid(format!(
            "expm needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, "matrix")?;
    let n = a.nrows();
    let norm1 = a
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-squarings);
    let b = &PADE13;
    let id = Matrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| KoopError::Numerical("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Integrator for the frozen bilinear system over one hold interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Rk4,
    #[default]
    Exact,
}

impl FromStr for Scheme {
    type Err = KoopError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            "exact" => Ok(Scheme::Exact),
            other => Err(KoopError::invalid(format!("unknown integration scheme `{other}`"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::Rk4 => "rk4",
            Scheme::Exact => "exact",
        })
    }
}

/// `K₀ + Σ uᵢ Bᵢ`.
pub fn bilinear_matrix(k0: &Matrix, b: &[Matrix], u: &[f64]) -> Result<Matrix> {
    if b.len() != u.len() {
        return Err(KoopError::invalid(format!(
            "{} input matrices but {} input components",
            b.len(),
            u.len()
        )));
    }
    let mut m = k0.clone();
    for (bi, ui) in b.iter().zip(u) {
        if bi.shape() != k0.shape() {
            return Err(KoopError::invalid("input matrix shape differs from K0"));
        }
        if *ui != 0.0 {
            m += bi * *ui;
        }
    }
    Ok(m)
}

/// Advance `ż = (K₀ + Σ uᵢ Bᵢ) z` over `dt` with the input held constant.
pub fn integrate_bilinear(
    k0: &Matrix,
    b: &[Matrix],
    u: &[f64],
    z0: &Vector,
    dt: f64,
    scheme: Scheme,
) -> Result<Vector> {
    if !k0.is_square() || z0.len() != k0.nrows() {
        return Err(KoopError::invalid("K0 must be square and match the state length"));
    }
    if !(dt > 0.0) {
        return Err(KoopError::invalid(format!("dt must be positive, got {dt}")));
    }
    let m = bilinear_matrix(k0, b, u)?;
    Ok(match scheme {
        Scheme::Euler => z0 + (&m * z0) * dt,
        Scheme::Rk4 => {
            let k1 = &m * z0;
            let k2 = &m * (z0 + &k1 * (0.5 * dt));
            let k3 = &m * (z0 + &k2 * (0.5 * dt));
            let k4 = &m * (z0 + &k3 * dt);
            z0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
        Scheme::Exact => expm(&(m * dt))? * z0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmresOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
            restart: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vector,
    /// Achieved `‖A x − b‖₂ / ‖b‖₂`.
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Restarted GMRES with modified Gram–Schmidt and Givens rotations.
///
/// `apply` must be a fixed linear map. Hitting `max_iter` is reported through
/// [`GmresOutcome::converged`], not as an error.
pub fn gmres<F>(mut apply: F, rhs: &Vector, opts: &GmresOptions) -> Result<GmresOutcome>
where
    F: FnMut(&Vector) -> Vector,
{
    if !(opts.tol > 0.0) {
        return Err(KoopError::invalid("gmres tolerance must be positive"));
    }
    let n = rhs.len();
    let bnorm = rhs.norm();
    let mut x = Vector::zeros(n);
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            x,
            relative_residual: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let restart = opts.restart.max(1).min(n.max(1));
    let target = opts.tol * bnorm;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let r = rhs - apply(&x);
        let beta = r.norm();
        if beta <= target {
            return Ok(GmresOutcome {
                x,
                relative_residual: beta / bnorm,
                iterations,
                converged: true,
            });
        }
        let mut basis: Vec<Vector> = Vec::with_capacity(restart + 1);
        basis.push(r / beta);
        let mut h = Matrix::zeros(restart + 1, restart);
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = Vector::zeros(restart + 1);
        g[0] = beta;
        let mut k_used = 0;

        for k in 0..restart {
            if iterations >= opts.max_iter {
                break;
            }
            iterations += 1;
            let mut w = apply(&basis[k]);
            for (i, v) in basis.iter().enumerate() {
                let hik = w.dot(v);
                h[(i, k)] = hik;
                w.axpy(-hik, v, 1.0);
            }
            let wn = w.norm();
            h[(k + 1, k)] = wn;
            for i in 0..k {
                let t = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
                h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
                h[(i, k)] = t;
            }
            let denom = h[(k, k)].hypot(h[(k + 1, k)]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[(k, k)] / denom;
                sn[k] = h[(k + 1, k)] / denom;
            }
            h[(k, k)] = denom;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if g[k + 1].abs() <= target || wn == 0.0 {
                break;
            }
            basis.push(w / wn);
        }

        // back substitution on the k_used × k_used triangle
        let mut y = Vector::zeros(k_used);
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[(i, j)] * y[j];
            }
            y[i] = if h[(i, i)] != 0.0 { s / h[(i, i)] } else { 0.0 };
        }
        for (j, yj) in y.iter().enumerate() {
            x.axpy(*yj, &basis[j], 1.0);
        }
    }
    let final_rel = (rhs - apply(&x)).norm() / bnorm;
    Ok(GmresOutcome {
        x,
        relative_residual: final_rel,
        iterations,
        converged: final_rel <= opts.tol,
    })
}
