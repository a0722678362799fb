//! Reference simulators: ground truth for training data and the controlled
//! system in closed-loop runs.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edmd::{Sample, TrajectoryDataset};
use crate::error::{KoopError, Result};
use crate::numerics::{expm, Matrix, Vector};

/// Axis-aligned box `Π [loᵢ, hiᵢ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(KoopError::invalid("box bounds must be nonempty and of equal length"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(KoopError::invalid("box bounds must be finite with lo <= hi"));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(half_width: f64, dim: usize) -> Self {
        Self {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim()
            && u
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn clamp(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect()
    }
}

/// Parameters of `ẍ = −δẋ − αx − βx³ + u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuffingParams {
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for DuffingParams {
    /// Bistable double well with equilibria at x₁ = 0, ±1.
    fn default() -> Self {
        Self {
            delta: 0.5,
            alpha: -1.0,
            beta: 1.0,
        }
    }
}

fn default_viscosity() -> f64 {
    0.01
}
fn default_grid() -> usize {
    128
}
fn default_length() -> f64 {
    2.0
}
fn default_max_substep() -> f64 {
    0.01
}

/// Viscous Burgers equation `v̇ − νv_ξξ + v v_ξ = u χ(ξ)` on a periodic interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurgersParams {
    #[serde(default = "default_viscosity")]
    pub viscosity: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    /// Sampled shape function; the default bump is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<f64>>,
    /// Upper bound on the internal time step.
    #[serde(default = "default_max_substep")]
    pub max_substep: f64,
}

impl Default for BurgersParams {
    fn default() -> Self {
        Self {
            viscosity: default_viscosity(),
            grid: default_grid(),
            length: default_length(),
            shape: None,
            max_substep: default_max_substep(),
        }
    }
}

impl BurgersParams {
    pub fn dx(&self) -> f64 {
        self.length / self.grid as f64
    }

    pub fn grid_points(&self) -> Vec<f64> {
        (0..self.grid).map(|i| i as f64 * self.dx()).collect()
    }

    /// Periodic Gaussian bump centred at ξ = 1 with standard deviation 0.2,
    /// normalized to unit maximum.
    pub fn default_shape(&self) -> Vec<f64> {
        let (center, width) = (1.0, 0.2);
        let raw: Vec<f64> = self
            .grid_points()
            .iter()
            .map(|&xi| {
                (-2..=2)
                    .map(|k| {
                        let d = xi - center + k as f64 * self.length;
                        (-d * d / (2.0 * width * width)).exp()
                    })
                    .sum::<f64>()
            })
            .collect();
        let max = raw.iter().copied().fold(0.0, f64::max);
        raw.into_iter().map(|v| v / max).collect()
    }

    /// Grid index nearest to a spatial position.
    pub fn index_of(&self, xi: f64) -> usize {
        let i = (xi.rem_euclid(self.length) / self.dx()).round() as usize;
        i % self.grid
    }
}

/// Serializable plant description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    Duffing {
        #[serde(default = "d_delta")]
        delta: f64,
        #[serde(default = "d_alpha")]
        alpha: f64,
        #[serde(default = "d_beta")]
        beta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input_box: Option<InputBox>,
    },
    Burgers {
        #[serde(default = "default_viscosity")]
        viscosity: f64,
        #[serde(default = "default_grid")]
        grid: usize,
        #[serde(default = "default_length")]
        length: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shape: Option<Vec<f64>>,
        #[serde(default = "default_max_substep")]
        max_substep: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input_box: Option<InputBox>,
    },
    /// `ẋ = A x + B u`, matrices given row by row.
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        input_box: InputBox,
    },
    CircleRotation {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input_box: Option<InputBox>,
    },
    /// `ẋ = A x + B (u + u∘u)`; affine in x, not in u.
    SyntheticNonlinearInput {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        input_box: InputBox,
    },
}

fn d_delta() -> f64 {
    DuffingParams::default().delta
}
fn d_alpha() -> f64 {
    DuffingParams::default().alpha
}
fn d_beta() -> f64 {
    DuffingParams::default().beta
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(KoopError::invalid(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Clone, Debug)]
pub enum PlantKind {
    Duffing(DuffingParams),
    Burgers { params: BurgersParams, shape: Vector },
    Linear { a: Matrix, b: Matrix },
    CircleRotation,
    SyntheticNonlinearInput { a: Matrix, b: Matrix },
}

/// A deterministic control system `ẋ = H(x, u)` with an input box.
#[derive(Clone, Debug)]
pub struct Plant {
    pub kind: PlantKind,
    pub input_box: InputBox,
}

const DUFFING_MAX_SUBSTEP: f64 = 0.002;
const BURGERS_CFL: f64 = 0.5;

impl Plant {
    pub fn duffing(params: DuffingParams) -> Self {
        Self {
            kind: PlantKind::Duffing(params),
            input_box: InputBox::symmetric(1.0, 1),
        }
    }

    pub fn burgers(params: BurgersParams) -> Result<Self> {
        if params.grid < 32 {
            return Err(KoopError::invalid("burgers grid needs at least 32 points"));
        }
        if !(params.viscosity > 0.0 && params.length > 0.0 && params.max_substep > 0.0) {
            return Err(KoopError::invalid("burgers parameters must be positive"));
        }
        let shape = match &params.shape {
            Some(s) if s.len() == params.grid && s.iter().all(|v| v.is_finite()) => {
                Vector::from_column_slice(s)
            }
            Some(_) => {
                return Err(KoopError::invalid("shape function must be finite with one value per grid point"))
            }
            None => Vector::from_vec(params.default_shape()),
        };
        Ok(Self {
            kind: PlantKind::Burgers { params, shape },
            input_box: InputBox::new(vec![-0.025], vec![0.075])?,
        })
    }

    pub fn linear(a: Matrix, b: Matrix, input_box: InputBox) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() || b.ncols() != input_box.dim() {
            return Err(KoopError::invalid("linear plant dimensions are inconsistent"));
        }
        Ok(Self {
            kind: PlantKind::Linear { a, b },
            input_box,
        })
    }

    pub fn circle_rotation() -> Self {
        Self {
            kind: PlantKind::CircleRotation,
            input_box: InputBox::symmetric(1.0, 1),
        }
    }

    pub fn synthetic_nonlinear_input(a: Matrix, b: Matrix, input_box: InputBox) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() || b.ncols() != input_box.dim() {
            return Err(KoopError::invalid("plant dimensions are inconsistent"));
        }
        Ok(Self {
            kind: PlantKind::SyntheticNonlinearInput { a, b },
            input_box,
        })
    }

    pub fn from_spec(spec: &PlantSpec) -> Result<Self> {
        let mut plant = match spec {
            PlantSpec::Duffing {
                delta,
                alpha,
                beta,
                input_box,
            } => {
                let mut p = Plant::duffing(DuffingParams {
                    delta: *delta,
                    alpha: *alpha,
                    beta: *beta,
                });
                if let Some(b) = input_box {
                    p.input_box = b.clone();
                }
                p
            }
            PlantSpec::Burgers {
                viscosity,
                grid,
                length,
                shape,
                max_substep,
                input_box,
            } => {
                let mut p = Plant::burgers(BurgersParams {
                    viscosity: *viscosity,
                    grid: *grid,
                    length: *length,
                    shape: shape.clone(),
                    max_substep: *max_substep,
                })?;
                if let Some(b) = input_box {
                    p.input_box = b.clone();
                }
                p
            }
            PlantSpec::Linear { a, b, input_box } => Plant::linear(
                rows_to_matrix(a, "A")?,
                rows_to_matrix(b, "B")?,
                input_box.clone(),
            )?,
            PlantSpec::CircleRotation { input_box } => {
                let mut p = Plant::circle_rotation();
                if let Some(b) = input_box {
                    p.input_box = b.clone();
                }
                p
            }
            PlantSpec::SyntheticNonlinearInput { a, b, input_box } => {
                Plant::synthetic_nonlinear_input(
                    rows_to_matrix(a, "A")?,
                    rows_to_matrix(b, "B")?,
                    input_box.clone(),
                )?
            }
        };
        plant.input_box = InputBox::new(plant.input_box.lo, plant.input_box.hi)?;
        Ok(plant)
    }

    pub fn to_spec(&self) -> PlantSpec {
        let input_box = Some(self.input_box.clone());
        match &self.kind {
            PlantKind::Duffing(p) => PlantSpec::Duffing {
                delta: p.delta,
                alpha: p.alpha,
                beta: p.beta,
                input_box,
            },
            PlantKind::Burgers { params, .. } => PlantSpec::Burgers {
                viscosity: params.viscosity,
                grid: params.grid,
                length: params.length,
                shape: params.shape.clone(),
                max_substep: params.max_substep,
                input_box,
            },
            PlantKind::Linear { a, b } => PlantSpec::Linear {
                a: matrix_to_rows(a),
                b: matrix_to_rows(b),
                input_box: self.input_box.clone(),
            },
            PlantKind::CircleRotation => PlantSpec::CircleRotation { input_box },
            PlantKind::SyntheticNonlinearInput { a, b } => PlantSpec::SyntheticNonlinearInput {
                a: matrix_to_rows(a),
                b: matrix_to_rows(b),
                input_box: self.input_box.clone(),
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PlantKind::Duffing(_) => "duffing",
            PlantKind::Burgers { .. } => "burgers",
            PlantKind::Linear { .. } => "linear",
            PlantKind::CircleRotation => "circle_rotation",
            PlantKind::SyntheticNonlinearInput { .. } => "synthetic_nonlinear_input",
        }
    }

    pub fn state_dim(&self) -> usize {
        match &self.kind {
            PlantKind::Duffing(_) => 2,
            PlantKind::Burgers { params, .. } => params.grid,
            PlantKind::Linear { a, .. } | PlantKind::SyntheticNonlinearInput { a, .. } => a.nrows(),
            PlantKind::CircleRotation => 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_box.dim()
    }

    /// Whether `H(x, u)` is affine in `u`.
    pub fn is_control_affine(&self) -> bool {
        !matches!(self.kind, PlantKind::SyntheticNonlinearInput { .. })
    }

    /// Initial state used when none is configured.
    pub fn default_initial_state(&self) -> Vec<f64> {
        match &self.kind {
            PlantKind::Burgers { params, .. } => vec![0.5; params.grid],
            _ => vec![0.0; self.state_dim()],
        }
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() || u.len() != self.input_dim() {
            return Err(KoopError::invalid(format!(
                "{} plant expects state {} and input {}, got {} and {}",
                self.name(),
                self.state_dim(),
                self.input_dim(),
                x.len(),
                u.len()
            )));
        }
        Ok(())
    }

    /// Right-hand side `H(x, u)`. Inputs outside the box are accepted here.
    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, u)?;
        Ok(self.rhs_unchecked(x, u))
    }

    fn rhs_unchecked(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.kind {
            PlantKind::Duffing(p) => vec![
                x[1],
                -p.delta * x[1] - p.alpha * x[0] - p.beta * x[0].powi(3) + u[0],
            ],
            PlantKind::Burgers { params, shape } => {
                let mut out = burgers_advection(x, params.dx());
                let diff = burgers_laplacian(x, params.dx());
                for i in 0..x.len() {
                    out[i] += params.viscosity * diff[i] + u[0] * shape[i];
                }
                out
            }
            PlantKind::Linear { a, b } => {
                let xv = Vector::from_column_slice(x);
                let uv = Vector::from_column_slice(u);
                (a * xv + b * uv).as_slice().to_vec()
            }
            PlantKind::CircleRotation => vec![u[0]],
            PlantKind::SyntheticNonlinearInput { a, b } => {
                let xv = Vector::from_column_slice(x);
                let g = Vector::from_iterator(u.len(), u.iter().map(|v| v + v * v));
                (a * xv + b * g).as_slice().to_vec()
            }
        }
    }

    /// Flow map `Φ^dt_u(x)` with the input held constant.
    pub fn step(&self, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
        self.check_dims(x, u)?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(KoopError::invalid(format!("step size must be positive, got {dt}")));
        }
        let out = match &self.kind {
            PlantKind::Duffing(_) | PlantKind::SyntheticNonlinearInput { .. } => {
                self.rk4(x, u, dt, DUFFING_MAX_SUBSTEP)
            }
            PlantKind::Burgers { params, shape } => burgers_step(params, shape, x, u[0], dt),
            PlantKind::Linear { a, b } => {
                // exact flow via the augmented exponential exp([[A, Bu],[0, 0]] dt)
                let n = a.nrows();
                let bu = b * Vector::from_column_slice(u);
                let mut aug = Matrix::zeros(n + 1, n + 1);
                aug.view_mut((0, 0), (n, n)).copy_from(a);
                aug.view_mut((0, n), (n, 1)).copy_from(&bu);
                let e = expm(&(aug * dt))?;
                let mut xa = Vector::zeros(n + 1);
                xa.rows_mut(0, n).copy_from_slice(x);
                xa[n] = 1.0;
                (e * xa).rows(0, n).iter().copied().collect()
            }
            PlantKind::CircleRotation => vec![(x[0] + u[0] * dt).rem_euclid(2.0 * PI)],
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(KoopError::Numerical(format!("{} plant produced a non-finite state", self.name())));
        }
        Ok(out)
    }

    fn rk4(&self, x: &[f64], u: &[f64], dt: f64, max_h: f64) -> Vec<f64> {
        let n_sub = (dt / max_h - 1e-9).ceil().max(1.0) as usize;
        let h = dt / n_sub as f64;
        let mut s = x.to_vec();
        let n = s.len();
        let mut tmp = vec![0.0; n];
        for _ in 0..n_sub {
            let k1 = self.rhs_unchecked(&s, u);
            for i in 0..n {
                tmp[i] = s[i] + 0.5 * h * k1[i];
            }
            let k2 = self.rhs_unchecked(&tmp, u);
            for i in 0..n {
                tmp[i] = s[i] + 0.5 * h * k2[i];
            }
            let k3 = self.rhs_unchecked(&tmp, u);
            for i in 0..n {
                tmp[i] = s[i] + h * k3[i];
            }
            let k4 = self.rhs_unchecked(&tmp, u);
            for i in 0..n {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        s
    }

    /// Whether time can be integrated backwards (needed for centred stencils).
    pub fn is_reversible(&self) -> bool {
        !matches!(self.kind, PlantKind::Burgers { .. })
    }

    /// `Φ^{k·dt}_u(x)` for a signed step count `k`.
    pub fn flow(&self, x: &[f64], u: &[f64], dt: f64, k: i32) -> Result<Vec<f64>> {
        if k == 0 {
            return Ok(x.to_vec());
        }
        if k > 0 {
            return self.step(x, u, dt * k as f64);
        }
        self.check_dims(x, u)?;
        let t = dt * (-k) as f64;
        match &self.kind {
            PlantKind::Burgers { .. } => Err(KoopError::Unsupported(
                "the burgers plant cannot be integrated backwards in time".into(),
            )),
            PlantKind::CircleRotation => Ok(vec![(x[0] - u[0] * t).rem_euclid(2.0 * PI)]),
            PlantKind::Linear { a, b } => {
                let neg = Plant {
                    kind: PlantKind::Linear { a: -a, b: -b },
                    input_box: self.input_box.clone(),
                };
                neg.step(x, u, t)
            }
            _ => {
                let n_sub = (t / DUFFING_MAX_SUBSTEP - 1e-9).ceil().max(1.0) as usize;
                let h = -t / n_sub as f64;
                let mut s = x.to_vec();
                for _ in 0..n_sub {
                    s = self.rk4_single(&s, u, h);
                }
                Ok(s)
            }
        }
    }

    fn rk4_single(&self, s: &[f64], u: &[f64], h: f64) -> Vec<f64> {
        let add = |a: &[f64], b: &[f64], c: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + c * y).collect()
        };
        let k1 = self.rhs_unchecked(s, u);
        let k2 = self.rhs_unchecked(&add(s, &k1, 0.5 * h), u);
        let k3 = self.rhs_unchecked(&add(s, &k2, 0.5 * h), u);
        let k4 = self.rhs_unchecked(&add(s, &k3, h), u);
        (0..s.len())
            .map(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }

    /// Simulate a trajectory under a piecewise-constant input sequence.
    pub fn simulate(&self, x0: &[f64], inputs: &[Vec<f64>], dt: f64) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(inputs.len() + 1);
        out.push(x0.to_vec());
        for u in inputs {
            let next = self.step(out.last().expect("nonempty"), u, dt)?;
            out.push(next);
        }
        Ok(out)
    }
}

// -(v²/2)_ξ with central differences (conservative form)
fn burgers_advection(v: &[f64], dx: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let vp = v[(i + 1) % n];
            let vm = v[(i + n - 1) % n];
            -(vp * vp - vm * vm) / (4.0 * dx)
        })
        .collect()
}

fn burgers_laplacian(v: &[f64], dx: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| (v[(i + 1) % n] - 2.0 * v[i] + v[(i + n - 1) % n]) / (dx * dx))
        .collect()
}

/// Solve the symmetric circulant system with diagonal `d` and off-diagonals `o`
/// by Sherman–Morrison on top of the Thomas algorithm.
fn solve_cyclic(d: f64, o: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let gamma = -d;
    let mut diag = vec![d; n];
    diag[0] = d - gamma;
    diag[n - 1] = d - o * o / gamma;
    let thomas = |r: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; n];
        let mut y = vec![0.0; n];
        c[0] = o / diag[0];
        y[0] = r[0] / diag[0];
        for i in 1..n {
            let m = diag[i] - o * c[i - 1];
            c[i] = o / m;
            y[i] = (r[i] - o * y[i - 1]) / m;
        }
        for i in (0..n - 1).rev() {
            y[i] -= c[i] * y[i + 1];
        }
        y
    };
    let y = thomas(rhs);
    let mut uvec = vec![0.0; n];
    uvec[0] = gamma;
    uvec[n - 1] = o;
    let q = thomas(&uvec);
    let vy = y[0] + o / gamma * y[n - 1];
    let vq = q[0] + o / gamma * q[n - 1];
    let f = vy / (1.0 + vq);
    y.iter().zip(&q).map(|(a, b)| a - f * b).collect()
}

fn burgers_step(params: &BurgersParams, shape: &Vector, v0: &[f64], u: f64, dt: f64) -> Vec<f64> {
    let dx = params.dx();
    let vmax = v0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut h_max = params.max_substep;
    if vmax > 0.0 {
        h_max = h_max.min(BURGERS_CFL * dx / vmax);
    }
    let n_sub = (dt / h_max - 1e-9).ceil().max(1.0) as usize;
    let h = dt / n_sub as f64;
    let r = params.viscosity * h / (dx * dx);
    let mut v = v0.to_vec();
    for _ in 0..n_sub {
        let adv = burgers_advection(&v, dx);
        let rhs: Vec<f64> = (0..v.len())
            .map(|i| v[i] + h * (adv[i] + u * shape[i]))
            .collect();
        v = solve_cyclic(1.0 + 2.0 * r, -r, &rhs);
    }
    v
}

/// How initial states are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStates {
    /// The plant's default initial state.
    Default,
    Fixed { state: Vec<f64> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

/// How inputs are drawn for each hold interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputDraw {
    /// One of the listed levels, optionally weighted.
    Levels {
        levels: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    /// Uniform in the plant's input box.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingSpec {
    /// Scattered initial conditions, each evaluated under every listed input.
    /// Exact derivatives are recorded; with `snapshot_dt` the successor state
    /// and the neighbours up to `stencil_radius` are recorded as well.
    Scattered {
        count: usize,
        lo: Vec<f64>,
        hi: Vec<f64>,
        inputs: Vec<Vec<f64>>,
        #[serde(default)]
        snapshot_dt: Option<f64>,
        #[serde(default)]
        stencil_radius: usize,
    },
    /// Trajectories under piecewise-constant random inputs. Each step yields a
    /// snapshot pair `(x_k, u_k, x_{k+1})`.
    Trajectories {
        count: usize,
        steps: usize,
        dt: f64,
        initial: InitialStates,
        inputs: InputDraw,
        #[serde(default = "one")]
        hold_steps: usize,
        #[serde(default)]
        derivatives: bool,
    },
}

fn one() -> usize {
    1
}

fn uniform_point(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(l, h)| if l == h { *l } else { rng.random_range(*l..*h) })
        .collect()
}

/// Generate a reproducible training set. The generator is ChaCha8 seeded with `seed`.
pub fn sample_training_set(
    plant: &Plant,
    spec: &SamplingSpec,
    seed: u64,
) -> Result<TrajectoryDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = plant.state_dim();
    let mut samples = Vec::new();
    match spec {
        SamplingSpec::Scattered {
            count,
            lo,
            hi,
            inputs,
            snapshot_dt,
            stencil_radius,
        } => {
            if *count == 0 || inputs.is_empty() {
                return Err(KoopError::invalid("sampling spec produces no samples"));
            }
            if lo.len() != n || hi.len() != n {
                return Err(KoopError::invalid("sampling region does not match the state dimension"));
            }
            if let Some(dt) = snapshot_dt {
                if !(*dt > 0.0) {
                    return Err(KoopError::invalid("snapshot spacing must be positive"));
                }
            }
            let ics: Vec<Vec<f64>> = (0..*count).map(|_| uniform_point(&mut rng, lo, hi)).collect();
            for x in &ics {
                for u in inputs {
                    let xdot = plant.rhs(x, u)?;
                    let mut s = Sample::with_derivative(x.clone(), u.clone(), xdot);
                    if let Some(dt) = snapshot_dt {
                        s.dt = Some(*dt);
                        s.successor = Some(plant.step(x, u, *dt)?);
                        let r = *stencil_radius as i32;
                        for k in -r..=r {
                            if k == 0 || k == 1 {
                                continue;
                            }
                            s.neighbors.push(crate::edmd::Neighbor {
                                offset: k,
                                state: plant.flow(x, u, *dt, k)?,
                            });
                        }
                    }
                    samples.push(s);
                }
            }
        }
        SamplingSpec::Trajectories {
            count,
            steps,
            dt,
            initial,
            inputs,
            hold_steps,
            derivatives,
        } => {
            if *count == 0 || *steps == 0 {
                return Err(KoopError::invalid("sampling spec produces no samples"));
            }
            if !(*dt > 0.0) || *hold_steps == 0 {
                return Err(KoopError::invalid("trajectory spacing and hold must be positive"));
            }
            let weighted = match inputs {
                InputDraw::Levels { levels, weights } => {
                    if levels.is_empty() {
                        return Err(KoopError::invalid("no input levels given"));
                    }
                    let w = weights.clone().unwrap_or_else(|| vec![1.0; levels.len()]);
                    if w.len() != levels.len() {
                        return Err(KoopError::invalid("one weight per input level required"));
                    }
                    Some(
                        WeightedIndex::new(&w)
                            .map_err(|e| KoopError::invalid(format!("input weights: {e}")))?,
                    )
                }
                InputDraw::Uniform => None,
            };
            for traj in 0..*count {
                let mut x = match initial {
                    InitialStates::Default => plant.default_initial_state(),
                    InitialStates::Fixed { state } => state.clone(),
                    InitialStates::Uniform { lo, hi } => uniform_point(&mut rng, lo, hi),
                };
                if x.len() != n {
                    return Err(KoopError::invalid("initial state does not match the plant"));
                }
                let mut u = Vec::new();
                let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
                for k in 0..*steps {
                    if k % hold_steps == 0 {
                        u = match (&weighted, inputs) {
                            (Some(dist), InputDraw::Levels { levels, .. }) => {
                                levels[dist.sample(&mut rng)].clone()
                            }
                            _ => uniform_point(&mut rng, &plant.input_box.lo, &plant.input_box.hi),
                        };
                    }
                    let next = plant.step(&x, &u, *dt)?;
                    let mut s = Sample {
                        x: x.clone(),
                        u: u.clone(),
                        xdot: None,
                        successor: Some(next.clone()),
                        dt: Some(*dt),
                        neighbors: Vec::new(),
                        trajectory: Some(traj),
                    };
                    if *derivatives {
                        s.xdot = Some(plant.rhs(&x, &u)?);
                    }
                    if let Some((px, pu)) = &prev {
                        if *pu == u {
                            s.neighbors.push(crate::edmd::Neighbor {
                                offset: -1,
                                state: px.clone(),
                            });
                        }
                    }
                    samples.push(s);
                    prev = Some((x, u.clone()));
                    x = next;
                }
            }
        }
    }
    TrajectoryDataset::new(samples, plant.input_box.clone(), Some(plant.name().to_string()))
}
