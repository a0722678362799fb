//! Observable dictionaries `ψ: ℝⁿ → ℝ^{n_o}`.
//!
//! A [`Dictionary`] is built from a serializable [`DictionarySpec`]: an
//! optional selection of observed state components, an optional delay depth,
//! and a [`Basis`] applied to the (selected, stacked) observation vector.
//!
//! Monomials are ordered graded-lexicographically with the constant first,
//! e.g. `(1, x₁, x₂, x₁², x₁x₂, x₂²)` for two variables and degree two.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{KoopError, Result};
use crate::numerics::{Matrix, Vector};

/// Radial profile used by [`Basis::Rbf`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbfKernel {
    /// `exp(−r²/(2s²))`
    #[default]
    Gaussian,
    /// `1/√(1 + r²/s²)`
    InverseMultiquadric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Basis {
    Identity,
    Monomials {
        degree: usize,
    },
    Rbf {
        centers: Vec<Vec<f64>>,
        shape: f64,
        #[serde(default)]
        kernel: RbfKernel,
    },
    /// `(1?, cos kx_i, sin kx_i)` for each coordinate and harmonic `k = 1..=harmonics`.
    Fourier {
        harmonics: usize,
        #[serde(default)]
        constant: bool,
    },
    /// Concatenation of several bases over the same input.
    Stack {
        parts: Vec<Basis>,
    },
}

fn default_depth() -> usize {
    1
}

/// Serializable dictionary descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySpec {
    /// Dimension of the plant state.
    pub state_dim: usize,
    /// Indices of the observed state components; all components when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observe: Option<Vec<usize>>,
    /// Number of stacked observations, newest first. `1` disables delays.
    #[serde(default = "default_depth")]
    pub delay: usize,
    pub basis: Basis,
}

impl DictionarySpec {
    pub fn new(state_dim: usize, basis: Basis) -> Self {
        Self {
            state_dim,
            observe: None,
            delay: 1,
            basis,
        }
    }

    pub fn with_observed(mut self, observe: Vec<usize>) -> Self {
        self.observe = Some(observe);
        self
    }

    pub fn with_delay(mut self, depth: usize) -> Self {
        self.delay = depth;
        self
    }
}

#[derive(Clone, Debug)]
enum Compiled {
    Identity,
    Monomials { degree: usize, exponents: Vec<Vec<u32>> },
    Rbf { centers: Vec<Vector>, shape: f64, kernel: RbfKernel },
    Fourier { harmonics: usize, constant: bool },
    Stack(Vec<Compiled>),
}

impl Compiled {
    fn build(basis: &Basis, dim: usize) -> Result<Self> {
        Ok(match basis {
            Basis::Identity => Compiled::Identity,
            Basis::Monomials { degree } => Compiled::Monomials {
                degree: *degree,
                exponents: graded_lex_exponents(dim, *degree),
            },
            Basis::Rbf {
                centers,
                shape,
                kernel,
            } => {
                if !(*shape > 0.0 && shape.is_finite()) {
                    return Err(KoopError::invalid("rbf shape parameter must be positive"));
                }
                if centers.is_empty() {
                    return Err(KoopError::invalid("rbf basis needs at least one center"));
                }
                let centers = centers
                    .iter()
                    .map(|c| {
                        if c.len() != dim {
                            Err(KoopError::invalid(format!(
                                "rbf center has dimension {}, expected {dim}",
                                c.len()
                            )))
                        } else {
                            Ok(Vector::from_column_slice(c))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Compiled::Rbf {
                    centers,
                    shape: *shape,
                    kernel: *kernel,
                }
            }
            Basis::Fourier {
                harmonics,
                constant,
            } => {
                if *harmonics == 0 {
                    return Err(KoopError::invalid("fourier basis needs at least one harmonic"));
                }
                Compiled::Fourier {
                    harmonics: *harmonics,
                    constant: *constant,
                }
            }
            Basis::Stack { parts } => {
                if parts.is_empty() {
                    return Err(KoopError::invalid("empty basis stack"));
                }
                Compiled::Stack(
                    parts
                        .iter()
                        .map(|p| Compiled::build(p, dim))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
        })
    }

    fn len(&self, dim: usize) -> usize {
        match self {
            Compiled::Identity => dim,
            Compiled::Monomials { exponents, .. } => exponents.len(),
            Compiled::Rbf { centers, .. } => centers.len(),
            Compiled::Fourier {
                harmonics,
                constant,
            } => 2 * harmonics * dim + usize::from(*constant),
            Compiled::Stack(parts) => parts.iter().map(|p| p.len(dim)).sum(),
        }
    }

    fn eval_into(&self, y: &[f64], out: &mut Vec<f64>) {
        match self {
            Compiled::Identity => out.extend_from_slice(y),
            Compiled::Monomials { degree, exponents } => {
                let powers = power_table(y, *degree);
                for e in exponents {
                    let mut v = 1.0;
                    for (i, &p) in e.iter().enumerate() {
                        if p > 0 {
                            v *= powers[i][p as usize];
                        }
                    }
                    out.push(v);
                }
            }
            Compiled::Rbf {
                centers,
                shape,
                kernel,
            } => {
                for c in centers {
                    let r2: f64 = y.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    out.push(rbf_value(*kernel, r2, *shape));
                }
            }
            Compiled::Fourier {
                harmonics,
                constant,
            } => {
                if *constant {
                    out.push(1.0);
                }
                for &yi in y {
                    for k in 1..=*harmonics {
                        let a = k as f64 * yi;
                        out.push(a.cos());
                        out.push(a.sin());
                    }
                }
            }
            Compiled::Stack(parts) => {
                for p in parts {
                    p.eval_into(y, out);
                }
            }
        }
    }

    /// Appends rows of `∂ψ/∂y` (each of length `dim`).
    fn jacobian_into(&self, y: &[f64], rows: &mut Vec<Vec<f64>>) {
        let dim = y.len();
        match self {
            Compiled::Identity => {
                for i in 0..dim {
                    let mut r = vec![0.0; dim];
                    r[i] = 1.0;
                    rows.push(r);
                }
            }
            Compiled::Monomials { degree, exponents } => {
                let powers = power_table(y, *degree);
                for e in exponents {
                    let mut r = vec![0.0; dim];
                    for k in 0..dim {
                        if e[k] == 0 {
                            continue;
                        }
                        let mut v = e[k] as f64 * powers[k][(e[k] - 1) as usize];
                        for (i, &p) in e.iter().enumerate() {
                            if i != k && p > 0 {
                                v *= powers[i][p as usize];
                            }
                        }
                        r[k] = v;
                    }
                    rows.push(r);
                }
            }
            Compiled::Rbf {
                centers,
                shape,
                kernel,
            } => {
                for c in centers {
                    let diff: Vec<f64> = y.iter().zip(c.iter()).map(|(a, b)| a - b).collect();
                    let r2: f64 = diff.iter().map(|d| d * d).sum();
                    // dφ/dy = φ'(r²) · 2 (y − c)
                    let dphi = rbf_derivative_r2(*kernel, r2, *shape);
                    rows.push(diff.iter().map(|d| 2.0 * d * dphi).collect());
                }
            }
            Compiled::Fourier {
                harmonics,
                constant,
            } => {
                if *constant {
                    rows.push(vec![0.0; dim]);
                }
                for (i, &yi) in y.iter().enumerate() {
                    for k in 1..=*harmonics {
                        let kf = k as f64;
                        let a = kf * yi;
                        let mut rc = vec![0.0; dim];
                        rc[i] = -kf * a.sin();
                        let mut rs = vec![0.0; dim];
                        rs[i] = kf * a.cos();
                        rows.push(rc);
                        rows.push(rs);
                    }
                }
            }
            Compiled::Stack(parts) => {
                for p in parts {
                    p.jacobian_into(y, rows);
                }
            }
        }
    }

    /// Output index holding input coordinate `i` linearly, if any.
    fn linear_index(&self, i: usize, dim: usize) -> Option<usize> {
        match self {
            Compiled::Identity => Some(i),
            Compiled::Monomials { exponents, .. } => exponents
                .iter()
                .position(|e| e.iter().sum::<u32>() == 1 && e[i] == 1),
            Compiled::Rbf { .. } | Compiled::Fourier { .. } => None,
            Compiled::Stack(parts) => {
                let mut offset = 0;
                for p in parts {
                    if let Some(k) = p.linear_index(i, dim) {
                        return Some(offset + k);
                    }
                    offset += p.len(dim);
                }
                None
            }
        }
    }
}

fn rbf_value(kernel: RbfKernel, r2: f64, s: f64) -> f64 {
    match kernel {
        RbfKernel::Gaussian => (-r2 / (2.0 * s * s)).exp(),
        RbfKernel::InverseMultiquadric => 1.0 / (1.0 + r2 / (s * s)).sqrt(),
    }
}

fn rbf_derivative_r2(kernel: RbfKernel, r2: f64, s: f64) -> f64 {
    match kernel {
        RbfKernel::Gaussian => -rbf_value(kernel, r2, s) / (2.0 * s * s),
        RbfKernel::InverseMultiquadric => -0.5 / (s * s) * (1.0 + r2 / (s * s)).powf(-1.5),
    }
}

fn power_table(y: &[f64], degree: usize) -> Vec<Vec<f64>> {
    y.iter()
        .map(|&v| {
            let mut p = Vec::with_capacity(degree + 1);
            let mut acc = 1.0;
            for _ in 0..=degree {
                p.push(acc);
                acc *= v;
            }
            p
        })
        .collect()
}

/// Exponent tuples of all monomials up to `degree`, graded then lexicographic
/// (higher powers of earlier variables first within a degree).
pub fn graded_lex_exponents(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    fn fill(dim: usize, pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos + 1 == dim {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for p in (0..=left).rev() {
            cur[pos] = p;
            fill(dim, pos + 1, left - p, cur, out);
        }
    }
    let mut out = Vec::new();
    if dim == 0 {
        out.push(Vec::new());
        return out;
    }
    let mut cur = vec![0; dim];
    for d in 0..=degree as u32 {
        fill(dim, 0, d, &mut cur, &mut out);
    }
    out
}

/// `C(n + d, d)`, the number of monomials of total degree at most `d` in `n` variables.
pub fn monomial_count(n: usize, d: usize) -> usize {
    let mut c: u128 = 1;
    for i in 1..=d as u128 {
        c = c * (n as u128 + i) / i;
    }
    c as usize
}

/// Evaluatable observable map with analytic Jacobian.
#[derive(Clone, Debug)]
pub struct Dictionary {
    spec: DictionarySpec,
    raw_dim: usize,
    compiled: Compiled,
    n_obs: usize,
}

impl Dictionary {
    pub fn new(spec: DictionarySpec) -> Result<Self> {
        if spec.state_dim == 0 {
            return Err(KoopError::invalid("state dimension must be positive"));
        }
        if spec.delay == 0 {
            return Err(KoopError::invalid("delay depth must be at least 1"));
        }
        let raw_dim = match &spec.observe {
            Some(idx) => {
                if idx.is_empty() {
                    return Err(KoopError::invalid("observed component list is empty"));
                }
                if let Some(bad) = idx.iter().find(|&&i| i >= spec.state_dim) {
                    return Err(KoopError::invalid(format!(
                        "observed index {bad} out of range for state dimension {}",
                        spec.state_dim
                    )));
                }
                idx.len()
            }
            None => spec.state_dim,
        };
        let dim = raw_dim * spec.delay;
        let compiled = Compiled::build(&spec.basis, dim)?;
        let n_obs = compiled.len(dim);
        Ok(Self {
            spec,
            raw_dim,
            compiled,
            n_obs,
        })
    }

    pub fn spec(&self) -> &DictionarySpec {
        &self.spec
    }

    /// Length of the vector accepted by [`Dictionary::eval`]: the state dimension
    /// without delays, otherwise `delay × observed dimension`.
    pub fn input_dim(&self) -> usize {
        if self.spec.delay > 1 {
            self.raw_dim * self.spec.delay
        } else {
            self.spec.state_dim
        }
    }

    /// Dimension of one raw observation (before delay stacking).
    pub fn observation_dim(&self) -> usize {
        self.raw_dim
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn is_delayed(&self) -> bool {
        self.spec.delay > 1
    }

    /// Raw observation of a plant state (component selection only).
    pub fn observe(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.state_dim {
            return Err(KoopError::invalid(format!(
                "state has length {}, expected {}",
                x.len(),
                self.spec.state_dim
            )));
        }
        Ok(match &self.spec.observe {
            Some(idx) => idx.iter().map(|&i| x[i]).collect(),
            None => x.to_vec(),
        })
    }

    fn basis_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(KoopError::invalid(format!(
                "dictionary input has length {}, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        if self.is_delayed() {
            Ok(x.to_vec())
        } else {
            self.observe(x)
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vector> {
        let y = self.basis_input(x)?;
        let mut out = Vec::with_capacity(self.n_obs);
        self.compiled.eval_into(&y, &mut out);
        Ok(Vector::from_vec(out))
    }

    /// `n_o × m` matrix whose column `j` is `ψ(x_j)`.
    pub fn eval_batch<S: AsRef<[f64]>>(&self, xs: &[S]) -> Result<Matrix> {
        if xs.is_empty() {
            return Err(KoopError::invalid("empty batch"));
        }
        let mut m = Matrix::zeros(self.n_obs, xs.len());
        for (j, x) in xs.iter().enumerate() {
            m.set_column(j, &self.eval(x.as_ref())?);
        }
        Ok(m)
    }

    /// `n_o × input_dim` Jacobian `𝒟ψ(x)`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        if self.is_delayed() {
            return Err(KoopError::Unsupported(
                "delay-embedded dictionaries act on a discrete stream and have no state Jacobian"
                    .into(),
            ));
        }
        let y = self.basis_input(x)?;
        let mut rows = Vec::with_capacity(self.n_obs);
        self.compiled.jacobian_into(&y, &mut rows);
        let n = self.spec.state_dim;
        let mut jac = Matrix::zeros(self.n_obs, n);
        for (r, row) in rows.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                let col = match &self.spec.observe {
                    Some(idx) => idx[k],
                    None => k,
                };
                jac[(r, col)] += v;
            }
        }
        Ok(jac)
    }

    /// For each observed coordinate (newest block when delayed), the index of the
    /// observable equal to it. `None` if some coordinate is not carried linearly.
    pub fn readout(&self) -> Option<Vec<usize>> {
        let dim = self.raw_dim * self.spec.delay;
        (0..self.raw_dim)
            .map(|i| self.compiled.linear_index(i, dim))
            .collect()
    }

    /// Map an observable vector back to the observed coordinates.
    pub fn read_observation(&self, z: &Vector) -> Option<Vec<f64>> {
        self.readout().map(|idx| idx.iter().map(|&i| z[i]).collect())
    }
}

/// Ring of the last `depth` raw observations.
#[derive(Clone, Debug)]
pub struct DelayBuffer {
    depth: usize,
    raw_dim: usize,
    ring: VecDeque<Vec<f64>>,
}

impl DelayBuffer {
    pub fn new(depth: usize, raw_dim: usize) -> Result<Self> {
        if depth == 0 || raw_dim == 0 {
            return Err(KoopError::invalid("delay depth and observation size must be positive"));
        }
        Ok(Self {
            depth,
            raw_dim,
            ring: VecDeque::with_capacity(depth),
        })
    }

    /// Push an observation; returns the stacked vector (newest first) once full.
    pub fn push(&mut self, obs: &[f64]) -> Result<Option<Vec<f64>>> {
        if obs.len() != self.raw_dim {
            return Err(KoopError::invalid(format!(
                "observation has length {}, expected {}",
                obs.len(),
                self.raw_dim
            )));
        }
        if self.ring.len() == self.depth {
            self.ring.pop_back();
        }
        self.ring.push_front(obs.to_vec());
        Ok(self.stacked())
    }

    pub fn stacked(&self) -> Option<Vec<f64>> {
        (self.ring.len() == self.depth).then(|| self.ring.iter().flatten().copied().collect())
    }

    pub fn is_full(&self) -> bool {
        self.ring.len() == self.depth
    }
}

const PRIMES: [u32; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// First `k` Halton points (prime bases 2, 3, 5, …) mapped into `bounds`.
pub fn halton_rbf_centers(dim: usize, k: usize, bounds: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || dim > PRIMES.len() {
        return Err(KoopError::invalid(format!(
            "halton dimension must lie in 1..={}, got {dim}",
            PRIMES.len()
        )));
    }
    if k == 0 {
        return Err(KoopError::invalid("need at least one center"));
    }
    if bounds.len() != dim || bounds.iter().any(|(lo, hi)| !lo.is_finite() || !hi.is_finite()) {
        return Err(KoopError::invalid("bounds must be finite and match the dimension"));
    }
    Ok((1..=k as u64)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    let (lo, hi) = bounds[d];
                    lo + (hi - lo) * radical_inverse(i, PRIMES[d] as u64)
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mono(n: usize, d: usize) -> Dictionary {
        Dictionary::new(DictionarySpec::new(n, Basis::Monomials { degree: d })).unwrap()
    }

    fn central_difference(dict: &Dictionary, x: &[f64]) -> Matrix {
        let h = 1e-6 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt());
        let mut jac = Matrix::zeros(dict.n_obs(), x.len());
        for k in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let col = (dict.eval(&xp).unwrap() - dict.eval(&xm).unwrap()) / (2.0 * h);
            jac.set_column(k, &col);
        }
        jac
    }

    #[test]
    fn identity_recovers_state() {
        let d = Dictionary::new(DictionarySpec::new(2, Basis::Identity)).unwrap();
        assert_eq!(d.eval(&[1.0, 2.0]).unwrap().as_slice(), &[1.0, 2.0]);
        assert_eq!(d.jacobian(&[0.3, -1.0]).unwrap(), Matrix::identity(2, 2));
        let xs = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let m = d.eval_batch(&xs).unwrap();
        assert_eq!(m, Matrix::from_column_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    }

    #[test]
    fn monomials_graded_lex_order() {
        let d = mono(2, 2);
        assert_eq!(
            d.eval(&[1.0, 2.0]).unwrap().as_slice(),
            &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0]
        );
        assert_eq!(mono(2, 5).n_obs(), 21);
        assert_eq!(monomial_count(4, 2), 15);
        let batch = d.eval_batch(&[vec![1.0, 2.0], vec![-1.0, 3.0]]).unwrap();
        assert_eq!(batch.shape(), (6, 2));
        assert_eq!(batch.column(1).as_slice(), &[1.0, -1.0, 3.0, 1.0, -3.0, 9.0]);
    }

    #[test]
    fn monomial_count_matches_binomial() {
        for n in 1..5 {
            for d in 0..6 {
                assert_eq!(graded_lex_exponents(n, d).len(), monomial_count(n, d));
            }
        }
    }

    #[test]
    fn scalar_polynomial_derivative() {
        let d = mono(1, 2);
        assert_eq!(d.jacobian(&[3.0]).unwrap().as_slice(), &[0.0, 1.0, 6.0]);
    }

    #[test]
    fn gaussian_rbf_flat_at_center() {
        let spec = DictionarySpec::new(
            2,
            Basis::Rbf {
                centers: vec![vec![0.5, -0.25], vec![1.0, 1.0]],
                shape: 0.7,
                kernel: RbfKernel::Gaussian,
            },
        );
        let d = Dictionary::new(spec).unwrap();
        let j = d.jacobian(&[0.5, -0.25]).unwrap();
        assert_eq!(j.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert!(j.row(1).norm() > 0.0);
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let centers = halton_rbf_centers(3, 6, &[(-1.0, 1.0); 3]).unwrap();
        let bases = vec![
            Basis::Identity,
            Basis::Monomials { degree: 4 },
            Basis::Rbf {
                centers: centers.clone(),
                shape: 0.8,
                kernel: RbfKernel::Gaussian,
            },
            Basis::Rbf {
                centers,
                shape: 0.8,
                kernel: RbfKernel::InverseMultiquadric,
            },
            Basis::Fourier {
                harmonics: 2,
                constant: true,
            },
            Basis::Stack {
                parts: vec![Basis::Identity, Basis::Monomials { degree: 2 }],
            },
        ];
        for basis in bases {
            let d = Dictionary::new(DictionarySpec::new(3, basis)).unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
                let analytic = d.jacobian(&x).unwrap();
                let fd = central_difference(&d, &x);
                let scale = analytic.abs().max().max(1.0);
                assert!((analytic - fd).abs().max() <= 1e-5 * scale);
            }
        }
    }

    #[test]
    fn observed_selection_and_readout() {
        let spec = DictionarySpec::new(8, Basis::Monomials { degree: 2 }).with_observed(vec![0, 2, 4, 6]);
        let d = Dictionary::new(spec).unwrap();
        assert_eq!(d.n_obs(), 15);
        assert_eq!(d.readout(), Some(vec![1, 2, 3, 4]));
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let z = d.eval(&x).unwrap();
        assert_eq!(d.read_observation(&z).unwrap(), vec![0.0, 2.0, 4.0, 6.0]);
        let j = d.jacobian(&x).unwrap();
        assert_eq!(j.shape(), (15, 8));
        assert_eq!(j[(2, 2)], 1.0);
        assert_eq!(j.column(1).norm(), 0.0);
    }

    #[test]
    fn delayed_dictionary_has_no_jacobian() {
        let spec = DictionarySpec::new(2, Basis::Identity).with_delay(2);
        let d = Dictionary::new(spec).unwrap();
        assert_eq!(d.input_dim(), 4);
        assert!(matches!(d.jacobian(&[0.0; 4]), Err(KoopError::Unsupported(_))));
    }

    #[test]
    fn delay_buffer_stacks_newest_first() {
        let mut b = DelayBuffer::new(2, 1).unwrap();
        assert_eq!(b.push(&[1.0]).unwrap(), None);
        assert_eq!(b.push(&[2.0]).unwrap(), Some(vec![2.0, 1.0]));
        assert_eq!(b.push(&[3.0]).unwrap(), Some(vec![3.0, 2.0]));
    }

    #[test]
    fn halton_points() {
        let p = halton_rbf_centers(1, 3, &[(0.0, 1.0)]).unwrap();
        assert_eq!(p, vec![vec![0.5], vec![0.25], vec![0.75]]);
        let p = halton_rbf_centers(2, 1, &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        assert_relative_eq!(p[0][0], 0.5);
        assert_relative_eq!(p[0][1], 1.0 / 3.0);
        let p = halton_rbf_centers(12, 200, &[(-1.0, 1.0); 12]).unwrap();
        assert!(p.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        assert!(halton_rbf_centers(33, 1, &[(0.0, 1.0); 33]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(mono(2, 2).eval(&[1.0]).is_err());
        assert!(mono(2, 2).eval_batch::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn spec_round_trip_reproduces_eval() {
        let spec = DictionarySpec::new(
            2,
            Basis::Stack {
                parts: vec![
                    Basis::Monomials { degree: 3 },
                    Basis::Rbf {
                        centers: halton_rbf_centers(2, 4, &[(-0.3, 0.9), (-2.0, 1.0)]).unwrap(),
                        shape: 0.37,
                        kernel: RbfKernel::Gaussian,
                    },
                ],
            },
        );
        let text = serde_json::to_string(&spec).unwrap();
        let back: DictionarySpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let a = Dictionary::new(spec).unwrap().eval(&[0.123, -0.987]).unwrap();
        let b = Dictionary::new(back).unwrap().eval(&[0.123, -0.987]).unwrap();
        assert_eq!(a, b);
    }
}
