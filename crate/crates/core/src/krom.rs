//! Prediction with bilinear models, operator/generator conversion and
//! piecewise model banks over the input box.

use crate::dictionary::Dictionary;
use crate::edmd::{BilinearModel, GeneratorModel, OperatorModel};
use crate::error::{KoopError, Result};
use crate::numerics::{integrate_bilinear, Matrix, Scheme, Vector};
use crate::plants::InputBox;

/// Zero-order-hold input `u(t) = u_i` on `[iΔt, (i+1)Δt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseConstantSignal {
    pub dt: f64,
    pub values: Vec<Vec<f64>>,
    pub input_box: InputBox,
}

impl PiecewiseConstantSignal {
    pub fn new(dt: f64, values: Vec<Vec<f64>>, input_box: InputBox) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(KoopError::invalid("hold interval must be positive"));
        }
        if values.is_empty() {
            return Err(KoopError::invalid("signal needs at least one interval"));
        }
        for u in &values {
            if !input_box.contains(u) {
                return Err(KoopError::OutOfDomain(u.clone()));
            }
        }
        Ok(Self {
            dt,
            values,
            input_box,
        })
    }

    /// Sample `f` at the left end of each interval and clamp into the box.
    pub fn sampled(dt: f64, steps: usize, input_box: InputBox, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let values = (0..steps)
            .map(|i| input_box.clamp(&f(i as f64 * dt)))
            .collect();
        Self::new(dt, values, input_box)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_signal(n_c: usize, model_dt: Option<f64>, signal: &PiecewiseConstantSignal) -> Result<()> {
    if let Some(dt) = model_dt {
        if (dt - signal.dt).abs() > 1e-12 * dt.max(1.0) {
            return Err(KoopError::invalid(format!(
                "signal hold interval {} differs from the model's {dt}",
                signal.dt
            )));
        }
    }
    if signal.values.iter().any(|u| u.len() != n_c) {
        return Err(KoopError::invalid("signal input dimension does not match the model"));
    }
    Ok(())
}

fn check_z0(n_o: usize, z0: &Vector) -> Result<()> {
    if z0.len() != n_o {
        return Err(KoopError::invalid(format!(
            "initial lifted state has length {}, model has {n_o} observables",
            z0.len()
        )));
    }
    Ok(())
}

/// `z₀ … z_ℓ` with `z_{k+1} = (K₀^Δt + Σ [u_k]ᵢ B^Δt_i) z_k`.
pub fn predict_discrete(model: &OperatorModel, z0: &Vector, signal: &PiecewiseConstantSignal) -> Result<Vec<Vector>> {
    check_z0(model.n_obs(), z0)?;
    check_signal(model.n_inputs(), Some(model.dt), signal)?;
    let mut out = Vec::with_capacity(signal.len() + 1);
    out.push(z0.clone());
    for u in &signal.values {
        let next = model.at(u)? * out.last().expect("nonempty");
        out.push(next);
    }
    Ok(out)
}

/// Integrates the frozen bilinear system over each hold interval.
pub fn predict_continuous(
    model: &GeneratorModel,
    z0: &Vector,
    signal: &PiecewiseConstantSignal,
    scheme: Scheme,
) -> Result<Vec<Vector>> {
    check_z0(model.n_obs(), z0)?;
    check_signal(model.n_inputs(), None, signal)?;
    let mut out = Vec::with_capacity(signal.len() + 1);
    out.push(z0.clone());
    for u in &signal.values {
        let next = integrate_bilinear(&model.k0, &model.b, u, out.last().expect("nonempty"), signal.dt, scheme)?;
        out.push(next);
    }
    Ok(out)
}

/// First-order discretization `K₀^Δt = I + Δt K₀`, `B^Δt = Δt B`.
pub fn generator_to_operator(model: &GeneratorModel, dt: f64) -> Result<OperatorModel> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(KoopError::invalid("dt must be positive"));
    }
    let n = model.n_obs();
    let mut out = OperatorModel::new(
        Matrix::identity(n, n) + &model.k0 * dt,
        model.b.iter().map(|b| b * dt).collect(),
        dt,
        model.dictionary.clone(),
        model.input_box.clone(),
    )?;
    out.fit = model.fit.clone();
    Ok(out)
}

/// Inverse of [`generator_to_operator`].
pub fn operator_to_generator(model: &OperatorModel) -> Result<GeneratorModel> {
    let n = model.n_obs();
    let dt = model.dt;
    let mut out = GeneratorModel::new(
        (&model.k0 - Matrix::identity(n, n)) / dt,
        model.b.iter().map(|b| b / dt).collect(),
        model.dictionary.clone(),
        model.input_box.clone(),
    )?;
    out.fit = model.fit.clone();
    Ok(out)
}

/// Models valid on axis-aligned sub-boxes of the input box; the lowest index
/// wins on shared faces.
#[derive(Clone, Debug)]
pub struct ModelBank {
    pub input_box: InputBox,
    pub entries: Vec<(InputBox, BilinearModel)>,
}

impl ModelBank {
    pub fn new(input_box: InputBox, entries: Vec<(InputBox, BilinearModel)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(KoopError::invalid("model bank is empty"));
        }
        let first = entries[0].1.dictionary().clone();
        let n_o = entries[0].1.n_obs();
        for (region, model) in &entries {
            if region.dim() != input_box.dim() {
                return Err(KoopError::invalid("region dimension differs from the input box"));
            }
            if *model.dictionary() != first || model.n_obs() != n_o {
                return Err(KoopError::invalid("bank models must share one dictionary"));
            }
        }
        let bank = Self { input_box, entries };
        bank.check_cover()?;
        Ok(bank)
    }

    /// Every cell of the grid spanned by the region faces must be covered.
    fn check_cover(&self) -> Result<()> {
        let dim = self.input_box.dim();
        let mut cuts: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                let mut c = vec![self.input_box.lo[i], self.input_box.hi[i]];
                for (r, _) in &self.entries {
                    for v in [r.lo[i], r.hi[i]] {
                        if v > self.input_box.lo[i] && v < self.input_box.hi[i] {
                            c.push(v);
                        }
                    }
                }
                c.sort_by(f64::total_cmp);
                c.dedup();
                c
            })
            .collect();
        // degenerate axes contribute a single point
        for c in cuts.iter_mut() {
            if c.len() == 1 {
                c.push(c[0]);
            }
        }
        let mut idx = vec![0usize; dim];
        loop {
            let mid: Vec<f64> = (0..dim).map(|i| 0.5 * (cuts[i][idx[i]] + cuts[i][idx[i] + 1])).collect();
            if !self.entries.iter().any(|(r, _)| r.contains(&mid)) {
                return Err(KoopError::invalid(format!("bank regions leave {mid:?} uncovered")));
            }
            let mut k = 0;
            loop {
                if k == dim {
                    return Ok(());
                }
                idx[k] += 1;
                if idx[k] + 1 < cuts[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    pub fn select(&self, u: &[f64]) -> Result<(usize, &BilinearModel)> {
        if !self.input_box.contains(u) {
            return Err(KoopError::OutOfDomain(u.to_vec()));
        }
        self.entries
            .iter()
            .enumerate()
            .find(|(_, (r, _))| r.contains(u))
            .map(|(i, (_, m))| (i, m))
            .ok_or_else(|| KoopError::OutOfDomain(u.to_vec()))
    }
}

pub fn bank_select<'a>(bank: &'a ModelBank, u: &[f64]) -> Result<&'a BilinearModel> {
    bank.select(u).map(|(_, m)| m)
}

/// `z₀ = ψ(x₀)`, then the matching predictor (`scheme` applies to generators).
pub fn lift_and_predict(
    model: &BilinearModel,
    dict: &Dictionary,
    x0: &[f64],
    signal: &PiecewiseConstantSignal,
    scheme: Scheme,
) -> Result<Vec<Vector>> {
    if model.dictionary() != dict.spec() {
        return Err(KoopError::invalid("dictionary does not match the model's descriptor"));
    }
    let z0 = dict.eval(x0)?;
    match model {
        BilinearModel::Operator(m) => predict_discrete(m, &z0, signal),
        BilinearModel::Generator(g) => predict_continuous(g, &z0, signal, scheme),
    }
}
