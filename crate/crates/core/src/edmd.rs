//! Data matrices and least-squares fits of bilinear Koopman models.
//!
//! Every fit is a single pseudoinverse solve against the lifted data matrix
//! `Ψ_{X,U}` whose column `j` is `[ψ(x_j); u_j ⊗ ψ(x_j)]`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dictionary::{Dictionary, DictionarySpec};
use crate::error::{KoopError, Result};
use crate::numerics::{bilinear_matrix, Matrix, SvdFactorization, Vector};
use crate::plants::InputBox;

/// State reached from a sample's `x` after `offset` hold intervals under the
/// sample's input (negative offsets look backwards).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub offset: i32,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xdot: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub successor: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub neighbors: Vec<Neighbor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<usize>,
}

impl Sample {
    pub fn with_derivative(x: Vec<f64>, u: Vec<f64>, xdot: Vec<f64>) -> Self {
        Self {
            x,
            u,
            xdot: Some(xdot),
            successor: None,
            dt: None,
            neighbors: Vec::new(),
            trajectory: None,
        }
    }

    pub fn snapshot(x: Vec<f64>, u: Vec<f64>, successor: Vec<f64>, dt: f64) -> Self {
        Self {
            x,
            u,
            xdot: None,
            successor: Some(successor),
            dt: Some(dt),
            neighbors: Vec::new(),
            trajectory: None,
        }
    }

    /// `Φ^{k·Δt}_{u}(x)` if recorded.
    pub fn state_at(&self, offset: i32) -> Option<&[f64]> {
        match offset {
            0 => Some(&self.x),
            1 => self.successor.as_deref(),
            k => self
                .neighbors
                .iter()
                .find(|n| n.offset == k)
                .map(|n| n.state.as_slice()),
        }
    }
}

/// Training data: derivative tuples and/or snapshot pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub samples: Vec<Sample>,
    pub input_box: InputBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<String>,
}

impl TrajectoryDataset {
    pub fn new(samples: Vec<Sample>, input_box: InputBox, plant: Option<String>) -> Result<Self> {
        let d = Self {
            samples,
            input_box,
            plant,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.samples.first() else {
            return Err(KoopError::invalid("dataset is empty"));
        };
        let (n, nc) = (first.x.len(), first.u.len());
        if nc != self.input_box.dim() {
            return Err(KoopError::invalid("input dimension does not match the input box"));
        }
        let slack = |i: usize| 1e-12 * (1.0 + self.input_box.hi[i].abs().max(self.input_box.lo[i].abs()));
        for (j, s) in self.samples.iter().enumerate() {
            if s.x.len() != n || s.u.len() != nc {
                return Err(KoopError::invalid(format!("sample {j} has inconsistent dimensions")));
            }
            if s.xdot.is_none() && s.successor.is_none() {
                return Err(KoopError::invalid(format!(
                    "sample {j} carries neither a derivative nor a successor"
                )));
            }
            if s.xdot.as_ref().is_some_and(|v| v.len() != n)
                || s.successor.as_ref().is_some_and(|v| v.len() != n)
                || s.neighbors.iter().any(|nb| nb.state.len() != n)
            {
                return Err(KoopError::invalid(format!("sample {j} has inconsistent dimensions")));
            }
            if s.successor.is_some() && s.dt.is_none_or(|dt| !(dt > 0.0)) {
                return Err(KoopError::invalid(format!("sample {j} has a successor but no positive dt")));
            }
            if s.u
                .iter()
                .enumerate()
                .any(|(i, v)| *v < self.input_box.lo[i] - slack(i) || *v > self.input_box.hi[i] + slack(i))
            {
                return Err(KoopError::OutOfDomain(s.u.clone()));
            }
            let finite = s.x.iter().chain(&s.u).all(|v| v.is_finite())
                && s.xdot.iter().flatten().all(|v| v.is_finite())
                && s.successor.iter().flatten().all(|v| v.is_finite());
            if !finite {
                return Err(KoopError::invalid(format!("sample {j} contains non-finite values")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn input_dim(&self) -> usize {
        self.input_box.dim()
    }

    /// Common hold interval of the samples that carry one.
    pub fn dt(&self) -> Result<Option<f64>> {
        let mut dt: Option<f64> = None;
        for s in &self.samples {
            if let Some(d) = s.dt {
                match dt {
                    None => dt = Some(d),
                    Some(prev) if prev != d => {
                        return Err(KoopError::invalid(format!(
                            "dataset mixes hold intervals {prev} and {d}"
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(dt)
    }

    /// SHA-256 over the numerical content, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |v: &[f64]| {
            h.update((v.len() as u64).to_le_bytes());
            for x in v {
                h.update(x.to_le_bytes());
            }
        };
        for s in &self.samples {
            put(&s.x);
            put(&s.u);
            put(s.xdot.as_deref().unwrap_or(&[]));
            put(s.successor.as_deref().unwrap_or(&[]));
            put(&[s.dt.unwrap_or(0.0)]);
            for nb in &s.neighbors {
                put(&[nb.offset as f64]);
                put(&nb.state);
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Partition by exact input value, preserving first-appearance order.
    pub fn split_by_input(&self) -> Vec<(Vec<f64>, TrajectoryDataset)> {
        let mut groups: Vec<(Vec<f64>, Vec<Sample>)> = Vec::new();
        for s in &self.samples {
            match groups.iter_mut().find(|(u, _)| *u == s.u) {
                Some((_, v)) => v.push(s.clone()),
                None => groups.push((s.u.clone(), vec![s.clone()])),
            }
        }
        groups
            .into_iter()
            .map(|(u, samples)| {
                (
                    u,
                    TrajectoryDataset {
                        samples,
                        input_box: self.input_box.clone(),
                        plant: self.plant.clone(),
                    },
                )
            })
            .collect()
    }

    /// Dataset consisting of the given samples.
    pub fn subset(&self, keep: impl Fn(&Sample) -> bool) -> Result<TrajectoryDataset> {
        TrajectoryDataset::new(
            self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            self.input_box.clone(),
            self.plant.clone(),
        )
    }
}

/// How `ψ̇(x_j)` is obtained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DerivativeMethod {
    /// `𝒟ψ(x_j) ẋ_j`
    #[default]
    ChainRule,
    /// `(ψ(x̃_j) − ψ(x_j))/Δt`
    Forward,
    /// `(ψ(Φ^{Δt}) − ψ(Φ^{−Δt}))/(2Δt)`
    Central3,
    /// Five-point stencil over offsets −2..2.
    Smoothed5,
    /// Arbitrary `(offset, coefficient)` pairs, scaled by `1/Δt`.
    Custom { stencil: Vec<(i32, f64)> },
}

impl DerivativeMethod {
    pub fn stencil(&self) -> Option<Vec<(i32, f64)>> {
        match self {
            DerivativeMethod::ChainRule => None,
            DerivativeMethod::Forward => Some(vec![(0, -1.0), (1, 1.0)]),
            DerivativeMethod::Central3 => Some(vec![(-1, -0.5), (1, 0.5)]),
            DerivativeMethod::Smoothed5 => Some(vec![
                (-2, 1.0 / 12.0),
                (-1, -2.0 / 3.0),
                (1, 2.0 / 3.0),
                (2, -1.0 / 12.0),
            ]),
            DerivativeMethod::Custom { stencil } => Some(stencil.clone()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DerivativeMethod::ChainRule => "chain_rule",
            DerivativeMethod::Forward => "forward",
            DerivativeMethod::Central3 => "central3",
            DerivativeMethod::Smoothed5 => "smoothed5",
            DerivativeMethod::Custom { .. } => "custom",
        }
    }
}

/// Lifted data matrices.
#[derive(Clone, Debug)]
pub struct LiftedData {
    /// `Ψ_{X,U}`, `n_o(1+n_c) × m`
    pub psi_xu: Matrix,
    /// `Ψ_{X̃}` when every sample has a successor.
    pub psi_next: Option<Matrix>,
    /// `Ψ̇` when a derivative method was requested.
    pub psi_dot: Option<Matrix>,
}

fn lifted_column(psi: &Vector, u: &[f64]) -> Vector {
    let n_o = psi.len();
    let mut col = Vector::zeros(n_o * (1 + u.len()));
    col.rows_mut(0, n_o).copy_from(psi);
    for (i, ui) in u.iter().enumerate() {
        if *ui != 0.0 {
            col.rows_mut(n_o * (i + 1), n_o).copy_from(&(psi * *ui));
        }
    }
    col
}

fn check_dims(dict: &Dictionary, data: &TrajectoryDataset) -> Result<()> {
    data.validate()?;
    if data.state_dim() != dict.input_dim() {
        return Err(KoopError::invalid(format!(
            "dataset states have length {}, dictionary expects {}",
            data.state_dim(),
            dict.input_dim()
        )));
    }
    Ok(())
}

pub fn assemble_lifted(
    dict: &Dictionary,
    data: &TrajectoryDataset,
    derivative: Option<&DerivativeMethod>,
) -> Result<LiftedData> {
    check_dims(dict, data)?;
    let n_o = dict.n_obs();
    let m = data.len();
    let nc = data.input_dim();
    let mut psi_xu = Matrix::zeros(n_o * (1 + nc), m);
    let all_succ = data.samples.iter().all(|s| s.successor.is_some());
    let mut psi_next = all_succ.then(|| Matrix::zeros(n_o, m));
    for (j, s) in data.samples.iter().enumerate() {
        let psi = dict.eval(&s.x)?;
        psi_xu.set_column(j, &lifted_column(&psi, &s.u));
        if let (Some(pn), Some(succ)) = (psi_next.as_mut(), &s.successor) {
            pn.set_column(j, &dict.eval(succ)?);
        }
    }
    let psi_dot = match derivative {
        Some(method) => Some(estimate_observable_derivatives(dict, data, method)?),
        None => None,
    };
    Ok(LiftedData {
        psi_xu,
        psi_next,
        psi_dot,
    })
}

pub fn estimate_observable_derivatives(
    dict: &Dictionary,
    data: &TrajectoryDataset,
    method: &DerivativeMethod,
) -> Result<Matrix> {
    check_dims(dict, data)?;
    let mut out = Matrix::zeros(dict.n_obs(), data.len());
    match method.stencil() {
        None => {
            for (j, s) in data.samples.iter().enumerate() {
                let xdot = s.xdot.as_ref().ok_or_else(|| {
                    KoopError::invalid(format!("sample {j} has no state derivative for the chain rule"))
                })?;
                let col = dict.jacobian(&s.x)? * Vector::from_column_slice(xdot);
                out.set_column(j, &col);
            }
        }
        Some(stencil) => {
            if stencil.is_empty() {
                return Err(KoopError::invalid("empty finite-difference stencil"));
            }
            for (j, s) in data.samples.iter().enumerate() {
                let dt = s
                    .dt
                    .ok_or_else(|| KoopError::invalid(format!("sample {j} has no hold interval")))?;
                let mut col = Vector::zeros(dict.n_obs());
                for &(k, c) in &stencil {
                    if c == 0.0 {
                        continue;
                    }
                    let x = s.state_at(k).ok_or_else(|| {
                        KoopError::invalid(format!("sample {j} lacks the neighbour at offset {k}"))
                    })?;
                    col += dict.eval(x)? * c;
                }
                out.set_column(j, &(col / dt));
            }
        }
    }
    Ok(out)
}

/// Fit diagnostics stored with every model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub method: String,
    /// `Σ_j ‖e_j‖²`, the squared Frobenius norm of the regression defect.
    pub residual: f64,
    pub rank: usize,
    pub rows: usize,
    pub samples: usize,
    pub full_row_rank: bool,
    pub fingerprint: String,
}

/// `ż = (K₀ + Σ uᵢ Bᵢ) z`
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub k0: Matrix,
    pub b: Vec<Matrix>,
    pub dictionary: DictionarySpec,
    pub input_box: InputBox,
    pub fit: Option<FitInfo>,
}

/// `z_{k+1} = (K₀^Δt + Σ uᵢ B^Δt_i) z_k`
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorModel {
    pub k0: Matrix,
    pub b: Vec<Matrix>,
    pub dt: f64,
    pub dictionary: DictionarySpec,
    pub input_box: InputBox,
    pub fit: Option<FitInfo>,
}

fn check_matrices(k0: &Matrix, b: &[Matrix], input_box: &InputBox) -> Result<()> {
    if !k0.is_square() || k0.nrows() == 0 {
        return Err(KoopError::invalid("K0 must be square and nonempty"));
    }
    if b.len() != input_box.dim() {
        return Err(KoopError::invalid("one input matrix per input channel required"));
    }
    if b.iter().any(|m| m.shape() != k0.shape()) {
        return Err(KoopError::invalid("all model matrices must share one square shape"));
    }
    if k0.iter().chain(b.iter().flat_map(|m| m.iter())).any(|v| !v.is_finite()) {
        return Err(KoopError::invalid("model matrices contain non-finite entries"));
    }
    Ok(())
}

impl GeneratorModel {
    pub fn new(k0: Matrix, b: Vec<Matrix>, dictionary: DictionarySpec, input_box: InputBox) -> Result<Self> {
        check_matrices(&k0, &b, &input_box)?;
        Ok(Self {
            k0,
            b,
            dictionary,
            input_box,
            fit: None,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.k0.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.len()
    }

    /// `K₀ + Σ uᵢ Bᵢ`
    pub fn at(&self, u: &[f64]) -> Result<Matrix> {
        bilinear_matrix(&self.k0, &self.b, u)
    }
}

impl OperatorModel {
    pub fn new(
        k0: Matrix,
        b: Vec<Matrix>,
        dt: f64,
        dictionary: DictionarySpec,
        input_box: InputBox,
    ) -> Result<Self> {
        check_matrices(&k0, &b, &input_box)?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(KoopError::invalid("operator model needs a positive hold interval"));
        }
        Ok(Self {
            k0,
            b,
            dt,
            dictionary,
            input_box,
            fit: None,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.k0.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.len()
    }

    /// One-step matrix `K₀^Δt + Σ uᵢ B^Δt_i`.
    pub fn at(&self, u: &[f64]) -> Result<Matrix> {
        bilinear_matrix(&self.k0, &self.b, u)
    }
}

/// Either kind of bilinear model.
#[derive(Clone, Debug, PartialEq)]
pub enum BilinearModel {
    Generator(GeneratorModel),
    Operator(OperatorModel),
}

impl BilinearModel {
    pub fn dictionary(&self) -> &DictionarySpec {
        match self {
            BilinearModel::Generator(g) => &g.dictionary,
            BilinearModel::Operator(o) => &o.dictionary,
        }
    }

    pub fn input_box(&self) -> &InputBox {
        match self {
            BilinearModel::Generator(g) => &g.input_box,
            BilinearModel::Operator(o) => &o.input_box,
        }
    }

    pub fn n_obs(&self) -> usize {
        match self {
            BilinearModel::Generator(g) => g.n_obs(),
            BilinearModel::Operator(o) => o.n_obs(),
        }
    }

    pub fn fit(&self) -> Option<&FitInfo> {
        match self {
            BilinearModel::Generator(g) => g.fit.as_ref(),
            BilinearModel::Operator(o) => o.fit.as_ref(),
        }
    }
}

/// Solve `M = Y X⁺`, enforce the rank floor and collect diagnostics.
fn regress(y: &Matrix, x: &Matrix, n_o: usize, rtol: f64, method: String, fingerprint: String) -> Result<(Matrix, FitInfo)> {
    if !(rtol > 0.0 && rtol < 1.0) {
        return Err(KoopError::invalid(format!("rtol must lie in (0, 1), got {rtol}")));
    }
    let svd = SvdFactorization::new(x, rtol)?;
    let rank = svd.rank();
    if rank < n_o {
        return Err(KoopError::FitFailure {
            rank,
            rows: x.nrows(),
            cols: x.ncols(),
            required: n_o,
        });
    }
    if rank < x.nrows() {
        log::warn!(
            "lifted data matrix is rank deficient: rank {rank} of {} rows ({} samples); fitted matrices are minimum-norm",
            x.nrows(),
            x.ncols()
        );
    }
    let m = y * svd.pseudo_inverse();
    let residual = (y - &m * x).norm_squared();
    Ok((
        m,
        FitInfo {
            method,
            residual,
            rank,
            rows: x.nrows(),
            samples: x.ncols(),
            full_row_rank: rank == x.nrows(),
            fingerprint,
        },
    ))
}

fn split_blocks(m: &Matrix, n_o: usize, nc: usize) -> (Matrix, Vec<Matrix>) {
    let k0 = m.columns(0, n_o).into_owned();
    let b = (0..nc)
        .map(|i| m.columns(n_o * (i + 1), n_o).into_owned())
        .collect();
    (k0, b)
}

/// Generator regression `[K₀ B₁ … B_{n_c}] = Ψ̇ Ψ_{X,U}⁺`.
pub fn fit_generator(
    dict: &Dictionary,
    data: &TrajectoryDataset,
    method: &DerivativeMethod,
    rtol: f64,
) -> Result<GeneratorModel> {
    let lifted = assemble_lifted(dict, data, Some(method))?;
    let psi_dot = lifted.psi_dot.expect("requested");
    let (m, fit) = regress(
        &psi_dot,
        &lifted.psi_xu,
        dict.n_obs(),
        rtol,
        format!("generator/{}", method.name()),
        data.fingerprint(),
    )?;
    let (k0, b) = split_blocks(&m, dict.n_obs(), data.input_dim());
    Ok(GeneratorModel {
        k0,
        b,
        dictionary: dict.spec().clone(),
        input_box: data.input_box.clone(),
        fit: Some(fit),
    })
}

/// Operator regression `[K₀^Δt B^Δt_1 …] = Ψ_{X̃} Ψ_{X,U}⁺`.
pub fn fit_operators(dict: &Dictionary, data: &TrajectoryDataset, rtol: f64) -> Result<OperatorModel> {
    let dt = data
        .dt()?
        .ok_or_else(|| KoopError::invalid("operator fit needs snapshot pairs"))?;
    let lifted = assemble_lifted(dict, data, None)?;
    let psi_next = lifted
        .psi_next
        .ok_or_else(|| KoopError::invalid("every sample needs a successor state for an operator fit"))?;
    let (m, fit) = regress(
        &psi_next,
        &lifted.psi_xu,
        dict.n_obs(),
        rtol,
        "operators".into(),
        data.fingerprint(),
    )?;
    let (k0, b) = split_blocks(&m, dict.n_obs(), data.input_dim());
    Ok(OperatorModel {
        k0,
        b,
        dt,
        dictionary: dict.spec().clone(),
        input_box: data.input_box.clone(),
        fit: Some(fit),
    })
}

/// Affine interpolation `K(u) ≈ K₀ + Σ uᵢ Bᵢ` through per-level matrices,
/// least squares over the levels. For two levels `{a, b}` of one channel this
/// is `B = (K_a − K_b)/(a − b)`, `K₀ = K_b − b·B`; for `{−ū, ū}` it gives
/// `K₀ = ½(K₊ + K₋)`, `B = (K₊ − K₋)/(2ū)`.
pub fn interpolate_levels(levels: &[(Vec<f64>, Matrix)]) -> Result<(Matrix, Vec<Matrix>)> {
    let Some((u0, m0)) = levels.first() else {
        return Err(KoopError::invalid("no input levels"));
    };
    let nc = u0.len();
    let n_o = m0.nrows();
    if levels.iter().any(|(u, m)| u.len() != nc || m.shape() != (n_o, n_o)) {
        return Err(KoopError::invalid("per-level matrices have inconsistent dimensions"));
    }
    let w = Matrix::from_fn(1 + nc, levels.len(), |r, c| if r == 0 { 1.0 } else { levels[c].0[r - 1] });
    let svd = SvdFactorization::new(&w, 1e-12)?;
    if svd.rank() < 1 + nc {
        return Err(KoopError::invalid(format!(
            "{} input levels do not determine an affine family in {nc} inputs",
            levels.len()
        )));
    }
    let w_pinv = svd.pseudo_inverse();
    let mut k0 = Matrix::zeros(n_o, n_o);
    let mut b = vec![Matrix::zeros(n_o, n_o); nc];
    for (l, (_, m)) in levels.iter().enumerate() {
        k0 += m * w_pinv[(l, 0)];
        for (i, bi) in b.iter_mut().enumerate() {
            *bi += m * w_pinv[(l, i + 1)];
        }
    }
    Ok((k0, b))
}

/// Per-level operators and the affine family through them.
pub fn fit_switched_family(
    dict: &Dictionary,
    datasets: &[(Vec<f64>, TrajectoryDataset)],
    rtol: f64,
) -> Result<(Vec<(Vec<f64>, Matrix)>, OperatorModel)> {
    let (first_u, first) = datasets
        .first()
        .ok_or_else(|| KoopError::invalid("no per-level datasets"))?;
    let dt = first
        .dt()?
        .ok_or_else(|| KoopError::invalid("switched fit needs snapshot pairs"))?;
    let mut levels = Vec::with_capacity(datasets.len());
    let mut prints = Vec::new();
    for (u, data) in datasets {
        if u.len() != first_u.len() {
            return Err(KoopError::invalid("input levels have different dimensions"));
        }
        if data.samples.iter().any(|s| s.u != *u) {
            return Err(KoopError::invalid(format!("dataset for level {u:?} contains other inputs")));
        }
        if data.dt()? != Some(dt) {
            return Err(KoopError::invalid("per-level datasets must share one hold interval"));
        }
        let lifted = assemble_lifted(dict, data, None)?;
        let psi_x = lifted.psi_xu.rows(0, dict.n_obs()).into_owned();
        let psi_next = lifted
            .psi_next
            .ok_or_else(|| KoopError::invalid("every sample needs a successor state"))?;
        let (k, _) = regress(&psi_next, &psi_x, dict.n_obs(), rtol, String::new(), String::new())?;
        prints.push(data.fingerprint());
        levels.push((u.clone(), k));
    }
    let (k0, b) = interpolate_levels(&levels)?;
    let mut model = OperatorModel::new(k0, b, dt, dict.spec().clone(), first.input_box.clone())?;
    model.fit = Some(family_info("switched_operators", &levels, prints));
    Ok((levels, model))
}

/// Per-level generators `Ψ̇_X Ψ_X⁺` and the affine family through them.
pub fn fit_switched_generators(
    dict: &Dictionary,
    datasets: &[(Vec<f64>, TrajectoryDataset)],
    method: &DerivativeMethod,
    rtol: f64,
) -> Result<(Vec<(Vec<f64>, Matrix)>, GeneratorModel)> {
    let (_, first) = datasets
        .first()
        .ok_or_else(|| KoopError::invalid("no per-level datasets"))?;
    let mut levels = Vec::with_capacity(datasets.len());
    let mut prints = Vec::new();
    for (u, data) in datasets {
        if data.samples.iter().any(|s| s.u != *u) {
            return Err(KoopError::invalid(format!("dataset for level {u:?} contains other inputs")));
        }
        let lifted = assemble_lifted(dict, data, Some(method))?;
        let psi_x = lifted.psi_xu.rows(0, dict.n_obs()).into_owned();
        let (l, _) = regress(
            lifted.psi_dot.as_ref().expect("requested"),
            &psi_x,
            dict.n_obs(),
            rtol,
            String::new(),
            String::new(),
        )?;
        prints.push(data.fingerprint());
        levels.push((u.clone(), l));
    }
    let (k0, b) = interpolate_levels(&levels)?;
    let mut model = GeneratorModel::new(k0, b, dict.spec().clone(), first.input_box.clone())?;
    model.fit = Some(family_info(
        &format!("switched_generators/{}", method.name()),
        &levels,
        prints,
    ));
    Ok((levels, model))
}

fn family_info(method: &str, levels: &[(Vec<f64>, Matrix)], prints: Vec<String>) -> FitInfo {
    let mut h = Sha256::new();
    for p in &prints {
        h.update(p.as_bytes());
    }
    let n_o = levels[0].1.nrows();
    FitInfo {
        method: method.into(),
        residual: 0.0,
        rank: n_o,
        rows: n_o,
        samples: levels.len(),
        full_row_rank: true,
        fingerprint: h.finalize().iter().map(|b| format!("{b:02x}")).collect(),
    }
}
