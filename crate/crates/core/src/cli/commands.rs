use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{FitMethod, LoadedConfig, Waveform};
use super::model_file::{self, fmt_f64, LoadedModel};
use crate::dictionary::Dictionary;
use crate::edmd::{
    fit_generator, fit_operators, fit_switched_family, fit_switched_generators, BilinearModel, DerivativeMethod,
    TrajectoryDataset,
};
use crate::error::{KoopError, Result};
use crate::krom::{lift_and_predict, PiecewiseConstantSignal};
use crate::numerics::{Matrix, Scheme, Vector};
use crate::ocp::{
    mpc_loop, tracking_weights, value_and_gradient, ClosedLoopRecord, ControlModel, InputBasis, MpcSettings, OcpSpec,
    QuadraticStageCost,
};
use crate::plants::{Plant, PlantKind};

/// Everything a command needs besides its own config section.
pub struct Context {
    pub config: LoadedConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub plot_script: bool,
}

impl Context {
    fn plant(&self) -> Result<Plant> {
        Plant::from_spec(&self.config.config.plant)
    }

    fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out)
            .map_err(|e| KoopError::invalid(format!("cannot create output directory {}: {e}", self.out.display())))
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Fit the model described by `[fit]` on `data`.
pub fn fit_from_config(ctx: &Context, dict: &Dictionary, data: &TrajectoryDataset) -> Result<BilinearModel> {
    let fit = ctx.config.config.fit.clone().unwrap_or_default();
    Ok(match fit.method {
        FitMethod::Generator => {
            let method = fit.derivative.unwrap_or_default();
            BilinearModel::Generator(fit_generator(dict, data, &method, fit.rtol)?)
        }
        FitMethod::Operators => BilinearModel::Operator(fit_operators(dict, data, fit.rtol)?),
        FitMethod::Switched => {
            let levels = data.split_by_input();
            match fit.derivative {
                Some(method) => BilinearModel::Generator(fit_switched_generators(dict, &levels, &method, fit.rtol)?.1),
                None => BilinearModel::Operator(fit_switched_family(dict, &levels, fit.rtol)?.1),
            }
        }
    })
}

fn train_in_process(ctx: &Context, plant: &Plant) -> Result<(BilinearModel, TrajectoryDataset)> {
    let spec = ctx.config.config.dictionary.to_spec(plant)?;
    let dict = Dictionary::new(spec)?;
    let data = ctx.config.load_dataset(plant, ctx.seed)?;
    let model = fit_from_config(ctx, &dict, &data)?;
    Ok((model, data))
}

/// Loads the model file named in the config, or fits one in-process.
fn model_for(ctx: &Context, plant: &Plant, path: Option<&Path>) -> Result<BilinearModel> {
    match path {
        Some(p) => {
            let p = ctx.config.resolve(p);
            let LoadedModel { model, checksum_ok } = model_file::read(&p)?;
            if !checksum_ok {
                return Err(KoopError::invalid(format!(
                    "checksum mismatch in {}; run `koopgen validate` for details",
                    p.display()
                )));
            }
            Ok(model)
        }
        None => Ok(train_in_process(ctx, plant)?.0),
    }
}

fn model_dictionary(model: &BilinearModel, plant: &Plant) -> Result<Dictionary> {
    let dict = Dictionary::new(model.dictionary().clone())?;
    if dict.spec().state_dim != plant.state_dim() {
        return Err(KoopError::invalid(format!(
            "model expects a {}-dimensional state, plant has {}",
            dict.spec().state_dim,
            plant.state_dim()
        )));
    }
    if model.input_box().dim() != plant.input_dim() {
        return Err(KoopError::invalid("model and plant disagree on the number of inputs"));
    }
    Ok(dict)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| KoopError::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn column_names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// `t, z…, x…, u…, err` rows; optional groups are omitted when `None`.
struct TrajectoryCsv {
    text: String,
}

impl TrajectoryCsv {
    fn new(n_obs: usize, n_state: Option<usize>, n_inputs: Option<usize>, err: bool) -> Self {
        let mut cols = vec!["t".to_string()];
        cols.extend(column_names("z", n_obs));
        if let Some(n) = n_state {
            cols.extend(column_names("x", n));
        }
        if let Some(n) = n_inputs {
            cols.extend(column_names("u", n));
        }
        if err {
            cols.push("err".into());
        }
        Self {
            text: cols.join(",") + "\n",
        }
    }

    fn row(&mut self, t: f64, z: &Vector, x: Option<&[f64]>, u: Option<&[f64]>, err: Option<f64>) {
        let mut vals = vec![t];
        vals.extend(z.iter());
        vals.extend(x.into_iter().flatten());
        vals.extend(u.into_iter().flatten());
        vals.extend(err);
        self.text += &vals.into_iter().map(fmt_f64).collect::<Vec<_>>().join(",");
        self.text.push('\n');
    }
}

fn plot_script(csv_name: &str, n_columns: usize, title: &str) -> String {
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\nset title '{title}'\n\
         plot for [i=2:{n_columns}] '{csv_name}' using 1:i with lines\npause -1\n"
    )
}

#[derive(Serialize)]
struct TrainSummary {
    format: &'static str,
    plant: &'static str,
    seed: u64,
    model_kind: &'static str,
    method: String,
    n_obs: usize,
    n_inputs: usize,
    dt: Option<f64>,
    samples: usize,
    rank: usize,
    rows: usize,
    full_row_rank: bool,
    residual: f64,
    dataset_fingerprint: String,
    model_file: String,
}

pub fn train(ctx: &Context) -> Result<()> {
    let plant = ctx.plant()?;
    let (model, data) = train_in_process(ctx, &plant)?;
    ctx.prepare_out()?;
    if ctx.config.config.data.as_ref().is_some_and(|d| d.save) {
        write_json(&ctx.out_file("dataset.json"), &data)?;
    }
    let path = ctx.out_file("model.txt");
    model_file::write(&path, &model)?;
    let fit = model.fit().cloned().expect("fitted models carry diagnostics");
    let (kind, dt, n_inputs) = match &model {
        BilinearModel::Generator(g) => ("generator", None, g.n_inputs()),
        BilinearModel::Operator(o) => ("operator", Some(o.dt), o.n_inputs()),
    };
    let summary = TrainSummary {
        format: "koopgen-train-summary 1",
        plant: plant.name(),
        seed: ctx.seed,
        model_kind: kind,
        method: fit.method.clone(),
        n_obs: model.n_obs(),
        n_inputs,
        dt,
        samples: data.len(),
        rank: fit.rank,
        rows: fit.rows,
        full_row_rank: fit.full_row_rank,
        residual: fit.residual,
        dataset_fingerprint: data.fingerprint(),
        model_file: "model.txt".into(),
    };
    write_json(&ctx.out_file("train_summary.json"), &summary)?;
    println!(
        "{kind} model with {} observables fitted on {} samples (rank {}/{}, residual {:.3e}) -> {}",
        model.n_obs(),
        data.len(),
        fit.rank,
        fit.rows,
        fit.residual,
        path.display()
    );
    Ok(())
}

pub fn predict(ctx: &Context) -> Result<()> {
    let cfg = ctx
        .config
        .config
        .predict
        .as_ref()
        .ok_or_else(|| KoopError::invalid("config has no [predict] section"))?;
    let plant = ctx.plant()?;
    let model = model_for(ctx, &plant, cfg.model.as_deref())?;
    let dict = model_dictionary(&model, &plant)?;
    if dict.is_delayed() {
        return Err(KoopError::Unsupported(
            "prediction from a single state needs a dictionary without delays".into(),
        ));
    }
    let dt = match (&model, cfg.dt) {
        (BilinearModel::Operator(o), Some(dt)) if (dt - o.dt).abs() > 1e-12 * o.dt => {
            return Err(KoopError::invalid(format!("predict.dt {dt} differs from the model's {}", o.dt)))
        }
        (BilinearModel::Operator(o), _) => o.dt,
        (BilinearModel::Generator(_), Some(dt)) => dt,
        (BilinearModel::Generator(_), None) => {
            return Err(KoopError::invalid("predict.dt is required for generator models"))
        }
    };
    let nc = plant.input_dim();
    let inputs = (0..cfg.steps)
        .map(|k| cfg.input.eval(k as f64 * dt, k, nc))
        .collect::<Result<Vec<_>>>()?;
    let signal = PiecewiseConstantSignal::new(dt, inputs, model.input_box().clone())?;
    let x0 = cfg.x0.clone().unwrap_or_else(|| plant.default_initial_state());
    if x0.len() != plant.state_dim() {
        return Err(KoopError::invalid(format!(
            "x0 has length {}, plant state has {}",
            x0.len(),
            plant.state_dim()
        )));
    }
    let z = lift_and_predict(&model, &dict, &x0, &signal, cfg.scheme)?;
    let truth = if cfg.truth {
        Some(plant.simulate(&x0, &signal.values, dt)?)
    } else {
        None
    };
    let readout = dict.readout();
    let with_err = truth.is_some() && readout.is_some();

    let mut csv = TrajectoryCsv::new(model.n_obs(), truth.as_ref().map(|_| plant.state_dim()), Some(nc), with_err);
    for (k, zk) in z.iter().enumerate() {
        let u = &signal.values[k.min(signal.len() - 1)];
        let x = truth.as_ref().map(|t| t[k].as_slice());
        let err = match (x, &readout) {
            (Some(x), Some(idx)) => {
                let obs = dict.observe(x)?;
                Some(idx.iter().zip(&obs).map(|(&i, o)| (zk[i] - o).abs()).fold(0.0, f64::max))
            }
            _ => None,
        };
        csv.row(k as f64 * dt, zk, x, Some(u), err);
    }
    ctx.prepare_out()?;
    let path = ctx.out_file("prediction.csv");
    fs::write(&path, &csv.text)?;
    if ctx.plot_script {
        let n_cols = csv.text.lines().next().map_or(1, |h| h.split(',').count());
        fs::write(ctx.out_file("prediction.gp"), plot_script("prediction.csv", n_cols, "prediction"))?;
    }
    println!("{} steps of Δt = {dt} -> {}", cfg.steps, path.display());
    Ok(())
}

#[derive(Serialize)]
struct PerStep {
    objective: Vec<f64>,
    initial_objective: Vec<f64>,
    iterations: Vec<usize>,
    converged: Vec<bool>,
    solve_ms: Vec<f64>,
}

#[derive(Serialize)]
struct MpcSummary {
    format: &'static str,
    plant: &'static str,
    seed: u64,
    model_kind: &'static str,
    n_obs: usize,
    dt: f64,
    horizon: usize,
    steps: usize,
    solver: crate::ocp::Solver,
    tracked: Vec<usize>,
    /// `∫ ‖z − z_ref‖² dt` over the tracked observables.
    tracking_error: f64,
    rms_error: f64,
    max_abs_error: f64,
    total_solve_ms: f64,
    mean_solve_ms: f64,
    max_solve_ms: f64,
    total_iterations: usize,
    max_iterations: usize,
    unconverged_steps: Vec<usize>,
    aborted: Option<String>,
    per_step: PerStep,
}

fn mpc_summary(ctx: &Context, plant: &Plant, model: &BilinearModel, cfg_dt: f64, horizon: usize, solver: crate::ocp::Solver, rec: &ClosedLoopRecord) -> MpcSummary {
    let mut sq = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut count = 0usize;
    for k in 1..rec.lifted.len() {
        for &i in &rec.tracked {
            let e = rec.lifted[k][i] - rec.references[k][i];
            sq += e * e;
            max_abs = max_abs.max(e.abs());
            count += 1;
        }
    }
    let steps = rec.inputs.len();
    MpcSummary {
        format: "koopgen-mpc-summary 1",
        plant: plant.name(),
        seed: ctx.seed,
        model_kind: match model {
            BilinearModel::Generator(_) => "generator",
            BilinearModel::Operator(_) => "operator",
        },
        n_obs: model.n_obs(),
        dt: cfg_dt,
        horizon,
        steps,
        solver,
        tracked: rec.tracked.clone(),
        tracking_error: rec.tracking_error(),
        rms_error: if count > 0 { (sq / count as f64).sqrt() } else { 0.0 },
        max_abs_error: max_abs,
        total_solve_ms: rec.total_solve_ms(),
        mean_solve_ms: if steps > 0 { rec.total_solve_ms() / steps as f64 } else { 0.0 },
        max_solve_ms: rec.solve_ms.iter().copied().fold(0.0, f64::max),
        total_iterations: rec.iterations.iter().sum(),
        max_iterations: rec.iterations.iter().copied().max().unwrap_or(0),
        unconverged_steps: (0..steps).filter(|&k| !rec.converged[k]).collect(),
        aborted: rec.aborted.clone(),
        per_step: PerStep {
            objective: rec.objectives.clone(),
            initial_objective: rec.initial_objectives.clone(),
            iterations: rec.iterations.clone(),
            converged: rec.converged.clone(),
            solve_ms: rec.solve_ms.clone(),
        },
    }
}

pub fn mpc(ctx: &Context) -> Result<()> {
    let cfg = ctx
        .config
        .config
        .mpc
        .as_ref()
        .ok_or_else(|| KoopError::invalid("config has no [mpc] section"))?;
    let plant = ctx.plant()?;
    let model = model_for(ctx, &plant, cfg.model.as_deref())?;
    let dict = model_dictionary(&model, &plant)?;
    let n_o = dict.n_obs();
    if let Some(&i) = cfg.tracked.iter().find(|&&i| i >= n_o) {
        return Err(KoopError::invalid(format!("tracked index {i} exceeds the {n_o} observables")));
    }
    let weights = cfg.weights.clone().unwrap_or_else(|| vec![1.0; cfg.tracked.len()]);
    let pairs: Vec<(usize, f64)> = cfg.tracked.iter().copied().zip(weights).collect();
    let n_t = cfg.tracked.len();
    if let Waveform::Samples { values } = &cfg.reference {
        if values.iter().any(|v| v.len() != n_t) {
            return Err(KoopError::invalid(format!("reference samples need {n_t} entries each")));
        }
    }
    let nc = plant.input_dim();
    let settings = MpcSettings {
        dt: cfg.dt,
        horizon: cfg.horizon,
        t_final: cfg.t_final,
        q: tracking_weights(n_o, &pairs),
        r: Matrix::identity(nc, nc) * cfg.r,
        basis: cfg.basis,
        solver: cfg.solver,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        warm_start: cfg.warm_start,
        preview: cfg.preview,
    };
    let reference = |t: f64| {
        let k = (t / cfg.dt).round() as usize;
        let v = cfg.reference.eval(t, k, n_t).expect("reference checked above");
        let mut a = Vector::zeros(n_o);
        for (j, &i) in cfg.tracked.iter().enumerate() {
            a[i] = v[j];
        }
        a
    };
    let x0 = cfg.x0.clone().unwrap_or_else(|| plant.default_initial_state());
    if x0.len() != plant.state_dim() {
        return Err(KoopError::invalid("mpc.x0 does not match the plant state"));
    }
    let control = ControlModel::from_bilinear(model.clone());
    let rec = mpc_loop(&plant, &dict, &control, &settings, &reference, &x0)?;

    let mut csv = TrajectoryCsv::new(n_o, Some(plant.state_dim()), Some(nc), true);
    for k in 0..rec.times.len() {
        let u = rec.inputs.get(k).or(rec.inputs.last());
        let err = rec
            .tracked
            .iter()
            .map(|&i| (rec.lifted[k][i] - rec.references[k][i]).powi(2))
            .sum::<f64>()
            .sqrt();
        csv.row(rec.times[k], &rec.lifted[k], Some(&rec.states[k]), u.map(|v| v.as_slice()), Some(err));
    }
    ctx.prepare_out()?;
    fs::write(ctx.out_file("mpc.csv"), &csv.text)?;
    let summary = mpc_summary(ctx, &plant, &model, cfg.dt, cfg.horizon, cfg.solver, &rec);
    write_json(&ctx.out_file("mpc_summary.json"), &summary)?;
    if ctx.plot_script {
        fs::write(ctx.out_file("mpc.gp"), plot_script("mpc.csv", n_o + 1, "closed loop"))?;
    }
    println!(
        "{} steps, tracking error {:.4e}, rms {:.4e}, {} unconverged, {:.1} ms solving -> {}",
        summary.steps,
        summary.tracking_error,
        summary.rms_error,
        summary.unconverged_steps.len(),
        summary.total_solve_ms,
        ctx.out.display()
    );
    match rec.aborted {
        Some(reason) => Err(KoopError::Numerical(reason)),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub status: CheckStatus,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl CheckResult {
    fn measured(name: &'static str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name,
            status: if value <= tolerance { CheckStatus::Pass } else { CheckStatus::Fail },
            value: Some(value),
            tolerance: Some(tolerance),
            detail: detail.into(),
        }
    }

    fn flag(name: &'static str, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            value: None,
            tolerance: None,
            detail: detail.into(),
        }
    }

    fn skip(name: &'static str, detail: impl Into<String>) -> Self {
        Self {
            name,
            status: CheckStatus::Skip,
            value: None,
            tolerance: None,
            detail: detail.into(),
        }
    }

    fn error(name: &'static str, e: &KoopError) -> Self {
        Self::flag(name, false, format!("check could not run: {e}"))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub format: &'static str,
    pub model_file: String,
    pub model_kind: &'static str,
    pub n_obs: usize,
    pub dataset_fingerprint: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn stacked(model: &BilinearModel) -> Matrix {
    let (k0, b) = match model {
        BilinearModel::Generator(g) => (&g.k0, &g.b),
        BilinearModel::Operator(o) => (&o.k0, &o.b),
    };
    let n = k0.nrows();
    let mut m = Matrix::zeros(n, n * (1 + b.len()));
    m.columns_mut(0, n).copy_from(k0);
    for (i, bi) in b.iter().enumerate() {
        m.columns_mut(n * (i + 1), n).copy_from(bi);
    }
    m
}

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1.0)
}

fn check_refit(ctx: &Context, dict: &Dictionary, model: &BilinearModel, data: &TrajectoryDataset, tol: f64) -> Vec<CheckResult> {
    let refit = match fit_from_config(ctx, dict, data) {
        Ok(m) => m,
        Err(e) => return vec![CheckResult::error("refit", &e)],
    };
    let same_kind = std::mem::discriminant(model) == std::mem::discriminant(&refit);
    let dt_ok = match (model, &refit) {
        (BilinearModel::Operator(a), BilinearModel::Operator(b)) => a.dt == b.dt,
        _ => true,
    };
    let (a, b) = (stacked(model), stacked(&refit));
    let mut out = Vec::new();
    if !same_kind || !dt_ok || a.shape() != b.shape() {
        out.push(CheckResult::flag("refit", false, "refitted model has a different kind, shape or hold interval"));
    } else {
        out.push(CheckResult::measured(
            "refit",
            rel((&a - &b).norm(), b.norm()),
            tol,
            "relative Frobenius distance between stored and refitted matrices",
        ));
    }
    let stored = model.fit().map(|f| f.fingerprint.clone());
    let expected = refit.fit().map(|f| f.fingerprint.clone());
    out.push(CheckResult::flag(
        "dataset_fingerprint",
        stored.is_some() && stored == expected,
        format!("stored {:?}, dataset {:?}", stored.unwrap_or_default(), expected.unwrap_or_default()),
    ));
    out
}

fn check_discretization_identity(dict: &Dictionary, data: &TrajectoryDataset, rtol: f64, tol: f64) -> Vec<CheckResult> {
    let dt = match data.dt() {
        Ok(Some(dt)) if data.samples.iter().all(|s| s.successor.is_some()) => dt,
        _ => {
            return vec![
                CheckResult::skip("identity_k0", "dataset has no snapshot pairs with a common hold interval"),
                CheckResult::skip("identity_b", "dataset has no snapshot pairs with a common hold interval"),
            ]
        }
    };
    let pair = fit_generator(dict, data, &DerivativeMethod::Forward, rtol).and_then(|g| Ok((g, fit_operators(dict, data, rtol)?)));
    let (g, o) = match pair {
        Ok(p) => p,
        Err(e) => return vec![CheckResult::error("identity_k0", &e), CheckResult::error("identity_b", &e)],
    };
    let n = g.n_obs();
    let k0 = rel((&o.k0 - (Matrix::identity(n, n) + &g.k0 * dt)).norm(), o.k0.norm());
    let b = g
        .b
        .iter()
        .zip(&o.b)
        .map(|(gb, ob)| rel((ob - gb * dt).norm(), ob.norm()))
        .fold(0.0, f64::max);
    vec![
        CheckResult::measured("identity_k0", k0, tol, "‖K₀^Δt − (I + Δt K₀)‖_F / max(1, ‖K₀^Δt‖_F), forward differences"),
        CheckResult::measured("identity_b", b, tol, "max_i ‖B_i^Δt − Δt B_i‖_F / max(1, ‖B_i^Δt‖_F)"),
    ]
}

fn random_in_box(rng: &mut ChaCha8Rng, model: &BilinearModel) -> Vec<f64> {
    let ib = model.input_box();
    ib.lo.iter().zip(&ib.hi).map(|(l, h)| l + (h - l) * rng.random::<f64>()).collect()
}

fn check_affinity(model: &BilinearModel, seed: u64, tol: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let at = |u: &[f64]| match model {
        BilinearModel::Generator(g) => g.at(u),
        BilinearModel::Operator(o) => o.at(u),
    };
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let z = Vector::from_fn(model.n_obs(), |_, _| rng.random_range(-1.0..1.0));
        let (u1, u2) = (random_in_box(&mut rng, model), random_in_box(&mut rng, model));
        let a: f64 = rng.random();
        let mix: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| a * x + (1.0 - a) * y).collect();
        let res = (|| -> Result<f64> {
            let lhs = at(&mix)? * &z;
            let rhs = at(&u1)? * &z * a + at(&u2)? * &z * (1.0 - a);
            Ok(rel((&lhs - &rhs).norm(), lhs.norm()))
        })();
        match res {
            Ok(v) => worst = worst.max(v),
            Err(e) => return CheckResult::error("affinity", &e),
        }
    }
    CheckResult::measured("affinity", worst, tol, "one-step map at a convex input mix vs the mix of the maps, 20 draws")
}

fn check_linear_exactness(plant: &Plant, dict: &Dictionary, model: &BilinearModel, dt: f64, seed: u64, tol: f64) -> CheckResult {
    if !matches!(plant.kind, PlantKind::Linear { .. }) {
        return CheckResult::skip("linear_exactness", "plant is not linear");
    }
    let Some(idx) = dict.readout() else {
        return CheckResult::skip("linear_exactness", "dictionary does not carry the state linearly");
    };
    let dt = match model {
        BilinearModel::Operator(o) => o.dt,
        BilinearModel::Generator(_) => dt,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x0: Vec<f64> = (0..plant.state_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let inputs: Vec<Vec<f64>> = (0..20).map(|_| random_in_box(&mut rng, model)).collect();
        let res = (|| -> Result<f64> {
            let signal = PiecewiseConstantSignal::new(dt, inputs.clone(), model.input_box().clone())?;
            let z = lift_and_predict(model, dict, &x0, &signal, Scheme::Exact)?;
            let x = plant.simulate(&x0, &inputs, dt)?;
            let mut w: f64 = 0.0;
            for (zk, xk) in z.iter().zip(&x) {
                let obs = dict.observe(xk)?;
                let d = idx.iter().zip(&obs).map(|(&i, o)| (zk[i] - o).powi(2)).sum::<f64>().sqrt();
                let scale = obs.iter().map(|v| v * v).sum::<f64>().sqrt();
                w = w.max(rel(d, scale));
            }
            Ok(w)
        })();
        match res {
            Ok(v) => worst = worst.max(v),
            Err(e) => return CheckResult::error("linear_exactness", &e),
        }
    }
    CheckResult::measured("linear_exactness", worst, tol, "per-step relative state error against the exact flow, 10 signals of 20 steps")
}

fn check_gradient(model: &BilinearModel, dt: f64, seed: u64, tol: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = (|| -> Result<f64> {
        let nc = model.input_box().dim();
        let op = ControlModel::from_bilinear(model.clone()).resolve(
            match model {
                BilinearModel::Operator(o) => o.dt,
                BilinearModel::Generator(_) => dt,
            },
            &vec![0.0; nc],
        )?;
        let n = op.n_obs();
        let horizon = 5;
        let q = Matrix::from_diagonal(&Vector::from_fn(n, |_, _| rng.random::<f64>()));
        let r = Matrix::identity(nc, nc) * 0.1;
        let a = (0..horizon).map(|_| Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).collect();
        let ib = op.input_box.clone();
        let spec = OcpSpec::new(op, QuadraticStageCost::constant(q, r, a), ib, InputBasis::Indicator)?;
        // stay inside the box so central differences do not straddle a bound
        let u: Vec<Vec<f64>> = (0..horizon)
            .map(|_| {
                spec.input_box
                    .lo
                    .iter()
                    .zip(&spec.input_box.hi)
                    .map(|(l, h)| l + (h - l) * (0.25 + 0.5 * rng.random::<f64>()))
                    .collect()
            })
            .collect();
        let c = spec.coefficients_from_inputs(&u)?;
        let z0 = Vector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        let (_, g) = value_and_gradient(&spec, &z0, &c)?;
        let mut fd = vec![0.0; c.len()];
        for i in 0..c.len() {
            let h = 1e-6 * c[i].abs().max(1e-2);
            let (mut cp, mut cm) = (c.clone(), c.clone());
            cp[i] += h;
            cm[i] -= h;
            fd[i] = (value_and_gradient(&spec, &z0, &cp)?.0 - value_and_gradient(&spec, &z0, &cm)?.0) / (2.0 * h);
        }
        let err = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
        Ok(err / scale.max(1e-8))
    })();
    match res {
        Ok(v) => CheckResult::measured("gradient", v, tol, "adjoint gradient vs central differences, relative ∞-norm, horizon 5"),
        Err(e) => CheckResult::error("gradient", &e),
    }
}

pub fn validate(ctx: &Context) -> Result<ValidationReport> {
    let vcfg = ctx.config.config.validate.clone().unwrap_or_default();
    let path = match &vcfg.model {
        Some(p) => ctx.config.resolve(p),
        None => ctx.out_file("model.txt"),
    };
    let loaded = model_file::read(&path)?;
    let plant = ctx.plant()?;
    let model = &loaded.model;
    let dict = model_dictionary(model, &plant)?;
    let data = ctx.config.load_dataset(&plant, ctx.seed)?;
    let rtol = ctx.config.config.fit.as_ref().map_or(crate::numerics::DEFAULT_RTOL, |f| f.rtol);

    let mut checks = vec![CheckResult::flag(
        "checksum",
        loaded.checksum_ok,
        "stored sha256 against the file content",
    )];
    checks.extend(check_refit(ctx, &dict, model, &data, vcfg.refit_tol));
    checks.extend(check_discretization_identity(&dict, &data, rtol, vcfg.identity_tol));
    checks.push(check_affinity(model, ctx.seed, vcfg.affinity_tol));
    checks.push(check_linear_exactness(&plant, &dict, model, vcfg.dt, ctx.seed, vcfg.linear_tol));
    checks.push(check_gradient(model, vcfg.dt, ctx.seed, vcfg.gradient_tol));

    let report = ValidationReport {
        format: "koopgen-validation 1",
        model_file: path.display().to_string(),
        model_kind: match model {
            BilinearModel::Generator(_) => "generator",
            BilinearModel::Operator(_) => "operator",
        },
        n_obs: model.n_obs(),
        dataset_fingerprint: data.fingerprint(),
        passed: checks.iter().all(|c| c.status != CheckStatus::Fail),
        checks,
    };
    ctx.prepare_out()?;
    write_json(&ctx.out_file("validation.json"), &report)?;
    for c in &report.checks {
        let status = match c.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skip => "skip",
        };
        match (c.value, c.tolerance) {
            (Some(v), Some(t)) => println!("{status:4}  {:<20} {v:.3e} (tol {t:.0e})", c.name),
            _ => println!("{status:4}  {:<20} {}", c.name, c.detail),
        }
    }
    Ok(report)
}
