//! TOML run configuration.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dictionary::{Basis, DictionarySpec};
use crate::edmd::{DerivativeMethod, TrajectoryDataset};
use crate::error::{KoopError, Result};
use crate::numerics::Scheme;
use crate::ocp::{InputBasis, Solver};
use crate::plants::{Plant, PlantKind, PlantSpec, SamplingSpec};

pub const OUTPUT_ENV: &str = "KOOPGEN_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "koopgen-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub plant: PlantSpec,
    pub dictionary: DictionaryConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub fit: Option<FitConfig>,
    #[serde(default)]
    pub predict: Option<PredictConfig>,
    #[serde(default)]
    pub mpc: Option<MpcConfig>,
    #[serde(default)]
    pub validate: Option<ValidateConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    pub basis: Basis,
    /// Observed state indices.
    #[serde(default)]
    pub observe: Option<Vec<usize>>,
    /// Observed spatial positions (Burgers only), mapped to the nearest grid point.
    #[serde(default)]
    pub observe_points: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub delay: usize,
}

fn one() -> usize {
    1
}

impl DictionaryConfig {
    pub fn to_spec(&self, plant: &Plant) -> Result<DictionarySpec> {
        let mut spec = DictionarySpec::new(plant.state_dim(), self.basis.clone()).with_delay(self.delay);
        match (&self.observe, &self.observe_points) {
            (Some(_), Some(_)) => {
                return Err(KoopError::invalid("set either dictionary.observe or dictionary.observe_points"))
            }
            (Some(idx), None) => spec = spec.with_observed(idx.clone()),
            (None, Some(points)) => {
                let PlantKind::Burgers { params, .. } = &plant.kind else {
                    return Err(KoopError::invalid("observe_points needs a burgers plant"));
                };
                spec = spec.with_observed(points.iter().map(|&xi| params.index_of(xi)).collect());
            }
            (None, None) => {}
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub sampling: Option<SamplingSpec>,
    /// JSON dataset file, instead of sampling.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Write the generated dataset to `dataset.json` in the output directory.
    #[serde(default)]
    pub save: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    #[default]
    Generator,
    Operators,
    /// One model per input level, interpolated affinely. Generators when a
    /// derivative estimator is configured, operators otherwise.
    Switched,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub method: FitMethod,
    #[serde(default)]
    pub derivative: Option<DerivativeMethod>,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: FitMethod::default(),
            derivative: None,
            rtol: default_rtol(),
        }
    }
}

fn default_rtol() -> f64 {
    crate::numerics::DEFAULT_RTOL
}

/// Scalar or vector time signal, evaluated at `t_k = kΔt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Waveform {
    Constant {
        value: f64,
    },
    /// `value[i]` from `times[i]` on; `times` ascending, first entry ≤ 0.
    Piecewise {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    /// `offset + amplitude·sin(2π·frequency·t + phase)`
    Sine {
        #[serde(default = "unit")]
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Explicit per-step vectors; the last one is held.
    Samples {
        values: Vec<Vec<f64>>,
    },
}

fn unit() -> f64 {
    1.0
}

impl Waveform {
    pub fn validate(&self) -> Result<()> {
        match self {
            Waveform::Piecewise { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(KoopError::invalid("piecewise waveform needs one value per switching time"));
                }
                if times.windows(2).any(|w| !(w[0] < w[1])) || times[0] > 0.0 {
                    return Err(KoopError::invalid("piecewise times must be ascending and start at or before 0"));
                }
            }
            Waveform::Samples { values } if values.is_empty() => {
                return Err(KoopError::invalid("sampled waveform has no values"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn eval(&self, t: f64, k: usize, dim: usize) -> Result<Vec<f64>> {
        let scalar = match self {
            Waveform::Constant { value } => *value,
            Waveform::Piecewise { times, values } => {
                let i = times.iter().rposition(|&s| s <= t + 1e-12).unwrap_or(0);
                values[i]
            }
            Waveform::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => offset + amplitude * (2.0 * PI * frequency * t + phase).sin(),
            Waveform::Samples { values } => {
                let v = &values[k.min(values.len() - 1)];
                if v.len() != dim {
                    return Err(KoopError::invalid(format!(
                        "sampled waveform entry has length {}, expected {dim}",
                        v.len()
                    )));
                }
                return Ok(v.clone());
            }
        };
        Ok(vec![scalar; dim])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Model file; fitted in-process from the config when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub steps: usize,
    /// Required for generator models; must match an operator model's Δt.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    pub input: Waveform,
    /// Simulate the plant alongside and write `x` and `err` columns.
    #[serde(default = "yes")]
    pub truth: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    #[serde(default)]
    pub model: Option<PathBuf>,
    pub dt: f64,
    pub horizon: usize,
    pub t_final: f64,
    /// Observable indices tracked against the reference.
    pub tracked: Vec<usize>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Input weight `R = r·I`.
    #[serde(default = "default_r")]
    pub r: f64,
    /// Reference for every tracked observable.
    pub reference: Waveform,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub basis: InputBasis,
    #[serde(default = "yes")]
    pub warm_start: bool,
    #[serde(default = "yes")]
    pub preview: bool,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

fn default_r() -> f64 {
    1e-4
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    /// Defaults to `model.txt` in the output directory.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_identity_tol")]
    pub identity_tol: f64,
    #[serde(default = "default_identity_tol")]
    pub refit_tol: f64,
    #[serde(default = "default_affinity_tol")]
    pub affinity_tol: f64,
    #[serde(default = "default_linear_tol")]
    pub linear_tol: f64,
    #[serde(default = "default_gradient_tol")]
    pub gradient_tol: f64,
    /// Hold interval for generator models in the linear and gradient checks.
    #[serde(default = "default_check_dt")]
    pub dt: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            model: None,
            identity_tol: default_identity_tol(),
            refit_tol: default_identity_tol(),
            affinity_tol: default_affinity_tol(),
            linear_tol: default_linear_tol(),
            gradient_tol: default_gradient_tol(),
            dt: default_check_dt(),
        }
    }
}

fn default_identity_tol() -> f64 {
    1e-9
}
fn default_affinity_tol() -> f64 {
    1e-12
}
fn default_linear_tol() -> f64 {
    1e-8
}
fn default_gradient_tol() -> f64 {
    1e-5
}
fn default_check_dt() -> f64 {
    0.1
}

/// A parsed config together with the directory relative paths resolve against.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KoopError::invalid(format!("cannot read config {}: {e}", path.display())))?;
        let config = parse(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// `--out` beats the environment, which beats the config file.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        match &self.config.output_dir {
            Some(p) => self.resolve(p),
            None => PathBuf::from(DEFAULT_OUTPUT),
        }
    }

    pub fn seed(&self, cli: Option<u64>) -> u64 {
        cli.or(self.config.seed).unwrap_or(0)
    }

    pub fn load_dataset(&self, plant: &Plant, seed: u64) -> Result<TrajectoryDataset> {
        let data = self
            .config
            .data
            .as_ref()
            .ok_or_else(|| KoopError::invalid("config has no [data] section"))?;
        match (&data.sampling, &data.path) {
            (Some(s), None) => crate::plants::sample_training_set(plant, s, seed),
            (None, Some(p)) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| KoopError::invalid(format!("cannot read dataset {}: {e}", path.display())))?;
                let ds: TrajectoryDataset =
                    serde_json::from_str(&text).map_err(|e| KoopError::Parse(format!("{}: {e}", path.display())))?;
                ds.validate()?;
                Ok(ds)
            }
            _ => Err(KoopError::invalid("[data] needs exactly one of `sampling` or `path`")),
        }
    }
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| KoopError::Parse(e.to_string()))?;
    config.check()?;
    Ok(config)
}

impl RunConfig {
    /// Checks that need more than the schema.
    pub fn check(&self) -> Result<()> {
        let plant = Plant::from_spec(&self.plant)?;
        let dict = self.dictionary.to_spec(&plant)?;
        crate::dictionary::Dictionary::new(dict)?;
        if let Some(f) = &self.fit {
            if !(f.rtol > 0.0 && f.rtol < 1.0) {
                return Err(KoopError::invalid("fit.rtol must lie in (0, 1)"));
            }
        }
        if let Some(p) = &self.predict {
            p.input.validate()?;
            if p.steps == 0 {
                return Err(KoopError::invalid("predict.steps must be positive"));
            }
            if let Some(dt) = p.dt {
                if !(dt > 0.0) {
                    return Err(KoopError::invalid("predict.dt must be positive"));
                }
            }
        }
        if let Some(m) = &self.mpc {
            m.reference.validate()?;
            if m.horizon == 0 {
                return Err(KoopError::invalid("mpc.horizon must be at least 1"));
            }
            if !(m.dt > 0.0) || !(m.t_final >= 0.0) {
                return Err(KoopError::invalid("mpc.dt must be positive and mpc.t_final non-negative"));
            }
            if m.tracked.is_empty() {
                return Err(KoopError::invalid("mpc.tracked lists no observables"));
            }
            if let Some(w) = &m.weights {
                if w.len() != m.tracked.len() || w.iter().any(|v| !(*v >= 0.0)) {
                    return Err(KoopError::invalid("mpc.weights needs one non-negative weight per tracked index"));
                }
            }
            if !(m.r > 0.0) {
                return Err(KoopError::invalid("mpc.r must be positive"));
            }
            if !(m.tol > 0.0) || m.max_iter == 0 {
                return Err(KoopError::invalid("mpc.tol and mpc.max_iter must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUFFING: &str = r#"
seed = 3
[plant]
kind = "duffing"
[dictionary]
basis = { kind = "monomials", degree = 3 }
[data.sampling]
kind = "scattered"
count = 10
lo = [-1.0, -1.0]
hi = [1.0, 1.0]
inputs = [[-1.0], [1.0]]
[mpc]
dt = 0.1
horizon = 5
t_final = 1.0
tracked = [1]
reference = { kind = "piecewise", times = [0.0, 0.5], values = [1.0, -1.0] }
"#;

    #[test]
    fn parses_and_applies_defaults() {
        let c = parse(DUFFING).unwrap();
        assert_eq!(c.seed, Some(3));
        let m = c.mpc.unwrap();
        assert_eq!(m.solver, Solver::Bfgs);
        assert!(m.warm_start && m.preview);
        assert_eq!(m.r, 1e-4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = DUFFING.replace("horizon = 5", "horizon = 5\nhorizn = 4");
        assert!(matches!(parse(&bad), Err(KoopError::Parse(_))));
        let bad = DUFFING.replace("kind = \"duffing\"", "kind = \"duffing\"\nmass = 2.0");
        assert!(parse(&bad).is_err());
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let bad = DUFFING.replace("horizon = 5", "horizon = 0");
        assert!(matches!(parse(&bad), Err(KoopError::InvalidInput(_))));
    }

    #[test]
    fn waveforms() {
        let w = Waveform::Piecewise {
            times: vec![0.0, 1.0],
            values: vec![2.0, 3.0],
        };
        assert_eq!(w.eval(0.99, 0, 2).unwrap(), vec![2.0, 2.0]);
        assert_eq!(w.eval(1.0, 0, 1).unwrap(), vec![3.0]);
        let s = Waveform::Sine {
            amplitude: 1.0,
            frequency: 0.5,
            phase: 0.0,
            offset: 0.0,
        };
        assert!((s.eval(0.5, 0, 1).unwrap()[0] - 1.0).abs() < 1e-15);
        let v = Waveform::Samples {
            values: vec![vec![1.0], vec![2.0]],
        };
        assert_eq!(v.eval(0.0, 7, 1).unwrap(), vec![2.0]);
        assert!(v.eval(0.0, 0, 2).is_err());
    }

    #[test]
    fn observe_points_map_to_grid() {
        let c = parse(
            r#"
[plant]
kind = "burgers"
[dictionary]
basis = { kind = "monomials", degree = 2 }
observe_points = [0.0, 0.5, 1.0, 1.5]
"#,
        )
        .unwrap();
        let plant = Plant::from_spec(&c.plant).unwrap();
        let spec = c.dictionary.to_spec(&plant).unwrap();
        assert_eq!(spec.observe, Some(vec![0, 32, 64, 96]));
    }
}
