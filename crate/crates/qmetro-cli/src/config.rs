//! Scenario configuration: a versioned TOML (or JSON) document with sections
//! `model`, `dynamics`, `objective`, `algorithm`, `task` and `output`.
//!
//! Complex entries are written as `[re, im]`; plain numbers are real.
//! Unknown keys are rejected everywhere.

use crate::error::{at, CliError, CliResult};
use qmetro::adaptive::ShiftedLikelihood;
use qmetro::asymptotic::LdType;
use qmetro::bayes::{Estimator, PriorGrid};
use qmetro::dynamics::{exact_endpoint, linspace, KrausChannel, Lindblad};
use qmetro::engines::{DeParams, Objective, ObjectiveKind};
use qmetro::linalg::{c, eigh_real, is_hermitian, ket, pauli, projector};
use qmetro::models::{self, ModelGrid, NvConstants, Template};
use qmetro::scenarios::{Algorithm, CompKind, Search};
use qmetro::state::validate_density;
use qmetro::{CMat, CVec, Povm, RMat};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// Default seed when neither the config nor the command line gives one.
pub const DEFAULT_SEED: u64 = 1234;

/// Real number or `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    fn value(self) -> qmetro::C64 {
        match self {
            Entry::Real(r) => c(r, 0.0),
            Entry::Complex([r, i]) => c(r, i),
        }
    }
}

pub type Matrix = Vec<Vec<Entry>>;

/// Named object or explicit matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Named(String),
    Matrix(Matrix),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorListSpec {
    Named(String),
    List(Vec<Matrix>),
}

/// Explicit points or `{ start, stop, num }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Points {
    List(Vec<f64>),
    Range(Range),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub num: usize,
}

impl Points {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Points::List(v) => v.clone(),
            Points::Range(r) => linspace(r.start, r.stop, r.num),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySpec {
    pub op: OperatorSpec,
    pub rate: f64,
}

/// `H` and `∂H` at every grid point, flattened with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tabulated {
    pub h: Vec<Matrix>,
    pub dh: Vec<Vec<Matrix>>,
}

/// Exactly one of `preset`, `template` or `h0` selects the model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `qubit_frequency`, `two_qubit_xx` or `nv_center`, with their decay channels.
    pub preset: Option<String>,
    /// Parametric family evaluated at `x` (point tasks) or over a grid.
    pub template: Option<String>,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    /// Parameter values at which `template` is evaluated.
    pub x: Option<Vec<f64>>,
    pub h0: Option<Matrix>,
    pub dh: Option<Vec<Matrix>>,
    pub tabulated: Option<Tabulated>,
    #[serde(default)]
    pub decay: Vec<DecaySpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KrausSpec {
    /// `K = exp(−iHt)` from the model Hamiltonian.
    #[default]
    Unitary,
    Explicit {
        k: Vec<Matrix>,
        dk: Vec<Vec<Matrix>>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub tspan: Option<Points>,
    /// Evolution time for grid tasks and unitary Kraus channels.
    pub t: Option<f64>,
    pub rho0: Option<OperatorSpec>,
    /// Pure probe or initial guess for state searches.
    pub psi0: Option<Vec<Entry>>,
    pub controls: Option<OperatorListSpec>,
    pub nc: Option<usize>,
    pub bound: Option<[f64; 2]>,
    /// Initial control amplitudes, one row per control Hamiltonian.
    pub ctrl0: Option<Vec<Vec<f64>>>,
    pub kraus: Option<KrausSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    #[default]
    Qfim,
    Cfim,
    Hcrb,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LdName {
    #[default]
    Sld,
    Rld,
    Lld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    #[serde(default)]
    pub kind: ObjectiveName,
    #[serde(default)]
    pub ld: LdName,
    #[serde(rename = "W")]
    pub w: Option<Vec<Vec<f64>>>,
    /// `pm`, `sic`, `computational`, `xx` or a list of operators.
    #[serde(rename = "M")]
    pub m: Option<OperatorListSpec>,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    qmetro::asymptotic::EPS
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { kind: ObjectiveName::Qfim, ld: LdName::Sld, w: None, m: None, eps: default_eps() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    #[default]
    Uniform,
    Gaussian {
        mu: f64,
        eta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub axes: Vec<Points>,
    #[serde(default)]
    pub prior: PriorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesTask {
    pub grid: GridConfig,
    /// True value for simulated outcomes; use with `rounds`.
    pub x_true: Option<Vec<f64>>,
    pub rounds: Option<usize>,
    /// Recorded outcomes, used instead of simulation.
    pub y: Option<Vec<usize>>,
    #[serde(default)]
    pub estimator: Estimator,
    /// Also run maximum likelihood on the same outcomes.
    #[serde(default)]
    pub mle: bool,
    /// Evaluate the Bayesian bounds on the prior.
    #[serde(default)]
    pub bounds: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementName {
    #[default]
    Projection,
    Lc,
    Rotation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchName {
    #[default]
    Binary,
    Forward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptTask {
    pub grid: GridConfig,
    #[serde(default = "default_pre_rounds")]
    pub pre_rounds: usize,
    /// Fixes the working point instead of searching the grid.
    pub x_opt: Option<Vec<f64>>,
    /// Optimize the measurement at the working point instead of using `objective.M`.
    #[serde(default)]
    pub free_measurement: bool,
    #[serde(default)]
    pub estimator: Estimator,
    pub x_true: Option<Vec<f64>>,
    pub rounds: Option<usize>,
    pub y: Option<Vec<usize>>,
}

fn default_pre_rounds() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Bounds {
        /// One row per `tspan` point instead of the final time only.
        #[serde(default)]
        all_times: bool,
        /// QFI (or scalarized QFIM) value whose first crossing time is reported.
        target: Option<f64>,
        #[serde(default)]
        hcrb: bool,
    },
    Bayes(BayesTask),
    Copt {},
    Sopt {},
    Mopt {
        #[serde(default)]
        measurement: MeasurementName,
        /// Outputs of a linear combination; defaults to the input size.
        m: Option<usize>,
    },
    Compopt {
        scheme: CompKind,
    },
    Mintime {
        f_target: f64,
        #[serde(default)]
        search: SearchName,
    },
    Adapt(AdaptTask),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    #[serde(default)]
    pub save_all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    /// Overrides the algorithm seed and seeds outcome simulation.
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    pub algorithm: Option<Algorithm>,
    pub task: TaskConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

pub fn parse_toml(text: &str) -> CliResult<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_json(text: &str) -> CliResult<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::invalid(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a config; `.json` files are parsed as JSON, anything else as TOML.
pub fn load_config(path: &Path) -> CliResult<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") { parse_json(&text) } else { parse_toml(&text) };
    parsed.map_err(|e| match e {
        CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn matrix(m: &Matrix, path: &str) -> CliResult<CMat> {
    let d = m.len();
    if d == 0 || m.iter().any(|row| row.len() != d) {
        return Err(CliError::invalid(path, "matrix must be square and non-empty"));
    }
    Ok(CMat::from_fn(d, d, |i, j| m[i][j].value()))
}

fn hermitian(m: &Matrix, path: &str) -> CliResult<CMat> {
    let a = matrix(m, path)?;
    if !is_hermitian(&a, 1e-10) {
        return Err(CliError::invalid(path, "matrix must be Hermitian"));
    }
    Ok(a)
}

fn sized(a: CMat, d: usize, path: &str) -> CliResult<CMat> {
    if a.nrows() != d {
        return Err(CliError::invalid(path, format!("expected a {d}x{d} matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    Ok(a)
}

fn named_operator(name: &str, path: &str) -> CliResult<CMat> {
    let [s1, s2, s3] = pauli();
    let (sp, sm) = models::sigma_pm();
    Ok(match name {
        "sigma_1" => s1,
        "sigma_2" => s2,
        "sigma_3" => s3,
        "sigma_plus" => sp,
        "sigma_minus" => sm,
        _ => return Err(CliError::invalid(path, format!("unknown operator `{name}`"))),
    })
}

fn operator(spec: &OperatorSpec, path: &str) -> CliResult<CMat> {
    match spec {
        OperatorSpec::Named(n) => named_operator(n, path),
        OperatorSpec::Matrix(m) => matrix(m, path),
    }
}

fn tspan_values(p: &Points, path: &str) -> CliResult<Vec<f64>> {
    let v = p.values();
    if v.len() < 2 {
        return Err(CliError::invalid(path, "at least two time points are required"));
    }
    if v.iter().any(|t| !t.is_finite()) || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::invalid(path, "time points must be finite and strictly increasing"));
    }
    Ok(v)
}

fn check_keys(constants: &BTreeMap<String, f64>, known: &[&str]) -> CliResult<()> {
    match constants.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(CliError::invalid(format!("model.constants.{k}"), "unknown constant for this model")),
        None => Ok(()),
    }
}

fn set_seed(algo: &mut Algorithm, seed: u64) {
    match algo {
        Algorithm::Gradient(p) => p.seed = seed,
        Algorithm::Pso(p) => p.seed = seed,
        Algorithm::De(p) => p.seed = seed,
        Algorithm::Nm(p) => p.seed = seed,
        Algorithm::Ri(p) => p.seed = seed,
    }
}

/// Outcome source of a simulation-capable task.
pub enum Outcomes<'a> {
    Simulated { x_true: &'a [f64], rounds: usize },
    Recorded(&'a [usize]),
}

fn outcome_source<'a>(
    x_true: &'a Option<Vec<f64>>,
    rounds: Option<usize>,
    y: &'a Option<Vec<usize>>,
    n: usize,
) -> CliResult<Outcomes<'a>> {
    match (x_true, rounds, y) {
        (Some(x), Some(r), None) => {
            if x.len() != n {
                return Err(CliError::invalid("task.x_true", format!("expected {n} values")));
            }
            Ok(Outcomes::Simulated { x_true: x, rounds: r })
        }
        (None, None, Some(y)) => Ok(Outcomes::Recorded(y)),
        _ => Err(CliError::invalid("task", "give either `x_true` with `rounds`, or `y`")),
    }
}

impl ScenarioConfig {
    pub fn task_name(&self) -> &'static str {
        match self.task {
            TaskConfig::Bounds { .. } => "bounds",
            TaskConfig::Bayes(_) => "bayes",
            TaskConfig::Copt {} => "copt",
            TaskConfig::Sopt {} => "sopt",
            TaskConfig::Mopt { .. } => "mopt",
            TaskConfig::Compopt { .. } => "compopt",
            TaskConfig::Mintime { .. } => "mintime",
            TaskConfig::Adapt(_) => "adapt",
        }
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.or_else(|| self.algorithm.as_ref().map(Algorithm::seed)).unwrap_or(DEFAULT_SEED)
    }

    /// Command-line overrides; `save_all` can only be switched on.
    pub fn apply_overrides(&mut self, seed: Option<u64>, directory: Option<PathBuf>, save_all: bool) {
        if seed.is_some() {
            self.seed = seed;
        }
        if directory.is_some() {
            self.output.directory = directory;
        }
        self.output.save_all |= save_all;
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.directory.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Engine with the effective seed applied.
    pub fn algorithm(&self) -> CliResult<Algorithm> {
        let mut algo = self.algorithm.clone().ok_or_else(|| CliError::invalid("algorithm", "this task needs an algorithm"))?;
        set_seed(&mut algo, self.effective_seed());
        Ok(algo)
    }

    /// Algorithm for the free-measurement search of adaptive sessions.
    pub fn algorithm_or_default(&self) -> Algorithm {
        self.algorithm().unwrap_or_else(|_| Algorithm::De(DeParams { seed: self.effective_seed(), ..DeParams::default() }))
    }

    fn template(&self) -> CliResult<Template> {
        let id = self.model.template.as_deref().ok_or_else(|| CliError::invalid("model.template", "a template is required"))?;
        Template::from_id(id, &self.model.constants).map_err(at("model.template"))
    }

    fn decay(&self, d: usize) -> CliResult<Vec<(CMat, f64)>> {
        self.model
            .decay
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let path = format!("model.decay[{i}]");
                if !(s.rate >= 0.0) || !s.rate.is_finite() {
                    return Err(CliError::invalid(format!("{path}.rate"), "decay rates must be finite and nonnegative"));
                }
                Ok((sized(operator(&s.op, &format!("{path}.op"))?, d, &format!("{path}.op"))?, s.rate))
            })
            .collect()
    }

    /// `H`, `∂H` at the configured point, without decay.
    fn point_hamiltonian(&self) -> CliResult<(CMat, Vec<CMat>)> {
        let m = &self.model;
        let chosen = [m.preset.is_some(), m.template.is_some(), m.h0.is_some()].iter().filter(|b| **b).count();
        if chosen != 1 {
            return Err(CliError::invalid("model", "set exactly one of `preset`, `template` or `h0`"));
        }
        if let Some(h0) = &m.h0 {
            let h = hermitian(h0, "model.h0")?;
            let d = h.nrows();
            let dh = m.dh.as_ref().ok_or_else(|| CliError::invalid("model.dh", "derivatives of H are required"))?;
            if dh.is_empty() {
                return Err(CliError::invalid("model.dh", "at least one parameter is required"));
            }
            let dh = dh
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let p = format!("model.dh[{i}]");
                    sized(hermitian(a, &p)?, d, &p)
                })
                .collect::<CliResult<_>>()?;
            return Ok((h, dh));
        }
        if m.preset.is_some() {
            let l = self.preset_lindblad(vec![0.0, 1.0])?;
            let qmetro::dynamics::Hamiltonian::Constant(h) = l.h0 else { unreachable!("presets are time independent") };
            return Ok((h, l.dh));
        }
        let t = self.template()?;
        let x = m.x.as_ref().ok_or_else(|| CliError::invalid("model.x", "the template needs parameter values"))?;
        if x.len() != t.nparams() {
            return Err(CliError::invalid("model.x", format!("expected {} values", t.nparams())));
        }
        t.eval(x).map_err(at("model.x"))
    }

    fn preset_lindblad(&self, tspan: Vec<f64>) -> CliResult<Lindblad> {
        let name = self.model.preset.as_deref().unwrap_or_default();
        let k = &self.model.constants;
        let get = |key: &str, default: f64| k.get(key).copied().unwrap_or(default);
        if !self.model.decay.is_empty() {
            return Err(CliError::invalid("model.decay", "presets carry their own decay channels"));
        }
        Ok(match name {
            "qubit_frequency" => {
                check_keys(k, &["omega", "gamma_plus", "gamma_minus"])?;
                let (gp, gm) = (get("gamma_plus", 0.0), get("gamma_minus", 0.0));
                if gp < 0.0 || gm < 0.0 {
                    return Err(CliError::invalid("model.constants", "decay rates must be nonnegative"));
                }
                models::qubit_frequency(get("omega", 1.0), gp, gm, tspan)
            }
            "two_qubit_xx" => {
                check_keys(k, &["omega1", "omega2", "g", "gamma"])?;
                models::two_qubit_xx(get("omega1", 1.0), get("omega2", 1.0), get("g", 0.1), get("gamma", 0.05), tspan)
            }
            "nv_center" => {
                check_keys(k, &["B1", "B2", "B3", "gamma", "D", "gS", "gI", "A1", "A2"])?;
                let def = NvConstants::default();
                let nv = NvConstants {
                    d: get("D", def.d),
                    g_s: get("gS", def.g_s),
                    g_i: get("gI", def.g_i),
                    a1: get("A1", def.a1),
                    a2: get("A2", def.a2),
                };
                let mut b = [0.0; 3];
                for (i, slot) in b.iter_mut().enumerate() {
                    let key = format!("B{}", i + 1);
                    *slot = *k.get(&key).ok_or_else(|| CliError::invalid(format!("model.constants.{key}"), "field component is required"))?;
                }
                models::nv_center(nv, b, get("gamma", 2.0 * std::f64::consts::PI), tspan)
            }
            other => return Err(CliError::invalid("model.preset", format!("unknown preset `{other}`"))),
        })
    }

    pub fn tspan(&self) -> CliResult<Vec<f64>> {
        let p = self.dynamics.tspan.as_ref().ok_or_else(|| CliError::invalid("dynamics.tspan", "time points are required"))?;
        tspan_values(p, "dynamics.tspan")
    }

    /// Master-equation model over `dynamics.tspan`, without controls.
    pub fn lindblad(&self) -> CliResult<Lindblad> {
        let tspan = self.tspan()?;
        if self.model.preset.is_some() {
            self.point_hamiltonian()?;
            return self.preset_lindblad(tspan);
        }
        let (h, dh) = self.point_hamiltonian()?;
        let decay = self.decay(h.nrows())?;
        Ok(Lindblad::new(tspan, h, dh, decay))
    }

    /// Kraus channel from `dynamics.kraus`.
    pub fn kraus(&self) -> CliResult<KrausChannel> {
        match self.dynamics.kraus.as_ref().ok_or_else(|| CliError::invalid("dynamics.kraus", "a Kraus channel is required"))? {
            KrausSpec::Unitary => {
                let (h, dh) = self.point_hamiltonian()?;
                let t = self.dynamics.t.ok_or_else(|| CliError::invalid("dynamics.t", "unitary channels need a time"))?;
                KrausChannel::unitary(&h, &dh, t).map_err(at("dynamics.kraus"))
            }
            KrausSpec::Explicit { k, dk } => {
                let k = k.iter().enumerate().map(|(i, m)| matrix(m, &format!("dynamics.kraus.k[{i}]"))).collect::<CliResult<Vec<_>>>()?;
                let dk = dk
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        row.iter().enumerate().map(|(j, m)| matrix(m, &format!("dynamics.kraus.dk[{i}][{j}]"))).collect()
                    })
                    .collect::<CliResult<Vec<Vec<_>>>>()?;
                let ch = KrausChannel::new(k, dk).map_err(at("dynamics.kraus"))?;
                ch.validate(1e-6).map_err(at("dynamics.kraus"))?;
                Ok(ch)
            }
        }
    }

    /// Dimension and parameter count of the configured model.
    pub fn shape(&self) -> CliResult<(usize, usize)> {
        if self.model.tabulated.is_some() {
            let t = self.tabulated_grid()?;
            return Ok((t.dim(), t.axes.len()));
        }
        if self.model.template.is_some() && self.model.x.is_none() {
            let t = self.template()?;
            return Ok((t.dim(), t.nparams()));
        }
        let (h, dh) = self.point_hamiltonian()?;
        Ok((h.nrows(), dh.len()))
    }

    pub fn rho0(&self, d: usize) -> CliResult<CMat> {
        let path = "dynamics.rho0";
        let rho = match (&self.dynamics.rho0, &self.dynamics.psi0) {
            (Some(_), Some(_)) => return Err(CliError::invalid(path, "give either rho0 or psi0")),
            (None, Some(_)) => projector(&self.psi0(d)?.expect("psi0 present")),
            (None, None) => return Err(CliError::invalid(path, "an initial state is required")),
            (Some(OperatorSpec::Matrix(m)), None) => sized(matrix(m, path)?, d, path)?,
            (Some(OperatorSpec::Named(n)), None) => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let r = match n.as_str() {
                    "plus" => models::plus_state(),
                    "minus" => projector(&ket(&[c(s, 0.0), c(-s, 0.0)])),
                    "zero" => projector(&ket(&[c(1.0, 0.0), c(0.0, 0.0)])),
                    "one" => projector(&ket(&[c(0.0, 0.0), c(1.0, 0.0)])),
                    "bell" => models::bell_state(),
                    "nv_probe" => models::nv_probe(),
                    "coherent_spin" => {
                        let psi = models::coherent_spin_state(d - 1, std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2)
                            .map_err(at(path))?;
                        projector(&psi)
                    }
                    _ => return Err(CliError::invalid(path, format!("unknown state `{n}`"))),
                };
                sized(r, d, path)?
            }
        };
        validate_density(&rho).map_err(at(path))?;
        Ok(rho)
    }

    pub fn psi0(&self, d: usize) -> CliResult<Option<CVec>> {
        let Some(v) = &self.dynamics.psi0 else { return Ok(None) };
        if v.len() != d {
            return Err(CliError::invalid("dynamics.psi0", format!("expected {d} amplitudes")));
        }
        let psi = CVec::from_iterator(d, v.iter().map(|e| e.value()));
        let norm = psi.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(CliError::invalid("dynamics.psi0", "the state vector must be nonzero"));
        }
        Ok(Some(psi / c(norm, 0.0)))
    }

    pub fn weight(&self, n: usize) -> CliResult<Option<RMat>> {
        let path = "objective.W";
        let Some(w) = &self.objective.w else { return Ok(None) };
        if w.len() != n || w.iter().any(|r| r.len() != n) {
            return Err(CliError::invalid(path, format!("W must be {n}x{n}")));
        }
        let m = RMat::from_fn(n, n, |i, j| w[i][j]);
        if w.iter().flatten().any(|v| !v.is_finite()) || (&m - m.transpose()).amax() > 1e-12 {
            return Err(CliError::invalid(path, "W must be finite and symmetric"));
        }
        if eigh_real(&m).0[0] < -1e-12 {
            return Err(CliError::invalid(path, "W must be positive semidefinite"));
        }
        Ok(Some(m))
    }

    /// Measurement from `objective.M`; `None` when absent.
    pub fn povm(&self, d: usize) -> CliResult<Option<Povm>> {
        let path = "objective.M";
        let Some(spec) = &self.objective.m else { return Ok(None) };
        let m = match spec {
            OperatorListSpec::Named(n) => match n.as_str() {
                "pm" => models::pm_povm(),
                "xx" => models::xx_povm(),
                "computational" => Povm::computational(d),
                "sic" => qmetro::sic::sic_povm(d).map_err(at(path))?,
                _ => return Err(CliError::invalid(path, format!("unknown measurement `{n}`"))),
            },
            OperatorListSpec::List(ops) => {
                let ops = ops.iter().enumerate().map(|(i, m)| matrix(m, &format!("{path}[{i}]"))).collect::<CliResult<Vec<_>>>()?;
                Povm::new(ops).map_err(at(path))?
            }
        };
        if m.dim() != d {
            return Err(CliError::invalid(path, format!("measurement acts on dimension {}, model has {d}", m.dim())));
        }
        Ok(Some(m))
    }

    pub fn objective(&self, d: usize, n: usize) -> CliResult<Objective> {
        let kind = match self.objective.kind {
            ObjectiveName::Qfim => ObjectiveKind::Qfim,
            ObjectiveName::Cfim => ObjectiveKind::Cfim(self.povm(d)?),
            ObjectiveName::Hcrb => ObjectiveKind::Hcrb,
        };
        let ld = match self.objective.ld {
            LdName::Sld => LdType::Sld,
            LdName::Rld => LdType::Rld,
            LdName::Lld => LdType::Lld,
        };
        if !(self.objective.eps > 0.0) {
            return Err(CliError::invalid("objective.eps", "must be positive"));
        }
        Ok(Objective { kind, ld, w: self.weight(n)?, eps: self.objective.eps })
    }

    pub fn control_ops(&self, d: usize) -> CliResult<Vec<CMat>> {
        let path = "dynamics.controls";
        let spec = self.dynamics.controls.as_ref().ok_or_else(|| CliError::invalid(path, "control Hamiltonians are required"))?;
        let ops = match spec {
            OperatorListSpec::Named(n) => match n.as_str() {
                "pauli" => models::pauli_controls(),
                "nv" => models::nv_controls(),
                "spin" => models::collective_spin(d - 1).to_vec(),
                _ => return Err(CliError::invalid(path, format!("unknown control set `{n}`"))),
            },
            OperatorListSpec::List(ops) => {
                ops.iter().enumerate().map(|(i, m)| hermitian(m, &format!("{path}[{i}]"))).collect::<CliResult<Vec<_>>>()?
            }
        };
        if ops.is_empty() {
            return Err(CliError::invalid(path, "at least one control Hamiltonian is required"));
        }
        for (i, h) in ops.iter().enumerate() {
            sized(h.clone(), d, &format!("{path}[{i}]"))?;
        }
        Ok(ops)
    }

    /// Control count, bound and initial amplitudes; `nc` defaults to the step count.
    pub fn control_setup(&self, k: usize, nsteps: usize) -> CliResult<(usize, Option<(f64, f64)>, Option<Vec<Vec<f64>>>)> {
        let nc = self.dynamics.nc.unwrap_or(nsteps);
        if nc == 0 {
            return Err(CliError::invalid("dynamics.nc", "must be at least 1"));
        }
        let bound = match self.dynamics.bound {
            Some([a, b]) if a < b => Some((a, b)),
            Some(_) => return Err(CliError::invalid("dynamics.bound", "lower bound must be below the upper bound")),
            None => None,
        };
        if let Some(c0) = &self.dynamics.ctrl0 {
            if c0.len() != k || c0.iter().any(|r| r.len() != nc) {
                return Err(CliError::invalid("dynamics.ctrl0", format!("expected {k} rows of {nc} amplitudes")));
            }
        }
        Ok((nc, bound, self.dynamics.ctrl0.clone()))
    }

    pub fn grid_config(&self) -> Option<&GridConfig> {
        match &self.task {
            TaskConfig::Bayes(b) => Some(&b.grid),
            TaskConfig::Adapt(a) => Some(&a.grid),
            _ => None,
        }
    }

    fn axes(&self, extra: bool) -> CliResult<Vec<Vec<f64>>> {
        let g = self.grid_config().ok_or_else(|| CliError::invalid("task.grid", "this task has no grid"))?;
        let axes: Vec<Vec<f64>> = g.axes.iter().map(Points::values).collect();
        for (i, a) in axes.iter().enumerate() {
            if a.is_empty() || a.iter().any(|v| !v.is_finite()) || a.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CliError::invalid(format!("task.grid.axes[{i}]"), "axis must be non-empty and strictly increasing"));
            }
        }
        if !extra && axes.is_empty() {
            return Err(CliError::invalid("task.grid.axes", "at least one axis is required"));
        }
        Ok(axes)
    }

    fn tabulated_grid(&self) -> CliResult<ModelGrid> {
        let t = self.model.tabulated.as_ref().expect("tabulated model");
        let axes = self.axes(false)?;
        let h = t.h.iter().enumerate().map(|(i, m)| hermitian(m, &format!("model.tabulated.h[{i}]"))).collect::<CliResult<Vec<_>>>()?;
        let dh = t
            .dh
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().map(|(j, m)| hermitian(m, &format!("model.tabulated.dh[{i}][{j}]"))).collect())
            .collect::<CliResult<Vec<Vec<_>>>>()?;
        ModelGrid::tabulated(axes, h, dh).map_err(at("model.tabulated"))
    }

    fn evolution_time(&self) -> CliResult<f64> {
        let t = self.dynamics.t.unwrap_or(1.0);
        if !(t > 0.0) || !t.is_finite() {
            return Err(CliError::invalid("dynamics.t", "must be positive"));
        }
        Ok(t)
    }

    /// Template or tabulated model over the task grid.
    pub fn model_grid(&self) -> CliResult<ModelGrid> {
        if self.model.tabulated.is_some() {
            return self.tabulated_grid();
        }
        if self.model.x.is_some() {
            return Err(CliError::invalid("model.x", "grid tasks take parameter values from task.grid"));
        }
        let t = self.template()?;
        let axes = self.axes(false)?;
        if axes.len() != t.nparams() {
            return Err(CliError::invalid("task.grid.axes", format!("the template takes {} axes", t.nparams())));
        }
        models::model_grid(&t, axes).map_err(at("task.grid"))
    }

    /// Prior with `(ρ, ∂ρ)` at every grid point.
    pub fn prior_grid(&self) -> CliResult<PriorGrid> {
        let grid = self.model_grid()?;
        let d = grid.dim();
        let rho0 = self.rho0(d)?;
        let decay = self.decay(d)?;
        let states = grid.states(&rho0, self.evolution_time()?, &decay).map_err(at("model"))?;
        let spec = &self.grid_config().expect("grid task").prior;
        match spec {
            PriorSpec::Uniform => PriorGrid::uniform(grid.axes, states),
            PriorSpec::Gaussian { mu, eta } => {
                if grid.axes.len() != 1 {
                    return Err(CliError::invalid("task.grid.prior", "Gaussian priors are one-dimensional"));
                }
                PriorGrid::gaussian(grid.axes.into_iter().next().expect("one axis"), *mu, *eta, states)
            }
        }
        .map_err(at("task.grid.prior"))
    }

    /// Likelihood table for adaptive sessions on the extended grid.
    pub fn shifted_likelihood(&self, m: &Povm) -> CliResult<ShiftedLikelihood> {
        let d = m.dim();
        let rho0 = self.rho0(d)?;
        let decay = self.decay(d)?;
        let t = self.evolution_time()?;
        if self.model.tabulated.is_some() {
            // A tabulated grid cannot be extended, so shifts clamp to its hull.
            let grid = self.tabulated_grid()?;
            let states = grid.states(&rho0, t, &decay).map_err(at("model"))?;
            let table = qmetro::bayes::likelihood_table(&states, m).map_err(at("objective.M"))?;
            return ShiftedLikelihood::new(grid.axes, table).map_err(at("model.tabulated"));
        }
        ShiftedLikelihood::from_template(&self.template()?, &self.axes(false)?, &rho0, t, &decay, m).map_err(at("model"))
    }

    /// State at `x` for outcome simulation: exact for templates, nearest grid point for tables.
    pub fn state_at(&self, x: &[f64]) -> CliResult<CMat> {
        if self.model.tabulated.is_some() {
            let grid = self.tabulated_grid()?;
            let k = nearest(&grid.axes, x);
            let d = grid.dim();
            let decay = self.decay(d)?;
            let ds = exact_endpoint(&grid.h[k], &grid.dh[k], &decay, self.evolution_time()?, &self.rho0(d)?).map_err(at("model"))?;
            return Ok(ds.rho);
        }
        let t = self.template()?;
        let (h, dh) = t.eval(x).map_err(at("task.x_true"))?;
        let d = h.nrows();
        let ds = exact_endpoint(&h, &dh, &self.decay(d)?, self.evolution_time()?, &self.rho0(d)?).map_err(at("model"))?;
        Ok(ds.rho)
    }

    pub fn outcomes(&self) -> CliResult<Outcomes<'_>> {
        let n = self.grid_config().map_or(0, |g| g.axes.len());
        match &self.task {
            TaskConfig::Bayes(b) => outcome_source(&b.x_true, b.rounds, &b.y, n),
            TaskConfig::Adapt(a) => outcome_source(&a.x_true, a.rounds, &a.y, n),
            _ => Err(CliError::invalid("task", "this task has no outcomes")),
        }
    }

    pub fn search(&self) -> Search {
        match self.task {
            TaskConfig::Mintime { search: SearchName::Forward, .. } => Search::Forward,
            _ => Search::Binary,
        }
    }

    /// Structural checks that do not run any dynamics.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::invalid("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        if let Some(t) = &self.dynamics.tspan {
            tspan_values(t, "dynamics.tspan")?;
        }
        let grid_task = self.grid_config().is_some();
        if grid_task {
            self.axes(false)?;
        }
        let (d, n) = self.shape()?;
        self.weight(n)?;
        self.povm(d)?;
        self.objective(d, n)?;
        if self.dynamics.rho0.is_some() || self.dynamics.psi0.is_some() {
            self.rho0(d)?;
        }
        self.decay(d)?;
        let needs_algorithm = !matches!(self.task, TaskConfig::Bounds { .. } | TaskConfig::Bayes(_) | TaskConfig::Adapt(_));
        if needs_algorithm && self.algorithm.is_none() {
            return Err(CliError::invalid("algorithm", "this task needs an algorithm"));
        }
        match &self.task {
            TaskConfig::Bounds { target, .. } => {
                self.lindblad()?;
                if target.is_some_and(|t| !t.is_finite()) {
                    return Err(CliError::invalid("task.target", "must be finite"));
                }
            }
            TaskConfig::Copt {} | TaskConfig::Mintime { .. } => {
                let l = self.lindblad()?;
                let k = self.control_ops(d)?.len();
                self.control_setup(k, l.tspan.len() - 1)?;
            }
            TaskConfig::Compopt { scheme } => {
                if self.dynamics.kraus.is_some() {
                    self.kraus()?;
                } else {
                    let l = self.lindblad()?;
                    if *scheme != CompKind::Sm {
                        let k = self.control_ops(d)?.len();
                        self.control_setup(k, l.tspan.len() - 1)?;
                    }
                }
            }
            TaskConfig::Sopt {} | TaskConfig::Mopt { .. } => {
                if self.dynamics.kraus.is_some() {
                    self.kraus()?;
                } else {
                    self.lindblad()?;
                }
                if matches!(self.task, TaskConfig::Mopt { measurement: MeasurementName::Lc | MeasurementName::Rotation, .. })
                    && self.objective.m.is_none()
                {
                    return Err(CliError::invalid("objective.M", "linear-combination and rotation searches need an input measurement"));
                }
            }
            TaskConfig::Bayes(_) => {
                if self.povm(d)?.is_none() {
                    return Err(CliError::invalid("objective.M", "Bayesian estimation needs a measurement"));
                }
                self.outcomes()?;
            }
            TaskConfig::Adapt(a) => {
                if !a.free_measurement && self.povm(d)?.is_none() {
                    return Err(CliError::invalid("objective.M", "set a measurement or enable free_measurement"));
                }
                if let Some(x) = &a.x_opt {
                    if x.len() != n || x.iter().any(|v| !v.is_finite()) {
                        return Err(CliError::invalid("task.x_opt", format!("expected {n} finite values")));
                    }
                }
            }
        }
        if let TaskConfig::Mintime { f_target, .. } = self.task {
            if !f_target.is_finite() {
                return Err(CliError::invalid("task.f_target", "must be finite"));
            }
        }
        Ok(())
    }
}

fn nearest(axes: &[Vec<f64>], x: &[f64]) -> usize {
    let mut k = 0;
    for (ax, v) in axes.iter().zip(x) {
        let i = (0..ax.len()).min_by(|&a, &b| (ax[a] - v).abs().total_cmp(&(ax[b] - v).abs())).unwrap_or(0);
        k = k * ax.len() + i;
    }
    k
}
