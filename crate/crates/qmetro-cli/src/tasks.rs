//! Task execution and output bundles.

use crate::config::{MeasurementName, Outcomes, ScenarioConfig, TaskConfig, SCHEMA_VERSION};
use crate::csvio;
use crate::error::{at, CliError, CliResult};
use qmetro::adaptive::{find_x_opt, AdaptiveSession};
use qmetro::asymptotic::{cfim, qfim, target_time, weighted_inverse_trace};
use qmetro::bayes::{self, sample_outcome, simulate_outcomes, BType, PriorGrid};
use qmetro::dynamics::kraus_apply;
use qmetro::engines::{Parameterization, Propagation};
use qmetro::linalg::trace_prod;
use qmetro::scenarios::{
    comprehensive_opt, control_opt, measurement_opt, mintime, state_opt, Algorithm, ComprehensiveProblem, ControlProblem,
    Dynamics, MeasurementKind, MeasurementProblem, StateProblem,
};
use qmetro::{CMat, DerivedState, Povm, RMat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Numeric table printed after a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub task: &'static str,
    pub summary: Vec<(String, String)>,
    pub table: Option<Table>,
    /// File name to CSV text.
    pub artifacts: BTreeMap<String, String>,
}

impl RunOutput {
    fn new(task: &'static str) -> Self {
        Self { task, summary: Vec::new(), table: None, artifacts: BTreeMap::new() }
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    fn file(&mut self, name: &str, text: String) {
        self.artifacts.insert(name.to_string(), text);
    }

    fn run_summary(&mut self, algo: &Algorithm, values: &[f64], best: f64) {
        self.note("algorithm", algo.name());
        self.note("seed", algo.seed());
        self.note("episodes", values.len());
        self.note("best objective", best);
    }
}

pub fn run_task(cfg: &ScenarioConfig) -> CliResult<RunOutput> {
    match &cfg.task {
        TaskConfig::Bounds { all_times, target, hcrb } => bounds(cfg, *all_times, *target, *hcrb),
        TaskConfig::Bayes(_) => bayes_task(cfg),
        TaskConfig::Copt {} => copt(cfg),
        TaskConfig::Sopt {} => sopt(cfg),
        TaskConfig::Mopt { measurement, m } => mopt(cfg, *measurement, *m),
        TaskConfig::Compopt { scheme } => compopt(cfg, *scheme),
        TaskConfig::Mintime { f_target, .. } => mintime_task(cfg, *f_target),
        TaskConfig::Adapt(_) => adapt_run(cfg),
    }
}

fn bounds(cfg: &ScenarioConfig, all_times: bool, target: Option<f64>, with_hcrb: bool) -> CliResult<RunOutput> {
    let mut out = RunOutput::new("bounds");
    let model = cfg.lindblad()?;
    let (d, n) = (model.dim(), model.nparams());
    if with_hcrb && n < 2 {
        return Err(CliError::invalid("task.hcrb", "the Holevo bound needs at least two parameters"));
    }
    let rho0 = cfg.rho0(d)?;
    let obj = cfg.objective(d, n)?;
    let m = match cfg.povm(d)? {
        Some(m) => m,
        None => qmetro::sic::sic_povm(d)?,
    };
    let w = cfg.weight(n)?.unwrap_or_else(|| RMat::identity(n, n));
    let traj = model.propagate(&rho0)?;
    let picked: Vec<usize> = if all_times { (0..traj.len()).collect() } else { vec![traj.len() - 1] };
    let mut rows = Vec::with_capacity(picked.len());
    for &i in &picked {
        let ds = &traj[i];
        let f = qfim(ds, obj.ld, obj.eps)?;
        let c = cfim(ds, &m, obj.eps)?;
        let mut row = vec![model.tspan[i]];
        if n == 1 {
            row.extend([f[(0, 0)], c[(0, 0)]]);
        } else {
            row.extend([weighted_inverse_trace(&f, &w), weighted_inverse_trace(&c, &w)]);
            if with_hcrb {
                row.push(qmetro::hcrb::hcrb(ds, &w, obj.eps)?);
            }
        }
        rows.push(row);
    }
    let header: Vec<String> = match (n, with_hcrb) {
        (1, _) => vec!["t", "QFI", "CFI"],
        (_, false) => vec!["t", "Tr(W F^-1)", "Tr(W I^-1)"],
        (_, true) => vec!["t", "Tr(W F^-1)", "Tr(W I^-1)", "HCRB"],
    }
    .into_iter()
    .map(String::from)
    .collect();
    out.file("f.csv", csvio::table(&[&format!("columns: {}", header.join(", "))], &rows));
    if let Some(f_target) = target {
        let t = target_time(f_target, &model.tspan, &traj, |ds: &DerivedState| obj.value(ds))?;
        out.note("target", f_target);
        out.note("first crossing time", t);
    }
    out.table = Some(Table { header, rows });
    Ok(out)
}

fn bayes_task(cfg: &ScenarioConfig) -> CliResult<RunOutput> {
    let TaskConfig::Bayes(task) = &cfg.task else { unreachable!("bayes task") };
    let mut out = RunOutput::new("bayes");
    let grid = cfg.prior_grid()?;
    let d = grid.states[0].dim();
    let m = cfg.povm(d)?.ok_or_else(|| CliError::invalid("objective.M", "Bayesian estimation needs a measurement"))?;
    let ys = match cfg.outcomes()? {
        Outcomes::Simulated { x_true, rounds } => {
            let rho = cfg.state_at(x_true)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.effective_seed());
            simulate_outcomes(&mut rng, &rho, &m, rounds)
        }
        Outcomes::Recorded(y) => y.to_vec(),
    };
    let save_all = cfg.output.save_all;
    let seq = bayes::bayes_update(&grid, &m, &ys, task.estimator, save_all).map_err(at("task.y"))?;
    out.note("rounds", ys.len());
    out.note("estimate", format!("{:?}", seq.estimates.last().cloned().unwrap_or_default()));
    out.file("y.csv", csvio::outcomes_csv(&ys));
    out.file("xout.csv", csvio::table(&["point estimate after each round, one column per parameter"], &seq.estimates));
    let pout = if save_all { seq.rounds.clone() } else { vec![seq.last.clone()] };
    out.file("pout.csv", posterior_csv(&pout));
    if task.mle {
        let lik = bayes::mle(&grid, &m, &ys, save_all)?;
        out.note("MLE", format!("{:?}", lik.estimates.last().cloned().unwrap_or_default()));
        out.file("mle_xout.csv", csvio::table(&["maximum-likelihood estimate after each round"], &lik.estimates));
        let lout = if save_all { lik.rounds } else { vec![lik.last] };
        out.file("lout.csv", posterior_csv_with(&lout, "normalized likelihood"));
    }
    if task.bounds {
        let (names, values) = bayes_bounds(cfg, &grid, &m)?;
        let rows = values.iter().map(|v| vec![*v]).collect::<Vec<_>>();
        out.file("bounds.csv", csvio::table(&[&format!("rows: {}", names.join(", "))], &rows));
        out.table = Some(Table { header: vec!["bound".into(), "value".into()], rows });
        for (n, v) in names.iter().zip(&values) {
            out.note(n, v);
        }
    }
    Ok(out)
}

/// Traces of the Bayesian bounds at the prior, in a fixed order.
fn bayes_bounds(cfg: &ScenarioConfig, grid: &PriorGrid, m: &Povm) -> CliResult<(Vec<String>, Vec<f64>)> {
    let n = grid.nparams();
    let eps = cfg.objective.eps;
    let ld = cfg.objective(grid.states[0].dim(), n)?.ld;
    let w = cfg.weight(n)?.unwrap_or_else(|| RMat::identity(n, n));
    let mut names = Vec::new();
    let mut values = Vec::new();
    let mut push = |name: String, v: f64| {
        names.push(name);
        values.push(v);
    };
    for (i, bt) in [BType::One, BType::Two, BType::Three].into_iter().enumerate() {
        push(format!("BCRB type {}", i + 1), bayes::bcrb(grid, m, None, bt, eps)?.value.trace());
    }
    for (i, bt) in [BType::One, BType::Two, BType::Three].into_iter().enumerate() {
        push(format!("BQCRB type {}", i + 1), bayes::bqcrb(grid, None, bt, ld, eps)?.value.trace());
    }
    push("VTB".into(), bayes::vtb(grid, m, eps)?.value.trace());
    push("QVTB".into(), bayes::qvtb(grid, ld, eps)?.value.trace());
    if n == 1 {
        push("QZZB".into(), bayes::qzzb(grid, eps)?);
    }
    push("BCB".into(), bayes::bcb(grid, &w, eps)?);
    Ok((names, values))
}

fn posterior_csv(rows: &[Vec<f64>]) -> String {
    posterior_csv_with(rows, "posterior density")
}

fn posterior_csv_with(rows: &[Vec<f64>], what: &str) -> String {
    csvio::table(&[&format!("{what} on the flattened grid (last axis fastest), one row per saved round")], rows)
}

/// Master-equation model with the configured control Hamiltonians attached.
fn controlled(cfg: &ScenarioConfig) -> CliResult<(qmetro::dynamics::Lindblad, usize, Option<(f64, f64)>, Option<Vec<Vec<f64>>>)> {
    let mut model = cfg.lindblad()?;
    model.hc = cfg.control_ops(model.dim())?;
    let (nc, bound, ctrl0) = cfg.control_setup(model.hc.len(), model.tspan.len() - 1)?;
    Ok((model, nc, bound, ctrl0))
}

fn control_problem(cfg: &ScenarioConfig) -> CliResult<ControlProblem> {
    let (model, nc, bound, ctrl0) = controlled(cfg)?;
    let (d, n) = (model.dim(), model.nparams());
    let rho0 = cfg.rho0(d)?;
    let obj = cfg.objective(d, n)?;
    let prob = ControlProblem::new(model, rho0, obj, nc, bound).map_err(at("dynamics.controls"))?;
    match ctrl0 {
        Some(g) => prob.with_guess(g).map_err(at("dynamics.ctrl0")),
        None => Ok(prob),
    }
}

fn copt(cfg: &ScenarioConfig) -> CliResult<RunOutput> {
    let mut out = RunOutput::new("copt");
    let prob = control_problem(cfg)?;
    let algo = cfg.algorithm()?;
    let save_all = cfg.output.save_all;
    let res = control_opt(&prob, &algo, save_all)?;
    out.run_summary(&algo, &res.run.values, res.run.best_value);
    out.file("f.csv", csvio::f_csv(&res.run.values));
    let blocks = if save_all { res.run.history.iter().map(|x| prob.decode(x)).collect() } else { vec![res.controls] };
    out.file("controls.csv", csvio::controls_csv(&blocks));
    Ok(out)
}

fn parameterization(cfg: &ScenarioConfig) -> CliResult<Parameterization> {
    if cfg.dynamics.kraus.is_some() {
        return Ok(Parameterization::Kraus(cfg.kraus()?));
    }
    Ok(Parameterization::Lindblad(Propagation::new(&cfg.lindblad()?).map_err(at("model"))?))
}

fn sopt(cfg: &ScenarioConfig) -> CliResult<RunOutput> {
    let mut out = RunOutput::new("sopt");
    let par = parameterization(cfg)?;
    let (d, n) = (par.dim(), par.nparams());
    let obj = cfg.objective(d, n)?;
    let mut prob = StateProblem::new(par, obj);
    if let Some(psi) = cfg.psi0(d)? {
        prob = prob.with_guess(psi).map_err(at("dynamics.psi0"))?;
    }
    let algo = cfg.algorithm()?;
    let save_all = cfg.output.save_all;
    let res = state_opt(&prob, &algo, save_all)?;
    out.run_summary(&algo, &res.run.values, res.run.best_value);
    out.file("f.csv", csvio::f_csv(&res.run.values));
    let states = if save_all { res.run.history.iter().map(|x| prob.decode(x)).collect() } else { vec![res.psi] };
    out.file("states.csv", csvio::states_csv(&states));
    Ok(out)
}

/// `(ρ, ∂ρ)` at the final time or after the channel.
fn final_state(cfg: &ScenarioConfig) -> CliResult<DerivedState> {
    if cfg.dynamics.kraus.is_some() {
        let ch = cfg.kraus()?;
        let rho0 = cfg.rho0(ch.dim())?;
        return Ok(kraus_apply(&rho0, &ch)?);
    }
    let model = cfg.lindblad()?;
    let rho0 = cfg.rho0(model.dim())?;
    Ok(model.propagate_final(&rho0)?)
}

fn mopt(cfg: &ScenarioConfig, name: MeasurementName, m: Option<usize>) -> CliResult<RunOutput> {
    let mut out = RunOutput::new("mopt");
    let ds = final_state(cfg)?;
    let (d, n) = (ds.dim(), ds.nparams());
    let input = || cfg.povm(d)?.ok_or_else(|| CliError::invalid("objective.M", "an input measurement is required"));
    let kind = match name {
        MeasurementName::Projection => MeasurementKind::Projection,
        MeasurementName::Lc => {
            let input = input()?;
            let m = m.unwrap_or(input.len());
            MeasurementKind::LinearCombination { input, m }
        }
        MeasurementName::Rotation => MeasurementKind::Rotation { input: input()? },
    };
    let w = cfg.weight(n)?;
    let f = qfim(&ds, qmetro::asymptotic::LdType::Sld, cfg.objective.eps)?;
    let qfi = match &w {
        Some(w) => qmetro::engines::scalarize(&f, w),
        None => qmetro::engines::scalarize(&f, &RMat::identity(n, n)),
    };
    let prob = MeasurementProblem::new(ds, w, kind).map_err(at("task.measurement"))?;
    let algo = cfg.algorithm()?;
    let save_all = cfg.output.save_all;
    let res = measurement_opt(&prob, &algo, save_all)?;
    out.run_summary(&algo, &res.run.values, res.run.best_value);
    out.note("quantum limit", qfi);
    out.file("f.csv", csvio::f_csv(&res.run.values));
    let povms = if save_all {
        res.run.history.iter().map(|x| prob.decode(x)).collect::<qmetro::Result<Vec<_>>>()?
    } else {
        vec![res.povm]
    };
    out.file("measurements.csv", csvio::measurements_csv(&povms));
    Ok(out)
}

fn compopt(cfg: &ScenarioConfig, kind: qmetro::scenarios::CompKind) -> CliResult<RunOutput> {
    use qmetro::scenarios::CompKind;
    let mut out = RunOutput::new("compopt");
    let (dynamics, nc, bound, ctrl0) = if cfg.dynamics.kraus.is_some() {
        (Dynamics::Kraus(cfg.kraus()?), 1, None, None)
    } else if kind == CompKind::Sm {
        (Dynamics::Lindblad(cfg.lindblad()?), 1, None, None)
    } else {
        let (model, nc, bound, ctrl0) = controlled(cfg)?;
        (Dynamics::Lindblad(model), nc, bound, ctrl0)
    };
    let (d, n) = match &dynamics {
        Dynamics::Lindblad(m) => (m.dim(), m.nparams()),
        Dynamics::Kraus(ch) => (ch.dim(), ch.nparams()),
    };
    let obj = cfg.objective(d, n)?;
    let rho0 = if kind == CompKind::Cm { Some(cfg.rho0(d)?) } else { None };
    let prob = ComprehensiveProblem::new(kind, dynamics, obj, nc, bound, rho0).map_err(at("task.scheme"))?;
    let psi = if kind == CompKind::Cm { None } else { cfg.psi0(d)? };
    let prob = prob.with_guess(psi, ctrl0, None).map_err(at("dynamics"))?;
    let algo = cfg.algorithm()?;
    let save_all = cfg.output.save_all;
    let res = comprehensive_opt(&prob, &algo, save_all)?;
    out.run_summary(&algo, &res.run.values, res.run.best_value);
    out.file("f.csv", csvio::f_csv(&res.run.values));
    let saved = if save_all {
        res.run.history.iter().map(|x| prob.decode(x)).collect::<qmetro::Result<Vec<_>>>()?
    } else {
        vec![res.artifacts]
    };
    let states: Vec<_> = saved.iter().filter_map(|a| a.psi.clone()).collect();
    let controls: Vec<_> = saved.iter().filter_map(|a| a.controls.clone()).collect();
    let povms: Vec<_> = saved.iter().filter_map(|a| a.povm.clone()).collect();
    if !states.is_empty() {
        out.file("states.csv", csvio::states_csv(&states));
    }
    if !controls.is_empty() {
        out.file("controls.csv", csvio::controls_csv(&controls));
    }
    if !povms.is_empty() {
        out.file("measurements.csv", csvio::measurements_csv(&povms));
    }
    Ok(out)
}

fn mintime_task(cfg: &ScenarioConfig, f_target: f64) -> CliResult<RunOutput> {
    let mut out = RunOutput::new("mintime");
    let prob = control_problem(cfg)?;
    let algo = cfg.algorithm()?;
    let res = mintime(&prob, f_target, cfg.search(), &algo)?;
    out.run_summary(&algo, &res.run.values, res.run.best_value);
    out.note("target", f_target);
    out.note("minimum time", res.t_min);
    out.note("objective at minimum time", res.value);
    out.file("mtspan.csv", csvio::column("time points of the shortest evolution reaching the target", &res.tspan));
    out.file("controls.csv", csvio::controls_csv(&[res.controls]));
    out.file("f.csv", csvio::f_csv(&res.run.values));
    Ok(out)
}

/// Adaptive session from an `adapt` task, with the measurement it uses.
pub fn build_session(cfg: &ScenarioConfig) -> CliResult<(AdaptiveSession, Povm)> {
    let TaskConfig::Adapt(task) = &cfg.task else {
        return Err(CliError::invalid("task.kind", "expected an adapt task"));
    };
    let grid = cfg.prior_grid()?;
    let (d, n) = (grid.states[0].dim(), grid.nparams());
    let fixed = if task.free_measurement { None } else { cfg.povm(d)? };
    let w = cfg.weight(n)?.unwrap_or_else(|| RMat::identity(n, n));
    let (x_opt, povm) = match (&task.x_opt, fixed) {
        (Some(x), Some(m)) => (x.clone(), m),
        (Some(x), None) => {
            let k = nearest_index(&grid, x);
            let prob = MeasurementProblem::new(grid.states[k].clone(), Some(w), MeasurementKind::Projection)?;
            (x.clone(), measurement_opt(&prob, &cfg.algorithm_or_default(), false)?.povm)
        }
        (None, m) => {
            let found = find_x_opt(&grid, m.as_ref(), &w, &cfg.algorithm_or_default())?;
            let povm = m.or(found.povm).expect("free searches return a measurement");
            (found.x, povm)
        }
    };
    let likelihood = cfg.shifted_likelihood(&povm)?;
    let session = AdaptiveSession::new(grid.axes, grid.p, likelihood, x_opt, task.pre_rounds, task.estimator)?;
    Ok((session, povm))
}

fn nearest_index(grid: &PriorGrid, x: &[f64]) -> usize {
    (0..grid.len())
        .map(|k| (k, grid.point(k).iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0
}

/// `y.csv`, `xout.csv`, `u.csv` and `pout.csv` for a session; `pout` holds
/// the saved posteriors, the current one when empty.
pub fn adapt_artifacts(session: &AdaptiveSession, pout: &[Vec<f64>]) -> BTreeMap<String, String> {
    let h = session.history();
    let ys: Vec<usize> = h.iter().map(|r| r.y).collect();
    let xs: Vec<Vec<f64>> = h.iter().map(|r| r.x_hat.clone()).collect();
    let us: Vec<Vec<f64>> = h.iter().map(|r| r.u.clone()).collect();
    let current = [session.posterior().to_vec()];
    let pout = if pout.is_empty() { &current[..] } else { pout };
    BTreeMap::from([
        ("y.csv".to_string(), csvio::outcomes_csv(&ys)),
        ("xout.csv".to_string(), csvio::table(&["point estimate after each round, one column per parameter"], &xs)),
        ("u.csv".to_string(), csvio::table(&["control shift applied in each round, one column per parameter"], &us)),
        ("pout.csv".to_string(), posterior_csv(pout)),
    ])
}

fn outcome_probabilities(rho: &CMat, m: &Povm) -> Vec<f64> {
    m.ops().iter().map(|op| trace_prod(rho, op).re.max(0.0)).collect()
}

fn adapt_run(cfg: &ScenarioConfig) -> CliResult<RunOutput> {
    let mut out = RunOutput::new("adapt");
    let (mut session, povm) = build_session(cfg)?;
    let save_all = cfg.output.save_all;
    let mut pout = Vec::new();
    match cfg.outcomes()? {
        Outcomes::Simulated { x_true, rounds } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.effective_seed());
            for _ in 0..rounds {
                let x: Vec<f64> = x_true.iter().zip(session.u()).map(|(a, b)| a + b).collect();
                let y = sample_outcome(&mut rng, &outcome_probabilities(&cfg.state_at(&x)?, &povm));
                session.step(y)?;
                if save_all {
                    pout.push(session.posterior().to_vec());
                }
            }
        }
        Outcomes::Recorded(ys) => {
            for &y in ys {
                session.step(y).map_err(at("task.y"))?;
                if save_all {
                    pout.push(session.posterior().to_vec());
                }
            }
        }
    }
    out.note("working point", format!("{:?}", session.x_opt()));
    out.note("rounds", session.round());
    out.note("estimate", format!("{:?}", session.history().last().map(|r| r.x_hat.clone()).unwrap_or_default()));
    out.note("next shift", format!("{:?}", session.u()));
    out.artifacts = adapt_artifacts(&session, &pout);
    Ok(out)
}

/// SHA-256 of the configuration with the output directory cleared, so
/// bundles written to different places compare equal.
pub fn config_digest(cfg: &ScenarioConfig) -> String {
    let mut c = cfg.clone();
    c.output.directory = None;
    sha256_hex(serde_json::to_string(&c).expect("configs serialize").as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub task: String,
    pub seed: u64,
    pub config_sha256: String,
    pub artifacts: BTreeMap<String, String>,
}

/// Writes the artifacts and `manifest.json` into the output directory.
pub fn write_bundle(cfg: &ScenarioConfig, out: &RunOutput) -> CliResult<PathBuf> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for (name, text) in &out.artifacts {
        write(&dir.join(name), text.as_bytes())?;
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        task: out.task.to_string(),
        seed: cfg.effective_seed(),
        config_sha256: config_digest(cfg),
        artifacts: out.artifacts.iter().map(|(k, v)| (k.clone(), sha256_hex(v.as_bytes()))).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write(&dir.join("manifest.json"), text.as_bytes())?;
    Ok(dir)
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
