//! Optimization scenarios: controls, probe states, measurements, their
//! combinations and the minimum-time search.
//!
//! Every scenario maps its unknowns to a flat real vector (a codec) and hands
//! it to one of the engines. Codec layouts:
//!
//! * controls: `K` tables of `Nc` amplitudes, table after table;
//! * probe states: interleaved `[re, im]` coefficients;
//! * projective measurements: the `d` basis kets, each interleaved;
//! * linear combinations: `B_ij` row-major (`i` output, `j` input);
//! * rotations: the angles `s_k`, one per su(d) generator.

use crate::asymptotic::{LdType, EPS};
use crate::dynamics::{Hamiltonian, KrausChannel, Lindblad};
use crate::engines::{
    cfim_gradient, cvec_to_reals, de, gradient_ascent, nm, normalize_reals, pso, reals_to_cvec, ri, scalarize,
    Candidates, DeParams, Differentiable, GradParams, NmParams, Objective, ObjectiveKind, OptRun, Parameterization,
    Propagation, PsoParams, RiParams,
};
use crate::error::{Error, Result};
use crate::linalg::{c, cr, expm, projector, su_generators, CMat, CVec, RMat};
use crate::prelude::*;
use crate::state::{DerivedState, Povm};
use core::f64::consts::TAU;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Engine selection with its settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "method", rename_all = "snake_case")
)]
pub enum Algorithm {
    Gradient(GradParams),
    Pso(PsoParams),
    De(DeParams),
    Nm(NmParams),
    Ri(RiParams),
}

impl Algorithm {
    pub fn seed(&self) -> u64 {
        match self {
            Algorithm::Gradient(p) => p.seed,
            Algorithm::Pso(p) => p.seed,
            Algorithm::De(p) => p.seed,
            Algorithm::Nm(p) => p.seed,
            Algorithm::Ri(p) => p.seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Gradient(_) => "gradient",
            Algorithm::Pso(_) => "pso",
            Algorithm::De(_) => "de",
            Algorithm::Nm(_) => "nm",
            Algorithm::Ri(_) => "ri",
        }
    }
}

fn check_objective(obj: &Objective, nparams: usize, gradient: bool) -> Result<()> {
    if obj.kind == ObjectiveKind::Hcrb {
        if nparams < 2 {
            return Err(Error::Unsupported(
                "the Holevo bound needs at least two parameters; use the QFIM objective for one parameter".into(),
            ));
        }
        if gradient {
            return Err(Error::Unsupported("gradient engines do not support the HCRB objective".into()));
        }
    }
    if gradient && obj.kind == ObjectiveKind::Qfim && obj.ld != LdType::Sld {
        return Err(Error::Unsupported("gradient engines require the SLD-based QFIM".into()));
    }
    Ok(())
}

/// Runs a population engine, or gradient ascent from `x0`.
fn dispatch<P: Differentiable>(
    p: &P,
    algo: &Algorithm,
    guesses: &[Vec<f64>],
    x0: Vec<f64>,
    save_all: bool,
) -> Result<OptRun> {
    match algo {
        Algorithm::Gradient(g) => gradient_ascent(p, g, &x0, save_all),
        Algorithm::Pso(q) => pso(p, q, guesses, save_all),
        Algorithm::De(q) => de(p, q, guesses, save_all),
        Algorithm::Nm(q) => nm(p, q, guesses, save_all),
        Algorithm::Ri(_) => Err(Error::Unsupported("the reverse-iterative search only optimizes probe states".into())),
    }
}

// ---------------------------------------------------------------- codecs

#[derive(Debug, Clone)]
struct ControlSeg {
    k: usize,
    nc: usize,
    bound: Option<(f64, f64)>,
}

impl ControlSeg {
    fn len(&self) -> usize {
        self.k * self.nc
    }

    fn repair(&self, x: &mut [f64]) {
        if let Some((a, b)) = self.bound {
            x.iter_mut().for_each(|v| *v = v.clamp(a, b));
        }
    }

    /// Uniform within the bound; unbounded sides fall back to a unit window.
    fn random(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let (a, b) = self.bound.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        let lo = if a.is_finite() { a } else { b.min(1.0) - 2.0 };
        let hi = if b.is_finite() { b } else { lo + 2.0 };
        (0..self.len()).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect()
    }

    fn decode(&self, x: &[f64]) -> Vec<Vec<f64>> {
        x.chunks(self.nc).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone)]
struct StateSeg {
    d: usize,
}

impl StateSeg {
    fn len(&self) -> usize {
        2 * self.d
    }

    fn random(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        cvec_to_reals(&crate::random::random_ket(rng, self.d))
    }

    fn rho0(&self, x: &[f64]) -> CMat {
        projector(&reals_to_cvec(x))
    }

    /// Chain rule through `ρ₀ = cc†` for a Hermitian `G`: `δf/δc = 2Gc`.
    fn pull(&self, x: &[f64], g: &CMat) -> Vec<f64> {
        cvec_to_reals(&(g * reals_to_cvec(x) * cr(2.0)))
    }
}

/// Orthonormal columns; a column lying in the span of its predecessors is
/// replaced by the computational basis vector with the largest component
/// outside that span.
fn orthonormal_columns(m: &CMat) -> CMat {
    let d = m.nrows();
    let mut q = CMat::zeros(d, d);
    let project = |q: &CMat, j: usize, v: &mut CVec| {
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dotc(v);
                *v -= qi * proj;
            }
        }
    };
    for j in 0..d {
        let mut v = m.column(j).into_owned();
        let before = v.norm();
        project(&q, j, &mut v);
        if !(v.norm() > 1e-8 * before.max(1e-300)) || !v.norm().is_finite() {
            let mut best = CVec::zeros(d);
            for e in 0..d {
                let mut u = CVec::zeros(d);
                u[e] = cr(1.0);
                project(&q, j, &mut u);
                if u.norm() > best.norm() {
                    best = u;
                }
            }
            v = best;
        }
        let n = v.norm();
        q.set_column(j, &(v / cr(n)));
    }
    q
}

/// Column-major interleaved encoding of a basis matrix.
fn basis_to_reals(u: &CMat) -> Vec<f64> {
    u.iter().flat_map(|z| [z.re, z.im]).collect()
}

#[derive(Debug, Clone)]
enum MeasSeg {
    Projection { d: usize },
    Lc { m: usize, input: Vec<CMat> },
    Rotation { input: Vec<CMat>, gens: Vec<CMat> },
}

impl MeasSeg {
    fn len(&self) -> usize {
        match self {
            MeasSeg::Projection { d } => 2 * d * d,
            MeasSeg::Lc { m, input } => m * input.len(),
            MeasSeg::Rotation { gens, .. } => gens.len(),
        }
    }

    fn basis(d: usize, x: &[f64]) -> CMat {
        CMat::from_fn(d, d, |r, col| c(x[2 * (col * d + r)], x[2 * (col * d + r) + 1]))
    }

    fn repair(&self, x: &mut [f64]) {
        match self {
            MeasSeg::Projection { d } => {
                let q = orthonormal_columns(&Self::basis(*d, x));
                for col in 0..*d {
                    for r in 0..*d {
                        x[2 * (col * d + r)] = q[(r, col)].re;
                        x[2 * (col * d + r) + 1] = q[(r, col)].im;
                    }
                }
            }
            MeasSeg::Lc { m, input } => {
                let n = input.len();
                x.iter_mut().for_each(|v| *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
                for j in 0..n {
                    let s: f64 = (0..*m).map(|i| x[i * n + j]).sum();
                    for i in 0..*m {
                        x[i * n + j] = if s > 0.0 { x[i * n + j] / s } else { 1.0 / *m as f64 };
                    }
                }
            }
            MeasSeg::Rotation { .. } => x.iter_mut().for_each(|v| *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, TAU) }),
        }
    }

    fn random(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        match self {
            MeasSeg::Projection { d } => {
                basis_to_reals(&crate::random::random_unitary(rng, *d))
            }
            MeasSeg::Lc { .. } => (0..self.len()).map(|_| rng.gen::<f64>()).collect(),
            MeasSeg::Rotation { .. } => (0..self.len()).map(|_| TAU * rng.gen::<f64>()).collect(),
        }
    }

    fn rotation_factors(gens: &[CMat], x: &[f64]) -> Result<Vec<CMat>> {
        gens.iter().zip(x).map(|(g, s)| expm(&(g * c(0.0, *s)))).collect()
    }

    fn decode(&self, x: &[f64]) -> Result<Povm> {
        Ok(match self {
            MeasSeg::Projection { d } => Povm::from_basis(&orthonormal_columns(&Self::basis(*d, x))),
            MeasSeg::Lc { m, input } => {
                let n = input.len();
                let d = input[0].nrows();
                let ops = (0..*m)
                    .map(|i| (0..n).fold(CMat::zeros(d, d), |acc, j| acc + &input[j] * cr(x[i * n + j])))
                    .collect();
                Povm::new_unchecked(ops)
            }
            MeasSeg::Rotation { input, gens } => {
                let d = input[0].nrows();
                let u = Self::rotation_factors(gens, x)?.iter().fold(crate::linalg::eye(d), |acc, e| acc * e);
                let ud = u.adjoint();
                Povm::new_unchecked(input.iter().map(|p| &u * p * &ud).collect())
            }
        })
    }

    /// Codec gradient from the sensitivities `G_y = ∂f/∂Π_y`.
    fn pull(&self, x: &[f64], g_pi: &[CMat]) -> Result<Vec<f64>> {
        match self {
            MeasSeg::Projection { .. } => {
                Err(Error::Unsupported("projective measurements are optimized by population engines only".into()))
            }
            MeasSeg::Lc { m, input } => {
                let n = input.len();
                let mut out = vec![0.0; m * n];
                for i in 0..*m {
                    for j in 0..n {
                        out[i * n + j] = crate::linalg::trace_prod(&g_pi[i], &input[j]).re;
                    }
                }
                Ok(out)
            }
            MeasSeg::Rotation { input, gens } => {
                // Π'_y = UΠ_yU†, so δf = 2 Re Tr(Q δU) with Q = Σ_y Π_y U† G_y.
                let d = input[0].nrows();
                let e = Self::rotation_factors(gens, x)?;
                let kk = e.len();
                let mut prefix = vec![crate::linalg::eye(d)];
                for f in &e {
                    let next = prefix.last().unwrap() * f;
                    prefix.push(next);
                }
                let mut suffix = vec![crate::linalg::eye(d); kk + 1];
                for k in (0..kk).rev() {
                    suffix[k] = &e[k] * &suffix[k + 1];
                }
                let ud = prefix[kk].adjoint();
                let q = input.iter().zip(g_pi).fold(CMat::zeros(d, d), |acc, (p, g)| acc + p * &ud * g);
                Ok((0..kk)
                    .map(|k| {
                        let du = &prefix[k] * (&gens[k] * c(0.0, 1.0)) * &e[k] * &suffix[k + 1];
                        2.0 * crate::linalg::trace_prod(&q, &du).re
                    })
                    .collect())
            }
        }
    }
}

fn check_guess(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{name} guess has {got} entries, expected {want}")));
    }
    Ok(())
}

/// Validated copy of `model` with zero tables of `nc` amplitudes on a grid refined to fit them.
fn control_model(model: Lindblad, nc: usize, bound: Option<(f64, f64)>) -> Result<Lindblad> {
    if model.hc.is_empty() {
        return Err(Error::Domain("control optimization needs at least one control Hamiltonian".into()));
    }
    if nc == 0 {
        return Err(Error::Domain("Nc must be at least 1".into()));
    }
    if let Some((a, b)) = bound {
        if !(a < b) {
            return Err(Error::Domain(format!("control bound [{a}, {b}] is empty")));
        }
    }
    let k = model.hc.len();
    let model = with_controls(&model, vec![vec![0.0; nc]; k]).adjusted()?;
    model.validate()?;
    Ok(model)
}

fn with_controls(model: &Lindblad, ctrl: Vec<Vec<f64>>) -> Lindblad {
    let mut m = model.clone();
    m.ctrl = ctrl;
    m
}

// ---------------------------------------------------------------- control

/// Piecewise-constant control search on a Lindblad parameterization.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    model: Lindblad,
    rho0: CMat,
    obj: Objective,
    seg: ControlSeg,
    guess: Option<Vec<Vec<f64>>>,
}

/// Result of [`control_opt`].
#[derive(Debug, Clone)]
pub struct ControlOutcome {
    pub run: OptRun,
    pub controls: Vec<Vec<f64>>,
}

impl ControlProblem {
    /// `nc` amplitudes per control; the time grid is refined so that `nc`
    /// divides the step count. Any control tables in `model` are ignored.
    pub fn new(model: Lindblad, rho0: CMat, obj: Objective, nc: usize, bound: Option<(f64, f64)>) -> Result<Self> {
        let k = model.hc.len();
        let model = control_model(model, nc, bound)?;
        let d = model.dim();
        if rho0.shape() != (d, d) {
            return Err(Error::Dimension(format!("initial state must be {d}x{d}")));
        }
        let seg = ControlSeg { k, nc, bound };
        Ok(Self { model, rho0, obj, seg, guess: None })
    }

    /// Initial control tables, `K × Nc`.
    pub fn with_guess(mut self, ctrl: Vec<Vec<f64>>) -> Result<Self> {
        check_guess("control", ctrl.len(), self.seg.k)?;
        for c in &ctrl {
            check_guess("control table", c.len(), self.seg.nc)?;
        }
        self.guess = Some(ctrl);
        Ok(self)
    }

    /// Model on the adjusted grid (with zero controls).
    pub fn model(&self) -> &Lindblad {
        &self.model
    }

    pub fn tspan(&self) -> &[f64] {
        &self.model.tspan
    }

    pub fn nc(&self) -> usize {
        self.seg.nc
    }

    pub fn bound(&self) -> Option<(f64, f64)> {
        self.seg.bound
    }

    pub fn objective(&self) -> &Objective {
        &self.obj
    }

    /// Control tables from a codec vector.
    pub fn decode(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.seg.decode(x)
    }

    /// Objective for the given control tables.
    pub fn value(&self, ctrl: &[Vec<f64>]) -> Result<f64> {
        let ds = Propagation::new(&with_controls(&self.model, ctrl.to_vec()))?.endpoint(&self.rho0)?;
        self.obj.value(&ds)
    }

    /// Same problem on the first `m` steps with full-resolution controls.
    fn truncated(&self, m: usize) -> Result<Self> {
        let mut model = self.model.clone();
        model.tspan.truncate(m + 1);
        if let Hamiltonian::PerStep(hs) = &mut model.h0 {
            hs.truncate(m + 1);
        }
        model.ctrl = vec![vec![0.0; m]; self.seg.k];
        let mut p = Self::new(model, self.rho0.clone(), self.obj.clone(), m, self.seg.bound)?;
        if let Some(g) = &self.guess {
            p = p.with_guess(g.iter().map(|c| c[..m].to_vec()).collect())?;
        }
        Ok(p)
    }
}

impl Candidates for ControlProblem {
    fn len(&self) -> usize {
        self.seg.len()
    }

    fn blocks(&self) -> Vec<usize> {
        vec![self.seg.nc; self.seg.k]
    }

    fn repair(&self, x: &mut [f64]) {
        self.seg.repair(x);
    }

    fn random(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.seg.random(rng)
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.value(&self.decode(x))
    }
}

impl Differentiable for ControlProblem {
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p = Propagation::new(&with_controls(&self.model, self.decode(x)))?;
        let (v, table) = p.control_gradient(&self.rho0, &self.obj)?;
        Ok((v, table.concat()))
    }
}

/// Optimizes the control tables. Population engines always start from the
/// zero-control candidate (after any user guess); gradient ascent starts from
/// the guess or from random amplitudes drawn with its seed.
pub fn control_opt(prob: &ControlProblem, algo: &Algorithm, save_all: bool) -> Result<ControlOutcome> {
    check_objective(&prob.obj, prob.model.nparams(), matches!(algo, Algorithm::Gradient(_)))?;
    let mut guesses = Vec::new();
    if let Some(g) = &prob.guess {
        guesses.push(g.concat());
    }
    guesses.push(vec![0.0; prob.len()]);
    let x0 = match &prob.guess {
        Some(g) => g.concat(),
        None => prob.random(&mut ChaCha8Rng::seed_from_u64(algo.seed())),
    };
    let run = dispatch(prob, algo, &guesses, x0, save_all)?;
    let controls = prob.decode(&run.best);
    Ok(ControlOutcome { run, controls })
}

// ---------------------------------------------------------------- state

/// Pure-probe search `ρ₀ = |ψ⟩⟨ψ|` with `ψ` normalized after every update.
#[derive(Debug, Clone)]
pub struct StateProblem {
    par: Parameterization,
    obj: Objective,
    seg: StateSeg,
    guess: Option<CVec>,
}

#[derive(Debug, Clone)]
pub struct StateOutcome {
    pub run: OptRun,
    pub psi: CVec,
}

impl StateProblem {
    pub fn new(par: Parameterization, obj: Objective) -> Self {
        let seg = StateSeg { d: par.dim() };
        Self { par, obj, seg, guess: None }
    }

    pub fn with_guess(mut self, psi: CVec) -> Result<Self> {
        check_guess("state", psi.len(), self.seg.d)?;
        let mut x = cvec_to_reals(&psi);
        normalize_reals(&mut x);
        self.guess = Some(reals_to_cvec(&x));
        Ok(self)
    }

    pub fn decode(&self, x: &[f64]) -> CVec {
        reals_to_cvec(x)
    }

    pub fn value(&self, psi: &CVec) -> Result<f64> {
        self.obj.value(&self.par.apply(&projector(psi))?)
    }
}

impl Candidates for StateProblem {
    fn len(&self) -> usize {
        self.seg.len()
    }

    fn repair(&self, x: &mut [f64]) {
        normalize_reals(x);
    }

    fn random(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.seg.random(rng)
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.obj.value(&self.par.apply(&self.seg.rho0(x))?)
    }
}

impl Differentiable for StateProblem {
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = self.par.state_gradient(&self.seg.rho0(x), &self.obj)?;
        Ok((v, self.seg.pull(x, &g)))
    }
}

/// Optimizes the probe state. The reverse-iterative search needs a
/// single-parameter Kraus channel and the QFI objective.
pub fn state_opt(prob: &StateProblem, algo: &Algorithm, save_all: bool) -> Result<StateOutcome> {
    let run = if let Algorithm::Ri(prm) = algo {
        let Parameterization::Kraus(ch) = &prob.par else {
            return Err(Error::Unsupported("the reverse-iterative search needs a Kraus parameterization".into()));
        };
        if prob.obj.kind != ObjectiveKind::Qfim || prob.obj.ld != LdType::Sld {
            return Err(Error::Unsupported("the reverse-iterative search maximizes the SLD QFI only".into()));
        }
        ri(ch, prob.guess.as_ref(), prm, save_all)?
    } else {
        check_objective(&prob.obj, prob.par.nparams(), matches!(algo, Algorithm::Gradient(_)))?;
        let guesses: Vec<Vec<f64>> = prob.guess.iter().map(cvec_to_reals).collect();
        let x0 = match &prob.guess {
            Some(g) => cvec_to_reals(g),
            None => prob.random(&mut ChaCha8Rng::seed_from_u64(algo.seed())),
        };
        dispatch(prob, algo, &guesses, x0, save_all)?
    };
    let psi = prob.decode(&run.best);
    Ok(StateOutcome { run, psi })
}

// ---------------------------------------------------------------- measurement

/// Measurement family searched by [`measurement_opt`].
#[derive(Debug, Clone, PartialEq)]
pub enum MeasurementKind {
    /// Rank-one projective measurements in dimension `d`.
    Projection,
    /// `Π'_i = Σ_j B_ij M_j` with `m` outputs.
    LinearCombination { input: Povm, m: usize },
    /// `Π'_y = U Π_y U†` with `U = Π_k exp(i s_k λ_k)`.
    Rotation { input: Povm },
}

/// Measurement search at a fixed `(ρ, ∂ρ)` maximizing the (scalarized) CFIM.
#[derive(Debug, Clone)]
pub struct MeasurementProblem {
    ds: DerivedState,
    w: RMat,
    eps: f64,
    seg: MeasSeg,
    guess: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MeasurementOutcome {
    pub run: OptRun,
    pub povm: Povm,
}

impl MeasurementProblem {
    pub fn new(ds: DerivedState, w: Option<RMat>, kind: MeasurementKind) -> Result<Self> {
        ds.validate()?;
        let d = ds.dim();
        let n = ds.nparams();
        let w = Objective { w, ..Objective::qfim() }.weight(n)?;
        let seg = match kind {
            MeasurementKind::Projection => MeasSeg::Projection { d },
            MeasurementKind::LinearCombination { input, m } => {
                if input.dim() != d {
                    return Err(Error::Dimension("input measurement does not match the state".into()));
                }
                if m == 0 || m > input.len() {
                    return Err(Error::Domain(format!(
                        "linear combination needs 1 <= m <= {} outputs, got {m}",
                        input.len()
                    )));
                }
                MeasSeg::Lc { m, input: input.into_ops() }
            }
            MeasurementKind::Rotation { input } => {
                if input.dim() != d {
                    return Err(Error::Dimension("input measurement does not match the state".into()));
                }
                MeasSeg::Rotation { input: input.into_ops(), gens: su_generators(d)? }
            }
        };
        Ok(Self { ds, w, eps: EPS, seg, guess: None })
    }

    /// Raw codec vector used as the first candidate.
    pub fn with_guess(mut self, x: Vec<f64>) -> Result<Self> {
        check_guess("measurement", x.len(), self.seg.len())?;
        self.guess = Some(x);
        Ok(self)
    }

    pub fn decode(&self, x: &[f64]) -> Result<Povm> {
        self.seg.decode(x)
    }

    pub fn value(&self, m: &Povm) -> Result<f64> {
        Ok(scalarize(&crate::asymptotic::cfim(&self.ds, m, self.eps)?, &self.w))
    }
}

impl Candidates for MeasurementProblem {
    fn len(&self) -> usize {
        self.seg.len()
    }

    fn repair(&self, x: &mut [f64]) {
        self.seg.repair(x);
    }

    fn random(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.seg.random(rng)
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.value(&self.decode(x)?)
    }
}

impl Differentiable for MeasurementProblem {
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let m = self.decode(x)?;
        let (g, g_pi) = cfim_gradient(&self.ds, &m, &self.w, self.eps);
        Ok((g.value, self.seg.pull(x, &g_pi)?))
    }
}

/// Optimizes the measurement; gradient ascent is available for linear
/// combinations and rotations only.
pub fn measurement_opt(prob: &MeasurementProblem, algo: &Algorithm, save_all: bool) -> Result<MeasurementOutcome> {
    if matches!(algo, Algorithm::Gradient(_)) && matches!(prob.seg, MeasSeg::Projection { .. }) {
        return Err(Error::Unsupported(
            "projective measurements are optimized by population engines only; use a linear combination or rotation"
                .into(),
        ));
    }
    let guesses: Vec<Vec<f64>> = prob.guess.iter().cloned().collect();
    let x0 = match &prob.guess {
        Some(g) => g.clone(),
        None => prob.random(&mut ChaCha8Rng::seed_from_u64(algo.seed())),
    };
    let run = dispatch(prob, algo, &guesses, x0, save_all)?;
    let povm = prob.decode(&run.best)?;
    Ok(MeasurementOutcome { run, povm })
}

// ---------------------------------------------------------------- comprehensive

/// Parameterization for [`comprehensive_opt`].
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    Lindblad(Lindblad),
    Kraus(KrausChannel),
}

/// Which of probe state (S), controls (C) and measurement (M) are optimized jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "UPPERCASE"))]
pub enum CompKind {
    Sm,
    Sc,
    Cm,
    Scm,
}

impl CompKind {
    fn state(self) -> bool {
        matches!(self, CompKind::Sm | CompKind::Sc | CompKind::Scm)
    }

    fn controls(self) -> bool {
        matches!(self, CompKind::Sc | CompKind::Cm | CompKind::Scm)
    }

    fn measurement(self) -> bool {
        matches!(self, CompKind::Sm | CompKind::Cm | CompKind::Scm)
    }
}

/// Decoded components of a comprehensive candidate; `None` for fixed inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub psi: Option<CVec>,
    pub controls: Option<Vec<Vec<f64>>>,
    pub povm: Option<Povm>,
}

#[derive(Debug, Clone)]
pub struct ComprehensiveOutcome {
    pub run: OptRun,
    pub artifacts: Artifacts,
}

/// Joint search over the concatenated codecs `state ⊕ controls ⊕ measurement`.
#[derive(Debug, Clone)]
pub struct ComprehensiveProblem {
    kind: CompKind,
    dynamics: Dynamics,
    obj: Objective,
    rho0: Option<CMat>,
    state: Option<StateSeg>,
    ctrl: Option<ControlSeg>,
    meas: Option<MeasSeg>,
    guess: Artifacts,
    guess_basis: Option<CMat>,
}

impl ComprehensiveProblem {
    /// `obj` is the figure of merit for SC; the measurement-based kinds use
    /// the CFIM with the weight and regularization of `obj`. `nc` and `bound`
    /// apply when controls are optimized; `rho0` is the fixed probe for CM.
    pub fn new(
        kind: CompKind,
        dynamics: Dynamics,
        obj: Objective,
        nc: usize,
        bound: Option<(f64, f64)>,
        rho0: Option<CMat>,
    ) -> Result<Self> {
        let dynamics = match dynamics {
            Dynamics::Kraus(ch) => {
                if kind != CompKind::Sm {
                    return Err(Error::Unsupported("Kraus channels support the SM combination only".into()));
                }
                ch.validate(1e-6)?;
                Dynamics::Kraus(ch)
            }
            Dynamics::Lindblad(model) if kind.controls() => Dynamics::Lindblad(control_model(model, nc, bound)?),
            Dynamics::Lindblad(model) => {
                model.validate()?;
                Dynamics::Lindblad(model)
            }
        };
        let (d, nparams, k) = match &dynamics {
            Dynamics::Lindblad(m) => (m.dim(), m.nparams(), m.hc.len()),
            Dynamics::Kraus(ch) => (ch.dim(), ch.nparams(), 0),
        };
        if !kind.state() {
            match &rho0 {
                Some(r) if r.shape() == (d, d) => {}
                Some(_) => return Err(Error::Dimension(format!("initial state must be {d}x{d}"))),
                None => return Err(Error::Domain("the CM combination needs a fixed initial state".into())),
            }
        }
        if kind != CompKind::Sc && obj.kind == ObjectiveKind::Hcrb {
            return Err(Error::Unsupported("measurement-based combinations use the CFIM objective".into()));
        }
        if kind == CompKind::Sc {
            check_objective(&obj, nparams, false)?;
        }
        Ok(Self {
            kind,
            dynamics,
            obj,
            rho0,
            state: kind.state().then_some(StateSeg { d }),
            ctrl: kind.controls().then_some(ControlSeg { k, nc, bound }),
            meas: kind.measurement().then_some(MeasSeg::Projection { d }),
            guess: Artifacts { psi: None, controls: None, povm: None },
            guess_basis: None,
        })
    }

    /// Initial components; the measurement guess is a unitary whose columns
    /// form the basis.
    pub fn with_guess(mut self, psi: Option<CVec>, controls: Option<Vec<Vec<f64>>>, basis: Option<CMat>) -> Result<Self> {
        if let (Some(p), Some(s)) = (&psi, &self.state) {
            check_guess("state", p.len(), s.d)?;
        }
        if let (Some(c), Some(s)) = (&controls, &self.ctrl) {
            check_guess("control", c.len(), s.k)?;
            for t in c {
                check_guess("control table", t.len(), s.nc)?;
            }
        }
        if let (Some(b), Some(MeasSeg::Projection { d })) = (&basis, &self.meas) {
            if b.shape() != (*d, *d) {
                return Err(Error::Dimension(format!("measurement basis must be {d}x{d}")));
            }
        }
        self.guess = Artifacts { psi, controls, povm: basis.as_ref().map(Povm::from_basis) };
        self.guess_basis = basis;
        Ok(self)
    }

    pub fn kind(&self) -> CompKind {
        self.kind
    }

    fn parts(&self) -> [usize; 3] {
        [
            self.state.as_ref().map_or(0, StateSeg::len),
            self.ctrl.as_ref().map_or(0, ControlSeg::len),
            self.meas.as_ref().map_or(0, MeasSeg::len),
        ]
    }

    fn split<'a>(&self, x: &'a [f64]) -> [&'a [f64]; 3] {
        let [a, b, _] = self.parts();
        let (s, rest) = x.split_at(a);
        let (ctl, m) = rest.split_at(b);
        [s, ctl, m]
    }

    pub fn decode(&self, x: &[f64]) -> Result<Artifacts> {
        let [s, ctl, m] = self.split(x);
        Ok(Artifacts {
            psi: self.state.as_ref().map(|_| reals_to_cvec(s)),
            controls: self.ctrl.as_ref().map(|seg| seg.decode(ctl)),
            povm: self.meas.as_ref().map(|seg| seg.decode(m)).transpose()?,
        })
    }

    fn initial_state(&self, x: &[f64]) -> CMat {
        match (&self.state, &self.rho0) {
            (Some(seg), _) => seg.rho0(x),
            (None, Some(r)) => r.clone(),
            (None, None) => unreachable!("validated at construction"),
        }
    }

    fn propagation(&self, ctl: &[f64]) -> Result<Propagation> {
        let Dynamics::Lindblad(model) = &self.dynamics else {
            return Err(Error::Unsupported("controls need a Lindblad parameterization".into()));
        };
        match &self.ctrl {
            Some(seg) => Propagation::new(&with_controls(model, seg.decode(ctl))),
            None => Propagation::new(model),
        }
    }

    fn endpoint(&self, x: &[f64]) -> Result<DerivedState> {
        let [s, ctl, _] = self.split(x);
        let rho0 = self.initial_state(s);
        match &self.dynamics {
            Dynamics::Kraus(ch) => crate::dynamics::kraus_apply(&rho0, ch),
            Dynamics::Lindblad(_) => self.propagation(ctl)?.endpoint(&rho0),
        }
    }

    fn objective_for(&self, povm: Option<Povm>) -> Objective {
        match povm {
            Some(m) => Objective { kind: ObjectiveKind::Cfim(Some(m)), ld: LdType::Sld, ..self.obj.clone() },
            None => self.obj.clone(),
        }
    }

    /// Deterministic first candidate: user guesses, zero controls, and
    /// seeded random state and measurement for the remaining parts.
    fn first_candidate(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(self.len());
        if let Some(seg) = &self.state {
            x.extend(match &self.guess.psi {
                Some(p) => cvec_to_reals(p),
                None => seg.random(&mut rng),
            });
        }
        if let Some(seg) = &self.ctrl {
            x.extend(match &self.guess.controls {
                Some(c) => c.concat(),
                None => vec![0.0; seg.len()],
            });
        }
        if let Some(seg) = &self.meas {
            x.extend(match (&self.guess_basis, seg) {
                (Some(b), MeasSeg::Projection { .. }) => basis_to_reals(b),
                _ => seg.random(&mut rng),
            });
        }
        self.repair(&mut x);
        x
    }
}

impl Candidates for ComprehensiveProblem {
    fn len(&self) -> usize {
        self.parts().iter().sum()
    }

    fn blocks(&self) -> Vec<usize> {
        let [a, _, m] = self.parts();
        let mut out = Vec::new();
        if a > 0 {
            out.push(a);
        }
        if let Some(seg) = &self.ctrl {
            out.extend(core::iter::repeat(seg.nc).take(seg.k));
        }
        if m > 0 {
            out.push(m);
        }
        out
    }

    fn repair(&self, x: &mut [f64]) {
        let [a, b, _] = self.parts();
        let (s, rest) = x.split_at_mut(a);
        let (ctl, m) = rest.split_at_mut(b);
        if self.state.is_some() {
            normalize_reals(s);
        }
        if let Some(seg) = &self.ctrl {
            seg.repair(ctl);
        }
        if let Some(seg) = &self.meas {
            seg.repair(m);
        }
    }

    fn random(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        if let Some(seg) = &self.state {
            x.extend(seg.random(rng));
        }
        if let Some(seg) = &self.ctrl {
            x.extend(seg.random(rng));
        }
        if let Some(seg) = &self.meas {
            x.extend(seg.random(rng));
        }
        x
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let ds = self.endpoint(x)?;
        let [_, _, m] = self.split(x);
        let povm = self.meas.as_ref().map(|seg| seg.decode(m)).transpose()?;
        self.objective_for(povm).value(&ds)
    }
}

impl Differentiable for ComprehensiveProblem {
    /// Available for SC only.
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.kind != CompKind::Sc {
            return Err(Error::Unsupported("gradient ascent is available for the SC combination only".into()));
        }
        let [s, ctl, _] = self.split(x);
        let p = self.propagation(ctl)?;
        let (v, g_rho0, table) = p.gradients(&self.initial_state(s), &self.obj)?;
        let mut out = self.state.as_ref().map(|seg| seg.pull(s, &g_rho0)).unwrap_or_default();
        out.extend(table.concat());
        Ok((v, out))
    }
}

/// Joint optimization; gradient ascent is limited to SC.
pub fn comprehensive_opt(prob: &ComprehensiveProblem, algo: &Algorithm, save_all: bool) -> Result<ComprehensiveOutcome> {
    let gradient = matches!(algo, Algorithm::Gradient(_));
    if gradient {
        if prob.kind != CompKind::Sc {
            return Err(Error::Unsupported("gradient ascent is available for the SC combination only".into()));
        }
        let np = match &prob.dynamics {
            Dynamics::Lindblad(m) => m.nparams(),
            Dynamics::Kraus(ch) => ch.nparams(),
        };
        check_objective(&prob.obj, np, true)?;
    }
    let first = prob.first_candidate(algo.seed());
    let run = dispatch(prob, algo, core::slice::from_ref(&first), first.clone(), save_all)?;
    let artifacts = prob.decode(&run.best)?;
    Ok(ComprehensiveOutcome { run, artifacts })
}

// ---------------------------------------------------------------- minimum time

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Search {
    Binary,
    Forward,
}

#[derive(Debug, Clone)]
pub struct MinTime {
    pub t_min: f64,
    pub tspan: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
    pub value: f64,
    pub run: OptRun,
}

/// Shortest prefix of the time grid whose optimized objective reaches
/// `f_target`. Controls are re-optimized for every probed length.
pub fn mintime(prob: &ControlProblem, f_target: f64, search: Search, algo: &Algorithm) -> Result<MinTime> {
    let n = prob.model.nsteps();
    if prob.seg.nc != n {
        return Err(Error::Unsupported("the minimum-time search needs full-resolution controls (Nc = steps)".into()));
    }
    let probe = |m: usize| -> Result<MinTime> {
        let p = prob.truncated(m)?;
        let out = control_opt(&p, algo, false)?;
        Ok(MinTime {
            t_min: p.model.tspan[m],
            tspan: p.model.tspan.clone(),
            value: out.run.best_value,
            controls: out.controls,
            run: out.run,
        })
    };
    let reached = |r: &MinTime| r.value >= f_target;
    match search {
        Search::Forward => {
            let mut best = f64::NEG_INFINITY;
            for m in 1..=n {
                let r = probe(m)?;
                if reached(&r) {
                    return Ok(r);
                }
                best = best.max(r.value);
            }
            Err(Error::NotFound { best })
        }
        Search::Binary => {
            let full = probe(n)?;
            if !reached(&full) {
                return Err(Error::NotFound { best: full.value });
            }
            let (mut lo, mut hi, mut found) = (1, n, full);
            while lo < hi {
                let mid = (lo + hi) / 2;
                let r = probe(mid)?;
                if reached(&r) {
                    hi = mid;
                    found = r;
                } else {
                    lo = mid + 1;
                }
            }
            Ok(found)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotic::{cfim, qfim};
    use crate::dynamics::linspace;
    use crate::linalg::{eye, max_abs, pauli};
    use crate::models::{coherent_spin_state, pauli_controls, plus_state, qubit_frequency, Template};
    use crate::random::{random_povm, random_state_full_rank, random_traceless_hermitian};

    fn qubit_controls(t: f64, points: usize, nc: usize, bound: Option<(f64, f64)>) -> ControlProblem {
        let model = qubit_frequency(1.0, 0.0, 0.1, linspace(0.0, t, points)).with_controls(pauli_controls(), vec![]);
        ControlProblem::new(model, plus_state(), Objective::qfim(), nc, bound).unwrap()
    }

    fn unitary_qubit(t: f64) -> KrausChannel {
        let [_, _, s3] = pauli();
        KrausChannel::unitary(&(&s3 * cr(0.5)), &[&s3 * cr(0.5)], t).unwrap()
    }

    fn qubit_ds(seed: u64, n: usize) -> DerivedState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_state_full_rank(&mut rng, 2);
        let drho = (0..n).map(|_| random_traceless_hermitian(&mut rng, 2) * cr(0.3)).collect();
        DerivedState::new(rho, drho).unwrap()
    }

    fn fd_check<P: Differentiable>(p: &P, x: &[f64], tol: f64) {
        let (_, g) = p.value_and_gradient(x).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            let fd = (p.evaluate(&a).unwrap() - p.evaluate(&b).unwrap()) / (2.0 * h);
            assert!((g[i] - fd).abs() <= tol * fd.abs().max(1e-2), "entry {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn step_grid_is_refined_to_fit_nc() {
        let p = qubit_controls(1.0, 11, 3, None);
        assert_eq!(p.model().nsteps(), 12);
        assert_eq!(p.len(), 9);
    }

    #[test]
    fn empty_bound_and_zero_nc_are_rejected() {
        let model = qubit_frequency(1.0, 0.0, 0.1, linspace(0.0, 1.0, 11)).with_controls(pauli_controls(), vec![]);
        assert!(ControlProblem::new(model.clone(), plus_state(), Objective::qfim(), 0, None).is_err());
        assert!(ControlProblem::new(model, plus_state(), Objective::qfim(), 5, Some((1.0, 1.0))).is_err());
    }

    #[test]
    fn constant_control_never_worse_than_uncontrolled() {
        let p = qubit_controls(5.0, 501, 1, None);
        let f0 = p.value(&[vec![0.0], vec![0.0], vec![0.0]]).unwrap();
        let algo = Algorithm::Pso(PsoParams { max_episode: 20, ..PsoParams::default() });
        let out = control_opt(&p, &algo, false).unwrap();
        assert!(out.run.best_value >= f0);
    }

    #[test]
    fn gradient_controls_respect_bound_exactly() {
        let p = qubit_controls(2.0, 101, 100, Some((-0.2, 0.3)));
        let algo = Algorithm::Gradient(GradParams { epsilon: 0.5, max_episode: 15, ..GradParams::default() });
        let out = control_opt(&p, &algo, true).unwrap();
        assert!(out.controls.iter().flatten().all(|u| (-0.2..=0.3).contains(u)));
        assert!(out.run.history.iter().flatten().all(|u| (-0.2..=0.3).contains(u)));
        assert_eq!(out.run.values.len(), 15);
    }

    #[test]
    fn control_gradient_matches_finite_differences() {
        let p = qubit_controls(1.0, 21, 4, None);
        let x = p.random(&mut ChaCha8Rng::seed_from_u64(3));
        fd_check(&p, &x, 1e-5);
    }

    #[test]
    fn hcrb_objectives_are_checked() {
        let model = qubit_frequency(1.0, 0.0, 0.1, linspace(0.0, 1.0, 11)).with_controls(pauli_controls(), vec![]);
        let p = ControlProblem::new(model, plus_state(), Objective::hcrb(), 2, None).unwrap();
        let pso = Algorithm::Pso(PsoParams { max_episode: 1, ..PsoParams::default() });
        assert!(matches!(control_opt(&p, &pso, false), Err(Error::Unsupported(_))));
        let ch = unitary_qubit(1.0);
        let s = StateProblem::new(Parameterization::Kraus(ch), Objective::hcrb());
        assert!(matches!(state_opt(&s, &Algorithm::Gradient(GradParams::default()), false), Err(Error::Unsupported(_))));
    }

    #[test]
    fn ri_state_reaches_generator_spread() {
        let s = StateProblem::new(Parameterization::Kraus(unitary_qubit(2.0)), Objective::qfim());
        let out = state_opt(&s, &Algorithm::Ri(RiParams::default()), false).unwrap();
        assert!((out.run.best_value - 4.0).abs() < 1e-6);
        assert!((out.psi.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ri_needs_a_kraus_channel() {
        let m = qubit_frequency(1.0, 0.0, 0.1, linspace(0.0, 1.0, 11));
        let s = StateProblem::new(Parameterization::Lindblad(Propagation::new(&m).unwrap()), Objective::qfim());
        assert!(matches!(state_opt(&s, &Algorithm::Ri(RiParams::default()), false), Err(Error::Unsupported(_))));
    }

    #[test]
    fn state_gradient_matches_finite_differences() {
        let m = qubit_frequency(1.0, 0.05, 0.1, linspace(0.0, 2.0, 41));
        let s = StateProblem::new(Parameterization::Lindblad(Propagation::new(&m).unwrap()), Objective::qfim());
        let x = s.random(&mut ChaCha8Rng::seed_from_u64(8));
        fd_check(&s, &x, 1e-5);
    }

    #[test]
    fn lmg_state_search_beats_coherent_probe() {
        let t = Template::from_id("lmg", &Default::default()).unwrap();
        let (h, dh) = t.eval(&[0.5]).unwrap();
        let ch = KrausChannel::unitary(&h, &dh, 10.0).unwrap();
        let coherent = coherent_spin_state(4, core::f64::consts::FRAC_PI_2, core::f64::consts::FRAC_PI_2).unwrap();
        let s = StateProblem::new(Parameterization::Kraus(ch), Objective::qfim()).with_guess(coherent.clone()).unwrap();
        let f0 = s.value(&coherent).unwrap();
        let algo = Algorithm::Gradient(GradParams { max_episode: 100, ..GradParams::default() });
        let out = state_opt(&s, &algo, false).unwrap();
        assert!(out.run.best_value > f0, "{} vs {f0}", out.run.best_value);
        assert!((out.psi.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let s = StateProblem::new(Parameterization::Kraus(unitary_qubit(2.0)), Objective::qfim());
        let first = state_opt(&s, &Algorithm::Ri(RiParams::default()), false).unwrap();
        let again = s.clone().with_guess(first.psi.clone()).unwrap();
        let second = state_opt(&again, &Algorithm::Ri(RiParams::default()), false).unwrap();
        assert!((second.run.best_value - first.run.best_value).abs() < 1e-8);
    }

    #[test]
    fn identity_rotation_keeps_input_cfim() {
        let ds = qubit_ds(4, 2);
        let input = Povm::new(random_povm(&mut ChaCha8Rng::seed_from_u64(5), 2, 3)).unwrap();
        let p = MeasurementProblem::new(ds.clone(), None, MeasurementKind::Rotation { input: input.clone() }).unwrap();
        let rotated = p.decode(&[0.0; 3]).unwrap();
        let a = cfim(&ds, &input, EPS).unwrap();
        let b = cfim(&ds, &rotated, EPS).unwrap();
        assert!((a - b).amax() < 1e-14);
    }

    #[test]
    fn measurement_gradients_match_finite_differences() {
        let ds = qubit_ds(6, 2);
        let input = Povm::new(random_povm(&mut ChaCha8Rng::seed_from_u64(7), 2, 4)).unwrap();
        let w = RMat::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.5]);
        let rot = MeasurementProblem::new(ds.clone(), Some(w.clone()), MeasurementKind::Rotation { input: input.clone() })
            .unwrap();
        fd_check(&rot, &[0.3, 1.1, 2.0], 1e-5);
        let lc = MeasurementProblem::new(ds, Some(w), MeasurementKind::LinearCombination { input, m: 3 }).unwrap();
        let mut x = lc.random(&mut ChaCha8Rng::seed_from_u64(9));
        lc.repair(&mut x);
        fd_check(&lc, &x, 1e-5);
    }

    #[test]
    fn linear_combination_stays_feasible() {
        let ds = qubit_ds(10, 1);
        let input = Povm::new(random_povm(&mut ChaCha8Rng::seed_from_u64(11), 2, 5)).unwrap();
        let p = MeasurementProblem::new(ds, None, MeasurementKind::LinearCombination { input: input.clone(), m: 3 })
            .unwrap();
        let algo = Algorithm::Gradient(GradParams { max_episode: 30, ..GradParams::default() });
        let out = measurement_opt(&p, &algo, false).unwrap();
        let b = &out.run.best;
        assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
        for j in 0..5 {
            assert!(((0..3).map(|i| b[i * 5 + j]).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let total = out.povm.ops().iter().fold(CMat::zeros(2, 2), |a, m| a + m);
        assert!(max_abs(&(total - eye(2))) < 1e-10);
        assert!(MeasurementProblem::new(qubit_ds(1, 1), None, MeasurementKind::LinearCombination { input, m: 6 })
            .is_err());
    }

    #[test]
    fn projective_search_attains_qfi() {
        let ds = qubit_ds(12, 1);
        let p = MeasurementProblem::new(ds.clone(), None, MeasurementKind::Projection).unwrap();
        assert!(matches!(
            measurement_opt(&p, &Algorithm::Gradient(GradParams::default()), false),
            Err(Error::Unsupported(_))
        ));
        let out = measurement_opt(&p, &Algorithm::De(DeParams { max_episode: 200, ..DeParams::default() }), false).unwrap();
        let f = qfim(&ds, LdType::Sld, EPS).unwrap()[(0, 0)];
        assert!(out.run.best_value >= 0.99 * f, "{} vs {f}", out.run.best_value);
        let b = out.povm.ops();
        assert!(max_abs(&(&b[0] * &b[1])) <= 1e-8);
        assert!(max_abs(&(&b[0] + &b[1] - eye(2))) <= 1e-8);
    }

    #[test]
    fn degenerate_columns_are_completed() {
        let q = orthonormal_columns(&CMat::zeros(3, 3));
        assert!(max_abs(&(q.adjoint() * &q - eye(3))) < 1e-12);
        let mut dup = CMat::zeros(3, 3);
        dup.fill(cr(1.0));
        let q = orthonormal_columns(&dup);
        assert!(max_abs(&(q.adjoint() * &q - eye(3))) < 1e-12);
    }

    #[test]
    fn comprehensive_kind_restrictions() {
        let ch = unitary_qubit(1.0);
        assert!(matches!(
            ComprehensiveProblem::new(CompKind::Sc, Dynamics::Kraus(ch.clone()), Objective::qfim(), 1, None, None),
            Err(Error::Unsupported(_))
        ));
        assert!(ComprehensiveProblem::new(CompKind::Sm, Dynamics::Kraus(ch), Objective::qfim(), 1, None, None).is_ok());
        let m = qubit_frequency(1.0, 0.0, 0.1, linspace(0.0, 1.0, 11)).with_controls(pauli_controls(), vec![]);
        assert!(ComprehensiveProblem::new(CompKind::Cm, Dynamics::Lindblad(m.clone()), Objective::qfim(), 2, None, None)
            .is_err());
        let sm = ComprehensiveProblem::new(CompKind::Sm, Dynamics::Lindblad(m), Objective::qfim(), 1, None, None).unwrap();
        assert!(matches!(
            comprehensive_opt(&sm, &Algorithm::Gradient(GradParams::default()), false),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn sc_gradient_matches_finite_differences() {
        let m = qubit_frequency(1.0, 0.0, 0.1, linspace(0.0, 1.0, 21)).with_controls(pauli_controls(), vec![]);
        let p = ComprehensiveProblem::new(CompKind::Sc, Dynamics::Lindblad(m), Objective::qfim(), 4, None, None).unwrap();
        let mut x = p.random(&mut ChaCha8Rng::seed_from_u64(13));
        p.repair(&mut x);
        assert_eq!(x.len(), 4 + 12);
        fd_check(&p, &x, 1e-5);
    }

    #[test]
    fn sm_with_known_measurement_matches_state_search() {
        // Unitary qubit: |+⟩ with the ± basis attains F = t².
        let ch = unitary_qubit(2.0);
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let pm = crate::linalg::from_real(2, &[s, s, s, -s]);
        let plus = crate::linalg::ket(&[cr(s), cr(s)]);
        let p = ComprehensiveProblem::new(CompKind::Sm, Dynamics::Kraus(ch), Objective::qfim(), 1, None, None)
            .unwrap()
            .with_guess(Some(plus), None, Some(pm))
            .unwrap();
        let algo = Algorithm::De(DeParams { max_episode: 5, ..DeParams::default() });
        let out = comprehensive_opt(&p, &algo, false).unwrap();
        assert!((out.run.best_value - 4.0).abs() < 1e-6);
        let art = out.artifacts;
        assert!(art.controls.is_none());
        assert_eq!(art.povm.unwrap().len(), 2);
    }

    fn unitary_with_controls(points: usize) -> ControlProblem {
        let model = qubit_frequency(1.0, 0.0, 0.0, linspace(0.0, 4.0, points)).with_controls(pauli_controls(), vec![]);
        let n = points - 1;
        ControlProblem::new(model, plus_state(), Objective::qfim(), n, None)
            .unwrap()
            .with_guess(vec![vec![0.0; n]; 3])
            .unwrap()
    }

    #[test]
    fn mintime_searches_agree_on_monotone_objective() {
        // With no ascent steps the objective is the uncontrolled F = t².
        let p = unitary_with_controls(41);
        let algo = Algorithm::Gradient(GradParams { max_episode: 0, ..GradParams::default() });
        let a = mintime(&p, 4.0 - 1e-9, Search::Binary, &algo).unwrap();
        let b = mintime(&p, 4.0 - 1e-9, Search::Forward, &algo).unwrap();
        assert_eq!(a.t_min, b.t_min);
        assert!((a.t_min - 2.0).abs() < 1e-12);
        assert_eq!(a.tspan.len(), 21);
        assert_eq!(a.controls[0].len(), 20);
    }

    #[test]
    fn mintime_trivial_and_unreachable_targets() {
        let p = unitary_with_controls(21);
        let algo = Algorithm::Gradient(GradParams { max_episode: 0, ..GradParams::default() });
        let first = p.tspan()[1];
        let r = mintime(&p, first * first - 1e-12, Search::Binary, &algo).unwrap();
        assert_eq!(r.t_min, first);
        assert!(matches!(mintime(&p, 100.0, Search::Binary, &algo), Err(Error::NotFound { .. })));
        assert!(matches!(mintime(&p, 100.0, Search::Forward, &algo), Err(Error::NotFound { .. })));
        let coarse = ControlProblem::new(p.model().clone(), plus_state(), Objective::qfim(), 2, None).unwrap();
        assert!(matches!(mintime(&coarse, 1.0, Search::Binary, &algo), Err(Error::Unsupported(_))));
    }
}
