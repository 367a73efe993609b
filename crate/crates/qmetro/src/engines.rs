//! Optimization machinery: exact gradients of Fisher-type objectives through
//! Lindblad and Kraus parameterizations, Adam, PSO, DE, Nelder–Mead and the
//! reverse-iterative state search.
//!
//! All objectives are maximized. For several parameters the scalar figure is
//! `1/Tr(W F⁻¹)`; for one parameter it is the Fisher information itself.
//! Matrix gradients `G` are with respect to the real inner product
//! `Re Tr(G† δX)`.

use crate::asymptotic::{outcome_stats, qfim, sld, weighted_inverse_trace, LdType, Rep};
use crate::dynamics::{KrausChannel, Lindblad, Superops};
use crate::error::{Error, Result};
use crate::linalg::{anticommutator, cr, eigh, expm_frechet, sylvester_symmetric, unvec, vec, CMat, CVec, RMat};
use crate::prelude::*;
use crate::sic::sic_povm;
use crate::state::{DerivedState, Povm};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Figure of merit evaluated on `(ρ, ∂ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveKind {
    Qfim,
    /// Classical information of a POVM; `None` selects the SIC-POVM.
    Cfim(Option<Povm>),
    Hcrb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub ld: LdType,
    /// Weight matrix; `None` means identity. Ignored for one parameter.
    pub w: Option<RMat>,
    pub eps: f64,
}

/// Objective value with its sensitivities to `ρ` and each `∂_a ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointGradient {
    pub value: f64,
    pub d_rho: CMat,
    pub d_drho: Vec<CMat>,
}

impl Objective {
    pub fn qfim() -> Self {
        Self { kind: ObjectiveKind::Qfim, ld: LdType::Sld, w: None, eps: crate::asymptotic::EPS }
    }

    pub fn cfim(m: Option<Povm>) -> Self {
        Self { kind: ObjectiveKind::Cfim(m), ..Self::qfim() }
    }

    pub fn hcrb() -> Self {
        Self { kind: ObjectiveKind::Hcrb, ..Self::qfim() }
    }

    pub fn with_weight(mut self, w: RMat) -> Self {
        self.w = Some(w);
        self
    }

    pub fn weight(&self, n: usize) -> Result<RMat> {
        match &self.w {
            _ if n == 1 => Ok(RMat::identity(1, 1)),
            None => Ok(RMat::identity(n, n)),
            Some(w) if w.shape() == (n, n) => Ok(w.clone()),
            Some(w) => Err(Error::Dimension(format!("W is {}x{}, expected {n}x{n}", w.nrows(), w.ncols()))),
        }
    }

    /// The POVM used by a classical objective for states of dimension `d`.
    pub fn povm(&self, d: usize) -> Result<Option<Povm>> {
        match &self.kind {
            ObjectiveKind::Cfim(Some(m)) if m.dim() != d => {
                Err(Error::Dimension("POVM does not match the state dimension".into()))
            }
            ObjectiveKind::Cfim(Some(m)) => Ok(Some(m.clone())),
            ObjectiveKind::Cfim(None) => Ok(Some(sic_povm(d)?)),
            _ => Ok(None),
        }
    }

    fn check_hcrb(n: usize) -> Result<()> {
        if n < 2 {
            return Err(Error::Unsupported(
                "the Holevo bound equals the inverse QFI for one parameter; use the QFIM objective".into(),
            ));
        }
        Ok(())
    }

    pub fn value(&self, ds: &DerivedState) -> Result<f64> {
        let n = ds.nparams();
        let w = self.weight(n)?;
        match &self.kind {
            ObjectiveKind::Hcrb => {
                Self::check_hcrb(n)?;
                Ok(1.0 / crate::hcrb::hcrb(ds, &w, self.eps)?)
            }
            kind => {
                let info = match kind {
                    ObjectiveKind::Qfim => qfim(ds, self.ld, self.eps)?,
                    _ => {
                        let m = self.povm(ds.dim())?.unwrap_or_else(|| Povm::computational(ds.dim()));
                        crate::asymptotic::cfim(ds, &m, self.eps)?
                    }
                };
                Ok(scalarize(&info, &w))
            }
        }
    }

    /// Value and exact endpoint sensitivities; SLD-based QFIM or CFIM only.
    pub fn gradient(&self, ds: &DerivedState) -> Result<EndpointGradient> {
        let n = ds.nparams();
        let w = self.weight(n)?;
        match &self.kind {
            ObjectiveKind::Hcrb => {
                Self::check_hcrb(n)?;
                Err(Error::Unsupported("gradient engines are not available for the Holevo objective".into()))
            }
            ObjectiveKind::Qfim => {
                if self.ld != LdType::Sld {
                    return Err(Error::Unsupported("gradient engines use the SLD-based QFIM only".into()));
                }
                Ok(qfim_gradient(ds, &w, self.eps))
            }
            ObjectiveKind::Cfim(_) => {
                let m = self.povm(ds.dim())?.unwrap_or_else(|| Povm::computational(ds.dim()));
                Ok(cfim_gradient(ds, &m, &w, self.eps).0)
            }
        }
    }
}

/// `F₀₀` for one parameter, `1/Tr(W F⁻¹)` otherwise (0 when `F` is singular).
pub fn scalarize(info: &RMat, w: &RMat) -> f64 {
    if info.nrows() == 1 {
        return info[(0, 0)];
    }
    let t = weighted_inverse_trace(info, w);
    if t.is_finite() && t > 0.0 {
        1.0 / t
    } else {
        0.0
    }
}

/// `K_ab = ∂f/∂F_ab` for the scalarized objective, or `None` when `F` is singular.
fn scalar_sensitivity(info: &RMat, w: &RMat) -> Option<(f64, RMat)> {
    let n = info.nrows();
    if n == 1 {
        return Some((info[(0, 0)], RMat::identity(1, 1)));
    }
    let inv = crate::asymptotic::spd_inverse(info)?;
    let f = 1.0 / (w * &inv).trace();
    let omega = &inv * w * &inv;
    Some((f, omega * (f * f)))
}

fn qfim_gradient(ds: &DerivedState, w: &RMat, eps: f64) -> EndpointGradient {
    let n = ds.nparams();
    let d = ds.dim();
    let l = sld(ds, Rep::Original, eps);
    let info = RMat::from_fn(n, n, |a, b| 0.5 * crate::linalg::trace_prod(&ds.rho, &anticommutator(&l[a], &l[b])).re);
    let Some((value, k)) = scalar_sensitivity(&info, w) else {
        return EndpointGradient { value: 0.0, d_rho: CMat::zeros(d, d), d_drho: vec![CMat::zeros(d, d); n] };
    };
    let mut d_rho = CMat::zeros(d, d);
    let mut d_drho = vec![CMat::zeros(d, d); n];
    for a in 0..n {
        for b in 0..n {
            let kab = k[(a, b)];
            if kab == 0.0 {
                continue;
            }
            d_drho[a] += &l[b] * cr(kab);
            d_drho[b] += &l[a] * cr(kab);
            d_rho -= anticommutator(&l[a], &l[b]) * cr(0.5 * kab);
        }
    }
    EndpointGradient { value, d_rho, d_drho }
}

/// Scalarized CFIM value, its endpoint gradient and the gradient with respect
/// to each POVM element.
pub fn cfim_gradient(ds: &DerivedState, m: &Povm, w: &RMat, eps: f64) -> (EndpointGradient, Vec<CMat>) {
    let n = ds.nparams();
    let d = ds.dim();
    let (p, dp) = outcome_stats(ds, m);
    let mut info = RMat::zeros(n, n);
    for (py, dpy) in p.iter().zip(&dp) {
        if *py >= eps {
            info += RMat::from_fn(n, n, |a, b| dpy[a] * dpy[b] / py);
        }
    }
    let zero = || EndpointGradient { value: 0.0, d_rho: CMat::zeros(d, d), d_drho: vec![CMat::zeros(d, d); n] };
    let Some((value, k)) = scalar_sensitivity(&info, w) else {
        return (zero(), vec![CMat::zeros(d, d); m.len()]);
    };
    let mut g = EndpointGradient { value, ..zero() };
    let mut g_povm = Vec::with_capacity(m.len());
    for (y, op) in m.ops().iter().enumerate() {
        let py = p[y];
        if py < eps {
            g_povm.push(CMat::zeros(d, d));
            continue;
        }
        // ∂f/∂(∂_c p_y) and ∂f/∂p_y.
        let s: Vec<f64> = (0..n).map(|c| (0..n).map(|b| (k[(c, b)] + k[(b, c)]) * dp[y][b] / py).sum()).collect();
        let mut t = 0.0;
        for a in 0..n {
            for b in 0..n {
                t -= k[(a, b)] * dp[y][a] * dp[y][b] / (py * py);
            }
        }
        let mut gp = &ds.rho * cr(t);
        for c in 0..n {
            g.d_drho[c] += op * cr(s[c]);
            gp += &ds.drho[c] * cr(s[c]);
        }
        g.d_rho += op * cr(t);
        g_povm.push(gp);
    }
    (g, g_povm)
}

/// Sensitivities of a scalar `G(L_1, …, L_n)` of the SLDs.
#[derive(Debug, Clone, PartialEq)]
pub struct PullbackResult {
    pub d_rho: CMat,
    pub d_drho: Vec<CMat>,
    /// `h_a` solving `ρh_a + h_aρ = ∂G/∂L_a`.
    pub h: Vec<CMat>,
}

/// Pulls `∂G/∂L_a` back to `∂G/∂ρ = −Σ_a (L_a h_a + h_a L_a)` and `∂G/∂(∂_aρ) = 2h_a`.
pub fn qfi_pullback(ds: &DerivedState, d_l: &[CMat], eps: f64) -> Result<PullbackResult> {
    if d_l.len() != ds.nparams() {
        return Err(Error::Dimension("one sensitivity per parameter is required".into()));
    }
    let l = sld(ds, Rep::Original, eps);
    let d = ds.dim();
    let h: Vec<CMat> = d_l.iter().map(|s| sylvester_symmetric(&ds.rho, s, eps)).collect();
    let mut d_rho = CMat::zeros(d, d);
    for (la, ha) in l.iter().zip(&h) {
        d_rho -= anticommutator(la, ha);
    }
    let d_drho = h.iter().map(|ha| ha * cr(2.0)).collect();
    Ok(PullbackResult { d_rho, d_drho, h })
}

/// Lindblad parameterization with cached step propagators.
#[derive(Debug, Clone)]
pub struct Propagation {
    model: Lindblad,
    ops: Superops,
    props: Vec<CMat>,
}

/// Stored forward pass: vectorized `ρ_j` and `∂_a ρ_j` for `j = 0..=N`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub rho: Vec<CVec>,
    pub drho: Vec<Vec<CVec>>,
}

impl Propagation {
    pub fn new(model: &Lindblad) -> Result<Self> {
        model.validate()?;
        let ops = model.superops();
        let props = model.propagators(&ops)?;
        Ok(Self { model: model.clone(), ops, props })
    }

    pub fn model(&self) -> &Lindblad {
        &self.model
    }

    fn check(&self, rho0: &CMat) -> Result<()> {
        let d = self.model.dim();
        if rho0.shape() != (d, d) {
            return Err(Error::Dimension(format!("initial state must be {d}x{d}")));
        }
        Ok(())
    }

    pub fn endpoint(&self, rho0: &CMat) -> Result<DerivedState> {
        self.check(rho0)?;
        let d = self.model.dim();
        let (rho, drho) =
            crate::dynamics::advance(&self.props, &self.ops.dh, &self.model.tspan, vec(rho0), d, self.model.nparams());
        Ok(DerivedState { rho: unvec(&rho, d)?, drho: drho.iter().map(|v| unvec(v, d)).collect::<Result<_>>()? })
    }

    pub fn trajectory(&self, rho0: &CMat) -> Result<Trajectory> {
        self.check(rho0)?;
        let d = self.model.dim();
        let np = self.model.nparams();
        let mut rho = vec![vec(rho0)];
        let mut drho = vec![vec![CVec::zeros(d * d); np]];
        for (j, e) in self.props.iter().enumerate() {
            let dt = cr(self.model.tspan[j + 1] - self.model.tspan[j]);
            let r = e * &rho[j];
            let dr = (0..np).map(|a| &self.ops.dh[a] * &r * dt + e * &drho[j][a]).collect();
            rho.push(r);
            drho.push(dr);
        }
        Ok(Trajectory { rho, drho })
    }

    /// Reverse sweep from endpoint sensitivities. Returns the gradient with
    /// respect to `ρ₀` and, when `controls` is set, the per-step control
    /// gradients `[k][j]`.
    pub fn backward(&self, traj: &Trajectory, g: &EndpointGradient, controls: bool) -> Result<(CMat, Vec<Vec<f64>>)> {
        let d = self.model.dim();
        let n = self.model.nsteps();
        let np = self.model.nparams();
        let nk = if controls { self.ops.hc.len() } else { 0 };
        let mut abar = vec(&g.d_rho);
        let mut bbar: Vec<CVec> = g.d_drho.iter().map(vec).collect();
        let dh_adj: Vec<CMat> = self.ops.dh.iter().map(|m| m.adjoint()).collect();
        let mut steps = vec![vec![0.0; n]; nk];
        for j in (1..=n).rev() {
            let dt = self.model.tspan[j] - self.model.tspan[j - 1];
            let mut atil = abar.clone();
            for a in 0..np {
                atil += &dh_adj[a] * &bbar[a] * cr(dt);
            }
            if nk > 0 {
                let mut gm = &atil * traj.rho[j - 1].adjoint();
                for a in 0..np {
                    gm += &bbar[a] * traj.drho[j - 1][a].adjoint();
                }
                let gen = self.model.generator(&self.ops, j - 1) * cr(dt);
                let (_, p) = expm_frechet(&gen.adjoint(), &gm)?;
                for (k, ck) in self.ops.hc.iter().enumerate() {
                    steps[k][j - 1] = dt * ck.zip_map(&p, |x, y| (x.conj() * y).re).sum();
                }
            }
            let eh = self.props[j - 1].adjoint();
            abar = &eh * atil;
            for b in bbar.iter_mut() {
                *b = &eh * &*b;
            }
        }
        Ok((unvec(&abar, d)?, steps))
    }

    /// Objective value with its gradients with respect to `ρ₀` and every
    /// control-table entry (`[k][c]`).
    pub fn gradients(&self, rho0: &CMat, obj: &Objective) -> Result<(f64, CMat, Vec<Vec<f64>>)> {
        let traj = self.trajectory(rho0)?;
        let d = self.model.dim();
        let last = traj.rho.len() - 1;
        let ds = DerivedState {
            rho: unvec(&traj.rho[last], d)?,
            drho: traj.drho[last].iter().map(|v| unvec(v, d)).collect::<Result<_>>()?,
        };
        let g = obj.gradient(&ds)?;
        let (g_rho0, steps) = self.backward(&traj, &g, !self.ops.hc.is_empty())?;
        let n = self.model.nsteps();
        let table = self
            .model
            .ctrl
            .iter()
            .zip(&steps)
            .map(|(c, s)| {
                let nc = c.len().max(1);
                let mut out = vec![0.0; nc];
                for (j, v) in s.iter().enumerate() {
                    out[j * nc / n] += v;
                }
                out
            })
            .collect();
        Ok((g.value, g_rho0, table))
    }

    /// Gradient of `obj` with respect to every control-table entry, `[k][c]`.
    pub fn control_gradient(&self, rho0: &CMat, obj: &Objective) -> Result<(f64, Vec<Vec<f64>>)> {
        let (v, _, table) = self.gradients(rho0, obj)?;
        Ok((v, table))
    }
}

/// Exact `δf/δu_k` for every control-table entry of `model`.
pub fn grape_gradient(model: &Lindblad, rho0: &CMat, obj: &Objective) -> Result<Vec<Vec<f64>>> {
    Ok(Propagation::new(model)?.control_gradient(rho0, obj)?.1)
}

/// Linear map `ρ₀ ↦ (ρ, ∂ρ)` used by state optimization.
#[derive(Debug, Clone)]
pub enum Parameterization {
    Lindblad(Propagation),
    Kraus(KrausChannel),
}

impl Parameterization {
    pub fn dim(&self) -> usize {
        match self {
            Parameterization::Lindblad(p) => p.model.dim(),
            Parameterization::Kraus(k) => k.dim(),
        }
    }

    pub fn nparams(&self) -> usize {
        match self {
            Parameterization::Lindblad(p) => p.model.nparams(),
            Parameterization::Kraus(k) => k.nparams(),
        }
    }

    pub fn apply(&self, rho0: &CMat) -> Result<DerivedState> {
        match self {
            Parameterization::Lindblad(p) => p.endpoint(rho0),
            Parameterization::Kraus(k) => crate::dynamics::kraus_apply(rho0, k),
        }
    }

    /// Objective value and its gradient with respect to `ρ₀`.
    pub fn state_gradient(&self, rho0: &CMat, obj: &Objective) -> Result<(f64, CMat)> {
        match self {
            Parameterization::Lindblad(p) => {
                let traj = p.trajectory(rho0)?;
                let d = p.model.dim();
                let last = traj.rho.len() - 1;
                let ds = DerivedState {
                    rho: unvec(&traj.rho[last], d)?,
                    drho: traj.drho[last].iter().map(|v| unvec(v, d)).collect::<Result<_>>()?,
                };
                let g = obj.gradient(&ds)?;
                Ok((g.value, p.backward(&traj, &g, false)?.0))
            }
            Parameterization::Kraus(ch) => {
                let ds = crate::dynamics::kraus_apply(rho0, ch)?;
                let g = obj.gradient(&ds)?;
                let d = ch.dim();
                let mut out = CMat::zeros(d, d);
                for (k, dks) in ch.k.iter().zip(&ch.dk) {
                    out += k.adjoint() * &g.d_rho * k;
                    for (dk, ga) in dks.iter().zip(&g.d_drho) {
                        out += dk.adjoint() * ga * k + k.adjoint() * ga * dk;
                    }
                }
                Ok((g.value, out))
            }
        }
    }
}

/// Interleaved `[re₀, im₀, re₁, im₁, …]`.
pub fn cvec_to_reals(v: &CVec) -> Vec<f64> {
    v.iter().flat_map(|z| [z.re, z.im]).collect()
}

pub fn reals_to_cvec(x: &[f64]) -> CVec {
    CVec::from_fn(x.len() / 2, |i, _| crate::linalg::c(x[2 * i], x[2 * i + 1]))
}

/// Scales a real-encoded state vector to unit norm (the first basis state if it is zero).
pub fn normalize_reals(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        x.iter_mut().for_each(|v| *v /= norm);
    } else {
        x.iter_mut().for_each(|v| *v = 0.0);
        if let Some(v) = x.first_mut() {
            *v = 1.0;
        }
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

const ADAM_DENOM: f64 = 1e-8;

/// One ascent step: Adam with bias correction, or `x += ε g` when `adam` is off.
pub fn adam_step(x: &mut [f64], g: &[f64], st: &mut AdamState, p: &GradParams) {
    debug_assert_eq!(x.len(), g.len());
    if !p.adam {
        for (xi, gi) in x.iter_mut().zip(g) {
            *xi += p.epsilon * gi;
        }
        return;
    }
    if st.m.len() != x.len() {
        *st = AdamState { m: vec![0.0; x.len()], v: vec![0.0; x.len()], t: 0 };
    }
    st.t += 1;
    let c1 = 1.0 - p.beta1.powi(st.t as i32);
    let c2 = 1.0 - p.beta2.powi(st.t as i32);
    for i in 0..x.len() {
        st.m[i] = p.beta1 * st.m[i] + (1.0 - p.beta1) * g[i];
        st.v[i] = p.beta2 * st.v[i] + (1.0 - p.beta2) * g[i] * g[i];
        let mh = if c1 > 0.0 { st.m[i] / c1 } else { st.m[i] };
        let vh = if c2 > 0.0 { st.v[i] / c2 } else { st.v[i] };
        x[i] += p.epsilon * mh / (vh.sqrt() + ADAM_DENOM);
    }
}

/// Gradient-ascent settings (GRAPE and the pure-state gradient search).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct GradParams {
    pub adam: bool,
    pub epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub max_episode: usize,
    /// Seeds the random initial guess when none is supplied.
    pub seed: u64,
}

impl Default for GradParams {
    fn default() -> Self {
        Self { adam: true, epsilon: 0.01, beta1: 0.90, beta2: 0.99, max_episode: 300, seed: 1234 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct PsoParams {
    pub p_num: usize,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_episode: usize,
    /// Every this many episodes all particles jump to the global best.
    pub reset_every: Option<usize>,
    pub seed: u64,
}

impl Default for PsoParams {
    fn default() -> Self {
        Self { p_num: 10, c0: 1.0, c1: 2.0, c2: 2.0, max_episode: 1000, reset_every: Some(100), seed: 1234 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct DeParams {
    pub p_num: usize,
    pub c: f64,
    pub cr: f64,
    pub max_episode: usize,
    pub seed: u64,
}

impl Default for DeParams {
    fn default() -> Self {
        Self { p_num: 10, c: 1.0, cr: 0.5, max_episode: 1000, seed: 1234 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct NmParams {
    pub p_num: usize,
    pub ar: f64,
    pub ae: f64,
    pub ac: f64,
    pub as0: f64,
    pub max_episode: usize,
    pub seed: u64,
}

impl Default for NmParams {
    fn default() -> Self {
        Self { p_num: 10, ar: 1.0, ae: 2.0, ac: 0.5, as0: 0.5, max_episode: 1000, seed: 1234 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct RiParams {
    pub max_episode: usize,
    pub seed: u64,
}

impl Default for RiParams {
    fn default() -> Self {
        Self { max_episode: 300, seed: 1234 }
    }
}

/// Log of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptRun {
    /// Objective per episode; best-so-far for the population engines and RI,
    /// the current iterate's value for gradient ascent.
    pub values: Vec<f64>,
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Best candidate after every episode when requested.
    pub history: Vec<Vec<f64>>,
}

impl OptRun {
    fn new() -> Self {
        Self { values: Vec::new(), best: Vec::new(), best_value: f64::NEG_INFINITY, history: Vec::new() }
    }

    fn offer(&mut self, x: &[f64], f: f64) {
        if f > self.best_value || self.best.is_empty() {
            self.best_value = f;
            self.best = x.to_vec();
        }
    }

    fn log(&mut self, f: f64, save_all: bool) {
        self.values.push(f);
        if save_all {
            self.history.push(self.best.clone());
        }
    }
}

/// Real-coded search space for the population engines.
pub trait Candidates: Sync {
    fn len(&self) -> usize;

    /// Consecutive coordinate blocks; DE forces one crossover entry per block.
    fn blocks(&self) -> Vec<usize> {
        vec![self.len()]
    }

    /// Maps an arbitrary vector into the feasible set (clipping, normalization).
    fn repair(&self, x: &mut [f64]);

    fn random(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn evaluate(&self, x: &[f64]) -> Result<f64>;
}

/// Search space that also supplies exact gradients.
pub trait Differentiable: Candidates {
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[cfg(feature = "parallel")]
fn evaluate_all<P: Candidates + ?Sized>(p: &P, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    xs.par_iter().map(|x| p.evaluate(x)).collect()
}

#[cfg(not(feature = "parallel"))]
fn evaluate_all<P: Candidates + ?Sized>(p: &P, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    xs.iter().map(|x| p.evaluate(x)).collect()
}

/// First `count` guesses (repaired), padded with random candidates.
fn initial_population<P: Candidates + ?Sized>(p: &P, guesses: &[Vec<f64>], count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut pop = Vec::with_capacity(count);
    for g in guesses.iter().take(count) {
        if g.len() != p.len() {
            return Err(Error::Dimension(format!("initial guess has {} entries, expected {}", g.len(), p.len())));
        }
        let mut x = g.clone();
        p.repair(&mut x);
        pop.push(x);
    }
    while pop.len() < count {
        let mut x = p.random(rng);
        p.repair(&mut x);
        pop.push(x);
    }
    Ok(pop)
}

/// Particle swarm with velocity `c₀δu + r₁c₁(pb − u) + r₂c₂(gb − u)`.
pub fn pso<P: Candidates + ?Sized>(p: &P, prm: &PsoParams, guesses: &[Vec<f64>], save_all: bool) -> Result<OptRun> {
    if prm.p_num < 2 {
        return Err(Error::Domain("PSO needs at least two particles".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(prm.seed);
    let mut x = initial_population(p, guesses, prm.p_num, &mut rng)?;
    let mut vel = vec![vec![0.0; p.len()]; prm.p_num];
    let mut pb = x.clone();
    let mut pbf = vec![f64::NEG_INFINITY; prm.p_num];
    let mut run = OptRun::new();
    for m in 1..=prm.max_episode {
        let f = evaluate_all(p, &x)?;
        for i in 0..prm.p_num {
            if f[i] > pbf[i] {
                pbf[i] = f[i];
                pb[i].clone_from(&x[i]);
            }
            run.offer(&pb[i], pbf[i]);
        }
        let gb = run.best.clone();
        for i in 0..prm.p_num {
            let r1: f64 = rng.gen();
            let r2: f64 = rng.gen();
            for t in 0..p.len() {
                vel[i][t] = prm.c0 * vel[i][t] + r1 * prm.c1 * (pb[i][t] - x[i][t]) + r2 * prm.c2 * (gb[t] - x[i][t]);
                x[i][t] += vel[i][t];
            }
            p.repair(&mut x[i]);
        }
        if prm.reset_every.is_some_and(|r| r > 0 && m % r == 0) {
            for xi in x.iter_mut() {
                xi.clone_from(&gb);
            }
        }
        run.log(run.best_value, save_all);
    }
    Ok(run)
}

/// Differential evolution with donors drawn with replacement and one forced
/// crossover entry per block.
pub fn de<P: Candidates + ?Sized>(p: &P, prm: &DeParams, guesses: &[Vec<f64>], save_all: bool) -> Result<OptRun> {
    if prm.p_num < 4 {
        return Err(Error::Domain("DE needs at least four populations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(prm.seed);
    let mut x = initial_population(p, guesses, prm.p_num, &mut rng)?;
    let mut f = evaluate_all(p, &x)?;
    let mut run = OptRun::new();
    for (xi, fi) in x.iter().zip(&f) {
        run.offer(xi, *fi);
    }
    let blocks = p.blocks();
    for _ in 0..prm.max_episode {
        let mut trials = Vec::with_capacity(prm.p_num);
        for i in 0..prm.p_num {
            let (p1, p2, p3) = (rng.gen_range(0..prm.p_num), rng.gen_range(0..prm.p_num), rng.gen_range(0..prm.p_num));
            let mut q = x[i].clone();
            let mut start = 0;
            for &len in &blocks {
                let a = rng.gen_range(0..len.max(1));
                for j in 0..len {
                    let r: f64 = rng.gen();
                    if r <= prm.cr || j == a {
                        let t = start + j;
                        q[t] = x[p1][t] + prm.c * (x[p2][t] - x[p3][t]);
                    }
                }
                start += len;
            }
            p.repair(&mut q);
            trials.push(q);
        }
        let fq = evaluate_all(p, &trials)?;
        for (i, (q, fqi)) in trials.into_iter().zip(fq).enumerate() {
            if f[i] < fqi {
                x[i] = q;
                f[i] = fqi;
                run.offer(&x[i], fqi);
            }
        }
        run.log(run.best_value, save_all);
    }
    Ok(run)
}

fn affine(a: &[f64], b: &[f64], c: &[f64], s: f64) -> Vec<f64> {
    // a + s(b − c)
    a.iter().zip(b).zip(c).map(|((ai, bi), ci)| ai + s * (bi - ci)).collect()
}

/// Nelder–Mead maximization with the codec's repair applied after every
/// affine combination.
pub fn nm<P: Candidates + ?Sized>(p: &P, prm: &NmParams, guesses: &[Vec<f64>], save_all: bool) -> Result<OptRun> {
    if prm.p_num < 2 {
        return Err(Error::Domain("Nelder–Mead needs at least two vertices".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(prm.seed);
    let x0 = initial_population(p, guesses, prm.p_num, &mut rng)?;
    let f0 = evaluate_all(p, &x0)?;
    let mut simplex: Vec<(Vec<f64>, f64)> = x0.into_iter().zip(f0).collect();
    let mut run = OptRun::new();
    let last = prm.p_num - 1;
    let fix = |mut x: Vec<f64>| {
        p.repair(&mut x);
        x
    };
    for _ in 0..prm.max_episode {
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let dim = p.len();
        let mut avg = vec![0.0; dim];
        for (v, _) in &simplex[..last] {
            for t in 0..dim {
                avg[t] += v[t] / last as f64;
            }
        }
        let avg = fix(avg);
        let worst = simplex[last].0.clone();
        let (f1, fn_, fw) = (simplex[0].1, simplex[last - 1].1, simplex[last].1);
        let xr = fix(affine(&avg, &avg, &worst, prm.ar));
        let fr = p.evaluate(&xr)?;
        let mut shrink = false;
        if fr > f1 {
            let xe = fix(affine(&avg, &xr, &avg, prm.ae));
            let fe = p.evaluate(&xe)?;
            simplex[last] = if fr >= fe { (xr, fr) } else { (xe, fe) };
        } else if fr > fn_ {
            simplex[last] = (xr, fr);
        } else if fr > fw {
            let xoc = fix(affine(&avg, &xr, &avg, prm.ac));
            let foc = p.evaluate(&xoc)?;
            if foc >= fr {
                simplex[last] = (xoc, foc);
            } else {
                shrink = true;
            }
        } else {
            let xic = fix(affine(&avg, &worst, &avg, prm.ac));
            let fic = p.evaluate(&xic)?;
            if fic > fw {
                simplex[last] = (xic, fic);
            } else {
                shrink = true;
            }
        }
        if shrink {
            let best = simplex[0].0.clone();
            let moved: Vec<Vec<f64>> = simplex[1..].iter().map(|(v, _)| fix(affine(&best, v, &best, prm.as0))).collect();
            let fm = evaluate_all(p, &moved)?;
            for (slot, (v, fv)) in simplex[1..].iter_mut().zip(moved.into_iter().zip(fm)) {
                *slot = (v, fv);
            }
        }
        for (v, fv) in &simplex {
            run.offer(v, *fv);
        }
        run.log(run.best_value, save_all);
    }
    Ok(run)
}

/// Plain or Adam gradient ascent, repairing after every step. The final
/// iterate is evaluated too, so `best` covers every visited point.
pub fn gradient_ascent<P: Differentiable + ?Sized>(p: &P, prm: &GradParams, x0: &[f64], save_all: bool) -> Result<OptRun> {
    if x0.len() != p.len() {
        return Err(Error::Dimension(format!("initial guess has {} entries, expected {}", x0.len(), p.len())));
    }
    let mut x = x0.to_vec();
    p.repair(&mut x);
    let mut st = AdamState::default();
    let mut run = OptRun::new();
    for _ in 0..prm.max_episode {
        let (f, g) = p.value_and_gradient(&x)?;
        run.offer(&x, f);
        run.values.push(f);
        if save_all {
            run.history.push(x.clone());
        }
        adam_step(&mut x, &g, &mut st, prm);
        p.repair(&mut x);
    }
    let f = p.evaluate(&x)?;
    run.offer(&x, f);
    Ok(run)
}

/// Reverse-iterative search for the probe maximizing the QFI of a Kraus
/// channel. Returns the run (best state interleaved as reals) and stops early
/// once the QFI changes by less than `1e-8`.
pub fn ri(ch: &KrausChannel, psi0: Option<&CVec>, prm: &RiParams, save_all: bool) -> Result<OptRun> {
    ch.validate(1e-6)?;
    if ch.nparams() != 1 {
        return Err(Error::Unsupported("the reverse-iterative search is single-parameter".into()));
    }
    let d = ch.dim();
    let mut psi = match psi0 {
        Some(v) if v.len() != d => return Err(Error::Dimension(format!("initial state must have {d} entries"))),
        Some(v) => v / cr(v.norm()),
        None => crate::random::random_ket(&mut ChaCha8Rng::seed_from_u64(prm.seed), d),
    };
    let eps = crate::asymptotic::EPS;
    let mut run = OptRun::new();
    let mut prev = f64::NAN;
    for _ in 0..prm.max_episode {
        let rho0 = crate::linalg::projector(&psi);
        let ds = crate::dynamics::kraus_apply(&rho0, ch)?;
        let l = sld(&ds, Rep::Original, eps).remove(0);
        let f = crate::linalg::trace_prod(&ds.rho, &(&l * &l)).re;
        run.offer(&cvec_to_reals(&psi), f);
        run.log(run.best_value, save_all);
        if (f - prev).abs() < 1e-8 {
            break;
        }
        prev = f;
        let l2 = &l * &l;
        let mut m = CMat::zeros(d, d);
        for (k, dks) in ch.k.iter().zip(&ch.dk) {
            let dk = &dks[0];
            m += (dk.adjoint() * &l * k + k.adjoint() * &l * dk) * cr(2.0) - k.adjoint() * &l2 * k;
        }
        let (vals, vecs) = eigh(&m);
        let top = vecs.column(d - 1).into_owned();
        let current = (psi.adjoint() * &m * &psi)[(0, 0)].re;
        if current < vals[d - 1] - 1e-12 {
            psi = top;
        }
    }
    Ok(run)
}
