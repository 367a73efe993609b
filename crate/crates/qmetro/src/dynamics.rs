//! Lindblad and Kraus parameterizations producing `(ρ, ∂ρ)`.

use crate::error::{Error, Result};
use crate::linalg::{cr, expm, expm_frechet, eye, kron, max_abs, unvec, vec, CMat, CVec, I};
use crate::prelude::*;
use crate::state::DerivedState;

/// Free Hamiltonian: either constant or one matrix per `tspan` entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Hamiltonian {
    Constant(CMat),
    PerStep(Vec<CMat>),
}

impl Hamiltonian {
    fn dim(&self) -> usize {
        match self {
            Hamiltonian::Constant(h) => h.nrows(),
            Hamiltonian::PerStep(hs) => hs.first().map_or(0, |h| h.nrows()),
        }
    }
}

/// Master-equation parameterization
/// `∂ρ/∂t = −i[H₀ + Σ_k u_k(t) H_k, ρ] + Σ_i γ_i (Γ_i ρ Γ_i† − ½{Γ_i†Γ_i, ρ})`.
///
/// `tspan` holds `n` points that define `n − 1` piecewise-constant steps; step
/// `j` (from `tspan[j]` to `tspan[j+1]`) uses `H₀[j+1]` when `H₀` is per-step.
#[derive(Debug, Clone, PartialEq)]
pub struct Lindblad {
    pub tspan: Vec<f64>,
    pub h0: Hamiltonian,
    pub dh: Vec<CMat>,
    pub hc: Vec<CMat>,
    pub ctrl: Vec<Vec<f64>>,
    pub decay: Vec<(CMat, f64)>,
}

/// Smallest multiple of `nc` that is at least `nt`.
pub fn adjust_steps(nt: usize, nc: usize) -> usize {
    if nc == 0 || nt % nc == 0 {
        nt
    } else {
        (nt / nc + 1) * nc
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Superoperator of `X ↦ −i[H, X]` in row-major vectorization.
pub fn commutator_superop(h: &CMat) -> CMat {
    let id = eye(h.nrows());
    (kron(h, &id) - kron(&id, &h.transpose())) * (-I)
}

/// Superoperator of the dissipative part of the master equation.
pub fn dissipator_superop(decay: &[(CMat, f64)], d: usize) -> CMat {
    let id = eye(d);
    let mut out = CMat::zeros(d * d, d * d);
    for (g, rate) in decay {
        let gg = g.adjoint() * g;
        let term = kron(g, &g.map(|z| z.conj())) - (kron(&gg, &id) + kron(&id, &gg.transpose())) * cr(0.5);
        out += term * cr(*rate);
    }
    out
}

pub fn liouvillian(h: &CMat, decay: &[(CMat, f64)]) -> CMat {
    commutator_superop(h) + dissipator_superop(decay, h.nrows())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Precomputed superoperators for one parameterization.
#[derive(Debug, Clone)]
pub struct Superops {
    pub h0: Vec<CMat>,
    pub dh: Vec<CMat>,
    pub hc: Vec<CMat>,
    pub diss: CMat,
}

impl Lindblad {
    pub fn new(tspan: Vec<f64>, h0: CMat, dh: Vec<CMat>, decay: Vec<(CMat, f64)>) -> Self {
        Self { tspan, h0: Hamiltonian::Constant(h0), dh, hc: Vec::new(), ctrl: Vec::new(), decay }
    }

    pub fn with_controls(mut self, hc: Vec<CMat>, ctrl: Vec<Vec<f64>>) -> Self {
        self.hc = hc;
        self.ctrl = ctrl;
        self
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn nsteps(&self) -> usize {
        self.tspan.len().saturating_sub(1)
    }

    pub fn nparams(&self) -> usize {
        self.dh.len()
    }

    /// Least common multiple of the control table lengths (1 without controls).
    pub fn control_period(&self) -> usize {
        self.ctrl.iter().filter(|c| !c.is_empty()).fold(1, |acc, c| acc / gcd(acc, c.len()) * c.len())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Dimension("empty Hamiltonian".into()));
        }
        if self.tspan.is_empty() {
            return Err(Error::Domain("tspan is empty".into()));
        }
        if self.tspan.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("tspan must be strictly increasing".into()));
        }
        if let Hamiltonian::PerStep(hs) = &self.h0 {
            if hs.len() != self.tspan.len() {
                return Err(Error::Dimension(format!(
                    "per-step H0 has {} entries for {} time points",
                    hs.len(),
                    self.tspan.len()
                )));
            }
        }
        let ops = match &self.h0 {
            Hamiltonian::Constant(h) => core::slice::from_ref(h),
            Hamiltonian::PerStep(hs) => hs.as_slice(),
        };
        let square = |m: &CMat| m.shape() == (d, d);
        if !ops.iter().all(square)
            || !self.dh.iter().all(square)
            || !self.hc.iter().all(square)
            || !self.decay.iter().all(|(g, _)| square(g))
        {
            return Err(Error::Dimension("operators must share the Hamiltonian dimension".into()));
        }
        if self.decay.iter().any(|(_, r)| !(*r >= 0.0)) {
            return Err(Error::Domain("decay rates must be nonnegative".into()));
        }
        if !self.ctrl.is_empty() && self.ctrl.len() != self.hc.len() {
            return Err(Error::Dimension(format!(
                "{} control tables for {} control Hamiltonians",
                self.ctrl.len(),
                self.hc.len()
            )));
        }
        let n = self.nsteps();
        for (k, c) in self.ctrl.iter().enumerate() {
            if c.is_empty() || n % c.len() != 0 {
                return Err(Error::Dimension(format!(
                    "control {k} has {} amplitudes, which does not divide {n} steps",
                    c.len()
                )));
            }
        }
        Ok(())
    }

    /// Re-grids a uniform `tspan` so that every control table divides the step count.
    pub fn adjusted(mut self) -> Result<Self> {
        let n = self.nsteps();
        let nc = self.control_period();
        let m = adjust_steps(n, nc);
        if m != n {
            if matches!(self.h0, Hamiltonian::PerStep(_)) {
                return Err(Error::Dimension("cannot re-grid a per-step Hamiltonian".into()));
            }
            let (a, b) = (self.tspan[0], *self.tspan.last().unwrap_or(&0.0));
            self.tspan = linspace(a, b, m + 1);
        }
        Ok(self)
    }

    /// Control amplitude `u_k` during step `j`.
    #[inline]
    pub fn control(&self, k: usize, j: usize) -> f64 {
        match self.ctrl.get(k) {
            Some(c) if !c.is_empty() => c[j * c.len() / self.nsteps()],
            _ => 0.0,
        }
    }

    pub(crate) fn superops(&self) -> Superops {
        let h0 = match &self.h0 {
            Hamiltonian::Constant(h) => vec![commutator_superop(h)],
            Hamiltonian::PerStep(hs) => hs.iter().map(commutator_superop).collect(),
        };
        Superops {
            h0,
            dh: self.dh.iter().map(commutator_superop).collect(),
            hc: self.hc.iter().map(commutator_superop).collect(),
            diss: dissipator_superop(&self.decay, self.dim()),
        }
    }

    fn h_index(&self, j: usize) -> usize {
        match self.h0 {
            Hamiltonian::Constant(_) => 0,
            Hamiltonian::PerStep(_) => j + 1,
        }
    }

    /// Generator `L_j` of step `j`.
    pub(crate) fn generator(&self, ops: &Superops, j: usize) -> CMat {
        let mut g = &ops.h0[self.h_index(j)] + &ops.diss;
        for (k, ck) in ops.hc.iter().enumerate() {
            let u = self.control(k, j);
            if u != 0.0 {
                g += ck * cr(u);
            }
        }
        g
    }

    fn step_key(&self, j: usize) -> (usize, Vec<u64>, u64) {
        let u = (0..self.hc.len()).map(|k| self.control(k, j).to_bits()).collect();
        (self.h_index(j), u, (self.tspan[j + 1] - self.tspan[j]).to_bits())
    }

    /// Step propagators `exp(Δt_j L_j)`; identical consecutive steps share one exponential.
    pub(crate) fn propagators(&self, ops: &Superops) -> Result<Vec<CMat>> {
        let mut out: Vec<CMat> = Vec::with_capacity(self.nsteps());
        let mut last: Option<(usize, Vec<u64>, u64)> = None;
        for j in 0..self.nsteps() {
            let key = self.step_key(j);
            if last.as_ref() == Some(&key) {
                let e = out[j - 1].clone();
                out.push(e);
            } else {
                let dt = self.tspan[j + 1] - self.tspan[j];
                out.push(expm(&(self.generator(ops, j) * cr(dt)))?);
                last = Some(key);
            }
        }
        Ok(out)
    }

    fn check_rho0(&self, rho0: &CMat) -> Result<()> {
        self.validate()?;
        if rho0.shape() != (self.dim(), self.dim()) {
            return Err(Error::Dimension(format!(
                "initial state is {}x{}, operators are {}x{}",
                rho0.nrows(),
                rho0.ncols(),
                self.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Full trajectory, one entry per `tspan` point; `∂ρ(t₀) = 0`.
    ///
    /// Derivatives follow `∂ρ_j = −iΔt_j[∂H₀, ρ_j] + e^{Δt_j L}∂ρ_{j−1}`.
    pub fn propagate(&self, rho0: &CMat) -> Result<Vec<DerivedState>> {
        self.check_rho0(rho0)?;
        let d = self.dim();
        let ops = self.superops();
        let props = self.propagators(&ops)?;
        let mut rho = vec(rho0);
        let mut drho: Vec<CVec> = vec![CVec::zeros(d * d); self.nparams()];
        let mut out = Vec::with_capacity(self.tspan.len());
        let snapshot = |rho: &CVec, drho: &[CVec]| -> Result<DerivedState> {
            Ok(DerivedState {
                rho: unvec(rho, d)?,
                drho: drho.iter().map(|v| unvec(v, d)).collect::<Result<_>>()?,
            })
        };
        out.push(snapshot(&rho, &drho)?);
        for (j, e) in props.iter().enumerate() {
            let dt = cr(self.tspan[j + 1] - self.tspan[j]);
            rho = e * rho;
            for (a, da) in drho.iter_mut().enumerate() {
                *da = &ops.dh[a] * &rho * dt + e * &*da;
            }
            out.push(snapshot(&rho, &drho)?);
        }
        Ok(out)
    }

    /// Endpoint of [`Lindblad::propagate`] without storing the trajectory.
    pub fn propagate_final(&self, rho0: &CMat) -> Result<DerivedState> {
        self.check_rho0(rho0)?;
        let d = self.dim();
        let ops = self.superops();
        let props = self.propagators(&ops)?;
        let (rho, drho) = advance(&props, &ops.dh, &self.tspan, vec(rho0), d, self.nparams());
        Ok(DerivedState {
            rho: unvec(&rho, d)?,
            drho: drho.iter().map(|v| unvec(v, d)).collect::<Result<_>>()?,
        })
    }
}

/// Runs the derivative recursion through precomputed propagators.
pub(crate) fn advance(
    props: &[CMat],
    dh: &[CMat],
    tspan: &[f64],
    mut rho: CVec,
    d: usize,
    n: usize,
) -> (CVec, Vec<CVec>) {
    let mut drho: Vec<CVec> = vec![CVec::zeros(d * d); n];
    for (j, e) in props.iter().enumerate() {
        let dt = cr(tspan[j + 1] - tspan[j]);
        rho = e * rho;
        for (a, da) in drho.iter_mut().enumerate() {
            *da = &dh[a] * &rho * dt + e * &*da;
        }
    }
    (rho, drho)
}

/// Endpoint `(ρ_T, ∂ρ_T)` for a time-independent generator over a single interval `t`,
/// with derivatives from the exact Fréchet derivative of `exp(tL)`.
pub fn exact_endpoint(h: &CMat, dh: &[CMat], decay: &[(CMat, f64)], t: f64, rho0: &CMat) -> Result<DerivedState> {
    let d = h.nrows();
    if rho0.shape() != (d, d) || dh.iter().any(|g| g.shape() != (d, d)) {
        return Err(Error::Dimension("operators and initial state disagree in size".into()));
    }
    let a = liouvillian(h, decay) * cr(t);
    let v0 = vec(rho0);
    let mut e = expm(&a)?;
    let mut drho = Vec::with_capacity(dh.len());
    for g in dh {
        let (ea, l) = expm_frechet(&a, &(commutator_superop(g) * cr(t)))?;
        e = ea;
        drho.push(unvec(&(l * &v0), d)?);
    }
    Ok(DerivedState { rho: unvec(&(e * v0), d)?, drho })
}

/// Kraus parameterization `ρ = Σ_i K_i ρ₀ K_i†` with `dk[i][a] = ∂_a K_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    pub k: Vec<CMat>,
    pub dk: Vec<Vec<CMat>>,
}

impl KrausChannel {
    pub fn new(k: Vec<CMat>, dk: Vec<Vec<CMat>>) -> Result<Self> {
        let ch = Self { k, dk };
        ch.validate(1e-6)?;
        Ok(ch)
    }

    /// `K = exp(−iHt)` with exact derivatives `∂_a K` for `∂_a H = dh[a]`.
    pub fn unitary(h: &CMat, dh: &[CMat], t: f64) -> Result<Self> {
        let a = h * cr(-t) * I;
        let mut u = expm(&a)?;
        let mut dk = Vec::with_capacity(dh.len());
        for g in dh {
            let (e, l) = expm_frechet(&a, &(g * cr(-t) * I))?;
            u = e;
            dk.push(l);
        }
        Ok(Self { k: vec![u], dk: vec![dk] })
    }

    pub fn dim(&self) -> usize {
        self.k.first().map_or(0, |k| k.ncols())
    }

    pub fn nparams(&self) -> usize {
        self.dk.first().map_or(0, |v| v.len())
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let d = self.dim();
        if self.k.is_empty() || self.dk.len() != self.k.len() {
            return Err(Error::InvalidChannel("one derivative list per Kraus operator is required".into()));
        }
        let n = self.nparams();
        if self.dk.iter().any(|v| v.len() != n) {
            return Err(Error::InvalidChannel("derivative lists differ in length".into()));
        }
        let mut sum = CMat::zeros(d, d);
        for k in &self.k {
            if k.ncols() != d {
                return Err(Error::Dimension("Kraus operators have mismatched shapes".into()));
            }
            sum += k.adjoint() * k;
        }
        let err = max_abs(&(sum - eye(d)));
        if err > tol {
            return Err(Error::InvalidChannel(format!("Σ K†K deviates from identity by {err:.3e}")));
        }
        Ok(())
    }
}

/// Applies a Kraus channel, returning `ρ` and `∂_a ρ = Σ_i ∂K_i ρ₀ K_i† + K_i ρ₀ ∂K_i†`.
pub fn kraus_apply(rho0: &CMat, ch: &KrausChannel) -> Result<DerivedState> {
    ch.validate(1e-6)?;
    if rho0.shape() != (ch.dim(), ch.dim()) {
        return Err(Error::Dimension("initial state does not match the channel".into()));
    }
    let dout = ch.k[0].nrows();
    let mut rho = CMat::zeros(dout, dout);
    let mut drho = vec![CMat::zeros(dout, dout); ch.nparams()];
    for (k, dks) in ch.k.iter().zip(&ch.dk) {
        let kr = k * rho0;
        rho += &kr * k.adjoint();
        for (a, dk) in dks.iter().enumerate() {
            let t = dk * rho0 * k.adjoint();
            drho[a] += &t + t.adjoint();
        }
    }
    Ok(DerivedState { rho, drho })
}
