//! Bundled physical models and parameter grids built from them.

use crate::dynamics::{exact_endpoint, Lindblad};
use crate::error::{Error, Result};
use crate::linalg::{c, cr, expm, eye, ket, kron, pauli, projector, CMat, CVec, I};
use crate::prelude::*;
use crate::state::{DerivedState, Povm};
use alloc::collections::BTreeMap;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

/// `|+⟩⟨+|`.
pub fn plus_state() -> CMat {
    projector(&ket(&[cr(FRAC_1_SQRT_2), cr(FRAC_1_SQRT_2)]))
}

/// `{|+⟩⟨+|, |−⟩⟨−|}`.
pub fn pm_povm() -> Povm {
    let s = FRAC_1_SQRT_2;
    Povm::new_unchecked(vec![
        projector(&ket(&[cr(s), cr(s)])),
        projector(&ket(&[cr(s), cr(-s)])),
    ])
}

/// `σ₊ = (σ₁ + iσ₂)/2` and `σ₋ = (σ₁ − iσ₂)/2`.
pub fn sigma_pm() -> (CMat, CMat) {
    let [s1, s2, _] = pauli();
    ((&s1 + &s2 * I) * cr(0.5), (&s1 - &s2 * I) * cr(0.5))
}

/// Single qubit `H = ωσ₃/2` with spontaneous-emission channels at rates `γ₊`, `γ₋`.
pub fn qubit_frequency(omega: f64, gamma_plus: f64, gamma_minus: f64, tspan: Vec<f64>) -> Lindblad {
    let [_, _, s3] = pauli();
    let (sp, sm) = sigma_pm();
    let mut decay = Vec::new();
    if gamma_plus != 0.0 {
        decay.push((sp, gamma_plus));
    }
    if gamma_minus != 0.0 {
        decay.push((sm, gamma_minus));
    }
    Lindblad::new(tspan, &s3 * cr(omega / 2.0), vec![&s3 * cr(0.5)], decay)
}

/// Control Hamiltonians `σ₁, σ₂, σ₃`.
pub fn pauli_controls() -> Vec<CMat> {
    pauli().to_vec()
}

/// Two-qubit XX model with unknowns `(ω₂, g)` and σ₃ dephasing on both qubits.
pub fn two_qubit_xx(omega1: f64, omega2: f64, g: f64, gamma: f64, tspan: Vec<f64>) -> Lindblad {
    let (h, dh) = Template::TwoQubitXx { omega1 }.eval(&[omega2, g]).expect("two parameters");
    let [_, _, s3] = pauli();
    let id = eye(2);
    let decay = vec![(kron(&s3, &id), gamma), (kron(&id, &s3), gamma)];
    Lindblad::new(tspan, h, dh, decay)
}

/// `(|00⟩ + |11⟩)/√2`.
pub fn bell_state() -> CMat {
    let s = FRAC_1_SQRT_2;
    projector(&ket(&[cr(s), cr(0.0), cr(0.0), cr(s)]))
}

/// `{0.85|00⟩⟨00|, 0.1|++⟩⟨++|, 𝟙 − Π₁ − Π₂}`.
pub fn xx_povm() -> Povm {
    let p1 = projector(&ket(&[cr(1.0), cr(0.0), cr(0.0), cr(0.0)])) * cr(0.85);
    let p2 = projector(&ket(&[cr(0.5); 4])) * cr(0.1);
    let p3 = eye(4) - &p1 - &p2;
    Povm::new_unchecked(vec![p1, p2, p3])
}

/// Spin-1 operators `s₁, s₂, s₃` in the `|1⟩, |0⟩, |−1⟩` basis.
pub fn spin_one() -> [CMat; 3] {
    let r = FRAC_1_SQRT_2;
    let z = cr(0.0);
    let s1 = CMat::from_row_slice(3, 3, &[z, cr(r), z, cr(r), z, cr(r), z, cr(r), z]);
    let s2 = CMat::from_row_slice(3, 3, &[z, c(0.0, -r), z, c(0.0, r), z, c(0.0, -r), z, c(0.0, r), z]);
    let s3 = CMat::from_row_slice(3, 3, &[cr(1.0), z, z, z, z, z, z, z, cr(-1.0)]);
    [s1, s2, s3]
}

/// NV-centre constants in MHz, μs and tesla.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NvConstants {
    pub d: f64,
    pub g_s: f64,
    pub g_i: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Default for NvConstants {
    fn default() -> Self {
        let tau = 2.0 * PI;
        Self { d: tau * 2870.0, g_s: tau * 28030.0, g_i: tau * 4.32, a1: tau * 3.65, a2: tau * 3.03 }
    }
}

fn nv_operators() -> ([CMat; 3], [CMat; 3]) {
    let s = spin_one();
    let p = pauli();
    let (e3, e2) = (eye(3), eye(2));
    (
        [kron(&s[0], &e2), kron(&s[1], &e2), kron(&s[2], &e2)],
        [kron(&e3, &p[0]), kron(&e3, &p[1]), kron(&e3, &p[2])],
    )
}

/// NV-centre magnetometer with unknown field `B` and electron dephasing at rate `γ`.
///
/// The dissipator is `γ(S₃ρS₃ − ½{S₃², ρ})`, the trace-preserving form.
pub fn nv_center(k: NvConstants, b: [f64; 3], gamma: f64, tspan: Vec<f64>) -> Lindblad {
    let (h, dh) = Template::NvCenter(k).eval(&b).expect("three parameters");
    let (s, _) = nv_operators();
    Lindblad::new(tspan, h, dh, vec![(s[2].clone(), gamma)])
}

/// NV control Hamiltonians `S₁, S₂, S₃`.
pub fn nv_controls() -> Vec<CMat> {
    nv_operators().0.to_vec()
}

/// `(|1⟩ + |−1⟩)/√2 ⊗ |↑⟩`.
pub fn nv_probe() -> CMat {
    let s = FRAC_1_SQRT_2;
    let e = ket(&[cr(s), cr(0.0), cr(s)]);
    let n = ket(&[cr(1.0), cr(0.0)]);
    let psi = CVec::from_iterator(6, (0..6).map(|i| e[i / 2] * n[i % 2]));
    projector(&psi)
}

/// Collective spin operators `J₁, J₂, J₃` for `n` spin-½ particles in the symmetric
/// subspace, basis `|J, J⟩, |J, J−1⟩, …, |J, −J⟩`.
pub fn collective_spin(n: usize) -> [CMat; 3] {
    let j = n as f64 / 2.0;
    let d = n + 1;
    let m = |k: usize| j - k as f64;
    let mut jp = CMat::zeros(d, d);
    for k in 1..d {
        let mk = m(k);
        jp[(k - 1, k)] = cr((j * (j + 1.0) - mk * (mk + 1.0)).sqrt());
    }
    let jm = jp.adjoint();
    let j1 = (&jp + &jm) * cr(0.5);
    let j2 = (&jp - &jm) * c(0.0, -0.5);
    let j3 = CMat::from_fn(d, d, |r, s| if r == s { cr(m(r)) } else { cr(0.0) });
    [j1, j2, j3]
}

/// Spin coherent state `|θ, φ⟩ = exp(−θ/2 e^{−iφ}J₊ + θ/2 e^{iφ}J₋)|J, J⟩`.
pub fn coherent_spin_state(n: usize, theta: f64, phi: f64) -> Result<CVec> {
    let [j1, j2, _] = collective_spin(n);
    let jp = &j1 + &j2 * I;
    let jm = &j1 - &j2 * I;
    let gen = &jp * (c(phi.cos(), -phi.sin()) * (-theta / 2.0)) + &jm * (c(phi.cos(), phi.sin()) * (theta / 2.0));
    let u = expm(&gen)?;
    Ok(u.column(0).into_owned())
}

/// Unknowns estimated in the LMG model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LmgParams {
    G,
    GH,
}

/// Parametric Hamiltonian families `x ↦ (H(x), ∂H(x))`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Template {
    /// `H = κω₀/2 (σ₁ cos x + σ₃ sin x)`.
    QubitPhase { kappa: f64, omega0: f64 },
    /// `H = xσ₃/2`.
    QubitFrequency,
    /// `H = ω₁σ₃⊗𝟙 + x₀ 𝟙⊗σ₃ + x₁ σ₁⊗σ₁`.
    TwoQubitXx { omega1: f64 },
    /// `H = DS₃² + g_S B·S + g_I B·I + A₁(S₁I₁ + S₂I₂) + A₂S₃I₃` with `x = B`.
    NvCenter(NvConstants),
    /// `H = −λ/N (J₁² + gJ₂²) − hJ₃` with unknown `g` (and `h` for [`LmgParams::GH`]).
    Lmg { n: usize, lambda: f64, g: f64, h: f64, params: LmgParams },
}

impl Template {
    /// Builds a template from its identifier and named constants; absent constants take defaults.
    pub fn from_id(id: &str, constants: &BTreeMap<String, f64>) -> Result<Self> {
        let known: &[&str] = match id {
            "qubit_phase" => &["kappa", "omega0"],
            "qubit_frequency" => &[],
            "two_qubit_xx" => &["omega1"],
            "nv_center" => &["D", "gS", "gI", "A1", "A2"],
            "lmg" | "lmg_gh" => &["N", "lambda", "g", "h"],
            _ => return Err(Error::UnknownTemplate(id.into())),
        };
        if let Some(k) = constants.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Domain(format!("template {id} has no constant named {k}")));
        }
        let get = |k: &str, default: f64| constants.get(k).copied().unwrap_or(default);
        Ok(match id {
            "qubit_phase" => Template::QubitPhase { kappa: get("kappa", PI / 2.0), omega0: get("omega0", 1.0) },
            "qubit_frequency" => Template::QubitFrequency,
            "two_qubit_xx" => Template::TwoQubitXx { omega1: get("omega1", 1.0) },
            "nv_center" => {
                let def = NvConstants::default();
                Template::NvCenter(NvConstants {
                    d: get("D", def.d),
                    g_s: get("gS", def.g_s),
                    g_i: get("gI", def.g_i),
                    a1: get("A1", def.a1),
                    a2: get("A2", def.a2),
                })
            }
            _ => {
                let n = get("N", 4.0);
                if n < 1.0 || n.fract() != 0.0 {
                    return Err(Error::Domain("LMG spin number N must be a positive integer".into()));
                }
                Template::Lmg {
                    n: n as usize,
                    lambda: get("lambda", 1.0),
                    g: get("g", 0.5),
                    h: get("h", 0.1),
                    params: if id == "lmg" { LmgParams::G } else { LmgParams::GH },
                }
            }
        })
    }

    pub fn nparams(&self) -> usize {
        match self {
            Template::QubitPhase { .. } | Template::QubitFrequency => 1,
            Template::TwoQubitXx { .. } => 2,
            Template::NvCenter(_) => 3,
            Template::Lmg { params: LmgParams::G, .. } => 1,
            Template::Lmg { params: LmgParams::GH, .. } => 2,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Template::QubitPhase { .. } | Template::QubitFrequency => 2,
            Template::TwoQubitXx { .. } => 4,
            Template::NvCenter(_) => 6,
            Template::Lmg { n, .. } => n + 1,
        }
    }

    /// `H(x)` and `∂_a H(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<(CMat, Vec<CMat>)> {
        if x.len() != self.nparams() {
            return Err(Error::Dimension(format!("template takes {} parameters, got {}", self.nparams(), x.len())));
        }
        let [s1, _, s3] = pauli();
        Ok(match *self {
            Template::QubitPhase { kappa, omega0 } => {
                let a = kappa * omega0 / 2.0;
                let (sx, cx) = x[0].sin_cos();
                (&s1 * cr(a * cx) + &s3 * cr(a * sx), vec![&s1 * cr(-a * sx) + &s3 * cr(a * cx)])
            }
            Template::QubitFrequency => (&s3 * cr(x[0] / 2.0), vec![&s3 * cr(0.5)]),
            Template::TwoQubitXx { omega1 } => {
                let id = eye(2);
                let z2 = kron(&id, &s3);
                let xx = kron(&s1, &s1);
                (kron(&s3, &id) * cr(omega1) + &z2 * cr(x[0]) + &xx * cr(x[1]), vec![z2, xx])
            }
            Template::NvCenter(k) => {
                let (s, i) = nv_operators();
                let mut h = &s[2] * &s[2] * cr(k.d)
                    + (&s[0] * &i[0] + &s[1] * &i[1]) * cr(k.a1)
                    + &s[2] * &i[2] * cr(k.a2);
                let mut dh = Vec::with_capacity(3);
                for a in 0..3 {
                    let g = &s[a] * cr(k.g_s) + &i[a] * cr(k.g_i);
                    h += &g * cr(x[a]);
                    dh.push(g);
                }
                (h, dh)
            }
            Template::Lmg { n, lambda, h, params, .. } => {
                let [j1, j2, j3] = collective_spin(n);
                let nf = n as f64;
                let hf = match params {
                    LmgParams::G => h,
                    LmgParams::GH => x[1],
                };
                let j11 = &j1 * &j1;
                let j22 = &j2 * &j2;
                let ham = (&j11 + &j22 * cr(x[0])) * cr(-lambda / nf) - &j3 * cr(hf);
                let mut dh = vec![&j22 * cr(-lambda / nf)];
                if params == LmgParams::GH {
                    dh.push(-j3);
                }
                (ham, dh)
            }
        })
    }
}

/// `H` and `∂H` tabulated over the outer product of parameter axes.
///
/// Flattened storage is row-major: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrid {
    pub axes: Vec<Vec<f64>>,
    pub h: Vec<CMat>,
    pub dh: Vec<Vec<CMat>>,
}

/// Number of points in the outer product of `axes`.
pub fn grid_len(axes: &[Vec<f64>]) -> usize {
    axes.iter().map(|a| a.len()).product()
}

/// Multi-index of flat position `k` (last axis fastest).
pub fn unravel(axes: &[Vec<f64>], mut k: usize) -> Vec<usize> {
    let mut idx = vec![0; axes.len()];
    for (ax, slot) in axes.iter().zip(idx.iter_mut()).rev() {
        *slot = k % ax.len();
        k /= ax.len();
    }
    idx
}

/// Coordinates of flat position `k`.
pub fn grid_point(axes: &[Vec<f64>], k: usize) -> Vec<f64> {
    unravel(axes, k).iter().zip(axes).map(|(&i, ax)| ax[i]).collect()
}

/// Validates that every axis is non-empty and strictly increasing.
pub fn check_axes(axes: &[Vec<f64>]) -> Result<()> {
    if axes.is_empty() {
        return Err(Error::Dimension("at least one parameter axis is required".into()));
    }
    for (i, ax) in axes.iter().enumerate() {
        if ax.is_empty() {
            return Err(Error::Dimension(format!("axis {i} is empty")));
        }
        if ax.iter().any(|v| !v.is_finite()) || ax.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(format!("axis {i} must be finite and strictly increasing")));
        }
    }
    Ok(())
}

/// Evaluates `template` at every point of the outer product of `axes`.
pub fn model_grid(template: &Template, axes: Vec<Vec<f64>>) -> Result<ModelGrid> {
    check_axes(&axes)?;
    if axes.len() != template.nparams() {
        return Err(Error::Dimension(format!("template takes {} axes, got {}", template.nparams(), axes.len())));
    }
    let n = grid_len(&axes);
    let mut h = Vec::with_capacity(n);
    let mut dh = Vec::with_capacity(n);
    for k in 0..n {
        let (hk, dk) = template.eval(&grid_point(&axes, k))?;
        h.push(hk);
        dh.push(dk);
    }
    Ok(ModelGrid { axes, h, dh })
}

impl ModelGrid {
    /// Tabulated grid supplied directly; shapes are checked.
    pub fn tabulated(axes: Vec<Vec<f64>>, h: Vec<CMat>, dh: Vec<Vec<CMat>>) -> Result<Self> {
        check_axes(&axes)?;
        let n = grid_len(&axes);
        if h.len() != n || dh.len() != n {
            return Err(Error::Dimension(format!("grid has {n} points but {} Hamiltonians", h.len())));
        }
        let d = h[0].nrows();
        let np = axes.len();
        for (hk, dk) in h.iter().zip(&dh) {
            if hk.shape() != (d, d) || dk.len() != np || dk.iter().any(|m| m.shape() != (d, d)) {
                return Err(Error::Dimension("inconsistent operator shapes in tabulated grid".into()));
            }
        }
        Ok(Self { axes, h, dh })
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn dim(&self) -> usize {
        self.h.first().map_or(0, |h| h.nrows())
    }

    /// `(ρ_T, ∂ρ_T)` at every grid point after evolving `rho0` for time `t`.
    pub fn states(&self, rho0: &CMat, t: f64, decay: &[(CMat, f64)]) -> Result<Vec<DerivedState>> {
        self.h.iter().zip(&self.dh).map(|(h, dh)| exact_endpoint(h, dh, decay, t, rho0)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotic::{qfim, LdType};
    use crate::linalg::{is_hermitian, max_abs, trace};

    #[test]
    fn qubit_phase_at_zero() {
        let t = Template::QubitPhase { kappa: 0.7, omega0: 1.0 };
        let (h, dh) = t.eval(&[0.0]).unwrap();
        let [s1, _, s3] = pauli();
        assert!(max_abs(&(h - &s1 * cr(0.35))) < 1e-15);
        assert!(max_abs(&(&dh[0] - &s3 * cr(0.35))) < 1e-15);
    }

    #[test]
    fn template_derivatives_match_differences() {
        let cases = [
            (Template::QubitPhase { kappa: PI / 2.0, omega0: 1.0 }, vec![0.3]),
            (Template::TwoQubitXx { omega1: 1.0 }, vec![1.0, 0.1]),
            (Template::NvCenter(NvConstants::default()), vec![5e-4, 5e-4, 5e-4]),
            (Template::Lmg { n: 4, lambda: 1.0, g: 0.5, h: 0.1, params: LmgParams::GH }, vec![0.5, 0.1]),
        ];
        for (t, x) in cases {
            let (h, dh) = t.eval(&x).unwrap();
            assert!(is_hermitian(&h, 1e-12));
            for a in 0..x.len() {
                let step = 1e-6 * x[a].abs().max(1e-3);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[a] += step;
                xm[a] -= step;
                let fd = (t.eval(&xp).unwrap().0 - t.eval(&xm).unwrap().0) / cr(2.0 * step);
                assert!(max_abs(&(fd - &dh[a])) <= 1e-6 * max_abs(&dh[a]).max(1.0));
            }
        }
    }

    #[test]
    fn collective_spin_algebra() {
        let [j1, j2, j3] = collective_spin(4);
        let comm = &j1 * &j2 - &j2 * &j1;
        assert!(max_abs(&(comm - &j3 * I)) < 1e-12);
        let casimir = &j1 * &j1 + &j2 * &j2 + &j3 * &j3;
        assert!(max_abs(&(casimir - eye(5) * cr(6.0))) < 1e-12);
    }

    #[test]
    fn coherent_state_points_along_y() {
        let psi = coherent_spin_state(4, PI / 2.0, PI / 2.0).unwrap();
        let [_, j2, _] = collective_spin(4);
        let mean = (psi.adjoint() * &j2 * &psi)[(0, 0)].re;
        assert!((mean - 2.0).abs() < 1e-10);
        assert!((psi.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn povms_are_complete() {
        for m in [pm_povm(), xx_povm()] {
            Povm::new(m.into_ops()).unwrap();
        }
    }

    #[test]
    fn nv_probe_and_dynamics_stay_physical() {
        let tspan = crate::dynamics::linspace(0.0, 0.01, 11);
        let nv = nv_center(NvConstants::default(), [5e-4; 3], 2.0 * PI, tspan);
        let traj = nv.propagate(&nv_probe()).unwrap();
        for s in &traj {
            assert!((trace(&s.rho).re - 1.0).abs() < 1e-8);
        }
        let f = qfim(traj.last().unwrap(), LdType::Sld, 1e-8).unwrap();
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn grid_states_match_unitary_oracle() {
        let g = model_grid(&Template::QubitFrequency, vec![vec![0.5, 1.0]]).unwrap();
        let st = g.states(&plus_state(), 2.0, &[]).unwrap();
        for s in &st {
            let f = qfim(s, LdType::Sld, 1e-8).unwrap()[(0, 0)];
            assert!((f - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_template_and_constants_rejected() {
        let empty = BTreeMap::new();
        assert!(matches!(Template::from_id("bogus", &empty), Err(Error::UnknownTemplate(_))));
        let mut bad = BTreeMap::new();
        bad.insert("nope".to_string(), 1.0);
        assert!(Template::from_id("qubit_phase", &bad).is_err());
    }

    #[test]
    fn single_point_axis() {
        let g = model_grid(&Template::QubitFrequency, vec![vec![1.0]]).unwrap();
        assert_eq!(g.shape(), vec![1]);
        assert_eq!(unravel(&g.axes, 0), vec![0]);
    }
}
