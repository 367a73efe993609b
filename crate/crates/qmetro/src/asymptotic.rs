//! Logarithmic derivatives, quantum and classical Fisher information.

use crate::error::{Error, Result};
use crate::linalg::{cr, eigh, eye, kron, sylvester_in_basis, trace_prod, CMat, CVec, RMat};
use crate::prelude::*;
use crate::sic::sic_povm;
use crate::state::{DerivedState, Povm};

pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LdType {
    #[default]
    Sld,
    Rld,
    Lld,
}

/// Basis in which logarithmic derivatives are returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rep {
    #[default]
    Original,
    Eigen,
}

fn spectrum(rho: &CMat, eps: f64) -> (Vec<f64>, CMat) {
    let (mut vals, v) = eigh(rho);
    vals.iter_mut().filter(|l| **l < eps).for_each(|l| *l = 0.0);
    (vals, v)
}

/// Symmetric logarithmic derivatives from the spectral decomposition of `ρ`.
///
/// Entries with `λ_i + λ_j < eps` (the kernel block) are zero.
pub fn sld(ds: &DerivedState, rep: Rep, eps: f64) -> Vec<CMat> {
    let (vals, v) = spectrum(&ds.rho, eps);
    ds.drho
        .iter()
        .map(|d| {
            let l = sylvester_in_basis(&vals, &v, &(d * cr(2.0)), eps);
            match rep {
                Rep::Original => l,
                Rep::Eigen => v.adjoint() * l * &v,
            }
        })
        .collect()
}

/// SLD from `vec(L) = 2 (ρ ⊗ 𝟙 + 𝟙 ⊗ ρ*)⁺ vec(∂ρ)`, pseudo-inverting below `eps`.
pub fn sld_vec(ds: &DerivedState, eps: f64) -> Vec<CMat> {
    let d = ds.dim();
    let id = eye(d);
    let m = kron(&ds.rho, &id) + kron(&id, &ds.rho.map(|z| z.conj()));
    let (vals, u) = eigh(&m);
    let inv = CVec::from_fn(d * d, |i, _| if vals[i].abs() >= eps { cr(1.0 / vals[i]) } else { cr(0.0) });
    let pinv = &u * CMat::from_diagonal(&inv) * u.adjoint();
    ds.drho
        .iter()
        .map(|dr| {
            let v = &pinv * crate::linalg::vec(dr) * cr(2.0);
            CMat::from_fn(d, d, |i, j| v[i * d + j])
        })
        .collect()
}

fn one_sided(ds: &DerivedState, eps: f64, right: bool) -> Result<Vec<CMat>> {
    let (vals, v) = spectrum(&ds.rho, eps);
    let n = vals.len();
    let mut out = Vec::with_capacity(ds.nparams());
    for (a, dr) in ds.drho.iter().enumerate() {
        let mut t = v.adjoint() * dr * &v;
        for i in 0..n {
            for j in 0..n {
                let lam = if right { vals[i] } else { vals[j] };
                if lam > 0.0 {
                    t[(i, j)] /= cr(lam);
                } else if t[(i, j)].norm() > eps {
                    return Err(Error::NonExistence(format!(
                        "support of ∂ρ_{a} is not contained in the support of ρ"
                    )));
                } else {
                    t[(i, j)] = cr(0.0);
                }
            }
        }
        out.push(&v * t * v.adjoint());
    }
    Ok(out)
}

/// Right logarithmic derivatives `∂ρ = ρ𝓡`.
pub fn rld(ds: &DerivedState, eps: f64) -> Result<Vec<CMat>> {
    one_sided(ds, eps, true)
}

/// Left logarithmic derivatives `∂ρ = 𝓡†ρ`, returned as the operators `𝓡†`.
pub fn lld(ds: &DerivedState, eps: f64) -> Result<Vec<CMat>> {
    one_sided(ds, eps, false)
}

/// Logarithmic derivatives of the requested type.
pub fn log_derivatives(ds: &DerivedState, ld: LdType, eps: f64) -> Result<Vec<CMat>> {
    match ld {
        LdType::Sld => Ok(sld(ds, Rep::Original, eps)),
        LdType::Rld => rld(ds, eps),
        LdType::Lld => lld(ds, eps),
    }
}

/// Full complex QFIM; Hermitian, real for SLD.
pub fn qfim_complex(ds: &DerivedState, ld: LdType, eps: f64) -> Result<CMat> {
    let n = ds.nparams();
    let ops = log_derivatives(ds, ld, eps)?;
    let mut f = CMat::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            f[(a, b)] = match ld {
                LdType::Sld => cr(trace_prod(&(&ds.rho * &ops[a]), &ops[b]).re),
                LdType::Rld => trace_prod(&(&ds.rho * &ops[a]), &ops[b].adjoint()),
                LdType::Lld => trace_prod(&(&ds.rho * ops[a].adjoint()), &ops[b]),
            };
        }
    }
    Ok(f)
}

/// QFIM; entries are real parts of [`qfim_complex`].
pub fn qfim(ds: &DerivedState, ld: LdType, eps: f64) -> Result<RMat> {
    Ok(qfim_complex(ds, ld, eps)?.map(|z| z.re))
}

/// QFIM of the state produced by a Kraus channel.
pub fn qfim_kraus(rho0: &CMat, ch: &crate::dynamics::KrausChannel, ld: LdType, eps: f64) -> Result<RMat> {
    qfim(&crate::dynamics::kraus_apply(rho0, ch)?, ld, eps)
}

/// Outcome probabilities and their derivatives `(p_y, ∂_a p_y)`.
pub fn outcome_stats(ds: &DerivedState, m: &Povm) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = m.ops().iter().map(|op| trace_prod(&ds.rho, op).re).collect();
    let dp = m.ops().iter().map(|op| ds.drho.iter().map(|d| trace_prod(d, op).re).collect()).collect();
    (p, dp)
}

fn fim_unchecked(p: &[f64], dp: &[Vec<f64>], n: usize, eps: f64) -> RMat {
    let mut f = RMat::zeros(n, n);
    for (py, dpy) in p.iter().zip(dp) {
        if *py < eps {
            continue;
        }
        for a in 0..n {
            for b in 0..n {
                f[(a, b)] += dpy[a] * dpy[b] / py;
            }
        }
    }
    f
}

/// Classical Fisher information matrix of a probability vector and its derivatives.
pub fn fim(p: &[f64], dp: &[Vec<f64>], eps: f64) -> Result<RMat> {
    if p.len() != dp.len() {
        return Err(Error::Dimension("one derivative list per outcome is required".into()));
    }
    if p.iter().any(|&x| x < -eps) {
        return Err(Error::Domain("negative probability".into()));
    }
    if (p.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
        return Err(Error::Domain("probabilities do not sum to one".into()));
    }
    let n = dp.first().map_or(0, |v| v.len());
    Ok(fim_unchecked(p, dp, n, eps))
}

/// CFIM of a POVM; outcomes with `p < eps` are dropped.
pub fn cfim(ds: &DerivedState, m: &Povm, eps: f64) -> Result<RMat> {
    if m.dim() != ds.dim() {
        return Err(Error::Dimension("POVM does not match the state dimension".into()));
    }
    let (p, dp) = outcome_stats(ds, m);
    Ok(fim_unchecked(&p, &dp, ds.nparams(), eps))
}

/// CFIM for the SIC-POVM of the state's dimension.
pub fn cfim_sic(ds: &DerivedState, eps: f64) -> Result<RMat> {
    cfim(ds, &sic_povm(ds.dim())?, eps)
}

/// Inverse of a symmetric positive-definite matrix, or `None` if singular.
pub fn spd_inverse(m: &RMat) -> Option<RMat> {
    let (vals, _) = crate::linalg::eigh_real(m);
    let scale = vals.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
    if vals.first().is_none_or(|&l| l <= 1e-14 * scale) {
        return None;
    }
    m.clone().try_inverse()
}

/// `Tr(W M⁻¹)`, infinite when `M` is singular.
pub fn weighted_inverse_trace(m: &RMat, w: &RMat) -> f64 {
    match spd_inverse(m) {
        Some(inv) => (w * inv).trace(),
        None => f64::INFINITY,
    }
}

/// First time at which `objective` reaches `f_target`, linearly interpolated
/// between the bracketing trajectory points.
pub fn target_time(
    f_target: f64,
    tspan: &[f64],
    traj: &[DerivedState],
    objective: impl Fn(&DerivedState) -> Result<f64>,
) -> Result<f64> {
    if tspan.len() != traj.len() || tspan.is_empty() {
        return Err(Error::Dimension("trajectory and tspan lengths differ".into()));
    }
    let mut prev = objective(&traj[0])?;
    if prev >= f_target {
        return Ok(tspan[0]);
    }
    for i in 1..traj.len() {
        let cur = objective(&traj[i])?;
        if cur >= f_target {
            let w = (f_target - prev) / (cur - prev);
            return Ok(tspan[i - 1] + w * (tspan[i] - tspan[i - 1]));
        }
        prev = cur;
    }
    Err(Error::NotFound { best: prev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{linspace, KrausChannel, Lindblad};
    use crate::linalg::{c, from_real, ket, max_abs, pauli, projector};
    use crate::random::{random_povm, random_state_full_rank, random_traceless_hermitian, random_unitary};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_example() -> DerivedState {
        DerivedState::new(from_real(2, &[0.75, 0.0, 0.0, 0.25]), vec![from_real(2, &[0.5, 0.0, 0.0, -0.5])]).unwrap()
    }

    fn plus() -> CMat {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        projector(&ket(&[cr(s), cr(s)]))
    }

    fn unitary_qubit(t: f64) -> DerivedState {
        let [_, _, sz] = pauli();
        Lindblad::new(linspace(0.0, t, 101), &sz * cr(0.5), vec![&sz * cr(0.5)], vec![]).propagate_final(&plus()).unwrap()
    }

    fn pm_povm() -> Povm {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        Povm::new(vec![plus(), projector(&ket(&[cr(s), cr(-s)]))]).unwrap()
    }

    #[test]
    fn sld_examples() {
        let l = sld(&diag_example(), Rep::Original, EPS);
        assert!(max_abs(&(&l[0] - from_real(2, &[2.0 / 3.0, 0.0, 0.0, -2.0]))) < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = crate::random::random_ket(&mut rng, 3);
        let h = random_traceless_hermitian(&mut rng, 3);
        let rho = projector(&psi);
        let drho = (&h * &rho - &rho * &h) * c(0.0, -1.0);
        let ds = DerivedState::new(rho, vec![drho.clone()]).unwrap();
        let l = sld(&ds, Rep::Original, EPS);
        assert!(max_abs(&(&l[0] - drho * cr(2.0))) < 1e-8);

        let zero = DerivedState::new(plus(), vec![CMat::zeros(2, 2)]).unwrap();
        assert!(max_abs(&sld(&zero, Rep::Original, EPS)[0]) == 0.0);
    }

    #[test]
    fn eigen_representation_is_diagonal_for_diagonal_input() {
        let l = sld(&diag_example(), Rep::Eigen, EPS);
        assert!((l[0][(0, 1)]).norm() < 1e-14);
    }

    #[test]
    fn sld_vec_examples() {
        let [sx, _, _] = pauli();
        let ds = DerivedState::new(eye(2) * cr(0.5), vec![&sx * cr(0.5)]).unwrap();
        assert!(max_abs(&(&sld_vec(&ds, EPS)[0] - &sx)) < 1e-12);
        let zero = DerivedState::new(eye(2) * cr(0.5), vec![CMat::zeros(2, 2)]).unwrap();
        assert!(max_abs(&sld_vec(&zero, EPS)[0]) == 0.0);
    }

    #[test]
    fn rld_lld_residuals_and_existence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = random_state_full_rank(&mut rng, 3);
        let dr = random_traceless_hermitian(&mut rng, 3);
        let ds = DerivedState::new(rho.clone(), vec![dr.clone()]).unwrap();
        let r = rld(&ds, EPS).unwrap();
        assert!(max_abs(&(&rho * &r[0] - &dr)) < 1e-8);
        let l = lld(&ds, EPS).unwrap();
        assert!(max_abs(&(&l[0] * &rho - &dr)) < 1e-8);
        // Both QFIM variants agree when they exist.
        let fr = qfim(&ds, LdType::Rld, EPS).unwrap();
        let fl = qfim(&ds, LdType::Lld, EPS).unwrap();
        assert!((fr[(0, 0)] - fl[(0, 0)]).abs() < 1e-8);

        let [sx, _, _] = pauli();
        let pure = DerivedState::new(from_real(2, &[1.0, 0.0, 0.0, 0.0]), vec![sx]).unwrap();
        assert!(matches!(rld(&pure, EPS), Err(Error::NonExistence(_))));
        assert!(matches!(lld(&pure, EPS), Err(Error::NonExistence(_))));

        let zero = DerivedState::new(rho, vec![CMat::zeros(3, 3)]).unwrap();
        assert!(max_abs(&rld(&zero, EPS).unwrap()[0]) == 0.0);
    }

    #[test]
    fn qfim_examples() {
        assert!((qfim(&diag_example(), LdType::Sld, EPS).unwrap()[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
        assert!((qfim(&unitary_qubit(2.0), LdType::Sld, EPS).unwrap()[(0, 0)] - 4.0).abs() < 1e-6);
        let zero = DerivedState::new(plus(), vec![CMat::zeros(2, 2)]).unwrap();
        assert_eq!(qfim(&zero, LdType::Sld, EPS).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn qfim_kraus_examples() {
        let [_, _, sz] = pauli();
        let id = KrausChannel::new(vec![eye(2)], vec![vec![CMat::zeros(2, 2)]]).unwrap();
        assert_eq!(qfim_kraus(&plus(), &id, LdType::Sld, EPS).unwrap()[(0, 0)], 0.0);
        let ch = KrausChannel::unitary(&(&sz * cr(0.5)), &[&sz * cr(0.5)], 2.0).unwrap();
        let fk = qfim_kraus(&plus(), &ch, LdType::Sld, EPS).unwrap()[(0, 0)];
        assert!((fk - 4.0).abs() < 1e-8);
        let fl = qfim(&unitary_qubit(2.0), LdType::Sld, EPS).unwrap()[(0, 0)];
        assert!((fk - fl).abs() < 1e-8);
    }

    #[test]
    fn cfim_examples() {
        let t = core::f64::consts::FRAC_PI_2;
        let f = cfim(&unitary_qubit(t), &pm_povm(), EPS).unwrap();
        assert!((f[(0, 0)] - t * t).abs() < 1e-6);
        let zero = DerivedState::new(plus(), vec![CMat::zeros(2, 2)]).unwrap();
        assert_eq!(cfim(&zero, &pm_povm(), EPS).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn fim_examples() {
        let f = fim(&[0.5, 0.5], &[vec![0.3], vec![-0.3]], EPS).unwrap();
        assert!((f[(0, 0)] - 0.36).abs() < 1e-14);
        assert_eq!(fim(&[0.5, 0.5], &[vec![0.0], vec![0.0]], EPS).unwrap()[(0, 0)], 0.0);
        let x = 0.5;
        let f = fim(&[x, 1.0 - x], &[vec![1.0], vec![-1.0]], EPS).unwrap();
        assert!((f[(0, 0)] - 1.0 / (x * (1.0 - x))).abs() < 1e-12);
        assert!(fim(&[1.5, -0.5], &[vec![0.0], vec![0.0]], EPS).is_err());
    }

    #[test]
    fn target_time_examples() {
        let [_, _, sz] = pauli();
        let spec = Lindblad::new(linspace(0.0, 3.0, 301), &sz * cr(0.5), vec![&sz * cr(0.5)], vec![]);
        let traj = spec.propagate(&plus()).unwrap();
        let q = |ds: &DerivedState| Ok(qfim(ds, LdType::Sld, EPS)?[(0, 0)]);
        let t = target_time(4.0, &spec.tspan, &traj, q).unwrap();
        assert!((t - 2.0).abs() < 0.01);
        assert_eq!(target_time(0.0, &spec.tspan, &traj, q).unwrap(), 0.0);
        assert!(matches!(target_time(100.0, &spec.tspan, &traj, q), Err(Error::NotFound { .. })));
    }

    fn random_ds(rng: &mut ChaCha8Rng, d: usize, n: usize) -> DerivedState {
        let rho = random_state_full_rank(rng, d);
        let drho = (0..n).map(|_| random_traceless_hermitian(rng, d) * cr(0.2)).collect();
        DerivedState::new(rho, drho).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn sld_methods_agree(seed in 0u64..100_000, d in 2usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = random_ds(&mut rng, d, 2);
            let a = sld(&ds, Rep::Original, EPS);
            let b = sld_vec(&ds, EPS);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(max_abs(&(x - y)) <= 1e-8);
            }
        }

        #[test]
        fn qfim_unitary_invariance(seed in 0u64..100_000, d in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = random_ds(&mut rng, d, 2);
            let u = random_unitary(&mut rng, d);
            let rot = DerivedState::new(&u * &ds.rho * u.adjoint(), ds.drho.iter().map(|m| &u * m * u.adjoint()).collect()).unwrap();
            let f1 = qfim(&ds, LdType::Sld, EPS).unwrap();
            let f2 = qfim(&rot, LdType::Sld, EPS).unwrap();
            prop_assert!((f1 - f2).abs().max() <= 1e-8);
        }

        #[test]
        fn cfim_below_qfim(seed in 0u64..100_000, d in 2usize..5, m in 2usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = random_ds(&mut rng, d, 2);
            let povm = Povm::new(random_povm(&mut rng, d, m.max(d))).unwrap();
            let gap = qfim(&ds, LdType::Sld, EPS).unwrap() - cfim(&ds, &povm, EPS).unwrap();
            prop_assert!(crate::linalg::eigh_real(&gap).0[0] >= -1e-8);
        }

        #[test]
        fn qfisup_attained_at_sld(seed in 0u64..100_000, d in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = random_ds(&mut rng, d, 1);
            let l = &sld(&ds, Rep::Original, EPS)[0];
            let val = 2.0 * trace_prod(l, &ds.drho[0]).re - trace_prod(&ds.rho, &(l * l)).re;
            prop_assert!((val - qfim(&ds, LdType::Sld, EPS).unwrap()[(0, 0)]).abs() <= 1e-8);
        }
    }
}
