//! Holevo Cramér–Rao bound via its semidefinite reformulation.
//!
//! With an orthonormal Hermitian basis `{λ_i}`, `X_a = Σ_i Λ_ai λ_i` and the
//! Gram matrix `S_ij = Tr(ρ λ_i λ_j) = R†R` (`R` its principal root), the bound is
//!
//! ```text
//! min Tr(W V)  s.t.  [[V, (RΛᵀ)†], [RΛᵀ, 𝟙]] ⪰ 0,  Σ_i Λ_ai Tr(λ_i ∂_b ρ) = δ_ab.
//! ```

use crate::asymptotic::{qfim, weighted_inverse_trace, LdType};
use crate::error::{Error, Result};
use crate::linalg::{eigh_real, operator_basis, psd_sqrt, trace_prod, CMat, RMat};
use crate::prelude::*;
use crate::sdp::{Lmi, SdpOptions};
use crate::state::DerivedState;

fn realify(m: &CMat) -> RMat {
    let n = m.nrows();
    RMat::from_fn(2 * n, 2 * n, |i, j| {
        let z = m[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

fn weight_rank(w: &RMat) -> usize {
    let vals = eigh_real(w).0;
    let top = vals.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    vals.iter().filter(|v| v.abs() > 1e-12 * top.max(1e-300)).count()
}

/// Holevo bound `min Tr(W V)`; reduces to `W/F` for one parameter and to
/// `Tr(W F⁻¹)` for rank-one `W`.
pub fn hcrb(ds: &DerivedState, w: &RMat, eps: f64) -> Result<f64> {
    let n = ds.nparams();
    if w.shape() != (n, n) {
        return Err(Error::Dimension(format!("W must be {n}x{n}")));
    }
    let wv = eigh_real(w).0;
    if wv.first().is_some_and(|&v| v < -1e-10) {
        return Err(Error::Domain("W is not positive semidefinite".into()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    if n == 1 {
        let f = qfim(ds, LdType::Sld, eps)?[(0, 0)];
        return Ok(w[(0, 0)] / f);
    }
    if weight_rank(w) <= 1 {
        return Ok(weighted_inverse_trace(&qfim(ds, LdType::Sld, eps)?, w));
    }
    solve_sdp(ds, w)
}

fn solve_sdp(ds: &DerivedState, w: &RMat) -> Result<f64> {
    let n = ds.nparams();
    let d = ds.dim();
    let basis = operator_basis(d)?;
    let nb = basis.len();
    let nv = n * (n + 1) / 2;
    let nvar = nv + n * nb;
    let size = n + nb;

    let s = CMat::from_fn(nb, nb, |i, j| trace_prod(&(&ds.rho * &basis[i]), &basis[j]));
    let r = psd_sqrt(&crate::linalg::hermitian_part(&s));

    // T_ib = Tr(λ_i ∂_b ρ), real for Hermitian operands.
    let t = RMat::from_fn(nb, n, |i, b| trace_prod(&basis[i], &ds.drho[b]).re);
    let tt = t.transpose() * &t;
    let tt_inv = tt
        .clone()
        .try_inverse()
        .filter(|_| eigh_real(&tt).0[0] > 1e-12 * tt.diagonal().amax().max(1e-300))
        .ok_or_else(|| Error::Infeasible("parameter derivatives are linearly dependent".into()))?;
    let lam0 = tt_inv * t.transpose();

    let mut wreg = w.clone();
    if weight_rank(w) < n {
        // A singular W leaves V unbounded along its kernel; a vanishing ridge keeps the barrier bounded.
        let tr = w.trace();
        for a in 0..n {
            wreg[(a, a)] += 1e-10 * tr;
        }
    }

    let mut c = vec![0.0; nvar];
    let mut fi = Vec::with_capacity(nvar);
    let mut k = 0;
    for a in 0..n {
        for b in a..n {
            c[k] = if a == b { wreg[(a, a)] } else { wreg[(a, b)] + wreg[(b, a)] };
            let mut m = CMat::zeros(size, size);
            m[(a, b)] = crate::linalg::cr(1.0);
            m[(b, a)] = crate::linalg::cr(1.0);
            fi.push(realify(&m));
            k += 1;
        }
    }
    for a in 0..n {
        for i in 0..nb {
            let mut m = CMat::zeros(size, size);
            for row in 0..nb {
                m[(n + row, a)] = r[(row, i)];
                m[(a, n + row)] = r[(row, i)].conj();
            }
            fi.push(realify(&m));
        }
    }
    let mut f0 = CMat::zeros(size, size);
    for row in 0..nb {
        f0[(n + row, n + row)] = crate::linalg::cr(1.0);
    }

    let mut a_eq = RMat::zeros(n * n, nvar);
    let mut b_eq = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let row = a * n + b;
            for i in 0..nb {
                a_eq[(row, nv + a * nb + i)] = t[(i, b)];
            }
            b_eq[row] = if a == b { 1.0 } else { 0.0 };
        }
    }

    // Start from the least-norm Λ and a V dominating Z(Λ).
    let z0 = {
        let lam_c = lam0.map(crate::linalg::cr);
        &lam_c * &s * lam_c.transpose()
    };
    let zmax = crate::linalg::eigvalsh(&z0).last().copied().unwrap_or(0.0);
    let mut x0 = vec![0.0; nvar];
    let mut k = 0;
    for a in 0..n {
        for b in a..n {
            x0[k] = if a == b { zmax.max(0.0) + 1.0 } else { 0.0 };
            k += 1;
        }
    }
    for a in 0..n {
        for i in 0..nb {
            x0[nv + a * nb + i] = lam0[(a, i)];
        }
    }

    let lmi = Lmi { c, f0: realify(&f0), fi, a_eq, b_eq };
    let sol = lmi.solve(&x0, SdpOptions::default())?;
    Ok(sol.value)
}
