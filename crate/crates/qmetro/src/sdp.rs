//! Dense interior-point solver for small linear matrix inequality problems
//!
//! ```text
//! minimize cᵀx  subject to  F₀ + Σ_i x_i F_i ≻ 0,  A x = b
//! ```
//!
//! Equalities are eliminated through a nullspace basis; the remaining problem
//! is solved by a log-det barrier path-following method with damped Newton
//! centering. On the central path the duality gap equals `m / t`, with `m` the
//! LMI size and `t` the barrier weight.

use crate::error::{Error, Result};
use crate::linalg::{eigh_real, RMat};
use crate::prelude::*;
use nalgebra::{Cholesky, DVector};

#[derive(Debug, Clone)]
pub struct Lmi {
    pub c: Vec<f64>,
    pub f0: RMat,
    pub fi: Vec<RMat>,
    pub a_eq: RMat,
    pub b_eq: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    /// Target duality gap, relative to `max(1, |cᵀx|)`.
    pub gap_tol: f64,
    pub mu: f64,
    pub max_newton: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-9, mu: 10.0, max_newton: 5000 }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub gap: f64,
    pub newton_steps: usize,
}

fn assemble(f0: &RMat, g: &[RMat], z: &[f64]) -> RMat {
    let mut f = f0.clone();
    for (gj, zj) in g.iter().zip(z) {
        if *zj != 0.0 {
            f += gj * *zj;
        }
    }
    f
}

fn log_det(ch: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0
}

/// Orthonormal basis of the nullspace of `a` (columns).
fn nullspace(a: &RMat, n: usize) -> RMat {
    if a.nrows() == 0 {
        return RMat::identity(n, n);
    }
    let ata = a.transpose() * a;
    let (vals, vecs) = eigh_real(&ata);
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let keep: Vec<usize> = (0..n).filter(|&i| vals[i].abs() <= 1e-12 * scale).collect();
    RMat::from_fn(n, keep.len(), |r, k| vecs[(r, keep[k])])
}

impl Lmi {
    pub fn nvars(&self) -> usize {
        self.c.len()
    }

    pub fn eval(&self, x: &[f64]) -> RMat {
        assemble(&self.f0, &self.fi, x)
    }

    /// Solves from a point `x0` that is strictly feasible for the LMI; `x0` is
    /// first projected onto the equality constraints.
    pub fn solve(&self, x0: &[f64], opts: SdpOptions) -> Result<SdpSolution> {
        let n = self.nvars();
        if x0.len() != n || self.fi.len() != n || self.a_eq.ncols() != n || self.b_eq.len() != self.a_eq.nrows() {
            return Err(Error::Dimension("LMI data sizes are inconsistent".into()));
        }
        let m = self.f0.nrows();
        let mut x = DVector::from_column_slice(x0);
        if self.a_eq.nrows() > 0 {
            let b = DVector::from_column_slice(&self.b_eq);
            let r = &self.a_eq * &x - &b;
            if r.amax() > 1e-12 {
                let (pinv, _) = crate::linalg::pinv_sym(&(&self.a_eq * self.a_eq.transpose()), 1e-14);
                x -= self.a_eq.transpose() * (pinv * r);
            }
            let r = &self.a_eq * &x - b;
            if r.amax() > 1e-8 {
                return Err(Error::Infeasible(format!("equality residual {:.3e}", r.amax())));
            }
        }
        let f_start = self.eval(x.as_slice());
        if Cholesky::new(f_start.clone()).is_none() {
            return Err(Error::Infeasible("starting point is not strictly feasible".into()));
        }
        let nb = nullspace(&self.a_eq, n);
        let k = nb.ncols();
        let g: Vec<RMat> = (0..k)
            .map(|j| {
                let mut gj = RMat::zeros(m, m);
                for i in 0..n {
                    let w = nb[(i, j)];
                    if w != 0.0 {
                        gj += &self.fi[i] * w;
                    }
                }
                gj
            })
            .collect();
        let c = DVector::from_column_slice(&self.c);
        let ct: Vec<f64> = (0..k).map(|j| nb.column(j).dot(&c)).collect();
        let mut z = vec![0.0; k];
        let objective_at_start = c.dot(&x);
        let mut t = m as f64 / objective_at_start.abs().max(1.0);
        let mut steps = 0;
        let objective = |z: &[f64]| -> f64 {
            let xr = &x + &nb * DVector::from_column_slice(z);
            c.dot(&xr)
        };
        loop {
            // Newton centering for φ_t(z) = t c̃ᵀz − log det F(z); approximate centering suffices
            // for the gap estimate, so each stage is capped.
            for _ in 0..500 {
                steps += 1;
                if steps > opts.max_newton {
                    return Err(Error::Convergence(format!(
                        "barrier method exceeded {} Newton steps at gap {:.3e}",
                        opts.max_newton,
                        m as f64 / t
                    )));
                }
                let f = assemble(&f_start, &g, &z);
                let ch = Cholesky::new(f).ok_or_else(|| Error::Convergence("lost strict feasibility".into()))?;
                let finv = ch.inverse();
                let p: Vec<RMat> = g.iter().map(|gj| &finv * gj).collect();
                let grad = DVector::from_fn(k, |j, _| t * ct[j] - p[j].trace());
                let mut h = RMat::zeros(k, k);
                for a in 0..k {
                    for b in a..k {
                        let v = p[a].component_mul(&p[b].transpose()).sum();
                        h[(a, b)] = v;
                        h[(b, a)] = v;
                    }
                }
                let ridge = 1e-14 * h.diagonal().amax().max(1e-300);
                for a in 0..k {
                    h[(a, a)] += ridge;
                }
                let dz = match Cholesky::new(h.clone()) {
                    Some(hc) => hc.solve(&(-&grad)),
                    None => h.lu().solve(&(-&grad)).ok_or_else(|| Error::Convergence("singular Newton system".into()))?,
                };
                let dec = -grad.dot(&dz);
                if dec / 2.0 < 1e-9 || k == 0 {
                    break;
                }
                // Decrease is formed from exact differences; φ itself can be large enough late
                // on the path that comparing absolute values loses all precision.
                let slope = t * ct.iter().zip(dz.iter()).map(|(a, b)| a * b).sum::<f64>();
                let ld0 = log_det(&ch);
                let mut s = 1.0;
                let mut accepted = false;
                for _ in 0..80 {
                    let zn: Vec<f64> = z.iter().zip(dz.iter()).map(|(a, b)| a + s * b).collect();
                    if let Some(chn) = Cholesky::new(assemble(&f_start, &g, &zn)) {
                        let delta = s * slope - (log_det(&chn) - ld0);
                        if delta <= -0.25 * s * dec {
                            z = zn;
                            accepted = true;
                            break;
                        }
                    }
                    s *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            let value = objective(&z);
            let gap = m as f64 / t;
            if gap <= opts.gap_tol * value.abs().max(1.0) {
                let xr = &x + &nb * DVector::from_column_slice(&z);
                return Ok(SdpSolution { x: xr.as_slice().to_vec(), value, gap, newton_steps: steps });
            }
            t *= opts.mu;
        }
    }
}
