//! Weyl–Heisenberg covariant SIC-POVMs with numerically located fiducials.

use crate::error::{Error, Result};
use crate::linalg::{c, cr, C64};
use crate::prelude::*;
use crate::random::gaussian;
use crate::state::Povm;
use crate::CVec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MAX_SIC_DIM: usize = 16;
const RESTARTS: usize = 64;
const OVERLAP_TOL: f64 = 1e-7;

struct Weyl {
    d: usize,
    /// `phase[a*d+b] = (−e^{iπ/d})^{ab}`.
    phase: Vec<C64>,
    /// `omega[k] = e^{2πik/d}`.
    omega: Vec<C64>,
}

impl Weyl {
    fn new(d: usize) -> Self {
        let pi = core::f64::consts::PI;
        let mut phase = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                // −e^{iπ/d} = e^{iπ(1+1/d)}; reduce the exponent mod 2 to keep precision.
                let m = ((a * b) % (2 * d)) as f64;
                let ang = pi * (m * (1.0 + 1.0 / d as f64)) % (2.0 * pi);
                phase.push(c(ang.cos(), ang.sin()));
            }
        }
        let omega = (0..d)
            .map(|k| {
                let ang = 2.0 * pi * k as f64 / d as f64;
                c(ang.cos(), ang.sin())
            })
            .collect();
        Self { d, phase, omega }
    }

    /// `D_ab ψ` where `(D_ab ψ)_{k+a} = phase · ω^{bk} ψ_k`.
    fn apply(&self, a: usize, b: usize, psi: &[C64], out: &mut [C64]) {
        let d = self.d;
        let ph = self.phase[a * d + b];
        for k in 0..d {
            out[(k + a) % d] = ph * self.omega[(b * k) % d] * psi[k];
        }
    }

    fn apply_adj(&self, a: usize, b: usize, psi: &[C64], out: &mut [C64]) {
        let d = self.d;
        let ph = self.phase[a * d + b].conj();
        for k in 0..d {
            out[k] = ph * self.omega[(b * k) % d].conj() * psi[(k + a) % d];
        }
    }

    /// Normalized frame potential `Σ_ab |⟨ψ|D_ab|ψ⟩|⁴ / ‖ψ‖⁸` and its real gradient.
    fn potential(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.d;
        let psi: Vec<C64> = (0..d).map(|k| c(x[k], x[d + k])).collect();
        let n: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let mut g = 0.0;
        let mut dg = vec![cr(0.0); d];
        let mut dpsi = vec![cr(0.0); d];
        let mut dapsi = vec![cr(0.0); d];
        for a in 0..d {
            for b in 0..d {
                self.apply(a, b, &psi, &mut dpsi);
                let ov: C64 = psi.iter().zip(&dpsi).map(|(p, q)| p.conj() * q).sum();
                let m2 = ov.norm_sqr();
                g += m2 * m2;
                self.apply_adj(a, b, &psi, &mut dapsi);
                for k in 0..d {
                    dg[k] += (ov.conj() * dpsi[k] + ov * dapsi[k]) * cr(2.0 * m2);
                }
            }
        }
        let n4 = n * n * n * n;
        let f = g / n4;
        let mut grad = vec![0.0; 2 * d];
        for k in 0..d {
            let w = dg[k] / cr(n4) - psi[k] * cr(4.0 * g / (n4 * n));
            grad[k] = 2.0 * w.re;
            grad[d + k] = 2.0 * w.im;
        }
        (f, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking; returns the final iterate.
fn lbfgs(f: &dyn Fn(&[f64]) -> (f64, Vec<f64>), mut x: Vec<f64>, max_iter: usize, gtol: f64) -> Vec<f64> {
    const MEM: usize = 10;
    let (mut fx, mut gx) = f(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    for _ in 0..max_iter {
        if dot(&gx, &gx).sqrt() < gtol {
            break;
        }
        let mut q = gx.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &gx);
        if slope >= 0.0 {
            dir = gx.iter().map(|v| -v).collect();
            slope = dot(&dir, &gx);
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fn_, gn) = f(&xn);
            if fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&gx).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-300 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > MEM {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        x = xn;
        fx = fn_;
        gx = gn;
    }
    x
}

fn max_overlap_error(w: &Weyl, psi: &[C64]) -> f64 {
    let d = w.d;
    let target = 1.0 / (d as f64 + 1.0);
    let mut out = vec![cr(0.0); d];
    let mut err: f64 = 0.0;
    for a in 0..d {
        for b in 0..d {
            if a == 0 && b == 0 {
                continue;
            }
            w.apply(a, b, psi, &mut out);
            let ov: C64 = psi.iter().zip(&out).map(|(p, q)| p.conj() * q).sum();
            err = err.max((ov.norm_sqr() - target).abs());
        }
    }
    err
}

/// Finds a normalized fiducial vector by minimizing the frame potential from
/// seeded random starts.
pub fn sic_fiducial(d: usize) -> Result<CVec> {
    if !(2..=MAX_SIC_DIM).contains(&d) {
        return Err(Error::Domain(format!("SIC dimension must lie in 2..={MAX_SIC_DIM}, got {d}")));
    }
    let w = Weyl::new(d);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5_1C + d as u64);
    let mut best = f64::INFINITY;
    for _ in 0..RESTARTS {
        let x0: Vec<f64> = (0..2 * d).map(|_| gaussian(&mut rng)).collect();
        let x = lbfgs(&|x| w.potential(x), x0, 4000, 1e-13);
        let mut psi: Vec<C64> = (0..d).map(|k| c(x[k], x[d + k])).collect();
        let n = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        psi.iter_mut().for_each(|z| *z /= cr(n));
        let err = max_overlap_error(&w, &psi);
        if err <= OVERLAP_TOL {
            return Ok(CVec::from_vec(psi));
        }
        best = best.min(err);
    }
    Err(Error::Convergence(format!("SIC fiducial search in d={d} reached overlap error {best:.3e}")))
}

/// The `d²` rank-one elements `(1/d) D_ab|ψ⟩⟨ψ|D_ab†`.
pub fn sic_povm(d: usize) -> Result<Povm> {
    let psi = sic_fiducial(d)?;
    let w = Weyl::new(d);
    let mut out = vec![cr(0.0); d];
    let mut ops = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            w.apply(a, b, psi.as_slice(), &mut out);
            let v = CVec::from_column_slice(&out);
            ops.push(&v * v.adjoint() * cr(1.0 / d as f64));
        }
    }
    Ok(Povm::new_unchecked(ops))
}
