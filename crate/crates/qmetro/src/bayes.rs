//! Bayesian estimation and Bayesian bounds on discretized priors.
//!
//! Every integral is a trapezoidal rule on the stored axes (product weights for
//! several parameters). Flattened grid arrays are row-major, last axis fastest.

use crate::asymptotic::{cfim, qfim, LdType};
use crate::error::{Error, Result};
use crate::linalg::{pinv_sym, sylvester_symmetric, trace_norm, trace_prod, CMat, RMat};
use crate::models::{check_axes, grid_len, grid_point, unravel};
use crate::prelude::*;
use crate::state::{DerivedState, Povm};
use rand::Rng;

/// Trapezoid weights for one strictly increasing axis; a single point gets weight 1.
pub fn trapezoid_axis(ax: &[f64]) -> Vec<f64> {
    let n = ax.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = 0.5 * (ax[i + 1] - ax[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// Product trapezoid weights over the outer product of `axes`.
pub fn trapezoid_weights(axes: &[Vec<f64>]) -> Vec<f64> {
    let per: Vec<Vec<f64>> = axes.iter().map(|a| trapezoid_axis(a)).collect();
    (0..grid_len(axes))
        .map(|k| unravel(axes, k).iter().zip(&per).map(|(&i, w)| w[i]).product())
        .collect()
}

fn integrate(w: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    w.iter().enumerate().map(|(k, wk)| wk * f(k)).sum()
}

fn integrate_mat(w: &[f64], n: usize, f: impl Fn(usize) -> RMat) -> RMat {
    let mut acc = RMat::zeros(n, n);
    for (k, wk) in w.iter().enumerate() {
        if *wk != 0.0 {
            acc += f(k) * *wk;
        }
    }
    acc
}

/// Discretized prior with per-point states.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorGrid {
    pub axes: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    /// `∂_a p` per grid point, required by the bounds that use prior information.
    pub dp: Option<Vec<Vec<f64>>>,
    pub states: Vec<DerivedState>,
}

impl PriorGrid {
    /// Checks shapes and normalization (trapezoid integral within 1e-6 of 1).
    pub fn new(axes: Vec<Vec<f64>>, p: Vec<f64>, dp: Option<Vec<Vec<f64>>>, states: Vec<DerivedState>) -> Result<Self> {
        check_axes(&axes)?;
        let n = grid_len(&axes);
        if p.len() != n {
            return Err(Error::Dimension(format!("prior has {} values for {n} grid points", p.len())));
        }
        if !states.is_empty() && states.len() != n {
            return Err(Error::Dimension(format!("{} states for {n} grid points", states.len())));
        }
        if let Some(dp) = &dp {
            if dp.len() != n || dp.iter().any(|v| v.len() != axes.len()) {
                return Err(Error::Dimension("prior derivative array does not match the grid".into()));
            }
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("prior values must be finite and nonnegative".into()));
        }
        let grid = Self { axes, p, dp, states };
        let total = grid.total();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("prior integrates to {total}, expected 1")));
        }
        Ok(grid)
    }

    /// Rescales `p` (and `dp`) to unit trapezoid integral, then validates.
    pub fn normalized(axes: Vec<Vec<f64>>, p: Vec<f64>, dp: Option<Vec<Vec<f64>>>, states: Vec<DerivedState>) -> Result<Self> {
        check_axes(&axes)?;
        let w = trapezoid_weights(&axes);
        if w.len() != p.len() {
            return Err(Error::Dimension(format!("prior has {} values for {} grid points", p.len(), w.len())));
        }
        let z = integrate(&w, |k| p[k]);
        if !(z > 0.0) {
            return Err(Error::Degenerate("prior has zero mass".into()));
        }
        let p = p.into_iter().map(|v| v / z).collect();
        let dp = dp.map(|dp| dp.into_iter().map(|v| v.into_iter().map(|d| d / z).collect()).collect());
        Self::new(axes, p, dp, states)
    }

    pub fn uniform(axes: Vec<Vec<f64>>, states: Vec<DerivedState>) -> Result<Self> {
        let n = grid_len(&axes);
        let np = axes.len();
        Self::normalized(axes, vec![1.0; n], Some(vec![vec![0.0; np]; n]), states)
    }

    /// Gaussian `N(μ, η²)` truncated to the axis, with its analytic derivative.
    pub fn gaussian(axis: Vec<f64>, mu: f64, eta: f64, states: Vec<DerivedState>) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::Domain("standard deviation must be positive".into()));
        }
        let p: Vec<f64> = axis.iter().map(|x| (-(x - mu) * (x - mu) / (2.0 * eta * eta)).exp()).collect();
        let dp = axis.iter().zip(&p).map(|(x, pv)| vec![-(x - mu) / (eta * eta) * pv]).collect();
        Self::normalized(vec![axis], p, Some(dp), states)
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn nparams(&self) -> usize {
        self.axes.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.axes)
    }

    pub fn total(&self) -> f64 {
        integrate(&self.weights(), |k| self.p[k])
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        grid_point(&self.axes, k)
    }

    fn need_states(&self) -> Result<()> {
        if self.states.len() != self.len() {
            return Err(Error::Dimension("grid states are required".into()));
        }
        Ok(())
    }

    fn need_dp(&self) -> Result<&[Vec<f64>]> {
        self.dp.as_deref().ok_or_else(|| Error::Domain("prior derivatives are required".into()))
    }
}

/// Point estimator applied to a posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Estimator {
    Mean,
    #[default]
    Map,
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Posterior mean or MAP point of `p` on `axes`.
pub fn estimate(axes: &[Vec<f64>], w: &[f64], p: &[f64], est: Estimator) -> Vec<f64> {
    match est {
        Estimator::Map => grid_point(axes, argmax(p)),
        Estimator::Mean => (0..axes.len())
            .map(|a| integrate(w, |k| p[k] * axes[a][unravel(axes, k)[a]]))
            .collect(),
    }
}

/// `p(y|x) = Tr(ρ(x)Π_y)` as `table[y][k]`.
pub fn likelihood_table(states: &[DerivedState], m: &Povm) -> Result<Vec<Vec<f64>>> {
    if states.first().is_some_and(|s| s.dim() != m.dim()) {
        return Err(Error::Dimension("POVM does not match the state dimension".into()));
    }
    Ok(m.ops().iter().map(|op| states.iter().map(|s| trace_prod(&s.rho, op).re.max(0.0)).collect()).collect())
}

/// One Bayes-rule step in place: `p ← p·ℓ / ∫p·ℓ`.
pub fn posterior_step(p: &mut [f64], like: &[f64], w: &[f64]) -> Result<()> {
    for (pk, lk) in p.iter_mut().zip(like) {
        *pk *= lk;
    }
    let z = integrate(w, |k| p[k]);
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Degenerate("posterior vanishes on the grid".into()));
    }
    for pk in p.iter_mut() {
        *pk /= z;
    }
    Ok(())
}

/// Output of a sequential estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    /// Final array (posterior or scaled likelihood).
    pub last: Vec<f64>,
    /// Every round's array when requested, otherwise empty.
    pub rounds: Vec<Vec<f64>>,
    /// Estimate after each round.
    pub estimates: Vec<Vec<f64>>,
}

fn check_outcomes(ys: &[usize], m: &Povm) -> Result<()> {
    match ys.iter().find(|&&y| y >= m.len()) {
        Some(y) => Err(Error::Domain(format!("outcome {y} is out of range for {} POVM elements", m.len()))),
        None => Ok(()),
    }
}

/// Sequential Bayesian updates for outcomes `ys`.
pub fn bayes_update(grid: &PriorGrid, m: &Povm, ys: &[usize], est: Estimator, save_all: bool) -> Result<Sequence> {
    grid.need_states()?;
    check_outcomes(ys, m)?;
    let table = likelihood_table(&grid.states, m)?;
    let w = grid.weights();
    let mut p = grid.p.clone();
    let mut rounds = Vec::new();
    let mut estimates = Vec::with_capacity(ys.len());
    for &y in ys {
        posterior_step(&mut p, &table[y], &w)?;
        estimates.push(estimate(&grid.axes, &w, &p, est));
        if save_all {
            rounds.push(p.clone());
        }
    }
    Ok(Sequence { last: p, rounds, estimates })
}

/// Maximum-likelihood estimation; likelihoods accumulate in log space and are
/// reported rescaled so that their maximum is 1.
pub fn mle(grid: &PriorGrid, m: &Povm, ys: &[usize], save_all: bool) -> Result<Sequence> {
    grid.need_states()?;
    check_outcomes(ys, m)?;
    let table = likelihood_table(&grid.states, m)?;
    let mut logl = vec![0.0f64; grid.len()];
    let mut rounds = Vec::new();
    let mut estimates = Vec::with_capacity(ys.len());
    let scaled = |l: &[f64]| {
        let top = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        l.iter().map(|v| (v - top).exp()).collect::<Vec<f64>>()
    };
    for &y in ys {
        for (lk, pk) in logl.iter_mut().zip(&table[y]) {
            *lk += pk.ln();
        }
        estimates.push(grid.point(argmax(&logl)));
        if save_all {
            rounds.push(scaled(&logl));
        }
    }
    Ok(Sequence { last: scaled(&logl), rounds, estimates })
}

fn weight_or_unit(w: &RMat, n: usize) -> Result<RMat> {
    if n == 1 {
        return Ok(RMat::identity(1, 1));
    }
    if w.shape() != (n, n) {
        return Err(Error::Dimension(format!("W must be {n}x{n}")));
    }
    Ok(w.clone())
}

/// Average quadratic cost `∫p Σ_y p(y|x)(x − x̂_y)ᵀW(x − x̂_y)dx`; `W = 1` for one parameter.
pub fn bayes_cost(grid: &PriorGrid, xest: &[Vec<f64>], m: &Povm, w: &RMat) -> Result<f64> {
    grid.need_states()?;
    let n = grid.nparams();
    if xest.len() != m.len() || xest.iter().any(|e| e.len() != n) {
        return Err(Error::Dimension("one estimate vector per outcome is required".into()));
    }
    let w = weight_or_unit(w, n)?;
    let table = likelihood_table(&grid.states, m)?;
    let wt = grid.weights();
    Ok(integrate(&wt, |k| {
        let x = grid.point(k);
        let inner: f64 = (0..m.len())
            .map(|y| {
                let d = RMat::from_fn(n, 1, |a, _| x[a] - xest[y][a]);
                table[y][k] * (d.transpose() * &w * d)[(0, 0)]
            })
            .sum();
        grid.p[k] * inner
    }))
}

/// Lower bound on the average quadratic cost via `ρ̄` and the operators `L̄_a`.
pub fn bcb(grid: &PriorGrid, w: &RMat, eps: f64) -> Result<f64> {
    grid.need_states()?;
    let n = grid.nparams();
    let w = weight_or_unit(w, n)?;
    let wt = grid.weights();
    let d = grid.states[0].dim();
    let mut rho_bar = CMat::zeros(d, d);
    let mut first = vec![CMat::zeros(d, d); n];
    let mut second = 0.0;
    for k in 0..grid.len() {
        let c = wt[k] * grid.p[k];
        if c == 0.0 {
            continue;
        }
        let x = grid.point(k);
        rho_bar += &grid.states[k].rho * crate::linalg::cr(c);
        for a in 0..n {
            first[a] += &grid.states[k].rho * crate::linalg::cr(c * x[a]);
        }
        let xv = RMat::from_column_slice(n, 1, &x);
        second += c * (xv.transpose() * &w * xv)[(0, 0)];
    }
    let lbar: Vec<CMat> = first.iter().map(|f| sylvester_symmetric(&rho_bar, &(f * crate::linalg::cr(2.0)), eps)).collect();
    let mut sub = 0.0;
    for a in 0..n {
        for b in 0..n {
            if w[(a, b)] != 0.0 {
                sub += w[(a, b)] * trace_prod(&(&rho_bar * &lbar[a]), &lbar[b]).re;
            }
        }
    }
    Ok(second - sub)
}

/// Biases `b_a(x)` and their derivatives `∂_a b_a(x)`, indexed `[a][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bias {
    pub b: Vec<Vec<f64>>,
    pub db: Vec<Vec<f64>>,
}

impl Bias {
    pub fn zero(n: usize, len: usize) -> Self {
        Self { b: vec![vec![0.0; len]; n], db: vec![vec![0.0; len]; n] }
    }

    fn check(&self, n: usize, len: usize) -> Result<()> {
        if self.b.len() != n || self.db.len() != n || self.b.iter().chain(&self.db).any(|v| v.len() != len) {
            return Err(Error::Dimension("bias arrays do not match the grid".into()));
        }
        Ok(())
    }
}

/// Matrix-valued bound plus whether any inverse fell back to a pseudo-inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundMatrix {
    pub value: RMat,
    pub pseudo_inverse: bool,
}

/// Which Bayesian Cramér–Rao variant to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BType {
    /// `∫p(B F⁻¹ B + bbᵀ)dx`.
    One,
    /// `𝓑 F̄⁻¹ 𝓑 + ∫p bbᵀdx`, with `F̄` and `𝓑` prior averages.
    Two,
    /// `∫p 𝓖(I_p + F)⁻¹𝓖ᵀdx`.
    Three,
}

impl BType {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(BType::One),
            2 => Ok(BType::Two),
            3 => Ok(BType::Three),
            _ => Err(Error::Domain(format!("btype must be 1, 2 or 3, got {i}"))),
        }
    }
}

fn sym_inverse(m: &RMat, eps: f64, flag: &mut bool) -> RMat {
    let (inv, dropped) = pinv_sym(m, eps);
    *flag |= dropped;
    inv
}

fn bayes_cr_family(grid: &PriorGrid, info: &[RMat], bias: Option<&Bias>, btype: BType, eps: f64) -> Result<BoundMatrix> {
    let n = grid.nparams();
    let len = grid.len();
    let zero = Bias::zero(n, len);
    let bias = bias.unwrap_or(&zero);
    bias.check(n, len)?;
    let wt = grid.weights();
    let b_vec = |k: usize| RMat::from_fn(n, 1, |a, _| bias.b[a][k]);
    let b_diag = |k: usize| RMat::from_fn(n, n, |a, c| if a == c { 1.0 + bias.db[a][k] } else { 0.0 });
    let mut flag = false;
    let value = match btype {
        BType::One => {
            let mut acc = RMat::zeros(n, n);
            for k in 0..len {
                let c = wt[k] * grid.p[k];
                if c == 0.0 {
                    continue;
                }
                let bm = b_diag(k);
                let bv = b_vec(k);
                acc += (&bm * sym_inverse(&info[k], eps, &mut flag) * &bm + &bv * bv.transpose()) * c;
            }
            acc
        }
        BType::Two => {
            let fbar = integrate_mat(&wt, n, |k| &info[k] * grid.p[k]);
            let bbar = integrate_mat(&wt, n, |k| b_diag(k) * grid.p[k]);
            let bb = integrate_mat(&wt, n, |k| {
                let bv = b_vec(k);
                &bv * bv.transpose() * grid.p[k]
            });
            &bbar * sym_inverse(&fbar, eps, &mut flag) * &bbar + bb
        }
        BType::Three => {
            let dp = grid.need_dp()?;
            let mut acc = RMat::zeros(n, n);
            for k in 0..len {
                let pk = grid.p[k];
                let c = wt[k] * pk;
                if c == 0.0 || pk <= 0.0 {
                    continue;
                }
                let dlog: Vec<f64> = dp[k].iter().map(|d| d / pk).collect();
                let ip = RMat::from_fn(n, n, |a, b| dlog[a] * dlog[b]);
                let g = RMat::from_fn(n, n, |a, b| dlog[b] * bias.b[a][k] + if a == b { 1.0 + bias.db[a][k] } else { 0.0 });
                acc += &g * sym_inverse(&(ip + &info[k]), eps, &mut flag) * g.transpose() * c;
            }
            acc
        }
    };
    Ok(BoundMatrix { value, pseudo_inverse: flag })
}

fn pointwise_cfim(grid: &PriorGrid, m: &Povm, eps: f64) -> Result<Vec<RMat>> {
    grid.need_states()?;
    grid.states.iter().map(|s| cfim(s, m, eps)).collect()
}

fn pointwise_qfim(grid: &PriorGrid, ld: LdType, eps: f64) -> Result<Vec<RMat>> {
    grid.need_states()?;
    grid.states.iter().map(|s| qfim(s, ld, eps)).collect()
}

/// Classical Bayesian Cramér–Rao bound of the chosen type.
pub fn bcrb(grid: &PriorGrid, m: &Povm, bias: Option<&Bias>, btype: BType, eps: f64) -> Result<BoundMatrix> {
    bayes_cr_family(grid, &pointwise_cfim(grid, m, eps)?, bias, btype, eps)
}

/// Quantum Bayesian Cramér–Rao bound of the chosen type.
pub fn bqcrb(grid: &PriorGrid, bias: Option<&Bias>, btype: BType, ld: LdType, eps: f64) -> Result<BoundMatrix> {
    bayes_cr_family(grid, &pointwise_qfim(grid, ld, eps)?, bias, btype, eps)
}

/// Prior average of the CFIM.
pub fn avg_cfim(grid: &PriorGrid, m: &Povm, eps: f64) -> Result<RMat> {
    let info = pointwise_cfim(grid, m, eps)?;
    Ok(integrate_mat(&grid.weights(), grid.nparams(), |k| &info[k] * grid.p[k]))
}

/// Prior average of the QFIM.
pub fn avg_qfim(grid: &PriorGrid, ld: LdType, eps: f64) -> Result<RMat> {
    let info = pointwise_qfim(grid, ld, eps)?;
    Ok(integrate_mat(&grid.weights(), grid.nparams(), |k| &info[k] * grid.p[k]))
}

/// Fisher information of the prior, `∫ ∂_a p ∂_b p / p dx`.
pub fn prior_information(grid: &PriorGrid) -> Result<RMat> {
    let dp = grid.need_dp()?;
    let n = grid.nparams();
    Ok(integrate_mat(&grid.weights(), n, |k| {
        let pk = grid.p[k];
        if pk <= 0.0 {
            return RMat::zeros(n, n);
        }
        RMat::from_fn(n, n, |a, b| dp[k][a] * dp[k][b] / pk)
    }))
}

/// Van Trees bound `(I_prior + Ī)⁻¹`.
pub fn vtb(grid: &PriorGrid, m: &Povm, eps: f64) -> Result<BoundMatrix> {
    let total = prior_information(grid)? + avg_cfim(grid, m, eps)?;
    let mut flag = false;
    let value = sym_inverse(&total, eps, &mut flag);
    Ok(BoundMatrix { value, pseudo_inverse: flag })
}

/// Quantum Van Trees bound `(I_prior + F̄)⁻¹`.
pub fn qvtb(grid: &PriorGrid, ld: LdType, eps: f64) -> Result<BoundMatrix> {
    let total = prior_information(grid)? + avg_qfim(grid, ld, eps)?;
    let mut flag = false;
    let value = sym_inverse(&total, eps, &mut flag);
    Ok(BoundMatrix { value, pseudo_inverse: flag })
}

/// Quantum Ziv–Zakai bound for one parameter on a uniformly spaced axis.
///
/// `τ` runs over multiples of the grid spacing; valley filling is the suffix
/// maximum over that `τ` grid.
pub fn qzzb(grid: &PriorGrid, _eps: f64) -> Result<f64> {
    if grid.nparams() != 1 {
        return Err(Error::Unsupported("the Ziv–Zakai bound is single-parameter".into()));
    }
    grid.need_states()?;
    let ax = &grid.axes[0];
    let n = ax.len();
    if n < 2 {
        return Ok(0.0);
    }
    let h = (ax[n - 1] - ax[0]) / (n - 1) as f64;
    if ax.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0)) {
        return Err(Error::Domain("the Ziv–Zakai bound needs a uniformly spaced axis".into()));
    }
    let trap = |vals: &[f64]| -> f64 {
        match vals.len() {
            0 | 1 => 0.0,
            m => h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[m - 1])),
        }
    };
    let mut inner = vec![0.0; n];
    for (j, slot) in inner.iter_mut().enumerate() {
        let vals: Vec<f64> = (0..n - j)
            .map(|i| {
                let pm = grid.p[i].min(grid.p[i + j]);
                if pm == 0.0 {
                    return 0.0;
                }
                let dist = 0.5 * trace_norm(&(&grid.states[i].rho - &grid.states[i + j].rho));
                pm * (1.0 - dist)
            })
            .collect();
        *slot = trap(&vals);
    }
    for j in (0..n - 1).rev() {
        inner[j] = inner[j].max(inner[j + 1]);
    }
    let outer: Vec<f64> = inner.iter().enumerate().map(|(j, v)| j as f64 * h * v).collect();
    Ok(0.5 * trap(&outer))
}

/// Draws one outcome index from `probs`.
pub fn sample_outcome<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (y, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return y;
        }
    }
    probs.len().saturating_sub(1)
}

/// `count` outcomes drawn from `p(y) = Tr(ρΠ_y)`.
pub fn simulate_outcomes<R: Rng + ?Sized>(rng: &mut R, rho: &CMat, m: &Povm, count: usize) -> Vec<usize> {
    let probs: Vec<f64> = m.ops().iter().map(|op| trace_prod(rho, op).re.max(0.0)).collect();
    (0..count).map(|_| sample_outcome(rng, &probs)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::linspace;
    use crate::models::{model_grid, plus_state, pm_povm, Template};
    use crate::sic::sic_povm;
    use core::f64::consts::PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_states(n: usize) -> Vec<DerivedState> {
        let rho = crate::linalg::from_real(2, &[0.7, 0.1, 0.1, 0.3]);
        vec![DerivedState::new(rho, vec![crate::linalg::zeros(2)]).unwrap(); n]
    }

    fn demo_grid(axis: Vec<f64>, prior: Option<(f64, f64)>) -> PriorGrid {
        let t = Template::QubitPhase { kappa: PI / 2.0, omega0: 1.0 };
        let g = model_grid(&t, vec![axis.clone()]).unwrap();
        let states = g.states(&plus_state(), 1.0, &[]).unwrap();
        match prior {
            None => PriorGrid::uniform(vec![axis], states).unwrap(),
            Some((mu, eta)) => PriorGrid::gaussian(axis, mu, eta, states).unwrap(),
        }
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let ax = vec![0.0, 0.1, 0.5, 1.0];
        let w = trapezoid_axis(&ax);
        assert!((w.iter().zip(&ax).map(|(a, b)| a * b).sum::<f64>() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_likelihood_keeps_prior() {
        let ax = linspace(0.0, 1.0, 11);
        let grid = PriorGrid::gaussian(ax, 0.4, 0.2, constant_states(11)).unwrap();
        let out = bayes_update(&grid, &pm_povm(), &[0, 1, 1, 0], Estimator::Mean, true).unwrap();
        for r in &out.rounds {
            for (a, b) in r.iter().zip(&grid.p) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn demo_preset_converges_to_true_value() {
        let axis = linspace(0.0, PI / 2.0, 1000);
        let grid = demo_grid(axis, None);
        let truth = demo_grid(vec![PI / 4.0], None).states[0].rho.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ys = simulate_outcomes(&mut rng, &truth, &pm_povm(), 500);
        let post = bayes_update(&grid, &pm_povm(), &ys, Estimator::Map, true).unwrap();
        let w = grid.weights();
        for r in &post.rounds {
            assert!((integrate(&w, |k| r[k]) - 1.0).abs() < 1e-8);
        }
        assert!((post.estimates.last().unwrap()[0] - PI / 4.0).abs() < 0.05);
        let ml = mle(&grid, &pm_povm(), &ys, false).unwrap();
        assert!((ml.estimates.last().unwrap()[0] - PI / 4.0).abs() < 0.05);
    }

    #[test]
    fn single_point_prior_pins_estimate() {
        let ax = linspace(0.0, 1.0, 5);
        let p = vec![0.0, 0.0, 1.0, 0.0, 0.0];
        let grid = PriorGrid::normalized(vec![ax], p, None, constant_states(5)).unwrap();
        let out = bayes_update(&grid, &pm_povm(), &[0, 1, 0], Estimator::Map, false).unwrap();
        assert!(out.estimates.iter().all(|e| e[0] == 0.5));
    }

    #[test]
    fn repeated_outcome_mle_argmax_is_stable() {
        let grid = demo_grid(linspace(0.0, PI / 2.0, 101), None);
        let a = mle(&grid, &pm_povm(), &[1], false).unwrap();
        let b = mle(&grid, &pm_povm(), &[1; 40], false).unwrap();
        assert_eq!(a.estimates[0], b.estimates[0]);
    }

    #[test]
    fn cost_reduces_to_prior_variance() {
        let ax = linspace(-1.0, 1.0, 401);
        let grid = PriorGrid::gaussian(ax, 0.1, 0.3, constant_states(401)).unwrap();
        let w = grid.weights();
        let mean = integrate(&w, |k| grid.p[k] * grid.axes[0][k]);
        let var = integrate(&w, |k| grid.p[k] * (grid.axes[0][k] - mean).powi(2));
        let cost = bayes_cost(&grid, &[vec![mean], vec![mean]], &pm_povm(), &RMat::identity(1, 1)).unwrap();
        assert!((cost - var).abs() < 1e-12);
    }

    #[test]
    fn bcb_with_constant_state_is_second_moment_minus_mean_term() {
        // Zero-mean prior and x-independent ρ give L̄ = 0.
        let ax = linspace(-1.0, 1.0, 201);
        let grid = PriorGrid::gaussian(ax, 0.0, 0.3, constant_states(201)).unwrap();
        let w = grid.weights();
        let var = integrate(&w, |k| grid.p[k] * grid.axes[0][k].powi(2));
        assert!((bcb(&grid, &RMat::identity(1, 1), 1e-8).unwrap() - var).abs() < 1e-10);
    }

    #[test]
    fn bcb_lower_bounds_optimal_estimator_cost() {
        let grid = demo_grid(linspace(0.0, PI / 2.0, 301), None);
        let bound = bcb(&grid, &RMat::identity(1, 1), 1e-8).unwrap();
        // Projective measurement in the eigenbasis of L̄ with its eigenvalues as estimates.
        let wt = grid.weights();
        let d = 2;
        let mut rho_bar = CMat::zeros(d, d);
        let mut first = CMat::zeros(d, d);
        for k in 0..grid.len() {
            let c = wt[k] * grid.p[k];
            rho_bar += &grid.states[k].rho * crate::linalg::cr(c);
            first += &grid.states[k].rho * crate::linalg::cr(c * grid.axes[0][k]);
        }
        let lbar = sylvester_symmetric(&rho_bar, &(first * crate::linalg::cr(2.0)), 1e-8);
        let (vals, vecs) = crate::linalg::eigh(&lbar);
        let m = Povm::from_basis(&vecs);
        let cost = bayes_cost(&grid, &[vec![vals[0]], vec![vals[1]]], &m, &RMat::identity(1, 1)).unwrap();
        assert!(bound <= cost + 1e-10);
        assert!((bound - cost).abs() < 1e-8);
    }

    #[test]
    fn constant_information_gives_inverse() {
        let ax = linspace(0.0, 1.0, 51);
        let rho = crate::linalg::from_real(2, &[0.75, 0.0, 0.0, 0.25]);
        let d = crate::linalg::from_real(2, &[0.5, 0.0, 0.0, -0.5]);
        let states = vec![DerivedState::new(rho, vec![d]).unwrap(); 51];
        let grid = PriorGrid::uniform(vec![ax], states).unwrap();
        for bt in [BType::One, BType::Two, BType::Three] {
            let v = bqcrb(&grid, None, bt, LdType::Sld, 1e-8).unwrap().value[(0, 0)];
            assert!((v - 0.75).abs() < 1e-12, "{bt:?}: {v}");
        }
    }

    #[test]
    fn unit_bias_slope_removes_bound() {
        let grid = demo_grid(linspace(0.0, 1.0, 21), None);
        let bias = Bias { b: vec![vec![0.0; 21]], db: vec![vec![-1.0; 21]] };
        let v = bqcrb(&grid, Some(&bias), BType::One, LdType::Sld, 1e-8).unwrap().value[(0, 0)];
        assert_eq!(v, 0.0);
    }

    #[test]
    fn type_one_equals_type_three_for_flat_prior() {
        let grid = demo_grid(linspace(0.1, 1.2, 41), None);
        let m = sic_povm(2).unwrap();
        let a = bcrb(&grid, &m, None, BType::One, 1e-8).unwrap().value[(0, 0)];
        let b = bcrb(&grid, &m, None, BType::Three, 1e-8).unwrap().value[(0, 0)];
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn constant_state_vtb_is_prior_information_inverse() {
        let ax = linspace(-1.0, 1.0, 401);
        let grid = PriorGrid::gaussian(ax, 0.0, 0.2, constant_states(401)).unwrap();
        let v = vtb(&grid, &pm_povm(), 1e-8).unwrap().value[(0, 0)];
        let ip = prior_information(&grid).unwrap()[(0, 0)];
        assert!((v - 1.0 / ip).abs() < 1e-12);
        assert!(qvtb(&grid, LdType::Sld, 1e-8).unwrap().value[(0, 0)] >= 0.0);
    }

    #[test]
    fn two_point_average() {
        let ax = vec![0.0, 1.0];
        let mk = |s: f64| {
            let rho = crate::linalg::from_real(2, &[0.75, 0.0, 0.0, 0.25]);
            let d = crate::linalg::from_real(2, &[s, 0.0, 0.0, -s]);
            DerivedState::new(rho, vec![d]).unwrap()
        };
        let grid = PriorGrid::uniform(vec![ax], vec![mk(0.5), mk(0.25)]).unwrap();
        let f = avg_qfim(&grid, LdType::Sld, 1e-8).unwrap()[(0, 0)];
        let (fa, fb) = (4.0 / 3.0, 4.0 / 3.0 / 4.0);
        assert!((f - 0.5 * (fa + fb)).abs() < 1e-12);
    }

    #[test]
    fn average_information_converges_under_refinement() {
        let coarse = demo_grid(linspace(-PI / 2.0, PI / 2.0, 201), Some((0.0, 0.3)));
        let fine = demo_grid(linspace(-PI / 2.0, PI / 2.0, 2001), Some((0.0, 0.3)));
        let a = avg_qfim(&coarse, LdType::Sld, 1e-8).unwrap()[(0, 0)];
        let b = avg_qfim(&fine, LdType::Sld, 1e-8).unwrap()[(0, 0)];
        assert!((a - b).abs() < 1e-4);
    }

    #[test]
    fn qzzb_uniform_constant_state() {
        let grid = PriorGrid::uniform(vec![linspace(0.0, 1.0, 1000)], constant_states(1000)).unwrap();
        assert!((qzzb(&grid, 1e-8).unwrap() - 1.0 / 12.0).abs() < 1e-3);
    }

    #[test]
    fn qzzb_shift_invariant_and_zero_for_point_mass() {
        let g1 = demo_grid(linspace(0.0, 1.0, 101), Some((0.5, 0.2)));
        let mut g2 = g1.clone();
        g2.axes[0] = g2.axes[0].iter().map(|x| x + 3.0).collect();
        assert!((qzzb(&g1, 1e-8).unwrap() - qzzb(&g2, 1e-8).unwrap()).abs() < 1e-12);
        let mut p = vec![0.0; 101];
        p[50] = 1.0;
        let g3 = PriorGrid::normalized(g1.axes.clone(), p, None, g1.states.clone()).unwrap();
        assert_eq!(qzzb(&g3, 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn annihilated_posterior_is_reported() {
        let ax = linspace(0.0, 1.0, 3);
        let psi = crate::linalg::from_real(2, &[1.0, 0.0, 0.0, 0.0]);
        let states = vec![DerivedState::new(psi, vec![crate::linalg::zeros(2)]).unwrap(); 3];
        let grid = PriorGrid::uniform(vec![ax], states).unwrap();
        let m = Povm::computational(2);
        assert!(matches!(bayes_update(&grid, &m, &[1], Estimator::Map, false), Err(Error::Degenerate(_))));
    }
}
