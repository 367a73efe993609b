//! Adaptive estimation: Bayesian pre-estimation followed by rounds in which
//! the system runs at `x + u` with `u = x_opt − x̂`.
//!
//! Likelihoods at shifted coordinates come from a table precomputed on an
//! extended grid and are interpolated multilinearly; queries outside the
//! table are clamped to its hull.

use crate::asymptotic::{cfim, qfim, weighted_inverse_trace, LdType, EPS};
use crate::bayes::{estimate, likelihood_table, posterior_step, trapezoid_weights, Estimator, PriorGrid};
use crate::dynamics::{kraus_apply, KrausChannel};
use crate::error::{Error, Result};
use crate::linalg::{CMat, RMat};
use crate::models::{check_axes, grid_len, grid_point, Template};
use crate::prelude::*;
use crate::scenarios::{measurement_opt, Algorithm, MeasurementKind, MeasurementProblem};
use crate::state::{DerivedState, Povm};

/// `p(y|x)` tabulated as `table[y][k]` over the outer product of `axes`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShiftedLikelihood {
    pub axes: Vec<Vec<f64>>,
    pub table: Vec<Vec<f64>>,
}

/// The axis continued by its own span on both sides (three copies, shared ends).
pub fn extend_axis(ax: &[f64]) -> Vec<f64> {
    if ax.len() < 2 {
        return ax.to_vec();
    }
    let span = ax[ax.len() - 1] - ax[0];
    let mut out: Vec<f64> = ax[..ax.len() - 1].iter().map(|v| v - span).collect();
    out.extend_from_slice(ax);
    out.extend(ax[1..].iter().map(|v| v + span));
    out
}

/// Bracketing index and weight of `x` on a sorted axis, clamped to its ends.
fn bracket(ax: &[f64], x: f64) -> (usize, f64) {
    let n = ax.len();
    if n == 1 || x <= ax[0] {
        return (0, 0.0);
    }
    if x >= ax[n - 1] {
        return (n - 2, 1.0);
    }
    let i = ax.partition_point(|v| *v <= x) - 1;
    (i, (x - ax[i]) / (ax[i + 1] - ax[i]))
}

impl ShiftedLikelihood {
    pub fn new(axes: Vec<Vec<f64>>, table: Vec<Vec<f64>>) -> Result<Self> {
        check_axes(&axes)?;
        let n = grid_len(&axes);
        if table.is_empty() || table.iter().any(|row| row.len() != n) {
            return Err(Error::Dimension(format!("likelihood table rows must have {n} entries")));
        }
        if table.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("likelihoods must be finite and nonnegative".into()));
        }
        Ok(Self { axes, table })
    }

    /// Tabulates `Tr(ρ(x)Π_y)` on the extended axes, with `ρ(x)` from
    /// evolving `rho0` under `template` for time `t`.
    pub fn from_template(
        template: &Template,
        axes: &[Vec<f64>],
        rho0: &CMat,
        t: f64,
        decay: &[(CMat, f64)],
        m: &Povm,
    ) -> Result<Self> {
        check_axes(axes)?;
        let ext: Vec<Vec<f64>> = axes.iter().map(|a| extend_axis(a)).collect();
        let grid = crate::models::model_grid(template, ext)?;
        let states = grid.states(rho0, t, decay)?;
        Self::new(grid.axes, likelihood_table(&states, m)?)
    }

    /// Same for a family of Kraus channels given at every extended grid point.
    pub fn from_kraus(axes: Vec<Vec<f64>>, channels: &[KrausChannel], rho0: &CMat, m: &Povm) -> Result<Self> {
        check_axes(&axes)?;
        if channels.len() != grid_len(&axes) {
            return Err(Error::Dimension("one channel per grid point is required".into()));
        }
        let states: Vec<DerivedState> = channels.iter().map(|ch| kraus_apply(rho0, ch)).collect::<Result<_>>()?;
        Self::new(axes, likelihood_table(&states, m)?)
    }

    pub fn outcomes(&self) -> usize {
        self.table.len()
    }

    /// Multilinear interpolation of `p(y|x)`.
    pub fn at(&self, y: usize, x: &[f64]) -> f64 {
        let br: Vec<(usize, f64)> = self.axes.iter().zip(x).map(|(a, v)| bracket(a, *v)).collect();
        let row = &self.table[y];
        let nd = self.axes.len();
        let mut acc = 0.0;
        for corner in 0..(1usize << nd) {
            let mut weight = 1.0;
            let mut flat = 0;
            for (a, &(i, s)) in br.iter().enumerate() {
                let up = (corner >> a) & 1 == 1;
                let len = self.axes[a].len();
                let idx = if up { (i + 1).min(len - 1) } else { i };
                weight *= if up { s } else { 1.0 - s };
                flat = flat * len + idx;
            }
            if weight != 0.0 {
                acc += weight * row[flat];
            }
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Phase {
    PreEstimation,
    Adaptive,
}

/// One recorded round: outcome, offset in force and resulting estimate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Round {
    pub y: usize,
    pub u: Vec<f64>,
    pub x_hat: Vec<f64>,
}

/// Result of one round as reported to an operator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundReport {
    /// Rounds completed, including this one.
    pub round: usize,
    pub y: usize,
    pub u_used: Vec<f64>,
    pub u_next: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub phase: Phase,
}

/// Adaptive-estimation state machine. All mutation goes through
/// [`AdaptiveSession::step`]; the history is append-only.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdaptiveSession {
    axes: Vec<Vec<f64>>,
    p: Vec<f64>,
    likelihood: ShiftedLikelihood,
    x_opt: Vec<f64>,
    u: Vec<f64>,
    pre_rounds: usize,
    estimator: Estimator,
    history: Vec<Round>,
}

impl AdaptiveSession {
    /// `p` is the prior on `axes` (renormalized here); the first
    /// `pre_rounds` rounds run at `u = 0`.
    pub fn new(
        axes: Vec<Vec<f64>>,
        p: Vec<f64>,
        likelihood: ShiftedLikelihood,
        x_opt: Vec<f64>,
        pre_rounds: usize,
        estimator: Estimator,
    ) -> Result<Self> {
        let grid = PriorGrid::normalized(axes, p, None, Vec::new())?;
        let n = grid.nparams();
        if likelihood.axes.len() != n || x_opt.len() != n {
            return Err(Error::Dimension(format!("likelihood and x_opt must cover {n} parameters")));
        }
        if x_opt.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("x_opt must be finite".into()));
        }
        Ok(Self {
            axes: grid.axes,
            p: grid.p,
            likelihood,
            x_opt,
            u: vec![0.0; n],
            pre_rounds,
            estimator,
            history: Vec::new(),
        })
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn posterior(&self) -> &[f64] {
        &self.p
    }

    pub fn x_opt(&self) -> &[f64] {
        &self.x_opt
    }

    /// Offset to apply in the next round.
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn round(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[Round] {
        &self.history
    }

    pub fn outcomes(&self) -> usize {
        self.likelihood.outcomes()
    }

    pub fn pre_rounds(&self) -> usize {
        self.pre_rounds
    }

    pub fn phase(&self) -> Phase {
        if self.round() < self.pre_rounds {
            Phase::PreEstimation
        } else {
            Phase::Adaptive
        }
    }

    /// Integral of the current posterior.
    pub fn total(&self) -> f64 {
        trapezoid_weights(&self.axes).iter().zip(&self.p).map(|(w, p)| w * p).sum()
    }

    /// Processes outcome `y` in whichever phase is current. On error the
    /// session is left untouched.
    pub fn step(&mut self, y: usize) -> Result<RoundReport> {
        if y >= self.outcomes() {
            return Err(Error::Domain(format!("outcome {y} is out of range for {} outcomes", self.outcomes())));
        }
        let like: Vec<f64> = (0..self.p.len())
            .map(|k| {
                let x: Vec<f64> = grid_point(&self.axes, k).iter().zip(&self.u).map(|(a, b)| a + b).collect();
                self.likelihood.at(y, &x)
            })
            .collect();
        let w = trapezoid_weights(&self.axes);
        let mut p = self.p.clone();
        posterior_step(&mut p, &like, &w)?;
        let x_hat = estimate(&self.axes, &w, &p, self.estimator);
        let u_used = core::mem::take(&mut self.u);
        self.p = p;
        self.history.push(Round { y, u: u_used.clone(), x_hat: x_hat.clone() });
        self.u = match self.phase() {
            Phase::Adaptive => self.x_opt.iter().zip(&x_hat).map(|(o, e)| o - e).collect(),
            Phase::PreEstimation => vec![0.0; self.x_opt.len()],
        };
        Ok(RoundReport { round: self.round(), y, u_used, u_next: self.u.clone(), x_hat, phase: self.phase() })
    }

    /// Pre-estimation rounds; they must fit in the remaining budget.
    pub fn pre_estimate(&mut self, ys: &[usize]) -> Result<()> {
        let remaining = self.pre_rounds.saturating_sub(self.round());
        if ys.len() > remaining {
            return Err(Error::Domain(format!(
                "{} pre-estimation outcomes exceed the remaining budget of {remaining}",
                ys.len()
            )));
        }
        let mut work = self.clone();
        for &y in ys {
            work.step(y)?;
        }
        *self = work;
        Ok(())
    }

    /// One adaptive round.
    pub fn submit_outcome(&mut self, y: usize) -> Result<RoundReport> {
        if self.phase() != Phase::Adaptive {
            return Err(Error::Domain("the session is still in pre-estimation".into()));
        }
        self.step(y)
    }

    /// Feeds a recorded outcome sequence through a copy of this session.
    pub fn replay(&self, ys: &[usize]) -> Result<(Self, Vec<RoundReport>)> {
        let mut s = self.clone();
        let reports = ys.iter().map(|&y| s.step(y)).collect::<Result<Vec<_>>>()?;
        Ok((s, reports))
    }
}

/// Working point for the adaptive rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct XOpt {
    pub x: Vec<f64>,
    pub index: usize,
    /// `Tr(W I⁻¹)` (fixed measurement) or `Tr(W F⁻¹)` there.
    pub value: f64,
    /// Optimized measurement when none was fixed.
    pub povm: Option<Povm>,
}

/// Grid point minimizing `Tr(W I⁻¹)` for a fixed POVM, or `Tr(W F⁻¹)` when
/// the measurement is free (then also optimized there with `algo`). Ties go
/// to the lowest index; singular points are skipped.
pub fn find_x_opt(grid: &PriorGrid, m: Option<&Povm>, w: &RMat, algo: &Algorithm) -> Result<XOpt> {
    if grid.states.len() != grid.len() {
        return Err(Error::Dimension("grid states are required".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, ds) in grid.states.iter().enumerate() {
        let info = match m {
            Some(m) => cfim(ds, m, EPS)?,
            None => qfim(ds, LdType::Sld, EPS)?,
        };
        let v = weighted_inverse_trace(&info, w);
        if v.is_finite() && best.map_or(true, |(_, b)| v < b) {
            best = Some((k, v));
        }
    }
    let (index, value) = best.ok_or_else(|| Error::Degenerate("the information matrix is singular at every grid point".into()))?;
    let povm = match m {
        Some(_) => None,
        None => {
            let prob = MeasurementProblem::new(grid.states[index].clone(), Some(w.clone()), MeasurementKind::Projection)?;
            Some(measurement_opt(&prob, algo, false)?.povm)
        }
    };
    Ok(XOpt { x: grid.point(index), index, value, povm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{bayes_update, sample_outcome};
    use crate::dynamics::linspace;
    use crate::engines::DeParams;
    use crate::models::{plus_state, pm_povm};
    use core::f64::consts::PI;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn qubit_plus_ds() -> DerivedState {
        let (h, dh) = demo_template().eval(&[0.3]).unwrap();
        crate::dynamics::exact_endpoint(&h, &dh, &[], 1.0, &plus_state()).unwrap()
    }

    fn demo_template() -> Template {
        Template::QubitPhase { kappa: PI / 2.0, omega0: 1.0 }
    }

    fn demo_session(points: usize, pre: usize) -> AdaptiveSession {
        let axis = linspace(-PI / 4.0, 3.0 * PI / 4.0, points);
        let like =
            ShiftedLikelihood::from_template(&demo_template(), &[axis.clone()], &plus_state(), 1.0, &[], &pm_povm())
                .unwrap();
        AdaptiveSession::new(vec![axis], vec![1.0; points], like, vec![0.0], pre, Estimator::Map).unwrap()
    }

    #[test]
    fn extended_axis_contains_original_nodes() {
        let ax = vec![0.0, 0.5, 2.0];
        assert_eq!(extend_axis(&ax), vec![-2.0, -1.5, 0.0, 0.5, 2.0, 2.5, 4.0]);
    }

    #[test]
    fn interpolation_is_exact_at_nodes_and_linear_between() {
        let like = ShiftedLikelihood::new(vec![vec![0.0, 1.0, 3.0]], vec![vec![0.0, 1.0, 5.0]]).unwrap();
        assert_eq!(like.at(0, &[1.0]), 1.0);
        assert_eq!(like.at(0, &[2.0]), 3.0);
        assert_eq!(like.at(0, &[-4.0]), 0.0);
        assert_eq!(like.at(0, &[9.0]), 5.0);
        let two = ShiftedLikelihood::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0, 2.0, 3.0]]).unwrap();
        assert!((two.at(0, &[0.5, 0.5]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn demo_likelihood_matches_closed_form() {
        // Rotating |+⟩ by π/2 about (cos x, 0, sin x) gives p(+|x) = (1 + cos²x)/2.
        let s = demo_session(201, 0);
        for x in [-0.3, 0.1, 0.77, 2.0] {
            let want = 0.5 * (1.0 + x.cos().powi(2));
            assert!((s.likelihood.at(0, &[x]) - want).abs() < 1e-4, "{x}");
        }
    }

    #[test]
    fn zero_budget_starts_adaptive() {
        let mut s = demo_session(51, 0);
        assert_eq!(s.phase(), Phase::Adaptive);
        assert!(s.pre_estimate(&[0]).is_err());
        let r = s.submit_outcome(0).unwrap();
        assert_eq!(r.u_used, vec![0.0]);
        assert_eq!(r.u_next[0], -r.x_hat[0]);
    }

    #[test]
    fn pre_estimation_matches_plain_bayes() {
        let points = 101;
        let axis = linspace(-PI / 4.0, 3.0 * PI / 4.0, points);
        let states = crate::models::model_grid(&demo_template(), vec![axis.clone()])
            .unwrap()
            .states(&plus_state(), 1.0, &[])
            .unwrap();
        let grid = PriorGrid::uniform(vec![axis], states).unwrap();
        let ys = [0, 0, 1, 0, 1, 0, 0, 0];
        let plain = bayes_update(&grid, &pm_povm(), &ys, Estimator::Map, false).unwrap();
        let mut s = demo_session(points, 20);
        s.pre_estimate(&ys).unwrap();
        for (a, b) in s.posterior().iter().zip(&plain.last) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
        assert_eq!(s.phase(), Phase::PreEstimation);
        assert_eq!(s.u(), &[0.0]);
        assert!(s.submit_outcome(0).is_err());
    }

    #[test]
    fn flat_likelihood_keeps_posterior() {
        let axis = linspace(0.0, 1.0, 11);
        let like = ShiftedLikelihood::new(vec![extend_axis(&axis)], vec![vec![0.5; 31], vec![0.5; 31]]).unwrap();
        let prior: Vec<f64> = axis.iter().map(|x| 1.0 + x).collect();
        let mut s = AdaptiveSession::new(vec![axis], prior, like, vec![0.3], 0, Estimator::Map).unwrap();
        let before = s.posterior().to_vec();
        let r = s.submit_outcome(1).unwrap();
        for (a, b) in s.posterior().iter().zip(&before) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((r.u_next[0] - (0.3 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn estimate_at_working_point_gives_zero_offset() {
        let axis = linspace(0.0, 1.0, 11);
        let mut p = vec![0.1; 11];
        p[4] = 5.0;
        let like = ShiftedLikelihood::new(vec![axis.clone()], vec![vec![1.0; 11]]).unwrap();
        let mut s = AdaptiveSession::new(vec![axis.clone()], p, like, vec![axis[4]], 0, Estimator::Map).unwrap();
        assert_eq!(s.submit_outcome(0).unwrap().u_next, vec![0.0]);
    }

    #[test]
    fn bad_outcome_leaves_session_untouched() {
        let mut s = demo_session(31, 2);
        let before = s.clone();
        assert!(matches!(s.step(2), Err(Error::Domain(_))));
        assert_eq!(s, before);
        // |−⟩ has zero probability at x = 0 when the grid is that single point.
        let like = ShiftedLikelihood::new(vec![vec![0.0]], vec![vec![1.0], vec![0.0]]).unwrap();
        let mut one = AdaptiveSession::new(vec![vec![0.0]], vec![1.0], like, vec![0.0], 0, Estimator::Map).unwrap();
        let snapshot = one.clone();
        assert!(matches!(one.step(1), Err(Error::Degenerate(_))));
        assert_eq!(one, snapshot);
    }

    #[test]
    fn replay_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ys: Vec<usize> = (0..60).map(|_| rng.gen_range(0..2)).collect();
        let s = demo_session(101, 20);
        let (a, ra) = s.replay(&ys).unwrap();
        let (b, rb) = s.replay(&ys).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(a.history().len(), 60);
        assert!(ra[..19].iter().all(|r| r.u_next == vec![0.0]));
        assert!(ra[19..].iter().all(|r| r.u_next[0] == -r.x_hat[0]));
    }

    #[test]
    fn constant_information_picks_first_point() {
        let axis = linspace(0.0, 1.0, 5);
        let ds = qubit_plus_ds();
        let grid = PriorGrid::uniform(vec![axis], vec![ds; 5]).unwrap();
        let algo = Algorithm::De(DeParams { max_episode: 10, ..DeParams::default() });
        let r = find_x_opt(&grid, Some(&pm_povm()), &RMat::identity(1, 1), &algo).unwrap();
        assert_eq!(r.index, 0);
        let single = PriorGrid::uniform(vec![vec![0.4]], vec![qubit_plus_ds()]).unwrap();
        let r = find_x_opt(&single, None, &RMat::identity(1, 1), &algo).unwrap();
        assert_eq!(r.x, vec![0.4]);
        assert_eq!(r.povm.unwrap().len(), 2);
    }

    #[test]
    fn demo_working_point_is_next_to_zero() {
        // The CFI 4cos²x/(1+cos²x) peaks at x = 0, where |−⟩ never occurs and the
        // grid value is singular; the optimum is the adjacent node.
        let axis = linspace(-PI / 4.0, 3.0 * PI / 4.0, 201);
        let step = axis[1] - axis[0];
        let states = crate::models::model_grid(&demo_template(), vec![axis.clone()])
            .unwrap()
            .states(&plus_state(), 1.0, &[])
            .unwrap();
        let grid = PriorGrid::uniform(vec![axis], states).unwrap();
        let algo = Algorithm::De(DeParams { max_episode: 10, ..DeParams::default() });
        let r = find_x_opt(&grid, Some(&pm_povm()), &RMat::identity(1, 1), &algo).unwrap();
        assert!(r.x[0].abs() <= step, "{:?}", r.x);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn posterior_stays_normalized(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = demo_session(101, 10);
            let truth = rng.gen_range(0.0..PI / 2.0);
            for _ in 0..40 {
                let x = truth + s.u()[0];
                let p = s.likelihood.at(0, &[x]);
                let y = sample_outcome(&mut rng, &[p, 1.0 - p]);
                s.step(y).unwrap();
                prop_assert!((s.total() - 1.0).abs() < 1e-8);
                prop_assert!(s.u()[0].is_finite());
            }
            prop_assert_eq!(s.history().len(), 40);
        }
    }
}
