//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line
//! straight to stderr so the lines survive output capture.

use qmetro::adaptive::{AdaptiveSession, ShiftedLikelihood};
use qmetro::asymptotic::{cfim, qfim, sld, sld_vec, LdType, Rep};
use qmetro::bayes::{self, trapezoid_weights, BType, Estimator, PriorGrid};
use qmetro::dynamics::{linspace, KrausChannel};
use qmetro::engines::{grape_gradient, DeParams, GradParams, Objective, Parameterization, RiParams};
use qmetro::linalg::{eigh_real, max_abs, pauli};
use qmetro::models::{self, model_grid, plus_state, pm_povm, Template};
use qmetro::random::{random_povm, random_state_full_rank, random_traceless_hermitian};
use qmetro::scenarios::{
    comprehensive_opt, control_opt, measurement_opt, state_opt, Algorithm, CompKind, ComprehensiveProblem, ControlProblem,
    Dynamics, MeasurementKind, MeasurementProblem, StateProblem,
};
use qmetro::{CMat, DerivedState, Povm, RMat};
use qmetro_cli::config::parse_toml;
use qmetro_cli::{csvio, tasks};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::io::Write;
use std::time::Instant;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn analytic_qfi() -> Outcome {
    let model = models::qubit_frequency(1.0, 0.0, 0.0, linspace(0.0, 5.0, 501));
    let traj = model.propagate(&plus_state()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (i, t) in [(100, 1.0), (200, 2.0), (500, 5.0)] {
        let f = qfim(&traj[i], LdType::Sld, 1e-8).unwrap()[(0, 0)];
        let c = cfim(&traj[i], &pm_povm(), 1e-8).unwrap()[(0, 0)];
        worst = worst.max((f - t * t).abs()).max((c - f).abs());
    }
    check(worst <= 1e-6, format!("max deviation from t^2 {worst:.2e}"))
}

fn sld_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let d = 2 + i % 7;
        let rho = random_state_full_rank(&mut rng, d);
        let ds = DerivedState::new(rho, vec![random_traceless_hermitian(&mut rng, d)]).unwrap();
        let a = sld(&ds, Rep::Original, 1e-12);
        let b = sld_vec(&ds, 1e-12);
        worst = worst.max(max_abs(&(&a[0] - &b[0])));
    }
    check(worst <= 1e-8, format!("max entry difference {worst:.2e} over 200 states"))
}

fn information_ordering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lowest = f64::INFINITY;
    for i in 0..100 {
        let d = 2 + i % 4;
        let n = 1 + i % 3;
        let rho = random_state_full_rank(&mut rng, d);
        let drho = (0..n).map(|_| random_traceless_hermitian(&mut rng, d)).collect();
        let ds = DerivedState::new(rho, drho).unwrap();
        let m = Povm::new(random_povm(&mut rng, d, d + 1)).unwrap();
        let gap = qfim(&ds, LdType::Sld, 1e-12).unwrap() - cfim(&ds, &m, 1e-12).unwrap();
        lowest = lowest.min(eigh_real(&gap).0[0]);
    }
    check(lowest >= -1e-8, format!("smallest eigenvalue of QFIM - CFIM {lowest:.2e}"))
}

fn holevo_sanity() -> Outcome {
    let ds = models::qubit_frequency(1.0, 0.0, 0.1, linspace(0.0, 3.0, 301)).propagate_final(&plus_state()).unwrap();
    let redirect = qmetro::hcrb::hcrb(&ds, &RMat::identity(1, 1), 1e-8).unwrap();
    let f = qfim(&ds, LdType::Sld, 1e-8).unwrap()[(0, 0)];
    if redirect != 1.0 / f {
        return Err(format!("single-parameter redirect {redirect} differs from 1/QFI {}", 1.0 / f));
    }
    let model = models::two_qubit_xx(1.0, 1.0, 0.1, 0.05, linspace(0.0, 10.0, 1001));
    let traj = model.propagate(&models::bell_state()).unwrap();
    let w = RMat::identity(2, 2);
    let mut slack = f64::INFINITY;
    for i in [200, 400, 600, 800, 1000] {
        let q = qmetro::asymptotic::weighted_inverse_trace(&qfim(&traj[i], LdType::Sld, 1e-8).unwrap(), &w);
        let c = qmetro::asymptotic::weighted_inverse_trace(&cfim(&traj[i], &models::xx_povm(), 1e-8).unwrap(), &w);
        let h = qmetro::hcrb::hcrb(&traj[i], &w, 1e-8).unwrap();
        slack = slack.min(h - q).min(c - h);
    }
    check(slack >= -1e-6, format!("redirect exact; smallest ordering margin {slack:.3e} over 5 times"))
}

fn controlled_qubit(t: f64, nt: usize) -> qmetro::dynamics::Lindblad {
    models::qubit_frequency(1.0, 0.0, 0.1, linspace(0.0, t, nt)).with_controls(models::pauli_controls(), vec![vec![0.0; nt - 1]; 3])
}

fn gradient_correctness() -> Outcome {
    let mut model = controlled_qubit(5.0, 51);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for row in model.ctrl.iter_mut() {
        row.iter_mut().for_each(|u| *u = rng.gen_range(-1.0..1.0));
    }
    let rho0 = plus_state();
    let obj = Objective::qfim();
    let g = grape_gradient(&model, &rho0, &obj).unwrap();
    let value = |m: &qmetro::dynamics::Lindblad| obj.value(&m.propagate_final(&rho0).unwrap()).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..3 {
        for c in 0..50 {
            let mut up = model.clone();
            up.ctrl[k][c] += h;
            let mut down = model.clone();
            down.ctrl[k][c] -= h;
            let fd = (value(&up) - value(&down)) / (2.0 * h);
            worst = worst.max((g[k][c] - fd).abs() / fd.abs().max(1e-6));
        }
    }
    check(worst <= 1e-4, format!("max relative error {worst:.2e} over 150 entries"))
}

fn control_improvement() -> Outcome {
    let model = controlled_qubit(20.0, 2001);
    let prob = ControlProblem::new(model, plus_state(), Objective::qfim(), 2000, None).unwrap();
    let scores: Vec<f64> = (0..5)
        .map(|seed| {
            let algo = Algorithm::Gradient(GradParams { max_episode: 300, seed, ..GradParams::default() });
            let f = control_opt(&prob, &algo, false).unwrap().run.best_value;
            (20.0 / f).sqrt()
        })
        .collect();
    let m = median(scores.clone());
    check(m <= 0.47, format!("median sqrt(wT) dw {m:.4} (seeds {scores:.4?})"))
}

fn comprehensive_sm() -> Outcome {
    let model = models::qubit_frequency(1.0, 0.1, 0.0, linspace(0.0, 20.0, 2001));
    let prob = ComprehensiveProblem::new(CompKind::Sm, Dynamics::Lindblad(model), Objective::cfim(None), 1, None, None).unwrap();
    let scores: Vec<f64> = (0..5)
        .map(|seed| {
            let algo = Algorithm::De(DeParams { seed, ..DeParams::default() });
            let f = comprehensive_opt(&prob, &algo, false).unwrap().run.best_value;
            (20.0 / f).sqrt()
        })
        .collect();
    let m = median(scores.clone());
    check((m - 0.608).abs() <= 0.02, format!("median sqrt(wT) dw {m:.4} (seeds {scores:.4?})"))
}

const BAYES_DEMO: &str = include_str!("../presets/bayes_demo.toml");

fn bayesian_convergence() -> Outcome {
    let mut cfg = parse_toml(BAYES_DEMO).map_err(|e| e.to_string())?;
    cfg.output.save_all = true;
    let out = tasks::run_task(&cfg).map_err(|e| e.to_string())?;
    let last = |name: &str| csvio::read_table(&out.artifacts[name]).unwrap().last().unwrap()[0];
    let (map, mle) = (last("xout.csv"), last("mle_xout.csv"));
    let w = trapezoid_weights(&[linspace(0.0, FRAC_PI_2, 1000)]);
    let pout = csvio::read_table(&out.artifacts["pout.csv"]).unwrap();
    let norm_err = pout.iter().map(|p| (p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    check(
        pout.len() == 500 && (map - FRAC_PI_4).abs() <= 0.05 && (mle - FRAC_PI_4).abs() <= 0.05 && norm_err <= 1e-8,
        format!("MAP {map:.4}, MLE {mle:.4}, worst normalization error {norm_err:.1e} over {} rounds", pout.len()),
    )
}

fn qzzb_uniform() -> Outcome {
    let axis = linspace(0.0, 1.0, 1000);
    let ds = DerivedState::new(plus_state(), vec![CMat::zeros(2, 2)]).unwrap();
    let grid = PriorGrid::uniform(vec![axis.clone()], vec![ds; axis.len()]).unwrap();
    let z = bayes::qzzb(&grid, 1e-8).unwrap();
    check((z - 1.0 / 12.0).abs() <= 1e-3, format!("QZZB {z:.6} vs 1/12"))
}

fn bayes_demo_grid(axis: Vec<f64>) -> Vec<DerivedState> {
    let template = Template::from_id("qubit_phase", &BTreeMap::new()).unwrap();
    model_grid(&template, vec![axis]).unwrap().states(&plus_state(), 1.0, &[]).unwrap()
}

fn bound_orderings() -> Outcome {
    let axis = linspace(-FRAC_PI_2, FRAC_PI_2, 200);
    let states = bayes_demo_grid(axis.clone());
    let grid = PriorGrid::gaussian(axis, 0.0, 0.1, states).unwrap();
    let sic = qmetro::sic::sic_povm(2).unwrap();
    let tr = |b: qmetro::Result<bayes::BoundMatrix>| b.unwrap().value.trace();
    let bcrb1 = tr(bayes::bcrb(&grid, &sic, None, BType::One, 1e-8));
    let bcrb2 = tr(bayes::bcrb(&grid, &sic, None, BType::Two, 1e-8));
    let bqcrb1 = tr(bayes::bqcrb(&grid, None, BType::One, LdType::Sld, 1e-8));
    let qvtb = tr(bayes::qvtb(&grid, LdType::Sld, 1e-8));
    let qzzb = bayes::qzzb(&grid, 1e-8).unwrap();
    let slack = 0.98;
    check(
        bcrb1 >= slack * bcrb2 && bqcrb1 >= slack * qvtb && qvtb >= slack * qzzb,
        format!("BCRB1 {bcrb1:.4} >= BCRB2 {bcrb2:.4}; BQCRB1 {bqcrb1:.4} >= QVTB {qvtb:.5} >= QZZB {qzzb:.5}"),
    )
}

fn ri_convergence() -> Outcome {
    let s3 = pauli()[2].clone() * qmetro::linalg::cr(0.5);
    let ch = KrausChannel::unitary(&s3, &[s3.clone()], 2.0).unwrap();
    let prob = StateProblem::new(Parameterization::Kraus(ch), Objective::qfim());
    let run = state_opt(&prob, &Algorithm::Ri(RiParams::default()), false).unwrap().run;
    let monotone = run.values.windows(2).all(|w| w[1] >= w[0]);
    let last = *run.values.last().unwrap();
    check(monotone && (last - 4.0).abs() <= 1e-6, format!("final QFI {last:.9} after {} episodes, monotone {monotone}", run.values.len()))
}

const DETERMINISM_SOPT: &str = r#"
schema_version = 1
[model]
preset = "qubit_frequency"
constants = { omega = 1.0, gamma_plus = 0.0, gamma_minus = 0.1 }
[dynamics]
tspan = { start = 0.0, stop = 2.0, num = 41 }
rho0 = "plus"
[objective]
kind = "qfim"
[task]
kind = "sopt"
"#;

fn optimizer_determinism() -> Outcome {
    let copt = DETERMINISM_SOPT
        .replace("kind = \"sopt\"", "kind = \"copt\"")
        .replace("rho0 = \"plus\"", "rho0 = \"plus\"\ncontrols = \"pauli\"");
    let ri = r#"
schema_version = 1
[model]
h0 = [[0.5, 0.0], [0.0, -0.5]]
dh = [[[0.5, 0.0], [0.0, -0.5]]]
[dynamics]
t = 2.0
kraus = { kind = "unitary" }
[objective]
kind = "qfim"
[task]
kind = "sopt"
"#;
    let cases = [
        ("pso", DETERMINISM_SOPT.to_string(), "method = \"pso\"\nmax_episode = 30"),
        ("de", DETERMINISM_SOPT.to_string(), "method = \"de\"\nmax_episode = 30"),
        ("nm", DETERMINISM_SOPT.to_string(), "method = \"nm\"\nmax_episode = 30"),
        ("ri", ri.to_string(), "method = \"ri\"\nmax_episode = 30"),
        ("gradient", copt, "method = \"gradient\"\nmax_episode = 20"),
    ];
    let mut notes = Vec::new();
    for (name, base, algo) in cases {
        let text = format!("{base}\n[algorithm]\n{algo}\n");
        let cfg = parse_toml(&text).map_err(|e| format!("{name}: {e}"))?;
        let a = tasks::run_task(&cfg).map_err(|e| format!("{name}: {e}"))?;
        let b = tasks::run_task(&cfg).map_err(|e| format!("{name}: {e}"))?;
        if a.artifacts["f.csv"] != b.artifacts["f.csv"] {
            return Err(format!("{name}: f.csv differs between runs"));
        }
        notes.push(format!("{name} {} rows", csvio::read_table(&a.artifacts["f.csv"]).unwrap().len()));
    }
    Ok(format!("identical f.csv for {}", notes.join(", ")))
}

fn measurement_attainability() -> Outcome {
    let mut worst = f64::INFINITY;
    for t in [1.0, 2.0, 3.0, 4.0, 5.0] {
        let ds = models::qubit_frequency(1.0, 0.0, 0.1, linspace(0.0, t, 101)).propagate_final(&plus_state()).unwrap();
        let f = qfim(&ds, LdType::Sld, 1e-8).unwrap()[(0, 0)];
        let prob = MeasurementProblem::new(ds, None, MeasurementKind::Projection).unwrap();
        let c = measurement_opt(&prob, &Algorithm::De(DeParams::default()), false).unwrap().run.best_value;
        worst = worst.min(c / f);
    }
    check(worst >= 0.99, format!("smallest CFI/QFI {worst:.5} over 5 times"))
}

/// `p(+|x)` for the qubit-phase demo at unit time, from the Bloch-sphere rotation.
fn p_plus(x: f64) -> f64 {
    (1.0 + x.cos().powi(2)) / 2.0
}

fn variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
}

fn adaptive_advantage() -> Outcome {
    let axis = linspace(-FRAC_PI_4, 3.0 * FRAC_PI_4, 1001);
    let template = Template::from_id("qubit_phase", &BTreeMap::new()).unwrap();
    let like = ShiftedLikelihood::from_template(&template, &[axis.clone()], &plus_state(), 1.0, &[], &pm_povm()).unwrap();
    let prior = vec![1.0; axis.len()];
    let x_true = FRAC_PI_4;
    let mut wins = 0;
    let mut notes = Vec::new();
    for seed in 0..5 {
        let session = |pre| AdaptiveSession::new(vec![axis.clone()], prior.clone(), like.clone(), vec![0.0], pre, Estimator::Map).unwrap();
        let (mut adaptive, mut plain) = (session(500), session(1000));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut xa, mut xp) = (Vec::new(), Vec::new());
        for _ in 0..1000 {
            let r: f64 = rng.gen();
            for (s, xs) in [(&mut adaptive, &mut xa), (&mut plain, &mut xp)] {
                let y = usize::from(r >= p_plus(x_true + s.u()[0]));
                xs.push(s.step(y).unwrap().x_hat[0]);
            }
        }
        let (va, vp) = (variance(&xa[800..]), variance(&xp[800..]));
        wins += usize::from(va < vp);
        notes.push(format!("{va:.2e}/{vp:.2e}"));
    }
    check(wins >= 4, format!("adaptive wins {wins}/5 (variance adaptive/plain: {})", notes.join(", ")))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("analytic QFI and CFI of the unitary qubit", analytic_qfi),
        ("eigen-based and vectorized SLDs agree", sld_equivalence),
        ("QFIM - CFIM is positive semidefinite", information_ordering),
        ("Holevo bound redirect and XX ordering", holevo_sanity),
        ("GRAPE gradient matches finite differences", gradient_correctness),
        ("control optimization improves the qubit bound", control_improvement),
        ("comprehensive SM reaches the optimal bound", comprehensive_sm),
        ("Bayesian estimation converges on the demo", bayesian_convergence),
        ("QZZB of a flat prior equals its variance", qzzb_uniform),
        ("Bayesian bound orderings at eta = 0.1", bound_orderings),
        ("reverse iteration converges monotonically", ri_convergence),
        ("optimizers are deterministic for fixed seeds", optimizer_determinism),
        ("projective measurements attain the QFI", measurement_attainability),
        ("adaptive rounds beat plain Bayesian updates", adaptive_advantage),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(d) => format!("PASS  {name}: {d} [{secs:.1} s]"),
            Err(d) => format!("FAIL  {name}: {d} [{secs:.1} s]"),
        };
        writeln!(err, "{line}").unwrap();
        if outcome.is_err() {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn p_plus_matches_the_template() {
    let template = Template::from_id("qubit_phase", &BTreeMap::new()).unwrap();
    for x in [-0.7, 0.0, 0.4, PI / 3.0] {
        let (h, dh) = template.eval(&[x]).unwrap();
        let rho = qmetro::dynamics::exact_endpoint(&h, &dh, &[], 1.0, &plus_state()).unwrap().rho;
        let p = qmetro::linalg::trace_prod(&rho, &pm_povm().ops()[0]).re;
        assert!((p - p_plus(x)).abs() < 1e-12);
    }
}
