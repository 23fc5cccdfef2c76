//! Acceptance suite. Runs as a plain binary and prints one PASS/FAIL/SKIP
//! line per criterion; exits nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pushpull::analysis::{
    fit_linear_rate, schedule_constants, verify_propositions, Certificate, SigmaSource, TraceParams,
    PROPOSITION_TOLERANCE,
};
use pushpull::config::{resolve_dataset, ProblemSpec, RunConfig};
use pushpull::experiment::{execute, prepare};
use pushpull::graph::{diameter, generate_sequence, max_edge_utility, Digraph, DigraphSequence};
use pushpull::problems::{ridge_problem, Logistic, ProblemSet, RidgeSpec};
use pushpull::solver::{run, AgentSwarm, Mode, RunOptions, RunRecord, SolverConfig, StopRule};
use pushpull::weights::WeightSchedule;

use common::*;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, Box<dyn FnOnce() -> Outcome>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ridge(n: usize, p: usize, s: usize, lambda: f64, seed: u64) -> ProblemSet {
    ridge_problem(&RidgeSpec {
        n,
        p,
        s,
        lambda,
        noise_sigma: 0.5,
        seed,
    })
    .unwrap()
}

/// Runs exactly `iters` steps unless the residual hits zero.
fn fixed(alpha: f64, beta: f64, gamma: f64, iters: usize) -> SolverConfig {
    let mut cfg = SolverConfig::new(alpha, beta, gamma, iters, 0.0);
    cfg.stop_on = StopRule::Residual;
    cfg
}

fn monitored(problem: &ProblemSet, schedule: &WeightSchedule, cfg: &SolverConfig, keep: bool) -> RunRecord {
    run(
        problem,
        schedule,
        cfg,
        problem.optimum(),
        AgentSwarm::zeros(problem),
        &RunOptions {
            keep_states: keep,
            ..RunOptions::default()
        },
    )
    .unwrap()
}

/// Conservation of the tracked gradient sum, with gradients recomputed from
/// the stored `s` iterates.
fn criterion_1() -> Check {
    let start = Instant::now();
    let configs: [(usize, f64, f64, f64); 12] = [
        (2, 0.1, 0.0, 0.0),
        (2, 0.1, 0.5, 0.0),
        (2, 0.1, 0.0, 0.3),
        (2, 0.1, 0.5, 0.3),
        (5, 0.08, 0.0, 0.0),
        (5, 0.08, 0.6, 0.0),
        (5, 0.08, 0.0, 0.2),
        (5, 0.08, 0.6, 0.2),
        (20, 0.25, 0.0, 0.0),
        (20, 0.25, 0.7, 0.0),
        (20, 0.25, 0.0, 0.05),
        (20, 0.25, 0.7, 0.05),
    ];
    let mut worst = 0.0f64;
    let mut modes = std::collections::BTreeSet::new();
    for (i, &(n, alpha, beta, gamma)) in configs.iter().enumerate() {
        let problem = ridge(n, 4, 2, 0.1, i as u64);
        let schedule = WeightSchedule::new(generate_sequence(n, 400, 0.3, 100 + i as u64).unwrap()).unwrap();
        let cfg = fixed(alpha, beta, gamma, 400);
        modes.insert(cfg.mode().label());
        let record = monitored(&problem, &schedule, &cfg, true);
        ensure(record.states.len() == 401, || format!("config {i}: only {} states", record.states.len()))?;
        for state in &record.states {
            let mut sum_y = DVector::zeros(problem.dimension());
            let mut sum_g = DVector::zeros(problem.dimension());
            let mut scale = 0.0;
            for (j, (y, s)) in state.y().iter().zip(state.s()).enumerate() {
                let g = problem.oracle(j).gradient(s);
                scale += g.norm();
                sum_y += y;
                sum_g += g;
            }
            let dev = (sum_y - sum_g).norm() / scale.max(f64::MIN_POSITIVE);
            worst = worst.max(dev);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(modes.len() == 4, || format!("only {} modes covered", modes.len()))?;
    ensure(worst <= 1e-10, || format!("relative deviation {worst:.3e} > 1e-10"))?;
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("12 runs, 4 modes, n in {{2,5,20}}; max relative deviation {worst:.2e}; {secs:.1} s"))
}

/// Single-agent trajectories against the centralized recursions.
fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let schedule = WeightSchedule::new(generate_sequence(1, 100, 0.0, 0).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for q in 0..5 {
        let problem = random_quadratic(&mut rng, 3 + q);
        let alpha = 1.0 / problem.lipschitz();
        let x0 = DVector::from_fn(problem.dimension(), |_, _| rng.random_range(-2.0..2.0));
        for (beta, gamma) in [(0.0, 0.0), (0.6, 0.0), (0.0, 0.4), (0.5, 0.3)] {
            let cfg = fixed(alpha, beta, gamma, 100);
            let record = run(
                &problem,
                &schedule,
                &cfg,
                problem.optimum(),
                AgentSwarm::init(&problem, vec![x0.clone()], vec![x0.clone()]).unwrap(),
                &RunOptions {
                    keep_states: true,
                    ..RunOptions::default()
                },
            )
            .unwrap();
            let oracle = problem.oracle(0);
            let reference = centralized_trajectory(|x| oracle.gradient(x), &x0, alpha, beta, gamma, 100);
            ensure(record.states.len() == 101, || format!("{} states", record.states.len()))?;
            for (state, want) in record.states.iter().zip(&reference) {
                let err = (&state.x()[0] - want).norm() / want.norm().max(1.0);
                worst = worst.max(err);
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.3e} > 1e-12"))?;
    Ok(format!("5 quadratics x 4 recursions x 100 iterations; max deviation {worst:.2e}"))
}

/// Propositions on a certified ridge run.
fn criterion_3() -> Check {
    let n = 5;
    let problem = ridge(n, 3, 4, 1.0, 2);
    let schedule = WeightSchedule::new(generate_sequence(n, 500, 0.5, 2).unwrap()).unwrap();
    let (l, mu) = (problem.lipschitz(), problem.mu());
    let probe = Certificate::for_schedule(&schedule, l, mu, 1e-15, 0.0, 0.0, SigmaSource::Measured).unwrap();
    let alpha_max = probe.alpha_max.ok_or("no alpha range")?;
    let (alpha, beta, gamma) = (0.5 * alpha_max, 0.3 * probe.kappa_max, 0.2 * probe.kappa_max);
    let cert = Certificate::for_schedule(&schedule, l, mu, alpha, beta, gamma, SigmaSource::Measured).unwrap();
    ensure(cert.verdict, || format!("parameters not admissible: {:?}", cert.reasons))?;

    let steps = schedule_constants(&schedule).unwrap();
    let cfg = fixed(alpha, beta, gamma, 500);
    let record = monitored(&problem, &schedule, &cfg, false);
    ensure(record.rows.len() == 501, || format!("{} rows logged", record.rows.len()))?;
    let report = verify_propositions(
        &record.rows,
        &steps,
        &TraceParams {
            alpha,
            beta,
            gamma,
            l,
            mu,
            n,
        },
    )
    .unwrap();
    ensure(report.skipped == 0, || format!("{} checks skipped", report.skipped))?;
    ensure(report.violations == 0, || {
        format!("{} violations, worst {:.3e}", report.violations, report.max_violation)
    })?;
    Ok(format!(
        "alpha={alpha:.2e} beta={beta:.2e} gamma={gamma:.2e}; {} checks at tolerance {PROPOSITION_TOLERANCE:e}, 0 violations",
        report.evaluated
    ))
}

/// Certificate soundness over two small families.
fn criterion_4() -> Check {
    let mut triples = 0;
    let mut certified = 0;
    let mut above_one = 0;
    for n in [2usize, 3] {
        let problem = ridge(n, 2, 4, 1.0, 3);
        let schedule = WeightSchedule::new(DigraphSequence::constant(Digraph::complete(n), 3000).unwrap()).unwrap();
        let steps = schedule_constants(&schedule).unwrap();
        let (l, mu) = (problem.lipschitz(), problem.mu());
        let cert_for = |a: f64, b: f64, g: f64| {
            Certificate::for_steps(&steps, &schedule, l, mu, a, b, g, SigmaSource::Measured).unwrap()
        };
        let probe = cert_for(1e-15, 0.0, 0.0);
        let amax = probe.alpha_max.ok_or("no alpha range")?;
        let kmax = probe.kappa_max;
        let alphas: Vec<f64> = [0.05, 0.2, 0.5, 0.8, 0.99, 1.5, 5.0].iter().map(|f| f * amax).chain([0.01]).collect();
        let betas: Vec<f64> = [0.0, 0.2, 0.6, 0.95].iter().map(|f| f * kmax).chain([0.5]).collect();
        let gammas: Vec<f64> = [0.0, 0.3, 0.9].iter().map(|f| f * kmax).chain([0.2]).collect();
        for &a in &alphas {
            for &b in &betas {
                for &g in &gammas {
                    triples += 1;
                    let cert = cert_for(a, b, g);
                    if cert.rho_m >= 1.0 {
                        above_one += 1;
                    }
                    if !cert.verdict {
                        continue;
                    }
                    certified += 1;
                    let tag = format!("n={n} alpha={a:.3e} beta={b:.3e} gamma={g:.3e}");
                    ensure(cert.diag_below_one, || format!("{tag}: diagonal of M not below 1"))?;
                    ensure(cert.det_i_minus_m > 0.0, || format!("{tag}: det(I-M) = {:.3e}", cert.det_i_minus_m))?;
                    ensure(cert.rho_m < 1.0, || format!("{tag}: rho_M = {}", cert.rho_m))?;
                    let record = monitored(&problem, &schedule, &fixed(a, b, g, 3000), false);
                    let fit = fit_linear_rate(&record.residuals()).map_err(|e| format!("{tag}: {e}"))?;
                    ensure(fit.rho_hat < 1.0, || format!("{tag}: fitted rate {}", fit.rho_hat))?;
                    ensure(record.final_residual < record.rows[0].residual, || format!("{tag}: residual grew"))?;
                }
            }
        }
    }
    ensure(triples >= 200, || format!("only {triples} triples"))?;
    ensure(certified > 0, || "no triple was certified".into())?;
    Ok(format!(
        "{triples} triples, {certified} certified (all with rho_M < 1 and fitted rate < 1), {above_one} with rho_M >= 1 reported"
    ))
}

/// Sensor-fusion preset ordering.
fn criterion_5() -> Check {
    let start = Instant::now();
    let run_cfg = RunConfig::preset("sensor-fusion").unwrap().resolve().unwrap();
    let prep = prepare(&run_cfg, None).unwrap();
    let mut iters = std::collections::BTreeMap::new();
    let mut summary = Vec::new();
    for mode in Mode::ALL {
        let cfg = run_cfg.solver.for_mode(mode);
        let outcome = execute(&prep, &cfg).map_err(|e| format!("{mode}: {e}"))?;
        let rate = outcome.summary.rate.ok_or_else(|| format!("{mode}: no rate fit"))?;
        ensure(rate < 1.0, || format!("{mode}: fitted rate {rate}"))?;
        let k = outcome
            .record
            .iterations_to_residual(1e-8)
            .ok_or_else(|| format!("{mode}: residual never reached 1e-8"))?;
        iters.insert(mode.label(), k);
        summary.push(format!("{}={k} (rate {rate:.4})", mode.label()));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(iters["ABPP-m"] < iters["ABPP"], || "ABPP-m is not faster than ABPP".into())?;
    ensure(iters["ABPP-mN"] < iters["ABPP"], || "ABPP-mN is not faster than ABPP".into())?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{}; {secs:.1} s", summary.join(", ")))
}

/// Runs all four modes of a dataset preset, or explains why it cannot.
fn dataset_modes(preset: &str) -> std::result::Result<Vec<(Mode, usize, Option<f64>)>, Outcome> {
    let run_cfg = RunConfig::preset(preset).unwrap().resolve().unwrap();
    if let ProblemSpec::Logistic { dataset, .. } = &run_cfg.problem {
        if let Err(e) = resolve_dataset(dataset, None) {
            return Err(Outcome::Skip(format!("dataset unavailable ({e})")));
        }
    }
    let prep = prepare(&run_cfg, None).map_err(|e| Outcome::Fail(e.to_string()))?;
    Mode::ALL
        .iter()
        .map(|&mode| {
            let outcome = execute(&prep, &run_cfg.solver.for_mode(mode)).map_err(|e| Outcome::Fail(format!("{mode}: {e}")))?;
            Ok((mode, outcome.record.iterations, outcome.summary.test_accuracy))
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let results = match dataset_modes("diabetes") {
        Ok(r) => r,
        Err(o) => return o,
    };
    let accs: Vec<f64> = results.iter().filter_map(|r| r.2).collect();
    if accs.len() != 4 {
        return Outcome::Fail("missing test accuracy".into());
    }
    let same = accs.iter().all(|&a| a == accs[0]);
    let close = (accs[0] * 100.0 - 79.41).abs() <= 2.0;
    let msg = format!("test accuracy {:.2}% for all modes: {same}", accs[0] * 100.0);
    if same && close {
        Outcome::Pass(msg)
    } else {
        Outcome::Fail(msg)
    }
}

fn criterion_7() -> Outcome {
    let mut notes = Vec::new();
    for preset in ["mnist-binary", "mnist-binary-3-5"] {
        let results = match dataset_modes(preset) {
            Ok(r) => r,
            Err(o) => return o,
        };
        let k = |m: Mode| results.iter().find(|r| r.0 == m).map(|r| r.1).unwrap();
        let (plain, hb, both) = (k(Mode::Plain), k(Mode::HeavyBall), k(Mode::Combined));
        notes.push(format!("{preset}: ABPP={plain} ABPP-m={hb} ABPP-mN={both}"));
        if !(hb < plain && both < plain) {
            return Outcome::Fail(notes.join("; "));
        }
    }
    Outcome::Pass(notes.join("; "))
}

/// Graph functionals against Floyd-Warshall and covering enumeration.
fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut enumerated = 0;
    for t in 0..50 {
        let n = rng.random_range(2..=5);
        let p = rng.random_range(0.0..0.7);
        let g = random_strong_digraph(&mut rng, n, p);
        let d = diameter(&g).unwrap();
        ensure(d == fw_diameter(&g), || format!("graph {t}: diameter {d} vs {}", fw_diameter(&g)))?;
        let k = max_edge_utility(&g).unwrap();
        let cover = covering_utility(&g, 2_000_000);
        if cover.coverings > 0 {
            enumerated += 1;
        }
        ensure(k == cover.utility, || format!("graph {t}: utility {k} vs {}", cover.utility))?;
    }
    Ok(format!("50 digraphs (n <= 5), {enumerated} with every covering enumerated"))
}

/// Backward and forward stochastic-vector recursions and their lower bounds.
fn criterion_9() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let n = rng.random_range(2..=8);
        let p = rng.random_range(0.0..0.6);
        let schedule = WeightSchedule::new(generate_sequence(n, 50, p, seed).unwrap()).unwrap();
        let graphs = schedule.graphs().graphs();
        let (phi, pi) = (schedule.phi(), schedule.pi());
        ensure(phi.len() == 51 && pi.len() == 51, || "sequence lengths".into())?;
        let mut a_min = f64::INFINITY;
        let mut b_min = f64::INFINITY;
        for (k, g) in graphs.iter().enumerate() {
            // Uniform weights over the closed in/out neighbourhoods.
            let a = DMatrix::from_fn(n, n, |i, j| {
                if i == j || g.has_edge(j, i) {
                    1.0 / (g.in_neighbors(i).len() + 1) as f64
                } else {
                    0.0
                }
            });
            let b = DMatrix::from_fn(n, n, |i, j| {
                if i == j || g.has_edge(j, i) {
                    1.0 / (g.out_neighbors(j).len() + 1) as f64
                } else {
                    0.0
                }
            });
            a_min = a.iter().copied().filter(|&v| v > 0.0).fold(a_min, f64::min);
            b_min = b.iter().copied().filter(|&v| v > 0.0).fold(b_min, f64::min);
            let phi_k = a.tr_mul(&phi[k + 1].as_dvector());
            let pi_next = &b * pi[k].as_dvector();
            worst = worst.max((phi_k - phi[k].as_dvector()).amax());
            worst = worst.max((pi_next - pi[k + 1].as_dvector()).amax());
        }
        ensure((a_min - schedule.a_lower()).abs() < 1e-15, || format!("seed {seed}: a mismatch"))?;
        ensure((b_min - schedule.b_lower()).abs() < 1e-15, || format!("seed {seed}: b mismatch"))?;
        let a_bound = a_min.powi(n as i32) / n as f64;
        let b_bound = b_min.powi(n as i32) / n as f64;
        for k in 0..=50 {
            ensure(phi[k].min() >= a_bound, || format!("seed {seed}: phi_{k} below a^n/n"))?;
            ensure(pi[k].min() >= b_bound, || format!("seed {seed}: pi_{k} below b^n/n"))?;
            ensure((phi[k].sum() - 1.0).abs() < 1e-12 && (pi[k].sum() - 1.0).abs() < 1e-12, || {
                format!("seed {seed}: vector {k} not stochastic")
            })?;
        }
    }
    ensure(worst <= 1e-12, || format!("recursion residual {worst:.3e}"))?;
    Ok(format!("20 sequences (n <= 8, horizon 50); max recursion residual {worst:.2e}"))
}

/// Finite-difference gradient checks and the ridge optimum.
fn criterion_10() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    let mut check = |f: &dyn Fn(&DVector<f64>) -> f64, g: DVector<f64>, x: &DVector<f64>| {
        let fd = fd_gradient(f, x, 1e-6);
        let rel = (&fd - &g).norm() / g.norm().max(1e-8);
        worst = worst.max(rel);
    };
    let problem = ridge(4, 6, 3, 0.05, 11);
    for i in 0..4 {
        let oracle = problem.oracle(i);
        for _ in 0..5 {
            let x = DVector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
            check(&|v| oracle.evaluate(v), oracle.gradient(&x), &x);
        }
    }
    for _ in 0..5 {
        let raw = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.5..1.5));
        let labels: Vec<f64> = (0..30).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let lg = Logistic::new(&raw, &labels, 0.01).unwrap();
        let set = ProblemSet::logistic("lg", vec![lg]).unwrap();
        let oracle = set.oracle(0);
        let x = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        check(&|v| oracle.evaluate(v), oracle.gradient(&x), &x);
    }
    ensure(worst <= 1e-5, || format!("finite-difference mismatch {worst:.3e}"))?;
    let grad_norm = problem.gradient(problem.optimum()).norm();
    ensure(grad_norm <= 1e-10, || format!("||grad f(x*)|| = {grad_norm:.3e}"))?;
    Ok(format!("max relative FD error {worst:.2e}; ridge ||grad f(x*)|| = {grad_norm:.2e}"))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Outcome::Fail(format!("panicked: {msg}"))
        }
    }
}

fn checked(f: fn() -> Check) -> impl FnOnce() -> Outcome {
    move || match f() {
        Ok(m) => Outcome::Pass(m),
        Err(m) => Outcome::Fail(m),
    }
}

fn main() {
    // `cargo test -- --list` and filters expect a harness; honour listing only.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: Vec<Criterion> = vec![
        ("gradient-tracking conservation", Box::new(checked(criterion_1))),
        ("single-agent equivalence", Box::new(checked(criterion_2))),
        ("proposition verification", Box::new(checked(criterion_3))),
        ("certificate soundness sweep", Box::new(checked(criterion_4))),
        ("sensor-fusion ordering", Box::new(checked(criterion_5))),
        ("diabetes accuracy", Box::new(criterion_6)),
        ("MNIST ordering", Box::new(criterion_7)),
        ("graph functional oracle", Box::new(checked(criterion_8))),
        ("stochastic-vector laws", Box::new(checked(criterion_9))),
        ("oracle quality", Box::new(checked(criterion_10))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let (tag, msg) = match guarded(f) {
            Outcome::Pass(m) => ("PASS", m),
            Outcome::Fail(m) => {
                failed += 1;
                ("FAIL", m)
            }
            Outcome::Skip(m) => ("SKIP", m),
        };
        println!("criterion {:>2} [{tag}] {name}: {msg}", i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
