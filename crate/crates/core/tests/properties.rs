mod common;

use nalgebra::{DVector, Matrix4};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pushpull::analysis::{
    fit_linear_rate, horizon_bounds, m_k_matrix, m_matrix, schedule_constants, spectral_radius, verify_propositions,
    Certificate, SigmaSource, TraceParams,
};
use pushpull::config::RunConfig;
use pushpull::graph::{diameter, generate_sequence, max_edge_utility};
use pushpull::problems::{ridge_problem, ProblemSet, RidgeSpec};
use pushpull::solver::{run, AgentSwarm, RunOptions, SolverConfig, StopRule};
use pushpull::weights::{build_column_stochastic, build_row_stochastic, WeightSchedule};

use common::*;

fn ridge(n: usize, p: usize, seed: u64) -> ProblemSet {
    ridge_problem(&RidgeSpec {
        n,
        p,
        s: 2,
        lambda: 0.1,
        noise_sigma: 0.5,
        seed,
    })
    .unwrap()
}

fn fixed(alpha: f64, beta: f64, gamma: f64, iters: usize) -> SolverConfig {
    let mut cfg = SolverConfig::new(alpha, beta, gamma, iters, 0.0);
    cfg.stop_on = StopRule::Residual;
    cfg
}

fn random_start(problem: &ProblemSet, seed: u64) -> AgentSwarm {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<DVector<f64>> {
        (0..problem.agents())
            .map(|_| DVector::from_fn(problem.dimension(), |_, _| rng.random_range(-1.0..1.0)))
            .collect()
    };
    let x0 = draw();
    let x_prev = draw();
    AgentSwarm::init(problem, x0, x_prev).unwrap()
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn relabelling_agents_permutes_the_trajectory(
        n in 2usize..6, seed in 0u64..1000, beta in 0.0..0.6f64, gamma in 0.0..0.3f64,
    ) {
        let problem = ridge(n, 3, seed);
        let graphs = generate_sequence(n, 60, 0.4, seed).unwrap();
        let perm = permutation(n, seed + 1);
        let cfg = fixed(0.05, beta, gamma, 60);
        let start = random_start(&problem, seed);

        let base = run(&problem, &WeightSchedule::new(graphs.clone()).unwrap(), &cfg, problem.optimum(),
            start.clone(), &RunOptions::default()).unwrap();
        let relabelled = run(&problem.permuted(&perm), &WeightSchedule::new(graphs.permuted(&perm).unwrap()).unwrap(),
            &cfg, problem.optimum(), start.permuted(&perm), &RunOptions::default()).unwrap();

        let expect = base.final_state.permuted(&perm);
        for (a, b) in expect.x().iter().zip(relabelled.final_state.x()) {
            prop_assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
        }
        for (a, b) in base.rows.iter().zip(&relabelled.rows) {
            prop_assert!((a.residual - b.residual).abs() <= 1e-12 * (1.0 + a.residual));
        }
    }

    #[test]
    fn identical_inputs_give_identical_runs(n in 2usize..6, seed in 0u64..1000) {
        let go = || {
            let problem = ridge(n, 2, seed);
            let schedule = WeightSchedule::new(generate_sequence(n, 40, 0.3, seed).unwrap()).unwrap();
            run(&problem, &schedule, &fixed(0.05, 0.4, 0.1, 40), problem.optimum(),
                AgentSwarm::zeros(&problem), &RunOptions::default()).unwrap()
        };
        let (a, b) = (go(), go());
        prop_assert_eq!(a.rows, b.rows);
        prop_assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn tracked_gradient_sum_is_conserved(
        n in 2usize..8, seed in 0u64..1000, alpha in 0.01..0.2f64, beta in 0.0..0.8f64, gamma in 0.0..0.3f64,
    ) {
        let problem = ridge(n, 3, seed);
        let schedule = WeightSchedule::new(generate_sequence(n, 80, 0.3, seed).unwrap()).unwrap();
        let record = run(&problem, &schedule, &fixed(alpha, beta, gamma, 80), problem.optimum(),
            random_start(&problem, seed), &RunOptions::default());
        // Large step sizes may legitimately diverge; conservation is only
        // meaningful on finite iterates.
        if let Ok(record) = record {
            prop_assert!(record.max_conservation_error <= 1e-10, "{}", record.max_conservation_error);
        }
    }

    #[test]
    fn mixing_matrices_are_stochastic(n in 1usize..9, seed in 0u64..1000, p in 0.0..1.0f64) {
        let seq = generate_sequence(n, 3, p, seed).unwrap();
        for g in seq.graphs() {
            let a = build_row_stochastic(g);
            let b = build_column_stochastic(g);
            for i in 0..n {
                prop_assert!((a.row(i).sum() - 1.0).abs() < 1e-14);
                prop_assert!((b.column(i).sum() - 1.0).abs() < 1e-14);
                prop_assert!(a[(i, i)] > 0.0 && b[(i, i)] > 0.0);
                for j in 0..n {
                    let linked = i == j || g.has_edge(j, i);
                    prop_assert_eq!(a[(i, j)] > 0.0, linked);
                    prop_assert_eq!(b[(i, j)] > 0.0, linked);
                }
            }
        }
    }

    #[test]
    fn step_constants_lie_in_their_intervals(n in 2usize..8, seed in 0u64..1000, p in 0.0..1.0f64) {
        let schedule = WeightSchedule::new(generate_sequence(n, 20, p, seed).unwrap()).unwrap();
        let sn = (n as f64).sqrt();
        for s in schedule_constants(&schedule).unwrap() {
            prop_assert!(s.c > 0.0 && s.c < 1.0);
            prop_assert!(s.tau > 0.0 && s.tau < 1.0);
            prop_assert!(s.r > sn);
            prop_assert!(s.varphi >= 1.0 && s.varphi_next >= 1.0);
            prop_assert!(s.min_pi > 0.0 && s.min_pi <= 1.0 / n as f64 + 1e-15);
        }
    }

    #[test]
    fn horizon_matrix_dominates_every_step_matrix(
        n in 2usize..6, seed in 0u64..1000, frac in 0.01..0.99f64, beta in 0.0..0.9f64, gamma in 0.0..0.4f64,
    ) {
        let problem = ridge(n, 2, seed);
        let (l, mu) = (problem.lipschitz(), problem.mu());
        let schedule = WeightSchedule::new(generate_sequence(n, 30, 0.5, seed).unwrap()).unwrap();
        let steps = schedule_constants(&schedule).unwrap();
        let h = horizon_bounds(&steps, &schedule, SigmaSource::Measured).unwrap();
        let alpha = frac * 2.0 / (n as f64 * (l + mu));
        let m = m_matrix(alpha, beta, gamma, &h, l, mu);
        for s in &steps {
            let mk = m_k_matrix(alpha, beta, gamma, s, n, l, mu);
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!(mk[(i, j)] >= 0.0);
                    prop_assert!(m[(i, j)] >= mk[(i, j)] * (1.0 - 1e-12), "entry ({i},{j}) at k={}", s.k);
                }
            }
        }
    }

    #[test]
    fn spectral_radius_matches_characteristic_roots(entries in proptest::collection::vec(0.0..2.0f64, 16)) {
        let m = Matrix4::from_column_slice(&entries);
        let rho = spectral_radius(&m).unwrap();
        let oracle = oracle_spectral_radius(&m);
        prop_assert!((rho - oracle).abs() <= 1e-6 * (1.0 + oracle), "{rho} vs {oracle}");
    }

    #[test]
    fn certified_triples_have_contracting_matrix(
        frac in 0.01..1.0f64, kb in 0.0..1.0f64, kg in 0.0..1.0f64, seed in 0u64..50,
    ) {
        let problem = ridge(2, 2, seed);
        let schedule = WeightSchedule::new(generate_sequence(2, 10, 1.0, seed).unwrap()).unwrap();
        let (l, mu) = (problem.lipschitz(), problem.mu());
        let probe = Certificate::for_schedule(&schedule, l, mu, 1e-15, 0.0, 0.0, SigmaSource::Measured).unwrap();
        if let Some(amax) = probe.alpha_max {
            let cert = Certificate::for_schedule(&schedule, l, mu, frac * amax, kb * probe.kappa_max,
                kg * probe.kappa_max, SigmaSource::Measured).unwrap();
            if cert.verdict {
                prop_assert!(cert.rho_m < 1.0);
                prop_assert!(cert.det_i_minus_m > 0.0);
                prop_assert!(cert.diag_below_one);
            }
        }
    }

    #[test]
    fn convergent_runs_satisfy_the_propositions(
        n in 2usize..6, seed in 0u64..1000, alpha in 0.005..0.05f64, beta in 0.0..0.5f64, gamma in 0.0..0.2f64,
    ) {
        let problem = ridge(n, 2, seed);
        let schedule = WeightSchedule::new(generate_sequence(n, 150, 0.4, seed).unwrap()).unwrap();
        let record = run(&problem, &schedule, &fixed(alpha, beta, gamma, 150), problem.optimum(),
            random_start(&problem, seed), &RunOptions::default()).unwrap();
        let report = verify_propositions(&record.rows, &schedule_constants(&schedule).unwrap(), &TraceParams {
            alpha, beta, gamma, l: problem.lipschitz(), mu: problem.mu(), n,
        }).unwrap();
        prop_assert_eq!(report.violations, 0, "worst {:e}", report.max_violation);
    }

    #[test]
    fn graph_functionals_match_brute_force(seed in 0u64..10_000, n in 2usize..6, p in 0.0..0.8f64) {
        let g = random_strong_digraph(&mut ChaCha8Rng::seed_from_u64(seed), n, p);
        prop_assert_eq!(diameter(&g).unwrap(), fw_diameter(&g));
        prop_assert_eq!(max_edge_utility(&g).unwrap(), covering_utility(&g, 200_000).utility);
    }

    #[test]
    fn geometric_series_rate_is_recovered(rho in 0.05..0.999f64, scale in 1e-3..1e3f64) {
        let series: Vec<f64> = (0..200).map(|k| scale * rho.powi(k)).collect();
        let fit = fit_linear_rate(&series).unwrap();
        prop_assert!((fit.rho_hat - rho).abs() <= 1e-9);
    }

    #[test]
    fn config_round_trips(alpha in 1e-4..1.0f64, beta in 0.0..0.9f64, gamma in 0.0..0.2f64, n in 2usize..30, seed in 0u64..100) {
        let mut cfg = RunConfig::preset("sensor-fusion").unwrap();
        cfg.solver = Some(SolverConfig::new(alpha, beta, gamma, 100, 1e-6));
        if let Some(net) = cfg.network.as_mut() {
            net.n = n;
            net.seed = seed;
        }
        let again = RunConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.to_json(), cfg.to_json());
    }
}

#[test]
fn zero_step_and_momentum_give_unit_radius() {
    let problem = ridge(4, 2, 1);
    let schedule = WeightSchedule::new(generate_sequence(4, 30, 0.3, 1).unwrap()).unwrap();
    let steps = schedule_constants(&schedule).unwrap();
    let h = horizon_bounds(&steps, &schedule, SigmaSource::Measured).unwrap();
    let m = m_matrix(0.0, 0.0, 0.0, &h, problem.lipschitz(), problem.mu());
    assert_eq!(spectral_radius(&m).unwrap(), 1.0);
}

#[test]
fn zero_step_keeps_the_start() {
    let problem = ridge(3, 2, 5);
    let schedule = WeightSchedule::new(generate_sequence(3, 25, 0.3, 5).unwrap()).unwrap();
    let start = random_start(&problem, 5);
    let consensus = {
        let x = start.x()[0].clone();
        AgentSwarm::init(&problem, vec![x.clone(); 3], vec![x; 3]).unwrap()
    };
    let record = run(&problem, &schedule, &fixed(0.0, 0.5, 0.2, 25), problem.optimum(), consensus.clone(),
        &RunOptions::default()).unwrap();
    for (a, b) in record.final_state.x().iter().zip(consensus.x()) {
        assert!((a - b).norm() <= 1e-14 * (1.0 + b.norm()));
    }
}
