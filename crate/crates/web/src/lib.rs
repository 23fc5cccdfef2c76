//! Browser demo: a ridge problem on a random time-varying digraph, with the
//! four solver variants, the certificate and the per-step graph statistics
//! exposed to JavaScript as JSON strings.
//!
//! The `*_json` functions are plain Rust so they can be tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use pushpull::analysis::Certificate;
use pushpull::config::{NetworkSpec, ProblemSpec, ResolvedRun, RunConfig, Topology};
use pushpull::experiment::{fitted_rate, prepare, sequence_stats, status_label, Prepared};
use pushpull::solver::{run, AgentSwarm, Mode, RunOptions, SolverConfig, StopRule};

/// Curves are thinned to at most this many points before crossing into JS.
pub const MAX_CURVE_POINTS: usize = 400;
/// Keeps a single click from freezing the tab.
pub const MAX_DEMO_ITERS: usize = 20_000;
pub const MAX_DEMO_AGENTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoParams {
    pub n: usize,
    pub p: usize,
    pub extra_edge_prob: f64,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            n: 10,
            p: 10,
            extra_edge_prob: 0.3,
            seed: 1,
            alpha: 0.25,
            beta: 0.7,
            gamma: 0.05,
            max_iters: 4000,
            tolerance: 1e-8,
        }
    }
}

impl DemoParams {
    pub fn from_json(text: &str) -> Result<Self, String> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(text).map_err(|e| format!("parameters: {e}"))
    }

    fn resolved(&self) -> Result<ResolvedRun, String> {
        if self.n > MAX_DEMO_AGENTS {
            return Err(format!("n: at most {MAX_DEMO_AGENTS} agents in the demo"));
        }
        if self.max_iters > MAX_DEMO_ITERS {
            return Err(format!("max_iters: at most {MAX_DEMO_ITERS} in the demo"));
        }
        let mut solver = SolverConfig::new(self.alpha, self.beta, self.gamma, self.max_iters, self.tolerance);
        solver.stop_on = StopRule::Residual;
        let cfg = RunConfig {
            problem: Some(ProblemSpec::Ridge {
                p: self.p,
                s: 1,
                lambda: 0.01,
                noise_sigma: 1.0,
                seed: self.seed,
            }),
            network: Some(NetworkSpec {
                n: self.n,
                horizon: None,
                extra_edge_prob: self.extra_edge_prob,
                seed: self.seed,
                topology: Topology::Random,
            }),
            solver: Some(solver),
            ..RunConfig::default()
        };
        cfg.resolve().map_err(|e| e.to_string())
    }

    fn prepared(&self) -> Result<Prepared, String> {
        prepare(&self.resolved()?, None).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    pub mode: String,
    pub status: String,
    pub iterations: usize,
    pub final_residual: Option<f64>,
    pub rate: Option<f64>,
    pub k: Vec<usize>,
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulation {
    pub params: DemoParams,
    pub lipschitz: f64,
    pub mu: f64,
    pub curves: Vec<Curve>,
}

fn thin(k: Vec<usize>, r: Vec<f64>) -> (Vec<usize>, Vec<f64>) {
    if k.len() <= MAX_CURVE_POINTS {
        return (k, r);
    }
    let step = k.len().div_ceil(MAX_CURVE_POINTS);
    let last = k.len() - 1;
    let keep: Vec<usize> = (0..k.len()).filter(|i| i % step == 0 || *i == last).collect();
    (keep.iter().map(|&i| k[i]).collect(), keep.iter().map(|&i| r[i]).collect())
}

/// Runs all four variants on one shared problem and graph sequence. A
/// variant that diverges yields a curve with status `diverged`.
pub fn simulate_json(params: &str) -> Result<String, String> {
    let params = DemoParams::from_json(params)?;
    let prep = params.prepared()?;
    let base = &prep.run.solver;
    let curves = Mode::ALL
        .iter()
        .map(|&mode| {
            let cfg = base.for_mode(mode);
            let swarm = AgentSwarm::zeros(&prep.problem);
            let opts = RunOptions {
                keep_states: false,
                seeds: prep.seeds(),
            };
            match run(&prep.problem, &prep.schedule, &cfg, prep.problem.optimum(), swarm, &opts) {
                Ok(record) => {
                    let rate = fitted_rate(&record);
                    let (k, residual) = thin(record.rows.iter().map(|r| r.k).collect(), record.residuals());
                    Curve {
                        mode: mode.label().into(),
                        status: status_label(record.status).into(),
                        iterations: record.iterations,
                        final_residual: Some(record.final_residual),
                        rate,
                        k,
                        residual,
                    }
                }
                Err(err) => Curve {
                    mode: mode.label().into(),
                    status: format!("diverged: {err}"),
                    iterations: 0,
                    final_residual: None,
                    rate: None,
                    k: Vec::new(),
                    residual: Vec::new(),
                },
            }
        })
        .collect();
    let sim = Simulation {
        lipschitz: prep.problem.lipschitz(),
        mu: prep.problem.mu(),
        params,
        curves,
    };
    serde_json::to_string(&sim).map_err(|e| e.to_string())
}

/// Certificate for the given step size and momentum over the sampled horizon.
pub fn certificate_json(params: &str) -> Result<String, String> {
    let params = DemoParams::from_json(params)?;
    let prep = params.prepared()?;
    let cert: Certificate = prep.certificate(&prep.run.solver).map_err(|e| e.to_string())?;
    serde_json::to_string(&cert).map_err(|e| e.to_string())
}

/// Per-step diameter and maximal edge-utility of the sampled sequence.
pub fn graph_stats_json(params: &str) -> Result<String, String> {
    let params = DemoParams::from_json(params)?;
    let prep = params.prepared()?;
    let stats = sequence_stats(&prep.schedule).map_err(|e| e.to_string())?;
    serde_json::to_string(&stats).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn simulate(params: &str) -> Result<String, JsValue> {
    simulate_json(params).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn certificate(params: &str) -> Result<String, JsValue> {
    certificate_json(params).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn graph_stats(params: &str) -> Result<String, JsValue> {
    graph_stats_json(params).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn default_params() -> String {
    serde_json::to_string(&DemoParams::default()).expect("params serialize")
}
