//! The accelerated AB/Push-Pull iteration.
//!
//! Per iteration every agent `i` computes
//!
//! ```text
//! x_{k+1}^i = sum_j A_k[i][j] s_k^j - alpha y_k^i + beta (x_k^i - x_{k-1}^i)
//! s_{k+1}^i = x_{k+1}^i + gamma (x_{k+1}^i - x_k^i)
//! y_{k+1}^i = sum_j B_k[i][j] y_k^j + grad f_i(s_{k+1}^i) - grad f_i(s_k^i)
//! ```
//!
//! `beta = gamma = 0` is plain AB/Push-Pull, `gamma = 0` heavy-ball,
//! `beta = 0` Nesterov, and both positive the combined method.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::{quantities, IterateQuantities};
use crate::error::{invalid, Error, Result};
use crate::problems::ProblemSet;
use crate::weights::{MixingPair, WeightSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[serde(alias = "ABPP")]
    Plain,
    #[serde(alias = "hb", alias = "ABPP-m")]
    HeavyBall,
    #[serde(alias = "ABPP-N")]
    Nesterov,
    #[serde(alias = "ABPP-mN")]
    Combined,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Plain, Mode::HeavyBall, Mode::Nesterov, Mode::Combined];

    pub fn from_params(beta: f64, gamma: f64) -> Self {
        match (beta > 0.0, gamma > 0.0) {
            (false, false) => Mode::Plain,
            (true, false) => Mode::HeavyBall,
            (false, true) => Mode::Nesterov,
            (true, true) => Mode::Combined,
        }
    }

    /// Short method name used in tables and CSV headers.
    pub fn label(self) -> &'static str {
        match self {
            Mode::Plain => "ABPP",
            Mode::HeavyBall => "ABPP-m",
            Mode::Nesterov => "ABPP-N",
            Mode::Combined => "ABPP-mN",
        }
    }

    /// Keeps only the momentum terms this mode uses.
    pub fn restrict(self, beta: f64, gamma: f64) -> (f64, f64) {
        match self {
            Mode::Plain => (0.0, 0.0),
            Mode::HeavyBall => (beta, 0.0),
            Mode::Nesterov => (0.0, gamma),
            Mode::Combined => (beta, gamma),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" | "abpp" => Some(Mode::Plain),
            "hb" | "heavy-ball" | "abpp-m" => Some(Mode::HeavyBall),
            "nesterov" | "abpp-n" => Some(Mode::Nesterov),
            "combined" | "abpp-mn" => Some(Mode::Combined),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopRule {
    /// `max_i ||x_k^i - mean(x_k)|| <= stop_tolerance`.
    #[default]
    Consensus,
    /// `(1/n) sum_i ||x_k^i - x*|| <= stop_tolerance`.
    Residual,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub gamma: f64,
    pub max_iters: usize,
    pub stop_tolerance: f64,
    #[serde(default = "default_stride")]
    pub log_stride: usize,
    #[serde(default)]
    pub stop_on: StopRule,
}

impl SolverConfig {
    pub fn new(alpha: f64, beta: f64, gamma: f64, max_iters: usize, stop_tolerance: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            max_iters,
            stop_tolerance,
            log_stride: 1,
            stop_on: StopRule::Consensus,
        }
    }

    pub fn mode(&self) -> Mode {
        Mode::from_params(self.beta, self.gamma)
    }

    /// The same configuration with only `mode`'s momentum terms kept.
    pub fn for_mode(&self, mode: Mode) -> Self {
        let (beta, gamma) = mode.restrict(self.beta, self.gamma);
        Self {
            beta,
            gamma,
            ..self.clone()
        }
    }

    /// `alpha = 0` is accepted for fixed-point experiments; negative or
    /// non-finite values are not.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(invalid(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(invalid(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if self.log_stride == 0 {
            return Err(invalid("log_stride must be at least 1"));
        }
        if !(self.stop_tolerance >= 0.0) {
            return Err(invalid("stop_tolerance must be nonnegative"));
        }
        Ok(())
    }
}

/// Iterate state of all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSwarm {
    x: Vec<DVector<f64>>,
    x_prev: Vec<DVector<f64>>,
    s: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
    grad_s: Vec<DVector<f64>>,
    k: usize,
}

impl AgentSwarm {
    /// `s_0 = x_0` and `y_0^i = grad f_i(s_0^i)`.
    pub fn init(problem: &ProblemSet, x0: Vec<DVector<f64>>, x_prev: Vec<DVector<f64>>) -> Result<Self> {
        let s0 = x0.clone();
        Self::init_with_s(problem, x0, x_prev, s0)
    }

    pub fn init_with_s(
        problem: &ProblemSet,
        x0: Vec<DVector<f64>>,
        x_prev: Vec<DVector<f64>>,
        s0: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let n = problem.agents();
        let p = problem.dimension();
        for (name, block) in [("x_0", &x0), ("x_-1", &x_prev), ("s_0", &s0)] {
            if block.len() != n || block.iter().any(|v| v.len() != p) {
                return Err(invalid(format!("{name} must hold {n} vectors of length {p}")));
            }
        }
        let grad_s: Vec<_> = s0.iter().enumerate().map(|(i, s)| problem.oracle(i).gradient(s)).collect();
        Ok(Self {
            x: x0,
            x_prev,
            y: grad_s.clone(),
            s: s0,
            grad_s,
            k: 0,
        })
    }

    /// All agents start at the origin with `x_{-1} = x_0`.
    pub fn zeros(problem: &ProblemSet) -> Self {
        let zero = vec![DVector::zeros(problem.dimension()); problem.agents()];
        Self::init(problem, zero.clone(), zero).expect("shapes match by construction")
    }

    pub fn agents(&self) -> usize {
        self.x.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn x(&self) -> &[DVector<f64>] {
        &self.x
    }

    pub fn x_prev(&self) -> &[DVector<f64>] {
        &self.x_prev
    }

    pub fn s(&self) -> &[DVector<f64>] {
        &self.s
    }

    pub fn y(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn grad_s(&self) -> &[DVector<f64>] {
        &self.grad_s
    }

    /// Plain average of the decisions.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.x[0].len());
        for xi in &self.x {
            m += xi;
        }
        m / self.x.len() as f64
    }

    /// `max_i ||x^i - mean(x)||`.
    pub fn consensus_error(&self) -> f64 {
        let m = self.mean();
        self.x.iter().map(|xi| (xi - &m).norm()).fold(0.0, f64::max)
    }

    /// `(1/n) sum_i ||x^i - x*||`.
    pub fn residual(&self, x_star: &DVector<f64>) -> f64 {
        self.x.iter().map(|xi| (xi - x_star).norm()).sum::<f64>() / self.x.len() as f64
    }

    /// `||sum y - sum grad f_i(s)|| / (1 + ||sum grad f_i(s)||)`.
    pub fn conservation_error(&self) -> f64 {
        let p = self.y[0].len();
        let mut sum_y = DVector::zeros(p);
        let mut sum_g = DVector::zeros(p);
        for (y, g) in self.y.iter().zip(&self.grad_s) {
            sum_y += y;
            sum_g += g;
        }
        (sum_y - &sum_g).norm() / (1.0 + sum_g.norm())
    }

    /// Relabels agent `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let shuffle = |v: &[DVector<f64>]| {
            let mut out = v.to_vec();
            for (i, item) in v.iter().enumerate() {
                out[perm[i]] = item.clone();
            }
            out
        };
        Self {
            x: shuffle(&self.x),
            x_prev: shuffle(&self.x_prev),
            s: shuffle(&self.s),
            y: shuffle(&self.y),
            grad_s: shuffle(&self.grad_s),
            k: self.k,
        }
    }

    /// Advances one iteration in place. Each agent evaluates exactly one new
    /// gradient; `grad f_i(s_k^i)` is reused from the previous step.
    pub fn step(&mut self, mix: &MixingPair, cfg: &SolverConfig, problem: &ProblemSet) -> Result<()> {
        let n = self.agents();
        if mix.n() != n || problem.agents() != n {
            return Err(invalid(format!(
                "mixing pair has {} agents, swarm has {n}",
                mix.n()
            )));
        }
        let iteration = self.k + 1;
        let (alpha, beta, gamma) = (cfg.alpha, cfg.beta, cfg.gamma);

        let mut x_next = Vec::with_capacity(n);
        for i in 0..n {
            let mut xi = DVector::zeros(self.x[i].len());
            for j in 0..n {
                let w = mix.a[(i, j)];
                if w != 0.0 {
                    xi.axpy(w, &self.s[j], 1.0);
                }
            }
            xi.axpy(-alpha, &self.y[i], 1.0);
            if beta != 0.0 {
                xi += (&self.x[i] - &self.x_prev[i]) * beta;
            }
            check_finite(&xi, iteration, i, "x")?;
            x_next.push(xi);
        }

        let s_next: Vec<DVector<f64>> = x_next
            .iter()
            .zip(&self.x)
            .map(|(xn, xk)| xn + (xn - xk) * gamma)
            .collect();

        let mut y_next = Vec::with_capacity(n);
        let mut grad_next = Vec::with_capacity(n);
        for (i, si) in s_next.iter().enumerate() {
            let g = problem.oracle(i).gradient(si);
            let mut yi = DVector::zeros(self.y[i].len());
            for j in 0..n {
                let w = mix.b[(i, j)];
                if w != 0.0 {
                    yi.axpy(w, &self.y[j], 1.0);
                }
            }
            yi += &g - &self.grad_s[i];
            check_finite(&yi, iteration, i, "y")?;
            y_next.push(yi);
            grad_next.push(g);
        }

        self.x_prev = std::mem::replace(&mut self.x, x_next);
        self.s = s_next;
        self.y = y_next;
        self.grad_s = grad_next;
        self.k = iteration;
        Ok(())
    }
}

fn check_finite(v: &DVector<f64>, iteration: usize, agent: usize, quantity: &'static str) -> Result<()> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration,
            agent,
            quantity,
        })
    }
}

/// One logged iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub k: usize,
    pub residual: f64,
    pub optimality_gap: f64,
    #[serde(rename = "consensus_D")]
    pub consensus_d: f64,
    pub state_diff: f64,
    #[serde(rename = "tracking_S")]
    pub tracking_s: f64,
    pub consensus_error: f64,
}

impl RunRow {
    pub fn quantities(&self) -> IterateQuantities {
        IterateQuantities {
            k: self.k,
            opt_gap: self.optimality_gap,
            consensus_d: self.consensus_d,
            state_diff: self.state_diff,
            tracking_s: self.tracking_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIters,
    /// The graph sequence ran out before `max_iters`.
    Truncated,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub graph: u64,
    #[serde(default)]
    pub problem: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Retain the full swarm after every iteration.
    pub keep_states: bool,
    pub seeds: Seeds,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    pub status: RunStatus,
    /// Iterations actually performed.
    pub iterations: usize,
    pub final_residual: f64,
    pub final_consensus_error: f64,
    /// Worst relative gradient-tracking conservation error seen.
    pub max_conservation_error: f64,
    pub wall_ms: f64,
    pub config: SolverConfig,
    pub seeds: Seeds,
    pub final_state: AgentSwarm,
    pub states: Vec<AgentSwarm>,
}

impl RunRecord {
    pub fn mode(&self) -> Mode {
        self.config.mode()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.residual).collect()
    }

    /// First logged iteration whose residual is at or below `tol`.
    pub fn iterations_to_residual(&self, tol: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.residual <= tol).map(|r| r.k)
    }
}

fn row_for(swarm: &AgentSwarm, schedule: &WeightSchedule, x_star: &DVector<f64>) -> Result<RunRow> {
    let k = swarm.k();
    let q = quantities(swarm, &schedule.phi()[k], &schedule.pi()[k], x_star)?;
    Ok(RunRow {
        k,
        residual: swarm.residual(x_star),
        optimality_gap: q.opt_gap,
        consensus_d: q.consensus_d,
        state_diff: q.state_diff,
        tracking_s: q.tracking_s,
        consensus_error: swarm.consensus_error(),
    })
}

#[cfg(not(target_arch = "wasm32"))]
struct Stopwatch(std::time::Instant);

#[cfg(not(target_arch = "wasm32"))]
impl Stopwatch {
    fn start() -> Self {
        Self(std::time::Instant::now())
    }
    fn millis(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

#[cfg(target_arch = "wasm32")]
struct Stopwatch;

#[cfg(target_arch = "wasm32")]
impl Stopwatch {
    fn start() -> Self {
        Self
    }
    fn millis(&self) -> f64 {
        0.0
    }
}

/// Runs the iteration from `swarm` until the stop rule fires, `max_iters`
/// is reached or the graph sequence is exhausted.
pub fn run(
    problem: &ProblemSet,
    schedule: &WeightSchedule,
    cfg: &SolverConfig,
    x_star: &DVector<f64>,
    mut swarm: AgentSwarm,
    opts: &RunOptions,
) -> Result<RunRecord> {
    cfg.validate()?;
    if schedule.n() != problem.agents() || swarm.agents() != problem.agents() {
        return Err(invalid("graph, problem and swarm disagree on the number of agents"));
    }
    if x_star.len() != problem.dimension() {
        return Err(invalid("reference optimum has the wrong dimension"));
    }
    let clock = Stopwatch::start();
    let start_k = swarm.k();
    let mut rows = vec![row_for(&swarm, schedule, x_star)?];
    let mut states = Vec::new();
    if opts.keep_states {
        states.push(swarm.clone());
    }
    let mut max_conservation = swarm.conservation_error();
    let mut status = RunStatus::MaxIters;

    for _ in 0..cfg.max_iters {
        let k = swarm.k();
        let Some(mix) = schedule.mixing(k) else {
            status = RunStatus::Truncated;
            break;
        };
        swarm.step(&mix, cfg, problem)?;
        max_conservation = max_conservation.max(swarm.conservation_error());
        if opts.keep_states {
            states.push(swarm.clone());
        }
        let row = row_for(&swarm, schedule, x_star)?;
        let done = match cfg.stop_on {
            StopRule::Consensus => row.consensus_error <= cfg.stop_tolerance,
            StopRule::Residual => row.residual <= cfg.stop_tolerance,
        };
        if done || (swarm.k() - start_k).is_multiple_of(cfg.log_stride) {
            rows.push(row);
        }
        if done {
            status = RunStatus::Converged;
            break;
        }
    }
    if rows.last().map(|r| r.k) != Some(swarm.k()) {
        rows.push(row_for(&swarm, schedule, x_star)?);
    }

    Ok(RunRecord {
        iterations: swarm.k() - start_k,
        final_residual: swarm.residual(x_star),
        final_consensus_error: swarm.consensus_error(),
        max_conservation_error: max_conservation,
        wall_ms: clock.millis(),
        config: cfg.clone(),
        seeds: opts.seeds.clone(),
        rows,
        status,
        final_state: swarm,
        states,
    })
}
