//! Convergence quantities, contraction constants and the 4x4 certificate.
//!
//! The error vector is `V_k = (||x_hat_k - x*||, D(x_k, phi_k), S(y_k, pi_k),
//! ||x_k - x_{k-1}||)` and satisfies `V_{k+1} <= M_k V_k` entrywise. The
//! certificate bounds every `M_k` by a single matrix `M(alpha, beta, gamma)`
//! whose spectral radius certifies linear convergence when below one.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::GraphStats;
use crate::solver::{AgentSwarm, RunRow};
use crate::weights::{StochasticVector, WeightSchedule};

/// The four components of `V_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateQuantities {
    pub k: usize,
    pub opt_gap: f64,
    #[serde(rename = "consensus_D")]
    pub consensus_d: f64,
    pub state_diff: f64,
    #[serde(rename = "tracking_S")]
    pub tracking_s: f64,
}

impl IterateQuantities {
    /// Ordered as `(gap, D, S, diff)`.
    pub fn v(&self) -> Vector4<f64> {
        Vector4::new(self.opt_gap, self.consensus_d, self.tracking_s, self.state_diff)
    }
}

pub fn quantities(
    swarm: &AgentSwarm,
    phi: &StochasticVector,
    pi: &StochasticVector,
    x_star: &DVector<f64>,
) -> Result<IterateQuantities> {
    let n = swarm.agents();
    if phi.len() != n || pi.len() != n {
        return Err(invalid("phi and pi must have one entry per agent"));
    }
    if let Some(j) = pi.entries.iter().position(|&p| !(p > 0.0)) {
        return Err(invalid(format!("pi has a non-positive entry at index {j}")));
    }
    let x = swarm.x();
    let p = x_star.len();

    let mut x_hat = DVector::zeros(p);
    for (w, xi) in phi.entries.iter().zip(x) {
        x_hat.axpy(*w, xi, 1.0);
    }
    let d2: f64 = phi
        .entries
        .iter()
        .zip(x)
        .map(|(w, xi)| w * (xi - &x_hat).norm_squared())
        .sum();

    let diff2: f64 = x
        .iter()
        .zip(swarm.x_prev())
        .map(|(a, b)| (a - b).norm_squared())
        .sum();

    let mut y_sum = DVector::zeros(p);
    for yi in swarm.y() {
        y_sum += yi;
    }
    let s2: f64 = pi
        .entries
        .iter()
        .zip(swarm.y())
        .map(|(w, yj)| w * (yj / *w - &y_sum).norm_squared())
        .sum();

    Ok(IterateQuantities {
        k: swarm.k(),
        opt_gap: (x_hat - x_star).norm(),
        consensus_d: d2.sqrt(),
        state_diff: diff2.sqrt(),
        tracking_s: s2.sqrt(),
    })
}

/// Per-step contraction constants together with the vector extremes that
/// the per-step matrix `M_k` needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConstants {
    pub k: usize,
    pub r: f64,
    pub c: f64,
    pub varphi: f64,
    pub varphi_next: f64,
    pub tau: f64,
    pub min_pi: f64,
    pub diameter: usize,
    pub max_edge_utility: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn step_constants(
    stats: &GraphStats,
    phi_k: &StochasticVector,
    phi_next: &StochasticVector,
    pi_k: &StochasticVector,
    pi_next: &StochasticVector,
    a: f64,
    b: f64,
    k: usize,
) -> Result<StepConstants> {
    let n = stats.n;
    if n < 2 {
        return Err(invalid("contraction constants need at least two agents"));
    }
    if !(a > 0.0 && a <= 1.0 && b > 0.0 && b <= 1.0) {
        return Err(invalid(format!("weight lower bounds must lie in (0, 1], got a={a}, b={b}")));
    }
    for v in [phi_k, phi_next, pi_k, pi_next] {
        if v.len() != n || !(v.min() > 0.0) {
            return Err(invalid("stochastic vectors must be positive with one entry per agent"));
        }
    }
    let dk = stats.product();
    let c_rad = 1.0 - phi_next.min() * a * a / (phi_k.max().powi(2) * dk);
    let tau_rad = 1.0 - pi_k.min().powi(2) * b * b / (pi_k.max().powi(2) * pi_next.max() * dk);
    for (name, rad) in [("c", c_rad), ("tau", tau_rad)] {
        if !(0.0..1.0).contains(&rad) {
            return Err(Error::CertificateViolation(format!(
                "radicand of {name}_{k} is {rad}, outside [0, 1)"
            )));
        }
    }
    Ok(StepConstants {
        k,
        r: (n as f64).sqrt() + 1.0 / pi_next.min().sqrt(),
        c: c_rad.sqrt(),
        varphi: (1.0 / phi_k.min()).sqrt(),
        varphi_next: (1.0 / phi_next.min()).sqrt(),
        tau: tau_rad.sqrt(),
        min_pi: pi_k.min(),
        diameter: stats.diameter,
        max_edge_utility: stats.max_edge_utility,
    })
}

/// Step constants for `k = 0 .. T-1` using the schedule's global `a`, `b`.
pub fn schedule_constants(schedule: &WeightSchedule) -> Result<Vec<StepConstants>> {
    let (phi, pi) = (schedule.phi(), schedule.pi());
    schedule
        .graphs()
        .graphs()
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let stats = GraphStats::of(g)?;
            step_constants(
                &stats,
                &phi[k],
                &phi[k + 1],
                &pi[k],
                &pi[k + 1],
                schedule.a_lower(),
                schedule.b_lower(),
                k,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaSource {
    /// Smallest entry of any `pi_k` over the horizon.
    #[default]
    Measured,
    /// The a priori bound `b^n / n`.
    Analytic,
}

/// Horizon maxima of the step constants plus the lower bound `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonBounds {
    pub n: usize,
    pub horizon: usize,
    pub c: f64,
    pub tau: f64,
    pub r: f64,
    pub varphi: f64,
    pub sigma: f64,
    pub sigma_source: SigmaSource,
}

pub fn horizon_bounds(
    steps: &[StepConstants],
    schedule: &WeightSchedule,
    source: SigmaSource,
) -> Result<HorizonBounds> {
    if steps.is_empty() {
        return Err(invalid("no step constants supplied"));
    }
    let n = schedule.n();
    let max = |f: fn(&StepConstants) -> f64| steps.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let sigma = match source {
        SigmaSource::Measured => schedule.pi().iter().map(|p| p.min()).fold(f64::INFINITY, f64::min),
        SigmaSource::Analytic => schedule.b_lower().powi(n as i32) / n as f64,
    };
    Ok(HorizonBounds {
        n,
        horizon: steps.len(),
        c: max(|s| s.c),
        tau: max(|s| s.tau),
        r: max(|s| s.r),
        varphi: max(|s| s.varphi.max(s.varphi_next)),
        sigma,
        sigma_source: source,
    })
}

/// `1 - alpha n sigma mu`, valid as a bound on every `q_k(alpha)` only for
/// `alpha` in `(0, 2/(n(L+mu)))`.
pub fn q_bound(alpha: f64, n: usize, sigma: f64, mu: f64, l: f64) -> Result<f64> {
    let window = 2.0 / (n as f64 * (l + mu));
    if !(alpha > 0.0 && alpha < window) {
        return Err(invalid(format!(
            "alpha = {alpha} is outside the contraction window (0, {window})"
        )));
    }
    Ok(contraction_bound(alpha, n, sigma, mu))
}

pub fn contraction_bound(alpha: f64, n: usize, sigma: f64, mu: f64) -> f64 {
    1.0 - alpha * n as f64 * sigma * mu
}

/// `q_k(alpha) = max{|1 - alpha n min(pi_k) mu|, |1 - alpha n min(pi_k) L|}`.
pub fn q_step(alpha: f64, n: usize, min_pi: f64, mu: f64, l: f64) -> f64 {
    let t = alpha * n as f64 * min_pi;
    (1.0 - t * mu).abs().max((1.0 - t * l).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaConstants {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eta4: f64,
    pub eta5: f64,
    pub eta6: f64,
}

/// Requires `gamma sqrt(n) < 1` so the weight on `eta2` in `eta6` stays
/// positive.
pub fn eta_constants(h: &HorizonBounds, l: f64, mu: f64, gamma: f64) -> Result<EtaConstants> {
    let n = h.n as f64;
    let sn = n.sqrt();
    if gamma * sn >= 1.0 {
        return Err(invalid(format!(
            "gamma * sqrt(n) = {} must be below 1",
            gamma * sn
        )));
    }
    let (c, tau, r, phi, sigma) = (h.c, h.tau, h.r, h.varphi, h.sigma);
    let nsm = n * sigma * mu;
    let eta1 = (1.0 - tau) * (1.0 - c) * nsm;
    let eta2 = (1.0 - tau) * (nsm * l * sn * phi + l * l * n * phi * phi);
    let w = (1.0 + c) * phi + 1.0 - c;
    let eta3 = l * r * w * (nsm + l * sn * phi);
    let eta4 = (1.0 - tau) * w;
    let eta5 = eta1 * (sn - c) + (nsm * (1.0 + c + l * sn) + 2.0 * l * sn * phi) * eta4;
    let eta6 = (1.0 + gamma * c - gamma * sn) * eta2 + (1.0 + gamma) * eta3 + l * l * n * phi * eta4;
    Ok(EtaConstants {
        eta1,
        eta2,
        eta3,
        eta4,
        eta5,
        eta6,
    })
}

/// Rows 1, 2 and 4 are filled directly; row 3 is `L r (1 + gamma)` times
/// row 4 plus `tau` and `L r gamma` in columns 3 and 4.
pub fn m_matrix(alpha: f64, beta: f64, gamma: f64, h: &HorizonBounds, l: f64, mu: f64) -> Matrix4<f64> {
    let sn = (h.n as f64).sqrt();
    let (c, tau, r, phi) = (h.c, h.tau, h.r, h.varphi);
    let cross = alpha * l * sn * phi;
    assemble(
        contraction_bound(alpha, h.n, h.sigma, mu),
        cross,
        c,
        (c + 1.0) * phi + cross,
        tau,
        l * r,
        alpha,
        beta,
        gamma,
        sn,
        l,
    )
}

/// The per-step matrix `M_k` built from one step's constants.
pub fn m_k_matrix(alpha: f64, beta: f64, gamma: f64, s: &StepConstants, n: usize, l: f64, mu: f64) -> Matrix4<f64> {
    let sn = (n as f64).sqrt();
    let cross = alpha * l * sn * s.varphi;
    assemble(
        q_step(alpha, n, s.min_pi, mu, l),
        cross,
        s.c,
        s.c * s.varphi_next + s.varphi + cross,
        s.tau,
        l * s.r,
        alpha,
        beta,
        gamma,
        sn,
        l,
    )
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    m11: f64,
    cross: f64,
    c: f64,
    m42: f64,
    tau: f64,
    lr: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    sn: f64,
    l: f64,
) -> Matrix4<f64> {
    let row4 = [cross, m42, alpha, beta + gamma * sn * (1.0 + alpha * l)];
    let g = lr * (1.0 + gamma);
    Matrix4::new(
        m11,
        cross,
        alpha,
        beta + gamma * (1.0 + alpha * l * sn),
        cross,
        c + cross,
        alpha,
        beta + gamma * (c + alpha * l * sn),
        g * row4[0],
        g * row4[1],
        tau + g * row4[2],
        lr * gamma + g * row4[3],
        row4[0],
        row4[1],
        row4[2],
        row4[3],
    )
}

const POWER_MAX_ITERS: usize = 20_000;
const POWER_TOL: f64 = 1e-13;

/// Largest eigenvalue modulus.
///
/// For nonnegative input the support graph is split into strongly connected
/// blocks; singleton blocks contribute their diagonal entry exactly and
/// larger blocks go through a shifted power iteration with a
/// Collatz-Wielandt bracket. Anything else falls back to the real Schur form.
pub fn spectral_radius(m: &Matrix4<f64>) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    if m.iter().all(|&v| v >= 0.0) {
        if let Some(rho) = perron_root(m) {
            return Ok(rho);
        }
    }
    Ok(m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn perron_root(m: &Matrix4<f64>) -> Option<f64> {
    let mut reach = [[false; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            reach[i][j] = i == j || m[(i, j)] > 0.0;
        }
    }
    for via in 0..4 {
        for i in 0..4 {
            for j in 0..4 {
                reach[i][j] |= reach[i][via] && reach[via][j];
            }
        }
    }
    let mut seen = [false; 4];
    let mut rho = 0.0f64;
    for i in 0..4 {
        if seen[i] {
            continue;
        }
        let block: Vec<usize> = (0..4).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &block {
            seen[j] = true;
        }
        let value = if block.len() == 1 {
            m[(i, i)]
        } else {
            block_root(m, &block)?
        };
        rho = rho.max(value);
    }
    Some(rho)
}

/// Perron root of an irreducible principal block. Adding the identity makes
/// the block primitive, so the power iteration converges.
fn block_root(m: &Matrix4<f64>, block: &[usize]) -> Option<f64> {
    let size = block.len();
    let shifted = DMatrix::from_fn(size, size, |i, j| m[(block[i], block[j])] + if i == j { 1.0 } else { 0.0 });
    let mut v = DVector::from_element(size, 1.0);
    for _ in 0..POWER_MAX_ITERS {
        let w = &shifted * &v;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..size {
            if !(v[i] > 0.0) {
                return None;
            }
            let ratio = w[i] / v[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if hi - lo <= POWER_TOL * hi {
            return Some(0.5 * (lo + hi) - 1.0);
        }
        v = &w / w.max();
    }
    None
}

/// `det(I - M)` by cofactor expansion along the first row.
pub fn det_i_minus_m(m: &Matrix4<f64>) -> f64 {
    let a = Matrix4::identity() - m;
    let minor = |skip: usize| {
        let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
        let e = |r: usize, c: usize| a[(r, cols[c])];
        e(1, 0) * (e(2, 1) * e(3, 2) - e(2, 2) * e(3, 1)) - e(1, 1) * (e(2, 0) * e(3, 2) - e(2, 2) * e(3, 0))
            + e(1, 2) * (e(2, 0) * e(3, 1) - e(2, 1) * e(3, 0))
    };
    (0..4)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * a[(0, j)] * minor(j)
        })
        .sum()
}

/// Admissible ranges for a momentum level `kappa = max(beta, gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterRanges {
    /// The four step-size caps in order: consensus, tracking, determinant,
    /// contraction window.
    pub alpha_caps: [f64; 4],
    pub alpha_max: f64,
    pub kappa: f64,
    pub kappa_max: f64,
    /// `beta + gamma sqrt(n)`, required below 1.
    pub momentum_sum: f64,
    pub empty_alpha_range: bool,
}

pub fn parameter_ranges(eta: &EtaConstants, h: &HorizonBounds, l: f64, mu: f64, beta: f64, gamma: f64) -> ParameterRanges {
    let n = h.n as f64;
    let sn = n.sqrt();
    let kappa = beta.max(gamma);
    let caps = [
        (1.0 - h.c) / (l * sn * h.varphi),
        (1.0 - h.tau) / (l * h.r),
        (eta.eta1 - kappa * eta.eta5) / eta.eta6,
        2.0 / (n * (l + mu)),
    ];
    let alpha_max = caps.iter().copied().fold(f64::INFINITY, f64::min);
    let kappa_max = eta.eta1 / eta.eta5;
    ParameterRanges {
        alpha_caps: caps,
        alpha_max: alpha_max.max(0.0),
        kappa,
        kappa_max,
        momentum_sum: beta + gamma * sn,
        empty_alpha_range: !(alpha_max > 0.0) || kappa >= kappa_max,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateInputs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub mu: f64,
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub horizon: usize,
    pub sigma_source: SigmaSource,
    /// Terminal vector of the backward phi recursion.
    pub phi_terminal: String,
}

/// Every scalar of the convergence certificate for one `(alpha, beta, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub c: f64,
    pub tau: f64,
    pub r: f64,
    pub varphi: f64,
    pub sigma: f64,
    /// `None` when alpha lies outside the contraction window.
    pub q_bound: Option<f64>,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eta4: f64,
    pub eta5: f64,
    /// `None` when `gamma sqrt(n) >= 1`.
    pub eta6: Option<f64>,
    #[serde(rename = "M")]
    pub m: [[f64; 4]; 4],
    #[serde(rename = "rho_M")]
    pub rho_m: f64,
    pub det_i_minus_m: f64,
    pub diag_below_one: bool,
    pub alpha_max: Option<f64>,
    pub alpha_caps: Option<[f64; 4]>,
    pub kappa_max: f64,
    pub momentum_sum: f64,
    pub empty_alpha_range: bool,
    pub verdict: bool,
    pub reasons: Vec<String>,
    pub inputs: CertificateInputs,
}

impl Certificate {
    #[allow(clippy::too_many_arguments)]
    pub fn from_bounds(h: &HorizonBounds, l: f64, mu: f64, alpha: f64, beta: f64, gamma: f64, a: f64, b: f64) -> Result<Self> {
        if !(l >= mu && mu > 0.0) {
            return Err(invalid(format!("need L >= mu > 0, got L={l}, mu={mu}")));
        }
        let n = h.n;
        let sn = (n as f64).sqrt();
        let mut reasons = Vec::new();

        let q = q_bound(alpha, n, h.sigma, mu, l).ok();
        if q.is_none() {
            reasons.push(format!(
                "alpha = {alpha} is outside the contraction window (0, {})",
                2.0 / (n as f64 * (l + mu))
            ));
        }
        // eta1..eta5 do not depend on gamma.
        let base = eta_constants(h, l, mu, 0.0)?;
        let eta6 = eta_constants(h, l, mu, gamma).ok().map(|e| e.eta6);
        let ranges = eta6.map(|e6| parameter_ranges(&EtaConstants { eta6: e6, ..base }, h, l, mu, beta, gamma));

        let m = m_matrix(alpha, beta, gamma, h, l, mu);
        let rho = spectral_radius(&m)?;
        let det = det_i_minus_m(&m);
        let diag_below_one = (0..4).all(|i| m[(i, i)] < 1.0);

        let kappa = beta.max(gamma);
        let kappa_max = base.eta1 / base.eta5;
        if kappa >= kappa_max {
            reasons.push(format!("max(beta, gamma) = {kappa} is not below eta1/eta5 = {kappa_max}"));
        }
        if beta + gamma * sn >= 1.0 {
            reasons.push(format!("beta + gamma sqrt(n) = {} is not below 1", beta + gamma * sn));
        }
        match &ranges {
            None => reasons.push(format!("gamma sqrt(n) = {} is not below 1", gamma * sn)),
            Some(r) if r.empty_alpha_range => reasons.push("empty alpha range".into()),
            Some(r) if !(alpha > 0.0 && alpha < r.alpha_max) => {
                reasons.push(format!("alpha = {alpha} is not inside (0, {})", r.alpha_max))
            }
            _ => {}
        }
        reasons.dedup();

        Ok(Self {
            c: h.c,
            tau: h.tau,
            r: h.r,
            varphi: h.varphi,
            sigma: h.sigma,
            q_bound: q,
            eta1: base.eta1,
            eta2: base.eta2,
            eta3: base.eta3,
            eta4: base.eta4,
            eta5: base.eta5,
            eta6,
            m: std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])),
            rho_m: rho,
            det_i_minus_m: det,
            diag_below_one,
            alpha_max: ranges.map(|r| r.alpha_max),
            alpha_caps: ranges.map(|r| r.alpha_caps),
            kappa_max,
            momentum_sum: beta + gamma * sn,
            empty_alpha_range: ranges.is_none_or(|r| r.empty_alpha_range),
            verdict: reasons.is_empty(),
            reasons,
            inputs: CertificateInputs {
                alpha,
                beta,
                gamma,
                l,
                mu,
                n,
                a,
                b,
                horizon: h.horizon,
                sigma_source: h.sigma_source,
                phi_terminal: "uniform".into(),
            },
        })
    }

    /// Builds the horizon bounds from `schedule` and evaluates the
    /// certificate. Rejects single-agent networks.
    pub fn for_schedule(
        schedule: &WeightSchedule,
        l: f64,
        mu: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        source: SigmaSource,
    ) -> Result<Self> {
        let steps = schedule_constants(schedule)?;
        Self::for_steps(&steps, schedule, l, mu, alpha, beta, gamma, source)
    }

    /// As [`Certificate::for_schedule`] with precomputed step constants.
    #[allow(clippy::too_many_arguments)]
    pub fn for_steps(
        steps: &[StepConstants],
        schedule: &WeightSchedule,
        l: f64,
        mu: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        source: SigmaSource,
    ) -> Result<Self> {
        let h = horizon_bounds(steps, schedule, source)?;
        Self::from_bounds(&h, l, mu, alpha, beta, gamma, schedule.a_lower(), schedule.b_lower())
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.m[i][j])
    }
}

/// Which inequality a check refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    OptGap,
    Consensus,
    StateDiff,
    Tracking,
    StackedGap,
    StackedConsensus,
    StackedTracking,
    StackedDiff,
}

impl Inequality {
    pub fn label(self) -> &'static str {
        match self {
            Inequality::OptGap => "step_opt_gap",
            Inequality::Consensus => "step_consensus",
            Inequality::StateDiff => "step_state_diff",
            Inequality::Tracking => "step_tracking",
            Inequality::StackedGap => "stacked_opt_gap",
            Inequality::StackedConsensus => "stacked_consensus",
            Inequality::StackedTracking => "stacked_tracking",
            Inequality::StackedDiff => "stacked_state_diff",
        }
    }

    const STACKED: [Inequality; 4] = [
        Inequality::StackedGap,
        Inequality::StackedConsensus,
        Inequality::StackedTracking,
        Inequality::StackedDiff,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Holds,
    Violated,
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub k: usize,
    pub inequality: Inequality,
    pub lhs: f64,
    pub rhs: f64,
    pub status: CheckStatus,
}

impl InequalityCheck {
    /// `(rhs - lhs) / rhs`, or zero when both sides vanish.
    pub fn relative_slack(&self) -> f64 {
        if self.rhs > 0.0 {
            (self.rhs - self.lhs) / self.rhs
        } else if self.lhs > 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }
}

pub const PROPOSITION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PropositionReport {
    pub checks: Vec<InequalityCheck>,
    pub evaluated: usize,
    pub violations: usize,
    pub skipped: usize,
    /// Largest `(lhs - rhs) / rhs` over all evaluated checks.
    pub max_violation: f64,
    pub min_slack: f64,
    pub median_slack: f64,
}

impl PropositionReport {
    pub fn violations(&self) -> impl Iterator<Item = &InequalityCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Violated)
    }

    /// Long-format CSV: `k,inequality,lhs,rhs,relative_slack,status`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "inequality", "lhs", "rhs", "relative_slack", "status"])?;
        for c in &self.checks {
            let status = match &c.status {
                CheckStatus::Holds => "holds".to_string(),
                CheckStatus::Violated => "violated".to_string(),
                CheckStatus::Skipped(why) => format!("skipped: {why}"),
            };
            w.write_record([
                c.k.to_string(),
                c.inequality.label().to_string(),
                c.lhs.to_string(),
                c.rhs.to_string(),
                c.relative_slack().to_string(),
                status,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        crate::output::write_atomic(path, |f| self.write_csv(f))
    }
}

/// Parameters shared by every inequality along one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub l: f64,
    pub mu: f64,
    pub n: usize,
}

/// Evaluates the four one-step bounds and the stacked bound
/// `V_{k+1} <= M_k V_k` at every consecutive pair of rows.
///
/// `rows` must be logged with stride 1 starting at `k = 0`, and `steps[k]`
/// must hold the constants of iteration `k`.
pub fn verify_propositions(rows: &[RunRow], steps: &[StepConstants], p: &TraceParams) -> Result<PropositionReport> {
    for (i, row) in rows.iter().enumerate() {
        if row.k != rows[0].k + i {
            return Err(invalid("trace must be logged with stride 1"));
        }
    }
    let TraceParams {
        alpha,
        beta,
        gamma,
        l,
        mu,
        n,
    } = *p;
    let sn = (n as f64).sqrt();
    let mut checks = Vec::new();

    for pair in rows.windows(2) {
        let k = pair[0].k;
        let Some(s) = steps.get(k) else {
            return Err(invalid(format!("no step constants for iteration {k}")));
        };
        let now = pair[0].quantities().v();
        let next = pair[1].quantities().v();
        let (gap, d, st, diff) = (now[0], now[1], now[2], now[3]);
        let cross = alpha * l * sn * s.varphi;

        let gap_window = 2.0 / (n as f64 * s.min_pi * l);
        let gap_bound = if alpha > 0.0 && alpha < gap_window {
            Ok(q_step(alpha, n, s.min_pi, mu, l) * gap + cross * d + alpha * st + (beta + (1.0 + alpha * l * sn) * gamma) * diff)
        } else {
            Err(format!("alpha outside (0, {gap_window})"))
        };
        checks.push(make_check(k, Inequality::OptGap, next[0], gap_bound));

        let consensus_bound = (s.c + cross) * d + alpha * st + cross * gap + (beta + gamma * (s.c + alpha * l * sn)) * diff;
        checks.push(make_check(k, Inequality::Consensus, next[1], Ok(consensus_bound)));

        let diff_bound = (beta + gamma * sn * (1.0 + alpha * l)) * diff
            + alpha * st
            + cross * gap
            + (s.c * s.varphi_next + s.varphi + cross) * d;
        checks.push(make_check(k, Inequality::StateDiff, next[3], Ok(diff_bound)));

        let tracking_bound = s.tau * st + l * s.r * (1.0 + gamma) * next[3] + l * s.r * gamma * diff;
        checks.push(make_check(k, Inequality::Tracking, next[2], Ok(tracking_bound)));

        let stacked_window = 2.0 / (n as f64 * l);
        if alpha > 0.0 && alpha < stacked_window {
            let bound = m_k_matrix(alpha, beta, gamma, s, n, l, mu) * now;
            for (i, which) in Inequality::STACKED.into_iter().enumerate() {
                checks.push(make_check(k, which, next[i], Ok(bound[i])));
            }
        } else {
            for which in Inequality::STACKED {
                checks.push(make_check(k, which, next[which as usize - 4], Err(format!("alpha outside (0, {stacked_window})"))));
            }
        }
    }

    let mut slacks: Vec<f64> = checks
        .iter()
        .filter(|c| !matches!(c.status, CheckStatus::Skipped(_)))
        .map(InequalityCheck::relative_slack)
        .collect();
    slacks.sort_by(f64::total_cmp);
    let evaluated = slacks.len();
    Ok(PropositionReport {
        evaluated,
        violations: checks.iter().filter(|c| c.status == CheckStatus::Violated).count(),
        skipped: checks.len() - evaluated,
        max_violation: slacks.first().map_or(0.0, |s| (-s).max(0.0)),
        min_slack: slacks.first().copied().unwrap_or(0.0),
        median_slack: slacks.get(evaluated / 2).copied().unwrap_or(0.0),
        checks,
    })
}

fn make_check(k: usize, inequality: Inequality, lhs: f64, rhs: std::result::Result<f64, String>) -> InequalityCheck {
    match rhs {
        Ok(rhs) => InequalityCheck {
            k,
            inequality,
            lhs,
            rhs,
            status: if lhs <= rhs * (1.0 + PROPOSITION_TOLERANCE) {
                CheckStatus::Holds
            } else {
                CheckStatus::Violated
            },
        },
        Err(why) => InequalityCheck {
            k,
            inequality,
            lhs,
            rhs: f64::NAN,
            status: CheckStatus::Skipped(why),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rho_hat: f64,
    pub r_squared: f64,
    /// Number of points used in the regression.
    pub points: usize,
}

/// Least-squares fit of `ln(residual)` against `k` over the tail half of the
/// series. The series is cut at its first non-positive entry.
pub fn fit_linear_rate(residuals: &[f64]) -> Result<RateFit> {
    let ks: Vec<f64> = (0..residuals.len()).map(|k| k as f64).collect();
    fit_linear_rate_at(&ks, residuals)
}

/// Same as [`fit_linear_rate`] for series logged at arbitrary iterations.
pub fn fit_linear_rate_at(ks: &[f64], residuals: &[f64]) -> Result<RateFit> {
    if ks.len() != residuals.len() {
        return Err(invalid("iteration and residual series differ in length"));
    }
    let usable = residuals.iter().position(|&r| !(r > 0.0)).unwrap_or(residuals.len());
    if usable < 10 {
        return Err(invalid(format!("rate fit needs at least 10 positive residuals, got {usable}")));
    }
    let start = usable / 2;
    let xs = &ks[start..usable];
    let ys: Vec<f64> = residuals[start..usable].iter().map(|r| r.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit {
        rho_hat: slope.exp(),
        r_squared,
        points: xs.len(),
    })
}
