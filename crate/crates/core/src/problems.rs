//! Per-agent objectives, dataset ingestion and reference optima.
//!
//! Two families are supported: least-squares sensor fusion with a ridge
//! term, and L2-regularized logistic regression. The reported Lipschitz
//! constant is the largest per-agent gradient Lipschitz constant, which is
//! the constant the convergence analysis uses for every `f_i`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Iteration cap for the centralized reference solver.
pub const REFERENCE_MAX_ITERS: usize = 1_000_000;

/// `f(x) = ||z - H x||^2 + lambda ||x||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    h: DMatrix<f64>,
    z: DVector<f64>,
    lambda: f64,
    lipschitz: f64,
}

impl LeastSquares {
    pub fn new(h: DMatrix<f64>, z: DVector<f64>, lambda: f64) -> Result<Self> {
        if h.nrows() != z.len() {
            return Err(invalid("measurement matrix and observation length differ"));
        }
        if !(lambda >= 0.0) {
            return Err(invalid("lambda must be nonnegative"));
        }
        let gram = h.tr_mul(&h);
        let top = SymmetricEigen::new(gram).eigenvalues.max().max(0.0);
        Ok(Self {
            h,
            z,
            lambda,
            lipschitz: 2.0 * (top + lambda),
        })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        (&self.z - &self.h * x).norm_squared() + self.lambda * x.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let resid = &self.h * x - &self.z;
        self.h.tr_mul(&resid) * 2.0 + x * (2.0 * self.lambda)
    }

    fn hessian(&self) -> DMatrix<f64> {
        let p = self.h.ncols();
        self.h.tr_mul(&self.h) * 2.0 + DMatrix::identity(p, p) * (2.0 * self.lambda)
    }
}

/// `f(x) = (1/m) sum ln(1 + exp(-y_j (x_0 + b_j^T x_{1:}))) + (lambda/2) ||x||^2`.
///
/// `features` already carries the leading all-ones intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    lambda: f64,
    lipschitz: f64,
}

impl Logistic {
    /// `raw` is the `m x p` feature block; the intercept column is prepended here.
    pub fn new(raw: &DMatrix<f64>, labels: &[f64], lambda: f64) -> Result<Self> {
        let m = raw.nrows();
        if m == 0 {
            return Err(invalid("logistic batch is empty"));
        }
        if m != labels.len() {
            return Err(invalid("feature rows and label count differ"));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(invalid("logistic labels must be +1 or -1"));
        }
        if !(lambda > 0.0) {
            return Err(invalid("lambda must be positive"));
        }
        let p = raw.ncols();
        let mut features = DMatrix::from_element(m, p + 1, 1.0);
        features.columns_mut(1, p).copy_from(raw);
        let gram = features.tr_mul(&features);
        let sigma_sq = SymmetricEigen::new(gram).eigenvalues.max().max(0.0);
        Ok(Self {
            features,
            labels: DVector::from_column_slice(labels),
            lambda,
            lipschitz: lambda + sigma_sq / (4.0 * m as f64),
        })
    }

    pub fn samples(&self) -> usize {
        self.features.nrows()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let margins = &self.features * x;
        let loss: f64 = margins
            .iter()
            .zip(self.labels.iter())
            .map(|(t, y)| softplus(-y * t))
            .sum();
        loss / self.samples() as f64 + 0.5 * self.lambda * x.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = self.samples() as f64;
        let margins = &self.features * x;
        let weights = DVector::from_iterator(
            margins.len(),
            margins
                .iter()
                .zip(self.labels.iter())
                .map(|(t, y)| -y * sigmoid(-y * t) / m),
        );
        self.features.tr_mul(&weights) + x * self.lambda
    }

    /// Exact Hessian at `x`; used by tests and diagnostics.
    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let m = self.samples() as f64;
        let margins = &self.features * x;
        let mut scaled = self.features.clone();
        for (j, t) in margins.iter().enumerate() {
            let s = sigmoid(*t);
            let w = (s * (1.0 - s) / m).sqrt();
            scaled.row_mut(j).scale_mut(w);
        }
        let d = self.features.ncols();
        scaled.tr_mul(&scaled) + DMatrix::identity(d, d) * self.lambda
    }

    /// `sign(x_0 + b^T x_{1:})` against the stored labels.
    fn correct(&self, x: &DVector<f64>) -> usize {
        let margins = &self.features * x;
        margins
            .iter()
            .zip(self.labels.iter())
            .filter(|(t, y)| (**t >= 0.0) == (**y > 0.0))
            .count()
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// One agent's private objective.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentOracle {
    LeastSquares(LeastSquares),
    Logistic(Logistic),
}

impl AgentOracle {
    pub fn dimension(&self) -> usize {
        match self {
            Self::LeastSquares(o) => o.h.ncols(),
            Self::Logistic(o) => o.features.ncols(),
        }
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::LeastSquares(o) => o.value(x),
            Self::Logistic(o) => o.value(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::LeastSquares(o) => o.gradient(x),
            Self::Logistic(o) => o.gradient(x),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Self::LeastSquares(o) => o.lipschitz,
            Self::Logistic(o) => o.lipschitz,
        }
    }
}

/// The global problem `min (1/n) sum f_i(x)` with its constants.
#[derive(Debug, Clone)]
pub struct ProblemSet {
    name: String,
    oracles: Vec<AgentOracle>,
    dim: usize,
    lipschitz: f64,
    avg_lipschitz: f64,
    mu: f64,
    optimum: DVector<f64>,
    optimum_grad_norm: f64,
}

impl ProblemSet {
    /// Least-squares agents; constants from the exact Hessian, optimum from
    /// the normal equations.
    pub fn least_squares(name: impl Into<String>, agents: Vec<LeastSquares>) -> Result<Self> {
        let dim = common_dimension(agents.iter().map(|a| a.h.ncols()))?;
        let n = agents.len() as f64;
        let mut hessian = DMatrix::zeros(dim, dim);
        for a in &agents {
            hessian += a.hessian();
        }
        hessian /= n;
        let eig = SymmetricEigen::new(hessian).eigenvalues;
        let mu = eig.min();
        if !(mu > 0.0) {
            return Err(invalid("average objective is not strongly convex"));
        }
        let avg_lipschitz = eig.max();
        let lipschitz = agents.iter().map(|a| a.lipschitz).fold(avg_lipschitz, f64::max);
        let oracles = agents.into_iter().map(AgentOracle::LeastSquares).collect();
        let mut set = Self {
            name: name.into(),
            oracles,
            dim,
            lipschitz,
            avg_lipschitz,
            mu,
            optimum: DVector::zeros(dim),
            optimum_grad_norm: f64::NAN,
        };
        set.optimum = solve_reference(&set, 1e-10)?;
        set.optimum_grad_norm = set.gradient(&set.optimum).norm();
        Ok(set)
    }

    /// Logistic agents sharing one `lambda`; `mu = lambda`, optimum from the
    /// centralized accelerated solver.
    pub fn logistic(name: impl Into<String>, agents: Vec<Logistic>) -> Result<Self> {
        let dim = common_dimension(agents.iter().map(|a| a.features.ncols()))?;
        let lambda = agents[0].lambda;
        if agents.iter().any(|a| a.lambda != lambda) {
            return Err(invalid("agents disagree on lambda"));
        }
        let n = agents.len() as f64;
        let avg_lipschitz = agents.iter().map(|a| a.lipschitz).sum::<f64>() / n;
        let lipschitz = agents.iter().map(|a| a.lipschitz).fold(0.0, f64::max);
        let oracles = agents.into_iter().map(AgentOracle::Logistic).collect();
        let mut set = Self {
            name: name.into(),
            oracles,
            dim,
            lipschitz,
            avg_lipschitz,
            mu: lambda,
            optimum: DVector::zeros(dim),
            optimum_grad_norm: f64::NAN,
        };
        set.optimum = solve_reference(&set, 1e-12)?;
        set.optimum_grad_norm = set.gradient(&set.optimum).norm();
        Ok(set)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn agents(&self) -> usize {
        self.oracles.len()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn oracles(&self) -> &[AgentOracle] {
        &self.oracles
    }

    pub fn oracle(&self, i: usize) -> &AgentOracle {
        &self.oracles[i]
    }

    /// Largest per-agent gradient Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Lipschitz constant (or bound) of the average gradient.
    pub fn avg_lipschitz(&self) -> f64 {
        self.avg_lipschitz
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn optimum(&self) -> &DVector<f64> {
        &self.optimum
    }

    pub fn optimum_grad_norm(&self) -> f64 {
        self.optimum_grad_norm
    }

    /// `f(x) = (1/n) sum f_i(x)`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.oracles.iter().map(|o| o.evaluate(x)).sum::<f64>() / self.oracles.len() as f64
    }

    /// `grad f(x) = (1/n) sum grad f_i(x)`.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for o in &self.oracles {
            g += o.gradient(x);
        }
        g / self.oracles.len() as f64
    }

    /// Relabels agents: agent `i` becomes agent `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut oracles = self.oracles.clone();
        for (i, o) in self.oracles.iter().enumerate() {
            oracles[perm[i]] = o.clone();
        }
        Self {
            oracles,
            ..self.clone()
        }
    }

    /// Fraction of rows of a labelled dataset classified correctly by `x`.
    pub fn accuracy(x: &DVector<f64>, data: &Dataset) -> Result<f64> {
        let probe = Logistic::new(&data.features, &data.labels, 1.0)?;
        Ok(probe.correct(x) as f64 / data.len() as f64)
    }
}

fn common_dimension(dims: impl Iterator<Item = usize>) -> Result<usize> {
    let dims: Vec<usize> = dims.collect();
    match dims.first() {
        None => Err(invalid("at least one agent is required")),
        Some(&d) if dims.iter().all(|&e| e == d) && d > 0 => Ok(d),
        _ => Err(invalid("agents disagree on the decision dimension")),
    }
}

/// `(L, mu, Q = L / mu)`.
pub fn constants(problem: &ProblemSet) -> (f64, f64, f64) {
    (problem.lipschitz, problem.mu, problem.lipschitz / problem.mu)
}

/// High-accuracy minimizer of the average objective.
///
/// Least-squares problems use the normal equations; anything else runs
/// accelerated gradient descent with adaptive restart until
/// `||grad f(x)|| <= tolerance`.
pub fn solve_reference(problem: &ProblemSet, tolerance: f64) -> Result<DVector<f64>> {
    let squares: Option<Vec<&LeastSquares>> = problem
        .oracles
        .iter()
        .map(|o| match o {
            AgentOracle::LeastSquares(ls) => Some(ls),
            _ => None,
        })
        .collect();
    match squares {
        Some(agents) => normal_equations(&agents, problem.dim),
        None => accelerated_descent(problem, tolerance),
    }
}

fn normal_equations(agents: &[&LeastSquares], dim: usize) -> Result<DVector<f64>> {
    let mut lhs = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for a in agents {
        lhs += a.h.tr_mul(&a.h) + DMatrix::identity(dim, dim) * a.lambda;
        rhs += a.h.tr_mul(&a.z);
    }
    let chol = lhs
        .clone()
        .cholesky()
        .ok_or_else(|| invalid("normal equations are not positive definite"))?;
    let mut x = chol.solve(&rhs);
    // One refinement pass tightens the residual on ill-conditioned instances.
    let resid = &rhs - &lhs * &x;
    x += chol.solve(&resid);
    Ok(x)
}

fn accelerated_descent(problem: &ProblemSet, tolerance: f64) -> Result<DVector<f64>> {
    let l = problem.avg_lipschitz.max(problem.mu);
    let step = 1.0 / l;
    let q = l / problem.mu;
    let momentum = (q.sqrt() - 1.0) / (q.sqrt() + 1.0);
    let mut x = DVector::zeros(problem.dim);
    let mut y = x.clone();
    let mut grad_norm = f64::INFINITY;
    for it in 0..REFERENCE_MAX_ITERS {
        let gx = problem.gradient(&x);
        grad_norm = gx.norm();
        if grad_norm <= tolerance {
            return Ok(x);
        }
        let gy = problem.gradient(&y);
        let next = &y - &gy * step;
        // Gradient restart: drop momentum when it points uphill.
        let restart = gy.dot(&(&next - &x)) > 0.0;
        y = if restart {
            next.clone()
        } else {
            &next + (&next - &x) * momentum
        };
        x = next;
        if !grad_norm.is_finite() {
            return Err(Error::ConvergenceFailure {
                iterations: it,
                grad_norm,
            });
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: REFERENCE_MAX_ITERS,
        grad_norm,
    })
}

/// Sensor-fusion ridge problem parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeSpec {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub lambda: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl RidgeSpec {
    /// n = 20 sensors, p = 20 unknowns, one row per sensor, lambda = 0.01,
    /// unit-variance noise.
    pub fn sensor_fusion(seed: u64) -> Self {
        Self {
            n: 20,
            p: 20,
            s: 1,
            lambda: 0.01,
            noise_sigma: 1.0,
            seed,
        }
    }
}

/// Random sensor-fusion instance. Each `H_i` is drawn uniformly on the unit
/// cube and rescaled so that `x -> ||z_i - H_i x||^2` has gradient Lipschitz
/// constant `2 sigma_max(H_i)^2 = 1`.
pub fn ridge_problem(spec: &RidgeSpec) -> Result<ProblemSet> {
    if spec.n == 0 || spec.p == 0 || spec.s == 0 {
        return Err(invalid("n, p and s must be at least 1"));
    }
    if !(spec.lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {}", spec.lambda)));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(invalid("noise_sigma must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let truth = DVector::from_fn(spec.p, |_, _| std_normal.sample(&mut rng));
    let mut agents = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut h = DMatrix::from_fn(spec.s, spec.p, |_, _| rng.random::<f64>());
        let top = SymmetricEigen::new(h.tr_mul(&h)).eigenvalues.max();
        if top > 0.0 {
            h /= (2.0 * top).sqrt();
        }
        let noise = DVector::from_fn(spec.s, |_, _| spec.noise_sigma * std_normal.sample(&mut rng));
        let z = &h * &truth + noise;
        agents.push(LeastSquares::new(h, z, spec.lambda)?);
    }
    ProblemSet::least_squares("ridge", agents)
}

/// How to turn a CSV file into a labelled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: String,
    pub positive_label: String,
    /// When set, rows whose label is neither positive nor negative are dropped.
    #[serde(default)]
    pub negative_label: Option<String>,
    /// Defaults to every column except the label.
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
    pub feature_names: Vec<String>,
    pub label_column: String,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(invalid("feature rows and label count differ"));
        }
        if features.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("dataset contains NaN or infinite entries"));
        }
        let feature_names = (0..features.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            features,
            labels,
            feature_names,
            label_column: "label".into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.features.ncols()
    }

    /// First `train` rows and the next `test` rows, in file order.
    pub fn split(&self, train: usize, test: usize) -> Result<(Dataset, Dataset)> {
        if train + test > self.len() {
            return Err(invalid(format!(
                "split {train}+{test} exceeds {} available rows",
                self.len()
            )));
        }
        Ok((self.rows(0, train), self.rows(train, test)))
    }

    fn rows(&self, start: usize, count: usize) -> Dataset {
        Dataset {
            features: self.features.rows(start, count).into_owned(),
            labels: self.labels[start..start + count].to_vec(),
            feature_names: self.feature_names.clone(),
            label_column: self.label_column.clone(),
        }
    }
}

fn labels_match(cell: &str, wanted: &str) -> bool {
    let (cell, wanted) = (cell.trim(), wanted.trim());
    if cell == wanted {
        return true;
    }
    matches!((cell.parse::<f64>(), wanted.parse::<f64>()), (Ok(a), Ok(b)) if a == b)
}

/// Reads a headed CSV file. Labels become `+1` (positive) or `-1`.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let label_idx = find(&schema.label_column)?;
    let feature_names: Vec<String> = match &schema.feature_columns {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let feature_idx = feature_names
        .iter()
        .map(|name| find(name))
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let label = record.get(label_idx).unwrap_or("");
        let y = if labels_match(label, &schema.positive_label) {
            1.0
        } else {
            match &schema.negative_label {
                Some(neg) if labels_match(label, neg) => -1.0,
                Some(_) => continue,
                None => -1.0,
            }
        };
        for &j in &feature_idx {
            let cell = record.get(j).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                message: format!("non-numeric value `{cell}` in column `{}`", headers[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite value in column `{}`", headers[j]),
                });
            }
            values.push(v);
        }
        labels.push(y);
    }
    let p = feature_idx.len();
    let mut features = DMatrix::from_row_slice(labels.len(), p, &values);
    if schema.normalize {
        for mut col in features.column_iter_mut() {
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = hi - lo;
            for v in col.iter_mut() {
                *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            }
        }
    }
    Ok(Dataset {
        features,
        labels,
        feature_names,
        label_column: schema.label_column.clone(),
    })
}

/// Splits `data` into `n_agents` contiguous batches (the last one takes the
/// remainder) and builds the logistic problem.
pub fn logistic_problem(data: &Dataset, n_agents: usize, lambda: f64) -> Result<ProblemSet> {
    if data.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    if n_agents == 0 || n_agents > data.len() {
        return Err(invalid(format!(
            "cannot split {} rows among {n_agents} agents",
            data.len()
        )));
    }
    if data.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(invalid("labels must be +1 or -1"));
    }
    let batch = data.len() / n_agents;
    let agents = (0..n_agents)
        .map(|i| {
            let start = i * batch;
            let count = if i + 1 == n_agents { data.len() - start } else { batch };
            let rows = data.features.rows(start, count).into_owned();
            Logistic::new(&rows, &data.labels[start..start + count], lambda)
        })
        .collect::<Result<Vec<_>>>()?;
    ProblemSet::logistic("logistic", agents)
}
