//! JSON run and sweep configuration, including the named presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::SigmaSource;
use crate::error::{Error, Result};
use crate::problems::CsvSchema;
use crate::solver::{Mode, SolverConfig, StopRule};

pub const DATA_DIR_ENV: &str = "PUSHPULL_DATA_DIR";
pub const MAX_SWEEP_COMBINATIONS: usize = 10_000;
pub const PRESETS: [&str; 4] = ["sensor-fusion", "diabetes", "mnist-binary", "mnist-binary-3-5"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Sensor-fusion ridge regression; the agent count comes from the network.
    Ridge {
        p: usize,
        s: usize,
        lambda: f64,
        noise_sigma: f64,
        seed: u64,
    },
    /// Regularized logistic regression on a CSV dataset. The first `train`
    /// rows train the model, the next `test` rows score it.
    Logistic {
        dataset: PathBuf,
        schema: CsvSchema,
        lambda: f64,
        train: usize,
        test: usize,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Directed ring plus Bernoulli extra edges, redrawn every iteration.
    #[default]
    Random,
    Ring,
    Complete,
}

fn default_edge_prob() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub n: usize,
    /// Defaults to `solver.max_iters`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default = "default_edge_prob")]
    pub extra_edge_prob: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub topology: Topology,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "yes")]
    pub certificate: bool,
    #[serde(default)]
    pub verify_propositions: bool,
    #[serde(default)]
    pub sigma_source: SigmaSource,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            certificate: true,
            verify_propositions: false,
            sigma_source: SigmaSource::Measured,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitSpec {
    /// Every agent starts at the origin with `x_{-1} = x_0`.
    #[default]
    Zeros,
}

/// A config file as written by the user. A preset fills any section that is
/// left out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// A fully specified, validated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub preset: Option<String>,
    pub problem: ProblemSpec,
    pub network: NetworkSpec,
    pub solver: SolverConfig,
    pub analysis: AnalysisSpec,
    pub init: InitSpec,
    pub output_dir: Option<PathBuf>,
}

impl ResolvedRun {
    pub fn horizon(&self) -> usize {
        self.network.horizon.unwrap_or(self.solver.max_iters)
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let cfg = match name {
            "sensor-fusion" => {
                let mut solver = SolverConfig::new(0.25, 0.7, 0.05, 20_000, 1e-8);
                solver.stop_on = StopRule::Residual;
                RunConfig {
                    preset: Some(name.into()),
                    problem: Some(ProblemSpec::Ridge {
                        p: 20,
                        s: 1,
                        lambda: 0.01,
                        noise_sigma: 1.0,
                        seed: 1,
                    }),
                    network: Some(NetworkSpec {
                        n: 20,
                        horizon: Some(6_000),
                        extra_edge_prob: default_edge_prob(),
                        seed: 1,
                        topology: Topology::Random,
                    }),
                    solver: Some(solver),
                    analysis: Some(AnalysisSpec::default()),
                    init: Some(InitSpec::Zeros),
                    output_dir: None,
                }
            }
            "diabetes" => RunConfig {
                preset: Some(name.into()),
                problem: Some(ProblemSpec::Logistic {
                    dataset: "diabetes.csv".into(),
                    schema: CsvSchema {
                        label_column: "Outcome".into(),
                        positive_label: "1".into(),
                        negative_label: None,
                        feature_columns: None,
                        normalize: true,
                    },
                    lambda: 0.001,
                    train: 700,
                    test: 68,
                }),
                network: Some(NetworkSpec {
                    n: 7,
                    horizon: None,
                    extra_edge_prob: default_edge_prob(),
                    seed: 1,
                    topology: Topology::Random,
                }),
                solver: Some(SolverConfig::new(0.5, 0.7, 0.1, 100_000, 1e-7)),
                analysis: Some(AnalysisSpec::default()),
                init: Some(InitSpec::Zeros),
                output_dir: None,
            },
            "mnist-binary" | "mnist-binary-3-5" => {
                let (pos, neg) = if name == "mnist-binary" { ("1", "2") } else { ("3", "5") };
                RunConfig {
                    preset: Some(name.into()),
                    problem: Some(ProblemSpec::Logistic {
                        dataset: "mnist_train.csv".into(),
                        schema: CsvSchema {
                            label_column: "label".into(),
                            positive_label: pos.into(),
                            negative_label: Some(neg.into()),
                            feature_columns: None,
                            normalize: true,
                        },
                        lambda: 0.001,
                        train: 2000,
                        test: 1000,
                    }),
                    network: Some(NetworkSpec {
                        n: 10,
                        horizon: None,
                        extra_edge_prob: default_edge_prob(),
                        seed: 1,
                        topology: Topology::Random,
                    }),
                    solver: Some(SolverConfig::new(0.01, 0.3, 0.01, 50_000, 1e-3)),
                    analysis: Some(AnalysisSpec {
                        certificate: false,
                        ..AnalysisSpec::default()
                    }),
                    init: Some(InitSpec::Zeros),
                    output_dir: None,
                }
            }
            other => {
                return Err(config_err(format!(
                    "preset: unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            config_err(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Fills missing sections from the preset and validates the result.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        let base = match &self.preset {
            Some(name) => RunConfig::preset(name)?,
            None => RunConfig::default(),
        };
        let missing = |what: &str| config_err(format!("{what}: section missing and no preset given"));
        let run = ResolvedRun {
            preset: self.preset.clone(),
            problem: self.problem.clone().or(base.problem).ok_or_else(|| missing("problem"))?,
            network: self.network.clone().or(base.network).ok_or_else(|| missing("network"))?,
            solver: self.solver.clone().or(base.solver).ok_or_else(|| missing("solver"))?,
            analysis: self.analysis.clone().or(base.analysis).unwrap_or_default(),
            init: self.init.or(base.init).unwrap_or_default(),
            output_dir: self.output_dir.clone(),
        };
        run.validate()?;
        Ok(run)
    }
}

impl ResolvedRun {
    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        let field = |name: &str, ok: bool, detail: String| {
            if ok {
                Ok(())
            } else {
                Err(config_err(format!("{name}: {detail}")))
            }
        };
        field("solver.alpha", s.alpha > 0.0 && s.alpha.is_finite(), format!("must be positive, got {}", s.alpha))?;
        field("solver.beta", s.beta >= 0.0 && s.beta.is_finite(), format!("must be nonnegative, got {}", s.beta))?;
        field("solver.gamma", s.gamma >= 0.0 && s.gamma.is_finite(), format!("must be nonnegative, got {}", s.gamma))?;
        field("solver.max_iters", s.max_iters > 0, "must be at least 1".into())?;
        field("solver.stop_tolerance", s.stop_tolerance >= 0.0, format!("must be nonnegative, got {}", s.stop_tolerance))?;
        field("solver.log_stride", s.log_stride > 0, "must be at least 1".into())?;

        let net = &self.network;
        field("network.n", net.n > 0, "must be at least 1".into())?;
        field("network.horizon", net.horizon != Some(0), "must be at least 1".into())?;
        field(
            "network.extra_edge_prob",
            (0.0..=1.0).contains(&net.extra_edge_prob),
            format!("must lie in [0, 1], got {}", net.extra_edge_prob),
        )?;

        match &self.problem {
            ProblemSpec::Ridge { p, s, lambda, noise_sigma, .. } => {
                field("problem.p", *p > 0, "must be at least 1".into())?;
                field("problem.s", *s > 0, "must be at least 1".into())?;
                field("problem.lambda", *lambda > 0.0, format!("must be positive, got {lambda}"))?;
                field("problem.noise_sigma", *noise_sigma >= 0.0, format!("must be nonnegative, got {noise_sigma}"))?;
            }
            ProblemSpec::Logistic { lambda, train, .. } => {
                field("problem.lambda", *lambda > 0.0, format!("must be positive, got {lambda}"))?;
                field("problem.train", *train >= net.n, format!("needs at least one sample per agent ({} agents)", net.n))?;
            }
        }
        if self.analysis.certificate || self.analysis.verify_propositions {
            field("network.n", net.n >= 2, "certificate and proposition checks need at least 2 agents".into())?;
        }
        if self.analysis.verify_propositions {
            field("solver.log_stride", s.log_stride == 1, "proposition checks need log_stride = 1".into())?;
        }
        Ok(())
    }
}

/// Locates a dataset: absolute paths as given, otherwise relative to the
/// config file, then under `$PUSHPULL_DATA_DIR`.
pub fn resolve_dataset(path: &Path, config_dir: Option<&Path>) -> Result<PathBuf> {
    let mut tried = Vec::new();
    if path.is_absolute() {
        tried.push(path.to_path_buf());
    } else {
        if let Some(dir) = config_dir {
            tried.push(dir.join(path));
        }
        tried.push(path.to_path_buf());
        if let Some(root) = std::env::var_os(DATA_DIR_ENV) {
            tried.push(PathBuf::from(root).join(path));
        }
    }
    if let Some(found) = tried.iter().find(|p| p.is_file()) {
        return Ok(found.clone());
    }
    let list: Vec<String> = tried.iter().map(|p| p.display().to_string()).collect();
    Err(config_err(format!(
        "problem.dataset: `{}` not found (tried {}); download the CSV and place it there or set {DATA_DIR_ENV}",
        path.display(),
        list.join(", ")
    )))
}

/// A base run plus grids over the step size and momentum terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma: Vec<f64>,
    #[serde(default = "all_modes")]
    pub modes: Vec<Mode>,
}

fn all_modes() -> Vec<Mode> {
    Mode::ALL.to_vec()
}

/// One point of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            config_err(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// A sweep over the four modes of a single run config.
    pub fn compare(base: RunConfig) -> Self {
        Self {
            base,
            alpha: Vec::new(),
            beta: Vec::new(),
            gamma: Vec::new(),
            modes: all_modes(),
        }
    }

    /// Resolved base run and the grid; empty grids default to the base value.
    pub fn expand(&self) -> Result<(ResolvedRun, Vec<GridPoint>)> {
        let base = self.base.resolve()?;
        if self.modes.is_empty() {
            return Err(config_err("modes: at least one mode is required"));
        }
        let pick = |grid: &[f64], fallback: f64| if grid.is_empty() { vec![fallback] } else { grid.to_vec() };
        let alphas = pick(&self.alpha, base.solver.alpha);
        let betas = pick(&self.beta, base.solver.beta);
        let gammas = pick(&self.gamma, base.solver.gamma);
        let total = alphas.len() * betas.len() * gammas.len() * self.modes.len();
        if total > MAX_SWEEP_COMBINATIONS {
            return Err(config_err(format!(
                "sweep: {total} runs exceed the limit of {MAX_SWEEP_COMBINATIONS}"
            )));
        }
        let mut points = Vec::with_capacity(total);
        for &alpha in &alphas {
            for &beta in &betas {
                for &gamma in &gammas {
                    for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
                        let ok = if name == "alpha" { v > 0.0 } else { v >= 0.0 };
                        if !ok || !v.is_finite() {
                            return Err(config_err(format!("{name}: grid value {v} is out of range")));
                        }
                    }
                    points.push(GridPoint { alpha, beta, gamma });
                }
            }
        }
        Ok((base, points))
    }
}
