//! Turns a resolved config into problems, graph sequences, runs and
//! artifacts. Each entry point here backs one CLI subcommand.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    schedule_constants, verify_propositions, Certificate, PropositionReport, StepConstants, TraceParams,
    fit_linear_rate_at,
};
use crate::config::{resolve_dataset, GridPoint, InitSpec, NetworkSpec, ProblemSpec, ResolvedRun, Topology};
use crate::error::{Error, Result};
use crate::graph::{generate_sequence, Digraph, DigraphSequence, GraphStats};
use crate::output::{save_run_csv, write_atomic, write_json, RunSummary};
use crate::problems::{load_csv, logistic_problem, ridge_problem, Dataset, ProblemSet, RidgeSpec};
use crate::solver::{run, AgentSwarm, Mode, RunOptions, RunRecord, RunStatus, Seeds, SolverConfig};
use crate::weights::WeightSchedule;

/// Everything a run needs besides the solver parameters.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub run: ResolvedRun,
    pub problem: ProblemSet,
    pub test_set: Option<Dataset>,
    pub schedule: WeightSchedule,
    steps: OnceLock<Vec<StepConstants>>,
}

pub fn build_problem(spec: &ProblemSpec, n: usize, config_dir: Option<&Path>) -> Result<(ProblemSet, Option<Dataset>)> {
    match spec {
        ProblemSpec::Ridge {
            p,
            s,
            lambda,
            noise_sigma,
            seed,
        } => {
            let problem = ridge_problem(&RidgeSpec {
                n,
                p: *p,
                s: *s,
                lambda: *lambda,
                noise_sigma: *noise_sigma,
                seed: *seed,
            })?;
            Ok((problem, None))
        }
        ProblemSpec::Logistic {
            dataset,
            schema,
            lambda,
            train,
            test,
        } => {
            let path = resolve_dataset(dataset, config_dir)?;
            let data = load_csv(&path, schema)?;
            let (train_set, test_set) = data.split(*train, *test)?;
            let problem = logistic_problem(&train_set, n, *lambda)?;
            Ok((problem, (*test > 0).then_some(test_set)))
        }
    }
}

pub fn build_network(spec: &NetworkSpec, horizon: usize) -> Result<DigraphSequence> {
    match spec.topology {
        Topology::Random => generate_sequence(spec.n, horizon, spec.extra_edge_prob, spec.seed),
        Topology::Ring => DigraphSequence::constant(Digraph::ring(spec.n), horizon),
        Topology::Complete => DigraphSequence::constant(Digraph::complete(spec.n), horizon),
    }
}

pub fn prepare(run: &ResolvedRun, config_dir: Option<&Path>) -> Result<Prepared> {
    let (problem, test_set) = build_problem(&run.problem, run.network.n, config_dir)?;
    let schedule = WeightSchedule::new(build_network(&run.network, run.horizon())?)?;
    Ok(Prepared {
        run: run.clone(),
        problem,
        test_set,
        schedule,
        steps: OnceLock::new(),
    })
}

pub fn initial_swarm(problem: &ProblemSet, init: InitSpec) -> AgentSwarm {
    match init {
        InitSpec::Zeros => AgentSwarm::zeros(problem),
    }
}

impl Prepared {
    pub fn seeds(&self) -> Seeds {
        Seeds {
            graph: self.run.network.seed,
            problem: match self.run.problem {
                ProblemSpec::Ridge { seed, .. } => Some(seed),
                ProblemSpec::Logistic { .. } => None,
            },
        }
    }

    /// Per-step contraction constants over the horizon, computed once.
    pub fn step_constants(&self) -> Result<&[StepConstants]> {
        if self.steps.get().is_none() {
            let _ = self.steps.set(schedule_constants(&self.schedule)?);
        }
        Ok(self.steps.get().expect("initialized above"))
    }

    /// Certificate for `cfg` using the problem's `L` (largest per-agent
    /// constant) and `mu`.
    pub fn certificate(&self, cfg: &SolverConfig) -> Result<Certificate> {
        Certificate::for_steps(
            self.step_constants()?,
            &self.schedule,
            self.problem.lipschitz(),
            self.problem.mu(),
            cfg.alpha,
            cfg.beta,
            cfg.gamma,
            self.run.analysis.sigma_source,
        )
    }

    pub fn test_accuracy(&self, record: &RunRecord) -> Result<Option<f64>> {
        match &self.test_set {
            Some(test) => Ok(Some(ProblemSet::accuracy(&record.final_state.mean(), test)?)),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub summary: RunSummary,
    pub certificate: Option<Certificate>,
    pub propositions: Option<PropositionReport>,
}

/// Fitted rate over the logged residuals, when there are enough of them.
pub fn fitted_rate(record: &RunRecord) -> Option<f64> {
    let ks: Vec<f64> = record.rows.iter().map(|r| r.k as f64).collect();
    fit_linear_rate_at(&ks, &record.residuals()).ok().map(|f| f.rho_hat)
}

pub fn execute(prep: &Prepared, cfg: &SolverConfig) -> Result<RunOutcome> {
    let record = run(
        &prep.problem,
        &prep.schedule,
        cfg,
        prep.problem.optimum(),
        initial_swarm(&prep.problem, prep.run.init),
        &RunOptions {
            keep_states: false,
            seeds: prep.seeds(),
        },
    )?;
    let mut summary = RunSummary::of(&record);
    summary.rate = fitted_rate(&record);
    summary.test_accuracy = prep.test_accuracy(&record)?;

    let certificate = if prep.run.analysis.certificate {
        Some(prep.certificate(cfg)?)
    } else {
        None
    };
    let propositions = if prep.run.analysis.verify_propositions {
        Some(verify_propositions(
            &record.rows,
            prep.step_constants()?,
            &TraceParams {
                alpha: cfg.alpha,
                beta: cfg.beta,
                gamma: cfg.gamma,
                l: prep.problem.lipschitz(),
                mu: prep.problem.mu(),
                n: prep.problem.agents(),
            },
        )?)
    } else {
        None
    };
    Ok(RunOutcome {
        record,
        summary,
        certificate,
        propositions,
    })
}

/// Writes `run.csv`, `summary.json` and, when present, `certificate.json`
/// and `propositions.csv`.
pub fn write_run_artifacts(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    save_run_csv(&dir.join("run.csv"), &outcome.record)?;
    write_json(&dir.join("summary.json"), &outcome.summary)?;
    if let Some(cert) = &outcome.certificate {
        write_json(&dir.join("certificate.json"), cert)?;
    }
    if let Some(report) = &outcome.propositions {
        report.save_csv(&dir.join("propositions.csv"))?;
    }
    Ok(())
}

/// One mode of a comparison. Failed runs keep their error message.
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub mode: Mode,
    pub point: GridPoint,
    pub config: SolverConfig,
    pub outcome: std::result::Result<RunOutcome, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub mode: String,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub status: String,
    pub iterations: Option<usize>,
    pub wall_ms: Option<f64>,
    pub final_residual: Option<f64>,
    pub rate: Option<f64>,
    pub test_accuracy: Option<f64>,
}

impl ModeResult {
    pub fn row(&self) -> CompareRow {
        let (status, s) = match &self.outcome {
            Ok(o) => (status_label(o.record.status).to_string(), Some(&o.summary)),
            Err(e) => (format!("error: {e}"), None),
        };
        CompareRow {
            mode: self.mode.label().to_string(),
            alpha: self.config.alpha,
            beta: self.config.beta,
            gamma: self.config.gamma,
            status,
            iterations: s.map(|s| s.iterations),
            wall_ms: s.map(|s| s.wall_ms),
            final_residual: s.map(|s| s.final_residual),
            rate: s.and_then(|s| s.rate),
            test_accuracy: s.and_then(|s| s.test_accuracy),
        }
    }
}

pub fn status_label(status: RunStatus) -> &'static str {
    match status {
        RunStatus::Converged => "converged",
        RunStatus::MaxIters => "max-iters",
        RunStatus::Truncated => "truncated",
    }
}

/// Every `(point, mode)` job of a comparison, in output order.
pub fn compare_jobs(points: &[GridPoint], modes: &[Mode], base: &SolverConfig) -> Vec<(GridPoint, Mode, SolverConfig)> {
    let mut jobs = Vec::new();
    for &point in points {
        for &mode in modes {
            let cfg = SolverConfig {
                alpha: point.alpha,
                beta: point.beta,
                gamma: point.gamma,
                ..base.clone()
            }
            .for_mode(mode);
            jobs.push((point, mode, cfg));
        }
    }
    jobs
}

pub fn run_job(prep: &Prepared, point: GridPoint, mode: Mode, cfg: SolverConfig) -> ModeResult {
    let outcome = execute(prep, &cfg).map_err(|e| e.to_string());
    ModeResult {
        mode,
        point,
        config: cfg,
        outcome,
    }
}

/// Residual curves side by side: `k` followed by one column per result.
/// Cells are empty where a run did not log that iteration.
pub fn write_compare_csv<W: Write>(results: &[ModeResult], out: W) -> Result<()> {
    let mut columns: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        if let Ok(o) = &r.outcome {
            for row in &o.record.rows {
                columns.entry(row.k).or_insert_with(|| vec![None; results.len()])[i] = Some(row.residual);
            }
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string()];
    header.extend(results.iter().map(|r| r.mode.label().to_string()));
    w.write_record(&header)?;
    for (k, cells) in columns {
        let mut rec = vec![k.to_string()];
        rec.extend(cells.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table of iterations, wall time and accuracy per mode.
pub fn format_table(rows: &[CompareRow]) -> String {
    let mut s = format!(
        "{:<8} {:>8} {:>6} {:>6} {:>10} {:>11} {:>12} {:>9}  {}\n",
        "method", "alpha", "beta", "gamma", "iterations", "wall_ms", "residual", "accuracy", "status"
    );
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    for r in rows {
        s += &format!(
            "{:<8} {:>8} {:>6} {:>6} {:>10} {:>11} {:>12} {:>9}  {}\n",
            r.mode,
            r.alpha,
            r.beta,
            r.gamma,
            opt(r.iterations.map(|v| v.to_string())),
            opt(r.wall_ms.map(|v| format!("{v:.1}"))),
            opt(r.final_residual.map(|v| format!("{v:.3e}"))),
            opt(r.test_accuracy.map(|v| format!("{:.2}%", 100.0 * v))),
            r.status
        );
    }
    s
}

/// Writes `compare.csv`, `compare_table.csv` and `compare_table.txt` for one
/// grid point.
pub fn write_compare_artifacts(dir: &Path, results: &[ModeResult]) -> Result<()> {
    write_atomic(&dir.join("compare.csv"), |w| write_compare_csv(results, w))?;
    let rows: Vec<CompareRow> = results.iter().map(ModeResult::row).collect();
    write_atomic(&dir.join("compare_table.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        for r in &rows {
            c.serialize(r)?;
        }
        c.flush()?;
        Ok(())
    })?;
    write_atomic(&dir.join("compare_table.txt"), |w| Ok(w.write_all(format_table(&rows).as_bytes())?))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub k: usize,
    pub diameter: usize,
    pub max_edge_utility: usize,
    pub edges: usize,
    pub min_in_degree: usize,
    pub min_out_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub n: usize,
    pub horizon: usize,
    pub seed: u64,
    pub max_diameter: usize,
    pub max_edge_utility: usize,
    pub a: f64,
    pub b: f64,
    pub steps: Vec<StepStats>,
}

pub fn sequence_stats(schedule: &WeightSchedule) -> Result<SequenceStats> {
    let graphs = schedule.graphs();
    let n = graphs.n();
    let steps = graphs
        .graphs()
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let stats = GraphStats::of(g)?;
            Ok(StepStats {
                k,
                diameter: stats.diameter,
                max_edge_utility: stats.max_edge_utility,
                edges: g.edge_count(),
                min_in_degree: (0..n).map(|i| g.in_neighbors(i).len()).min().unwrap_or(0),
                min_out_degree: (0..n).map(|i| g.out_neighbors(i).len()).min().unwrap_or(0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceStats {
        n,
        horizon: graphs.len(),
        seed: graphs.seed(),
        max_diameter: steps.iter().map(|s| s.diameter).max().unwrap_or(0),
        max_edge_utility: steps.iter().map(|s| s.max_edge_utility).max().unwrap_or(0),
        a: schedule.a_lower(),
        b: schedule.b_lower(),
        steps,
    })
}

/// Graph statistics without building a problem.
pub fn graph_stats_for(run: &ResolvedRun) -> Result<SequenceStats> {
    let schedule = WeightSchedule::new(build_network(&run.network, run.horizon())?)?;
    sequence_stats(&schedule)
}

/// The certificate for `run` without running the solver.
pub fn bounds_for(run: &ResolvedRun, config_dir: Option<&Path>) -> Result<Certificate> {
    if run.network.n < 2 {
        return Err(Error::Config("network.n: the certificate needs at least 2 agents".into()));
    }
    let prep = prepare(run, config_dir)?;
    prep.certificate(&run.solver)
}

/// Mean of the final agent decisions.
pub fn consensus_point(record: &RunRecord) -> DVector<f64> {
    record.final_state.mean()
}
