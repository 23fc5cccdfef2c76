use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use pushpull::config::{RunConfig, SweepConfig, PRESETS};
use pushpull::experiment::{
    bounds_for, compare_jobs, execute, format_table, graph_stats_for, prepare, run_job, write_compare_artifacts,
    write_run_artifacts, ModeResult,
};
use pushpull::output::{write_json, FailureSummary};
use pushpull::solver::{Mode, RunStatus};
use pushpull::Error;

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_MAX_ITERS: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

/// Accelerated AB/Push-Pull simulator and convergence certificate.
///
/// CONFIG is a JSON file or one of the preset names sensor-fusion, diabetes,
/// mnist-binary, mnist-binary-3-5. Exit codes: 0 converged, 1 configuration
/// or input error, 2 iteration limit reached, 3 divergence.
#[derive(Parser, Debug)]
#[command(name = "pushpull", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Concurrent sub-runs for compare.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory (overrides output_dir in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration; writes run.csv, summary.json, certificate.json.
    Run { config: String },
    /// Run every mode on a shared problem and graph sequence; writes compare.csv.
    Compare { config: String },
    /// Compute the convergence certificate without running the solver.
    Bounds { config: String },
    /// Per-iteration diameter and maximal edge-utility; writes stats.json.
    GraphStats { config: String },
}

struct Loaded<T> {
    value: T,
    dir: Option<PathBuf>,
}

fn load_run(arg: &str) -> Result<Loaded<RunConfig>, Error> {
    let path = Path::new(arg);
    if !path.exists() && PRESETS.contains(&arg) {
        return Ok(Loaded {
            value: RunConfig::preset(arg)?,
            dir: None,
        });
    }
    Ok(Loaded {
        value: RunConfig::load(path)?,
        dir: path.parent().map(Path::to_path_buf),
    })
}

fn load_sweep(arg: &str) -> Result<Loaded<SweepConfig>, Error> {
    let path = Path::new(arg);
    if !path.exists() && PRESETS.contains(&arg) {
        return Ok(Loaded {
            value: SweepConfig::compare(RunConfig::preset(arg)?),
            dir: None,
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {arg}: {e}")))?;
    // Sweep files carry a `base` run; plain run configs compare all modes.
    let value = match SweepConfig::from_json(&text) {
        Ok(sweep) => sweep,
        Err(sweep_err) => match RunConfig::from_json(&text) {
            Ok(run) => SweepConfig::compare(run),
            Err(run_err) => return Err(if text.contains("\"base\"") { sweep_err } else { run_err }),
        },
    };
    Ok(Loaded {
        value,
        dir: path.parent().map(Path::to_path_buf),
    })
}

fn out_dir(global: &Global, configured: Option<&PathBuf>) -> PathBuf {
    global
        .out
        .clone()
        .or_else(|| configured.cloned())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn say(global: &Global, msg: impl AsRef<str>) {
    if !global.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn announce(global: &Global, cfg: &RunConfig) {
    if let Some(name) = &cfg.preset {
        if let Ok(preset) = RunConfig::preset(name) {
            say(global, format!("preset {name}:\n{}", preset.to_json()));
        }
    }
}

fn status_code(status: RunStatus) -> u8 {
    match status {
        RunStatus::Converged => EXIT_OK,
        RunStatus::MaxIters | RunStatus::Truncated => EXIT_MAX_ITERS,
    }
}

fn cmd_run(global: &Global, arg: &str) -> Result<u8, Error> {
    let loaded = load_run(arg)?;
    announce(global, &loaded.value);
    let run = loaded.value.resolve()?;
    let out = out_dir(global, run.output_dir.as_ref());
    let prep = prepare(&run, loaded.dir.as_deref())?;
    say(
        global,
        format!(
            "{}: n={}, p={}, L={:.4}, mu={:.4}, horizon={}",
            prep.problem.name(),
            prep.problem.agents(),
            prep.problem.dimension(),
            prep.problem.lipschitz(),
            prep.problem.mu(),
            prep.schedule.horizon()
        ),
    );
    match execute(&prep, &run.solver) {
        Ok(outcome) => {
            write_run_artifacts(&out, &outcome)?;
            let s = &outcome.summary;
            say(
                global,
                format!(
                    "{} {:?} after {} iterations, residual {:.3e}, {:.1} ms",
                    s.mode, s.status, s.iterations, s.final_residual, s.wall_ms
                ),
            );
            if let Some(cert) = &outcome.certificate {
                say(global, format!("certificate: rho_M = {:.6}, verdict = {}", cert.rho_m, cert.verdict));
            }
            if let Some(report) = &outcome.propositions {
                say(global, format!("propositions: {} checks, {} violations", report.evaluated, report.violations));
            }
            say(global, format!("wrote {}", out.display()));
            Ok(status_code(outcome.record.status))
        }
        Err(err @ Error::Divergence { .. }) => {
            let summary = FailureSummary {
                mode: run.solver.mode().label().into(),
                config: run.solver.clone(),
                status: "diverged".into(),
                error: err.to_string(),
                seeds: prep.seeds(),
            };
            write_json(&out.join("summary.json"), &summary)?;
            if run.analysis.certificate {
                write_json(&out.join("certificate.json"), &prep.certificate(&run.solver)?)?;
            }
            eprintln!("error: {err}");
            Ok(EXIT_DIVERGED)
        }
        Err(err) => Err(err),
    }
}

fn cmd_compare(global: &Global, arg: &str) -> Result<u8, Error> {
    let loaded = load_sweep(arg)?;
    announce(global, &loaded.value.base);
    let (run, points) = loaded.value.expand()?;
    let out = out_dir(global, run.output_dir.as_ref());
    let prep = prepare(&run, loaded.dir.as_deref())?;
    let jobs = compare_jobs(&points, &loaded.value.modes, &run.solver);
    say(global, format!("{} runs on {} worker(s)", jobs.len(), global.jobs.max(1)));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(global.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    let results: Vec<ModeResult> =
        pool.install(|| jobs.into_par_iter().map(|(p, m, c)| run_job(&prep, p, m, c)).collect());

    let per_point = loaded.value.modes.len();
    let chunks: Vec<&[ModeResult]> = results.chunks(per_point).collect();
    if chunks.len() == 1 {
        write_compare_artifacts(&out, chunks[0])?;
    } else {
        for (i, chunk) in chunks.iter().enumerate() {
            write_compare_artifacts(&out.join(format!("point_{i:04}")), chunk)?;
        }
    }
    let rows: Vec<_> = results.iter().map(ModeResult::row).collect();
    write_json(&out.join("compare.json"), &rows)?;
    if !global.quiet {
        print!("{}", format_table(&rows));
    }
    say(global, format!("wrote {}", out.display()));

    let mut code = EXIT_OK;
    for r in &results {
        let c = match &r.outcome {
            Ok(o) => status_code(o.record.status),
            Err(e) if e.starts_with("divergence") => EXIT_DIVERGED,
            Err(_) => EXIT_CONFIG,
        };
        code = code.max(c);
    }
    Ok(code)
}

fn cmd_bounds(global: &Global, arg: &str) -> Result<u8, Error> {
    let loaded = load_run(arg)?;
    announce(global, &loaded.value);
    let run = loaded.value.resolve()?;
    let out = out_dir(global, run.output_dir.as_ref());
    let cert = bounds_for(&run, loaded.dir.as_deref())?;
    write_json(&out.join("certificate.json"), &cert)?;
    let mode = Mode::from_params(run.solver.beta, run.solver.gamma);
    say(
        global,
        format!(
            "{mode}: rho_M = {:.6}, alpha_max = {}, kappa_max = {:.3e}, verdict = {}",
            cert.rho_m,
            cert.alpha_max.map_or("undefined".into(), |a| format!("{a:.3e}")),
            cert.kappa_max,
            cert.verdict
        ),
    );
    if cert.empty_alpha_range {
        say(global, "empty alpha range");
    }
    for reason in &cert.reasons {
        say(global, format!("  {reason}"));
    }
    say(global, format!("wrote {}", out.join("certificate.json").display()));
    Ok(EXIT_OK)
}

fn cmd_graph_stats(global: &Global, arg: &str) -> Result<u8, Error> {
    let loaded = load_run(arg)?;
    let run = loaded.value.resolve()?;
    let out = out_dir(global, run.output_dir.as_ref());
    let stats = graph_stats_for(&run)?;
    write_json(&out.join("stats.json"), &stats)?;
    say(
        global,
        format!(
            "n={}, horizon={}, max diameter {}, max edge-utility {}",
            stats.n, stats.horizon, stats.max_diameter, stats.max_edge_utility
        ),
    );
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(&cli.global, config),
        Command::Compare { config } => cmd_compare(&cli.global, config),
        Command::Bounds { config } => cmd_bounds(&cli.global, config),
        Command::GraphStats { config } => cmd_graph_stats(&cli.global, config),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
