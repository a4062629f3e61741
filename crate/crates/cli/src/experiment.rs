//! Sweep execution: run every (variant, threshold, seed) cell of the grid,
//! persist per-run JSON, a deterministic aggregate CSV, wall-clock timings,
//! and a line chart rendered from the CSV alone.

use crate::config::{db_to_linear, ExperimentConfig, Method};
use crate::plot;
use anyhow::{Context, Result};
use ris_access::protocol::{run_beam_sweep, run_initial_access, ProtocolConfig, RunResult};
use ris_access::scenario::build_scenario;
use serde::Serialize;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

/// Header comment pinning the aggregate CSV schema.
pub const AGGREGATE_SCHEMA: &str =
    "# ris-access aggregate v1: variant,tau_db,seed,total_slots,unreachable";
const TIMINGS_SCHEMA: &str = "# ris-access timings v1: variant,tau_db,seed,wall_ms";

#[derive(Debug, Clone, Copy)]
struct Job {
    method: Method,
    tau_db: f64,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct RunRecord {
    variant: &'static str,
    tau_db: f64,
    seed: u64,
    layout_seed: u64,
    #[serde(flatten)]
    result: RunResult,
}

#[derive(Debug, Serialize)]
struct Manifest {
    complete: bool,
    runs_total: usize,
    runs_ok: usize,
    failed: Vec<String>,
}

fn job_name(j: &Job) -> String {
    format!("{}_tau{}_seed{}", j.method.label(), j.tau_db, j.seed)
}

fn execute(cfg: &ExperimentConfig, job: &Job) -> Result<RunResult> {
    let mut params = cfg.scenario.clone();
    params.snr_threshold = db_to_linear(job.tau_db);
    // Each seed gets its own zone-jitter realization on top of its own
    // randomization streams.
    let layout = cfg.layout_seed.wrapping_add(job.seed);
    let scenario = build_scenario(&params, layout)?;
    Ok(match job.method.variant() {
        None => run_beam_sweep(&scenario),
        Some(v) => {
            let pcfg = ProtocolConfig {
                alternate: cfg.alternate.clone(),
                rng_seed: job.seed,
            };
            run_initial_access(&scenario, v, &pcfg)
        }
    })
}

/// Run the full grid and write all artifacts under `cfg.output_dir`.
///
/// Returns an error if the directory is unwritable or any run failed; partial
/// results are kept on disk either way and the manifest records completeness.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<()> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out.join("runs"))
        .with_context(|| format!("creating output dir {}", out.display()))?;

    let mut grid = Vec::new();
    for &method in &cfg.variants {
        for &tau_db in &cfg.tau_db {
            for &seed in &cfg.seeds {
                grid.push(Job { method, tau_db, seed });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    let outcomes: Vec<(Job, std::result::Result<(RunResult, f64), String>)> =
        pool.install(|| {
            use rayon::prelude::*;
            grid.par_iter()
                .map(|job| {
                    let started = Instant::now();
                    let res = catch_unwind(AssertUnwindSafe(|| execute(cfg, job)));
                    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
                    let flat = match res {
                        Ok(Ok(r)) => Ok((r, wall_ms)),
                        Ok(Err(e)) => Err(e.to_string()),
                        Err(_) => Err("panicked".to_string()),
                    };
                    (*job, flat)
                })
                .collect()
        });

    // Deterministic artifact order regardless of worker scheduling.
    let mut outcomes = outcomes;
    outcomes.sort_by(|(a, _), (b, _)| {
        (a.method.label(), a.tau_db.to_bits(), a.seed)
            .cmp(&(b.method.label(), b.tau_db.to_bits(), b.seed))
    });

    let mut aggregate = format!("{AGGREGATE_SCHEMA}\nvariant,tau_db,seed,total_slots,unreachable\n");
    let mut timings = format!("{TIMINGS_SCHEMA}\nvariant,tau_db,seed,wall_ms\n");
    let mut failed = Vec::new();
    let mut ok = 0usize;
    for (job, outcome) in &outcomes {
        let name = job_name(job);
        match outcome {
            Ok((result, wall_ms)) => {
                ok += 1;
                let record = RunRecord {
                    variant: job.method.label(),
                    tau_db: job.tau_db,
                    seed: job.seed,
                    layout_seed: cfg.layout_seed.wrapping_add(job.seed),
                    result: result.clone(),
                };
                let path = out.join("runs").join(format!("{name}.json"));
                fs::write(&path, serde_json::to_vec_pretty(&record)?)
                    .with_context(|| format!("writing {}", path.display()))?;
                aggregate.push_str(&format!(
                    "{},{},{},{},{}\n",
                    job.method.label(),
                    job.tau_db,
                    job.seed,
                    result.total_slots,
                    result.unreachable_zones.len()
                ));
                timings.push_str(&format!(
                    "{},{},{},{:.3}\n",
                    job.method.label(),
                    job.tau_db,
                    job.seed,
                    wall_ms
                ));
            }
            Err(msg) => failed.push(format!("{name}: {msg}")),
        }
    }

    fs::write(out.join("aggregate.csv"), &aggregate)?;
    fs::write(out.join("timings.csv"), &timings)?;
    let manifest = Manifest {
        complete: failed.is_empty(),
        runs_total: outcomes.len(),
        runs_ok: ok,
        failed: failed.clone(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;

    let svg = plot::render_slots_vs_tau(&aggregate)?;
    fs::write(out.join("slots_vs_tau.svg"), svg)?;

    if !failed.is_empty() {
        anyhow::bail!("{} of {} runs failed; see manifest.json", failed.len(), outcomes.len());
    }
    Ok(())
}

/// Re-render the chart from an existing aggregate CSV.
pub fn plot_from_csv(csv_path: &Path, svg_path: &Path) -> Result<()> {
    let text = fs::read_to_string(csv_path)
        .with_context(|| format!("reading {}", csv_path.display()))?;
    let svg = plot::render_slots_vs_tau(&text)?;
    fs::write(svg_path, svg).with_context(|| format!("writing {}", svg_path.display()))?;
    Ok(())
}
