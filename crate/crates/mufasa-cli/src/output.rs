//! Files written by `run` and `latent-dump`.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use mufasa::planner::{replicate_seed, summarize, RunRecord, RunStatus};

use crate::config::{ExperimentConfig, Resolved};

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    problem: &'a str,
    stop: &'a mufasa::planner::StopCriteria,
    replicate_seeds: Vec<u64>,
    runs: Vec<ManifestRun<'a>>,
    failed: usize,
}

#[derive(Debug, Serialize)]
struct ManifestRun<'a> {
    method: &'a str,
    replicate: usize,
    seed: u64,
    csv: String,
    json: String,
    status: &'a RunStatus,
    iterations: usize,
    total_cost: u64,
}

pub fn trace_stem(method: &str, replicate: usize) -> String {
    format!("{method}_r{replicate:03}")
}

/// Write every trace, the summary and the manifest. Returns the number of
/// failed runs.
pub fn write_all(out: &Path, resolved: &Resolved, records: &[RunRecord]) -> Result<usize> {
    let n = resolved.config.replicates;
    let seeds: Vec<u64> = (0..n).map(|r| replicate_seed(resolved.config.seed, r)).collect();
    let mut runs = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let replicate = i % n;
        let stem = trace_stem(&rec.method, replicate);
        let csv = format!("{stem}.csv");
        let json = format!("{stem}.json");
        let file = std::fs::File::create(out.join(&csv)).with_context(|| format!("creating {csv}"))?;
        rec.write_csv(std::io::BufWriter::new(file))?;
        std::fs::write(out.join(&json), rec.to_json()? + "\n").with_context(|| format!("writing {json}"))?;
        runs.push(ManifestRun {
            method: &rec.method,
            replicate,
            seed: rec.seed,
            csv,
            json,
            status: &rec.status,
            iterations: rec.n_iterations(),
            total_cost: rec.total_cost(),
        });
    }
    write_summary(&out.join("summary.csv"), records)?;
    let failed = records.iter().filter(|r| r.failed()).count();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: &resolved.config,
        problem: &resolved.problem.name,
        stop: &resolved.stop,
        replicate_seeds: seeds,
        runs,
        failed,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")
        .context("writing manifest.json")?;
    Ok(failed)
}

fn write_summary(path: &Path, records: &[RunRecord]) -> Result<()> {
    let n_sources = records.first().map_or(0, |r| r.n_sources);
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header: Vec<String> = [
        "method",
        "replicates",
        "failed",
        "median_final_metric",
        "mean_final_metric",
        "std_final_metric",
        "mean_total_cost",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=n_sources).map(|s| format!("n_source{s}")));
    w.write_record(&header)?;
    for s in summarize(records) {
        let mut row = vec![
            s.method.clone(),
            s.replicates.to_string(),
            s.failed.to_string(),
            s.median_final_metric.to_string(),
            s.mean_final_metric.to_string(),
            s.std_final_metric.to_string(),
            s.mean_total_cost.to_string(),
        ];
        row.extend(s.infill_counts.iter().map(usize::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per iteration and source: `iter, source, z1, z2, distance_to_hf`.
pub fn write_latent<W: Write>(record: &RunRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "source", "z1", "z2", "distance_to_hf"])?;
    for it in &record.iterations {
        let Some(hf) = it.latent.get(record.hf_label - 1) else { continue };
        for (i, z) in it.latent.iter().enumerate() {
            let d = ((z[0] - hf[0]).powi(2) + (z[1] - hf[1]).powi(2)).sqrt();
            w.write_record([
                it.iter.to_string(),
                (i + 1).to_string(),
                z[0].to_string(),
                z[1].to_string(),
                d.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
