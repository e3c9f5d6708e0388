use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Task;

/// A lower-level query made alongside the chosen one (nested designs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeQuery {
    pub source: usize,
    pub y: f64,
    pub cost: u64,
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    Iterations,
    Cost,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::Iterations => "iterations",
            StopReason::Cost => "cost",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "state")]
pub enum RunStatus {
    Completed { reason: StopReason },
    Failed { error: String },
}

/// One infill iteration. Iteration 0 is the initial state and has no query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub cum_cost: u64,
    pub source: Option<usize>,
    pub x: Option<Vec<f64>>,
    pub y: Option<f64>,
    /// RRMSE of the HF surrogate (GF) or best observed HF output (BO).
    pub metric: f64,
    pub fallback: bool,
    pub stage1_x: Option<Vec<f64>>,
    /// Latent coordinates per source label, after refitting with this sample.
    pub latent: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cascade: Vec<CascadeQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub task: Task,
    pub method: String,
    pub seed: u64,
    pub n_sources: usize,
    pub hf_label: usize,
    pub dim: usize,
    /// Initial design size per source label.
    pub initial_counts: Vec<usize>,
    pub iterations: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_sources: Vec<usize>,
    pub status: RunStatus,
}

/// Column order of the trace CSV after the input columns.
pub const CSV_HEAD: [&str; 3] = ["iter", "cum_cost", "source"];
pub const CSV_TAIL: [&str; 3] = ["y", "metric", "fallback"];

impl RunRecord {
    pub fn final_metric(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.metric)
    }

    pub fn total_cost(&self) -> u64 {
        self.iterations.last().map_or(0, |r| r.cum_cost)
    }

    pub fn n_iterations(&self) -> usize {
        self.iterations.len().saturating_sub(1)
    }

    /// Infill queries per source label, cascaded queries included.
    pub fn infill_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_sources];
        for r in &self.iterations {
            if let Some(s) = r.source {
                counts[s - 1] += 1;
            }
            for c in &r.cascade {
                counts[c.source - 1] += 1;
            }
        }
        counts
    }

    /// Cumulative cost at which the BO metric first came within `rel` of `target`.
    pub fn cost_to_reach(&self, target: f64, rel: f64) -> Option<u64> {
        self.iterations.iter().find(|r| ((r.metric - target) / target).abs() <= rel).map(|r| r.cum_cost)
    }

    pub fn failed(&self) -> bool {
        matches!(self.status, RunStatus::Failed { .. })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("trace JSON: {e}")))
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = CSV_HEAD.iter().map(|s| s.to_string()).collect();
        h.extend((1..=self.dim).map(|i| format!("x{i}")));
        h.extend(CSV_TAIL.iter().map(|s| s.to_string()));
        h
    }

    /// One row per iteration: `iter, cum_cost, source, x1..xq, y, metric, fallback`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidInput(e.to_string());
        w.write_record(self.csv_header()).map_err(io)?;
        for r in &self.iterations {
            let mut row = vec![r.iter.to_string(), r.cum_cost.to_string(), opt(r.source)];
            match &r.x {
                Some(x) => row.extend(x.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), self.dim)),
            }
            row.push(opt(r.y));
            row.push(r.metric.to_string());
            row.push(r.fallback.to_string());
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// A trace CSV row read back.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub iter: usize,
    pub cum_cost: u64,
    pub source: Option<usize>,
    pub x: Option<Vec<f64>>,
    pub y: Option<f64>,
    pub metric: f64,
    pub fallback: bool,
}

/// Parse a trace CSV written by [`RunRecord::write_csv`].
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<CsvRow>> {
    let bad = |m: String| Error::InvalidInput(format!("trace CSV: {m}"));
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < 6 || header.get(0) != Some("iter") {
        return Err(bad("unexpected header".into()));
    }
    let dim = header.len() - 6;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let x = if field(3).is_empty() {
            None
        } else {
            Some((0..dim).map(|i| num(field(3 + i))).collect::<Result<Vec<_>>>()?)
        };
        rows.push(CsvRow {
            iter: field(0).parse().map_err(|e| bad(format!("iter: {e}")))?,
            cum_cost: field(1).parse().map_err(|e| bad(format!("cum_cost: {e}")))?,
            source: if field(2).is_empty() {
                None
            } else {
                Some(field(2).parse().map_err(|e| bad(format!("source: {e}")))?)
            },
            x,
            y: if field(3 + dim).is_empty() { None } else { Some(num(field(3 + dim))?) },
            metric: num(field(4 + dim))?,
            fallback: field(5 + dim) == "true",
        });
    }
    Ok(rows)
}

/// Aggregate over the replicates of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub replicates: usize,
    pub failed: usize,
    pub median_final_metric: f64,
    pub mean_final_metric: f64,
    pub std_final_metric: f64,
    pub mean_total_cost: f64,
    /// Infill queries per source label summed over replicates.
    pub infill_counts: Vec<usize>,
}

/// Summaries per method, in first-seen order. Failed replicates count toward
/// `failed` and contribute their partial traces to the statistics.
pub fn summarize(records: &[RunRecord]) -> Vec<MethodSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    order
        .into_iter()
        .map(|m| {
            let group: Vec<&RunRecord> = records.iter().filter(|r| r.method == m).collect();
            let mut finals: Vec<f64> = group.iter().filter_map(|r| r.final_metric()).collect();
            finals.sort_by(f64::total_cmp);
            let n = finals.len() as f64;
            let mean = finals.iter().sum::<f64>() / n;
            let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let mut counts = vec![0; group.first().map_or(0, |r| r.n_sources)];
            for r in &group {
                for (c, k) in counts.iter_mut().zip(r.infill_counts()) {
                    *c += k;
                }
            }
            MethodSummary {
                method: m.to_owned(),
                replicates: group.len(),
                failed: group.iter().filter(|r| r.failed()).count(),
                median_final_metric: median(&finals),
                mean_final_metric: mean,
                std_final_metric: var.sqrt(),
                mean_total_cost: group.iter().map(|r| r.total_cost() as f64).sum::<f64>() / group.len() as f64,
                infill_counts: counts,
            }
        })
        .collect()
}

/// Median of sorted values; NaN when empty.
pub fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}
