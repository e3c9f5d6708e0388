//! Recursive autoregressive co-kriging over a fixed fidelity chain,
//! `y_k(x) = ρ_k ŷ_{k−1}(x) + δ_k(x)`, with SERV infill on nested designs.

use serde::{Deserialize, Serialize};

use crate::acquisition::{find_unit_modes, TIE_TOLERANCE};
use crate::error::{invalid, Error, Result};
use crate::lvgp::{FitConfig, FittedLvgp, Prediction, TrainingSet};
use crate::planner::{
    fail, initial_record, CascadeQuery, IterationRecord, MethodSpec, Metric, RunConfig, RunRecord, RunState, RunStatus,
    StopCriteria,
};
use crate::problems::{generate_nested_doe, Problem};

#[derive(Debug, Clone)]
pub struct CoKrigingLevel {
    pub source: usize,
    /// Scale on the level below; 1 for the bottom level.
    pub rho: f64,
    /// GP of the bottom source, or of the discrepancy above the level below.
    pub gp: FittedLvgp,
}

#[derive(Debug, Clone)]
pub struct CoKrigingModel {
    levels: Vec<CoKrigingLevel>,
}

fn rows_of(data: &TrainingSet, source: usize) -> Vec<(&Vec<f64>, f64)> {
    data.inputs
        .iter()
        .zip(&data.sources)
        .zip(&data.outputs)
        .filter(|((_, &s), _)| s == source)
        .map(|((x, _), &y)| (x, y))
        .collect()
}

impl CoKrigingModel {
    /// Fit level by level along `chain` (lowest fidelity first). Every level's
    /// design must be contained in the design of the level below.
    pub fn fit(data: &TrainingSet, chain: &[usize], config: &FitConfig) -> Result<Self> {
        if chain.is_empty() {
            return Err(invalid("empty fidelity chain"));
        }
        for &s in chain {
            data.check_label(s)?;
        }
        for w in chain.windows(2) {
            let below = rows_of(data, w[0]);
            for (x, _) in rows_of(data, w[1]) {
                if !below.iter().any(|(b, _)| *b == x) {
                    return Err(invalid(format!("design of source {} is not nested in source {}", w[1], w[0])));
                }
            }
        }
        let mut model = Self { levels: Vec::with_capacity(chain.len()) };
        for &source in chain {
            let rows = rows_of(data, source);
            let mut set = TrainingSet::new(data.bounds.clone(), 1, 1)?;
            let level = if model.levels.is_empty() {
                for (x, y) in &rows {
                    set.push((*x).clone(), 1, *y)?;
                }
                CoKrigingLevel { source, rho: 1.0, gp: FittedLvgp::fit(&set, config)? }
            } else {
                let below: Vec<f64> =
                    rows.iter().map(|(x, _)| model.predict(x).map(|p| p.mean)).collect::<Result<_>>()?;
                let above: Vec<f64> = rows.iter().map(|r| r.1).collect();
                let rho = scale_factor(&below, &above);
                for (((x, _), b), a) in rows.iter().zip(&below).zip(&above) {
                    set.push((*x).clone(), 1, a - rho * b)?;
                }
                CoKrigingLevel { source, rho, gp: FittedLvgp::fit(&set, config)? }
            };
            model.levels.push(level);
        }
        Ok(model)
    }

    pub fn levels(&self) -> &[CoKrigingLevel] {
        &self.levels
    }

    pub fn chain(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.source).collect()
    }

    /// Cumulative prediction at every level, lowest first.
    pub fn predict_levels(&self, x: &[f64]) -> Result<Vec<Prediction>> {
        let mut out: Vec<Prediction> = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            let d = level.gp.predict(x, 1)?;
            let p = match out.last() {
                None => d,
                Some(prev) => Prediction {
                    mean: level.rho * prev.mean + d.mean,
                    variance: level.rho * level.rho * prev.variance + d.variance,
                },
            };
            out.push(p);
        }
        Ok(out)
    }

    /// Prediction of the top of the chain.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.predict_levels(x)?.pop().ok_or_else(|| invalid("empty model"))
    }

    /// Variance of each level's own GP at `x`.
    pub fn own_variances(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.levels.iter().map(|l| Ok(l.gp.predict(x, 1)?.variance)).collect()
    }
}

/// Least-squares slope of `above` on `below` with an intercept; 1 when the
/// regressor has no spread.
fn scale_factor(below: &[f64], above: &[f64]) -> f64 {
    let n = below.len() as f64;
    if below.len() < 2 {
        return 1.0;
    }
    let mb = below.iter().sum::<f64>() / n;
    let ma = above.iter().sum::<f64>() / n;
    let sxx: f64 = below.iter().map(|b| (b - mb) * (b - mb)).sum();
    let sxy: f64 = below.iter().zip(above).map(|(b, a)| (b - mb) * (a - ma)).sum();
    let spread = below.iter().map(|b| b.abs()).fold(0.0, f64::max);
    if !(sxx > 1e-24 * (1.0 + spread * spread) * n) {
        return 1.0;
    }
    sxy / sxx
}

/// SERV per level from cumulative variances, own variances, scale factors
/// and costs (all indexed by level). The bottom level uses its variance alone.
pub fn serv_values(cumulative: &[f64], own: &[f64], rho: &[f64], costs: &[f64], squared: bool) -> Vec<f64> {
    (0..own.len())
        .map(|k| {
            let v = if k == 0 {
                cumulative[0]
            } else {
                let r = if squared { rho[k] * rho[k] } else { rho[k] };
                r * cumulative[k - 1] + own[k]
            };
            v / costs[k]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServChoice {
    /// Index into the chain.
    pub level: usize,
    pub source: usize,
    pub serv: Vec<f64>,
    /// Every SERV was zero; the bottom level was taken.
    pub degenerate: bool,
}

/// Level with the largest SERV at `x`. `costs` is indexed by source label
/// minus one.
pub fn serv_select(model: &CoKrigingModel, x: &[f64], costs: &[f64], squared: bool) -> Result<ServChoice> {
    let chain = model.chain();
    let level_costs: Vec<f64> = chain
        .iter()
        .map(|&s| costs.get(s - 1).copied().ok_or(Error::DimensionMismatch { expected: s, got: costs.len() }))
        .collect::<Result<_>>()?;
    let cumulative: Vec<f64> = model.predict_levels(x)?.iter().map(|p| p.variance).collect();
    let own = model.own_variances(x)?;
    let rho: Vec<f64> = model.levels.iter().map(|l| l.rho).collect();
    let serv = serv_values(&cumulative, &own, &rho, &level_costs, squared);
    let mut best: Option<usize> = None;
    for (k, &v) in serv.iter().enumerate() {
        if !(v > 0.0) {
            continue;
        }
        best = match best {
            None => Some(k),
            Some(b) => {
                let tie = (v - serv[b]).abs() <= TIE_TOLERANCE * v.abs().max(serv[b].abs());
                if (tie && level_costs[k] < level_costs[b]) || (!tie && v > serv[b]) {
                    Some(k)
                } else {
                    Some(b)
                }
            }
        };
    }
    Ok(match best {
        Some(level) => ServChoice { level, source: chain[level], serv, degenerate: false },
        None => ServChoice { level: 0, source: chain[0], serv, degenerate: true },
    })
}

pub(crate) fn run(
    problem: &Problem,
    method: &MethodSpec,
    stop: &StopCriteria,
    seed: u64,
    config: &RunConfig,
) -> Result<RunRecord> {
    let chain = problem.table_hierarchy.clone();
    let doe = generate_nested_doe(problem, seed);
    let mut data = TrainingSet::new(problem.bounds.clone(), problem.n_sources(), problem.hf_label)?;
    for s in &problem.sources {
        for x in doe.for_source(s.label) {
            data.push(x.clone(), s.label, problem.eval_source(s.label, x)?)?;
        }
    }
    let counts = problem.sources.iter().map(|s| doe.for_source(s.label).len()).collect();
    let mut record = initial_record(problem, method, seed, counts);
    let metric = Metric::new(problem, config)?;
    let costs: Vec<f64> = problem.costs().iter().map(|&c| c as f64).collect();
    let fit = |data: &TrainingSet, refit: bool| {
        let mut fc = config.refit_config(refit);
        fc.restarts = fc.restarts.max(1);
        CoKrigingModel::fit(data, &chain, &fc)
    };
    let measure = |m: &CoKrigingModel| metric.rrmse(|x| m.predict(x).map(|p| p.mean));

    let mut model = match fit(&data, false) {
        Ok(m) => m,
        Err(e) => return Ok(fail(record, e)),
    };
    record.iterations.push(IterationRecord {
        iter: 0,
        cum_cost: 0,
        source: None,
        x: None,
        y: None,
        metric: measure(&model)?,
        fallback: false,
        stage1_x: None,
        latent: Vec::new(),
        cascade: Vec::new(),
    });
    let (lower, upper): (Vec<f64>, Vec<f64>) = problem.bounds.iter().copied().unzip();
    let from_unit =
        |u: &[f64]| -> Vec<f64> { u.iter().zip(&lower).zip(&upper).map(|((t, lo), hi)| lo + t * (hi - lo)).collect() };
    let acq = &config.acquisition;
    let q = problem.dim();
    let mut cum_cost = 0u64;
    let mut iter = 0usize;
    loop {
        if let Some(reason) = crate::planner::check_stop(&RunState { iter, cum_cost, y_star: None }, stop, problem) {
            record.status = RunStatus::Completed { reason };
            break;
        }
        let f = |u: &[f64]| model.predict(&from_unit(u)).map_or(f64::NEG_INFINITY, |p| p.variance);
        let modes = find_unit_modes(f, q, acq.mode_starts_for(q), acq.merge_radius, acq.local);
        let Some(best) = modes.best() else {
            return Ok(fail(record, invalid("no acquisition modes found")));
        };
        let x = from_unit(&best.x);
        let choice = serv_select(&model, &x, &costs, config.serv_squared_rho)?;
        let y = problem.eval_source(choice.source, &x)?;
        data.push(x.clone(), choice.source, y)?;
        cum_cost += problem.cost(choice.source)?;
        let mut cascade = Vec::new();
        for &s in chain[..choice.level].iter().rev() {
            if data.has_near(&x, s, 0.0) {
                continue;
            }
            let ys = problem.eval_source(s, &x)?;
            data.push(x.clone(), s, ys)?;
            let cost = problem.cost(s)?;
            cum_cost += cost;
            cascade.push(CascadeQuery { source: s, y: ys, cost });
        }
        iter += 1;
        model = match fit(&data, true) {
            Ok(m) => m,
            Err(e) => return Ok(fail(record, e)),
        };
        record.iterations.push(IterationRecord {
            iter,
            cum_cost,
            source: Some(choice.source),
            x: Some(x.clone()),
            y: Some(y),
            metric: measure(&model)?,
            fallback: choice.degenerate,
            stage1_x: Some(x),
            latent: Vec::new(),
            cascade,
        });
    }
    Ok(record)
}
