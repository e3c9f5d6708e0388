//! Sequential infill loop: fit, pick a location of interest, pick the
//! sample, query the source, repeat until a stop bound is hit.

mod record;

pub use record::{
    median, read_trace_csv, summarize, CascadeQuery, CsvRow, IterationRecord, MethodSummary, RunRecord, RunStatus,
    StopReason, CSV_HEAD, CSV_TAIL,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    incumbent, select_stage1, select_stage2, AcquisitionConfig, AcquisitionSpec, Sense, Stage1, Stage2, Stage2Objective,
};
use crate::baselines::{cokriging, mfca};
use crate::error::{Error, Result};
use crate::lvgp::{FitConfig, FittedLvgp, Hyperparameters, TrainingSet};
use crate::problems::{generate_doe_with, DoeGenerator, Problem, Task, TEST_POINTS};
use crate::seed::{mix, name_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Sfgp,
    MfLvgpHf,
    MufasaAlpha,
    MufasaBeta,
    MufasaA,
    MufasaM,
    CokrigingServ,
    Mfca,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Sfgp,
        Variant::MfLvgpHf,
        Variant::MufasaAlpha,
        Variant::MufasaBeta,
        Variant::MufasaA,
        Variant::MufasaM,
        Variant::CokrigingServ,
        Variant::Mfca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sfgp => "sfgp",
            Variant::MfLvgpHf => "mf-lvgp-hf",
            Variant::MufasaAlpha => "mufasa-alpha",
            Variant::MufasaBeta => "mufasa-beta",
            Variant::MufasaA => "mufasa-a",
            Variant::MufasaM => "mufasa-m",
            Variant::CokrigingServ => "cokriging-serv",
            Variant::Mfca => "mfca",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::Unknown { kind: "method", name: name.to_owned() })
    }

    /// Tasks the variant is defined for.
    pub fn supports(self, task: Task) -> bool {
        use Variant::*;
        match task {
            Task::Gf => matches!(self, Sfgp | MfLvgpHf | MufasaAlpha | MufasaBeta | CokrigingServ),
            Task::Bo => matches!(self, Sfgp | MfLvgpHf | MufasaA | MufasaM | Mfca),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A method applied to a task. Baselines carry no acquisition spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub variant: Variant,
    pub task: Task,
    pub acquisition: Option<AcquisitionSpec>,
}

impl MethodSpec {
    pub fn new(variant: Variant, task: Task) -> Result<Self> {
        Self::with_sense(variant, task, Sense::Minimize)
    }

    pub fn with_sense(variant: Variant, task: Task, sense: Sense) -> Result<Self> {
        if !variant.supports(task) {
            return Err(Error::Config(format!("method {variant} is not defined for {task}")));
        }
        use Variant::*;
        let stages = match variant {
            Sfgp | MfLvgpHf => Some((if task == Task::Gf { Stage1::Mmse } else { Stage1::Ei }, Stage2::None)),
            MufasaAlpha => Some((Stage1::Mmse, Stage2::DeltaMsePerCost)),
            MufasaBeta => Some((Stage1::MmseShuffle, Stage2::DeltaMsePerCost)),
            MufasaA => Some((Stage1::Ei, Stage2::DeltaAfPerCost)),
            MufasaM => Some((Stage1::Ei, Stage2::DeltaMsePerCost)),
            CokrigingServ | Mfca => None,
        };
        let acquisition = stages.map(|(s1, s2)| AcquisitionSpec::new(s1, s2, sense)).transpose()?;
        Ok(Self { variant, task, acquisition })
    }

    pub fn name(&self) -> &'static str {
        self.variant.name()
    }
}

/// Stop bounds; a run stops as soon as any set bound is reached.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopCriteria {
    #[serde(default)]
    pub max_iters: Option<usize>,
    /// Cumulative infill cost; the initial design is not charged.
    #[serde(default)]
    pub max_infill_cost: Option<u64>,
    /// Relative error of the best observed HF output against the known optimum.
    #[serde(default)]
    pub bo_rel_error: Option<f64>,
}

impl StopCriteria {
    /// Terminating conditions used for the built-in case studies.
    pub fn preset(problem: &str, task: Task) -> Result<Self> {
        let s = |it, cost, rel| Self { max_iters: it, max_infill_cost: Some(cost), bo_rel_error: rel };
        Ok(match (problem, task) {
            ("simple1d", Task::Gf) => s(Some(20), 600, None),
            ("sasena", Task::Bo) => s(None, 7000, Some(0.02)),
            ("borehole", Task::Gf) => s(Some(150), 8000, None),
            ("borehole", Task::Bo) => s(Some(200), 20_000, None),
            ("wingweight", Task::Gf) => s(Some(150), 20_000, None),
            ("wingweight", Task::Bo) => s(Some(200), 20_000, None),
            _ => return Err(Error::Config(format!("no preset stop criteria for {problem} ({task})"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters.is_none() && self.max_infill_cost.is_none() && self.bo_rel_error.is_none() {
            return Err(Error::Config("at least one stop bound must be set".into()));
        }
        if let Some(r) = self.bo_rel_error {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Config("bo_rel_error must be a nonnegative fraction".into()));
            }
        }
        Ok(())
    }
}

/// What the stop check looks at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunState {
    pub iter: usize,
    pub cum_cost: u64,
    pub y_star: Option<f64>,
}

/// Which bound, if any, the state has reached. Convergence is reported ahead
/// of the budget bounds when several hold at once.
pub fn check_stop(state: &RunState, stop: &StopCriteria, problem: &Problem) -> Option<StopReason> {
    if let (Some(rel), Some(gt), Some(y), Task::Bo) =
        (stop.bo_rel_error, problem.ground_truth, state.y_star, problem.task)
    {
        if ((y - gt) / gt).abs() <= rel {
            return Some(StopReason::Converged);
        }
    }
    if stop.max_iters.is_some_and(|m| state.iter >= m) {
        return Some(StopReason::Iterations);
    }
    if stop.max_infill_cost.is_some_and(|c| state.cum_cost >= c) {
        return Some(StopReason::Cost);
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub acquisition: AcquisitionConfig,
    /// Start one restart of each refit from the previous optimum.
    pub warm_start: bool,
    /// Cold restarts for refits during the loop; `None` keeps `fit.restarts`.
    pub refit_restarts: Option<usize>,
    pub test_points: usize,
    pub doe: DoeGenerator,
    /// Latent-distance multiple of the median beyond which MFCA drops a source.
    pub mfca_tau: f64,
    /// Square the scale factor in SERV; `false` uses it unsquared.
    pub serv_squared_rho: bool,
    /// Normalized distance under which a query duplicates an existing row.
    pub duplicate_tol: f64,
    pub duplicate_retries: usize,
    /// Run replicates concurrently.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            acquisition: AcquisitionConfig::default(),
            warm_start: true,
            refit_restarts: None,
            test_points: TEST_POINTS,
            doe: DoeGenerator::Sobol,
            mfca_tau: 2.5,
            serv_squared_rho: true,
            duplicate_tol: 1e-6,
            duplicate_retries: 3,
            parallel: true,
        }
    }
}

impl RunConfig {
    /// Fit settings for the initial fit or for a refit inside the loop.
    pub fn refit_config(&self, refit: bool) -> FitConfig {
        let mut fc = self.fit.clone();
        if let (true, Some(k)) = (refit, self.refit_restarts) {
            fc.restarts = k;
        }
        if fc.restarts == 0 && !(refit && self.warm_start) {
            fc.restarts = 1;
        }
        fc
    }
}

/// Seed of replicate `r`, shared by every method so designs are paired.
pub fn replicate_seed(base_seed: u64, replicate: usize) -> u64 {
    mix(base_seed, replicate as u64)
}

/// Seed of the method's own random stream within a run.
pub fn method_seed(run_seed: u64, variant: Variant) -> u64 {
    mix(run_seed, name_hash(variant.name()))
}

/// HF reference values on the problem's test grid, computed once per run.
pub(crate) struct Metric {
    grid: Vec<Vec<f64>>,
    reference: Vec<f64>,
}

impl Metric {
    pub(crate) fn new(problem: &Problem, config: &RunConfig) -> Result<Self> {
        if problem.task == Task::Bo {
            return Ok(Self { grid: Vec::new(), reference: Vec::new() });
        }
        let grid = problem.test_grid(config.test_points);
        let reference = grid.iter().map(|x| problem.eval_hf(x)).collect::<Result<_>>()?;
        Ok(Self { grid, reference })
    }

    /// RRMSE of an HF predictor on the grid.
    pub(crate) fn rrmse<F: Fn(&[f64]) -> Result<f64>>(&self, predict: F) -> Result<f64> {
        let c: Vec<f64> = self.grid.iter().map(|x| predict(x)).collect::<Result<_>>()?;
        crate::problems::rrmse_values(&c, &self.reference)
    }
}

/// Best observed output of `source` under `sense`.
pub(crate) fn observed_best(data: &TrainingSet, source: usize, sense: Sense) -> Option<f64> {
    data.sources.iter().zip(&data.outputs).filter(|(&s, _)| s == source).map(|(_, &y)| y).fold(None, |acc, y| match acc
    {
        Some(b) if !sense.better(y, b) => Some(b),
        _ => Some(y),
    })
}

pub(crate) fn initial_record(problem: &Problem, method: &MethodSpec, seed: u64, counts: Vec<usize>) -> RunRecord {
    RunRecord {
        problem: problem.name.clone(),
        task: problem.task,
        method: method.name().to_owned(),
        seed,
        n_sources: problem.n_sources(),
        hf_label: problem.hf_label,
        dim: problem.dim(),
        initial_counts: counts,
        iterations: Vec::new(),
        excluded_sources: Vec::new(),
        status: RunStatus::Completed { reason: StopReason::Iterations },
    }
}

pub(crate) fn fail(mut record: RunRecord, error: Error) -> RunRecord {
    record.status = RunStatus::Failed { error: error.to_string() };
    record
}

/// Run one method on one problem from the design seeded by `seed`.
///
/// Invalid inputs are errors. A refit that fails after the jitter ladder ends
/// the run early with a `Failed` status and the iterations completed so far.
pub fn run(
    problem: &Problem,
    method: &MethodSpec,
    stop: &StopCriteria,
    seed: u64,
    config: &RunConfig,
) -> Result<RunRecord> {
    problem.validate()?;
    stop.validate()?;
    check_method(problem, method)?;
    match method.variant {
        Variant::CokrigingServ => cokriging::run(problem, method, stop, seed, config),
        _ => run_lvgp(problem, method, stop, seed, config),
    }
}

fn check_method(problem: &Problem, method: &MethodSpec) -> Result<()> {
    if method.task != problem.task {
        return Err(Error::Config(format!("method is set up for {} but the problem is {}", method.task, problem.task)));
    }
    if !method.variant.supports(problem.task) {
        return Err(Error::Config(format!("method {} is not defined for {}", method.variant, problem.task)));
    }
    if method.variant == Variant::MufasaA && problem.dim() > 2 {
        return Err(Error::Config(format!("{} is limited to problems with at most 2 inputs", method.variant)));
    }
    Ok(())
}

/// What the next query is and why.
struct Query {
    x: Vec<f64>,
    source: usize,
    fallback: bool,
    stage1_x: Option<Vec<f64>>,
}

fn run_lvgp(
    problem: &Problem,
    method: &MethodSpec,
    stop: &StopCriteria,
    seed: u64,
    config: &RunConfig,
) -> Result<RunRecord> {
    let hf = problem.hf_label;
    let single = method.variant == Variant::Sfgp;
    let doe = generate_doe_with(problem, seed, config.doe);
    let mut data = TrainingSet::new(problem.bounds.clone(), problem.n_sources(), hf)?;
    let mut counts = vec![0; problem.n_sources()];
    for s in &problem.sources {
        if single && s.label != hf {
            continue;
        }
        for x in doe.for_source(s.label) {
            data.push(x.clone(), s.label, problem.eval_source(s.label, x)?)?;
        }
        counts[s.label - 1] = s.init;
    }
    let metric = Metric::new(problem, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(method_seed(seed, method.variant));
    let mut record = initial_record(problem, method, seed, counts);
    let costs: Vec<f64> = problem.costs().iter().map(|&c| c as f64).collect();

    let fit = |data: &TrainingSet, warm: Option<Hyperparameters>| -> Result<FittedLvgp> {
        let mut fc = config.refit_config(warm.is_some());
        if config.warm_start {
            fc.warm_start = warm;
        }
        if single {
            FittedLvgp::fit(&data.only_source(hf)?, &fc)
        } else {
            FittedLvgp::fit(data, &fc)
        }
    };
    let measure = |model: &FittedLvgp, data: &TrainingSet| -> Result<f64> {
        match problem.task {
            Task::Gf => metric.rrmse(|x| model.predict_mean(x, model.hf_label())),
            Task::Bo => {
                observed_best(data, hf, problem.sense).ok_or_else(|| crate::error::invalid("no HF observations"))
            }
        }
    };
    let latent = |model: &FittedLvgp| if single { Vec::new() } else { model.latent().to_vec() };

    let mut model = match fit(&data, None) {
        Ok(m) => m,
        Err(e) => return Ok(fail(record, e)),
    };
    let excluded =
        if method.variant == Variant::Mfca { mfca::mfca_exclude(&model, config.mfca_tau) } else { Vec::new() };
    record.excluded_sources = excluded.clone();
    record.iterations.push(IterationRecord {
        iter: 0,
        cum_cost: 0,
        source: None,
        x: None,
        y: None,
        metric: measure(&model, &data)?,
        fallback: false,
        stage1_x: None,
        latent: latent(&model),
        cascade: Vec::new(),
    });

    let mut cum_cost = 0u64;
    let mut iter = 0usize;
    loop {
        let state = RunState {
            iter,
            cum_cost,
            y_star: (problem.task == Task::Bo).then(|| record.iterations.last().map(|r| r.metric)).flatten(),
        };
        if let Some(reason) = check_stop(&state, stop, problem) {
            record.status = RunStatus::Completed { reason };
            break;
        }
        let query = match select(&model, method, problem, &costs, &excluded, &data, config, &mut rng) {
            Ok(q) => q,
            Err(e) => return Ok(fail(record, e)),
        };
        let y = problem.eval_source(query.source, &query.x)?;
        data.push(query.x.clone(), query.source, y)?;
        cum_cost += problem.cost(query.source)?;
        iter += 1;
        model = match fit(&data, Some(model.hyperparameters())) {
            Ok(m) => m,
            Err(e) => return Ok(fail(record, e)),
        };
        record.iterations.push(IterationRecord {
            iter,
            cum_cost,
            source: Some(query.source),
            x: Some(query.x),
            y: Some(y),
            metric: measure(&model, &data)?,
            fallback: query.fallback,
            stage1_x: query.stage1_x,
            latent: latent(&model),
            cascade: Vec::new(),
        });
    }
    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn select(
    model: &FittedLvgp,
    method: &MethodSpec,
    problem: &Problem,
    costs: &[f64],
    excluded: &[usize],
    data: &TrainingSet,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Query> {
    let hf = problem.hf_label;
    let duplicate = |x: &[f64], s: usize| data.has_near(x, s, config.duplicate_tol);
    if method.variant == Variant::Mfca {
        let mut avoid: Vec<(Vec<f64>, usize)> = Vec::new();
        loop {
            let c = mfca::mfca_step(model, costs, excluded, problem.sense, &config.acquisition, &avoid)?;
            if !duplicate(&c.x, c.source) || avoid.len() >= config.duplicate_retries {
                return Ok(Query { x: c.x, source: c.source, fallback: false, stage1_x: None });
            }
            avoid.push((c.x, c.source));
        }
    }
    let spec = method.acquisition.ok_or_else(|| Error::Config("method has no acquisition".into()))?;
    let s1 = select_stage1(model, &spec, &config.acquisition, rng)?;
    let objective = match spec.stage2 {
        Stage2::None => {
            // single-source model labels the HF source 1
            return Ok(Query { x: s1.x.clone(), source: hf, fallback: false, stage1_x: Some(s1.x) });
        }
        Stage2::DeltaMsePerCost => Stage2Objective::DeltaMse,
        Stage2::DeltaAfPerCost => Stage2Objective::DeltaEi {
            y_star: incumbent(model, spec.sense).ok_or_else(|| crate::error::invalid("no HF observations"))?,
            sense: spec.sense,
        },
    };
    let mut avoid: Vec<(Vec<f64>, usize)> = Vec::new();
    loop {
        let c = select_stage2(model, &s1.x, objective, costs, &config.acquisition, &avoid)?;
        if !duplicate(&c.x, c.source) || avoid.len() >= config.duplicate_retries {
            return Ok(Query { x: c.x, source: c.source, fallback: c.fallback, stage1_x: Some(s1.x) });
        }
        avoid.push((c.x, c.source));
    }
}

/// Every method over `n_replicates` paired designs. Replicate `r` of every
/// method starts from the design seeded by [`replicate_seed`]`(base_seed, r)`.
/// A replicate that errors is returned as a `Failed` record.
pub fn run_replicates(
    problem: &Problem,
    methods: &[MethodSpec],
    stop: &StopCriteria,
    n_replicates: usize,
    base_seed: u64,
    config: &RunConfig,
) -> Result<Vec<RunRecord>> {
    if n_replicates == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    problem.validate()?;
    stop.validate()?;
    for m in methods {
        check_method(problem, m)?;
    }
    let jobs: Vec<(MethodSpec, u64)> =
        methods.iter().flat_map(|m| (0..n_replicates).map(move |r| (*m, replicate_seed(base_seed, r)))).collect();
    let one = |&(m, seed): &(MethodSpec, u64)| {
        run(problem, &m, stop, seed, config).unwrap_or_else(|e| {
            fail(initial_record(problem, &m, seed, problem.sources.iter().map(|s| s.init).collect()), e)
        })
    };
    Ok(if config.parallel { jobs.par_iter().map(one).collect() } else { jobs.iter().map(one).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_reasons() {
        let p = Problem::builtin("simple1d", Task::Gf).unwrap();
        let stop = StopCriteria::preset("simple1d", Task::Gf).unwrap();
        let st = |iter, cum_cost| RunState { iter, cum_cost, y_star: None };
        assert_eq!(check_stop(&st(5, 600), &stop, &p), Some(StopReason::Cost));
        assert_eq!(check_stop(&st(19, 300), &stop, &p), None);
        assert_eq!(check_stop(&st(20, 300), &stop, &p), Some(StopReason::Iterations));

        let p = Problem::builtin("sasena", Task::Bo).unwrap();
        let stop = StopCriteria::preset("sasena", Task::Bo).unwrap();
        let st = |y| RunState { iter: 3, cum_cost: 10, y_star: Some(y) };
        assert_eq!(check_stop(&st(6.9), &stop, &p), Some(StopReason::Converged));
        assert_eq!(check_stop(&st(7.1), &stop, &p), None);
    }

    #[test]
    fn variant_task_pairs() {
        assert!(MethodSpec::new(Variant::MufasaBeta, Task::Bo).is_err());
        assert!(MethodSpec::new(Variant::MufasaM, Task::Gf).is_err());
        assert!(MethodSpec::new(Variant::Mfca, Task::Gf).is_err());
        let m = MethodSpec::new(Variant::MufasaA, Task::Bo).unwrap();
        assert_eq!(m.acquisition.unwrap().stage2, Stage2::DeltaAfPerCost);
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
    }

    #[test]
    fn empty_stop_is_rejected() {
        assert!(StopCriteria::default().validate().is_err());
    }
}
