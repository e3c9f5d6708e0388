//! Analytic multi-fidelity benchmarks, the RRMSE metric and initial designs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::acquisition::Sense;
use crate::error::{invalid, Error, Result};
use crate::qmc::{maximin_lhs, scale_to_bounds, Sobol};
use crate::seed::{mix, name_hash};

/// Global fitting or Bayesian optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Gf,
    Bo,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Gf => "gf",
            Task::Bo => "bo",
        })
    }
}

/// Built-in analytic functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionId {
    Simple1dHf,
    Simple1dLf1,
    Simple1dLf2,
    /// `1/(x² + x + 2) − 0.1`, kept for comparison with [`FunctionId::Simple1dLf2`].
    Simple1dLf2Printed,
    Simple1dLf3,
    SasenaHf,
    SasenaLf1,
    SasenaLf2,
    BoreholeHf,
    BoreholeLf1,
    BoreholeLf2,
    BoreholeLf3,
    BoreholeLf4,
    WingweightHf,
    WingweightLf1,
    WingweightLf2,
    WingweightLf3,
}

/// Default additive constant of the second Sasena low-fidelity function.
pub const SASENA_LF2_THETA: f64 = 10.3;

impl FunctionId {
    pub const ALL: [FunctionId; 17] = [
        FunctionId::Simple1dHf,
        FunctionId::Simple1dLf1,
        FunctionId::Simple1dLf2,
        FunctionId::Simple1dLf2Printed,
        FunctionId::Simple1dLf3,
        FunctionId::SasenaHf,
        FunctionId::SasenaLf1,
        FunctionId::SasenaLf2,
        FunctionId::BoreholeHf,
        FunctionId::BoreholeLf1,
        FunctionId::BoreholeLf2,
        FunctionId::BoreholeLf3,
        FunctionId::BoreholeLf4,
        FunctionId::WingweightHf,
        FunctionId::WingweightLf1,
        FunctionId::WingweightLf2,
        FunctionId::WingweightLf3,
    ];

    /// Input dimension the function expects.
    pub fn dim(self) -> usize {
        use FunctionId::*;
        match self {
            Simple1dHf | Simple1dLf1 | Simple1dLf2 | Simple1dLf2Printed | Simple1dLf3 => 1,
            SasenaHf | SasenaLf1 | SasenaLf2 => 1,
            BoreholeHf | BoreholeLf1 | BoreholeLf2 | BoreholeLf3 | BoreholeLf4 => 8,
            WingweightHf | WingweightLf1 | WingweightLf2 | WingweightLf3 => 10,
        }
    }

    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
    }

    pub fn parse(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_owned()))
            .map_err(|_| Error::Unknown { kind: "function", name: name.to_owned() })
    }

    /// Evaluate without bounds checks. `theta` only affects `sasena-lf2`.
    pub fn eval(self, x: &[f64], theta: Option<f64>) -> f64 {
        use FunctionId::*;
        match self {
            Simple1dHf => {
                let x = x[0];
                1.0 / (0.1 * x.powi(3) + x * x + x + 1.0)
            }
            Simple1dLf1 => {
                let x = x[0];
                1.0 / (0.2 * x.powi(3) + x * x + x + 1.0) + 0.2
            }
            Simple1dLf2 => {
                let x = x[0];
                1.0 / (x * x + x + 1.0) - 0.1
            }
            Simple1dLf2Printed => {
                let x = x[0];
                1.0 / (x * x + x + 2.0) - 0.1
            }
            Simple1dLf3 => {
                let x = x[0];
                1.0 / (x * x + 1.0)
            }
            SasenaHf => {
                let x = x[0];
                -x.sin() - (x / 10.0).exp() + 10.0
            }
            SasenaLf1 => {
                let x = x[0];
                -(0.95 * x).sin() - (x / 50.0).exp() + 0.03 * (x - 2.0).powi(2) + 10.3
            }
            SasenaLf2 => {
                let x = x[0];
                -(0.8 * x).sin() - (x / 50.0).exp() + 0.03 * (x - 2.0).powi(2) + theta.unwrap_or(SASENA_LF2_THETA)
            }
            BoreholeHf => borehole(x, 1.0, 1.0, 1.0, 1.0, 2.0, 1.0),
            BoreholeLf1 => borehole(x, 1.0, 0.8, 1.0, 1.0, 1.0, 1.0),
            BoreholeLf2 => borehole(x, 1.0, 1.0, 1.0, 1.0, 8.0, 0.75),
            BoreholeLf3 => borehole(x, 1.09, 1.0, 4.0, 1.0, 3.0, 1.0),
            BoreholeLf4 => borehole(x, 1.05, 1.0, 2.0, 1.0, 3.0, 1.0),
            WingweightHf => wing_base(x, 0.758) + x[0] * x[9],
            WingweightLf1 => wing_base(x, 0.758) + x[9],
            WingweightLf2 => wing_base(x, 0.8) + x[9],
            WingweightLf3 => wing_base(x, 0.9),
        }
    }
}

/// Borehole flow rate with the coefficient pattern shared by every fidelity:
/// `2π T_u (a·H_u − b·H_l) / (ln(c·r/r_w) (1 + e·L·T_u / (ln(d·r/r_w) r_w² K_w) + f·T_u/T_l))`.
fn borehole(x: &[f64], a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> f64 {
    let (tu, hu, hl, r, rw, tl, l, kw) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
    let outer = (c * r / rw).ln();
    let inner = (d * r / rw).ln();
    2.0 * PI * tu * (a * hu - b * hl) / (outer * (1.0 + e * l * tu / (inner * rw * rw * kw) + f * tu / tl))
}

/// Wing weight without the paint term; the sweep angle is in degrees.
fn wing_base(x: &[f64], sw_exp: f64) -> f64 {
    let (sw, wfw, a, lam, q, taper, tc, nz, wdg) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8]);
    let c = lam.to_radians().cos();
    0.036
        * sw.powf(sw_exp)
        * wfw.powf(0.0035)
        * (a / (c * c)).powf(0.6)
        * q.powf(0.006)
        * taper.powf(0.04)
        * (100.0 * tc / c).powf(-0.3)
        * (nz * wdg).powf(0.49)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub label: usize,
    pub name: String,
    pub function: FunctionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    pub cost: u64,
    pub init: usize,
}

/// A multi-fidelity problem. Label 1 is always the high-fidelity source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub name: String,
    pub task: Task,
    pub bounds: Vec<(f64, f64)>,
    pub input_names: Vec<String>,
    pub sources: Vec<SourceSpec>,
    pub hf_label: usize,
    pub sense: Sense,
    pub ground_truth: Option<f64>,
    /// Source labels from the lowest to the highest level, as tabulated.
    pub table_hierarchy: Vec<usize>,
    /// Initial sizes per label for nested (CoKriging) designs, if different.
    pub nested_init: Option<Vec<usize>>,
}

pub const BUILTIN_PROBLEMS: [&str; 4] = ["simple1d", "sasena", "borehole", "wingweight"];

impl Problem {
    /// A built-in benchmark by name for the given task.
    pub fn builtin(name: &str, task: Task) -> Result<Self> {
        use FunctionId::*;
        let src = |label: usize, name: &str, function, cost, init| SourceSpec {
            label,
            name: name.to_owned(),
            function,
            theta: None,
            cost,
            init,
        };
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let p = match name {
            "simple1d" => Problem {
                name: name.into(),
                task,
                bounds: vec![(-2.0, 3.0)],
                input_names: names(&["x"]),
                sources: vec![
                    src(1, "HF", Simple1dHf, 100, 2),
                    src(2, "LF1", Simple1dLf1, 10, 5),
                    src(3, "LF2", Simple1dLf2, 10, 5),
                    src(4, "LF3", Simple1dLf3, 10, 5),
                ],
                hf_label: 1,
                sense: Sense::Minimize,
                ground_truth: None,
                table_hierarchy: vec![2, 3, 4, 1],
                nested_init: None,
            },
            "sasena" => Problem {
                name: name.into(),
                task,
                bounds: vec![(0.0, 10.0)],
                input_names: names(&["x"]),
                sources: vec![
                    src(1, "HF", SasenaHf, 1000, 2),
                    src(2, "LF1", SasenaLf1, 1, 5),
                    SourceSpec { theta: Some(SASENA_LF2_THETA), ..src(3, "LF2", SasenaLf2, 1, 5) },
                ],
                hf_label: 1,
                sense: Sense::Minimize,
                ground_truth: Some(6.7802),
                table_hierarchy: vec![2, 3, 1],
                nested_init: None,
            },
            "borehole" => {
                let (costs, init): ([u64; 5], [usize; 5]) = match task {
                    Task::Gf => ([1000, 10, 10, 10, 10], [4, 10, 10, 10, 10]),
                    Task::Bo => ([1000, 100, 10, 100, 10], [5, 5, 25, 5, 25]),
                };
                let ids = [BoreholeHf, BoreholeLf1, BoreholeLf2, BoreholeLf3, BoreholeLf4];
                let labels = ["HF", "LF1", "LF2", "LF3", "LF4"];
                Problem {
                    name: name.into(),
                    task,
                    bounds: vec![
                        (100.0, 1000.0),
                        (990.0, 1110.0),
                        (700.0, 820.0),
                        (100.0, 10000.0),
                        (0.05, 0.15),
                        (10.0, 500.0),
                        (1000.0, 2000.0),
                        (6000.0, 12000.0),
                    ],
                    input_names: names(&["T_u", "H_u", "H_l", "r", "r_w", "T_l", "L", "K_w"]),
                    sources: (0..5).map(|i| src(i + 1, labels[i], ids[i], costs[i], init[i])).collect(),
                    hf_label: 1,
                    sense: Sense::Minimize,
                    ground_truth: Some(3.98),
                    table_hierarchy: vec![2, 3, 4, 5, 1],
                    nested_init: Some(vec![20, 50, 50, 50, 50]),
                }
            }
            "wingweight" => Problem {
                name: name.into(),
                task,
                bounds: vec![
                    (150.0, 200.0),
                    (220.0, 300.0),
                    (6.0, 10.0),
                    (-10.0, 10.0),
                    (16.0, 45.0),
                    (0.5, 1.0),
                    (0.08, 0.18),
                    (2.5, 6.0),
                    (1700.0, 2500.0),
                    (0.025, 0.08),
                ],
                input_names: names(&["s_w", "w_fw", "A", "Lambda", "q", "lambda", "t_c", "N_z", "W_dg", "w_p"]),
                sources: vec![
                    src(1, "HF", WingweightHf, 1000, 5),
                    src(2, "LF1", WingweightLf1, 100, 5),
                    src(3, "LF2", WingweightLf2, 10, 10),
                    src(4, "LF3", WingweightLf3, 1, 50),
                ],
                hf_label: 1,
                sense: Sense::Minimize,
                ground_truth: Some(123.25),
                table_hierarchy: vec![2, 3, 4, 1],
                nested_init: None,
            },
            other => return Err(Error::Unknown { kind: "problem", name: other.to_owned() }),
        };
        Ok(p)
    }

    /// Build and validate a problem from a definition file's contents.
    pub fn from_definition(def: ProblemDefinition) -> Result<Self> {
        if def.sources.is_empty() {
            return Err(Error::Config("a problem needs at least one source".into()));
        }
        let hf_name = def.hf.clone().unwrap_or_else(|| def.sources[0].name.clone());
        let hf_index = def
            .sources
            .iter()
            .position(|s| s.name == hf_name)
            .ok_or_else(|| Error::Config(format!("high-fidelity source `{hf_name}` is not defined")))?;
        let mut order: Vec<usize> = vec![hf_index];
        order.extend((0..def.sources.len()).filter(|&i| i != hf_index));
        let mut sources = Vec::with_capacity(order.len());
        for (k, &i) in order.iter().enumerate() {
            let s = &def.sources[i];
            let function = FunctionId::parse(&s.function)?;
            if s.theta.is_some() && function != FunctionId::SasenaLf2 {
                return Err(Error::Config(format!("source `{}`: theta only applies to sasena-lf2", s.name)));
            }
            sources.push(SourceSpec {
                label: k + 1,
                name: s.name.clone(),
                function,
                theta: s.theta,
                cost: s.cost,
                init: s.init,
            });
        }
        let l = sources.len();
        let mut hierarchy: Vec<usize> = (2..=l).collect();
        hierarchy.push(1);
        let input_names = def.input_names.unwrap_or_else(|| (1..=def.bounds.len()).map(|i| format!("x{i}")).collect());
        let p = Problem {
            name: def.name,
            task: def.task,
            bounds: def.bounds.into_iter().map(|b| (b[0], b[1])).collect(),
            input_names,
            sources,
            hf_label: 1,
            sense: def.sense.unwrap_or_default(),
            ground_truth: def.ground_truth,
            table_hierarchy: hierarchy,
            nested_init: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.bounds.len();
        if q == 0 {
            return Err(Error::Config("a problem needs at least one input".into()));
        }
        if self.input_names.len() != q {
            return Err(Error::Config("one input name per bound is required".into()));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("bounds of input {i} are not an interval")));
            }
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.label != i + 1 {
                return Err(Error::Config("source labels must run 1..=L in order".into()));
            }
            if s.function.dim() != q {
                return Err(Error::Config(format!(
                    "source `{}` uses {} which takes {} inputs, problem has {q}",
                    s.name,
                    s.function.name(),
                    s.function.dim()
                )));
            }
            if s.cost == 0 || s.init == 0 {
                return Err(Error::Config(format!("source `{}` needs a positive cost and initial size", s.name)));
            }
        }
        if self.hf_label == 0 || self.hf_label > self.sources.len() {
            return Err(Error::Config("high-fidelity label out of range".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn source(&self, label: usize) -> Result<&SourceSpec> {
        label
            .checked_sub(1)
            .and_then(|i| self.sources.get(i))
            .ok_or_else(|| invalid(format!("source label {label} outside 1..={}", self.sources.len())))
    }

    pub fn cost(&self, label: usize) -> Result<u64> {
        Ok(self.source(label)?.cost)
    }

    pub fn costs(&self) -> Vec<u64> {
        self.sources.iter().map(|s| s.cost).collect()
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        for (i, (&v, &(lo, hi))) in x.iter().zip(&self.bounds).enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(invalid(format!("input {i} = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Query one source at `x`.
    pub fn eval_source(&self, label: usize, x: &[f64]) -> Result<f64> {
        let s = self.source(label)?;
        self.check_point(x)?;
        Ok(s.function.eval(x, s.theta))
    }

    pub fn eval_hf(&self, x: &[f64]) -> Result<f64> {
        self.eval_source(self.hf_label, x)
    }

    /// The fixed test grid used for every RRMSE on this problem.
    pub fn test_grid(&self, n: usize) -> Vec<Vec<f64>> {
        sobol_points(self.dim(), n, mix(TEST_GRID_SEED, name_hash(&self.name)), &self.bounds)
    }
}

/// Contents of a custom problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDefinition {
    pub name: String,
    #[serde(default = "default_task")]
    pub task: Task,
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub input_names: Option<Vec<String>>,
    /// Name of the high-fidelity source; defaults to the first listed.
    #[serde(default)]
    pub hf: Option<String>,
    #[serde(default)]
    pub sense: Option<Sense>,
    #[serde(default)]
    pub ground_truth: Option<f64>,
    pub sources: Vec<SourceDefinition>,
}

fn default_task() -> Task {
    Task::Gf
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDefinition {
    pub name: String,
    pub function: String,
    #[serde(default)]
    pub theta: Option<f64>,
    pub cost: u64,
    pub init: usize,
}

/// Size of the RRMSE test grid.
pub const TEST_POINTS: usize = 10_000;
const TEST_GRID_SEED: u64 = 0x5EED_7E57_0000_0001;

fn sobol_points(dim: usize, n: usize, seed: u64, bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let mut s = Sobol::scrambled(dim, seed).expect("problem dimension within Sobol limits");
    s.take_points(n).iter().map(|u| scale_to_bounds(u, bounds)).collect()
}

/// `sqrt(Σ(y_c − y_r)² / (n · var(y_r)))` with the population variance.
pub fn rrmse_values(candidate: &[f64], reference: &[f64]) -> Result<f64> {
    if candidate.len() != reference.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), got: candidate.len() });
    }
    let n = reference.len() as f64;
    if reference.is_empty() {
        return Err(Error::UndefinedMetric("empty test set".into()));
    }
    let mean = reference.iter().sum::<f64>() / n;
    let var = reference.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::UndefinedMetric("reference outputs have zero variance".into()));
    }
    let sse: f64 = candidate.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / (n * var)).sqrt())
}

/// RRMSE of `candidate` against `reference` on the problem's fixed test grid.
pub fn rrmse<C, R>(candidate: C, reference: R, problem: &Problem, n_test: usize) -> Result<f64>
where
    C: Fn(&[f64]) -> f64,
    R: Fn(&[f64]) -> f64,
{
    let grid = problem.test_grid(n_test);
    let c: Vec<f64> = grid.iter().map(|x| candidate(x)).collect();
    let r: Vec<f64> = grid.iter().map(|x| reference(x)).collect();
    rrmse_values(&c, &r)
}

/// Published source-vs-HF RRMSE of the built-in benchmarks, by label.
pub fn published_rrmse(name: &str) -> &'static [(usize, f64)] {
    match name {
        "simple1d" => &[(2, 0.6054), (3, 0.3218), (4, 0.7256)],
        "sasena" => &[(2, 2.0544), (3, 1.8060)],
        "borehole" => &[(2, 3.6649), (3, 1.3679), (4, 0.4135), (5, 0.4828)],
        "wingweight" => &[(2, 0.1990), (3, 1.1424), (4, 5.7469)],
        _ => &[],
    }
}

/// RRMSE of every non-HF source against HF, in label order.
pub fn source_rrmse(problem: &Problem, n_test: usize) -> Result<Vec<(usize, f64)>> {
    let grid = problem.test_grid(n_test);
    let hf = problem.source(problem.hf_label)?;
    let reference: Vec<f64> = grid.iter().map(|x| hf.function.eval(x, hf.theta)).collect();
    problem
        .sources
        .iter()
        .filter(|s| s.label != problem.hf_label)
        .map(|s| {
            let c: Vec<f64> = grid.iter().map(|x| s.function.eval(x, s.theta)).collect();
            Ok((s.label, rrmse_values(&c, &reference)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoeGenerator {
    #[default]
    Sobol,
    MaximinLhs,
}

/// Initial design, indexed by source label minus one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoePlan {
    pub points: Vec<Vec<Vec<f64>>>,
    pub generator: DoeGenerator,
    pub seed: u64,
    pub nested: bool,
}

impl DoePlan {
    pub fn for_source(&self, label: usize) -> &[Vec<f64>] {
        &self.points[label - 1]
    }

    pub fn total(&self) -> usize {
        self.points.iter().map(Vec::len).sum()
    }
}

/// Independent scrambled Sobol designs per source.
pub fn generate_doe(problem: &Problem, seed: u64) -> DoePlan {
    generate_doe_with(problem, seed, DoeGenerator::Sobol)
}

pub fn generate_doe_with(problem: &Problem, seed: u64, generator: DoeGenerator) -> DoePlan {
    let points = problem
        .sources
        .iter()
        .map(|s| {
            let sseed = mix(seed, s.label as u64);
            match generator {
                DoeGenerator::Sobol => sobol_points(problem.dim(), s.init, sseed, &problem.bounds),
                DoeGenerator::MaximinLhs => maximin_lhs(s.init, problem.dim(), 50, sseed)
                    .iter()
                    .map(|u| scale_to_bounds(u, &problem.bounds))
                    .collect(),
            }
        })
        .collect();
    DoePlan { points, generator, seed, nested: false }
}

/// Nested design along `table_hierarchy`: every level's set is a prefix of
/// one scrambled Sobol sequence, so higher levels are subsets of lower ones.
/// A level never gets fewer points than any level above it.
pub fn generate_nested_doe(problem: &Problem, seed: u64) -> DoePlan {
    let init: Vec<usize> =
        problem.nested_init.clone().unwrap_or_else(|| problem.sources.iter().map(|s| s.init).collect());
    let chain = &problem.table_hierarchy;
    let mut sizes = vec![0usize; problem.n_sources()];
    let mut running = 0usize;
    for &label in chain.iter().rev() {
        running = running.max(init[label - 1]);
        sizes[label - 1] = running;
    }
    let all = sobol_points(problem.dim(), running, mix(seed, 0xC0C0), &problem.bounds);
    let points = sizes.iter().map(|&n| all[..n].to_vec()).collect();
    DoePlan { points, generator: DoeGenerator::Sobol, seed, nested: true }
}
