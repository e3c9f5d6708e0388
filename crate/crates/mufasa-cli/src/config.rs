//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mufasa::acquisition::AcquisitionConfig;
use mufasa::planner::{MethodSpec, RunConfig, StopCriteria, Variant};
use mufasa::preposterior::SigmaDivisor;
use mufasa::problems::{DoeGenerator, Problem, ProblemDefinition, Task};

/// One experiment: a problem, the methods to compare and how many paired
/// replicates to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in problem name; exclusive with `problem_file`.
    #[serde(default)]
    pub problem: Option<String>,
    /// Custom problem definition (TOML), relative to the config file.
    #[serde(default)]
    pub problem_file: Option<PathBuf>,
    pub task: Task,
    pub methods: Vec<String>,
    /// Stop bounds; the built-in preset for the problem when omitted.
    #[serde(default)]
    pub stop: Option<StopCriteria>,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Replicates run at once.
    #[serde(default = "one")]
    pub parallel: usize,
    #[serde(default)]
    pub settings: Settings,
}

fn one() -> usize {
    1
}

/// Optional numerical settings; anything left out keeps the library default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    pub restarts: Option<usize>,
    pub refit_restarts: Option<usize>,
    pub warm_start: Option<bool>,
    pub mode_starts: Option<usize>,
    pub screen: Option<usize>,
    pub test_points: Option<usize>,
    pub mfca_tau: Option<f64>,
    pub serv_squared_rho: Option<bool>,
    pub sigma_divisor: Option<SigmaDivisor>,
    pub doe: Option<DoeGenerator>,
}

impl Settings {
    pub fn run_config(&self) -> RunConfig {
        let mut c = RunConfig::default();
        let mut acq = AcquisitionConfig { mode_starts: self.mode_starts, screen: self.screen, ..c.acquisition.clone() };
        if let Some(d) = self.sigma_divisor {
            acq.divisor = d;
        }
        c.acquisition = acq;
        if let Some(r) = self.restarts {
            c.fit.restarts = r;
        }
        c.refit_restarts = self.refit_restarts;
        if let Some(w) = self.warm_start {
            c.warm_start = w;
        }
        if let Some(n) = self.test_points {
            c.test_points = n;
        }
        if let Some(t) = self.mfca_tau {
            c.mfca_tau = t;
        }
        if let Some(s) = self.serv_squared_rho {
            c.serv_squared_rho = s;
        }
        if let Some(d) = self.doe {
            c.doe = d;
        }
        c
    }
}

/// A config with every reference resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub problem: Problem,
    pub methods: Vec<MethodSpec>,
    pub stop: StopCriteria,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut c: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let (Some(f), Some(dir)) = (&c.problem_file, path.parent()) {
            if f.is_relative() {
                c.problem_file = Some(dir.join(f));
            }
        }
        Ok(c)
    }

    pub fn resolve(self) -> Result<Resolved> {
        let problem = match (&self.problem, &self.problem_file) {
            (Some(name), None) => Problem::builtin(name, self.task)?,
            (None, Some(file)) => load_problem(file, self.task)?,
            _ => bail!("set exactly one of `problem` and `problem_file`"),
        };
        if self.replicates == 0 {
            bail!("replicates must be at least 1");
        }
        if self.parallel == 0 {
            bail!("parallel must be at least 1");
        }
        if self.methods.is_empty() {
            bail!("no methods listed");
        }
        let methods = self
            .methods
            .iter()
            .map(|m| Ok(MethodSpec::with_sense(Variant::parse(m)?, self.task, problem.sense)?))
            .collect::<Result<Vec<_>>>()?;
        let stop = match self.stop {
            Some(s) => s,
            None => StopCriteria::preset(&problem.name, self.task)
                .context("no stop criteria given and the problem has no preset")?,
        };
        stop.validate()?;
        let run = self.settings.run_config();
        Ok(Resolved { config: self, problem, methods, stop, run })
    }
}

pub fn load_problem(path: &Path, task: Task) -> Result<Problem> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let def: ProblemDefinition = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if def.task != task {
        bail!("problem file is for {} but the experiment is {}", def.task, task);
    }
    Ok(Problem::from_definition(def)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_preset() {
        let c: ExperimentConfig = toml::from_str(
            r#"
            problem = "simple1d"
            task = "gf"
            methods = ["sfgp", "mufasa-beta"]
            "#,
        )
        .unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.stop.max_iters, Some(20));
        assert_eq!(r.methods.len(), 2);
        assert_eq!(r.config.replicates, 1);
    }

    #[test]
    fn rejects_bad_method_and_unknown_keys() {
        let c: ExperimentConfig =
            toml::from_str("problem = \"sasena\"\ntask = \"bo\"\nmethods = [\"mufasa-beta\"]\n").unwrap();
        assert!(c.resolve().is_err());
        assert!(
            toml::from_str::<ExperimentConfig>("problem = \"x\"\ntask = \"bo\"\nmethods = []\ncolour = 1\n").is_err()
        );
    }

    #[test]
    fn settings_reach_run_config() {
        let s = Settings {
            restarts: Some(3),
            screen: Some(64),
            sigma_divisor: Some(SigmaDivisor::Augmented),
            ..Default::default()
        };
        let c = s.run_config();
        assert_eq!(c.fit.restarts, 3);
        assert_eq!(c.acquisition.screen, Some(64));
        assert_eq!(c.acquisition.divisor, SigmaDivisor::Augmented);
    }
}
