mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use mufasa::planner::run_replicates;
use mufasa::problems::{published_rrmse, source_rrmse, Problem, Task, BUILTIN_PROBLEMS, TEST_POINTS};

use config::ExperimentConfig;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

/// Multi-fidelity sequential sampling experiments.
#[derive(Debug, Parser)]
#[command(name = "mufasa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every method for every replicate and write traces and a summary.
    Run(RunArgs),
    /// Print each low-fidelity source's RRMSE against the high-fidelity source.
    RrmseTable(RrmseArgs),
    /// Export the latent coordinates stored in a JSON trace as CSV.
    LatentDump(LatentArgs),
    /// List the built-in problems.
    ListProblems,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in problem, when no config file is given.
    #[arg(long, conflicts_with = "config")]
    problem: Option<String>,
    #[arg(long, value_parser = parse_task, conflicts_with = "config")]
    task: Option<Task>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',', conflicts_with = "config")]
    methods: Vec<String>,
    /// Output directory. Defaults to `<MUFASA_OUT>/<problem>_<task>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Replicates run at once.
    #[arg(long)]
    parallel: Option<usize>,
    /// Override the stop rule with an iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Debug, Args)]
struct RrmseArgs {
    /// Built-in problem name or path to a problem file.
    problem: String,
    #[arg(long, value_parser = parse_task, default_value = "gf")]
    task: Task,
    #[arg(long, default_value_t = TEST_POINTS)]
    test_points: usize,
}

#[derive(Debug, Args)]
struct LatentArgs {
    /// JSON trace written by `run`.
    trace: PathBuf,
    /// Write here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s.to_ascii_lowercase().as_str() {
        "gf" => Ok(Task::Gf),
        "bo" => Ok(Task::Bo),
        _ => Err(format!("unknown task `{s}` (expected gf or bo)")),
    }
}

/// Failure classes, each with its own exit code.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::RrmseTable(args) => cmd_rrmse_table(args).map(|_| ExitCode::SUCCESS),
        Command::LatentDump(args) => cmd_latent_dump(args).map(|_| ExitCode::SUCCESS),
        Command::ListProblems => cmd_list_problems().map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn experiment(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut c = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let problem = args.problem.clone().context("give --config or --problem")?;
            let task = args.task.context("--task is required with --problem")?;
            ExperimentConfig {
                problem: Some(problem),
                problem_file: None,
                task,
                methods: args.methods.clone(),
                stop: None,
                replicates: 1,
                seed: 0,
                out: None,
                parallel: 1,
                settings: Default::default(),
            }
        }
    };
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(r) = args.replicates {
        c.replicates = r;
    }
    if let Some(p) = args.parallel {
        c.parallel = p;
    }
    if let Some(o) = &args.out {
        c.out = Some(o.clone());
    }
    if let Some(k) = args.max_iters {
        c.stop = Some(mufasa::planner::StopCriteria { max_iters: Some(k), max_infill_cost: None, bo_rel_error: None });
    }
    Ok(c)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Failure> {
    let resolved = experiment(&args).and_then(ExperimentConfig::resolve).config()?;
    let out = match &resolved.config.out {
        Some(o) => o.clone(),
        None => {
            let root = std::env::var_os("MUFASA_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(format!("{}_{}", resolved.problem.name, resolved.problem.task))
        }
    };
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display())).config()?;

    let mut run = resolved.run.clone();
    run.parallel = resolved.config.parallel > 1;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(resolved.config.parallel).build().runtime()?;
    let records = pool
        .install(|| {
            run_replicates(
                &resolved.problem,
                &resolved.methods,
                &resolved.stop,
                resolved.config.replicates,
                resolved.config.seed,
                &run,
            )
        })
        .map_err(|e| match e {
            mufasa::Error::Config(_) => Failure::Config(e.into()),
            _ => Failure::Runtime(e.into()),
        })?;
    let failed = output::write_all(&out, &resolved, &records).runtime()?;
    eprintln!("wrote {} traces to {}", records.len(), out.display());
    if failed > 0 {
        eprintln!("{failed} of {} runs failed; see manifest.json", records.len());
        return Ok(ExitCode::from(EXIT_PARTIAL));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_rrmse_table(args: RrmseArgs) -> Result<(), Failure> {
    let problem = if BUILTIN_PROBLEMS.contains(&args.problem.as_str()) {
        Problem::builtin(&args.problem, args.task).config()?
    } else {
        config::load_problem(args.problem.as_ref(), args.task).config()?
    };
    let values = source_rrmse(&problem, args.test_points).runtime()?;
    let published =
        if BUILTIN_PROBLEMS.contains(&problem.name.as_str()) { published_rrmse(&problem.name) } else { &[] };
    println!("{:<6} {:<16} {:>10} {:>10} {:>10}", "label", "source", "rrmse", "published", "deviation");
    for (label, v) in values {
        let name = &problem.source(label).runtime()?.name;
        match published.iter().find(|(l, _)| *l == label) {
            Some(&(_, p)) => println!("{label:<6} {name:<16} {v:>10.4} {p:>10.4} {:>9.2}%", 100.0 * (v - p) / p),
            None => println!("{label:<6} {name:<16} {v:>10.4} {:>10} {:>10}", "-", "-"),
        }
    }
    Ok(())
}

fn cmd_latent_dump(args: LatentArgs) -> Result<(), Failure> {
    let text =
        std::fs::read_to_string(&args.trace).with_context(|| format!("reading {}", args.trace.display())).runtime()?;
    let record = mufasa::planner::RunRecord::from_json(&text).runtime()?;
    match args.output {
        Some(path) => {
            let file =
                std::fs::File::create(&path).with_context(|| format!("creating {}", path.display())).runtime()?;
            output::write_latent(&record, file).runtime()
        }
        None => output::write_latent(&record, std::io::stdout().lock()).runtime(),
    }
}

fn cmd_list_problems() -> Result<(), Failure> {
    println!("{:<12} {:<5} {:>4} {:>8}  {:<24} initial", "problem", "task", "dim", "sources", "costs");
    for name in BUILTIN_PROBLEMS {
        for task in [Task::Gf, Task::Bo] {
            let Ok(p) = Problem::builtin(name, task) else { continue };
            let costs: Vec<String> = p.costs().iter().map(u64::to_string).collect();
            let init: Vec<String> = p.sources.iter().map(|s| s.init.to_string()).collect();
            println!(
                "{name:<12} {task:<5} {:>4} {:>8}  {:<24} {}",
                p.dim(),
                p.n_sources(),
                costs.join("/"),
                init.join("/")
            );
        }
    }
    Ok(())
}
