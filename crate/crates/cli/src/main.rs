use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use latprompt::agent::AgentVariant;
use latprompt::analysis::{self, StepQuantiles};
use latprompt::driver::{self, RunConfig, RunEnvironment, RunResult, Split};
use latprompt::tasks::{load_task, TaskSpec};

#[derive(Debug, Parser)]
#[command(
    name = "latprompt",
    version,
    about = "Budgeted instruction search in a latent prompt space"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the optimization loop for the full budget.
    Run(RunArgs),
    /// Explore, then re-score the top candidates (`--split p:k`).
    SplitRun(RunArgs),
    /// Score a finished run's best instruction on the task's test split.
    Test(TestArgs),
    /// Summarize finished runs into summary.csv and quantiles.csv.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON file mirroring the run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<PathBuf>,
    #[arg(long)]
    budget: Option<usize>,
    /// Action dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// two-critic, one-critic, no-critic or direct-actor.
    #[arg(long)]
    variant: Option<AgentVariant>,
    /// Re-score the top p candidates k times each.
    #[arg(long, value_name = "P:K")]
    split: Option<Split>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory holding result.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Run directories, each holding result.json and trace.csv.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            RunConfig::from_path(p).with_context(|| format!("reading config {}", p.display()))
        }
        None => Ok(RunConfig::default()),
    }
}

fn load_task_for(config: &RunConfig) -> Result<Option<TaskSpec>> {
    let Some(path) = &config.task else {
        return Ok(None);
    };
    let task = load_task(
        path,
        config.validation_size,
        config.exemplar_count,
        config.seed,
    )
    .with_context(|| format!("loading task {}", path.display()))?;
    Ok(Some(task))
}

fn run(args: RunArgs, split: bool) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(t) = args.task {
        config.task = Some(t);
    }
    if let Some(b) = args.budget {
        config.budget = b;
    }
    if let Some(d) = args.dim {
        config.action_dim = d;
        if let latprompt::driver::EnvironmentConfig::Synthetic { .. } = config.environment {
            log::warn!("--dim does not resize a synthetic landscape; set it in the config");
        }
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(v) = args.variant {
        config.agent.variant = v;
    }
    if let Some(s) = args.split {
        config.split = Some(s);
    }
    if split && config.split.is_none() {
        bail!("split-run needs --split p:k or a split in the config");
    }
    if !split && config.split.is_some() {
        log::warn!("ignoring the configured split; use split-run to re-score candidates");
    }
    config.validate()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let task = load_task_for(&config)?;
    let env = driver::build_environment(&config, task, Some(&args.out))?;
    let result = if split {
        driver::run_with_split(&config, &env, Some(&args.out))?
    } else {
        driver::run_optimization(&config, &env, Some(&args.out))?
    };
    println!(
        "best reward {:.4} at step {}",
        result.best.reward, result.best.step
    );
    if let Some(instruction) = &result.best.instruction {
        println!("best instruction: {instruction}");
    }
    Ok(())
}

fn test(args: TestArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(t) = args.task {
        config.task = Some(t);
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let path = args.out.join("result.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let result: RunResult = serde_json::from_str(&text)?;
    let task = load_task_for(&config)?;
    let env = driver::build_environment(&config, task, None)?;
    let RunEnvironment::Llm(env) = &env else {
        bail!("test scoring needs an instruction environment");
    };
    let score = driver::final_test(&result, env)?;
    println!("test score {score:.4}");
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let mut traces = Vec::new();
    // task -> variant -> best rewards over seeds
    let mut scores: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for dir in &args.runs {
        let path = dir.join("result.json");
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let result: RunResult =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let variant = serde_json::to_value(result.variant)?
            .as_str()
            .unwrap_or_default()
            .to_string();
        scores
            .entry(result.environment.clone())
            .or_default()
            .entry(variant)
            .or_default()
            .push(result.best.reward);
        let trace = dir.join("trace.csv");
        traces.push(
            analysis::read_trace(&trace).with_context(|| format!("reading {}", trace.display()))?,
        );
    }
    let methods: Vec<String> = {
        let mut m: Vec<String> = scores.values().flat_map(|v| v.keys().cloned()).collect();
        m.sort();
        m.dedup();
        m
    };
    let mut table = Vec::new();
    for (task, by_method) in &scores {
        let mut row = Vec::new();
        for m in &methods {
            let runs = by_method
                .get(m)
                .with_context(|| format!("task {task} has no runs for {m}"))?;
            row.push(analysis::median(runs).expect("at least one run"));
        }
        table.push(row);
    }
    let method_refs: Vec<&str> = methods.iter().map(String::as_str).collect();
    let summary = analysis::summarize(&method_refs, &table)?;
    let quantiles: Vec<StepQuantiles> = analysis::aggregate_traces(&traces)?;
    fs::create_dir_all(&args.out)?;
    analysis::write_summary(&args.out.join("summary.csv"), &summary)?;
    analysis::write_quantiles(&args.out.join("quantiles.csv"), &quantiles)?;
    for s in &summary {
        println!(
            "{}: median {:.4}, best on {} task(s)",
            s.method, s.median, s.best_count
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a, false),
        Command::SplitRun(a) => run(a, true),
        Command::Test(a) => test(a),
        Command::Analyze(a) => analyze(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
