//! The optimization loop: propose an action, score it, train on the reward,
//! and keep the best candidate. Optionally spends the tail of the budget
//! re-scoring the top candidates.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, AgentError, AgentVariant, Diagnostics};
use crate::env::{EnvError, Environment, Evaluation, LandscapeConfig, SyntheticLandscape};
use crate::llm::{
    AuditLog, BlackBox, BlackBoxConfig, DecoderConfig, LlmEnvironment, LlmEnvironmentConfig,
    LlmError, PhraseGrammar, PromptTemplates,
};
use crate::tasks::{TaskError, TaskSpec};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("environment failed at step {step}: {source}")]
    Environment { step: u64, source: EnvError },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DriverError>;

fn default_fan_out() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvironmentConfig {
    Synthetic {
        landscape: LandscapeConfig,
    },
    Llm {
        decoder: DecoderConfig,
        blackbox: BlackBoxConfig,
        #[serde(default)]
        templates: PromptTemplates,
        #[serde(default = "default_fan_out")]
        fan_out: usize,
        #[serde(default)]
        memoize: bool,
    },
    /// Mock decoder with a mock black box; no network access.
    MockLlm {
        #[serde(default)]
        grammar: Option<PhraseGrammar>,
        #[serde(default)]
        blackbox: BlackBoxConfig,
        #[serde(default)]
        templates: PromptTemplates,
    },
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig::Synthetic {
            landscape: LandscapeConfig::GaussianBump {
                optimum: vec![0.7; 10],
                width: 0.25,
                seed: 0,
            },
        }
    }
}

/// Top-`p` candidates re-scored `k` times each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub p: usize,
    pub k: usize,
}

impl std::str::FromStr for Split {
    type Err = DriverError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || DriverError::Config(format!("split `{s}` is not of the form p:k"));
        let (p, k) = s.split_once(':').ok_or_else(bad)?;
        Ok(Split {
            p: p.trim().parse().map_err(|_| bad())?,
            k: k.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Total reward evaluations, including re-scoring in split mode.
    pub budget: usize,
    pub action_dim: usize,
    pub n_tokens: usize,
    pub token_width: usize,
    pub exemplar_count: usize,
    /// Validation pairs per reward evaluation.
    pub validation_size: usize,
    pub seed: u64,
    pub agent: AgentConfig,
    pub environment: EnvironmentConfig,
    pub split: Option<Split>,
    /// Re-scoring draws a fresh validation subsample each time.
    pub resample_reevaluation: bool,
    pub task: Option<PathBuf>,
    /// Write raw endpoint exchanges to `audit.jsonl` in the output directory.
    pub audit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            budget: 165,
            action_dim: 10,
            n_tokens: 5,
            token_width: 5120,
            exemplar_count: crate::tasks::DEFAULT_EXEMPLARS,
            validation_size: 20,
            seed: 0,
            agent: AgentConfig::default(),
            environment: EnvironmentConfig::default(),
            split: None,
            resample_reevaluation: true,
            task: None,
            audit: false,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DriverError::Config(m));
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if self.action_dim == 0 {
            return bad("action dimension must be positive".into());
        }
        if let Some(Split { p, k }) = self.split {
            if p == 0 || k == 0 {
                return bad("split needs p >= 1 and k >= 1".into());
            }
            if p * k >= self.budget {
                return bad(format!(
                    "split {p}x{k} leaves no exploration budget out of {}",
                    self.budget
                ));
            }
        }
        self.agent_config().validate()?;
        Ok(())
    }

    /// Agent settings with the run-level dimension and budget applied.
    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            action_dim: self.action_dim,
            buffer_capacity: self.budget,
            ..self.agent.clone()
        }
    }

    pub fn exploration_budget(&self) -> usize {
        match self.split {
            Some(Split { p, k }) => self.budget - p * k,
            None => self.budget,
        }
    }
}

/// One row of `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub reward: f64,
    pub best_reward: f64,
    pub alpha: f64,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// 1-based step at which the candidate was proposed.
    pub step: u64,
    pub action: Vec<f64>,
    pub instruction: Option<String>,
    pub reward: f64,
    /// Re-scored rewards in split mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reevaluations: Vec<f64>,
}

impl Candidate {
    pub fn reevaluated_mean(&self) -> Option<f64> {
        if self.reevaluations.is_empty() {
            None
        } else {
            Some(self.reevaluations.iter().sum::<f64>() / self.reevaluations.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAudit {
    pub reward_evaluations: u64,
    pub reevaluations: u64,
    /// Black-box completions, for instruction environments.
    pub completions: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub environment: String,
    pub variant: AgentVariant,
    pub seed: u64,
    pub best: Candidate,
    /// Re-scored candidates in split mode, best first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reranked: Vec<Candidate>,
    pub trace: Vec<TraceRow>,
    pub final_diagnostics: Option<Diagnostics>,
    pub queries: QueryAudit,
}

/// A constructed environment of any supported kind.
#[derive(Debug)]
pub enum RunEnvironment {
    Synthetic(SyntheticLandscape),
    Llm(Box<LlmEnvironment>),
}

impl RunEnvironment {
    pub fn as_llm(&self) -> Option<&LlmEnvironment> {
        match self {
            RunEnvironment::Llm(e) => Some(e),
            RunEnvironment::Synthetic(_) => None,
        }
    }
}

impl Environment for RunEnvironment {
    fn action_dim(&self) -> usize {
        match self {
            RunEnvironment::Synthetic(e) => e.action_dim(),
            RunEnvironment::Llm(e) => e.action_dim(),
        }
    }

    fn name(&self) -> &str {
        match self {
            RunEnvironment::Synthetic(e) => e.name(),
            RunEnvironment::Llm(e) => e.name(),
        }
    }

    fn evaluate(&self, action: &[f64], call: u64) -> crate::env::Result<Evaluation> {
        match self {
            RunEnvironment::Synthetic(e) => e.evaluate(action, call),
            RunEnvironment::Llm(e) => e.evaluate(action, call),
        }
    }

    fn reevaluate(
        &self,
        action: &[f64],
        instruction: Option<&str>,
        call: u64,
    ) -> crate::env::Result<f64> {
        match self {
            RunEnvironment::Synthetic(e) => e.reevaluate(action, instruction, call),
            RunEnvironment::Llm(e) => e.reevaluate(action, instruction, call),
        }
    }

    fn completions(&self) -> Option<u64> {
        match self {
            RunEnvironment::Synthetic(e) => e.completions(),
            RunEnvironment::Llm(e) => e.completions(),
        }
    }
}

/// Builds the configured environment. Instruction environments need `task`.
pub fn build_environment(
    config: &RunConfig,
    task: Option<TaskSpec>,
    out_dir: Option<&Path>,
) -> Result<RunEnvironment> {
    let llm = |decoder: DecoderConfig,
               blackbox: BlackBox,
               fan_out: usize,
               task: Option<TaskSpec>|
     -> Result<RunEnvironment> {
        let task =
            task.ok_or_else(|| DriverError::Config("this environment needs a task file".into()))?;
        let audit = match (config.audit, out_dir) {
            (true, Some(dir)) => Some(Arc::new(AuditLog::create(&dir.join("audit.jsonl"))?)),
            (true, None) => {
                return Err(DriverError::Config(
                    "audit log needs an output directory".into(),
                ))
            }
            _ => None,
        };
        let env_config = LlmEnvironmentConfig {
            n_tokens: config.n_tokens,
            token_width: config.token_width,
            fan_out,
            resample_reevaluation: config.resample_reevaluation,
            seed: config.seed,
        };
        Ok(RunEnvironment::Llm(Box::new(LlmEnvironment::new(
            env_config,
            config.action_dim,
            &decoder,
            blackbox,
            task,
            audit,
        )?)))
    };
    match &config.environment {
        EnvironmentConfig::Synthetic { landscape } => {
            let env = SyntheticLandscape::from_config(landscape.clone())
                .map_err(|e| DriverError::Config(e.to_string()))?;
            if env.action_dim() != config.action_dim {
                return Err(DriverError::Config(format!(
                    "landscape has dimension {} but the run uses {}",
                    env.action_dim(),
                    config.action_dim
                )));
            }
            Ok(RunEnvironment::Synthetic(env))
        }
        EnvironmentConfig::Llm {
            decoder,
            blackbox,
            templates,
            fan_out,
            memoize,
        } => {
            let mut bb = BlackBox::from_config(blackbox, templates.clone())?;
            if *memoize {
                bb = bb.with_memoization();
            }
            llm(decoder.clone(), bb, *fan_out, task)
        }
        EnvironmentConfig::MockLlm {
            grammar,
            blackbox,
            templates,
        } => {
            if matches!(blackbox, BlackBoxConfig::Http { .. }) {
                return Err(DriverError::Config(
                    "mock-llm needs a mock black box".into(),
                ));
            }
            let bb = BlackBox::from_config(blackbox, templates.clone())?;
            let decoder = DecoderConfig::Mock {
                grammar: grammar.clone(),
            };
            llm(decoder, bb, 1, task)
        }
    }
}

/// Appends trace rows to `trace.csv`, flushing each one.
struct TraceWriter {
    out: Option<csv::Writer<File>>,
}

impl TraceWriter {
    fn new(dir: Option<&Path>) -> Result<Self> {
        let out = match dir {
            Some(d) => Some(csv::Writer::from_path(d.join("trace.csv"))?),
            None => None,
        };
        Ok(TraceWriter { out })
    }

    fn push(&mut self, row: &TraceRow) -> Result<()> {
        if let Some(w) = &mut self.out {
            w.serialize(row)?;
            w.flush()?;
        }
        Ok(())
    }
}

struct Exploration {
    candidates: Vec<Candidate>,
    trace: Vec<TraceRow>,
    diagnostics: Option<Diagnostics>,
}

fn explore(
    config: &RunConfig,
    env: &dyn Environment,
    steps: usize,
    out_dir: Option<&Path>,
) -> Result<Exploration> {
    if env.action_dim() != config.action_dim {
        return Err(DriverError::Config(format!(
            "environment has dimension {} but the run uses {}",
            env.action_dim(),
            config.action_dim
        )));
    }
    let mut agent = Agent::new(config.agent_config(), config.seed)?;
    let mut writer = TraceWriter::new(out_dir)?;
    let mut candidates = Vec::with_capacity(steps);
    let mut trace = Vec::with_capacity(steps);
    let mut best = f64::NEG_INFINITY;
    let mut diagnostics = None;
    for t in 0..steps {
        let step = t as u64 + 1;
        let proposal = agent.propose()?;
        let eval = env
            .evaluate(&proposal.action, t as u64)
            .map_err(|source| DriverError::Environment { step, source })?;
        if !(0.0..=1.0).contains(&eval.reward) {
            return Err(DriverError::Environment {
                step,
                source: EnvError::InvalidConfig(format!("reward {} outside [0, 1]", eval.reward)),
            });
        }
        let diag = agent.train_step(&proposal.action, eval.reward)?;
        best = best.max(eval.reward);
        let row = TraceRow {
            step,
            reward: eval.reward,
            best_reward: best,
            alpha: diag.alpha,
            instruction: eval.instruction.clone().unwrap_or_default(),
        };
        writer.push(&row)?;
        log::debug!("step {step} reward {:.4} best {:.4}", eval.reward, best);
        trace.push(row);
        candidates.push(Candidate {
            step,
            action: proposal.action,
            instruction: eval.instruction,
            reward: eval.reward,
            reevaluations: Vec::new(),
        });
        diagnostics = Some(diag);
    }
    Ok(Exploration {
        candidates,
        trace,
        diagnostics,
    })
}

/// Highest reward; the earliest step wins ties.
fn best_of(candidates: &[Candidate]) -> Option<&Candidate> {
    candidates
        .iter()
        .fold(None, |best: Option<&Candidate>, c| match best {
            Some(b) if b.reward >= c.reward => Some(b),
            _ => Some(c),
        })
}

fn write_result(out_dir: Option<&Path>, result: &RunResult) -> Result<()> {
    if let Some(dir) = out_dir {
        let text = serde_json::to_string_pretty(result)?;
        std::fs::write(dir.join("result.json"), text + "\n")?;
    }
    Ok(())
}

/// Runs the full budget and returns the best-scoring candidate.
///
/// With `out_dir`, `trace.csv` is appended to as the run goes and
/// `result.json` is written at the end.
pub fn run_optimization(
    config: &RunConfig,
    env: &dyn Environment,
    out_dir: Option<&Path>,
) -> Result<RunResult> {
    config.validate()?;
    let start = env.completions().unwrap_or(0);
    let ex = explore(config, env, config.budget, out_dir)?;
    let best = best_of(&ex.candidates).expect("budget >= 1").clone();
    let result = RunResult {
        environment: env.name().to_string(),
        variant: config.agent.variant,
        seed: config.seed,
        best,
        reranked: Vec::new(),
        trace: ex.trace,
        final_diagnostics: ex.diagnostics,
        queries: QueryAudit {
            reward_evaluations: config.budget as u64,
            reevaluations: 0,
            completions: env.completions().map(|c| c - start),
        },
    };
    write_result(out_dir, &result)?;
    Ok(result)
}

/// Re-scores the top `p` of `candidates` `k` times each and orders them by
/// mean re-scored reward, then first-pass reward, then step.
pub fn rerank(
    env: &dyn Environment,
    candidates: &[Candidate],
    split: Split,
    first_call: u64,
) -> Result<Vec<Candidate>> {
    let mut pool: Vec<&Candidate> = candidates.iter().collect();
    pool.sort_by(|a, b| b.reward.total_cmp(&a.reward).then(a.step.cmp(&b.step)));
    pool.truncate(split.p);
    let mut call = first_call;
    let mut out = Vec::with_capacity(pool.len());
    for c in pool {
        let mut c = c.clone();
        for _ in 0..split.k {
            let r = env
                .reevaluate(&c.action, c.instruction.as_deref(), call)
                .map_err(|source| DriverError::Environment {
                    step: call + 1,
                    source,
                })?;
            c.reevaluations.push(r);
            call += 1;
        }
        out.push(c);
    }
    out.sort_by(|a, b| {
        let (ma, mb) = (
            a.reevaluated_mean().unwrap_or(0.0),
            b.reevaluated_mean().unwrap_or(0.0),
        );
        mb.total_cmp(&ma)
            .then(b.reward.total_cmp(&a.reward))
            .then(a.step.cmp(&b.step))
    });
    Ok(out)
}

/// Explores for `budget - p*k` steps, then spends `p*k` evaluations re-scoring
/// the top `p` candidates.
pub fn run_with_split(
    config: &RunConfig,
    env: &dyn Environment,
    out_dir: Option<&Path>,
) -> Result<RunResult> {
    config.validate()?;
    let split = config
        .split
        .ok_or_else(|| DriverError::Config("split mode needs p and k".into()))?;
    let start = env.completions().unwrap_or(0);
    let steps = config.exploration_budget();
    let ex = explore(config, env, steps, out_dir)?;
    let reranked = rerank(env, &ex.candidates, split, steps as u64)?;
    let reevaluations = reranked.iter().map(|c| c.reevaluations.len() as u64).sum();
    let result = RunResult {
        environment: env.name().to_string(),
        variant: config.agent.variant,
        seed: config.seed,
        best: reranked[0].clone(),
        reranked,
        trace: ex.trace,
        final_diagnostics: ex.diagnostics,
        queries: QueryAudit {
            reward_evaluations: steps as u64,
            reevaluations,
            completions: env.completions().map(|c| c - start),
        },
    };
    write_result(out_dir, &result)?;
    Ok(result)
}

/// Mean test-split score of the result's best instruction.
pub fn final_test(result: &RunResult, env: &LlmEnvironment) -> Result<f64> {
    let instruction = result
        .best
        .instruction
        .as_deref()
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| DriverError::InvalidCandidate("best instruction is blank".into()))?;
    Ok(env.score_instruction(instruction, &env.task().test)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(budget: usize) -> RunConfig {
        RunConfig {
            budget,
            action_dim: 3,
            agent: AgentConfig {
                actor_hidden: vec![16],
                critic_hidden: vec![16],
                ..AgentConfig::default()
            },
            environment: EnvironmentConfig::Synthetic {
                landscape: LandscapeConfig::GaussianBump {
                    optimum: vec![0.5; 3],
                    width: 0.3,
                    seed: 0,
                },
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn single_step_run() {
        let cfg = small_config(1);
        let env = build_environment(&cfg, None, None).unwrap();
        let r = run_optimization(&cfg, &env, None).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.best.reward, r.trace[0].reward);
        assert_eq!(r.queries.reward_evaluations, 1);
    }

    #[test]
    fn best_so_far_never_drops() {
        let cfg = small_config(40);
        let env = build_environment(&cfg, None, None).unwrap();
        let r = run_optimization(&cfg, &env, None).unwrap();
        assert!(r
            .trace
            .windows(2)
            .all(|w| w[1].best_reward >= w[0].best_reward));
        let max = r.trace.iter().map(|t| t.reward).fold(0.0, f64::max);
        assert_eq!(r.best.reward, max);
    }

    #[test]
    fn earliest_step_wins_ties() {
        let c = |step, reward| Candidate {
            step,
            action: vec![],
            instruction: None,
            reward,
            reevaluations: vec![],
        };
        let cands = [c(1, 0.2), c(2, 0.5), c(3, 0.5)];
        assert_eq!(best_of(&cands).unwrap().step, 2);
    }

    #[test]
    fn split_must_leave_exploration() {
        let mut cfg = small_config(15);
        cfg.split = Some(Split { p: 5, k: 3 });
        assert!(cfg.validate().is_err());
        cfg.budget = 16;
        cfg.validate().unwrap();
        assert_eq!(cfg.exploration_budget(), 1);
        assert_eq!("5:3".parse::<Split>().unwrap(), Split { p: 5, k: 3 });
        assert!("5x3".parse::<Split>().is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut cfg = small_config(5);
        cfg.action_dim = 4;
        assert!(matches!(
            build_environment(&cfg, None, None),
            Err(DriverError::Config(_))
        ));
    }
}
