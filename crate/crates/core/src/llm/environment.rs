use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blackbox::BlackBox;
use super::decoder::{Decoder, DecoderConfig};
use super::templates::PromptTemplates;
use super::{AuditLog, LlmError, Result};
use crate::env::{self, check_action, Environment, Evaluation, ProjectionMatrix};
use crate::scoring::{score, MetricKind, TextNormalization};
use crate::tasks::{Example, TaskSpec};

/// Mean per-example score of `instruction` over `examples`.
///
/// Up to `fan_out` completions run at once; scores are reduced in input order.
/// If any completion fails, nothing is averaged and the error records how far
/// the evaluation got.
pub fn evaluate_instruction(
    instruction: &str,
    examples: &[Example],
    metric: MetricKind,
    norm: &TextNormalization,
    blackbox: &BlackBox,
    fan_out: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(LlmError::InvalidTask("empty validation set".into()));
    }
    let score_one = |ex: &Example| -> Result<f64> {
        let prompt = blackbox
            .templates()
            .render_evaluation(instruction, &ex.input);
        let pred = blackbox.complete(&prompt)?;
        Ok(score(metric, &pred, &ex.output.references(), norm)?)
    };
    let fan_out = fan_out.max(1);
    let results: Vec<Result<f64>> = if fan_out == 1 {
        let mut out = Vec::with_capacity(examples.len());
        for ex in examples {
            let r = score_one(ex);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    } else {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(fan_out) {
            let batch: Vec<Result<f64>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|ex| s.spawn(|| score_one(ex))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("completion worker panicked"))
                    .collect()
            });
            let failed = batch.iter().any(|r| r.is_err());
            out.extend(batch);
            if failed {
                break;
            }
        }
        out
    };
    let total = examples.len();
    let mut sum = 0.0;
    let mut completed = 0;
    let mut first_err = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => {
                sum += s;
                completed += 1;
            }
            Err(e) if first_err.is_none() => first_err = Some((i, e)),
            Err(_) => {}
        }
    }
    if let Some((failed, source)) = first_err {
        return Err(LlmError::PartialEvaluation {
            completed,
            failed,
            total,
            source: Box::new(source),
        });
    }
    Ok(sum / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEnvironmentConfig {
    /// Soft tokens per prompt.
    pub n_tokens: usize,
    pub token_width: usize,
    /// Concurrent completions per evaluation.
    pub fan_out: usize,
    /// Re-scoring draws a fresh validation subsample per call.
    pub resample_reevaluation: bool,
    /// Seeds the projection and re-evaluation subsamples.
    pub seed: u64,
}

impl Default for LlmEnvironmentConfig {
    fn default() -> Self {
        LlmEnvironmentConfig {
            n_tokens: 5,
            token_width: 5120,
            fan_out: 1,
            resample_reevaluation: true,
            seed: 0,
        }
    }
}

/// Scores actions by decoding them into instructions and running the task's
/// validation subset through the black box.
#[derive(Debug)]
pub struct LlmEnvironment {
    config: LlmEnvironmentConfig,
    projection: ProjectionMatrix,
    decoder: Decoder,
    blackbox: BlackBox,
    task: TaskSpec,
    generation_prompt: String,
    audit: Option<Arc<AuditLog>>,
    name: String,
}

impl LlmEnvironment {
    pub fn new(
        config: LlmEnvironmentConfig,
        action_dim: usize,
        decoder: &DecoderConfig,
        blackbox: BlackBox,
        task: TaskSpec,
        audit: Option<Arc<AuditLog>>,
    ) -> Result<Self> {
        if action_dim == 0 || config.n_tokens == 0 || config.token_width == 0 {
            return Err(LlmError::InvalidConfig(
                "dimensions must be positive".into(),
            ));
        }
        blackbox.templates().validate()?;
        let projection = ProjectionMatrix::new(
            config.n_tokens * config.token_width,
            action_dim,
            config.seed,
        );
        let decoder = Decoder::from_config(decoder, &projection, config.n_tokens)?;
        let generation_prompt = blackbox
            .templates()
            .render_generation_prompt(&task.exemplars)?;
        let blackbox = match &audit {
            Some(a) => blackbox.with_audit(a.clone()),
            None => blackbox,
        };
        let name = format!("llm:{}", task.name);
        Ok(LlmEnvironment {
            config,
            projection,
            decoder,
            blackbox,
            task,
            generation_prompt,
            audit,
            name,
        })
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.projection
    }

    pub fn blackbox(&self) -> &BlackBox {
        &self.blackbox
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn generation_prompt(&self) -> &str {
        &self.generation_prompt
    }

    pub fn templates(&self) -> &PromptTemplates {
        self.blackbox.templates()
    }

    pub fn decode(&self, action: &[f64]) -> Result<String> {
        let z = self.projection.project(action).map_err(|e| match e {
            env::EnvError::Shape { expected, got } => {
                LlmError::InvalidArgument(format!("action length {got} != {expected}"))
            }
            other => LlmError::InvalidArgument(other.to_string()),
        })?;
        self.decoder
            .decode(&z, &self.generation_prompt, self.audit.as_ref())
    }

    pub fn score_instruction(&self, instruction: &str, examples: &[Example]) -> Result<f64> {
        evaluate_instruction(
            instruction,
            examples,
            self.task.metric,
            &self.task.normalization,
            &self.blackbox,
            self.config.fan_out,
        )
    }

    fn reevaluation_set(&self, call: u64) -> Vec<Example> {
        let pool = &self.task.validation_pool;
        let m = self.task.validation.len();
        if !self.config.resample_reevaluation || m >= pool.len() {
            return self.task.validation.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x7265_6576_616c);
        rng.set_stream(call);
        sample(&mut rng, pool.len(), m)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect()
    }
}

impl Environment for LlmEnvironment {
    fn action_dim(&self) -> usize {
        self.projection.cols()
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, action: &[f64], _call: u64) -> env::Result<Evaluation> {
        check_action(action, self.action_dim())?;
        let instruction = self.decode(action)?;
        let reward = self.score_instruction(&instruction, &self.task.validation)?;
        Ok(Evaluation {
            reward,
            instruction: Some(instruction),
        })
    }

    fn reevaluate(&self, action: &[f64], instruction: Option<&str>, call: u64) -> env::Result<f64> {
        let instruction = match instruction {
            Some(i) => i.to_string(),
            None => self.decode(action)?,
        };
        Ok(self.score_instruction(&instruction, &self.reevaluation_set(call))?)
    }

    fn completions(&self) -> Option<u64> {
        Some(self.blackbox.query_count())
    }
}
