//! Task files: exemplars, validation and test splits, and the scoring metric.
//!
//! ```json
//! {"name": "antonyms", "metric": "exact-match",
//!  "exemplars": [{"input": "won", "output": "lost"}],
//!  "validation": [{"input": "hot", "output": ["cold", "cool"]}],
//!  "test": [{"input": "up", "output": "down"}]}
//! ```

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{MetricKind, ScoreError, TextNormalization};

pub const DEFAULT_EXEMPLARS: usize = 5;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("cannot read task file: {0}")]
    Io(#[from] std::io::Error),
    #[error("task parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    InvalidMetric(#[from] ScoreError),
    #[error("invalid task: {0}")]
    Invalid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, TaskError>;

/// One reference or several acceptable ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    One(String),
    Many(Vec<String>),
}

impl Gold {
    pub fn references(&self) -> Vec<&str> {
        match self {
            Gold::One(s) => vec![s.as_str()],
            Gold::Many(v) => v.iter().map(String::as_str).collect(),
        }
    }
}

impl From<&str> for Gold {
    fn from(s: &str) -> Self {
        Gold::One(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub output: Gold,
}

impl Example {
    pub fn new(input: &str, output: &str) -> Self {
        Example {
            input: input.to_string(),
            output: output.into(),
        }
    }
}

/// On-disk layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub name: String,
    pub metric: String,
    pub exemplars: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<TextNormalization>,
    /// When true, loading fails if a validation input also appears in the test split.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub disjoint_splits: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub metric: MetricKind,
    pub normalization: TextNormalization,
    /// Every exemplar in the file.
    pub exemplar_pool: Vec<Example>,
    /// Exemplars used for instruction generation.
    pub exemplars: Vec<Example>,
    /// Every validation pair in the file.
    pub validation_pool: Vec<Example>,
    /// Per-evaluation subsample of the validation pool.
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub disjoint_splits: bool,
}

fn seeded_subset<T: Clone>(items: &[T], k: usize, seed: u64) -> Vec<T> {
    if k >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, items.len(), k)
        .into_iter()
        .map(|i| items[i].clone())
        .collect()
}

fn check_split(name: &str, split: &[Example]) -> Result<()> {
    if split.is_empty() {
        return Err(TaskError::Invalid(format!("`{name}` is empty")));
    }
    for (i, ex) in split.iter().enumerate() {
        if ex.input.trim().is_empty() {
            return Err(TaskError::Invalid(format!("`{name}[{i}].input` is empty")));
        }
        if ex.output.references().is_empty() {
            return Err(TaskError::Invalid(format!(
                "`{name}[{i}].output` has no reference"
            )));
        }
    }
    Ok(())
}

impl TaskSpec {
    /// Validates `file` and draws `m` validation pairs and `exemplar_count`
    /// exemplars with `seed`. Pools smaller than the request are kept whole.
    pub fn from_file(file: TaskFile, m: usize, exemplar_count: usize, seed: u64) -> Result<Self> {
        let metric: MetricKind = file.metric.parse()?;
        check_split("exemplars", &file.exemplars)?;
        check_split("validation", &file.validation)?;
        check_split("test", &file.test)?;
        if m == 0 || exemplar_count == 0 {
            return Err(TaskError::InvalidArgument(
                "validation size and exemplar count must be positive".into(),
            ));
        }
        if file.disjoint_splits {
            let test_inputs: HashSet<&str> = file.test.iter().map(|e| e.input.as_str()).collect();
            if let Some(dup) = file
                .validation
                .iter()
                .find(|e| test_inputs.contains(e.input.as_str()))
            {
                return Err(TaskError::Invalid(format!(
                    "validation input `{}` also appears in test",
                    dup.input
                )));
            }
        }
        let exemplars = seeded_subset(&file.exemplars, exemplar_count, seed);
        let validation = seeded_subset(&file.validation, m, seed.wrapping_add(1));
        Ok(TaskSpec {
            name: file.name,
            metric,
            normalization: file.normalization.unwrap_or_default(),
            exemplar_pool: file.exemplars,
            exemplars,
            validation_pool: file.validation,
            validation,
            test: file.test,
            disjoint_splits: file.disjoint_splits,
        })
    }

    pub fn to_file(&self) -> TaskFile {
        TaskFile {
            name: self.name.clone(),
            metric: self.metric.tag().to_string(),
            exemplars: self.exemplar_pool.clone(),
            validation: self.validation_pool.clone(),
            test: self.test.clone(),
            normalization: Some(self.normalization),
            disjoint_splits: self.disjoint_splits,
        }
    }

    /// `k` exemplars drawn without replacement from the full pool.
    pub fn exemplar_subset(&self, k: usize, seed: u64) -> Result<Vec<Example>> {
        if k == 0 || k > self.exemplar_pool.len() {
            return Err(TaskError::InvalidArgument(format!(
                "exemplar count {k} outside 1..={}",
                self.exemplar_pool.len()
            )));
        }
        Ok(seeded_subset(&self.exemplar_pool, k, seed))
    }
}

pub fn parse_task(json: &str, m: usize, exemplar_count: usize, seed: u64) -> Result<TaskSpec> {
    let file: TaskFile = serde_json::from_str(json).map_err(|e| TaskError::Parse(e.to_string()))?;
    TaskSpec::from_file(file, m, exemplar_count, seed)
}

pub fn load_task(path: &Path, m: usize, exemplar_count: usize, seed: u64) -> Result<TaskSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_task(&text, m, exemplar_count, seed)
}
