#![allow(dead_code)]

use latprompt::driver::{EnvironmentConfig, RunConfig};
use latprompt::llm::{default_grammar, BlackBoxConfig, PromptTemplates};
use latprompt::tasks::{Example, TaskFile, TaskSpec};

/// Cell whose instruction answers every quiz item correctly.
pub const TARGET_BITS: [bool; 10] = [
    true, false, true, true, false, false, true, false, true, true,
];

pub fn target_instruction() -> String {
    default_grammar().render(&TARGET_BITS)
}

/// A quiz task: every validation input is one word of the target instruction,
/// each asked twice, with gold answer `yes`. A cell's reward is the fraction of
/// slots it shares with the target.
pub fn quiz_task_file() -> TaskFile {
    let grammar = default_grammar();
    let quiz: Vec<Example> = grammar
        .slots
        .iter()
        .zip(TARGET_BITS)
        .flat_map(|((off, on), b)| {
            let word = if b { on } else { off };
            [Example::new(word, "yes"), Example::new(word, "yes")]
        })
        .collect();
    TaskFile {
        name: "keyword-quiz".into(),
        metric: "exact-match".into(),
        exemplars: (0..5)
            .map(|i| Example::new(&format!("word{i}"), "yes"))
            .collect(),
        validation: quiz.clone(),
        test: quiz,
        normalization: None,
        disjoint_splits: false,
    }
}

pub fn quiz_task(config: &RunConfig) -> TaskSpec {
    TaskSpec::from_file(
        quiz_task_file(),
        config.validation_size,
        config.exemplar_count,
        config.seed,
    )
    .expect("quiz task is valid")
}

pub fn mock_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        environment: EnvironmentConfig::MockLlm {
            grammar: None,
            blackbox: BlackBoxConfig::KeywordQuiz,
            templates: PromptTemplates::default(),
        },
        ..RunConfig::default()
    }
}
