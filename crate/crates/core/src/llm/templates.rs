use serde::{Deserialize, Serialize};

use super::{LlmError, Result};
use crate::tasks::Example;

pub const INSTRUCTION_SLOT: &str = "{instruction}";
pub const INPUT_SLOT: &str = "{input}";
pub const OUTPUT_SLOT: &str = "{output}";

/// The instruction-generation and evaluation prompt formats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    /// Text placed before the exemplar blocks.
    pub generation_preamble: String,
    /// One exemplar, with `{input}` and `{output}` slots.
    pub exemplar_block: String,
    pub cue: String,
    /// Exactly one `{instruction}` and one `{input}` slot.
    pub evaluation: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            generation_preamble: "Below are example inputs with the outputs produced for them.\n\n"
                .into(),
            exemplar_block: "Input: {input}\nOutput: {output}\n\n".into(),
            cue: "The instruction was to".into(),
            evaluation: "Instruction: {instruction}\n\nInput: {input}\nOutput:".into(),
        }
    }
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<()> {
        let count = |s: &str, slot: &str| s.matches(slot).count();
        if count(&self.evaluation, INSTRUCTION_SLOT) != 1
            || count(&self.evaluation, INPUT_SLOT) != 1
        {
            return Err(LlmError::InvalidConfig(
                "evaluation template needs exactly one {instruction} and one {input} slot".into(),
            ));
        }
        if count(&self.exemplar_block, INPUT_SLOT) != 1
            || count(&self.exemplar_block, OUTPUT_SLOT) != 1
        {
            return Err(LlmError::InvalidConfig(
                "exemplar block needs exactly one {input} and one {output} slot".into(),
            ));
        }
        if self.cue.trim().is_empty() {
            return Err(LlmError::InvalidConfig("generation cue is empty".into()));
        }
        Ok(())
    }

    /// Exemplar blocks in order, followed by the cue.
    pub fn render_generation_prompt(&self, exemplars: &[Example]) -> Result<String> {
        if exemplars.is_empty() {
            return Err(LlmError::InvalidTask("no exemplars to render".into()));
        }
        let mut out = self.generation_preamble.clone();
        for ex in exemplars {
            let output = ex.output.references().join(", ");
            out.push_str(
                &self
                    .exemplar_block
                    .replace(INPUT_SLOT, &ex.input)
                    .replace(OUTPUT_SLOT, &output),
            );
        }
        out.push_str(&self.cue);
        Ok(out)
    }

    pub fn render_evaluation(&self, instruction: &str, input: &str) -> String {
        // Fill slots positionally so slot-like text inside the instruction is left alone.
        let (first, second, first_val, second_val) = self.slot_order(instruction, input);
        let (head, rest) = self
            .evaluation
            .split_once(first)
            .expect("validated template");
        let (mid, tail) = rest.split_once(second).expect("validated template");
        format!("{head}{first_val}{mid}{second_val}{tail}")
    }

    fn slot_order<'a>(
        &self,
        instruction: &'a str,
        input: &'a str,
    ) -> (&'static str, &'static str, &'a str, &'a str) {
        let i = self
            .evaluation
            .find(INSTRUCTION_SLOT)
            .expect("validated template");
        let j = self
            .evaluation
            .find(INPUT_SLOT)
            .expect("validated template");
        if i < j {
            (INSTRUCTION_SLOT, INPUT_SLOT, instruction, input)
        } else {
            (INPUT_SLOT, INSTRUCTION_SLOT, input, instruction)
        }
    }

    /// Recovers `(instruction, input)` from a rendered evaluation prompt.
    pub fn parse_evaluation(&self, prompt: &str) -> Option<(String, String)> {
        let (first, second, _, _) = self.slot_order("", "");
        let (head, rest) = self.evaluation.split_once(first)?;
        let (mid, tail) = rest.split_once(second)?;
        let body = prompt.strip_prefix(head)?.strip_suffix(tail)?;
        let (a, b) = body.split_once(mid)?;
        if first == INSTRUCTION_SLOT {
            Some((a.to_string(), b.to_string()))
        } else {
            Some((b.to_string(), a.to_string()))
        }
    }
}

/// First non-empty line, trimmed, without a trailing period.
pub fn clean_instruction(raw: &str) -> String {
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    line.strip_suffix('.')
        .unwrap_or(line)
        .trim_end()
        .to_string()
}
