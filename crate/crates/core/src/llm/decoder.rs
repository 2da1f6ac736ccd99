use std::sync::Arc;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::templates::clean_instruction;
use super::{check_status, classify, with_retry, AuditLog, Failure, LlmError, Result, RetryPolicy};
use crate::env::ProjectionMatrix;

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_tokens() -> u32 {
    64
}

/// Two phrases per action coordinate; coordinate `i` above one half selects `slots[i].1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseGrammar {
    pub slots: Vec<(String, String)>,
}

pub fn default_grammar() -> PhraseGrammar {
    let pairs = [
        ("read", "scan"),
        ("each", "every"),
        ("word", "token"),
        ("then", "and"),
        ("write", "give"),
        ("its", "the"),
        ("opposite", "reverse"),
        ("clearly", "briefly"),
        ("as", "in"),
        ("lowercase", "full"),
    ];
    PhraseGrammar {
        slots: pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
    }
}

impl PhraseGrammar {
    pub fn render(&self, bits: &[bool]) -> String {
        self.slots
            .iter()
            .zip(bits)
            .map(|((off, on), &b)| if b { on.as_str() } else { off.as_str() })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecoderConfig {
    /// `POST {base_url}/v1/decode`.
    Http {
        base_url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
        #[serde(default)]
        retry: RetryPolicy,
    },
    Mock {
        #[serde(default)]
        grammar: Option<PhraseGrammar>,
    },
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig::Mock { grammar: None }
    }
}

/// Maps soft prompts back to action-space cells and names each cell with a phrase.
///
/// The reference directions are the rows of the least-squares inverse of the
/// projection, so coordinate `i` of the recovered action is `<z, r_i>`.
#[derive(Debug, Clone)]
pub struct MockDecoder {
    directions: DMatrix<f64>,
    grammar: PhraseGrammar,
}

impl MockDecoder {
    pub fn new(projection: &ProjectionMatrix, grammar: PhraseGrammar) -> Result<Self> {
        let p = DMatrix::from_fn(projection.rows(), projection.cols(), |r, c| {
            projection.entry(r, c)
        });
        let gram = p.transpose() * &p;
        let chol = gram
            .cholesky()
            .ok_or_else(|| LlmError::InvalidConfig("projection has dependent columns".into()))?;
        let directions = chol.solve(&p.transpose());
        if grammar.slots.len() < projection.cols() {
            log::debug!(
                "grammar has {} slots for {} coordinates; extra coordinates are ignored",
                grammar.slots.len(),
                projection.cols()
            );
        }
        Ok(MockDecoder {
            directions,
            grammar,
        })
    }

    pub fn grammar(&self) -> &PhraseGrammar {
        &self.grammar
    }

    /// Which side of one half each recovered coordinate falls on.
    pub fn cell(&self, z: &[f64]) -> Result<Vec<bool>> {
        if z.len() != self.directions.ncols() {
            return Err(LlmError::InvalidArgument(format!(
                "soft prompt length {} != {}",
                z.len(),
                self.directions.ncols()
            )));
        }
        let a = &self.directions * DVector::from_column_slice(z);
        Ok(a.iter().map(|&x| x > 0.5).collect())
    }

    /// Exemplars do not influence the mock.
    pub fn decode(&self, z: &[f64]) -> Result<String> {
        Ok(self.grammar.render(&self.cell(z)?))
    }
}

#[derive(Debug)]
pub struct HttpDecoder {
    client: reqwest::blocking::Client,
    url: String,
    max_tokens: u32,
    retry: RetryPolicy,
    n_tokens: usize,
}

#[derive(Debug, Deserialize)]
struct DecodeResponse {
    instruction: String,
}

impl HttpDecoder {
    fn decode(&self, z: &[f64], exemplar_prompt: &str, audit: Option<&AuditLog>) -> Result<String> {
        if self.n_tokens == 0 || !z.len().is_multiple_of(self.n_tokens) {
            return Err(LlmError::InvalidArgument(format!(
                "soft prompt length {} not divisible into {} tokens",
                z.len(),
                self.n_tokens
            )));
        }
        let width = z.len() / self.n_tokens;
        let rows: Vec<&[f64]> = z.chunks(width).collect();
        let body = json!({
            "soft_prompt": rows,
            "exemplar_prompt": exemplar_prompt,
            "max_tokens": self.max_tokens,
        });
        let parsed: DecodeResponse = with_retry(&self.retry, || {
            let resp = self
                .client
                .post(&self.url)
                .json(&body)
                .send()
                .map_err(classify)?;
            let resp = check_status(resp)?;
            resp.json::<DecodeResponse>()
                .map_err(|e| Failure::Fatal(LlmError::Protocol(format!("decode response: {e}"))))
        })?;
        if let Some(log) = audit {
            let request = json!({"exemplar_prompt": exemplar_prompt, "soft_prompt_len": z.len()});
            log.record(
                "decode",
                &request,
                &json!({"instruction": parsed.instruction}),
            )?;
        }
        Ok(strip_echo(&parsed.instruction, exemplar_prompt))
    }
}

/// Drops a repeated prompt or cue from the front of generated text, then cleans it.
fn strip_echo(generated: &str, exemplar_prompt: &str) -> String {
    let mut text = generated.trim_start();
    if let Some(rest) = text.strip_prefix(exemplar_prompt.trim()) {
        text = rest;
    } else if let Some(cue_start) = exemplar_prompt.rfind('\n') {
        let cue = exemplar_prompt[cue_start..].trim();
        if !cue.is_empty() {
            text = text.strip_prefix(cue).unwrap_or(text);
        }
    }
    clean_instruction(text)
}

/// A configured instruction decoder.
#[derive(Debug)]
pub enum Decoder {
    Http(HttpDecoder),
    Mock(MockDecoder),
}

impl Decoder {
    /// `n_tokens` splits the soft prompt into rows on the wire.
    pub fn from_config(
        config: &DecoderConfig,
        projection: &ProjectionMatrix,
        n_tokens: usize,
    ) -> Result<Self> {
        match config {
            DecoderConfig::Http {
                base_url,
                timeout_ms,
                max_tokens,
                retry,
            } => {
                let client = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_millis(*timeout_ms))
                    .build()
                    .map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
                Ok(Decoder::Http(HttpDecoder {
                    client,
                    url: format!("{}/v1/decode", base_url.trim_end_matches('/')),
                    max_tokens: *max_tokens,
                    retry: *retry,
                    n_tokens,
                }))
            }
            DecoderConfig::Mock { grammar } => Ok(Decoder::Mock(MockDecoder::new(
                projection,
                grammar.clone().unwrap_or_else(default_grammar),
            )?)),
        }
    }

    pub fn decode(
        &self,
        z: &[f64],
        exemplar_prompt: &str,
        audit: Option<&Arc<AuditLog>>,
    ) -> Result<String> {
        match self {
            Decoder::Http(h) => h.decode(z, exemplar_prompt, audit.map(|a| a.as_ref())),
            Decoder::Mock(m) => m.decode(z),
        }
    }
}
