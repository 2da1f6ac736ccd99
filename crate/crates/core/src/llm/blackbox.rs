use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::templates::PromptTemplates;
use super::{check_status, classify, with_retry, AuditLog, Failure, LlmError, Result, RetryPolicy};

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_tokens() -> u32 {
    64
}

fn default_trigger() -> String {
    "opposite".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BlackBoxConfig {
    /// OpenAI-compatible chat completions at `{base_url}/chat/completions`.
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        temperature: f64,
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        retry: RetryPolicy,
    },
    /// Returns the input unchanged.
    #[default]
    Echo,
    /// Answers with the antonym of the input when the instruction mentions `trigger`.
    Antonym {
        #[serde(default = "default_trigger")]
        trigger: String,
    },
    /// Answers `yes` when the input word appears in the instruction, else `no`.
    KeywordQuiz,
}

pub fn antonym_table() -> &'static [(&'static str, &'static str)] {
    &[
        ("won", "lost"),
        ("hot", "cold"),
        ("up", "down"),
        ("early", "late"),
        ("open", "closed"),
        ("light", "dark"),
        ("happy", "sad"),
        ("big", "small"),
        ("fast", "slow"),
        ("true", "false"),
        ("full", "empty"),
        ("strong", "weak"),
    ]
}

fn antonym(word: &str) -> Option<&'static str> {
    let w = word.trim().to_lowercase();
    antonym_table().iter().find_map(|&(a, b)| {
        if a == w {
            Some(b)
        } else if b == w {
            Some(a)
        } else {
            None
        }
    })
}

type Responder = dyn Fn(&str) -> Result<String> + Send + Sync;

enum Backend {
    Http {
        client: reqwest::blocking::Client,
        url: String,
        model: String,
        temperature: f64,
        max_tokens: u32,
        api_key: Option<String>,
        retry: RetryPolicy,
    },
    Echo,
    Antonym(String),
    KeywordQuiz,
    Custom(Arc<Responder>),
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Http { url, model, .. } => write!(f, "Http({url}, {model})"),
            Backend::Echo => f.write_str("Echo"),
            Backend::Antonym(t) => write!(f, "Antonym({t})"),
            Backend::KeywordQuiz => f.write_str("KeywordQuiz"),
            Backend::Custom(_) => f.write_str("Custom"),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: String,
}

/// Text-in, text-out model endpoint with a query counter.
#[derive(Debug)]
pub struct BlackBox {
    backend: Backend,
    templates: PromptTemplates,
    queries: AtomicU64,
    memo: Option<Mutex<HashMap<String, String>>>,
    audit: Option<Arc<AuditLog>>,
}

impl BlackBox {
    /// `templates` let the mocks pull the instruction and input back out of a prompt.
    pub fn from_config(config: &BlackBoxConfig, templates: PromptTemplates) -> Result<Self> {
        let backend = match config {
            BlackBoxConfig::Http {
                base_url,
                model,
                temperature,
                max_tokens,
                timeout_ms,
                api_key_env,
                retry,
            } => {
                let api_key = match api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        LlmError::InvalidConfig(format!("environment variable {var} is not set"))
                    })?),
                    None => None,
                };
                let client = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_millis(*timeout_ms))
                    .build()
                    .map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
                Backend::Http {
                    client,
                    url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
                    model: model.clone(),
                    temperature: *temperature,
                    max_tokens: *max_tokens,
                    api_key,
                    retry: *retry,
                }
            }
            BlackBoxConfig::Echo => Backend::Echo,
            BlackBoxConfig::Antonym { trigger } => Backend::Antonym(trigger.to_lowercase()),
            BlackBoxConfig::KeywordQuiz => Backend::KeywordQuiz,
        };
        Ok(Self::with_backend(backend, templates))
    }

    /// Wraps an arbitrary function of the full prompt.
    pub fn custom(responder: impl Fn(&str) -> Result<String> + Send + Sync + 'static) -> Self {
        Self::with_backend(
            Backend::Custom(Arc::new(responder)),
            PromptTemplates::default(),
        )
    }

    fn with_backend(backend: Backend, templates: PromptTemplates) -> Self {
        BlackBox {
            backend,
            templates,
            queries: AtomicU64::new(0),
            memo: None,
            audit: None,
        }
    }

    /// Caches completions by exact prompt text.
    pub fn with_memoization(mut self) -> Self {
        self.memo = Some(Mutex::new(HashMap::new()));
        self
    }

    pub fn with_audit(mut self, audit: Arc<AuditLog>) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    /// Completions requested so far.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::SeqCst)
    }

    pub fn complete(&self, prompt: &str) -> Result<String> {
        if prompt.trim().is_empty() {
            return Err(LlmError::InvalidArgument("empty prompt".into()));
        }
        self.queries.fetch_add(1, Ordering::SeqCst);
        if let Some(memo) = &self.memo {
            if let Some(hit) = memo.lock().expect("memo lock poisoned").get(prompt) {
                return Ok(hit.clone());
            }
        }
        let out = self.dispatch(prompt)?;
        if let Some(memo) = &self.memo {
            memo.lock()
                .expect("memo lock poisoned")
                .insert(prompt.to_string(), out.clone());
        }
        if let Some(audit) = &self.audit {
            audit.record(
                "complete",
                &json!({ "prompt": prompt }),
                &json!({ "text": out }),
            )?;
        }
        Ok(out)
    }

    fn split(&self, prompt: &str) -> (String, String) {
        self.templates
            .parse_evaluation(prompt)
            .unwrap_or_else(|| (String::new(), prompt.to_string()))
    }

    fn dispatch(&self, prompt: &str) -> Result<String> {
        match &self.backend {
            Backend::Http {
                client,
                url,
                model,
                temperature,
                max_tokens,
                api_key,
                retry,
            } => {
                let body = json!({
                    "model": model,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": temperature,
                    "max_tokens": max_tokens,
                });
                let parsed: ChatResponse = with_retry(retry, || {
                    let mut req = client.post(url).json(&body);
                    if let Some(key) = api_key {
                        req = req.bearer_auth(key);
                    }
                    let resp = check_status(req.send().map_err(classify)?)?;
                    resp.json::<ChatResponse>().map_err(|e| {
                        Failure::Fatal(LlmError::Protocol(format!("completion response: {e}")))
                    })
                })?;
                parsed
                    .choices
                    .into_iter()
                    .next()
                    .map(|c| c.message.content.trim().to_string())
                    .ok_or_else(|| LlmError::Protocol("completion response has no choices".into()))
            }
            Backend::Echo => Ok(self.split(prompt).1),
            Backend::Antonym(trigger) => {
                let (instruction, input) = self.split(prompt);
                if instruction.to_lowercase().contains(trigger.as_str()) {
                    Ok(antonym(&input).map(str::to_string).unwrap_or(input))
                } else {
                    Ok(input)
                }
            }
            Backend::KeywordQuiz => {
                let (instruction, input) = self.split(prompt);
                let key = input.trim().to_lowercase();
                let hit = instruction
                    .split_whitespace()
                    .any(|w| w.to_lowercase() == key);
                Ok(if hit { "yes" } else { "no" }.to_string())
            }
            Backend::Custom(f) => f(prompt),
        }
    }
}
