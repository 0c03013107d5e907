//! Chat backends behind one trait: a networked chat-completions client,
//! a scripted replayer and a planner-backed oracle.

mod http;
mod oracle;
mod scripted;

use std::ops::AddAssign;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridMap;
use crate::prompting::{Message, Mode, Role};

pub use http::{HttpChat, HttpConfig, RateLimiter};
pub use oracle::{parse_scenario_text, OracleAgent};
pub use scripted::{ScriptItem, ScriptedBackend};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempts: {msg}")]
    Transport { attempts: u32, msg: String },
    #[error("rate limited by the provider")]
    RateLimited { retry_after_secs: Option<u64> },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("scripted backend has no responses left")]
    ScriptExhausted,
    #[error("oracle failed: {0}")]
    Oracle(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl AddAssign for Usage {
    fn add_assign(&mut self, o: Usage) {
        self.prompt_tokens += o.prompt_tokens;
        self.completion_tokens += o.completion_tokens;
    }
}

/// ceil(chars / 4): a tokenizer-free stand-in used when the provider
/// reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// tokens-per-agent-step x steps x agents.
pub fn context_estimate(tokens_per_agent_step: u64, steps: u64, agents: u64) -> u64 {
    tokens_per_agent_step
        .saturating_mul(steps)
        .saturating_mul(agents)
}

pub struct ChatRequest<'a> {
    pub messages: &'a [Message],
    pub model_id: &'a str,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Provider-reported usage, if any.
    pub usage: Option<Usage>,
}

pub trait ChatBackend: Send {
    /// Stable name used in run ids.
    fn label(&self) -> String;

    fn model_id(&self) -> String {
        self.label()
    }

    fn supports_images(&self) -> bool {
        true
    }

    fn complete(&mut self, req: &ChatRequest<'_>) -> Result<Completion, BackendError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    pub usage: Usage,
    /// `false` when `usage` is the character-count estimate.
    pub reported: bool,
}

/// One conversation: a leading system message, then alternating
/// user/assistant turns.
#[derive(Debug, Clone)]
pub struct ChatSession {
    history: Vec<Message>,
    pub model_id: String,
    pub temperature: f64,
    pub seed: u64,
    usage: Usage,
}

impl ChatSession {
    pub fn new(system: Message, model_id: impl Into<String>) -> Self {
        Self {
            history: vec![system],
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            seed: DEFAULT_SEED,
            usage: Usage::default(),
        }
    }

    pub fn with_sampling(mut self, temperature: f64, seed: u64) -> Self {
        self.temperature = temperature;
        self.seed = seed;
        self
    }

    pub fn history(&self) -> &[Message] {
        &self.history
    }

    /// Cumulative usage over every call of this session.
    pub fn usage(&self) -> Usage {
        self.usage
    }

    /// Appends `msg`, queries the backend and appends the reply. On error the
    /// history is left as it was before the call.
    pub fn send(&mut self, backend: &mut dyn ChatBackend, msg: Message) -> Result<Reply, BackendError> {
        debug_assert_eq!(msg.role, Role::User);
        self.history.push(msg);
        let result = backend.complete(&ChatRequest {
            messages: &self.history,
            model_id: &self.model_id,
            temperature: self.temperature,
            seed: self.seed,
        });
        let completion = match result {
            Ok(c) => c,
            Err(e) => {
                self.history.pop();
                return Err(e);
            }
        };
        let (usage, reported) = match completion.usage {
            Some(u) => (u, true),
            None => (
                Usage {
                    prompt_tokens: self.history.iter().map(|m| estimate_tokens(&m.text)).sum(),
                    completion_tokens: estimate_tokens(&completion.text),
                },
                false,
            ),
        };
        self.usage += usage;
        self.history.push(Message::assistant(completion.text.clone()));
        Ok(Reply {
            text: completion.text,
            usage,
            reported,
        })
    }
}

/// Backend selection as written in suite configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Oracle {
        #[serde(default = "default_oracle_restarts")]
        restarts: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Scripted {
        responses: Vec<String>,
        #[serde(default)]
        cycle: bool,
    },
    Http(HttpConfig),
}

fn default_oracle_restarts() -> usize {
    20
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl BackendSpec {
    pub fn oracle() -> Self {
        BackendSpec::Oracle {
            restarts: default_oracle_restarts(),
            seed: DEFAULT_SEED,
        }
    }

    pub fn label(&self) -> String {
        match self {
            BackendSpec::Oracle { .. } => "oracle".into(),
            BackendSpec::Scripted { .. } => "scripted".into(),
            BackendSpec::Http(c) => format!("http-{}", c.model),
        }
    }
}

/// Builds one backend per run; HTTP backends share a client and rate limiter.
pub struct BackendFactory {
    spec: BackendSpec,
    http: Option<(reqwest::blocking::Client, Arc<RateLimiter>)>,
}

impl BackendFactory {
    pub fn new(spec: BackendSpec) -> Result<Self, BackendError> {
        let http = match &spec {
            BackendSpec::Http(cfg) => Some((cfg.client()?, Arc::new(cfg.rate_limiter()))),
            _ => None,
        };
        Ok(Self { spec, http })
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    pub fn build(&self, map: &GridMap, mode: Mode) -> Result<Box<dyn ChatBackend>, BackendError> {
        Ok(match &self.spec {
            BackendSpec::Oracle { restarts, seed } => {
                Box::new(OracleAgent::new(map.clone(), mode).with_restarts(*restarts, *seed))
            }
            BackendSpec::Scripted { responses, cycle } => {
                let items = responses.iter().cloned().map(ScriptItem::Reply).collect();
                if *cycle {
                    Box::new(ScriptedBackend::cycle(items))
                } else {
                    Box::new(ScriptedBackend::new(items))
                }
            }
            BackendSpec::Http(cfg) => {
                let (client, limiter) = self.http.clone().expect("http resources built");
                Box::new(HttpChat::with_client(cfg.clone(), client, limiter))
            }
        })
    }
}
