use std::collections::VecDeque;

use super::{BackendError, ChatBackend, ChatRequest, Completion};

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptItem {
    Reply(String),
    RateLimited,
    Transport(String),
}

/// Replays canned replies in order. In cycle mode the script repeats
/// forever; otherwise an exhausted script either errors or hands over to a
/// fallback backend.
pub struct ScriptedBackend {
    items: VecDeque<ScriptItem>,
    cycle: bool,
    fallback: Option<Box<dyn ChatBackend>>,
    served: usize,
}

impl ScriptedBackend {
    pub fn new(items: Vec<ScriptItem>) -> Self {
        Self {
            items: items.into(),
            cycle: false,
            fallback: None,
            served: 0,
        }
    }

    pub fn replies<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().map(|t| ScriptItem::Reply(t.into())).collect())
    }

    pub fn cycle(items: Vec<ScriptItem>) -> Self {
        Self {
            cycle: true,
            ..Self::new(items)
        }
    }

    /// Continue with `next` once the script runs out.
    pub fn then(mut self, next: Box<dyn ChatBackend>) -> Self {
        self.fallback = Some(next);
        self
    }

    pub fn remaining(&self) -> usize {
        self.items.len()
    }

    /// Number of scripted items consumed so far.
    pub fn served(&self) -> usize {
        self.served
    }
}

impl ChatBackend for ScriptedBackend {
    fn label(&self) -> String {
        "scripted".into()
    }

    fn complete(&mut self, req: &ChatRequest<'_>) -> Result<Completion, BackendError> {
        let Some(item) = self.items.pop_front() else {
            return match &mut self.fallback {
                Some(next) => next.complete(req),
                None => Err(BackendError::ScriptExhausted),
            };
        };
        self.served += 1;
        if self.cycle {
            self.items.push_back(item.clone());
        }
        match item {
            ScriptItem::Reply(text) => Ok(Completion { text, usage: None }),
            ScriptItem::RateLimited => Err(BackendError::RateLimited { retry_after_secs: None }),
            ScriptItem::Transport(msg) => Err(BackendError::Transport { attempts: 1, msg }),
        }
    }
}
