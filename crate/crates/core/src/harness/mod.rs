//! Examinee harness: prompt rendering, backends, answer extraction and
//! sessions that turn a bank partition into one row of 0/1 scores.
//!
//! Answer extraction runs in two stages. Rule patterns are tried first and
//! never touch the backend; only when they leave zero or several candidate
//! labels is the option-extraction follow-up sent. A reply that is still not
//! a single valid label is recorded as [`ExtractionMethod::Failed`] and scored
//! incorrect.

mod backend;
mod extract;
mod prompt;
mod remote;
mod session;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::item_bank::Grade;

pub use backend::{
    mock_answer, Backend, BackendConfig, BackendError, CountingBackend, MockBackend, MockPolicy, Query,
    QueryKind, RetryPolicy, Script, ScriptedBackend,
};
pub use extract::{extract_choice, parse_followup, rule_based, ExtractionRule, Extractor, RuleOutcome};
pub use prompt::{format_options, render_prompt, PromptKind, PromptMode, TemplateSet};
pub use remote::{RemoteBackend, RemoteConfig, RemoteRequest, RemoteResponse, API_KEY_ENV};
pub use session::{
    append_transcript, read_transcript, replay_session, run_session, SessionConfig, SessionError,
    SessionOutcome, SessionReport, TranscriptEntry,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("prompt mode {0} needs a target grade")]
    MissingGrade(PromptKind),
    #[error("unenforced prompting takes no target grade (got grade {0})")]
    UnexpectedGrade(Grade),
    #[error("template error: {0}")]
    Template(String),
    #[error("backend failed after {attempts} attempt(s): {source}")]
    Backend {
        attempts: u32,
        #[source]
        source: BackendError,
    },
}

/// Which extraction stage produced the recorded label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExtractionMethod {
    RuleBased,
    FollowUpPrompt,
    Failed,
}

/// One examinee response to one item together with its extracted label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub item_id: String,
    pub mode: PromptMode,
    pub text: String,
    /// Present only when `extraction_method` is not `Failed`; always one of
    /// the item's labels.
    pub extracted: Option<char>,
    pub extraction_method: ExtractionMethod,
    /// The rule that fired when `extraction_method` is `RuleBased`.
    pub rule: Option<ExtractionRule>,
    pub followup_prompt: Option<String>,
    pub followup_text: Option<String>,
}

impl RawResponse {
    pub fn is_correct(&self, correct_label: char) -> bool {
        self.extracted == Some(correct_label)
    }
}
