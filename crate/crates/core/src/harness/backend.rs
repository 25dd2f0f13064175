//! Examinee backends and the retry wrapper.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::remote::{RemoteBackend, RemoteConfig};
use super::{HarnessError, PromptMode};
use crate::item_bank::{correct_rate, Item};
use crate::rasch::{item_difficulty, response_probability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    /// The rendered question prompt.
    Answer,
    /// The option-extraction follow-up.
    Extraction,
}

/// Everything a backend may look at when completing a prompt.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub item: &'a Item,
    pub mode: &'a PromptMode,
    pub kind: QueryKind,
    pub prompt: &'a str,
    pub seed: u64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed reply: {0}")]
    Protocol(String),
    #[error("no scripted reply for item `{item_id}` ({kind:?})")]
    Unscripted { item_id: String, kind: QueryKind },
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Transport errors, rate limits and server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> String;

    fn complete(&self, query: &Query<'_>) -> Result<String, BackendError>;

    /// Upper bound on concurrent `complete` calls within one session.
    fn max_in_flight(&self) -> usize {
        1
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn name(&self) -> String {
        (**self).name()
    }

    fn complete(&self, query: &Query<'_>) -> Result<String, BackendError> {
        (**self).complete(query)
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn complete(&self, query: &Query<'_>) -> Result<String, BackendError> {
        (**self).complete(query)
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn complete(&self, query: &Query<'_>) -> Result<String, BackendError> {
        (**self).complete(query)
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

/// Answering behaviour of [`MockBackend`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum MockPolicy {
    AlwaysCorrect,
    Fixed { label: char },
    UniformRandom,
    /// A simulated student of ability `theta`; difficulties come from each
    /// item's population correct-rate.
    Rasch { theta: f64 },
}

/// Offline examinee. Replies are a pure function of (seed, item id, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockBackend {
    pub policy: MockPolicy,
    /// Reply to option-extraction follow-ups.
    #[serde(default = "default_followup")]
    pub followup: String,
}

fn default_followup() -> String {
    "NONE".to_string()
}

impl MockBackend {
    pub fn new(policy: MockPolicy) -> Self {
        MockBackend {
            policy,
            followup: default_followup(),
        }
    }

    pub fn with_followup(mut self, reply: impl Into<String>) -> Self {
        self.followup = reply.into();
        self
    }
}

fn query_rng(seed: u64, item: &Item, mode: &PromptMode) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(item.id.as_bytes());
    h.update([0x1f]);
    h.update(mode.label().as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// The label a mock policy picks for `item`.
pub fn mock_answer(policy: MockPolicy, item: &Item, mode: &PromptMode, seed: u64) -> char {
    let mut rng = query_rng(seed, item, mode);
    match policy {
        MockPolicy::AlwaysCorrect => item.correct_label,
        MockPolicy::Fixed { label } => label,
        MockPolicy::UniformRandom => item.options[rng.random_range(0..item.options.len())].label,
        MockPolicy::Rasch { theta } => {
            let b = item_difficulty(correct_rate(item)).expect("clamped rate is in (0, 1)");
            if rng.random::<f64>() < response_probability(theta, b) {
                item.correct_label
            } else {
                let wrong: Vec<char> = item.labels().filter(|&l| l != item.correct_label).collect();
                if wrong.is_empty() {
                    item.correct_label
                } else {
                    wrong[rng.random_range(0..wrong.len())]
                }
            }
        }
    }
}

impl Backend for MockBackend {
    fn name(&self) -> String {
        match self.policy {
            MockPolicy::AlwaysCorrect => "mock:correct".into(),
            MockPolicy::Fixed { label } => format!("mock:fixed={label}"),
            MockPolicy::UniformRandom => "mock:random".into(),
            MockPolicy::Rasch { theta } => format!("mock:rasch={theta}"),
        }
    }

    fn complete(&self, query: &Query<'_>) -> Result<String, BackendError> {
        Ok(match query.kind {
            QueryKind::Answer => format!(
                "Answer: {}",
                mock_answer(self.policy, query.item, query.mode, query.seed)
            ),
            QueryKind::Extraction => self.followup.clone(),
        })
    }
}

/// Canned replies keyed by item id, for tests and offline fixtures.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
    #[serde(default)]
    pub followups: BTreeMap<String, String>,
    /// Reply to follow-ups for items without an entry in `followups`.
    #[serde(default)]
    pub default_followup: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedBackend {
    pub script: Script,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        ScriptedBackend { script }
    }

    /// A backend that gives `answer` for `item_id` and `followup` to any
    /// follow-up.
    pub fn single(item_id: &str, answer: &str, followup: Option<&str>) -> Self {
        ScriptedBackend::new(Script {
            answers: [(item_id.to_string(), answer.to_string())].into_iter().collect(),
            followups: BTreeMap::new(),
            default_followup: followup.map(str::to_string),
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let script = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Ok(ScriptedBackend { script })
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, query: &Query<'_>) -> Result<String, BackendError> {
        let id = &query.item.id;
        let reply = match query.kind {
            QueryKind::Answer => self.script.answers.get(id),
            QueryKind::Extraction => self
                .script
                .followups
                .get(id)
                .or(self.script.default_followup.as_ref()),
        };
        reply.cloned().ok_or_else(|| BackendError::Unscripted {
            item_id: id.clone(),
            kind: query.kind,
        })
    }
}

/// Wraps a backend and counts calls by kind.
#[derive(Debug, Default)]
pub struct CountingBackend<B> {
    pub inner: B,
    answers: AtomicUsize,
    extractions: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            answers: AtomicUsize::new(0),
            extractions: AtomicUsize::new(0),
        }
    }

    pub fn answer_calls(&self) -> usize {
        self.answers.load(Ordering::SeqCst)
    }

    pub fn extraction_calls(&self) -> usize {
        self.extractions.load(Ordering::SeqCst)
    }

    pub fn total_calls(&self) -> usize {
        self.answer_calls() + self.extraction_calls()
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn complete(&self, query: &Query<'_>) -> Result<String, BackendError> {
        match query.kind {
            QueryKind::Answer => self.answers.fetch_add(1, Ordering::SeqCst),
            QueryKind::Extraction => self.extractions.fetch_add(1, Ordering::SeqCst),
        };
        self.inner.complete(query)
    }

    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }
}

/// Bounded retries with exponential backoff: attempt `k` (from 1) that fails
/// with a retryable error sleeps `base_delay * 2^(k-1)` before the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        RetryPolicy {
            base_delay: Duration::ZERO,
            ..RetryPolicy::default()
        }
    }

    pub fn call(&self, backend: &dyn Backend, query: &Query<'_>) -> Result<String, HarnessError> {
        let attempts = self.attempts.max(1);
        let mut attempt = 1;
        loop {
            match backend.complete(query) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempt < attempts => {
                    thread::sleep(self.base_delay * 2u32.pow(attempt - 1));
                    attempt += 1;
                }
                Err(source) => return Err(HarnessError::Backend { attempts: attempt, source }),
            }
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Serializable backend selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock(MockBackend),
    Scripted { path: PathBuf },
    Remote(RemoteConfig),
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn Backend>, BackendError> {
        Ok(match self {
            BackendConfig::Mock(m) => Box::new(m.clone()),
            BackendConfig::Scripted { path } => Box::new(ScriptedBackend::from_file(path)?),
            BackendConfig::Remote(cfg) => Box::new(RemoteBackend::new(cfg.clone())?),
        })
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, BackendConfig::Remote(_))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::cohort::{synthetic_bank, SyntheticBankSpec};
    use crate::item_bank::{Grade, Subject};

    fn items(n: usize) -> Vec<Item> {
        let spec = SyntheticBankSpec {
            partitions: vec![(Subject::Mathematics, Grade::G4, n)],
            n_options: 4,
            p_range: (0.3, 0.9),
        };
        synthetic_bank(&spec, 11).items().to_vec()
    }

    fn answer(backend: &dyn Backend, item: &Item, seed: u64) -> String {
        let mode = PromptMode::unenforced();
        backend
            .complete(&Query {
                item,
                mode: &mode,
                kind: QueryKind::Answer,
                prompt: "",
                seed,
            })
            .unwrap()
    }

    #[test]
    fn mock_is_deterministic_per_item_and_mode() {
        let its = items(50);
        let m = MockBackend::new(MockPolicy::UniformRandom);
        let a: Vec<_> = its.iter().map(|i| answer(&m, i, 3)).collect();
        let b: Vec<_> = its.iter().map(|i| answer(&m, i, 3)).collect();
        assert_eq!(a, b);
        let c: Vec<_> = its.iter().map(|i| answer(&m, i, 4)).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn mock_answers_differ_across_modes() {
        let its = items(50);
        let u = PromptMode::unenforced();
        let e = PromptMode::for_grade(super::super::PromptKind::GradeEnforcedMinimal, Grade::G4);
        let differs = its
            .iter()
            .filter(|i| {
                mock_answer(MockPolicy::UniformRandom, i, &u, 0)
                    != mock_answer(MockPolicy::UniformRandom, i, &e, 0)
            })
            .count();
        assert!(differs > 10);
    }

    #[test]
    fn always_correct_and_fixed() {
        let its = items(10);
        for it in &its {
            assert_eq!(
                answer(&MockBackend::new(MockPolicy::AlwaysCorrect), it, 0),
                format!("Answer: {}", it.correct_label)
            );
            assert_eq!(answer(&MockBackend::new(MockPolicy::Fixed { label: 'C' }), it, 0), "Answer: C");
        }
    }

    #[test]
    fn rasch_mock_tracks_probability() {
        // Very high and very low ability saturate.
        let its = items(200);
        let u = PromptMode::unenforced();
        let hi = its
            .iter()
            .filter(|i| mock_answer(MockPolicy::Rasch { theta: 6.0 }, i, &u, 1) == i.correct_label)
            .count();
        let lo = its
            .iter()
            .filter(|i| mock_answer(MockPolicy::Rasch { theta: -6.0 }, i, &u, 1) == i.correct_label)
            .count();
        assert!(hi > 190, "{hi}");
        assert!(lo < 10, "{lo}");
    }

    #[test]
    fn scripted_missing_entry_is_not_retryable() {
        let its = items(1);
        let s = ScriptedBackend::default();
        let mode = PromptMode::unenforced();
        let err = s
            .complete(&Query {
                item: &its[0],
                mode: &mode,
                kind: QueryKind::Answer,
                prompt: "",
                seed: 0,
            })
            .unwrap_err();
        assert!(!err.is_retryable());
    }

    struct Flaky {
        failures: Mutex<u32>,
        error: BackendError,
    }

    impl Backend for Flaky {
        fn name(&self) -> String {
            "flaky".into()
        }

        fn complete(&self, _: &Query<'_>) -> Result<String, BackendError> {
            let mut left = self.failures.lock().unwrap();
            if *left == 0 {
                Ok("Answer: A".into())
            } else {
                *left -= 1;
                Err(self.error.clone())
            }
        }
    }

    fn run_flaky(failures: u32, error: BackendError) -> (Result<String, HarnessError>, usize) {
        let its = items(1);
        let mode = PromptMode::unenforced();
        let b = CountingBackend::new(Flaky {
            failures: Mutex::new(failures),
            error,
        });
        let q = Query {
            item: &its[0],
            mode: &mode,
            kind: QueryKind::Answer,
            prompt: "",
            seed: 0,
        };
        let r = RetryPolicy::no_delay().call(&b, &q);
        (r, b.total_calls())
    }

    #[test]
    fn retry_recovers_within_three_attempts() {
        let (r, calls) = run_flaky(2, BackendError::Transport("reset".into()));
        assert_eq!(r.unwrap(), "Answer: A");
        assert_eq!(calls, 3);
    }

    #[test]
    fn retry_gives_up_after_three_attempts() {
        let (r, calls) = run_flaky(5, BackendError::Status { status: 503, body: String::new() });
        assert!(matches!(r, Err(HarnessError::Backend { attempts: 3, .. })));
        assert_eq!(calls, 3);
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let (r, calls) = run_flaky(5, BackendError::Status { status: 401, body: String::new() });
        assert!(matches!(r, Err(HarnessError::Backend { attempts: 1, .. })));
        assert_eq!(calls, 1);
    }

    #[test]
    fn backend_config_round_trip() {
        let cfg = BackendConfig::Mock(MockBackend::new(MockPolicy::Rasch { theta: 0.5 }));
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<BackendConfig>(&json).unwrap(), cfg);
    }
}
