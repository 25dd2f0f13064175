//! Sessions: one examinee, one prompt mode, one bank partition.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::backend::{Backend, Query, QueryKind, RetryPolicy};
use super::extract::{ExtractionRule, Extractor};
use super::prompt::TemplateSet;
use super::{ExtractionMethod, HarnessError, PromptMode};
use crate::item_bank::{Grade, Item, Subject};
use crate::rasch::ResponseVector;

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub examinee: String,
    pub mode: PromptMode,
    pub seed: u64,
    pub retry: RetryPolicy,
    pub templates: TemplateSet,
}

impl SessionConfig {
    pub fn new(examinee: impl Into<String>, mode: PromptMode, seed: u64) -> Self {
        SessionConfig {
            examinee: examinee.into(),
            mode,
            seed,
            retry: RetryPolicy::default(),
            templates: TemplateSet::builtin(),
        }
    }
}

/// One line of the audit transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub examinee: String,
    pub backend: String,
    pub item_id: String,
    pub subject: Subject,
    pub grade: Grade,
    pub mode: PromptMode,
    pub template_version: String,
    pub seed: u64,
    pub prompt: String,
    pub response: String,
    pub extracted: Option<char>,
    pub extraction_method: ExtractionMethod,
    pub rule: Option<ExtractionRule>,
    pub followup_prompt: Option<String>,
    pub followup_text: Option<String>,
    pub correct_label: char,
    pub score: u8,
    /// RFC 3339, UTC. Never used in any derived artifact.
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionReport {
    pub examinee: String,
    pub backend: String,
    pub mode: PromptMode,
    pub template_version: String,
    pub n_items: usize,
    pub n_correct: usize,
    pub n_rule_based: usize,
    pub n_followup: usize,
    /// Extractions that produced no label; each is scored 0.
    pub n_failed: usize,
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub responses: ResponseVector,
    pub transcript: Vec<TranscriptEntry>,
    pub report: SessionReport,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session needs at least one item")]
    EmptyPartition,
    /// The backend gave up on `item_id`. `partial` holds every entry that
    /// completed before the abort, in item order.
    #[error("item `{item_id}`: {source}")]
    Aborted {
        item_id: String,
        #[source]
        source: HarnessError,
        partial: Vec<TranscriptEntry>,
    },
    #[error("replay: {0}")]
    Replay(String),
    #[error("transcript {path}: {message}")]
    Transcript { path: String, message: String },
}

fn query_item(
    item: &Item,
    config: &SessionConfig,
    backend: &dyn Backend,
) -> Result<TranscriptEntry, HarnessError> {
    let prompt = config.templates.render_prompt(item, &config.mode)?;
    let response = config.retry.call(
        backend,
        &Query {
            item,
            mode: &config.mode,
            kind: QueryKind::Answer,
            prompt: &prompt,
            seed: config.seed,
        },
    )?;
    let raw = Extractor {
        templates: &config.templates,
        retry: config.retry,
        seed: config.seed,
    }
    .extract(&response, item, &config.mode, backend)?;
    Ok(TranscriptEntry {
        examinee: config.examinee.clone(),
        backend: backend.name(),
        item_id: item.id.clone(),
        subject: item.subject,
        grade: item.grade,
        mode: config.mode,
        template_version: config.templates.version().to_string(),
        seed: config.seed,
        prompt,
        response,
        extracted: raw.extracted,
        extraction_method: raw.extraction_method,
        rule: raw.rule,
        followup_prompt: raw.followup_prompt,
        followup_text: raw.followup_text,
        correct_label: item.correct_label,
        score: u8::from(raw.extracted == Some(item.correct_label)),
        timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
    })
}

fn summarize(transcript: Vec<TranscriptEntry>) -> SessionOutcome {
    let first = &transcript[0];
    let count = |m: ExtractionMethod| transcript.iter().filter(|e| e.extraction_method == m).count();
    let report = SessionReport {
        examinee: first.examinee.clone(),
        backend: first.backend.clone(),
        mode: first.mode,
        template_version: first.template_version.clone(),
        n_items: transcript.len(),
        n_correct: transcript.iter().map(|e| e.score as usize).sum(),
        n_rule_based: count(ExtractionMethod::RuleBased),
        n_followup: count(ExtractionMethod::FollowUpPrompt),
        n_failed: count(ExtractionMethod::Failed),
    };
    let responses = ResponseVector::new(
        transcript.iter().map(|e| e.item_id.clone()).collect(),
        transcript.iter().map(|e| e.score).collect(),
    )
    .expect("scores are binary");
    SessionOutcome {
        responses,
        transcript,
        report,
    }
}

/// Presents every item to `backend` and scores the extracted labels.
///
/// Up to `backend.max_in_flight()` items are queried concurrently; results
/// are always assembled in item order. The first item whose backend call
/// exhausts its retries aborts the session.
pub fn run_session(
    items: &[Item],
    config: &SessionConfig,
    backend: &dyn Backend,
) -> Result<SessionOutcome, SessionError> {
    if items.is_empty() {
        return Err(SessionError::EmptyPartition);
    }
    let workers = backend.max_in_flight().clamp(1, items.len());
    let mut results: Vec<Option<Result<TranscriptEntry, HarnessError>>> = if workers == 1 {
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            let r = query_item(item, config, backend);
            let failed = r.is_err();
            out.push(Some(r));
            if failed {
                break;
            }
        }
        out.resize_with(items.len(), || None);
        out
    } else {
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let slots = Mutex::new((0..items.len()).map(|_| None).collect::<Vec<_>>());
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let r = query_item(&items[i], config, backend);
                    if r.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    slots.lock().unwrap()[i] = Some(r);
                });
            }
        });
        slots.into_inner().unwrap()
    };

    if let Some(pos) = results.iter().position(|r| matches!(r, Some(Err(_)))) {
        let Some(Err(source)) = results[pos].take() else { unreachable!() };
        let partial = results.into_iter().flatten().filter_map(Result::ok).collect();
        return Err(SessionError::Aborted {
            item_id: items[pos].id.clone(),
            source,
            partial,
        });
    }
    let transcript = results
        .into_iter()
        .map(|r| r.expect("every slot filled").expect("no errors"))
        .collect();
    Ok(summarize(transcript))
}

/// Rebuilds a session from its transcript without contacting any backend.
///
/// `entries` must hold exactly one entry per item, all for the same examinee
/// and mode. Scores are recomputed from the recorded labels and the current
/// answer key.
pub fn replay_session(items: &[Item], entries: &[TranscriptEntry]) -> Result<SessionOutcome, SessionError> {
    if items.is_empty() {
        return Err(SessionError::EmptyPartition);
    }
    let Some(first) = entries.first() else {
        return Err(SessionError::Replay("no transcript entries".into()));
    };
    if let Some(e) = entries
        .iter()
        .find(|e| e.examinee != first.examinee || e.mode != first.mode)
    {
        return Err(SessionError::Replay(format!(
            "mixed sessions: {}/{} and {}/{}",
            first.examinee, first.mode, e.examinee, e.mode
        )));
    }
    if entries.len() != items.len() {
        return Err(SessionError::Replay(format!(
            "{} entries for {} items",
            entries.len(),
            items.len()
        )));
    }
    let mut transcript = Vec::with_capacity(items.len());
    for item in items {
        let mut hits = entries.iter().filter(|e| e.item_id == item.id);
        let (Some(entry), None) = (hits.next(), hits.next()) else {
            return Err(SessionError::Replay(format!(
                "item `{}` must appear exactly once",
                item.id
            )));
        };
        if let Some(l) = entry.extracted {
            if !item.has_label(l) {
                return Err(SessionError::Replay(format!(
                    "item `{}`: recorded label {l} is not an option",
                    item.id
                )));
            }
        }
        let mut entry = entry.clone();
        entry.correct_label = item.correct_label;
        entry.score = u8::from(entry.extracted == Some(item.correct_label));
        transcript.push(entry);
    }
    Ok(summarize(transcript))
}

/// Appends entries as JSON lines, creating the file if needed.
pub fn append_transcript(path: impl AsRef<Path>, entries: &[TranscriptEntry]) -> Result<(), SessionError> {
    let path = path.as_ref();
    let err = |message: String| SessionError::Transcript {
        path: path.display().to_string(),
        message,
    };
    let mut buf = String::new();
    for e in entries {
        buf.push_str(&serde_json::to_string(e).map_err(|e| err(e.to_string()))?);
        buf.push('\n');
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| err(e.to_string()))?;
    file.write_all(buf.as_bytes()).map_err(|e| err(e.to_string()))
}

pub fn read_transcript(path: impl AsRef<Path>) -> Result<Vec<TranscriptEntry>, SessionError> {
    let path = path.as_ref();
    let err = |message: String| SessionError::Transcript {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| err(format!("line {}: {e}", i + 1))))
        .collect()
}
