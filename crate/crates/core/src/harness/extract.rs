//! Two-stage option extraction.
//!
//! Stage one tries these rules in order, stopping at the first that finds any
//! candidate:
//!
//! 1. `Answer: X` tags (case-insensitive keyword, uppercase letter),
//! 2. `(X)` as the final token of the response,
//! 3. an option's text appearing verbatim (whole words, case-insensitive) in
//!    the last non-empty line,
//! 4. standalone capital letters anywhere in the text. `A` and `I` followed by
//!    an ordinary lowercase word are read as English, not labels.
//!
//! A rule yields a label only when all of its candidates agree and the label
//! belongs to the item. Disagreement or an unknown label sends the response
//! to the follow-up prompt, as does a response no rule matches.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::backend::{Backend, Query, QueryKind, RetryPolicy};
use super::prompt::TemplateSet;
use super::{ExtractionMethod, HarnessError, PromptMode, RawResponse};
use crate::item_bank::Item;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionRule {
    AnswerTag,
    FinalParenthesized,
    OptionText,
    StandaloneLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleOutcome {
    Extracted { label: char, rule: ExtractionRule },
    /// The first matching rule found conflicting or out-of-range labels.
    Ambiguous { rule: ExtractionRule, candidates: Vec<char> },
    NoMatch,
}

static ANSWER_TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i:\banswer)\s*:\s*[*_]*\(?([A-Z])\)?[*_]*(?:[^A-Za-z0-9]|$)").unwrap()
});
static FINAL_PAREN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(([A-Z])\)$").unwrap());
static STANDALONE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-Z])\b").unwrap());
static NEXT_WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s+([a-z]+)").unwrap());

/// Words after `A` that still indicate a label ("A is correct").
const A_CONTEXT: &[&str] = &[
    "is", "was", "seems", "looks", "would", "could", "should", "must", "and", "or", "because",
    "since", "matches", "fits", "appears",
];
/// The same for `I`, minus words that also follow the pronoun.
const I_CONTEXT: &[&str] = &["is", "was", "seems", "looks", "matches", "fits", "appears"];

fn decide(rule: ExtractionRule, mut found: Vec<char>, item: &Item) -> RuleOutcome {
    if found.is_empty() {
        return RuleOutcome::NoMatch;
    }
    found.sort_unstable();
    found.dedup();
    match found.as_slice() {
        [label] if item.has_label(*label) => RuleOutcome::Extracted { label: *label, rule },
        _ => RuleOutcome::Ambiguous {
            rule,
            candidates: found,
        },
    }
}

fn answer_tags(text: &str) -> Vec<char> {
    ANSWER_TAG
        .captures_iter(text)
        .filter_map(|c| c[1].chars().next())
        .collect()
}

fn final_parenthesized(text: &str) -> Vec<char> {
    let Some(last) = text.split_whitespace().last() else {
        return vec![];
    };
    let token = last.trim_end_matches(|c: char| ".,;:!?\"'*_".contains(c));
    FINAL_PAREN
        .captures(token)
        .and_then(|c| c[1].chars().next())
        .into_iter()
        .collect()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Case-insensitive whole-word occurrences of `needle` in `hay`, as byte spans.
fn word_spans(hay: &str, needle: &str) -> Vec<(usize, usize)> {
    let needle = needle.trim().to_lowercase();
    if needle.is_empty() {
        return vec![];
    }
    let lower = hay.to_lowercase();
    let mut spans = Vec::new();
    let mut from = 0;
    while let Some(pos) = lower[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before = lower[..start].chars().next_back();
        let after = lower[end..].chars().next();
        let bounded_left = before.is_none_or(|c| !is_word_char(c)) || !needle.starts_with(is_word_char);
        let bounded_right = after.is_none_or(|c| !is_word_char(c)) || !needle.ends_with(is_word_char);
        if bounded_left && bounded_right {
            spans.push((start, end));
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    spans
}

fn option_text_matches(text: &str, item: &Item) -> Vec<char> {
    let Some(line) = text.lines().rev().find(|l| !l.trim().is_empty()) else {
        return vec![];
    };
    let hits: Vec<(char, Vec<(usize, usize)>)> = item
        .options
        .iter()
        .map(|o| (o.label, word_spans(line, &o.text)))
        .filter(|(_, spans)| !spans.is_empty())
        .collect();
    // An option whose every occurrence sits inside a longer matching option
    // ("red" inside "dark red") is not a separate match.
    hits.iter()
        .filter(|(label, spans)| {
            spans.iter().any(|&(s, e)| {
                !hits.iter().any(|(other, os)| {
                    other != label && os.iter().any(|&(s2, e2)| s2 <= s && e <= e2 && e2 - s2 > e - s)
                })
            })
        })
        .map(|(l, _)| *l)
        .collect()
}

fn standalone_labels(text: &str) -> Vec<char> {
    STANDALONE
        .captures_iter(text)
        .filter_map(|c| {
            let m = c.get(1).unwrap();
            let label = m.as_str().chars().next()?;
            if label == 'A' || label == 'I' {
                if let Some(next) = NEXT_WORD.captures(&text[m.end()..]) {
                    let context = if label == 'A' { A_CONTEXT } else { I_CONTEXT };
                    if !context.contains(&&next[1]) {
                        return None;
                    }
                }
            }
            Some(label)
        })
        .collect()
}

type RuleFn = fn(&str, &Item) -> Vec<char>;

/// Stage one. Pure: never consults a backend.
pub fn rule_based(text: &str, item: &Item) -> RuleOutcome {
    let rules: [(ExtractionRule, RuleFn); 4] = [
        (ExtractionRule::AnswerTag, |t, _| answer_tags(t)),
        (ExtractionRule::FinalParenthesized, |t, _| final_parenthesized(t)),
        (ExtractionRule::OptionText, option_text_matches),
        (ExtractionRule::StandaloneLabel, |t, _| standalone_labels(t)),
    ];
    for (rule, find) in rules {
        let outcome = decide(rule, find(text, item), item);
        if outcome != RuleOutcome::NoMatch {
            return outcome;
        }
    }
    RuleOutcome::NoMatch
}

/// Reads a follow-up reply as a single option label.
///
/// Accepts a bare letter with optional surrounding parentheses, asterisks,
/// quotes, trailing period or a leading `Answer:`. Anything else, including
/// `NONE` and labels the item does not have, yields `None`.
pub fn parse_followup(reply: &str, item: &Item) -> Option<char> {
    let mut s = reply.trim();
    if let Some(rest) = s.get(..7).filter(|p| p.eq_ignore_ascii_case("answer:")) {
        s = s[rest.len()..].trim_start();
    }
    let s = s.trim_matches(|c: char| "()[]*\"'`. ".contains(c));
    let mut chars = s.chars();
    let label = chars.next()?.to_ascii_uppercase();
    if chars.next().is_some() || !label.is_ascii_uppercase() {
        return None;
    }
    item.has_label(label).then_some(label)
}

/// Runs both extraction stages against a backend.
#[derive(Debug, Clone)]
pub struct Extractor<'a> {
    pub templates: &'a TemplateSet,
    pub retry: RetryPolicy,
    pub seed: u64,
}

impl Extractor<'_> {
    /// Extracts a label from `response`. Errors only when the follow-up
    /// cannot be delivered; an unusable reply is `Failed`, not an error.
    pub fn extract(
        &self,
        response: &str,
        item: &Item,
        mode: &PromptMode,
        backend: &dyn Backend,
    ) -> Result<RawResponse, HarnessError> {
        let mut raw = RawResponse {
            item_id: item.id.clone(),
            mode: *mode,
            text: response.to_string(),
            extracted: None,
            extraction_method: ExtractionMethod::Failed,
            rule: None,
            followup_prompt: None,
            followup_text: None,
        };
        if response.trim().is_empty() {
            return Ok(raw);
        }
        if let RuleOutcome::Extracted { label, rule } = rule_based(response, item) {
            raw.extracted = Some(label);
            raw.extraction_method = ExtractionMethod::RuleBased;
            raw.rule = Some(rule);
            return Ok(raw);
        }
        let prompt = self.templates.render_extraction(item, response)?;
        let reply = self.retry.call(
            backend,
            &Query {
                item,
                mode,
                kind: QueryKind::Extraction,
                prompt: &prompt,
                seed: self.seed,
            },
        )?;
        if let Some(label) = parse_followup(&reply, item) {
            raw.extracted = Some(label);
            raw.extraction_method = ExtractionMethod::FollowUpPrompt;
        }
        raw.followup_prompt = Some(prompt);
        raw.followup_text = Some(reply);
        Ok(raw)
    }
}

/// [`Extractor::extract`] with the built-in templates and default retries.
pub fn extract_choice(
    response: &str,
    item: &Item,
    mode: &PromptMode,
    backend: &dyn Backend,
) -> Result<RawResponse, HarnessError> {
    let templates = TemplateSet::builtin();
    Extractor {
        templates: &templates,
        retry: RetryPolicy::default(),
        seed: 0,
    }
    .extract(response, item, mode, backend)
}
