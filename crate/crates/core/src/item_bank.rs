//! Multiple-choice item bank with population response statistics.
//!
//! Banks are stored as JSON Lines: one JSON object per item (see
//! `docs/item_bank_schema.md`). An optional first record of the form
//! `{"provenance": "..."}` tags the source. Items are validated on load and
//! the bank is immutable afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Correct-rates are clamped to `[P_EPSILON, 1 - P_EPSILON]` so the logit
/// difficulty stays finite.
pub const P_EPSILON: f64 = 1e-4;

/// Allowed distance of `sum(option_pcts) + omit_pct` from 100.
pub const PCT_SUM_TOLERANCE: f64 = 1.0;

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subject {
    Mathematics,
    Reading,
}

impl Subject {
    pub const ALL: [Subject; 2] = [Subject::Mathematics, Subject::Reading];

    pub fn as_str(self) -> &'static str {
        match self {
            Subject::Mathematics => "Mathematics",
            Subject::Reading => "Reading",
        }
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Subject {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mathematics" | "math" => Ok(Subject::Mathematics),
            "reading" => Ok(Subject::Reading),
            other => Err(format!("unknown subject `{other}` (expected Mathematics or Reading)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Grade {
    G4,
    G8,
    G12,
}

impl Grade {
    pub const ALL: [Grade; 3] = [Grade::G4, Grade::G8, Grade::G12];

    pub fn number(self) -> u8 {
        match self {
            Grade::G4 => 4,
            Grade::G8 => 8,
            Grade::G12 => 12,
        }
    }
}

impl TryFrom<u8> for Grade {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            4 => Ok(Grade::G4),
            8 => Ok(Grade::G8),
            12 => Ok(Grade::G12),
            other => Err(format!("unsupported grade {other} (expected 4, 8 or 12)")),
        }
    }
}

impl From<Grade> for u8 {
    fn from(g: Grade) -> u8 {
        g.number()
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl std::str::FromStr for Grade {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: u8 = s.trim().parse().map_err(|_| format!("invalid grade `{s}`"))?;
        Grade::try_from(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOption {
    pub label: char,
    pub text: String,
}

/// One validated multiple-choice item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub subject: Subject,
    pub grade: Grade,
    /// Question text. Reading items carry their passage inline, before the
    /// question.
    pub stem: String,
    /// Sorted by label.
    pub options: Vec<ItemOption>,
    pub correct_label: char,
    /// Percent of students choosing each option (0-100).
    pub option_pcts: BTreeMap<char, f64>,
    /// Percent of students omitting the item (0-100).
    pub omit_pct: f64,
}

impl Item {
    pub fn labels(&self) -> impl Iterator<Item = char> + '_ {
        self.options.iter().map(|o| o.label)
    }

    pub fn has_label(&self, label: char) -> bool {
        self.options.iter().any(|o| o.label == label)
    }

    pub fn option_text(&self, label: char) -> Option<&str> {
        self.options
            .iter()
            .find(|o| o.label == label)
            .map(|o| o.text.as_str())
    }
}

/// Population correct-rate `p_j`: the share choosing the keyed option, with
/// omissions in the denominator, clamped to `[P_EPSILON, 1 - P_EPSILON]`.
pub fn correct_rate(item: &Item) -> f64 {
    let pct = item.option_pcts.get(&item.correct_label).copied().unwrap_or(0.0);
    clamp_rate(pct / 100.0)
}

pub fn clamp_rate(p: f64) -> f64 {
    p.clamp(P_EPSILON, 1.0 - P_EPSILON)
}

/// Validation rules for a single item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Schema,
    EmptyId,
    DuplicateId,
    OptionCount,
    LabelSequence,
    CorrectLabel,
    PctKeys,
    PctRange,
    PctSum,
    EmptyStem,
    EmptyOptionText,
    NonTextContent,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Schema => "schema",
            Rule::EmptyId => "empty_id",
            Rule::DuplicateId => "duplicate_id",
            Rule::OptionCount => "option_count",
            Rule::LabelSequence => "label_sequence",
            Rule::CorrectLabel => "correct_label",
            Rule::PctKeys => "pct_keys",
            Rule::PctRange => "pct_range",
            Rule::PctSum => "pct_sum",
            Rule::EmptyStem => "empty_stem",
            Rule::EmptyOptionText => "empty_option_text",
            Rule::NonTextContent => "non_text_content",
        };
        f.write_str(s)
    }
}

/// Per-item diagnostic produced during load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the bank file.
    pub line: usize,
    pub item_id: Option<String>,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id = self.item_id.as_deref().unwrap_or("<unknown>");
        write!(f, "line {}: item `{}` violates {}: {}", self.line, id, self.rule, self.message)
    }
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bank file contains no items")]
    Empty,
    #[error("{} item(s) rejected; first: {}", .0.len(), .0[0])]
    Rejected(Vec<Rejection>),
    #[error("no items for {subject} grade {grade}")]
    EmptyPartition { subject: Subject, grade: Grade },
    #[error("cannot serialize bank: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Skip rejected items instead of failing the load.
    pub permissive: bool,
}

#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub bank: ItemBank,
    /// Items skipped under `permissive`; always empty otherwise.
    pub rejected: Vec<Rejection>,
}

/// Immutable collection of validated items.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemBank {
    items: Vec<Item>,
    provenance: String,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceRecord {
    provenance: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawItem {
    id: String,
    subject: Subject,
    grade: Grade,
    stem: String,
    options: Vec<ItemOption>,
    correct_label: char,
    option_pcts: BTreeMap<char, f64>,
    omit_pct: f64,
}

fn non_text_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\[\s*(figure|image|img|table|graph|diagram|chart|picture)\b[^\]]*\]|<\s*(img|table|svg)\b|!\[[^\]]*\]\(|\\includegraphics")
            .expect("valid regex")
    })
}

impl RawItem {
    fn violations(&self) -> Vec<(Rule, String)> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push((Rule::EmptyId, "id is empty".to_string()));
        }
        if self.stem.trim().is_empty() {
            out.push((Rule::EmptyStem, "stem is empty".to_string()));
        }
        let n = self.options.len();
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
            out.push((
                Rule::OptionCount,
                format!("{n} options, expected {MIN_OPTIONS}..={MAX_OPTIONS}"),
            ));
        }

        let labels: BTreeSet<char> = self.options.iter().map(|o| o.label).collect();
        let expected: BTreeSet<char> = ('A'..='Z').take(n).collect();
        if labels.len() != n {
            out.push((Rule::LabelSequence, "option labels are not unique".to_string()));
        } else if labels != expected {
            out.push((
                Rule::LabelSequence,
                format!(
                    "labels {} are not consecutive upper-case letters from A",
                    labels.iter().collect::<String>()
                ),
            ));
        }
        if !labels.contains(&self.correct_label) {
            out.push((
                Rule::CorrectLabel,
                format!("correct_label {} is not an option label", self.correct_label),
            ));
        }

        let pct_keys: BTreeSet<char> = self.option_pcts.keys().copied().collect();
        if pct_keys != labels {
            out.push((
                Rule::PctKeys,
                format!(
                    "option_pcts keys {} do not match option labels {}",
                    pct_keys.iter().collect::<String>(),
                    labels.iter().collect::<String>()
                ),
            ));
        }
        let in_range = |v: f64| v.is_finite() && (0.0..=100.0).contains(&v);
        for (label, &v) in &self.option_pcts {
            if !in_range(v) {
                out.push((Rule::PctRange, format!("option_pcts[{label}] = {v} is outside [0, 100]")));
            }
        }
        if !in_range(self.omit_pct) {
            out.push((Rule::PctRange, format!("omit_pct = {} is outside [0, 100]", self.omit_pct)));
        }
        let total: f64 = self.option_pcts.values().sum::<f64>() + self.omit_pct;
        if !total.is_finite() || (total - 100.0).abs() > PCT_SUM_TOLERANCE {
            out.push((
                Rule::PctSum,
                format!(
                    "option_pcts sum plus omit_pct is {total:.2}, expected within 100 +/- {PCT_SUM_TOLERANCE}"
                ),
            ));
        }

        for opt in &self.options {
            if opt.text.trim().is_empty() {
                out.push((Rule::EmptyOptionText, format!("option {} has empty text", opt.label)));
            }
        }
        let re = non_text_pattern();
        if let Some(m) = re.find(&self.stem) {
            out.push((Rule::NonTextContent, format!("stem contains non-text placeholder `{}`", m.as_str())));
        }
        for opt in &self.options {
            if let Some(m) = re.find(&opt.text) {
                out.push((
                    Rule::NonTextContent,
                    format!("option {} contains non-text placeholder `{}`", opt.label, m.as_str()),
                ));
            }
        }
        out
    }

    fn into_item(mut self) -> Item {
        self.options.sort_by_key(|o| o.label);
        Item {
            id: self.id,
            subject: self.subject,
            grade: self.grade,
            stem: self.stem,
            options: self.options,
            correct_label: self.correct_label,
            option_pcts: self.option_pcts,
            omit_pct: self.omit_pct,
        }
    }
}

impl ItemBank {
    /// Builds a bank from already-constructed items, applying the same
    /// validation as the file loader.
    pub fn from_items(items: Vec<Item>, provenance: impl Into<String>) -> Result<Self, BankError> {
        let mut text = String::new();
        for item in &items {
            text.push_str(&serde_json::to_string(item)?);
            text.push('\n');
        }
        let mut outcome = parse_bank(&text, LoadOptions::default())?;
        outcome.bank.provenance = provenance.into();
        Ok(outcome.bank)
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.id == id)
    }

    /// Items for one subject and grade, ordered by id.
    pub fn partition(&self, subject: Subject, grade: Grade) -> Result<Vec<Item>, BankError> {
        let mut items: Vec<Item> = self
            .items
            .iter()
            .filter(|i| i.subject == subject && i.grade == grade)
            .cloned()
            .collect();
        if items.is_empty() {
            return Err(BankError::EmptyPartition { subject, grade });
        }
        items.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(items)
    }

    /// Item counts for every non-empty (subject, grade) partition.
    pub fn counts(&self) -> BTreeMap<(Subject, Grade), usize> {
        let mut counts = BTreeMap::new();
        for item in &self.items {
            *counts.entry((item.subject, item.grade)).or_insert(0) += 1;
        }
        counts
    }

    /// Serializes to the JSON Lines bank format.
    pub fn to_jsonl(&self) -> Result<String, BankError> {
        let mut out = String::new();
        if !self.provenance.is_empty() {
            out.push_str(&serde_json::to_string(&ProvenanceRecord {
                provenance: self.provenance.clone(),
            })?);
            out.push('\n');
        }
        for item in &self.items {
            out.push_str(&serde_json::to_string(item)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Loads and validates a bank file.
pub fn load_bank(path: impl AsRef<Path>, options: LoadOptions) -> Result<LoadOutcome, BankError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| BankError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_bank(&text, options)
}

/// Parses and validates bank text in the JSON Lines format.
pub fn parse_bank(text: &str, options: LoadOptions) -> Result<LoadOutcome, BankError> {
    let mut provenance = String::new();
    let mut items: Vec<Item> = Vec::new();
    let mut rejected = Vec::new();
    let mut seen_ids = BTreeSet::new();
    let mut first_record = true;

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                rejected.push(Rejection {
                    line: line_no,
                    item_id: None,
                    rule: Rule::Schema,
                    message: format!("not a JSON record: {e}"),
                });
                continue;
            }
        };
        let is_header = first_record
            && value.as_object().is_some_and(|o| o.len() == 1 && o.contains_key("provenance"));
        first_record = false;
        if is_header {
            match serde_json::from_value::<ProvenanceRecord>(value) {
                Ok(r) => provenance = r.provenance,
                Err(e) => rejected.push(Rejection {
                    line: line_no,
                    item_id: None,
                    rule: Rule::Schema,
                    message: format!("invalid provenance record: {e}"),
                }),
            }
            continue;
        }

        let id_hint = value.get("id").and_then(|v| v.as_str()).map(str::to_string);
        let raw: RawItem = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                rejected.push(Rejection {
                    line: line_no,
                    item_id: id_hint,
                    rule: Rule::Schema,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let violations = raw.violations();
        if !violations.is_empty() {
            rejected.extend(violations.into_iter().map(|(rule, message)| Rejection {
                line: line_no,
                item_id: Some(raw.id.clone()),
                rule,
                message,
            }));
            continue;
        }
        if !seen_ids.insert(raw.id.clone()) {
            rejected.push(Rejection {
                line: line_no,
                item_id: Some(raw.id.clone()),
                rule: Rule::DuplicateId,
                message: format!("id `{}` already used by an earlier item", raw.id),
            });
            continue;
        }
        items.push(raw.into_item());
    }

    if !rejected.is_empty() && !options.permissive {
        return Err(BankError::Rejected(rejected));
    }
    if items.is_empty() {
        return Err(if rejected.is_empty() {
            BankError::Empty
        } else {
            BankError::Rejected(rejected)
        });
    }
    Ok(LoadOutcome {
        bank: ItemBank { items, provenance },
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, pcts: [f64; 4], omit: f64) -> String {
        serde_json::json!({
            "id": id,
            "subject": "Mathematics",
            "grade": 4,
            "stem": "What is 3 + 4?",
            "options": [
                {"label": "A", "text": "6"},
                {"label": "B", "text": "7"},
                {"label": "C", "text": "8"},
                {"label": "D", "text": "12"}
            ],
            "correct_label": "B",
            "option_pcts": {"A": pcts[0], "B": pcts[1], "C": pcts[2], "D": pcts[3]},
            "omit_pct": omit
        })
        .to_string()
    }

    fn strict(text: &str) -> Result<LoadOutcome, BankError> {
        parse_bank(text, LoadOptions::default())
    }

    fn rules(err: BankError) -> Vec<Rule> {
        match err {
            BankError::Rejected(r) => r.into_iter().map(|r| r.rule).collect(),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn loads_two_items() {
        let text = format!("{}\n{}\n", record("m1", [10.0, 73.1, 10.0, 5.9], 1.0), record("m2", [20.0, 50.0, 20.0, 9.0], 1.0));
        let bank = strict(&text).unwrap().bank;
        assert_eq!(bank.len(), 2);
        assert!((correct_rate(bank.get("m1").unwrap()) - 0.731).abs() < 1e-12);
        assert_eq!(correct_rate(bank.get("m2").unwrap()), 0.5);
    }

    #[test]
    fn rejects_low_percent_sum() {
        let text = record("bad", [20.0, 30.0, 20.0, 18.0], 2.0);
        let err = strict(&text).unwrap_err();
        assert_eq!(rules(err), vec![Rule::PctSum]);
    }

    #[test]
    fn percent_sum_tolerance_is_inclusive() {
        assert!(strict(&record("lo", [20.0, 30.0, 20.0, 28.0], 1.0)).is_ok()); // 99
        assert!(strict(&record("hi", [20.0, 30.0, 20.0, 30.0], 1.0)).is_ok()); // 101
        assert!(strict(&record("over", [20.0, 30.0, 20.0, 30.5], 1.0)).is_err());
    }

    #[test]
    fn correct_rate_clamps() {
        let item = strict(&record("all", [0.0, 100.0, 0.0, 0.0], 0.0)).unwrap().bank.items()[0].clone();
        assert_eq!(correct_rate(&item), 1.0 - 1e-4);
        let item = strict(&record("none", [50.0, 0.0, 40.0, 10.0], 0.0)).unwrap().bank.items()[0].clone();
        assert_eq!(correct_rate(&item), 1e-4);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{}\n{}\n", record("x", [10.0, 50.0, 20.0, 19.0], 1.0), record("x", [10.0, 50.0, 20.0, 19.0], 1.0));
        assert_eq!(rules(strict(&text).unwrap_err()), vec![Rule::DuplicateId]);
    }

    #[test]
    fn permissive_skips_and_lists() {
        let text = format!(
            "{}\n{}\nnot json\n",
            record("ok", [10.0, 50.0, 20.0, 19.0], 1.0),
            record("bad", [10.0, 10.0, 10.0, 10.0], 1.0)
        );
        let out = parse_bank(&text, LoadOptions { permissive: true }).unwrap();
        assert_eq!(out.bank.len(), 1);
        assert_eq!(out.rejected.len(), 2);
        assert_eq!(out.rejected[0].item_id.as_deref(), Some("bad"));
        assert_eq!(out.rejected[1].rule, Rule::Schema);
        assert_eq!(out.rejected[1].line, 3);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(strict(""), Err(BankError::Empty)));
        assert!(matches!(strict("\n\n"), Err(BankError::Empty)));
    }

    #[test]
    fn structural_rules() {
        let mut v: serde_json::Value = serde_json::from_str(&record("s", [10.0, 50.0, 20.0, 19.0], 1.0)).unwrap();
        v["correct_label"] = "E".into();
        assert!(rules(strict(&v.to_string()).unwrap_err()).contains(&Rule::CorrectLabel));

        let mut v: serde_json::Value = serde_json::from_str(&record("s", [10.0, 50.0, 20.0, 19.0], 1.0)).unwrap();
        v["options"][3]["label"] = "E".into();
        let r = rules(strict(&v.to_string()).unwrap_err());
        assert!(r.contains(&Rule::LabelSequence));
        assert!(r.contains(&Rule::PctKeys));

        let mut v: serde_json::Value = serde_json::from_str(&record("s", [10.0, 50.0, 20.0, 19.0], 1.0)).unwrap();
        v["options"] = serde_json::json!([{"label": "A", "text": "only"}]);
        v["option_pcts"] = serde_json::json!({"A": 99.0});
        v["correct_label"] = "A".into();
        assert_eq!(rules(strict(&v.to_string()).unwrap_err()), vec![Rule::OptionCount]);

        let mut v: serde_json::Value = serde_json::from_str(&record("s", [10.0, 50.0, 20.0, 19.0], 1.0)).unwrap();
        v["stem"] = "Use the table below. [TABLE 1] What is the total?".into();
        assert_eq!(rules(strict(&v.to_string()).unwrap_err()), vec![Rule::NonTextContent]);

        let mut v: serde_json::Value = serde_json::from_str(&record("s", [10.0, 50.0, 20.0, 19.0], 1.0)).unwrap();
        v["stem"] = "   ".into();
        assert_eq!(rules(strict(&v.to_string()).unwrap_err()), vec![Rule::EmptyStem]);

        let mut v: serde_json::Value = serde_json::from_str(&record("s", [10.0, 50.0, 20.0, 19.0], 1.0)).unwrap();
        v["grade"] = 5.into();
        assert_eq!(rules(strict(&v.to_string()).unwrap_err()), vec![Rule::Schema]);

        let mut v: serde_json::Value = serde_json::from_str(&record("s", [10.0, 50.0, 20.0, 19.0], 1.0)).unwrap();
        v["option_pcts"]["A"] = (-1.0).into();
        v["option_pcts"]["B"] = (61.0).into();
        assert_eq!(rules(strict(&v.to_string()).unwrap_err()), vec![Rule::PctRange]);
    }

    #[test]
    fn partition_orders_by_id_and_rejects_empty() {
        let text = ["m3", "m1", "m2"]
            .iter()
            .map(|id| record(id, [10.0, 50.0, 20.0, 19.0], 1.0))
            .collect::<Vec<_>>()
            .join("\n");
        let bank = strict(&text).unwrap().bank;
        let part = bank.partition(Subject::Mathematics, Grade::G4).unwrap();
        let ids: Vec<&str> = part.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["m1", "m2", "m3"]);
        assert!(matches!(
            bank.partition(Subject::Reading, Grade::G4),
            Err(BankError::EmptyPartition { .. })
        ));
    }

    #[test]
    fn provenance_header_round_trips() {
        let text = format!(
            "{{\"provenance\":\"fixture v1\"}}\n{}\n",
            record("m1", [10.0, 50.0, 20.0, 19.0], 1.0)
        );
        let bank = strict(&text).unwrap().bank;
        assert_eq!(bank.provenance(), "fixture v1");
        let again = strict(&bank.to_jsonl().unwrap()).unwrap().bank;
        assert_eq!(bank, again);
    }

    #[test]
    fn grade_and_subject_parse() {
        assert_eq!("8".parse::<Grade>().unwrap(), Grade::G8);
        assert!("7".parse::<Grade>().is_err());
        assert_eq!("math".parse::<Subject>().unwrap(), Subject::Mathematics);
        assert_eq!("Reading".parse::<Subject>().unwrap(), Subject::Reading);
    }

    proptest! {
        #[test]
        fn correct_rate_ignores_option_order(
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
            correct in 0.0f64..100.0,
        ) {
            let rest = (99.0 - correct).max(0.0) / 3.0;
            let omit = 100.0 - correct - 3.0 * rest;
            let labels = ['A', 'B', 'C', 'D'];
            let options: Vec<_> = perm
                .iter()
                .map(|&i| serde_json::json!({"label": labels[i].to_string(), "text": format!("opt {i}")}))
                .collect();
            let rec = serde_json::json!({
                "id": "p", "subject": "Reading", "grade": 12, "stem": "Passage. Question?",
                "options": options, "correct_label": "C",
                "option_pcts": {"A": rest, "B": rest, "C": correct, "D": rest},
                "omit_pct": omit,
            });
            let bank = strict(&rec.to_string()).unwrap().bank;
            let item = &bank.items()[0];
            prop_assert_eq!(correct_rate(item), clamp_rate(correct / 100.0));
            prop_assert!(item.options.windows(2).all(|w| w[0].label < w[1].label));
            let total: f64 = item.option_pcts.values().sum::<f64>() + item.omit_pct;
            prop_assert!((99.0..=101.0).contains(&total));
        }
    }
}
