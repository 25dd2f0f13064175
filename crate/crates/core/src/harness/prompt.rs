//! Prompt modes and template rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::item_bank::{Grade, Item, Subject};

/// Prompting regime used when presenting an item to an examinee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    /// The question alone, no persona.
    Unenforced,
    /// Asks the examinee to act as an average student of the target grade.
    GradeEnforcedMinimal,
    /// Adds brief grade-aware reasoning about typical ability and errors.
    GradeEnforcedBasicCoT,
    /// Two-step scaffold: judge likely success, then justify the key or pick
    /// the most plausible wrong answer.
    GradeEnforcedFullCoT,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [
        PromptKind::Unenforced,
        PromptKind::GradeEnforcedMinimal,
        PromptKind::GradeEnforcedBasicCoT,
        PromptKind::GradeEnforcedFullCoT,
    ];

    pub fn is_enforced(self) -> bool {
        self != PromptKind::Unenforced
    }

    /// Short name used in file names and on the command line.
    pub fn slug(self) -> &'static str {
        match self {
            PromptKind::Unenforced => "unenforced",
            PromptKind::GradeEnforcedMinimal => "minimal",
            PromptKind::GradeEnforcedBasicCoT => "basic-cot",
            PromptKind::GradeEnforcedFullCoT => "full-cot",
        }
    }

    fn template_stem(self) -> &'static str {
        match self {
            PromptKind::Unenforced => "unenforced",
            PromptKind::GradeEnforcedMinimal => "minimal",
            PromptKind::GradeEnforcedBasicCoT => "basic_cot",
            PromptKind::GradeEnforcedFullCoT => "full_cot",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl std::str::FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        PromptKind::ALL
            .into_iter()
            .find(|k| {
                k.slug() == norm || format!("{k:?}").to_ascii_lowercase() == norm.replace('-', "")
            })
            .ok_or_else(|| format!("unknown prompt mode `{s}` (expected unenforced, minimal, basic-cot or full-cot)"))
    }
}

/// A prompt kind plus its target grade. Enforced kinds require a grade and
/// the unenforced kind forbids one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawMode")]
pub struct PromptMode {
    kind: PromptKind,
    target_grade: Option<Grade>,
}

#[derive(Deserialize)]
struct RawMode {
    kind: PromptKind,
    target_grade: Option<Grade>,
}

impl TryFrom<RawMode> for PromptMode {
    type Error = HarnessError;

    fn try_from(raw: RawMode) -> Result<Self, Self::Error> {
        PromptMode::new(raw.kind, raw.target_grade)
    }
}

impl PromptMode {
    pub fn new(kind: PromptKind, target_grade: Option<Grade>) -> Result<Self, HarnessError> {
        match (kind.is_enforced(), target_grade) {
            (true, None) => Err(HarnessError::MissingGrade(kind)),
            (false, Some(g)) => Err(HarnessError::UnexpectedGrade(g)),
            _ => Ok(PromptMode { kind, target_grade }),
        }
    }

    pub fn unenforced() -> Self {
        PromptMode {
            kind: PromptKind::Unenforced,
            target_grade: None,
        }
    }

    /// The mode of `kind` targeting `grade`, dropping the grade for the
    /// unenforced kind.
    pub fn for_grade(kind: PromptKind, grade: Grade) -> Self {
        PromptMode {
            kind,
            target_grade: kind.is_enforced().then_some(grade),
        }
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn target_grade(&self) -> Option<Grade> {
        self.target_grade
    }

    /// `unenforced`, `minimal-g8`, ...
    pub fn label(&self) -> String {
        match self.target_grade {
            Some(g) => format!("{}-g{}", self.kind.slug(), g.number()),
            None => self.kind.slug().to_string(),
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

const BUILTIN_VERSION: &str = include_str!("../../templates/v1/VERSION");

fn builtin_templates() -> BTreeMap<String, &'static str> {
    [
        ("math_unenforced", include_str!("../../templates/v1/math_unenforced.txt")),
        ("math_minimal", include_str!("../../templates/v1/math_minimal.txt")),
        ("math_basic_cot", include_str!("../../templates/v1/math_basic_cot.txt")),
        ("math_full_cot", include_str!("../../templates/v1/math_full_cot.txt")),
        ("reading_unenforced", include_str!("../../templates/v1/reading_unenforced.txt")),
        ("reading_minimal", include_str!("../../templates/v1/reading_minimal.txt")),
        ("reading_basic_cot", include_str!("../../templates/v1/reading_basic_cot.txt")),
        ("reading_full_cot", include_str!("../../templates/v1/reading_full_cot.txt")),
        ("option_extraction", include_str!("../../templates/v1/option_extraction.txt")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn template_name(subject: Subject, kind: PromptKind) -> String {
    let s = match subject {
        Subject::Mathematics => "math",
        Subject::Reading => "reading",
    };
    format!("{s}_{}", kind.template_stem())
}

/// Versioned prompt templates.
///
/// Placeholders: `{grade}`, `{subject}`, `{stem}` and `{options}` in
/// question templates; `{options}` and `{response}` in the option-extraction
/// template.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    version: String,
    templates: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::builtin()
    }
}

impl TemplateSet {
    /// The templates shipped under `templates/v1`.
    pub fn builtin() -> Self {
        TemplateSet {
            version: BUILTIN_VERSION.trim().to_string(),
            templates: builtin_templates()
                .into_iter()
                .map(|(k, v)| (k, v.to_string()))
                .collect(),
        }
    }

    /// Loads a template directory with the same file layout as
    /// `templates/v1`. Every template file must be present.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| HarnessError::Template(format!("{}: {e}", path.display())))
        };
        let version = read("VERSION")?.trim().to_string();
        let templates = builtin_templates()
            .into_keys()
            .map(|name| Ok((name.clone(), read(&format!("{name}.txt"))?)))
            .collect::<Result<_, HarnessError>>()?;
        Ok(TemplateSet { version, templates })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    fn get(&self, name: &str) -> Result<&str, HarnessError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| HarnessError::Template(format!("missing template `{name}`")))
    }

    pub fn render_prompt(&self, item: &Item, mode: &PromptMode) -> Result<String, HarnessError> {
        let template = self.get(&template_name(item.subject, mode.kind()))?;
        let grade = mode.target_grade().map(|g| g.to_string()).unwrap_or_default();
        Ok(fill(
            template,
            &[
                ("grade", &grade),
                ("subject", item.subject.as_str()),
                ("stem", item.stem.trim_end()),
                ("options", &format_options(item)),
            ],
        ))
    }

    pub fn render_extraction(&self, item: &Item, response: &str) -> Result<String, HarnessError> {
        Ok(fill(
            self.get("option_extraction")?,
            &[("options", &format_options(item)), ("response", response.trim_end())],
        ))
    }
}

pub fn format_options(item: &Item) -> String {
    item.options
        .iter()
        .map(|o| format!("{}. {}", o.label, o.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Single-pass placeholder substitution; substituted text is never rescanned,
/// so a stem containing `{grade}` is left alone.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            values.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, v)) => {
                out.push_str(v);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Renders `item` under `mode` with the built-in templates.
pub fn render_prompt(item: &Item, mode: &PromptMode) -> Result<String, HarnessError> {
    TemplateSet::builtin().render_prompt(item, mode)
}
