//! Alignment metrics and the proxy-viability rubric.
//!
//! An examinee is a viable grade-level proxy under a prompt setting when
//!
//! * its ability at every grade sits in the core or extended band
//!   (`|θ| ≤ 1.5`),
//! * ability rises strictly from grade 4 to 8 to 12,
//! * its distance from the 50th percentile varies by at most a threshold
//!   across grades.
//!
//! Each grade's θ is anchored to that grade's own N(0, 1) population, so the
//! ordering check compares standing relative to peers rather than absolute
//! skill growth.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::random_choice_examinee;
use crate::harness::{PromptKind, PromptMode};
use crate::item_bank::{Grade, Item, Subject};
use crate::rasch::{calibrate, estimate_ability, Ability, Difficulty, RaschError};
use crate::stats::normal_cdf;

pub const CORE_LOGITS: f64 = 1.0;
pub const EXTENDED_LOGITS: f64 = 1.5;
pub const OUTLIER_LOGITS: f64 = 2.0;
pub const DEFAULT_STABILITY_THRESHOLD: f64 = 15.0;

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("no estimate for grade {0}")]
    MissingGrade(Grade),
    #[error("stability needs at least 2 grades, got {0}")]
    TooFewGrades(usize),
    #[error("no values to average")]
    Empty,
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Rasch(#[from] RaschError),
}

/// Normative band of an ability estimate, ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    /// `|θ| ≤ 1`
    Core,
    /// `1 < |θ| ≤ 1.5`
    Extended,
    /// `1.5 < |θ| < 2`
    Marginal,
    /// `|θ| ≥ 2`
    Outlier,
}

impl Band {
    pub fn of_logit(theta: f64) -> Band {
        let a = theta.abs();
        if a <= CORE_LOGITS {
            Band::Core
        } else if a <= EXTENDED_LOGITS {
            Band::Extended
        } else if a < OUTLIER_LOGITS {
            Band::Marginal
        } else {
            Band::Outlier
        }
    }

    /// Band of the ability whose percentile rank is `percentile`.
    pub fn of_percentile(percentile: f64) -> Band {
        Band::of_logit(Ability::from_percentile(percentile).value)
    }

    pub fn is_acceptable(self) -> bool {
        matches!(self, Band::Core | Band::Extended)
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub fn band_of(theta: Ability) -> Band {
    Band::of_logit(theta.value)
}

/// Percentile interval `[Φ(-k)·100, Φ(k)·100]` for a logit edge `k`.
pub fn percentile_edges(logits: f64) -> (f64, f64) {
    (normal_cdf(-logits) * 100.0, normal_cdf(logits) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEdge {
    pub logits: f64,
    pub lower_percentile: f64,
    pub upper_percentile: f64,
}

/// Core, extended and outlier edges with their percentile equivalents.
pub fn band_edges() -> Vec<BandEdge> {
    [CORE_LOGITS, EXTENDED_LOGITS, OUTLIER_LOGITS]
        .into_iter()
        .map(|k| {
            let (lo, hi) = percentile_edges(k);
            BandEdge {
                logits: k,
                lower_percentile: lo,
                upper_percentile: hi,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub ok: bool,
    /// Adjacent grade pairs `(lower, higher)` where ability failed to rise.
    pub violations: Vec<(Grade, Grade)>,
}

/// Strict rise of ability across grades 4, 8 and 12.
pub fn developmental_ordering(estimates: &BTreeMap<Grade, Ability>) -> Result<OrderingCheck, AlignmentError> {
    let thetas = Grade::ALL
        .iter()
        .map(|g| {
            estimates
                .get(g)
                .map(|a| (*g, a.value))
                .ok_or(AlignmentError::MissingGrade(*g))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let violations: Vec<(Grade, Grade)> = thetas
        .windows(2)
        .filter(|w| w[0].1 >= w[1].1)
        .map(|w| (w[0].0, w[1].0))
        .collect();
    Ok(OrderingCheck {
        ok: violations.is_empty(),
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCheck {
    pub ok: bool,
    pub spread: f64,
    pub threshold: f64,
}

/// `max - min` of per-grade deviations against an inclusive threshold.
pub fn deviation_stability(deviations: &[f64], threshold: f64) -> Result<StabilityCheck, AlignmentError> {
    if deviations.len() < 2 {
        return Err(AlignmentError::TooFewGrades(deviations.len()));
    }
    if let Some(&x) = deviations.iter().find(|x| !x.is_finite()) {
        return Err(AlignmentError::NonFinite(x));
    }
    let max = deviations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = deviations.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = max - min;
    Ok(StabilityCheck {
        ok: spread <= threshold,
        spread,
        threshold,
    })
}

/// Stability of `dev_E` across the grades present in `cells`.
pub fn prompt_stability(cells: &[AlignmentCell], threshold: f64) -> Result<bool, AlignmentError> {
    let mut by_grade: BTreeMap<Grade, f64> = BTreeMap::new();
    for c in cells {
        by_grade.insert(c.grade, c.dev_e);
    }
    let devs: Vec<f64> = by_grade.into_values().collect();
    Ok(deviation_stability(&devs, threshold)?.ok)
}

/// Mean of `|P - 50|`.
pub fn mean_abs_deviation(percentiles: &[f64]) -> Result<f64, AlignmentError> {
    if percentiles.is_empty() {
        return Err(AlignmentError::Empty);
    }
    if let Some(&x) = percentiles.iter().find(|x| !x.is_finite()) {
        return Err(AlignmentError::NonFinite(x));
    }
    Ok(percentiles.iter().map(|p| (p - 50.0).abs()).sum::<f64>() / percentiles.len() as f64)
}

/// Which percentile of a cell to average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    Unenforced,
    Enforced,
}

pub fn average_deviation(cells: &[AlignmentCell], setting: Setting) -> Result<f64, AlignmentError> {
    let ps: Vec<f64> = cells
        .iter()
        .map(|c| match setting {
            Setting::Unenforced => c.p_u,
            Setting::Enforced => c.p_e,
        })
        .collect();
    mean_abs_deviation(&ps)
}

/// Unenforced and enforced standing of one examinee on one partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentCell {
    pub examinee: String,
    pub subject: Subject,
    pub grade: Grade,
    /// The enforced prompt kind compared against the unenforced run.
    pub enforced: PromptKind,
    pub theta_u: f64,
    pub theta_e: f64,
    pub p_u: f64,
    pub p_e: f64,
    /// `p_e - p_u`.
    pub delta: f64,
    pub dev_u: f64,
    pub dev_e: f64,
}

impl AlignmentCell {
    pub fn new(
        examinee: impl Into<String>,
        subject: Subject,
        grade: Grade,
        enforced: PromptKind,
        theta_u: Ability,
        theta_e: Ability,
    ) -> Self {
        let p_u = theta_u.percentile();
        let p_e = theta_e.percentile();
        AlignmentCell {
            examinee: examinee.into(),
            subject,
            grade,
            enforced,
            theta_u: theta_u.value,
            theta_e: theta_e.value,
            p_u,
            p_e,
            delta: p_e - p_u,
            dev_u: (p_u - 50.0).abs(),
            dev_e: (p_e - 50.0).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricVerdict {
    /// Worst band across grades.
    pub band: Band,
    pub ordering_ok: bool,
    pub stability_ok: bool,
    pub overall: bool,
}

impl RubricVerdict {
    pub fn new(band: Band, ordering_ok: bool, stability_ok: bool) -> Self {
        RubricVerdict {
            band,
            ordering_ok,
            stability_ok,
            overall: band.is_acceptable() && ordering_ok && stability_ok,
        }
    }

    /// Applies all three rubric checks to one examinee's per-grade abilities.
    pub fn evaluate(
        estimates: &BTreeMap<Grade, Ability>,
        threshold: f64,
    ) -> Result<(RubricVerdict, OrderingCheck, StabilityCheck), AlignmentError> {
        let ordering = developmental_ordering(estimates)?;
        let devs: Vec<f64> = estimates.values().map(|a| (a.percentile() - 50.0).abs()).collect();
        let stability = deviation_stability(&devs, threshold)?;
        let band = estimates.values().map(|a| band_of(*a)).max().expect("three grades present");
        Ok((RubricVerdict::new(band, ordering.ok, stability.ok), ordering, stability))
    }
}

/// One examinee's estimate on one partition under one prompt mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityRow {
    pub examinee: String,
    pub subject: Subject,
    pub grade: Grade,
    pub mode: PromptMode,
    pub theta: f64,
    pub at_boundary: bool,
    pub percentile: f64,
    pub band: Band,
    pub n_items: usize,
    pub n_correct: usize,
    pub n_failed_extractions: usize,
}

impl AbilityRow {
    pub fn ability(&self) -> Ability {
        Ability {
            value: self.theta,
            at_boundary: self.at_boundary,
        }
    }

    fn key(&self) -> (&str, Subject, Grade, PromptMode) {
        (&self.examinee, self.subject, self.grade, self.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub examinee: String,
    pub subject: Subject,
    pub setting: PromptKind,
    pub thetas: BTreeMap<Grade, f64>,
    pub verdict: RubricVerdict,
    pub ordering_violations: Vec<(Grade, Grade)>,
    pub stability_spread: f64,
    pub stability_threshold: f64,
}

/// Mean deviation over examinees for one partition and enforced kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub subject: Subject,
    pub grade: Grade,
    pub enforced: PromptKind,
    pub n_examinees: usize,
    pub avg_dev_u: f64,
    pub avg_dev_e: f64,
    /// `avg_dev_e - avg_dev_u`; negative means enforcement moved examinees
    /// toward the average student.
    pub change: f64,
}

/// Percentile of a random-choice examinee on one partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub subject: Subject,
    pub grade: Grade,
    pub n_items: usize,
    pub trials: usize,
    pub first_seed: u64,
    pub mean_percentile: f64,
    pub median_percentile: f64,
    pub max_percentile: f64,
}

/// Runs `trials` random-choice examinees with seeds `seed, seed + 1, ...`.
pub fn random_choice_baseline(items: &[Item], trials: usize, seed: u64) -> Result<BaselineRow, AlignmentError> {
    let first = items.first().ok_or(AlignmentError::Empty)?;
    if trials == 0 {
        return Err(AlignmentError::Empty);
    }
    let b: Vec<Difficulty> = calibrate(items).iter().map(|c| c.difficulty).collect();
    let mut ps = (0..trials as u64)
        .map(|t| {
            let rv = random_choice_examinee(items, seed.wrapping_add(t));
            Ok(estimate_ability(&rv, &b)?.percentile())
        })
        .collect::<Result<Vec<f64>, AlignmentError>>()?;
    ps.sort_by(f64::total_cmp);
    let n = ps.len();
    let median = if n % 2 == 1 {
        ps[n / 2]
    } else {
        0.5 * (ps[n / 2 - 1] + ps[n / 2])
    };
    Ok(BaselineRow {
        subject: first.subject,
        grade: first.grade,
        n_items: items.len(),
        trials,
        first_seed: seed,
        mean_percentile: ps.iter().sum::<f64>() / n as f64,
        median_percentile: median,
        max_percentile: ps[n - 1],
    })
}

/// Everything derived from a set of ability estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub stability_threshold: f64,
    pub band_edges: Vec<BandEdge>,
    pub abilities: Vec<AbilityRow>,
    pub cells: Vec<AlignmentCell>,
    pub verdicts: Vec<VerdictRow>,
    pub deviations: Vec<DeviationRow>,
    pub baselines: Vec<BaselineRow>,
    pub notes: Vec<String>,
}

const SCALE_NOTE: &str = "each grade's abilities are anchored to that grade's own population, \
so developmental ordering compares relative standing, not absolute growth";
const VERDICT_NOTE: &str = "rubric verdicts are produced only for settings estimated on all three grades";

impl AlignmentReport {
    /// Builds cells, verdicts and deviation rows from ability rows.
    ///
    /// Rows are deduplicated on (examinee, subject, grade, mode), keeping the
    /// last, and every table is sorted so the result does not depend on input
    /// order.
    pub fn build(abilities: Vec<AbilityRow>, mut baselines: Vec<BaselineRow>, stability_threshold: f64) -> Self {
        let mut dedup: BTreeMap<(String, Subject, Grade, PromptMode), AbilityRow> = BTreeMap::new();
        for row in abilities {
            let (e, s, g, m) = row.key();
            dedup.insert((e.to_string(), s, g, m), row);
        }
        let abilities: Vec<AbilityRow> = dedup.into_values().collect();

        let mut cells = Vec::new();
        for u in abilities.iter().filter(|r| r.mode.kind() == PromptKind::Unenforced) {
            for e in abilities.iter().filter(|r| {
                r.examinee == u.examinee
                    && r.subject == u.subject
                    && r.grade == u.grade
                    && r.mode.kind().is_enforced()
                    && r.mode.target_grade() == Some(r.grade)
            }) {
                cells.push(AlignmentCell::new(
                    &u.examinee,
                    u.subject,
                    u.grade,
                    e.mode.kind(),
                    u.ability(),
                    e.ability(),
                ));
            }
        }

        let mut groups: BTreeMap<(String, Subject, PromptKind), BTreeMap<Grade, Ability>> = BTreeMap::new();
        for r in &abilities {
            let on_grade = r.mode.target_grade().is_none_or(|g| g == r.grade);
            if on_grade {
                groups
                    .entry((r.examinee.clone(), r.subject, r.mode.kind()))
                    .or_default()
                    .insert(r.grade, r.ability());
            }
        }
        let verdicts = groups
            .into_iter()
            .filter_map(|((examinee, subject, setting), est)| {
                let (verdict, ordering, stability) = RubricVerdict::evaluate(&est, stability_threshold).ok()?;
                Some(VerdictRow {
                    examinee,
                    subject,
                    setting,
                    thetas: est.iter().map(|(g, a)| (*g, a.value)).collect(),
                    verdict,
                    ordering_violations: ordering.violations,
                    stability_spread: stability.spread,
                    stability_threshold,
                })
            })
            .collect();

        let mut by_column: BTreeMap<(Subject, Grade, PromptKind), Vec<&AlignmentCell>> = BTreeMap::new();
        for c in &cells {
            by_column.entry((c.subject, c.grade, c.enforced)).or_default().push(c);
        }
        let deviations = by_column
            .into_iter()
            .map(|((subject, grade, enforced), cs)| {
                let n = cs.len() as f64;
                let avg_dev_u = cs.iter().map(|c| c.dev_u).sum::<f64>() / n;
                let avg_dev_e = cs.iter().map(|c| c.dev_e).sum::<f64>() / n;
                DeviationRow {
                    subject,
                    grade,
                    enforced,
                    n_examinees: cs.len(),
                    avg_dev_u,
                    avg_dev_e,
                    change: avg_dev_e - avg_dev_u,
                }
            })
            .collect();

        baselines.sort_by_key(|a| (a.subject, a.grade, a.first_seed));
        baselines.dedup_by(|a, b| (a.subject, a.grade) == (b.subject, b.grade));

        AlignmentReport {
            stability_threshold,
            band_edges: band_edges(),
            abilities,
            cells,
            verdicts,
            deviations,
            baselines,
            notes: vec![SCALE_NOTE.to_string(), VERDICT_NOTE.to_string()],
        }
    }

    /// Combines several reports into one, recomputing all derived tables.
    pub fn merge(reports: impl IntoIterator<Item = AlignmentReport>, stability_threshold: f64) -> Self {
        let mut abilities = Vec::new();
        let mut baselines = Vec::new();
        for r in reports {
            abilities.extend(r.abilities);
            baselines.extend(r.baselines);
        }
        AlignmentReport::build(abilities, baselines, stability_threshold)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Long-format export: one `record,examinee,subject,grade,setting,metric,value`
    /// row per number.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("record,examinee,subject,grade,setting,metric,value\n");
        let mut row = |record: &str, examinee: &str, subject: Subject, grade: &str, setting: &str, metric: &str, value: String| {
            let _ = writeln!(
                out,
                "{record},{},{subject},{grade},{setting},{metric},{value}",
                csv_field(examinee)
            );
        };
        for a in &self.abilities {
            let (g, m) = (a.grade.to_string(), a.mode.label());
            row("ability", &a.examinee, a.subject, &g, &m, "theta", a.theta.to_string());
            row("ability", &a.examinee, a.subject, &g, &m, "percentile", a.percentile.to_string());
            row("ability", &a.examinee, a.subject, &g, &m, "band", a.band.to_string());
            row("ability", &a.examinee, a.subject, &g, &m, "at_boundary", a.at_boundary.to_string());
            row("ability", &a.examinee, a.subject, &g, &m, "n_correct", a.n_correct.to_string());
            row("ability", &a.examinee, a.subject, &g, &m, "n_items", a.n_items.to_string());
        }
        for c in &self.cells {
            let (g, k) = (c.grade.to_string(), c.enforced.slug());
            for (metric, v) in [
                ("p_u", c.p_u),
                ("p_e", c.p_e),
                ("delta", c.delta),
                ("dev_u", c.dev_u),
                ("dev_e", c.dev_e),
            ] {
                row("cell", &c.examinee, c.subject, &g, k, metric, v.to_string());
            }
        }
        for v in &self.verdicts {
            let k = v.setting.slug();
            row("verdict", &v.examinee, v.subject, "", k, "band", v.verdict.band.to_string());
            row("verdict", &v.examinee, v.subject, "", k, "ordering_ok", v.verdict.ordering_ok.to_string());
            row("verdict", &v.examinee, v.subject, "", k, "stability_ok", v.verdict.stability_ok.to_string());
            row("verdict", &v.examinee, v.subject, "", k, "stability_spread", v.stability_spread.to_string());
            row("verdict", &v.examinee, v.subject, "", k, "overall", v.verdict.overall.to_string());
        }
        for d in &self.deviations {
            let (g, k) = (d.grade.to_string(), d.enforced.slug());
            row("avg_deviation", "", d.subject, &g, k, "avg_dev_u", d.avg_dev_u.to_string());
            row("avg_deviation", "", d.subject, &g, k, "avg_dev_e", d.avg_dev_e.to_string());
            row("avg_deviation", "", d.subject, &g, k, "change", d.change.to_string());
        }
        for b in &self.baselines {
            let g = b.grade.to_string();
            row("random_choice", "", b.subject, &g, "", "mean_percentile", b.mean_percentile.to_string());
            row("random_choice", "", b.subject, &g, "", "median_percentile", b.median_percentile.to_string());
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
