//! Synthetic cohorts and baseline examinees.
//!
//! Generation is deterministic. Examinee `i` of a cohort with seed `s` draws
//! from its own ChaCha8 stream: `ChaCha8Rng::seed_from_u64(s)` with
//! `set_stream(i)`. From that stream it takes one standard-normal ability
//! (ziggurat, clipped to ±[`THETA_MAX`]) and then one uniform `u` per item in
//! item order, answering correctly iff `u < P(θ, b)`. Because each examinee
//! owns a stream, parallel and serial generation agree exactly.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::item_bank::{clamp_rate, Grade, Item, ItemBank, ItemOption, Subject};
use crate::rasch::{
    estimate_ability, response_probability, CalibratedItem, Difficulty, RaschError,
    ResponseVector, THETA_MAX,
};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("at least one item is required")]
    NoItems,
    #[error("at least one examinee is required")]
    NoExaminees,
    #[error("id `{0}` is empty or contains a comma, quote or line break")]
    InvalidId(String),
    #[error("row {row} has {found} cells, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("cell at row {row}, column {col} is {value}, expected 0 or 1")]
    NonBinary { row: usize, col: usize, value: String },
    #[error("malformed response matrix: {0}")]
    Parse(String),
    #[error(transparent)]
    Rasch(#[from] RaschError),
}

const CORNER: &str = "examinee_id";

/// Dichotomous correctness matrix, examinees × items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    examinee_ids: Vec<String>,
    item_ids: Vec<String>,
    cells: Vec<Vec<u8>>,
}

fn check_id(id: &str) -> Result<(), SimError> {
    if id.is_empty() || id.contains([',', '"', '\n', '\r']) {
        return Err(SimError::InvalidId(id.to_string()));
    }
    Ok(())
}

impl ResponseMatrix {
    pub fn new(
        examinee_ids: Vec<String>,
        item_ids: Vec<String>,
        cells: Vec<Vec<u8>>,
    ) -> Result<Self, SimError> {
        if item_ids.is_empty() {
            return Err(SimError::NoItems);
        }
        if examinee_ids.is_empty() {
            return Err(SimError::NoExaminees);
        }
        for id in examinee_ids.iter().chain(&item_ids) {
            check_id(id)?;
        }
        if cells.len() != examinee_ids.len() {
            return Err(SimError::Parse(format!(
                "{} examinee ids but {} rows",
                examinee_ids.len(),
                cells.len()
            )));
        }
        for (row, r) in cells.iter().enumerate() {
            if r.len() != item_ids.len() {
                return Err(SimError::Ragged {
                    row,
                    found: r.len(),
                    expected: item_ids.len(),
                });
            }
            if let Some(col) = r.iter().position(|&v| v > 1) {
                return Err(SimError::NonBinary {
                    row,
                    col,
                    value: r[col].to_string(),
                });
            }
        }
        Ok(ResponseMatrix {
            examinee_ids,
            item_ids,
            cells,
        })
    }

    pub fn examinee_ids(&self) -> &[String] {
        &self.examinee_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.cells
    }

    pub fn n_examinees(&self) -> usize {
        self.examinee_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn response_vector(&self, row: usize) -> ResponseVector {
        ResponseVector::new(self.item_ids.clone(), self.cells[row].clone())
            .expect("matrix rows are validated on construction")
    }

    /// Comma-separated text: header row of item ids (after an `examinee_id`
    /// corner cell), then one row per examinee with 0/1 cells. `\n` line
    /// endings, trailing newline.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity((self.n_items() * 2 + 16) * (self.n_examinees() + 1));
        out.push_str(CORNER);
        for id in &self.item_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (id, row) in self.examinee_ids.iter().zip(&self.cells) {
            out.push_str(id);
            for &v in row {
                out.push(',');
                out.push(if v == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, SimError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| SimError::Parse("empty file".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some(CORNER) {
            return Err(SimError::Parse(format!("header must start with `{CORNER}`")));
        }
        let item_ids: Vec<String> = cols.map(str::to_string).collect();
        let mut examinee_ids = Vec::new();
        let mut cells = Vec::new();
        for (row, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            examinee_ids.push(fields.next().unwrap_or_default().to_string());
            let mut r = Vec::with_capacity(item_ids.len());
            for (col, f) in fields.enumerate() {
                match f {
                    "0" => r.push(0),
                    "1" => r.push(1),
                    other => {
                        return Err(SimError::NonBinary {
                            row,
                            col,
                            value: other.to_string(),
                        })
                    }
                }
            }
            cells.push(r);
        }
        ResponseMatrix::new(examinee_ids, item_ids, cells)
    }
}

/// A simulated population answering a fixed item list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohort {
    pub abilities: Vec<f64>,
    pub seed: u64,
    pub responses: ResponseMatrix,
}

/// RNG stream owned by examinee `index` of a cohort seeded with `seed`.
pub fn examinee_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws one examinee: ability, then one response per item.
pub fn simulate_examinee(difficulties: &[Difficulty], seed: u64, index: u64) -> (f64, Vec<u8>) {
    let mut rng = examinee_rng(seed, index);
    let z: f64 = rng.sample(StandardNormal);
    let theta = z.clamp(-THETA_MAX, THETA_MAX);
    let row = difficulties
        .iter()
        .map(|&b| u8::from(rng.random::<f64>() < response_probability(theta, b)))
        .collect();
    (theta, row)
}

pub fn simulate_cohort(
    items: &[CalibratedItem],
    n_students: usize,
    seed: u64,
) -> Result<SyntheticCohort, SimError> {
    if items.is_empty() {
        return Err(SimError::NoItems);
    }
    if n_students == 0 {
        return Err(SimError::NoExaminees);
    }
    let difficulties: Vec<Difficulty> = items.iter().map(|i| i.difficulty).collect();
    let drawn: Vec<(f64, Vec<u8>)> = (0..n_students as u64)
        .into_par_iter()
        .map(|i| simulate_examinee(&difficulties, seed, i))
        .collect();
    let width = n_students.to_string().len();
    let examinee_ids = (0..n_students).map(|i| format!("s{i:0width$}")).collect();
    let item_ids = items.iter().map(|i| i.item_id.clone()).collect();
    let (abilities, cells): (Vec<f64>, Vec<Vec<u8>>) = drawn.into_iter().unzip();
    Ok(SyntheticCohort {
        abilities,
        seed,
        responses: ResponseMatrix::new(examinee_ids, item_ids, cells)?,
    })
}

/// Picks one option uniformly at random per item; correct iff it is the key.
pub fn random_choice_examinee(items: &[Item], seed: u64) -> ResponseVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ids, scores) = items
        .iter()
        .map(|item| {
            let pick = item.options[rng.random_range(0..item.options.len())].label;
            (item.id.clone(), u8::from(pick == item.correct_label))
        })
        .unzip();
    ResponseVector::new(ids, scores).expect("scores are binary")
}

/// Per-item mean correctness over the cohort, clamped like population rates.
pub fn empirical_rates_from_cohort(cohort: &SyntheticCohort) -> Vec<f64> {
    empirical_rates(&cohort.responses)
}

pub fn empirical_rates(matrix: &ResponseMatrix) -> Vec<f64> {
    let n = matrix.n_examinees() as f64;
    (0..matrix.n_items())
        .map(|j| {
            let correct: usize = matrix.rows().iter().map(|r| usize::from(r[j])).sum();
            clamp_rate(correct as f64 / n)
        })
        .collect()
}

/// Pearson correlation. NaN when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn rmse(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    (x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub n_examinees: usize,
    pub n_items: usize,
    pub pearson: f64,
    pub rmse: f64,
    pub n_boundary: usize,
}

/// Re-estimates every cohort member's ability from its responses against the
/// generating difficulties.
pub fn recover_abilities(
    cohort: &SyntheticCohort,
    items: &[CalibratedItem],
) -> Result<Vec<crate::rasch::Ability>, SimError> {
    let difficulties: Vec<Difficulty> = items.iter().map(|i| i.difficulty).collect();
    (0..cohort.responses.n_examinees())
        .into_par_iter()
        .map(|i| Ok(estimate_ability(&cohort.responses.response_vector(i), &difficulties)?))
        .collect()
}

pub fn recovery_summary(
    cohort: &SyntheticCohort,
    estimates: &[crate::rasch::Ability],
) -> RecoverySummary {
    let est: Vec<f64> = estimates.iter().map(|a| a.value).collect();
    RecoverySummary {
        n_examinees: cohort.abilities.len(),
        n_items: cohort.responses.n_items(),
        pearson: pearson(&cohort.abilities, &est),
        rmse: rmse(&cohort.abilities, &est),
        n_boundary: estimates.iter().filter(|a| a.at_boundary).count(),
    }
}

/// `n` items with difficulties drawn uniformly from `[lo, hi)`.
pub fn uniform_difficulty_items(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<CalibratedItem> {
    // Separate stream from any examinee stream of the same seed.
    let mut rng = examinee_rng(seed, u64::MAX);
    let width = n.to_string().len();
    (0..n)
        .map(|j| CalibratedItem::from_difficulty(format!("i{j:0width$}"), rng.random_range(lo..hi)))
        .collect()
}

/// Shape of a generated item bank.
#[derive(Debug, Clone)]
pub struct SyntheticBankSpec {
    pub partitions: Vec<(Subject, Grade, usize)>,
    pub n_options: usize,
    /// Population correct-rates are drawn uniformly from this range.
    pub p_range: (f64, f64),
}

/// Generates a valid bank of text-only items with population statistics.
///
/// The keyed option receives `p` (to one decimal), 1% omit, and the remaining
/// share is split evenly across the distractors.
pub fn synthetic_bank(spec: &SyntheticBankSpec, seed: u64) -> ItemBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.n_options.clamp(2, 26);
    let labels: Vec<char> = ('A'..='Z').take(k).collect();
    let mut items = Vec::new();
    for &(subject, grade, count) in &spec.partitions {
        let prefix = match subject {
            Subject::Mathematics => 'M',
            Subject::Reading => 'R',
        };
        for j in 0..count {
            let id = format!("{prefix}{}-{j:04}", grade.number());
            let p = rng.random_range(spec.p_range.0..spec.p_range.1).clamp(0.0, 0.98);
            let correct_label = labels[rng.random_range(0..k)];
            let correct_pct = (p * 1000.0).round() / 10.0;
            let share = ((99.0 - correct_pct) / (k - 1) as f64 * 10.0).round() / 10.0;
            let mut stem = String::new();
            if subject == Subject::Reading {
                let _ = write!(
                    stem,
                    "Passage {id}: The library opened early on Saturday so that volunteers could sort donated books.\n\n"
                );
            }
            let _ = write!(stem, "Question {id}: which option is keyed as correct?");
            items.push(Item {
                id,
                subject,
                grade,
                stem,
                options: labels
                    .iter()
                    .map(|&l| ItemOption {
                        label: l,
                        text: format!("choice {}", l.to_ascii_lowercase()),
                    })
                    .collect(),
                correct_label,
                option_pcts: labels
                    .iter()
                    .map(|&l| (l, if l == correct_label { correct_pct } else { share }))
                    .collect(),
                omit_pct: 1.0,
            });
        }
    }
    ItemBank::from_items(items, format!("synthetic seed={seed}"))
        .expect("generated items satisfy bank invariants")
}
