//! Rasch-model mathematics.
//!
//! Item difficulties come from population correct-rates via the inverse
//! logistic, `b = ln((1 - p) / p)`; they are never re-fit against examinee
//! data. Abilities are pure maximum-likelihood estimates (no prior) found by
//! bisection on the score function, which is strictly decreasing in θ so the
//! root is unique whenever it exists.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::item_bank::{correct_rate, Item};
use crate::stats::{normal_cdf, normal_quantile};

/// Search bound for ability estimates. Perfect and zero scores have no
/// finite MLE and are reported at ±`THETA_MAX` with `at_boundary` set.
pub const THETA_MAX: f64 = 6.0;

/// Bisection stops once the bracket is narrower than this.
const BISECTION_WIDTH: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum RaschError {
    #[error("proportion {0} is outside the open interval (0, 1)")]
    Domain(f64),
    #[error("{responses} responses but {difficulties} difficulties")]
    LengthMismatch { responses: usize, difficulties: usize },
    #[error("response vector is empty")]
    Empty,
    #[error("response for item `{item_id}` is {value}, expected 0 or 1")]
    NonBinary { item_id: String, value: u8 },
    #[error("theta {0} is not finite")]
    NonFinite(f64),
}

/// Item difficulty on the logit scale. Higher is harder.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Difficulty(pub f64);

impl Difficulty {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// An examinee ability estimate on the logit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ability {
    pub value: f64,
    /// Set when the estimate sits on ±[`THETA_MAX`].
    pub at_boundary: bool,
}

impl Ability {
    /// Interior ability, clamped into the search range. Landing exactly on
    /// the bound sets `at_boundary`.
    pub fn new(value: f64) -> Self {
        let value = value.clamp(-THETA_MAX, THETA_MAX);
        Ability {
            value,
            at_boundary: value.abs() == THETA_MAX,
        }
    }

    /// Ability whose percentile rank is `percentile` (in (0, 100)).
    pub fn from_percentile(percentile: f64) -> Self {
        Ability::new(normal_quantile(percentile / 100.0))
    }

    pub fn percentile(self) -> f64 {
        percentile_rank(self.value)
    }
}

/// Dichotomous responses aligned with a list of item difficulties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseVector {
    item_ids: Vec<String>,
    scores: Vec<u8>,
}

impl ResponseVector {
    pub fn new(item_ids: Vec<String>, scores: Vec<u8>) -> Result<Self, RaschError> {
        if item_ids.len() != scores.len() {
            return Err(RaschError::LengthMismatch {
                responses: scores.len(),
                difficulties: item_ids.len(),
            });
        }
        if let Some(i) = scores.iter().position(|&s| s > 1) {
            return Err(RaschError::NonBinary {
                item_id: item_ids[i].clone(),
                value: scores[i],
            });
        }
        Ok(ResponseVector { item_ids, scores })
    }

    /// Responses keyed by position (`item-0`, `item-1`, ...).
    pub fn from_scores(scores: &[u8]) -> Result<Self, RaschError> {
        let ids = (0..scores.len()).map(|i| format!("item-{i}")).collect();
        ResponseVector::new(ids, scores.to_vec())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn scores(&self) -> &[u8] {
        &self.scores
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u8)> {
        self.item_ids
            .iter()
            .map(String::as_str)
            .zip(self.scores.iter().copied())
    }

    pub fn n_correct(&self) -> usize {
        self.scores.iter().filter(|&&s| s == 1).count()
    }
}

/// An item together with its population correct-rate and derived difficulty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedItem {
    pub item_id: String,
    pub p: f64,
    pub difficulty: Difficulty,
}

impl CalibratedItem {
    /// Item defined directly by its difficulty; `p` is the correct-rate of an
    /// examinee at θ = 0.
    pub fn from_difficulty(item_id: impl Into<String>, difficulty: f64) -> Self {
        CalibratedItem {
            item_id: item_id.into(),
            p: response_probability(0.0, Difficulty(difficulty)),
            difficulty: Difficulty(difficulty),
        }
    }
}

/// Difficulties for a list of items from their population correct-rates.
pub fn calibrate(items: &[Item]) -> Vec<CalibratedItem> {
    items
        .iter()
        .map(|item| {
            let p = correct_rate(item);
            CalibratedItem {
                item_id: item.id.clone(),
                p,
                difficulty: item_difficulty(p).expect("correct_rate is clamped into (0, 1)"),
            }
        })
        .collect()
}

/// `b = ln((1 - p) / p)`, the logit difficulty of an item answered correctly
/// by a proportion `p` of the population.
pub fn item_difficulty(p: f64) -> Result<Difficulty, RaschError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(RaschError::Domain(p));
    }
    Ok(Difficulty((1.0 - p).ln() - p.ln()))
}

/// Logistic function evaluated without overflow for any finite input.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow or cancellation.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Probability that an examinee at `theta` answers an item of difficulty `b`
/// correctly.
#[inline]
pub fn response_probability(theta: f64, b: Difficulty) -> f64 {
    logistic(theta - b.0)
}

fn check_aligned(responses: &ResponseVector, difficulties: &[Difficulty]) -> Result<(), RaschError> {
    if responses.len() != difficulties.len() {
        return Err(RaschError::LengthMismatch {
            responses: responses.len(),
            difficulties: difficulties.len(),
        });
    }
    if responses.is_empty() {
        return Err(RaschError::Empty);
    }
    Ok(())
}

/// Rasch log-likelihood of `responses` at `theta`.
///
/// `ln P = -softplus(b - θ)` and `ln(1 - P) = -softplus(θ - b)` keep every
/// term finite for any finite gap.
pub fn log_likelihood(
    theta: f64,
    responses: &ResponseVector,
    difficulties: &[Difficulty],
) -> Result<f64, RaschError> {
    check_aligned(responses, difficulties)?;
    if !theta.is_finite() {
        return Err(RaschError::NonFinite(theta));
    }
    Ok(responses
        .scores()
        .iter()
        .zip(difficulties)
        .map(|(&s, b)| {
            let gap = theta - b.0;
            if s == 1 {
                -softplus(-gap)
            } else {
                -softplus(gap)
            }
        })
        .sum())
}

/// Derivative of the log-likelihood in θ: `Σ (s_j - P_j(θ))`.
pub fn score_function(theta: f64, scores: &[u8], difficulties: &[Difficulty]) -> f64 {
    scores
        .iter()
        .zip(difficulties)
        .map(|(&s, &b)| f64::from(s) - response_probability(theta, b))
        .sum()
}

/// Maximum-likelihood ability over [-THETA_MAX, THETA_MAX].
pub fn estimate_ability(
    responses: &ResponseVector,
    difficulties: &[Difficulty],
) -> Result<Ability, RaschError> {
    check_aligned(responses, difficulties)?;
    Ok(mle_theta(responses.scores(), difficulties))
}

fn mle_theta(scores: &[u8], difficulties: &[Difficulty]) -> Ability {
    let n_correct = scores.iter().filter(|&&s| s == 1).count();
    if n_correct == scores.len() {
        return Ability::new(THETA_MAX);
    }
    if n_correct == 0 {
        return Ability::new(-THETA_MAX);
    }

    // The root may still lie outside the search range when all items sit
    // far from it.
    if score_function(THETA_MAX, scores, difficulties) >= 0.0 {
        return Ability::new(THETA_MAX);
    }
    if score_function(-THETA_MAX, scores, difficulties) <= 0.0 {
        return Ability::new(-THETA_MAX);
    }

    let (mut lo, mut hi) = (-THETA_MAX, THETA_MAX);
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        let g = score_function(mid, scores, difficulties);
        if g == 0.0 {
            return Ability::new(mid);
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ability::new(0.5 * (lo + hi))
}

/// Percentile rank of `theta` in a standard-normal population, `Φ(θ)·100`.
pub fn percentile_rank(theta: f64) -> f64 {
    normal_cdf(theta) * 100.0
}
