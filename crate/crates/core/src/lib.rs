//! Place automated examinees and human populations on one Rasch ability scale
//! and score how closely each examinee tracks a grade-level average.
//!
//! The pipeline runs in three steps:
//!
//! 1. item difficulties come from population correct-rates ([`rasch::item_difficulty`]),
//! 2. each examinee's ability is the maximum-likelihood root of the Rasch
//!    score function ([`rasch::estimate_ability`]),
//! 3. abilities map to percentile ranks through the standard-normal CDF
//!    ([`rasch::percentile_rank`]).
//!
//! Around that core sit the item bank loader ([`item_bank`]), a prompt
//! harness for querying examinee backends ([`harness`]), a synthetic cohort
//! simulator ([`cohort`]), normality testing ([`stats`]) and alignment
//! metrics with a proxy-viability rubric ([`alignment`]).

pub mod alignment;
pub mod cohort;
pub mod harness;
pub mod item_bank;
pub mod rasch;
pub mod stats;

pub use alignment::{AlignmentCell, AlignmentReport, Band, RubricVerdict};
pub use cohort::{ResponseMatrix, SyntheticCohort};
pub use harness::{ExtractionMethod, PromptKind, PromptMode, RawResponse};
pub use item_bank::{Grade, Item, ItemBank, Subject};
pub use rasch::{Ability, CalibratedItem, Difficulty, ResponseVector, THETA_MAX};
pub use stats::KsResult;
