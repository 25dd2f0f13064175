//! Fixtures shared by the benchmarks.

use gradealign::cohort::{simulate_cohort, uniform_difficulty_items, SyntheticCohort};
use gradealign::rasch::{CalibratedItem, Difficulty};

/// `n_items` difficulties on `[-2.5, 2.5)` and a cohort answering them.
pub fn cohort_fixture(n_items: usize, n_examinees: usize, seed: u64) -> (Vec<CalibratedItem>, SyntheticCohort) {
    let items = uniform_difficulty_items(n_items, -2.5, 2.5, seed);
    let cohort = simulate_cohort(&items, n_examinees, seed).expect("non-empty fixture");
    (items, cohort)
}

pub fn difficulties(items: &[CalibratedItem]) -> Vec<Difficulty> {
    items.iter().map(|i| i.difficulty).collect()
}
