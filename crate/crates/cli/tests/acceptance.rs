//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p gradealign-cli --test acceptance`.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use gradealign::alignment::{average_deviation, band_edges, developmental_ordering, Setting};
use gradealign::cohort::{
    random_choice_examinee, recover_abilities, recovery_summary, simulate_cohort, synthetic_bank,
    uniform_difficulty_items, SyntheticBankSpec,
};
use gradealign::harness::{BackendConfig, PromptKind};
use gradealign::rasch::{calibrate, estimate_ability, item_difficulty, percentile_rank, response_probability, Difficulty};
use gradealign::stats::{ks_normality, normal_quantile};
use gradealign::{Ability, AlignmentCell, Grade, ResponseVector, Subject};
use gradealign_cli::{evaluate, parse_backend, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FORMULA_TOL: f64 = 1e-6;
const GRID_STEP: f64 = 1e-4;
const GRID_TOL: f64 = 1e-3;
const RECOVERY_MIN_R: f64 = 0.90;
const RECOVERY_MAX_RMSE: f64 = 0.45;
const BAND_EDGE_TOL: f64 = 1e-3;
const TABLE_AVG_DEV: f64 = 40.5;
const TABLE_AVG_DEV_TOL: f64 = 0.05;
const BASELINE_PERCENTILE: f64 = 20.0;
const BASELINE_MIN_HITS: usize = 95;
const KS_ORACLE_TOL: f64 = 1e-3;

// scipy.stats.kstest on the standardized uniform sample below (seed 2024).
const KS_UNIFORM_ORACLE_STATISTIC: f64 = 0.0944630143249671;
// scipy.stats.kstwobign.sf(sqrt(100) * statistic).
const KS_UNIFORM_ORACLE_P: f64 = 0.334123357056948;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn formula_fixtures() -> Outcome {
    let b = item_difficulty(0.5).unwrap().value();
    let p = response_probability(0.37, Difficulty(0.37));
    let pr = percentile_rank(0.0);
    let ok = b.abs() <= FORMULA_TOL && (p - 0.5).abs() <= FORMULA_TOL && (pr - 50.0).abs() <= FORMULA_TOL;
    outcome(ok, format!("b(0.5)={b}, P(theta=b)={p}, percentile(0)={pr}"))
}

fn grid_log_likelihood(theta: f64, scores: &[u8], b: &[f64]) -> f64 {
    scores
        .iter()
        .zip(b)
        .map(|(&x, &bj)| {
            let z = theta - bj;
            // ln sigma(z) and ln(1 - sigma(z)), written to avoid overflow.
            let ln_p = -(-z).exp().ln_1p();
            let ln_q = -z.exp().ln_1p();
            if x == 1 {
                ln_p
            } else {
                ln_q
            }
        })
        .sum()
}

fn grid_argmax(scores: &[u8], b: &[f64], lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as i64;
    let mut best = (f64::NEG_INFINITY, lo);
    for k in 0..=n {
        let t = (lo + k as f64 * step).clamp(-6.0, 6.0);
        let ll = grid_log_likelihood(t, scores, b);
        if ll > best.0 {
            best = (ll, t);
        }
    }
    best.1
}

/// Grid search over [-6, 6] at `GRID_STEP`. The log-likelihood is concave,
/// so a full coarse pass followed by a full fine pass around the coarse
/// maximum finds the fine-grid maximum.
fn grid_search(scores: &[u8], b: &[f64]) -> f64 {
    let coarse = grid_argmax(scores, b, -6.0, 6.0, 1e-2);
    let lo = (coarse - 2e-2).max(-6.0);
    let hi = (coarse + 2e-2).min(6.0);
    grid_argmax(scores, b, lo, hi, GRID_STEP)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let scores: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        let rv = ResponseVector::from_scores(&scores).unwrap();
        let d: Vec<Difficulty> = b.iter().copied().map(Difficulty).collect();
        let est = estimate_ability(&rv, &d).unwrap().value;
        worst = worst.max((est - grid_search(&scores, &b)).abs());
    }
    outcome(worst < GRID_TOL, format!("max |mle - grid| = {worst:.2e} over 1000 instances"))
}

fn recovery() -> Outcome {
    let items = uniform_difficulty_items(100, -2.5, 2.5, 42);
    let cohort = simulate_cohort(&items, 200, 42).unwrap();
    let est = recover_abilities(&cohort, &items).unwrap();
    let s = recovery_summary(&cohort, &est);
    outcome(
        s.pearson >= RECOVERY_MIN_R && s.rmse <= RECOVERY_MAX_RMSE,
        format!("r = {:.4}, rmse = {:.4}, boundary = {}", s.pearson, s.rmse, s.n_boundary),
    )
}

fn band_consistency() -> Outcome {
    let expected = [(1.0, 84.134), (1.5, 93.319), (2.0, 97.725)];
    let edges = band_edges();
    let ok = edges.len() == expected.len()
        && edges.iter().zip(expected).all(|(e, (logits, pct))| {
            e.logits == logits
                && (e.upper_percentile - pct).abs() <= BAND_EDGE_TOL
                && (e.lower_percentile - (100.0 - pct)).abs() <= BAND_EDGE_TOL
        });
    let shown: Vec<String> = edges.iter().map(|e| format!("{:.3}", e.upper_percentile)).collect();
    outcome(ok, format!("upper edges {}", shown.join("/")))
}

fn table_semantics() -> Outcome {
    // Grade-4 mathematics P_U column, one value per examinee.
    let p_u = [63.7, 85.5, 96.8, 99.6, 63.7, 99.6, 99.8, 89.0, 98.9, 99.3, 99.8];
    let cells: Vec<AlignmentCell> = p_u
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let a = Ability::from_percentile(p);
            AlignmentCell::new(format!("m{i}"), Subject::Mathematics, Grade::G4, PromptKind::GradeEnforcedMinimal, a, a)
        })
        .collect();
    let avg = average_deviation(&cells, Setting::Unenforced).unwrap();
    let reading: BTreeMap<Grade, Ability> = Grade::ALL
        .iter()
        .copied()
        .zip([38.3, 17.0, 40.5].map(Ability::from_percentile))
        .collect();
    let ordering = developmental_ordering(&reading).unwrap();
    outcome(
        (avg - TABLE_AVG_DEV).abs() <= TABLE_AVG_DEV_TOL && !ordering.ok,
        format!("avg deviation {avg:.3}, reading ordering ok = {}", ordering.ok),
    )
}

fn baseline_sanity() -> Outcome {
    let bank = synthetic_bank(
        &SyntheticBankSpec {
            partitions: vec![(Subject::Mathematics, Grade::G8, 200)],
            n_options: 4,
            p_range: (0.4, 0.9),
        },
        7,
    );
    let items = bank.items();
    let b: Vec<Difficulty> = calibrate(items).iter().map(|c| c.difficulty).collect();
    let hits = (0..100)
        .filter(|&seed| {
            let rv = random_choice_examinee(items, seed);
            estimate_ability(&rv, &b).unwrap().percentile() < BASELINE_PERCENTILE
        })
        .count();
    outcome(hits >= BASELINE_MIN_HITS, format!("{hits}/100 trials below the 20th percentile"))
}

fn read_tree(dir: &Path, skip: &[&str]) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            let name = p.strip_prefix(dir).unwrap().display().to_string();
            if p.is_dir() {
                stack.push(p);
            } else if !skip.contains(&name.as_str()) {
                out.insert(name, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let bank = synthetic_bank(
        &SyntheticBankSpec {
            partitions: Subject::ALL
                .iter()
                .flat_map(|&s| Grade::ALL.iter().map(move |&g| (s, g, 15)))
                .collect(),
            n_options: 4,
            p_range: (0.3, 0.9),
        },
        11,
    );
    let bank_path = tmp.path().join("bank.jsonl");
    fs::write(&bank_path, bank.to_jsonl().unwrap()).unwrap();

    let calls = Cell::new(0);
    let factory = |b: &BackendConfig| {
        calls.set(calls.get() + 1);
        b.build()
    };
    let run = |out: &Path| {
        let mut cfg = RunConfig::new("evaluate");
        cfg.bank = Some(bank_path.clone());
        cfg.backend = Some(parse_backend("mock:rasch=0.25", None, None, None).unwrap());
        cfg.seed = 5;
        cfg.baseline_trials = 20;
        cfg.out = Some(out.to_path_buf());
        evaluate(&cfg, &factory)
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    if let Err(e) = run(&a).and_then(|_| run(&b)) {
        return outcome(false, format!("evaluate failed: {e}"));
    }
    // Transcripts carry wall-clock timestamps and run_config.json the output path.
    let skip = ["transcripts.jsonl", "run_config.json"];
    let same = read_tree(&a, &skip) == read_tree(&b, &skip);
    let built_live = calls.get();

    let c = tmp.path().join("c");
    let mut replay = RunConfig::new("evaluate");
    replay.replay = Some(a.clone());
    replay.out = Some(c.clone());
    let replayed = evaluate(&replay, &factory).is_ok();
    let replay_builds = calls.get() - built_live;
    let report_same = fs::read(a.join("report.json")).ok() == fs::read(c.join("report.json")).ok();
    outcome(
        same && replayed && replay_builds == 0 && report_same,
        format!(
            "reruns identical = {same}, replay identical = {report_same}, backends built during replay = {replay_builds}"
        ),
    )
}

fn ks_fixture() -> Outcome {
    let n = 100;
    let quantiles: Vec<f64> = (0..n).map(|i| normal_quantile((i as f64 + 0.5) / n as f64)).collect();
    let q = ks_normality(&quantiles).unwrap();
    let uniform: Vec<f64> = uniform_difficulty_items(n, 0.0, 1.0, 2024)
        .iter()
        .map(|c| c.difficulty.value())
        .collect();
    let (m, s) = gradealign::stats::mean_and_std(&uniform);
    let matched: Vec<f64> = uniform.iter().map(|u| (u - m) / s).collect();
    let u = ks_normality(&matched).unwrap();
    let ok = q.p_value > 0.05
        && u.statistic > q.statistic
        && (u.statistic - KS_UNIFORM_ORACLE_STATISTIC).abs() <= KS_ORACLE_TOL
        && (u.p_value - KS_UNIFORM_ORACLE_P).abs() <= KS_ORACLE_TOL;
    outcome(
        ok,
        format!(
            "quantile D = {:.4} (p = {:.3}); uniform D = {:.6} vs oracle {:.6} (p = {:.4})",
            q.statistic, q.p_value, u.statistic, KS_UNIFORM_ORACLE_STATISTIC, u.p_value
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 formula fixtures", formula_fixtures, Some(Duration::from_secs(1))),
        ("2 oracle equivalence", oracle_equivalence, Some(Duration::from_secs(30))),
        ("3 ability recovery", recovery, Some(Duration::from_secs(60))),
        ("4 band consistency", band_consistency, None),
        ("5 table semantics", table_semantics, None),
        ("6 baseline sanity", baseline_sanity, None),
        ("7 end-to-end determinism", end_to_end_determinism, None),
        ("8 ks fixture", ks_fixture, None),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let mut o = check();
        let elapsed = start.elapsed();
        if let Some(limit) = limit {
            if elapsed > limit {
                o.ok = false;
                o.detail.push_str(&format!("; exceeded {limit:?}"));
            }
        }
        println!(
            "{} criterion {name}: {} [{:.3}s]",
            if o.ok { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
        failed += usize::from(!o.ok);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
