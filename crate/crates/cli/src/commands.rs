use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gradealign::alignment::{band_of, random_choice_baseline, AbilityRow, AlignmentReport};
use gradealign::cohort::{
    recover_abilities, recovery_summary, simulate_cohort, uniform_difficulty_items, RecoverySummary,
};
use gradealign::harness::{
    append_transcript, read_transcript, replay_session, run_session, Backend, BackendConfig,
    BackendError, PromptMode, RetryPolicy, SessionConfig, SessionError, SessionOutcome,
    SessionReport, TemplateSet, TranscriptEntry,
};
use gradealign::item_bank::{load_bank, BankError, LoadOptions, Rejection};
use gradealign::rasch::{calibrate, estimate_ability, CalibratedItem, Difficulty};
use gradealign::stats::{ks_normality, KsResult};
use gradealign::{Grade, Item, ItemBank, ResponseMatrix, Subject};
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, EvaluateArgs, PartitionArgs, ReportArgs, SimulateArgs, ValidateArgs};
use crate::config::{parse_backend, RunConfig, SimulateSpec};
use crate::{write_atomic, write_json, CliError};

const RUN_CONFIG: &str = "run_config.json";
const TRANSCRIPTS: &str = "transcripts.jsonl";
const REPORT_JSON: &str = "report.json";
const REPORT_CSV: &str = "report.csv";

/// Runs one command and returns what it prints on stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => {
            let cfg = evaluate_config(a)?;
            let summary = evaluate(&cfg, &|b: &BackendConfig| b.build())?;
            Ok(summary.to_text())
        }
        Command::Simulate(a) => cmd_simulate(a),
        Command::Normality(a) => cmd_normality(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn slug(subject: Subject) -> String {
    subject.as_str().to_ascii_lowercase()
}

fn bank_error(e: BankError) -> CliError {
    match e {
        BankError::Io { .. } => CliError::Io(e.to_string()),
        BankError::Rejected(ref rejections) => CliError::Validation {
            message: e.to_string(),
            diagnostics: serde_json::to_string_pretty(rejections).ok(),
        },
        other => CliError::validation(other),
    }
}

fn load(path: &Path, permissive: bool) -> Result<ItemBank, CliError> {
    load_bank(path, LoadOptions { permissive })
        .map(|o| o.bank)
        .map_err(bank_error)
}

fn partition(bank: &ItemBank, subject: Subject, grade: Grade) -> Result<Vec<Item>, CliError> {
    bank.partition(subject, grade).map_err(bank_error)
}

fn save_config(out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    write_json(&out.join(RUN_CONFIG), cfg)
}

#[derive(Debug, Serialize)]
struct PartitionCount {
    subject: Subject,
    grade: Grade,
    n_items: usize,
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    bank: String,
    ok: bool,
    n_items: usize,
    partitions: Vec<PartitionCount>,
    error: Option<String>,
    rejections: Vec<Rejection>,
}

fn cmd_validate(a: ValidateArgs) -> Result<String, CliError> {
    let mut cfg = RunConfig::new("validate");
    cfg.bank = Some(a.bank.clone());
    cfg.permissive = a.permissive;
    cfg.out = a.out.clone();
    cfg.validate()?;

    let mut diag = Diagnostics {
        bank: a.bank.display().to_string(),
        ok: false,
        n_items: 0,
        partitions: Vec::new(),
        error: None,
        rejections: Vec::new(),
    };
    match load_bank(&a.bank, LoadOptions { permissive: a.permissive }) {
        Ok(outcome) => {
            diag.n_items = outcome.bank.len();
            diag.partitions = outcome
                .bank
                .counts()
                .into_iter()
                .map(|((subject, grade), n_items)| PartitionCount { subject, grade, n_items })
                .collect();
            diag.ok = outcome.rejected.is_empty();
            diag.rejections = outcome.rejected;
        }
        Err(e @ BankError::Io { .. }) => return Err(CliError::Io(e.to_string())),
        Err(BankError::Rejected(r)) => {
            diag.error = Some(format!("{} item(s) rejected", r.len()));
            diag.rejections = r;
        }
        Err(e) => diag.error = Some(e.to_string()),
    }
    let json = serde_json::to_string_pretty(&diag).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    if let Some(out) = &a.out {
        write_atomic(&out.join("validation.json"), json.as_bytes())?;
        save_config(out, &cfg)?;
    }
    if diag.ok {
        Ok(json)
    } else {
        Err(CliError::Validation {
            message: diag
                .error
                .clone()
                .unwrap_or_else(|| format!("{} item(s) rejected", diag.rejections.len())),
            diagnostics: Some(json),
        })
    }
}

fn partition_config(command: &str, a: &PartitionArgs) -> RunConfig {
    let mut cfg = RunConfig::new(command);
    cfg.bank = Some(a.bank.clone());
    cfg.subjects = vec![a.subject];
    cfg.grades = vec![a.grade];
    cfg.permissive = a.permissive;
    cfg.out = a.out.clone();
    cfg
}

/// `item_id,p,b` rows in partition order.
pub fn difficulty_csv(items: &[CalibratedItem]) -> String {
    let mut s = String::from("item_id,p,b\n");
    for c in items {
        let _ = writeln!(s, "{},{},{}", csv_field(&c.item_id), c.p, c.difficulty.value());
    }
    s
}

fn cmd_calibrate(a: PartitionArgs) -> Result<String, CliError> {
    let cfg = partition_config("calibrate", &a);
    cfg.validate()?;
    let bank = load(&a.bank, a.permissive)?;
    let items = partition(&bank, a.subject, a.grade)?;
    let csv = difficulty_csv(&calibrate(&items));
    if let Some(out) = &a.out {
        write_atomic(&out.join("difficulties.csv"), csv.as_bytes())?;
        save_config(out, &cfg)?;
    }
    Ok(csv)
}

#[derive(Debug, Serialize, Deserialize)]
struct NormalityArtifact {
    subject: Subject,
    grade: Grade,
    n_items: usize,
    verdict: String,
    result: KsResult,
}

fn cmd_normality(a: PartitionArgs) -> Result<String, CliError> {
    let cfg = partition_config("normality", &a);
    cfg.validate()?;
    let bank = load(&a.bank, a.permissive)?;
    let items = partition(&bank, a.subject, a.grade)?;
    let rates: Vec<f64> = calibrate(&items).iter().map(|c| c.p).collect();
    let result = ks_normality(&rates).map_err(CliError::validation)?;
    let artifact = NormalityArtifact {
        subject: a.subject,
        grade: a.grade,
        n_items: items.len(),
        verdict: if result.consistent_with_normal {
            "consistent".into()
        } else {
            "not consistent".into()
        },
        result,
    };
    if let Some(out) = &a.out {
        write_json(&out.join("normality.json"), &artifact)?;
        save_config(out, &cfg)?;
    }
    Ok(serde_json::to_string_pretty(&artifact).map_err(|e| CliError::Io(e.to_string()))? + "\n")
}

fn cmd_simulate(a: SimulateArgs) -> Result<String, CliError> {
    let mut cfg = RunConfig::new("simulate");
    cfg.bank = a.bank.clone();
    cfg.subjects = a.subject.into_iter().collect();
    cfg.grades = a.grade.into_iter().collect();
    cfg.seed = a.seed;
    cfg.out = Some(a.out.clone());
    cfg.simulate = Some(SimulateSpec {
        items: a.items,
        examinees: a.examinees,
        b_min: a.b_min,
        b_max: a.b_max,
    });
    cfg.validate()?;

    let items = match (&a.bank, a.subject, a.grade) {
        (Some(path), Some(s), Some(g)) => calibrate(&partition(&load(path, false)?, s, g)?),
        (None, _, _) => uniform_difficulty_items(a.items, a.b_min, a.b_max, a.seed),
        _ => return Err(CliError::Usage("--bank needs --subject and --grade".into())),
    };
    let cohort = simulate_cohort(&items, a.examinees, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let est = recover_abilities(&cohort, &items).map_err(CliError::validation)?;
    let summary: RecoverySummary = recovery_summary(&cohort, &est);

    let mut abilities = String::from("examinee_id,theta_true,theta_est,at_boundary\n");
    for ((id, t), e) in cohort.responses.examinee_ids().iter().zip(&cohort.abilities).zip(&est) {
        let _ = writeln!(abilities, "{id},{t},{},{}", e.value, e.at_boundary);
    }
    write_atomic(&a.out.join("cohort.csv"), cohort.responses.to_csv().as_bytes())?;
    write_atomic(&a.out.join("difficulties.csv"), difficulty_csv(&items).as_bytes())?;
    write_atomic(&a.out.join("abilities.csv"), abilities.as_bytes())?;
    write_json(&a.out.join("recovery.json"), &summary)?;
    save_config(&a.out, &cfg)?;
    Ok(serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))? + "\n")
}

fn cmd_report(a: ReportArgs) -> Result<String, CliError> {
    let mut cfg = RunConfig::new("report");
    cfg.inputs = a.inputs.clone();
    cfg.out = Some(a.out.clone());
    cfg.stability_threshold = a.stability_threshold;
    cfg.validate()?;
    let mut reports = Vec::new();
    for dir in &a.inputs {
        let path = dir.join(REPORT_JSON);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        reports.push(
            AlignmentReport::from_json(&text)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?,
        );
    }
    let merged = AlignmentReport::merge(reports, a.stability_threshold);
    write_report(&a.out, &merged)?;
    save_config(&a.out, &cfg)?;
    Ok(summary_text(&merged))
}

fn write_report(out: &Path, report: &AlignmentReport) -> Result<(), CliError> {
    write_atomic(&out.join(REPORT_JSON), report.to_json().as_bytes())?;
    write_atomic(&out.join(REPORT_CSV), report.to_csv().as_bytes())
}

fn summary_text(report: &AlignmentReport) -> String {
    let mut s = String::from("examinee\tsubject\tgrade\tmode\ttheta\tpercentile\tband\n");
    for r in &report.abilities {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.3}\t{:.1}\t{}",
            r.examinee, r.subject, r.grade, r.mode, r.theta, r.percentile, r.band
        );
    }
    for v in &report.verdicts {
        let _ = writeln!(
            s,
            "verdict\t{}\t{}\t{}\tband={} ordering={} stability={} overall={}",
            v.examinee, v.subject, v.setting, v.verdict.band, v.verdict.ordering_ok, v.verdict.stability_ok, v.verdict.overall
        );
    }
    s
}

fn evaluate_config(a: EvaluateArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::new("evaluate");
    cfg.bank = a.bank;
    cfg.subjects = a.subject;
    cfg.grades = a.grade;
    cfg.modes = a.mode;
    cfg.backend = a
        .backend
        .as_deref()
        .map(|b| parse_backend(b, a.endpoint.as_deref(), a.model.as_deref(), a.max_in_flight))
        .transpose()?;
    cfg.examinee = a.examinee;
    cfg.seed = a.seed;
    cfg.out = Some(a.out);
    cfg.stability_threshold = a.stability_threshold;
    cfg.permissive = a.permissive;
    cfg.replay = a.replay;
    cfg.baseline_trials = a.baseline_trials;
    cfg.templates = a.templates;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub out: PathBuf,
    pub report: AlignmentReport,
    pub sessions: Vec<SessionReport>,
}

impl EvaluateSummary {
    pub fn to_text(&self) -> String {
        let failed: usize = self.sessions.iter().map(|s| s.n_failed).sum();
        let mut s = summary_text(&self.report);
        let _ = writeln!(
            s,
            "{} session(s), {failed} failed extraction(s); artifacts in {}",
            self.sessions.len(),
            self.out.display()
        );
        s
    }
}

#[derive(Debug, Serialize)]
struct Failure<'a> {
    item_id: &'a str,
    error: String,
    completed_items: usize,
}

/// Builds the backend for a live run.
pub type BackendFactory<'a> = dyn Fn(&BackendConfig) -> Result<Box<dyn Backend>, BackendError> + 'a;

type SessionKey = (String, PromptMode, Subject, Grade);

/// Runs (or replays) every requested session and writes the report.
///
/// `make_backend` is called at most once, and never in replay mode.
pub fn evaluate(
    cfg: &RunConfig,
    make_backend: &BackendFactory<'_>,
) -> Result<EvaluateSummary, CliError> {
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("evaluate needs --out".into()))?;

    // Replay takes everything but the output directory from the saved run.
    let (mut cfg, recorded) = match &cfg.replay {
        Some(dir) => {
            let path = dir.join(RUN_CONFIG);
            let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let mut base: RunConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
            if base.command != "evaluate" {
                return Err(CliError::Usage(format!("{} is not from an evaluate run", path.display())));
            }
            base.out = Some(out.clone());
            base.replay = Some(dir.clone());
            let entries = read_transcript(dir.join(TRANSCRIPTS)).map_err(CliError::validation)?;
            let mut grouped: BTreeMap<SessionKey, Vec<TranscriptEntry>> = BTreeMap::new();
            for e in entries {
                grouped
                    .entry((e.examinee.clone(), e.mode, e.subject, e.grade))
                    .or_default()
                    .push(e);
            }
            (base, Some(grouped))
        }
        None => (cfg.clone(), None),
    };
    cfg.validate()?;

    let bank_path = cfg
        .bank
        .clone()
        .ok_or_else(|| CliError::Usage("evaluate needs --bank".into()))?;
    let bank = load(&bank_path, cfg.permissive)?;
    let templates = match &cfg.templates {
        Some(dir) => TemplateSet::from_dir(dir).map_err(|e| CliError::Usage(e.to_string()))?,
        None => TemplateSet::builtin(),
    };

    let backend = match &recorded {
        Some(_) => None,
        None => {
            if out.join(TRANSCRIPTS).exists() {
                return Err(CliError::Usage(format!(
                    "{} already holds a transcript; choose a new --out",
                    out.display()
                )));
            }
            let b = cfg.backend.as_ref().expect("validated");
            Some(make_backend(b).map_err(|e| CliError::Backend(e.to_string()))?)
        }
    };
    if let Some(b) = &backend {
        cfg.examinee.get_or_insert_with(|| b.name());
    }
    let examinee = cfg
        .examinee
        .clone()
        .ok_or_else(|| CliError::validation("saved run configuration has no examinee"))?;
    if examinee.contains([',', '"', '\n', '\r']) || examinee.is_empty() {
        return Err(CliError::Usage(format!("examinee name `{examinee}` may not contain commas, quotes or line breaks")));
    }
    fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    save_config(&out, &cfg)?;

    let mut abilities = Vec::new();
    let mut sessions = Vec::new();
    let mut baselines = Vec::new();
    for (subject, grade) in partitions(&cfg, &bank)? {
        {
            let items = partition(&bank, subject, grade)?;
            let difficulties: Vec<Difficulty> = calibrate(&items).iter().map(|c| c.difficulty).collect();
            let mut row_ids = Vec::new();
            let mut rows = Vec::new();
            for kind in cfg.modes_or_all() {
                let mode = PromptMode::for_grade(kind, grade);
                let outcome = match &recorded {
                    Some(grouped) => {
                        let entries = grouped
                            .get(&(examinee.clone(), mode, subject, grade))
                            .map(Vec::as_slice)
                            .unwrap_or(&[]);
                        replay_session(&items, entries).map_err(|e| {
                            CliError::validation(format!("{subject} grade {grade} {mode}: {e}"))
                        })?
                    }
                    None => live_session(
                        &items,
                        &out,
                        SessionConfig {
                            examinee: examinee.clone(),
                            mode,
                            seed: cfg.seed,
                            retry: RetryPolicy::default(),
                            templates: templates.clone(),
                        },
                        backend.as_deref().expect("live run has a backend"),
                    )?,
                };
                let theta = estimate_ability(&outcome.responses, &difficulties).map_err(CliError::validation)?;
                abilities.push(AbilityRow {
                    examinee: examinee.clone(),
                    subject,
                    grade,
                    mode,
                    theta: theta.value,
                    at_boundary: theta.at_boundary,
                    percentile: theta.percentile(),
                    band: band_of(theta),
                    n_items: outcome.report.n_items,
                    n_correct: outcome.report.n_correct,
                    n_failed_extractions: outcome.report.n_failed,
                });
                row_ids.push(format!("{examinee}@{}", mode.label()));
                rows.push(outcome.responses.scores().to_vec());
                sessions.push(outcome.report);
            }
            let matrix = ResponseMatrix::new(row_ids, items.iter().map(|i| i.id.clone()).collect(), rows)
                .map_err(CliError::validation)?;
            write_atomic(
                &out.join("responses").join(format!("{}-g{}.csv", slug(subject), grade.number())),
                matrix.to_csv().as_bytes(),
            )?;
            if cfg.baseline_trials > 0 {
                baselines.push(random_choice_baseline(&items, cfg.baseline_trials, cfg.seed).map_err(CliError::validation)?);
            }
        }
    }

    let report = AlignmentReport::build(abilities, baselines, cfg.stability_threshold);
    write_report(&out, &report)?;
    write_json(&out.join("sessions.json"), &sessions)?;
    Ok(EvaluateSummary { out, report, sessions })
}

/// Requested partitions. When subjects or grades are left open, only the
/// partitions present in the bank are used.
fn partitions(cfg: &RunConfig, bank: &ItemBank) -> Result<Vec<(Subject, Grade)>, CliError> {
    let counts = bank.counts();
    let explicit = !cfg.subjects.is_empty() && !cfg.grades.is_empty();
    let mut out = Vec::new();
    for subject in cfg.subjects_or_all() {
        for grade in cfg.grades_or_all() {
            if explicit || counts.contains_key(&(subject, grade)) {
                out.push((subject, grade));
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::validation("the bank has no items for the requested subjects and grades"));
    }
    Ok(out)
}

fn live_session(
    items: &[Item],
    out: &Path,
    config: SessionConfig,
    backend: &dyn Backend,
) -> Result<SessionOutcome, CliError> {
    let transcript = out.join(TRANSCRIPTS);
    let persist = |entries: &[TranscriptEntry]| append_transcript(&transcript, entries).map_err(|e| CliError::Io(e.to_string()));
    match run_session(items, &config, backend) {
        Ok(outcome) => {
            persist(&outcome.transcript)?;
            Ok(outcome)
        }
        Err(SessionError::Aborted { item_id, source, partial }) => {
            persist(&partial)?;
            write_json(
                &out.join("failure.json"),
                &Failure {
                    item_id: &item_id,
                    error: source.to_string(),
                    completed_items: partial.len(),
                },
            )?;
            Err(CliError::Backend(format!(
                "{} on item `{item_id}`: {source}; partial transcript kept in {}",
                config.mode,
                transcript.display()
            )))
        }
        Err(e) => Err(CliError::validation(e)),
    }
}
