use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gradealign::harness::PromptKind;
use gradealign::{Grade, Subject};

#[derive(Debug, Parser)]
#[command(name = "gradealign", version, about = "Place examinees on a grade-level Rasch scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Check an item bank and list every rejected item.
    Validate(ValidateArgs),
    /// Write item difficulties for one partition.
    Calibrate(PartitionArgs),
    /// Query an examinee on bank partitions and write an alignment report.
    Evaluate(EvaluateArgs),
    /// Simulate a cohort and check ability recovery.
    Simulate(SimulateArgs),
    /// KS normality test of a partition's item correct-rates.
    Normality(PartitionArgs),
    /// Merge reports from several evaluate runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// Report rejected items but still load the rest.
    #[arg(long)]
    pub permissive: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub subject: Subject,
    #[arg(long)]
    pub grade: Grade,
    #[arg(long)]
    pub permissive: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "replay")]
    pub bank: Option<PathBuf>,
    /// Subjects to evaluate (comma-separated); all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub subject: Vec<Subject>,
    /// Grades to evaluate (comma-separated); all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub grade: Vec<Grade>,
    /// Prompt modes: unenforced, minimal, basic-cot, full-cot. All when
    /// omitted. Enforced modes target each partition's own grade.
    #[arg(long, value_delimiter = ',')]
    pub mode: Vec<PromptKind>,
    /// mock:correct, mock:random, mock:fixed=<L>, mock:rasch=<theta>,
    /// scripted:<path> or remote.
    #[arg(long, required_unless_present = "replay")]
    pub backend: Option<String>,
    /// URL for the remote backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name sent to the remote backend.
    #[arg(long)]
    pub model: Option<String>,
    /// Concurrent requests for the remote backend.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Examinee name used in transcripts and reports; defaults to the
    /// backend name.
    #[arg(long)]
    pub examinee: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = gradealign::alignment::DEFAULT_STABILITY_THRESHOLD)]
    pub stability_threshold: f64,
    #[arg(long)]
    pub permissive: bool,
    /// Rebuild every artifact from the transcripts and run configuration in
    /// this directory, without contacting any backend.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Random-choice trials per partition (0 skips the baseline).
    #[arg(long, default_value_t = 100)]
    pub baseline_trials: usize,
    /// Directory of prompt templates replacing the built-in set.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of items with difficulties uniform on [b-min, b-max).
    #[arg(long, default_value_t = 100, conflicts_with = "bank")]
    pub items: usize,
    #[arg(long, default_value_t = 200)]
    pub examinees: usize,
    #[arg(long, default_value_t = -2.5, allow_negative_numbers = true)]
    pub b_min: f64,
    #[arg(long, default_value_t = 2.5, allow_negative_numbers = true)]
    pub b_max: f64,
    /// Take difficulties from a calibrated bank partition instead.
    #[arg(long, requires_all = ["subject", "grade"])]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub subject: Option<Subject>,
    #[arg(long)]
    pub grade: Option<Grade>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directories of earlier evaluate runs.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = gradealign::alignment::DEFAULT_STABILITY_THRESHOLD)]
    pub stability_threshold: f64,
}
