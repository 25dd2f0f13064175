use std::path::PathBuf;

use gradealign::harness::{BackendConfig, MockBackend, MockPolicy, PromptKind, RemoteConfig};
use gradealign::{Grade, Subject};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSpec {
    pub items: usize,
    pub examinees: usize,
    pub b_min: f64,
    pub b_max: f64,
}

/// Everything a command needs, validated up front and saved as
/// `run_config.json` in the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub bank: Option<PathBuf>,
    pub subjects: Vec<Subject>,
    pub grades: Vec<Grade>,
    pub modes: Vec<PromptKind>,
    pub backend: Option<BackendConfig>,
    pub examinee: Option<String>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub stability_threshold: f64,
    pub permissive: bool,
    pub replay: Option<PathBuf>,
    pub baseline_trials: usize,
    pub templates: Option<PathBuf>,
    pub simulate: Option<SimulateSpec>,
    pub inputs: Vec<PathBuf>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        RunConfig {
            command: command.to_string(),
            bank: None,
            subjects: Vec::new(),
            grades: Vec::new(),
            modes: Vec::new(),
            backend: None,
            examinee: None,
            seed: 0,
            out: None,
            stability_threshold: gradealign::alignment::DEFAULT_STABILITY_THRESHOLD,
            permissive: false,
            replay: None,
            baseline_trials: 0,
            templates: None,
            simulate: None,
            inputs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if !self.stability_threshold.is_finite() || self.stability_threshold < 0.0 {
            return usage(format!(
                "--stability-threshold must be a finite non-negative number, got {}",
                self.stability_threshold
            ));
        }
        match self.command.as_str() {
            "evaluate" if self.replay.is_none() => {
                if self.bank.is_none() {
                    return usage("evaluate needs --bank".into());
                }
                if self.backend.is_none() {
                    return usage("evaluate needs --backend".into());
                }
                if self.examinee.as_deref().is_some_and(|e| e.is_empty() || e.contains(['\n', '\r'])) {
                    return usage("--examinee must be a non-empty single line".into());
                }
            }
            "simulate" => {
                let Some(s) = &self.simulate else {
                    return usage("missing simulation settings".into());
                };
                if s.examinees == 0 {
                    return usage("--examinees must be at least 1".into());
                }
                if self.bank.is_none() {
                    if s.items == 0 {
                        return usage("--items must be at least 1".into());
                    }
                    if !(s.b_min.is_finite() && s.b_max.is_finite() && s.b_min < s.b_max) {
                        return usage(format!("need finite --b-min < --b-max, got {} and {}", s.b_min, s.b_max));
                    }
                }
            }
            "report" if self.inputs.is_empty() => return usage("report needs at least one --input".into()),
            _ => {}
        }
        Ok(())
    }

    /// Subjects to run, all when none were requested.
    pub fn subjects_or_all(&self) -> Vec<Subject> {
        if self.subjects.is_empty() {
            Subject::ALL.to_vec()
        } else {
            dedup(&self.subjects)
        }
    }

    pub fn grades_or_all(&self) -> Vec<Grade> {
        if self.grades.is_empty() {
            Grade::ALL.to_vec()
        } else {
            dedup(&self.grades)
        }
    }

    pub fn modes_or_all(&self) -> Vec<PromptKind> {
        if self.modes.is_empty() {
            PromptKind::ALL.to_vec()
        } else {
            dedup(&self.modes)
        }
    }
}

fn dedup<T: Ord + Copy>(xs: &[T]) -> Vec<T> {
    let mut v = xs.to_vec();
    v.sort();
    v.dedup();
    v
}

/// Parses `--backend` together with the remote-only flags.
pub fn parse_backend(
    spec: &str,
    endpoint: Option<&str>,
    model: Option<&str>,
    max_in_flight: Option<usize>,
) -> Result<BackendConfig, CliError> {
    let bad = |m: &str| CliError::Usage(format!("--backend `{spec}`: {m}"));
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    if kind != "remote" && (endpoint.is_some() || model.is_some() || max_in_flight.is_some()) {
        return Err(bad("--endpoint, --model and --max-in-flight apply only to the remote backend"));
    }
    let mock = |p| Ok(BackendConfig::Mock(MockBackend::new(p)));
    match kind {
        "mock" => {
            let (policy, value) = arg.split_once('=').unwrap_or((arg, ""));
            match policy {
                "correct" => mock(MockPolicy::AlwaysCorrect),
                "random" => mock(MockPolicy::UniformRandom),
                "fixed" => {
                    let mut cs = value.chars();
                    match (cs.next(), cs.next()) {
                        (Some(l), None) if l.is_ascii_uppercase() => mock(MockPolicy::Fixed { label: l }),
                        _ => Err(bad("fixed needs one capital letter, e.g. mock:fixed=B")),
                    }
                }
                "rasch" => {
                    let theta: f64 = value
                        .parse()
                        .map_err(|_| bad("rasch needs a number, e.g. mock:rasch=0.5"))?;
                    if !theta.is_finite() {
                        return Err(bad("theta must be finite"));
                    }
                    mock(MockPolicy::Rasch { theta })
                }
                _ => Err(bad("mock policies are correct, random, fixed=<L> and rasch=<theta>")),
            }
        }
        "scripted" if !arg.is_empty() => Ok(BackendConfig::Scripted { path: PathBuf::from(arg) }),
        "scripted" => Err(bad("needs a script path, e.g. scripted:answers.json")),
        "remote" => {
            let endpoint = endpoint.ok_or_else(|| bad("needs --endpoint"))?;
            let mut cfg = RemoteConfig::new(endpoint);
            if let Some(m) = model {
                cfg.model = m.to_string();
            }
            if let Some(n) = max_in_flight {
                if n == 0 {
                    return Err(bad("--max-in-flight must be at least 1"));
                }
                cfg.max_in_flight = n;
            }
            Ok(BackendConfig::Remote(cfg))
        }
        _ => Err(bad("expected mock:..., scripted:<path> or remote")),
    }
}
