//! Operator commands for distributed average tracking scenarios.
//!
//! Every command returns a [`CliError`] on failure; [`CliError::exit_code`]
//! maps it to the process exit status (1 validation, 2 runtime abort,
//! 3 usage).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dat_core::analysis::AnalysisReport;
use dat_core::export::{write_csv, write_json};
use dat_core::scenario::{BuiltScenario, ScenarioError, VariantSpec, OVERRIDE_KEYS};
use dat_core::sim::{simulate, SimError, Violation};
use dat_core::ScenarioFile;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "DAT_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("output directory {path} is not writable: {source}")]
    Unwritable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Scenario {
        path: PathBuf,
        source: ScenarioError,
    },
    #[error("validation failed:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error("run finished with status `{}` (see {})", .0.status, .0.dir.display())]
    Failed(Box<RunManifest>),
    #[error("{} of {} runs did not finish cleanly", .failed, .total)]
    SweepFailed {
        failed: usize,
        total: usize,
        worst: i32,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Read { .. } | CliError::Unwritable { .. } => 3,
            CliError::Scenario { source, .. } => match source {
                ScenarioError::UnknownOverride { .. } | ScenarioError::MalformedOverride(_) => 3,
                _ => 1,
            },
            CliError::Invalid(_) => 1,
            CliError::Failed(m) => m.status.exit_code(),
            CliError::SweepFailed { worst, .. } => *worst,
            CliError::Io(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    /// The reference left its declared bound during the run.
    AssumptionViolated,
    /// A Lyapunov monitor increased beyond its numerical slack.
    InvariantViolated,
    Aborted,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::AssumptionViolated | RunStatus::InvariantViolated => 1,
            RunStatus::Aborted => 2,
        }
    }
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunStatus::Ok => "ok",
            RunStatus::AssumptionViolated => "assumption-violated",
            RunStatus::InvariantViolated => "invariant-violated",
            RunStatus::Aborted => "aborted",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceAudit {
    pub bound: Option<f64>,
    pub observed_max: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub scenario_path: PathBuf,
    /// SHA-256 of the scenario file bytes.
    pub scenario_sha256: String,
    pub overrides: Vec<String>,
    /// SHA-256 over the scenario bytes followed by each override.
    pub digest: String,
    pub variant: &'static str,
    pub started_at: String,
    pub finished_at: String,
    pub wall_seconds: f64,
    pub status: RunStatus,
    pub reference_audit: ReferenceAudit,
    #[serde(skip)]
    pub dir: PathBuf,
    pub outputs: Vec<PathBuf>,
}

/// Digest over scenario bytes and overrides, NUL-separated so that
/// `["a=1", "b=2"]` and `["a=1b=2"]` differ.
pub fn digest(bytes: &[u8], overrides: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    for o in overrides {
        h.update([0u8]);
        h.update(o.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn parse(path: &Path, bytes: &[u8], overrides: &[String]) -> Result<ScenarioFile, CliError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| CliError::Usage(format!("{}: not UTF-8 text: {e}", path.display())))?;
    ScenarioFile::from_json_with_overrides(text, overrides).map_err(|source| CliError::Scenario {
        path: path.to_path_buf(),
        source,
    })
}

fn build(
    path: &Path,
    file: &ScenarioFile,
    variant: &VariantSpec,
) -> Result<BuiltScenario<f64>, CliError> {
    file.build_variant(variant).map_err(|source| match source {
        ScenarioError::Violations(v) => CliError::Invalid(v),
        source => CliError::Scenario {
            path: path.to_path_buf(),
            source,
        },
    })
}

/// Creates `dir` and proves it accepts writes.
pub fn ensure_writable(dir: &Path) -> Result<(), CliError> {
    let err = |source| CliError::Unwritable {
        path: dir.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(err)?;
    let probe = dir.join(".dat-write-probe");
    fs::write(&probe, b"").map_err(err)?;
    fs::remove_file(&probe).map_err(err)
}

/// Checks every assumption the scenario relies on; returns the list of
/// violations, empty when the file is usable.
pub fn cmd_validate(path: &Path) -> Result<Vec<Violation>, CliError> {
    let bytes = read(path)?;
    let file = parse(path, &bytes, &[])?;
    let mut violations = file.check::<f64>().map_err(|source| CliError::Scenario {
        path: path.to_path_buf(),
        source,
    })?;
    if violations.is_empty() {
        for v in std::iter::once(&file.variant).chain(&file.variants) {
            match build(path, &file, v) {
                Ok(_) => {}
                Err(CliError::Invalid(vs)) => violations.extend(vs),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(violations)
}

fn run_variant(
    path: &Path,
    bytes: &[u8],
    file: &ScenarioFile,
    variant: &VariantSpec,
    overrides: &[String],
    out: &Path,
) -> Result<(RunManifest, AnalysisReport), CliError> {
    ensure_writable(out)?;
    let built = build(path, file, variant)?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let clock = Instant::now();
    let (traj, aborted) = match simulate(&built.scenario) {
        Ok(t) => (t, false),
        Err(SimError::NonFinite { partial, .. }) => (*partial, true),
        Err(SimError::Invalid(v)) => return Err(CliError::Invalid(v)),
        Err(SimError::Controller(e)) => {
            return Err(CliError::Scenario {
                path: path.to_path_buf(),
                source: e.into(),
            })
        }
    };
    let wall_seconds = clock.elapsed().as_secs_f64();

    let csv_path = out.join("trajectory.csv");
    let json_path = out.join("trajectory.json");
    let report_path = out.join("report.json");
    let manifest_path = out.join("manifest.json");
    write_csv(&traj, fs::File::create(&csv_path)?)?;
    write_json(&traj, fs::File::create(&json_path)?)?;

    let report =
        AnalysisReport::from_trajectory(&traj, &built.scenario.gains, &built.q1, &built.q2)
            .map_err(|e| CliError::Usage(format!("analysis failed: {e}")))?;
    fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;

    let observed_max = report.max_reference_norm;
    let within_bound = built.reference_bound.is_none_or(|b| observed_max <= b);
    let status = if aborted {
        RunStatus::Aborted
    } else if !within_bound {
        RunStatus::AssumptionViolated
    } else if !report.violations.is_empty() {
        RunStatus::InvariantViolated
    } else {
        RunStatus::Ok
    };
    let manifest = RunManifest {
        tool: "dat",
        tool_version: TOOL_VERSION,
        scenario_path: path.to_path_buf(),
        scenario_sha256: sha256_hex(bytes),
        overrides: overrides.to_vec(),
        digest: digest(bytes, overrides),
        variant: variant.tag(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        wall_seconds,
        status,
        reference_audit: ReferenceAudit {
            bound: built.reference_bound,
            observed_max,
            within_bound,
        },
        dir: out.to_path_buf(),
        outputs: vec![csv_path, json_path, report_path, manifest_path.clone()],
    };
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok((manifest, report))
}

/// Runs the scenario's primary variant and writes trajectory, report and
/// manifest into `out`. A run that finishes with a non-ok status still
/// writes all files and returns [`CliError::Failed`].
pub fn cmd_run(path: &Path, out: &Path, overrides: &[String]) -> Result<RunManifest, CliError> {
    ensure_writable(out)?;
    let bytes = read(path)?;
    let file = parse(path, &bytes, overrides)?;
    let (manifest, _) = run_variant(path, &bytes, &file, &file.variant, overrides, out)?;
    if manifest.status == RunStatus::Ok {
        Ok(manifest)
    } else {
        Err(CliError::Failed(Box::new(manifest)))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub label: String,
    pub variant: &'static str,
    pub status: RunStatus,
    pub final_tracking_error: f64,
    pub final_consensus_error: f64,
    /// Total variation of the control input summed over nodes and channels.
    pub total_variation: f64,
    /// `total_variation` relative to the first row.
    pub tv_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub digest: String,
    pub rows: Vec<CompareRow>,
}

/// Runs every entry of the scenario's `variants` list on the same initial
/// conditions and tabulates tracking error and input total variation.
pub fn cmd_compare(path: &Path, out: &Path) -> Result<ComparisonReport, CliError> {
    ensure_writable(out)?;
    let bytes = read(path)?;
    let file = parse(path, &bytes, &[])?;
    if file.variants.len() < 2 {
        return Err(CliError::Usage(format!(
            "compare needs at least two entries in `variants`, found {}",
            file.variants.len()
        )));
    }
    let mut rows: Vec<CompareRow> = Vec::new();
    let mut worst = RunStatus::Ok;
    for (k, v) in file.variants.iter().enumerate() {
        let label = format!("{k}-{}", v.tag());
        let (m, report) = run_variant(path, &bytes, &file, v, &[], &out.join(&label))?;
        if m.status.exit_code() > worst.exit_code() {
            worst = m.status;
        }
        let tv: f64 = report.tv_per_node.iter().flatten().sum();
        let base = rows.first().map_or(tv, |r| r.total_variation);
        rows.push(CompareRow {
            label,
            variant: v.tag(),
            status: m.status,
            final_tracking_error: report.final_tracking_error,
            final_consensus_error: report.final_consensus_error,
            total_variation: tv,
            tv_ratio: if base > 0.0 { tv / base } else { f64::NAN },
        });
    }
    let report = ComparisonReport {
        digest: digest(&bytes, &[]),
        rows,
    };
    fs::write(
        out.join("compare.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    let mut w = csv::Writer::from_path(out.join("compare.csv")).map_err(std::io::Error::from)?;
    for r in &report.rows {
        w.serialize(r).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    if worst != RunStatus::Ok {
        return Err(CliError::SweepFailed {
            failed: report
                .rows
                .iter()
                .filter(|r| r.status != RunStatus::Ok)
                .count(),
            total: report.rows.len(),
            worst: worst.exit_code(),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub dir: PathBuf,
    pub status: String,
    pub final_tracking_error: Option<f64>,
    pub final_consensus_error: Option<f64>,
    pub digest: Option<String>,
}

/// Thread count from `DAT_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{s}`"
            ))),
        },
    }
}

fn dir_name(param: &str, value: &str) -> String {
    let safe: String = value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{param}={safe}")
}

/// One run per value of `param`, each in its own directory under `out`,
/// plus `summary.csv` / `summary.json`.
pub fn cmd_sweep(
    path: &Path,
    param: &str,
    values: &[String],
    out: &Path,
    threads: Option<usize>,
) -> Result<Vec<SweepRow>, CliError> {
    if !OVERRIDE_KEYS.contains(&param) {
        return Err(CliError::Usage(format!(
            "unknown sweep parameter `{param}`; valid keys: {}",
            OVERRIDE_KEYS.join(", ")
        )));
    }
    let values: Vec<String> = values
        .iter()
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    ensure_writable(out)?;
    let bytes = read(path)?;
    parse(path, &bytes, &[])?;

    let job = |value: &String| -> (SweepRow, i32) {
        let dir = out.join(dir_name(param, value));
        let overrides = vec![format!("{param}={value}")];
        let result = parse(path, &bytes, &overrides)
            .and_then(|file| run_variant(path, &bytes, &file, &file.variant, &overrides, &dir));
        match result {
            Ok((m, rep)) => (
                SweepRow {
                    value: value.clone(),
                    dir,
                    status: m.status.to_string(),
                    final_tracking_error: Some(rep.final_tracking_error),
                    final_consensus_error: Some(rep.final_consensus_error),
                    digest: Some(m.digest),
                },
                m.status.exit_code(),
            ),
            Err(e) => (
                SweepRow {
                    value: value.clone(),
                    dir,
                    status: format!("error: {e}"),
                    final_tracking_error: None,
                    final_consensus_error: None,
                    digest: None,
                },
                e.exit_code(),
            ),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let results: Vec<(SweepRow, i32)> = pool.install(|| values.par_iter().map(job).collect());

    let rows: Vec<SweepRow> = results.iter().map(|(r, _)| r.clone()).collect();
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&rows).expect("summary serializes"),
    )?;
    let mut w = csv::Writer::from_path(out.join("summary.csv")).map_err(std::io::Error::from)?;
    for r in &rows {
        w.serialize(r).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    let failed = results.iter().filter(|(_, c)| *c != 0).count();
    if failed > 0 {
        return Err(CliError::SweepFailed {
            failed,
            total: rows.len(),
            worst: results.iter().map(|(_, c)| *c).max().unwrap_or(1),
        });
    }
    Ok(rows)
}
