//! Result persistence: telemetry CSV with a fixed 13-column schema, a
//! metrics JSON, and a scenario-echo JSON capturing the fully resolved
//! configuration plus seed. All files are written atomically (temp +
//! rename) and every IO error carries the offending path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::harness::metrics::{Metrics, Record};
use crate::harness::runner::{PathStats, ScenarioResult};
use crate::harness::scenario::Scenario;
use crate::harness::HarnessError;

/// The one and only telemetry column order.
pub(crate) const CSV_HEADER: &str = "t,v,v_d,alpha,beta,theta,phi,phi_d,tau1,tau2,I1,I2,phase";
const CSV_COLUMNS: usize = 13;

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write `contents` to `path` atomically: a sibling temp file is written
/// in full, then renamed over the target.
fn write_atomic(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Serialize telemetry rows to CSV. Floats use the shortest representation
/// that parses back to the identical bit pattern, so a round trip through
/// [`parse_csv`] is lossless.
pub fn write_csv(records: &[Record], path: &Path) -> Result<(), HarnessError> {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.v,
            r.v_d,
            r.alpha,
            r.beta,
            r.theta,
            r.phi,
            r.phi_d,
            r.tau1,
            r.tau2,
            r.i1,
            r.i2,
            r.phase
        ));
    }
    write_atomic(path, &out)
}

fn parse_field(
    field: &str,
    path: &Path,
    line: usize,
) -> Result<f64, HarnessError> {
    field.parse().map_err(|_| HarnessError::Parse {
        path: path.display().to_string(),
        line,
        reason: format!("not a number: {field:?}"),
    })
}

/// Read a telemetry CSV back into rows, verifying the schema.
pub fn parse_csv(path: &Path) -> Result<Vec<Record>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(HarnessError::Parse {
                path: path.display().to_string(),
                line: 1,
                reason: format!("unexpected header: {header:?}"),
            })
        }
        None => {
            return Err(HarnessError::Parse {
                path: path.display().to_string(),
                line: 1,
                reason: "empty file".into(),
            })
        }
    }
    let mut records = Vec::new();
    for (idx, row) in lines {
        if row.is_empty() {
            continue;
        }
        let line = idx + 1;
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != CSV_COLUMNS {
            return Err(HarnessError::Parse {
                path: path.display().to_string(),
                line,
                reason: format!("expected {CSV_COLUMNS} columns, found {}", fields.len()),
            });
        }
        records.push(Record {
            t: parse_field(fields[0], path, line)?,
            v: parse_field(fields[1], path, line)?,
            v_d: parse_field(fields[2], path, line)?,
            alpha: parse_field(fields[3], path, line)?,
            beta: parse_field(fields[4], path, line)?,
            theta: parse_field(fields[5], path, line)?,
            phi: parse_field(fields[6], path, line)?,
            phi_d: parse_field(fields[7], path, line)?,
            tau1: parse_field(fields[8], path, line)?,
            tau2: parse_field(fields[9], path, line)?,
            i1: parse_field(fields[10], path, line)?,
            i2: parse_field(fields[11], path, line)?,
            phase: fields[12].to_string(),
        });
    }
    Ok(records)
}

/// Load and validate a scenario document.
pub fn read_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            reason: e.to_string(),
        })?;
    scenario
        .validate()
        .map_err(|reason| HarnessError::BadScenario { reason })?;
    Ok(scenario)
}

#[derive(Serialize)]
struct MetricsDocument<'a> {
    name: &'a str,
    seed: u64,
    velocity: &'a Metrics,
    roll: &'a Metrics,
    solver_failures: [u64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<&'a PathStats>,
}

#[derive(Serialize)]
struct EchoDocument<'a> {
    seed: u64,
    scenario: &'a Scenario,
}

/// The files one exported run consists of.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedFiles {
    pub csv: PathBuf,
    pub metrics: PathBuf,
    pub scenario: PathBuf,
}

/// Write the full result set into `dir`: `<name>.csv`,
/// `<name>.metrics.json`, and `<name>.scenario.json`.
pub fn export_results(result: &ScenarioResult, dir: &Path) -> Result<ExportedFiles, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let base = dir.join(&result.scenario.name);
    let files = ExportedFiles {
        csv: base.with_extension("csv"),
        metrics: base.with_extension("metrics.json"),
        scenario: base.with_extension("scenario.json"),
    };

    write_csv(&result.records, &files.csv)?;

    let metrics = MetricsDocument {
        name: &result.scenario.name,
        seed: result.seed,
        velocity: &result.velocity_metrics,
        roll: &result.roll_metrics,
        solver_failures: result.solver_failures,
        path: result.path.as_ref(),
    };
    let mut text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    text.push('\n');
    write_atomic(&files.metrics, &text)?;

    let echo = EchoDocument {
        seed: result.seed,
        scenario: &result.scenario,
    };
    let mut text = serde_json::to_string_pretty(&echo).expect("scenario serialize");
    text.push('\n');
    write_atomic(&files.scenario, &text)?;

    Ok(files)
}
