//! Append-only line-delimited measurement log with a run header on line 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{now_ms, pool, run_trial, CollectorError, Measurement, TrialPlan, Validity};
use crate::backend::Gateway;

pub const LOG_FORMAT: &str = "ctxaudit-log/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHeader {
    pub format: String,
    pub schema_hash: String,
    pub config_hash: String,
    pub started_at_ms: u64,
}

impl RunHeader {
    pub fn new(schema_hash: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self {
            format: LOG_FORMAT.into(),
            schema_hash: schema_hash.into(),
            config_hash: config_hash.into(),
            started_at_ms: now_ms(),
        }
    }

    /// Same schema and collection config; start time is ignored.
    pub fn matches(&self, other: &RunHeader) -> bool {
        self.format == other.format
            && self.schema_hash == other.schema_hash
            && self.config_hash == other.config_hash
    }

    fn describe(&self) -> String {
        format!("schema {} / config {}", self.schema_hash, self.config_hash)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLog {
    pub header: RunHeader,
    /// Latest record per trial, sorted by trial id.
    pub measurements: Vec<Measurement>,
    /// Lines that could not be decoded (e.g. a write cut off by a crash).
    pub skipped_lines: usize,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CollectorError + '_ {
    move |source| CollectorError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_log(path: &Path) -> Result<MeasurementLog, CollectorError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .transpose()
        .map_err(io_err(path))?
        .ok_or_else(|| CollectorError::Log {
            path: path.display().to_string(),
            line: 1,
            message: "missing run header".into(),
        })?;
    let header: RunHeader =
        serde_json::from_str(&header_line).map_err(|e| CollectorError::Log {
            path: path.display().to_string(),
            line: 1,
            message: format!("bad run header: {e}"),
        })?;
    let mut latest: BTreeMap<String, Measurement> = BTreeMap::new();
    let mut skipped_lines = 0;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Measurement>(&line) {
            Ok(m) => {
                latest.insert(m.trial_id.clone(), m);
            }
            Err(e) => {
                log::warn!("{} line {}: skipping undecodable record: {e}", path.display(), i + 2);
                skipped_lines += 1;
            }
        }
    }
    Ok(MeasurementLog {
        header,
        measurements: latest.into_values().collect(),
        skipped_lines,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub planned: usize,
    pub already_done: usize,
    pub executed: usize,
    pub errors: usize,
}

/// Execute every plan whose trial is not yet completed in the log at
/// `log_path`, appending one record per trial. Trials whose only records are
/// backend errors are retried.
pub fn run(
    plans: &[TrialPlan],
    gateway: &Gateway,
    log_path: &Path,
    header: &RunHeader,
) -> Result<RunOutcome, CollectorError> {
    let exists = log_path.metadata().map(|m| m.len() > 0).unwrap_or(false);
    let done: BTreeSet<String> = if exists {
        let existing = read_log(log_path)?;
        if !existing.header.matches(header) {
            return Err(CollectorError::HeaderMismatch {
                expected: header.describe(),
                found: existing.header.describe(),
            });
        }
        existing
            .measurements
            .into_iter()
            .filter(|m| m.validity != Validity::BackendError)
            .map(|m| m.trial_id)
            .collect()
    } else {
        BTreeSet::new()
    };

    let mut seen = BTreeSet::new();
    let pending: Vec<&TrialPlan> = plans
        .iter()
        .filter(|p| !done.contains(&p.trial_id) && seen.insert(p.trial_id.as_str()))
        .collect();
    let already_done = plans.iter().filter(|p| done.contains(&p.trial_id)).count();

    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(log_path))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(log_path)
        .map_err(io_err(log_path))?;
    if exists {
        // finish a line cut off by an interrupted write
        file.seek(SeekFrom::End(-1)).map_err(io_err(log_path))?;
        let mut last = [0u8; 1];
        file.read_exact(&mut last).map_err(io_err(log_path))?;
        if last[0] != b'\n' {
            file.write_all(b"\n").map_err(io_err(log_path))?;
        }
    }
    let mut out = BufWriter::new(file);
    if !exists {
        writeln!(out, "{}", serde_json::to_string(header).expect("header serializes"))
            .map_err(io_err(log_path))?;
        out.flush().map_err(io_err(log_path))?;
    }

    let mut errors = 0;
    let mut write_error = None;
    pool(
        &pending,
        gateway.max_in_flight(),
        |p| run_trial(p, gateway),
        |_, m: Measurement| {
            if write_error.is_some() {
                return;
            }
            if m.validity == Validity::BackendError {
                errors += 1;
            }
            let line = serde_json::to_string(&m).expect("measurement serializes");
            if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
                write_error = Some(e);
            }
        },
    );
    if let Some(e) = write_error {
        return Err(io_err(log_path)(e));
    }
    Ok(RunOutcome {
        planned: plans.len(),
        already_done,
        executed: pending.len(),
        errors,
    })
}
