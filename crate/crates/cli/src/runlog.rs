//! Append-only JSON-lines run log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thor_core::metrics::MetricReport;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::eval::EvalSummary;
use crate::model::LossTerms;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Start {
        step: usize,
        config: Box<RunConfig>,
        resumed_from: Option<String>,
    },
    Step {
        step: usize,
        loss: LossTerms,
        wall_ms: Option<f64>,
    },
    Eval {
        step: usize,
        summary: EvalSummary,
        report: Box<MetricReport>,
        wall_ms: Option<f64>,
    },
    Checkpoint {
        step: usize,
        path: String,
        sha256: String,
    },
    Abort {
        step: usize,
        reason: String,
        last_good: Option<String>,
    },
    End {
        step: usize,
        wall_ms: Option<f64>,
    },
}

pub struct RunLog {
    path: PathBuf,
    file: File,
    started: Instant,
    deterministic: bool,
}

impl RunLog {
    /// Opens (or creates) the log for appending.
    pub fn open(path: &Path, deterministic: bool) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            started: Instant::now(),
            deterministic,
        })
    }

    /// Milliseconds since the log was opened; `None` in deterministic runs.
    pub fn wall_ms(&self) -> Option<f64> {
        (!self.deterministic).then(|| self.started.elapsed().as_secs_f64() * 1e3)
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("log record serializes");
        writeln!(self.file, "{line}").map_err(|e| CliError::io(&self.path, e))?;
        self.file.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| {
            let l = l.map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| CliError::io(path, e))
        })
        .collect()
}

/// `(step, loss)` of every step record.
pub fn loss_sequence(records: &[LogRecord]) -> Vec<(usize, LossTerms)> {
    records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step { step, loss, .. } => Some((*step, *loss)),
            _ => None,
        })
        .collect()
}
