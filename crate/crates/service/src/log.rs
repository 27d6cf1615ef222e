//! Append-only JSON-lines round logs.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use effmarket_core::game::{metrics, read_round_log, MetricsReport, RoundRecord};

use crate::Result;

#[derive(Debug)]
pub struct RoundLog {
    path: PathBuf,
    file: File,
}

impl RoundLog {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(RoundLog { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one record and waits until it is on disk.
    pub fn append(&mut self, record: &RoundRecord) -> Result<()> {
        let mut line = record.to_json_line()?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<RoundRecord>> {
    let file = File::open(path)?;
    Ok(read_round_log(BufReader::new(file))?)
}

/// Metrics recomputed from a stored log.
pub fn replay_metrics(path: &Path) -> Result<MetricsReport> {
    Ok(metrics(&read_log(path)?)?)
}
