//! `metrics.jsonl`: one [`UpdateReport`] per line.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use spf_core::train::UpdateReport;

use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";

pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(p) = path.parent() {
            fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Reopens an existing stream for a run resumed at `version`, dropping
    /// the lines of later updates.
    pub fn resume(path: &Path, version: u64) -> Result<Self> {
        let kept: Vec<UpdateReport> = if path.exists() {
            read_metrics(path)?.into_iter().filter(|r| r.update <= version).collect()
        } else {
            Vec::new()
        };
        let mut w = MetricsWriter::create(path)?;
        for r in &kept {
            w.write(r)?;
        }
        Ok(w)
    }

    pub fn write(&mut self, r: &UpdateReport) -> Result<()> {
        let mut line = serde_json::to_string(r).expect("report serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<UpdateReport>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            field: format!("line {}", i + 1),
            message: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}
