//! Append-only JSON-lines run log.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use super::LogRecord;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::optim::OptimizerConfig;

pub struct RunLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLog {
    pub fn append(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RunLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    fn line(&mut self, value: &serde_json::Value) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out
            .write_all(b"\n")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, rec: &LogRecord) -> Result<()> {
        let mut v = serde_json::to_value(rec)?;
        v["type"] = json!("iteration");
        self.line(&v)
    }

    /// Records the schedule and weights a phase starts with.
    pub fn phase_start(
        &mut self,
        phase: u8,
        cfg: &RunConfig,
        opt: &OptimizerConfig,
        weights: Option<&LossWeights>,
    ) -> Result<()> {
        self.line(&json!({
            "type": "phase-start",
            "phase": phase,
            "config_fingerprint": cfg.fingerprint(),
            "optimizer": opt,
            "weights": weights,
        }))
    }

    pub fn event(&mut self, kind: &str, detail: serde_json::Value) -> Result<()> {
        self.line(&json!({ "type": kind, "detail": detail }))
    }
}
