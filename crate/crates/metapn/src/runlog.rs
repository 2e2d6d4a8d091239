//! Per-epoch training logs as JSON lines.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use metapn_core::trainer::EpochLog;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub j_pseudo: f64,
    pub j_gold: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    pub phi_grad_norm: f64,
}

impl From<&EpochLog> for LogRecord {
    fn from(e: &EpochLog) -> Self {
        Self {
            epoch: e.epoch,
            j_pseudo: e.j_pseudo,
            j_gold: e.j_gold,
            val_acc: e.val_acc,
            val_loss: e.val_loss,
            phi_grad_norm: e.phi_grad_norm,
        }
    }
}

pub fn write_jsonl(mut out: impl Write, log: &[EpochLog]) -> io::Result<()> {
    for entry in log {
        serde_json::to_writer(&mut out, &LogRecord::from(entry))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_log_file(path: impl AsRef<Path>, log: &[EpochLog]) -> io::Result<()> {
    write_jsonl(BufWriter::new(fs::File::create(path)?), log)
}
