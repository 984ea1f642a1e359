//! Output directory: report files written once and atomically, plus a
//! `metadata.json` holding everything that varies between identical runs.

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use piecewise_market::io::{csv_bytes, write_atomic, write_atomic_with, write_json_atomic};
use serde::Serialize;
use serde_json::json;

use crate::Failure;

pub struct Out {
    pub dir: PathBuf,
    command: String,
    args: Vec<String>,
    started: f64,
    files: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl Out {
    pub fn new(dir: PathBuf, command: &str) -> Self {
        Out {
            dir,
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            started: now(),
            files: Vec::new(),
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let p = self.path(name);
        Ok(write_json_atomic(&p, value)?)
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), Failure> {
        let p = self.path(name);
        Ok(write_atomic(&p, &csv_bytes(rows)?)?)
    }

    pub fn stream(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut dyn std::io::Write) -> piecewise_market::Result<()>,
    ) -> Result<(), Failure> {
        let p = self.path(name);
        Ok(write_atomic_with(&p, fill)?)
    }

    pub fn finish(self, pass: bool) -> Result<(), Failure> {
        let meta = json!({
            "command": self.command,
            "args": self.args,
            "version": env!("CARGO_PKG_VERSION"),
            "threads": rayon::current_num_threads(),
            "started_unix": self.started,
            "finished_unix": now(),
            "pass": pass,
            "files": self.files,
        });
        Ok(write_json_atomic(&self.dir.join("metadata.json"), &meta)?)
    }
}
