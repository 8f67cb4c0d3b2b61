//! Output directory bookkeeping: CSV files, their digests, and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::config::{Config, Subcommand};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.txt";

/// Full-precision float formatting that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

/// Comma-separated table with a fixed header.
pub struct Csv {
    columns: usize,
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            columns: header.len(),
            text: format!("{}\n", header.join(",")),
        }
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let cells: Vec<String> = cells.into_iter().map(|c| c.as_ref().to_string()).collect();
        assert_eq!(cells.len(), self.columns, "row width must match header");
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

/// Two-column `key,value` table.
pub struct KeyValues(Csv);

impl KeyValues {
    pub fn new() -> Self {
        Self(Csv::new(&["key", "value"]))
    }

    pub fn add(&mut self, key: &str, value: impl AsRef<str>) {
        self.0.row([key, value.as_ref()]);
    }

    pub fn add_num(&mut self, key: &str, value: f64) {
        self.add(key, num(value));
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0.into_bytes()
    }
}

impl Default for KeyValues {
    fn default() -> Self {
        Self::new()
    }
}

pub struct OutputDir {
    dir: PathBuf,
    written: Vec<(String, String)>,
    timings: Vec<(String, Duration)>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Writes `name` (relative to the output directory) and records its digest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push((name.to_string(), hex::encode(Sha256::digest(bytes))));
        Ok(())
    }

    pub fn timing(&mut self, phase: &str, d: Duration) {
        self.timings.push((phase.to_string(), d));
    }

    pub fn files(&self) -> &[(String, String)] {
        &self.written
    }

    /// Writes `manifest.txt`: the resolved configuration as `key = value`
    /// lines, with version, timings and digests as comments. The file is a
    /// valid config, so `--config manifest.txt` repeats the run.
    pub fn finish(self, sub: Subcommand, cfg: &Config) -> Result<Vec<(String, String)>, CliError> {
        let mut text = String::new();
        let _ = writeln!(text, "# lram {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(text, "# subcommand: {}", sub.name());
        for (phase, d) in &self.timings {
            let _ = writeln!(text, "# time {phase}: {:.6} s", d.as_secs_f64());
        }
        for (name, digest) in &self.written {
            let _ = writeln!(text, "# sha256 {name}: {digest}");
        }
        for (k, v) in cfg.entries() {
            let _ = writeln!(text, "{k} = {v}");
        }
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(self.written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, 0.0] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn csv_layout() {
        let mut c = Csv::new(&["a", "b"]);
        c.row(["1", "2"]);
        assert_eq!(String::from_utf8(c.into_bytes()).unwrap(), "a,b\n1,2\n");
    }
}
