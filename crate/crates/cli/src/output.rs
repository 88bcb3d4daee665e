//! Artifact writing: CSV/JSON emission, checksums, and the run manifest.
//!
//! All writes go through one funnel so every emitted file is checksummed and
//! listed in `manifest.json`, and so the determinism contract (identical
//! config + seed → identical bytes) has a single enforcement point. Floats in
//! CSVs are printed with 17 significant digits; JSON floats use serde_json's
//! shortest round-trip form. Line endings are LF.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fdrlab_core::linalg::{CMatrix, C64};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{CliResult, Formats};

/// `{:.16e}` prints one leading digit plus 16 more — full double precision.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_complex_pair(z: C64) -> String {
    format!("{},{}", fmt(z.re), fmt(z.im))
}

/// Row-major nested `[re, im]` pairs — the same literal form configs use.
pub fn matrix_json(m: &CMatrix) -> serde_json::Value {
    let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect();
    serde_json::json!(rows)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool_version: &'a str,
    config_sha256: &'a str,
    master_seed: u64,
    wall_clock_seconds: f64,
    outputs: &'a BTreeMap<String, String>,
}

pub struct OutputWriter {
    dir: PathBuf,
    formats: Formats,
    checksums: BTreeMap<String, String>,
    started: Instant,
}

impl OutputWriter {
    pub fn new(dir: &Path, formats: Formats) -> CliResult<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            formats,
            checksums: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    fn enabled(&self, name: &str) -> bool {
        if name.ends_with(".csv") {
            self.formats.csv
        } else if name.ends_with(".json") {
            self.formats.json
        } else {
            true
        }
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        if !self.enabled(name) {
            log::debug!("skipping {name}: format disabled in outputs.formats");
            return Ok(());
        }
        std::fs::write(self.dir.join(name), bytes)?;
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        self.checksums
            .insert(name.to_string(), hex::encode(hasher.finalize()));
        Ok(())
    }

    /// Writes a CSV from a header and pre-formatted rows (no trailing commas,
    /// no quoting — all fields are numbers formatted upstream).
    pub fn write_csv<I>(&mut self, name: &str, header: &str, rows: I) -> CliResult<()>
    where
        I: IntoIterator<Item = String>,
    {
        let mut text = String::with_capacity(4096);
        text.push_str(header);
        text.push('\n');
        for row in rows {
            text.push_str(&row);
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| crate::config::CliError::Runtime(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes `manifest.json` and returns the checksum map for callers that
    /// want to inspect it (the reproducibility tests do).
    pub fn finish(
        self,
        config_sha256: &str,
        master_seed: u64,
    ) -> CliResult<BTreeMap<String, String>> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256,
            master_seed,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            outputs: &self.checksums,
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| crate::config::CliError::Runtime(format!("serializing manifest: {e}")))?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text.as_bytes())?;
        Ok(self.checksums)
    }
}
