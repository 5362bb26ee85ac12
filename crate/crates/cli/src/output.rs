//! Artifact writers. Every file starts with the same provenance header:
//! artifact version, command, master seed and the canonical config.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::LabConfig;
use crate::CliError;

pub const ARTIFACT_VERSION: u32 = 1;
/// Version of the JSON summary layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Shortest round-trip decimal form of a float.
pub fn num(x: f64) -> String {
    x.to_string()
}

/// `a;b;c` rendering of an index, safe inside a CSV field.
pub fn index(coords: &[u64]) -> String {
    coords
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

pub struct Output {
    dir: PathBuf,
    command: String,
    seed: u64,
    config: Value,
    config_json: String,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(config: &LabConfig, command: &str) -> Result<Self, CliError> {
        let dir = config.resolved_output_dir();
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        let config_json = config.canonical_json();
        Ok(Output {
            dir,
            command: command.into(),
            seed: config.experiment.seed,
            config: serde_json::from_str(&config_json).expect("canonical json parses"),
            config_json,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn header_line(&self) -> String {
        format!(
            "sipfield artifact_version={ARTIFACT_VERSION} command={} seed={} config={}",
            self.command, self.seed, self.config_json
        )
    }

    fn create(&mut self, name: &str) -> Result<(BufWriter<File>, PathBuf), CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| io_error(&path, e))?;
        self.written.push(path.clone());
        Ok((BufWriter::new(file), path))
    }

    /// CSV with `#`-prefixed header lines, a column row and the data rows.
    pub fn csv(
        &mut self,
        name: &str,
        columns: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        let header = self.header_line();
        let (mut out, path) = self.create(name)?;
        writeln!(out, "# {header}").map_err(|e| io_error(&path, e))?;
        let mut writer = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        writer.write_record(columns).map_err(fail)?;
        for row in rows {
            writer.write_record(row).map_err(fail)?;
        }
        writer.flush().map_err(|e| io_error(&path, e))?;
        Ok(())
    }

    /// JSON document `{schema_version, artifact_version, command, seed, config, data}`.
    pub fn json(&mut self, name: &str, data: &impl Serialize) -> Result<(), CliError> {
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "artifact_version": ARTIFACT_VERSION,
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "data": serde_json::to_value(data).map_err(|e| CliError::Io(e.to_string()))?,
        });
        let (mut out, path) = self.create(name)?;
        serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(out)
            .and_then(|_| out.flush())
            .map_err(|e| io_error(&path, e))?;
        Ok(())
    }

    /// Flat grid dump: one header line, then little-endian `f64` cells in row-major order.
    pub fn grid(&mut self, name: &str, extent: &[u64], values: &[f64]) -> Result<(), CliError> {
        let header = self.header_line();
        let (mut out, path) = self.create(name)?;
        let dims = index(extent).replace(';', ",");
        writeln!(out, "# {header} d={} extent={dims}", extent.len())
            .map_err(|e| io_error(&path, e))?;
        for v in values {
            out.write_all(&v.to_le_bytes())
                .map_err(|e| io_error(&path, e))?;
        }
        out.flush().map_err(|e| io_error(&path, e))
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Reads a grid dump back: `(extent, values)`.
pub fn read_grid(path: &Path) -> Result<(Vec<u64>, Vec<f64>), CliError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::Io("missing grid header".into()))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|e| io_error(path, e))?;
    let extent_text = header
        .rsplit(" extent=")
        .next()
        .filter(|_| header.contains(" extent="))
        .ok_or_else(|| CliError::Io("grid header lacks extent".into()))?;
    let extent = extent_text
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|e| io_error(path, e)))
        .collect::<Result<Vec<_>, _>>()?;
    let body = &bytes[newline + 1..];
    if body.len() % 8 != 0 {
        return Err(CliError::Io(
            "grid body is not a whole number of f64 values".into(),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if values.len() as u64 != extent.iter().product::<u64>() {
        return Err(CliError::Io("grid size does not match its extent".into()));
    }
    Ok((extent, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 9.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(9.0), "9");
    }

    #[test]
    fn grid_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let config = LabConfig {
            output_dir: dir.path().to_path_buf(),
            ..LabConfig::default()
        };
        let mut out = Output::new(&config, "simulate").unwrap();
        let values = vec![1.5, -2.0, 3.25, 0.0, 1e-9, 7.0];
        out.grid("g.bin", &[2, 3], &values).unwrap();
        let (extent, back) = read_grid(&dir.path().join("g.bin")).unwrap();
        assert_eq!(extent, vec![2, 3]);
        assert_eq!(back, values);
    }
}
