//! Run manifest and file writers. Every output starts with the manifest hash,
//! which covers everything except the timestamp.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config_path: String,
    pub config_sha256: String,
    pub command: String,
    /// Effective options after flag overrides, as `key=value` pairs.
    pub options: Vec<String>,
    pub seed: u64,
    pub output_dir: String,
    pub tool_version: String,
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(config_path: &Path, raw: &str, command: &str, options: Vec<String>, seed: u64, out: &Path) -> RunManifest {
        RunManifest {
            config_path: config_path.display().to_string(),
            config_sha256: hex::encode(Sha256::digest(raw.as_bytes())),
            command: command.into(),
            options,
            seed,
            output_dir: out.display().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        v.as_object_mut().unwrap().remove("timestamp");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

pub struct Writer {
    pub dir: PathBuf,
    pub hash: String,
}

impl Writer {
    pub fn new(manifest: &RunManifest) -> Result<Writer, CliError> {
        let dir = PathBuf::from(&manifest.output_dir);
        fs::create_dir_all(&dir)?;
        let w = Writer { dir, hash: manifest.hash() };
        let mut v = serde_json::to_value(manifest).expect("manifest serializes");
        v.as_object_mut().unwrap().insert("hash".into(), Value::String(w.hash.clone()));
        fs::write(w.dir.join(format!("{}.manifest.json", manifest.command)), serde_json::to_string_pretty(&v)? + "\n")?;
        Ok(w)
    }

    /// JSON object with a leading `manifest` key.
    pub fn json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf, CliError> {
        let mut v = serde_json::to_value(body)?;
        match v.as_object_mut() {
            Some(o) => {
                o.insert("manifest".into(), Value::String(self.hash.clone()));
            }
            None => v = serde_json::json!({ "manifest": self.hash, "data": v }),
        }
        let path = self.dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(&v)? + "\n")?;
        Ok(path)
    }

    /// CSV with a `# manifest` comment line, a header and one record per row.
    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut buf = format!("# manifest {}\n", self.hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r.iter().map(Cell::render))?;
            }
            w.flush()?;
        }
        fs::write(&path, buf)?;
        Ok(path)
    }
}

pub enum Cell {
    F(f64),
    S(String),
    B(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) if v.is_finite() => format!("{v:.16e}"),
            Cell::F(v) => v.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => b.to_string(),
        }
    }
}
