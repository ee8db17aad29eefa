//! Run directory layout and crash-safe file handling.
//!
//! Whole files are written to a temporary sibling and renamed into place.
//! Logs are append-only JSON lines, flushed and synced after every line, so a
//! crash can at worst leave one torn line at the end.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const RETENTION: &str = "retention.json";
pub const PROMPTS: &str = "prompts.jsonl";
pub const TRIALS: &str = "trials.jsonl";
pub const RESULT: &str = "result.json";
pub const METRICS: &str = "metrics.json";
pub const PER_SESSION: &str = "per_session.jsonl";
pub const LLM_TRACE: &str = "llm_trace.jsonl";

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(CliError::io(&root))?;
        Ok(Self { root })
    }

    /// An existing directory; nothing is created.
    pub fn existing(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(CliError::MissingArtifact(root));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.path(name);
        let tmp = self.path(&format!(".{name}.tmp"));
        let mut f = File::create(&tmp).map_err(CliError::io(&tmp))?;
        f.write_all(bytes).map_err(CliError::io(&tmp))?;
        f.sync_all().map_err(CliError::io(&tmp))?;
        fs::rename(&tmp, &target).map_err(CliError::io(&target))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        bytes.push(b'\n');
        self.write_atomic(name, &bytes)
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        for row in rows {
            serde_json::to_writer(&mut bytes, row).map_err(|e| CliError::Runtime(e.to_string()))?;
            bytes.push(b'\n');
        }
        self.write_atomic(name, &bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, CliError> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(CliError::MissingArtifact(path));
        }
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::BadArtifact {
            path,
            reason: e.to_string(),
        })
    }

    /// Reads complete, parseable lines up to the first torn or corrupt one.
    ///
    /// The flag is false when something had to be dropped.
    pub fn read_jsonl_prefix<T: DeserializeOwned>(&self, name: &str) -> Result<(Vec<T>, bool), CliError> {
        let path = self.path(name);
        if !path.is_file() {
            return Ok((Vec::new(), true));
        }
        let mut reader = BufReader::new(File::open(&path).map_err(CliError::io(&path))?);
        let mut rows = Vec::new();
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(CliError::io(&path))?;
            if n == 0 {
                return Ok((rows, true));
            }
            if !line.ends_with('\n') {
                return Ok((rows, false));
            }
            match serde_json::from_str(line.trim_end()) {
                Ok(row) => rows.push(row),
                Err(_) => return Ok((rows, false)),
            }
        }
    }

    pub fn append_log(&self, name: &str) -> Result<AppendLog, CliError> {
        let path = self.path(name);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(CliError::io(&path))?;
        Ok(AppendLog { file, path })
    }
}

pub struct AppendLog {
    file: File,
    path: PathBuf,
}

impl AppendLog {
    pub fn append<T: Serialize>(&mut self, row: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec(row).map_err(|e| CliError::Runtime(e.to_string()))?;
        bytes.push(b'\n');
        self.file.write_all(&bytes).map_err(CliError::io(&self.path))?;
        self.file.sync_data().map_err(CliError::io(&self.path))
    }
}
