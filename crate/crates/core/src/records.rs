//! Visit records and JSON-lines helpers shared by the simulator, the collector
//! and the analysis stages.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::SECONDS_PER_DAY;

/// One logged request against a honion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub onion_address: String,
    /// Seconds since the simulation origin (or the Unix epoch for real logs).
    pub timestamp: u64,
    pub request_path: String,
    /// Ground truth only; never written to detector-facing logs.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub requester_tag: String,
    #[serde(default)]
    pub is_favicon: bool,
}

impl VisitRecord {
    pub fn new(onion_address: impl Into<String>, timestamp: u64, request_path: impl Into<String>) -> Self {
        let request_path = request_path.into();
        VisitRecord {
            onion_address: onion_address.into(),
            timestamp,
            is_favicon: is_favicon_path(&request_path),
            request_path,
            requester_tag: String::new(),
        }
    }

    pub fn day(&self) -> u32 {
        (self.timestamp / SECONDS_PER_DAY) as u32
    }
}

/// True when the path component (query excluded) is exactly `/favicon.ico`.
pub fn is_favicon_path(path: &str) -> bool {
    path.split(['?', '#']).next() == Some("/favicon.ico")
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads every non-blank line; the first malformed line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let (items, errors) = read_jsonl_lenient(path)?;
    match errors.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(items),
    }
}

/// Reads every non-blank line, collecting parse failures instead of stopping.
pub fn read_jsonl_lenient<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Vec<JsonlError>), JsonlError> {
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(item) => items.push(item),
            Err(e) => errors.push(JsonlError::Parse {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok((items, errors))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| io_err(e.into()))?;
    out.write_all(b"\n").map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, JsonlError> {
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| JsonlError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}
