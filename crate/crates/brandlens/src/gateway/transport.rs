//! Transports: how requests reach a model. Live adapters are in
//! [`super::provider`]; this module holds the trait and the record/replay
//! backends that make whole runs deterministic.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{request_hash, ErrorKind, GatewayError, LlmRequest, TokenUsage};

/// Raw provider output: response text plus reported token usage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmResponse {
    pub text: String,
    pub usage: TokenUsage,
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError>;

    /// True when repeating a request cannot change the outcome, so retrying
    /// is pointless. Replay fixtures are deterministic; live providers not.
    fn deterministic(&self) -> bool {
        false
    }
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture miss: no recorded response for request hash {hash}")]
    Miss { hash: String },
    #[error("fixture corrupt at {path}:{line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("fixture io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<FixtureError> for GatewayError {
    fn from(err: FixtureError) -> Self {
        GatewayError::new(ErrorKind::Transport, err.to_string())
    }
}

/// Usage as stored in fixture files: `{"input": n, "output": m}`.
#[derive(Debug, Serialize, Deserialize)]
struct FixtureUsage {
    input: u64,
    output: u64,
}

/// One fixture line: a hash plus either a successful response or an error.
#[derive(Debug, Serialize, Deserialize)]
struct FixtureRecord {
    hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    usage: Option<FixtureUsage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<GatewayError>,
}

#[derive(Debug, Clone)]
enum FixtureEntry {
    Success { text: String, usage: TokenUsage },
    Error(GatewayError),
}

impl FixtureRecord {
    fn into_entry(self, path: &Path, line: usize) -> Result<(String, FixtureEntry), FixtureError> {
        let corrupt = |reason: &str| FixtureError::Corrupt {
            path: path.to_path_buf(),
            line,
            reason: reason.into(),
        };
        if self.hash.is_empty() {
            return Err(corrupt("missing hash"));
        }
        let entry = match (self.text, self.usage, self.error) {
            (Some(text), Some(usage), None) => FixtureEntry::Success {
                text,
                usage: TokenUsage::new(usage.input, usage.output),
            },
            (None, None, Some(error)) => FixtureEntry::Error(error),
            (Some(_), None, None) => return Err(corrupt("success record without usage")),
            (None, Some(_), None) => return Err(corrupt("usage without text")),
            (None, None, None) => return Err(corrupt("record with neither response nor error")),
            _ => return Err(corrupt("record mixes response and error")),
        };
        Ok((self.hash, entry))
    }
}

/// Serves recorded responses keyed by request hash; errors on any miss.
#[derive(Debug)]
pub struct ReplayTransport {
    entries: HashMap<String, FixtureEntry>,
}

impl ReplayTransport {
    /// Loads a JSONL fixture file, validating every line eagerly.
    pub fn open(path: &Path) -> Result<Self, FixtureError> {
        let file = File::open(path).map_err(|source| FixtureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut entries = HashMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| FixtureError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord =
                serde_json::from_str(&line).map_err(|e| FixtureError::Corrupt {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            let (hash, entry) = record.into_entry(path, idx + 1)?;
            entries.insert(hash, entry);
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of usage over all recorded successful responses.
    pub fn total_usage(&self) -> TokenUsage {
        self.entries
            .values()
            .map(|e| match e {
                FixtureEntry::Success { usage, .. } => *usage,
                FixtureEntry::Error(_) => TokenUsage::default(),
            })
            .sum()
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let hash = request_hash(request);
        match self.entries.get(&hash) {
            Some(FixtureEntry::Success { text, usage }) => Ok(LlmResponse {
                text: text.clone(),
                usage: *usage,
            }),
            Some(FixtureEntry::Error(err)) => Err(err.clone()),
            None => Err(FixtureError::Miss { hash }.into()),
        }
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Wraps another transport, appending every outcome (success or error) to a
/// JSONL fixture file keyed by request hash. Re-recording a hash already in
/// the file is skipped, so files stay replayable.
pub struct RecorderTransport {
    inner: Arc<dyn Transport>,
    file: Mutex<File>,
    seen: Mutex<HashSet<String>>,
    written: AtomicUsize,
}

impl RecorderTransport {
    /// Opens `path` for appending, remembering hashes already recorded.
    pub fn create(path: &Path, inner: Arc<dyn Transport>) -> Result<Self, FixtureError> {
        let mut seen = HashSet::new();
        if path.exists() {
            let existing = ReplayTransport::open(path)?;
            seen.extend(existing.entries.keys().cloned());
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| FixtureError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            inner,
            file: Mutex::new(file),
            seen: Mutex::new(seen),
            written: AtomicUsize::new(0),
        })
    }

    /// Records appended during this session.
    pub fn written(&self) -> usize {
        self.written.load(Ordering::SeqCst)
    }

    fn record(&self, hash: String, outcome: &Result<LlmResponse, GatewayError>) {
        {
            let mut seen = self.seen.lock().unwrap();
            if !seen.insert(hash.clone()) {
                return;
            }
        }
        let record = match outcome {
            Ok(response) => FixtureRecord {
                hash,
                text: Some(response.text.clone()),
                usage: Some(FixtureUsage {
                    input: response.usage.input_tokens,
                    output: response.usage.output_tokens,
                }),
                error: None,
            },
            Err(err) => FixtureRecord {
                hash,
                text: None,
                usage: None,
                error: Some(err.clone()),
            },
        };
        let mut line = serde_json::to_string(&record).expect("fixture record serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap();
        let _ = file.write_all(line.as_bytes());
        let _ = file.flush();
        self.written.fetch_add(1, Ordering::SeqCst);
    }
}

impl Transport for RecorderTransport {
    fn send(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let outcome = self.inner.send(request);
        self.record(request_hash(request), &outcome);
        outcome
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }
}

type SendFn = dyn Fn(&LlmRequest) -> Result<LlmResponse, GatewayError> + Send + Sync;

/// A transport backed by a closure; handy for tests and custom backends.
pub struct FnTransport {
    f: Box<SendFn>,
    deterministic: bool,
}

impl FnTransport {
    pub fn new(
        f: impl Fn(&LlmRequest) -> Result<LlmResponse, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Box::new(f),
            deterministic: false,
        }
    }

    /// Marks the closure's outcomes as repeatable, disabling retries.
    pub fn deterministic(
        f: impl Fn(&LlmRequest) -> Result<LlmResponse, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Box::new(f),
            deterministic: true,
        }
    }
}

impl Transport for FnTransport {
    fn send(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        (self.f)(request)
    }

    fn deterministic(&self) -> bool {
        self.deterministic
    }
}
