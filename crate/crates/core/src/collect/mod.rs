//! Response collection from source, benign, and suspect endpoints.
//!
//! Corpora are keyed by `(query_id, sample_index)` and always stored in that
//! canonical order, whatever order requests completed in.

mod driver;
mod http;
pub mod protocol;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QuerySet;
use crate::hashing::content_hash;

pub use driver::{
    collect_benign, collect_role, collect_source, collect_suspect, collect_to_file, CellFailure,
    CellRequest, ChatEndpoint, CollectOptions, RetryPolicy,
};
pub use http::HttpEndpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusRole {
    Source,
    Benign,
    Suspect,
}

impl std::fmt::Display for CorpusRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorpusRole::Source => "source",
            CorpusRole::Benign => "benign",
            CorpusRole::Suspect => "suspect",
        })
    }
}

impl std::str::FromStr for CorpusRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "source" => Ok(CorpusRole::Source),
            "benign" => Ok(CorpusRole::Benign),
            "suspect" => Ok(CorpusRole::Suspect),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum EndpointError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl EndpointError {
    pub fn is_retryable(&self) -> bool {
        match self {
            EndpointError::Transport(_) | EndpointError::Timeout => true,
            EndpointError::Status { status, .. } => *status == 429 || *status >= 500,
            EndpointError::Protocol(_) => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error("source collection needs J > 3 samples per query, got {0} (pass the override to proceed)")]
    TooFewSamples(u32),
    #[error("at least one benign endpoint is required")]
    NoEndpoints,
    #[error("collection incomplete: {} cell(s) failed, first: {}", .failures.len(), .failures.first().map(|f| f.to_string()).unwrap_or_default())]
    Incomplete {
        failures: Vec<CellFailure>,
        partial: Box<ResponseCorpus>,
    },
    #[error("invalid corpus: {0}")]
    Invalid(String),
    #[error("corpus was collected for a different query set")]
    QuerySetMismatch,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CollectError + '_ {
    move |source| CollectError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_path() -> String {
    protocol::DEFAULT_PATH.to_string()
}
fn default_auth_header() -> String {
    "Authorization".to_string()
}
fn default_max_tokens() -> u32 {
    512
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    1000
}
fn default_true() -> bool {
    true
}

/// Connection settings for one model endpoint, usually read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub model_id: String,
    pub base_url: String,
    #[serde(default = "default_path")]
    pub path: String,
    /// Name of the environment variable holding the API key, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    /// Decoding temperature the endpoint advertises (used for suspects).
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Total attempts per request.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    /// Send `query_id`/`sample_index` request metadata.
    #[serde(default = "default_true")]
    pub send_metadata: bool,
}

impl EndpointConfig {
    pub fn new(model_id: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            base_url: base_url.into(),
            path: default_path(),
            api_key_env: None,
            auth_header: default_auth_header(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            retry_backoff_ms: default_backoff(),
            send_metadata: true,
        }
    }

    pub fn validate(&self) -> Result<(), CollectError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(CollectError::Invalid(format!(
                "endpoint `{}`: temperature must be >= 0",
                self.model_id
            )));
        }
        if self.max_tokens == 0 {
            return Err(CollectError::Invalid(format!(
                "endpoint `{}`: max_tokens must be >= 1",
                self.model_id
            )));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.001))
    }

    pub fn load(path: &Path) -> Result<Self, CollectError> {
        let raw = fs::read(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_slice(&raw).map_err(|e| CollectError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub query_id: String,
    pub model_id: String,
    /// 1-based sample index `j`.
    pub sample_index: u32,
    pub temperature: f64,
    pub text: String,
    /// Set on rows whose response could not be obtained; such rows are kept
    /// for completeness accounting and excluded from verification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub collected_at: DateTime<Utc>,
}

impl ResponseRecord {
    pub fn ok(
        query_id: &str,
        model_id: &str,
        sample_index: u32,
        temperature: f64,
        text: String,
        collected_at: DateTime<Utc>,
    ) -> Self {
        Self {
            query_id: query_id.to_string(),
            model_id: model_id.to_string(),
            sample_index,
            temperature,
            text,
            error: None,
            collected_at,
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    fn key(&self) -> (&str, u32) {
        (&self.query_id, self.sample_index)
    }
}

const CORPUS_KIND: &str = "response_corpus";

fn corpus_kind() -> String {
    CORPUS_KIND.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    #[serde(default = "corpus_kind")]
    pub kind: String,
    pub role: CorpusRole,
    pub model_id: String,
    #[serde(rename = "I")]
    pub queries: usize,
    #[serde(rename = "J")]
    pub samples: u32,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub query_set_hash: String,
}

impl CorpusHeader {
    pub fn new(role: CorpusRole, model_id: &str, qs: &QuerySet, samples: u32, temperature: f64) -> Self {
        Self {
            kind: corpus_kind(),
            role,
            model_id: model_id.to_string(),
            queries: qs.len(),
            samples,
            temperature,
            query_set_hash: qs.content_hash(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCorpus {
    pub header: CorpusHeader,
    pub records: Vec<ResponseRecord>,
}

impl ResponseCorpus {
    /// Build a corpus, putting records into canonical `(query_id, sample_index)` order.
    pub fn new(header: CorpusHeader, mut records: Vec<ResponseRecord>) -> Self {
        records.sort_by(|a, b| a.key().cmp(&b.key()));
        Self { header, records }
    }

    pub fn role(&self) -> CorpusRole {
        self.header.role
    }

    pub fn model_id(&self) -> &str {
        &self.header.model_id
    }

    pub fn samples_per_query(&self) -> u32 {
        self.header.samples
    }

    pub fn cell(&self, query_id: &str, sample_index: u32) -> Option<&ResponseRecord> {
        self.records
            .binary_search_by(|r| r.key().cmp(&(query_id, sample_index)))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Text of a non-error cell.
    pub fn text(&self, query_id: &str, sample_index: u32) -> Option<&str> {
        self.cell(query_id, sample_index)
            .filter(|r| !r.is_error())
            .map(|r| r.text.as_str())
    }

    /// Distinct query ids in canonical order.
    pub fn query_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.records.iter().map(|r| r.query_id.as_str()).collect();
        ids.dedup();
        ids
    }

    pub fn error_rows(&self) -> usize {
        self.records.iter().filter(|r| r.is_error()).count()
    }

    pub fn missing_cells(&self, qs: &QuerySet) -> Vec<(String, u32)> {
        let have: BTreeSet<(&str, u32)> = self.records.iter().map(|r| r.key()).collect();
        qs.queries
            .iter()
            .flat_map(|q| (1..=self.header.samples).map(move |j| (q.id.as_str(), j)))
            .filter(|k| !have.contains(k))
            .map(|(q, j)| (q.to_string(), j))
            .collect()
    }

    /// Completeness and integrity: every declared (query, sample) cell present
    /// exactly once, and every non-error row carries text.
    pub fn validate(&self) -> Result<(), CollectError> {
        let h = &self.header;
        if h.samples == 0 {
            return Err(CollectError::Invalid("J must be >= 1".into()));
        }
        if h.role == CorpusRole::Suspect && h.samples != 1 {
            return Err(CollectError::Invalid("suspect corpora hold one sample per query".into()));
        }
        let mut per_query: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
        for r in &self.records {
            if r.model_id != h.model_id {
                return Err(CollectError::Invalid(format!(
                    "record for `{}` in corpus of `{}`",
                    r.model_id, h.model_id
                )));
            }
            if r.sample_index == 0 || r.sample_index > h.samples {
                return Err(CollectError::Invalid(format!(
                    "query `{}`: sample index {} outside 1..={}",
                    r.query_id, r.sample_index, h.samples
                )));
            }
            if !r.is_error() && r.text.trim().is_empty() {
                return Err(CollectError::Invalid(format!(
                    "query `{}` sample {}: empty text",
                    r.query_id, r.sample_index
                )));
            }
            if !per_query.entry(&r.query_id).or_default().insert(r.sample_index) {
                return Err(CollectError::Invalid(format!(
                    "duplicate cell ({}, {})",
                    r.query_id, r.sample_index
                )));
            }
        }
        if per_query.len() != h.queries {
            return Err(CollectError::Invalid(format!(
                "expected {} queries, found {}",
                h.queries,
                per_query.len()
            )));
        }
        let expected = h.queries * h.samples as usize;
        if self.records.len() != expected {
            return Err(CollectError::Invalid(format!(
                "expected {expected} records (I={} x J={}), found {}",
                h.queries,
                h.samples,
                self.records.len()
            )));
        }
        Ok(())
    }

    /// Digest over the response payload (timestamps excluded).
    pub fn content_hash(&self) -> String {
        let temps: Vec<[u8; 8]> = self.records.iter().map(|r| r.temperature.to_le_bytes()).collect();
        let idx: Vec<[u8; 4]> = self.records.iter().map(|r| r.sample_index.to_le_bytes()).collect();
        content_hash(self.records.iter().zip(temps.iter().zip(&idx)).flat_map(|(r, (t, j))| {
            [
                r.query_id.as_bytes(),
                r.model_id.as_bytes(),
                j.as_slice(),
                t.as_slice(),
                r.text.as_bytes(),
                r.error.as_deref().unwrap_or("").as_bytes(),
            ]
        }))
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        serde_json::to_writer(&mut out, &self.header).expect("header serializes");
        out.push(b'\n');
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("record serializes");
            out.push(b'\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CollectError> {
        let mut file = fs::File::create(path).map_err(io_err(path))?;
        file.write_all(&self.encode()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, CollectError> {
        let (header, records) = read_lines(path, false)?;
        Ok(Self::new(header, records))
    }
}

/// Parse a header line followed by record lines. With `tolerate_tail`, a
/// malformed final line (an interrupted append) is dropped.
fn read_lines(path: &Path, tolerate_tail: bool) -> Result<(CorpusHeader, Vec<ResponseRecord>), CollectError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    let parse_err = |line: usize, message: String| CollectError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut iter = lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, first) = iter.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
    let header: CorpusHeader =
        serde_json::from_str(first).map_err(|e| parse_err(hline + 1, e.to_string()))?;
    if header.kind != CORPUS_KIND {
        return Err(parse_err(hline + 1, format!("unexpected kind `{}`", header.kind)));
    }
    let rest: Vec<(usize, &String)> = iter.collect();
    let mut records = Vec::with_capacity(rest.len());
    for (pos, (idx, line)) in rest.iter().enumerate() {
        match serde_json::from_str::<ResponseRecord>(line) {
            Ok(r) => records.push(r),
            Err(_) if tolerate_tail && pos + 1 == rest.len() => break,
            Err(e) => return Err(parse_err(idx + 1, e.to_string())),
        }
    }
    Ok((header, records))
}

/// Journal path used as the resume marker for an interrupted collection.
pub fn journal_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    out.with_file_name(name)
}

/// `path` if free, otherwise the first free `stem.vN.ext` (N >= 2).
pub fn next_free_path(path: &Path) -> PathBuf {
    if !path.exists() {
        return path.to_path_buf();
    }
    let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned());
    (2..)
        .map(|n| {
            let name = match &ext {
                Some(ext) => format!("{stem}.v{n}.{ext}"),
                None => format!("{stem}.v{n}"),
            };
            path.with_file_name(name)
        })
        .find(|p| !p.exists() && !journal_path(p).exists())
        .expect("unbounded search finds a free path")
}
