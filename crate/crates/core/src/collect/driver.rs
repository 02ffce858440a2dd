use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::future::Future;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::Utc;
use futures::stream::{self, StreamExt};
use tracing::{debug, warn};

use super::{
    io_err, journal_path, next_free_path, read_lines, CollectError, CorpusHeader, CorpusRole,
    EndpointConfig, EndpointError, ResponseCorpus, ResponseRecord,
};
use crate::corpus::QuerySet;

/// One request for a single (query, sample) cell.
#[derive(Debug, Clone)]
pub struct CellRequest<'a> {
    pub query_id: &'a str,
    pub prompt: &'a str,
    pub sample_index: u32,
    /// `None` leaves decoding to the endpoint.
    pub temperature: Option<f64>,
}

/// Anything that answers a chat-completion request.
pub trait ChatEndpoint: Send + Sync {
    fn model_id(&self) -> &str;

    /// Temperature the endpoint decodes at when the caller does not set one.
    fn advertised_temperature(&self) -> f64;

    fn complete(&self, req: &CellRequest<'_>) -> impl Future<Output = Result<String, EndpointError>> + Send;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles afterwards.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl From<&EndpointConfig> for RetryPolicy {
    fn from(cfg: &EndpointConfig) -> Self {
        Self {
            max_attempts: cfg.max_retries.max(1),
            base_delay: Duration::from_millis(cfg.retry_backoff_ms),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CollectOptions {
    /// Upper bound on in-flight requests.
    pub parallelism: usize,
    pub retry: RetryPolicy,
    /// Accept source collections with J <= 3.
    pub allow_few_samples: bool,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            parallelism: 4,
            retry: RetryPolicy::default(),
            allow_few_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub query_id: String,
    pub sample_index: u32,
    pub error: String,
}

impl std::fmt::Display for CellFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}): {}", self.query_id, self.sample_index, self.error)
    }
}

enum CellOutcome {
    Text(String),
    /// Endpoint kept answering with empty text.
    Empty,
    Failed(EndpointError),
}

async fn fetch_cell<E: ChatEndpoint>(endpoint: &E, req: &CellRequest<'_>, retry: RetryPolicy) -> CellOutcome {
    let mut attempt = 0;
    let mut empty_retried = false;
    loop {
        attempt += 1;
        match endpoint.complete(req).await {
            Ok(text) if !text.trim().is_empty() => return CellOutcome::Text(text),
            Ok(_) if !empty_retried => {
                debug!(query = req.query_id, sample = req.sample_index, "empty response, retrying once");
                empty_retried = true;
            }
            Ok(_) => return CellOutcome::Empty,
            Err(e) if e.is_retryable() && attempt < retry.max_attempts => {
                let delay = retry.base_delay * 2u32.saturating_pow(attempt - 1);
                warn!(query = req.query_id, sample = req.sample_index, attempt, error = %e, "retrying after {delay:?}");
                tokio::time::sleep(delay).await;
            }
            Err(e) => return CellOutcome::Failed(e),
        }
    }
}

/// Collect every missing cell of a corpus. `existing` records are kept and
/// their cells skipped; `on_record` sees each new record as it arrives.
#[allow(clippy::too_many_arguments)]
pub async fn collect_role<E: ChatEndpoint>(
    endpoint: &E,
    qs: &QuerySet,
    role: CorpusRole,
    samples: u32,
    temperature: Option<f64>,
    opts: &CollectOptions,
    existing: Vec<ResponseRecord>,
    mut on_record: impl FnMut(&ResponseRecord),
) -> Result<ResponseCorpus, CollectError> {
    let recorded_t = temperature.unwrap_or_else(|| endpoint.advertised_temperature());
    let header = CorpusHeader::new(role, endpoint.model_id(), qs, samples, recorded_t);
    let have: BTreeSet<(String, u32)> = existing
        .iter()
        .map(|r| (r.query_id.clone(), r.sample_index))
        .collect();
    let cells: Vec<(&str, &str, u32)> = qs
        .queries
        .iter()
        .flat_map(|q| (1..=samples).map(move |j| (q.id.as_str(), q.rendered_prompt.as_str(), j)))
        .filter(|(id, _, j)| !have.contains(&(id.to_string(), *j)))
        .collect();
    debug!(model = endpoint.model_id(), role = %role, pending = cells.len(), "collecting");

    let mut results = stream::iter(cells)
        .map(|(query_id, prompt, sample_index)| async move {
            let req = CellRequest {
                query_id,
                prompt,
                sample_index,
                temperature,
            };
            (query_id, sample_index, fetch_cell(endpoint, &req, opts.retry).await)
        })
        .buffer_unordered(opts.parallelism.max(1));

    let mut records = existing;
    let mut failures = Vec::new();
    while let Some((query_id, sample_index, outcome)) = results.next().await {
        let mut record = ResponseRecord::ok(query_id, endpoint.model_id(), sample_index, recorded_t, String::new(), Utc::now());
        match outcome {
            CellOutcome::Text(text) => record.text = text,
            CellOutcome::Empty => record.error = Some("empty response".to_string()),
            CellOutcome::Failed(e) => {
                failures.push(CellFailure {
                    query_id: query_id.to_string(),
                    sample_index,
                    error: e.to_string(),
                });
                continue;
            }
        }
        on_record(&record);
        records.push(record);
    }
    let corpus = ResponseCorpus::new(header, records);
    if !failures.is_empty() {
        failures.sort_by(|a, b| (&a.query_id, a.sample_index).cmp(&(&b.query_id, b.sample_index)));
        return Err(CollectError::Incomplete {
            failures,
            partial: Box::new(corpus),
        });
    }
    corpus.validate()?;
    Ok(corpus)
}

fn check_source_samples(samples: u32, opts: &CollectOptions) -> Result<(), CollectError> {
    if samples <= 3 {
        if !opts.allow_few_samples {
            return Err(CollectError::TooFewSamples(samples));
        }
        warn!(samples, "source collection with J <= 3; verification needs samples 1..3 and training needs 2");
    }
    Ok(())
}

/// `J` samples per query from the source model at temperature `T`.
pub async fn collect_source<E: ChatEndpoint>(
    endpoint: &E,
    qs: &QuerySet,
    samples: u32,
    temperature: f64,
    opts: &CollectOptions,
) -> Result<ResponseCorpus, CollectError> {
    check_source_samples(samples, opts)?;
    collect_role(endpoint, qs, CorpusRole::Source, samples, Some(temperature), opts, Vec::new(), |_| {}).await
}

/// One corpus per benign endpoint. Failures are isolated per endpoint.
pub async fn collect_benign<E: ChatEndpoint>(
    endpoints: &[E],
    qs: &QuerySet,
    samples: u32,
    temperature: f64,
    opts: &CollectOptions,
) -> Result<Vec<Result<ResponseCorpus, CollectError>>, CollectError> {
    if endpoints.is_empty() {
        return Err(CollectError::NoEndpoints);
    }
    let runs = endpoints.iter().map(|ep| {
        collect_role(ep, qs, CorpusRole::Benign, samples, Some(temperature), opts, Vec::new(), |_| {})
    });
    Ok(futures::future::join_all(runs).await)
}

/// One response per query at the suspect's own decoding temperature.
pub async fn collect_suspect<E: ChatEndpoint>(
    endpoint: &E,
    qs: &QuerySet,
    opts: &CollectOptions,
) -> Result<ResponseCorpus, CollectError> {
    collect_role(endpoint, qs, CorpusRole::Suspect, 1, None, opts, Vec::new(), |_| {}).await
}

/// Collect into `out`, journaling records to `<out>.partial` as they arrive.
///
/// On failure the journal stays behind as the resume marker; `resume = true`
/// picks it up and fetches only the missing cells. Without `resume`, an
/// existing `out` is never overwritten: the corpus goes to the next free
/// versioned path, which is returned.
#[allow(clippy::too_many_arguments)]
pub async fn collect_to_file<E: ChatEndpoint>(
    endpoint: &E,
    qs: &QuerySet,
    role: CorpusRole,
    samples: u32,
    temperature: Option<f64>,
    opts: &CollectOptions,
    out: &Path,
    resume: bool,
) -> Result<PathBuf, CollectError> {
    if role == CorpusRole::Source {
        check_source_samples(samples, opts)?;
    }
    let target = if resume { out.to_path_buf() } else { next_free_path(out) };
    let journal = journal_path(&target);

    let mut existing = Vec::new();
    if resume && journal.exists() {
        let (header, records) = read_lines(&journal, true)?;
        if header.query_set_hash != qs.content_hash() {
            return Err(CollectError::QuerySetMismatch);
        }
        existing = records;
    } else if resume && target.exists() {
        let done = ResponseCorpus::read(&target)?;
        if done.header.query_set_hash != qs.content_hash() {
            return Err(CollectError::QuerySetMismatch);
        }
        if done.validate().is_ok() {
            return Ok(target);
        }
        existing = done.records;
    }

    let recorded_t = temperature.unwrap_or_else(|| endpoint.advertised_temperature());
    let header = CorpusHeader::new(role, endpoint.model_id(), qs, samples, recorded_t);
    let fresh = !journal.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&journal)
        .map_err(io_err(&journal))?;
    if fresh {
        let mut line = serde_json::to_vec(&header).expect("header serializes");
        line.push(b'\n');
        for r in &existing {
            serde_json::to_writer(&mut line, r).expect("record serializes");
            line.push(b'\n');
        }
        file.write_all(&line).map_err(io_err(&journal))?;
    }
    let mut write_err = None;
    let result = collect_role(endpoint, qs, role, samples, temperature, opts, existing, |r| {
        let mut line = serde_json::to_vec(r).expect("record serializes");
        line.push(b'\n');
        if let Err(e) = file.write_all(&line).and_then(|_| file.flush()) {
            write_err.get_or_insert(e);
        }
    })
    .await;
    if let Some(e) = write_err {
        return Err(io_err(&journal)(e));
    }
    let corpus = result?;
    corpus.write(&target)?;
    fs::remove_file(&journal).map_err(io_err(&journal))?;
    Ok(target)
}
