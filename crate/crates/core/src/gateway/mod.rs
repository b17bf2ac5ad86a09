//! Completion backends, response caching and bounded-concurrency batching.

mod cache;
mod live;
mod mock;
mod retry;

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{CacheEntry, ResponseCache};
pub use live::{parse_completion, request_body, LiveBackend, API_KEY_ENV, BASE_URL_ENV};
pub use mock::{ObliviousBackend, PartialCopyBackend, VerbatimBackend, DEFAULT_PARTIAL_CHUNKS};
pub use retry::RetryPolicy;

use crate::prompt::{GeneratedCompletion, Transcript};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<GatewayError> },
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("cache write failed: {0}")]
    Cache(String),
}

impl GatewayError {
    /// Timeouts, dropped connections, rate limiting and server errors.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Timeout | GatewayError::Transport(_) => true,
            GatewayError::Status { code, .. } => *code == 408 || *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model: String,
    pub temperature: f64,
    /// `None` means one and a half times the reference length, rounded up.
    pub max_tokens: Option<u32>,
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model: "mock".into(),
            temperature: 0.1,
            max_tokens: None,
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(GatewayError::InvalidParams(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == Some(0) {
            return Err(GatewayError::InvalidParams("max_tokens must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_max_tokens(&self, transcript: &Transcript) -> u32 {
        self.max_tokens
            .unwrap_or_else(|| default_max_tokens(transcript.reference_tokens.len()))
    }
}

/// `ceil(1.5 * reference_len)`, at least 1.
pub fn default_max_tokens(reference_len: usize) -> u32 {
    let n = reference_len as u32;
    (n * 3).div_ceil(2).max(1)
}

/// Everything a backend sees for one call.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub transcript: &'a Transcript,
    pub params: &'a GenerationParams,
    pub max_tokens: u32,
    pub seed: u64,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> String;

    /// Whether `GenerationParams::seed` changes the output.
    fn uses_seed(&self) -> bool {
        true
    }

    fn is_live(&self) -> bool {
        false
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError>;
}

/// Backend selector as written on the command line:
/// `live`, `verbatim`, `oblivious`, `partial:P` or `partial:P:CHUNKS`.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Live,
    Verbatim,
    Oblivious,
    Partial { p: f64, chunks: usize },
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => return Ok(BackendSpec::Live),
            "verbatim" => return Ok(BackendSpec::Verbatim),
            "oblivious" => return Ok(BackendSpec::Oblivious),
            _ => {}
        }
        let rest = s
            .strip_prefix("partial:")
            .ok_or_else(|| format!("unknown backend \"{s}\" (expected live, verbatim, oblivious or partial:P)"))?;
        let mut parts = rest.split(':');
        let p: f64 = parts
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| format!("invalid copy probability in \"{s}\""))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("copy probability {p} outside [0, 1]"));
        }
        let chunks = match parts.next() {
            None => DEFAULT_PARTIAL_CHUNKS,
            Some(c) => c
                .parse()
                .ok()
                .filter(|&c: &usize| c >= 1)
                .ok_or_else(|| format!("invalid chunk count in \"{s}\""))?,
        };
        if parts.next().is_some() {
            return Err(format!("too many fields in \"{s}\""));
        }
        Ok(BackendSpec::Partial { p, chunks })
    }
}

impl BackendSpec {
    pub fn is_live(&self) -> bool {
        matches!(self, BackendSpec::Live)
    }

    /// Instantiates the backend. `base_url` is only used by `live`.
    pub fn build(&self, base_url: &str, timeout: Duration) -> Result<Arc<dyn Backend>, GatewayError> {
        Ok(match self {
            BackendSpec::Live => Arc::new(LiveBackend::from_env(base_url, timeout)?),
            BackendSpec::Verbatim => Arc::new(VerbatimBackend),
            BackendSpec::Oblivious => Arc::new(ObliviousBackend),
            BackendSpec::Partial { p, chunks } => Arc::new(PartialCopyBackend::with_chunks(*p, *chunks)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub doc_id: String,
    pub request_key: String,
    pub output_text: String,
    pub backend_name: String,
    pub params: GenerationParams,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub cached: bool,
}

impl GenerationRecord {
    pub fn completion(&self) -> GeneratedCompletion {
        GeneratedCompletion::new(self.output_text.clone())
    }
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    backend: &'a str,
    model: &'a str,
    temperature: f64,
    max_tokens: u32,
    seed: Option<u64>,
    system: &'a str,
    turns: Vec<(&'a str, &'a str)>,
    reference: &'a str,
}

/// Hex SHA-256 over the canonical request. The seed only participates for
/// backends whose output depends on it.
pub fn request_key(backend: &dyn Backend, transcript: &Transcript, params: &GenerationParams) -> String {
    let material = KeyMaterial {
        backend: &backend.name(),
        model: &params.model,
        temperature: params.temperature,
        max_tokens: params.resolved_max_tokens(transcript),
        seed: if backend.uses_seed() { Some(params.seed.unwrap_or(0)) } else { None },
        system: &transcript.system_prompt,
        turns: transcript.turns.iter().map(|t| (t.role.as_str(), t.text.as_str())).collect(),
        reference: &transcript.reference_text,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(bytes))
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: Arc<ResponseCache>,
    retry: RetryPolicy,
    requests: AtomicUsize,
    jitter: Mutex<ChaCha8Rng>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("cache", &self.cache.path())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, cache: Arc<ResponseCache>) -> Self {
        Self {
            backend,
            cache,
            retry: RetryPolicy::default(),
            requests: AtomicUsize::new(0),
            jitter: Mutex::new(ChaCha8Rng::from_entropy()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend_name(&self) -> String {
        self.backend.name()
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Backend calls issued so far, retries included.
    pub fn requests_issued(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Returns the completion for `transcript`, from cache when possible.
    pub fn generate(&self, transcript: &Transcript, params: &GenerationParams) -> Result<GenerationRecord, GatewayError> {
        params.validate()?;
        let key = request_key(self.backend.as_ref(), transcript, params);
        let mut resolved = params.clone();
        resolved.max_tokens = Some(params.resolved_max_tokens(transcript));
        if !self.backend.uses_seed() {
            resolved.seed = None;
        }

        if let Some(hit) = self.cache.lookup(&key) {
            if hit.output.trim().is_empty() {
                return Err(GatewayError::EmptyCompletion);
            }
            return Ok(GenerationRecord {
                doc_id: transcript.doc_id.clone(),
                request_key: key,
                output_text: hit.output,
                backend_name: hit.backend,
                params: resolved,
                created_at: hit.created_at,
                cached: true,
            });
        }

        let request = CompletionRequest {
            transcript,
            params,
            max_tokens: resolved.max_tokens.unwrap_or(1),
            seed: params.seed.unwrap_or(0),
        };
        let output = self.call_with_retry(&request)?;
        if output.trim().is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        let created_at = Utc::now();
        self.cache
            .store(CacheEntry {
                key: key.clone(),
                output: output.clone(),
                backend: self.backend.name(),
                model: params.model.clone(),
                temperature: params.temperature,
                created_at,
            })
            .map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(GenerationRecord {
            doc_id: transcript.doc_id.clone(),
            request_key: key,
            output_text: output,
            backend_name: self.backend.name(),
            params: resolved,
            created_at,
            cached: false,
        })
    }

    fn call_with_retry(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            self.requests.fetch_add(1, Ordering::SeqCst);
            match self.backend.complete(request) {
                Ok(text) => return Ok(text),
                Err(e) if !e.is_transient() => return Err(e),
                Err(e) if attempt >= attempts => {
                    return Err(if attempts == 1 {
                        e
                    } else {
                        GatewayError::RetriesExhausted { attempts, last: Box::new(e) }
                    })
                }
                Err(e) => {
                    let wait = {
                        let mut rng = self.jitter.lock().expect("jitter lock poisoned");
                        self.retry.delay(attempt, &mut *rng)
                    };
                    log::debug!(
                        "{}: attempt {attempt} failed ({e}); retrying in {wait:?}",
                        request.transcript.doc_id
                    );
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }

    /// Generates completions for all transcripts with at most
    /// `max_in_flight` calls outstanding. Results align with the input.
    pub fn generate_batch(
        &self,
        transcripts: &[Transcript],
        params: &GenerationParams,
        max_in_flight: usize,
    ) -> Vec<Result<GenerationRecord, GatewayError>> {
        let workers = max_in_flight.max(1).min(transcripts.len());
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<GenerationRecord, GatewayError>>>> =
            Mutex::new(vec![None; transcripts.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::SeqCst);
                    let Some(tr) = transcripts.get(idx) else { break };
                    let outcome = self.generate(tr, params);
                    results.lock().expect("results lock poisoned")[idx] = Some(outcome);
                });
            }
        });
        results
            .into_inner()
            .expect("results lock poisoned")
            .into_iter()
            .map(|r| r.expect("every transcript processed"))
            .collect()
    }
}
