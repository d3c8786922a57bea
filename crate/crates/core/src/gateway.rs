//! Access to text-generation and embedding backends.
//!
//! Two backends are provided: [`HttpBackend`] speaks the common
//! chat-completion / embeddings JSON wire format, [`ReplayBackend`] serves
//! recorded responses keyed by request fingerprint. [`Recorder`] wraps a live
//! backend and appends every exchange to a replay file.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub model_id: String,
    pub temperature: f64,
    pub max_length: u32,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            model_id: "gpt-4o-2024-08-06".to_string(),
            temperature: 0.0,
            max_length: 4096,
            timeout: Duration::from_secs(120),
            max_retries: 3,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::invalid(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_length == 0 {
            return Err(Error::invalid("max_length must be positive"));
        }
        if self.model_id.trim().is_empty() {
            return Err(Error::invalid("model_id must be set"));
        }
        Ok(())
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// SHA-256 over the rendered prompt and the generation parameters that
/// affect output.
pub fn fingerprint(prompt: &str, config: &GenerationConfig) -> String {
    let mut h = Sha256::new();
    for part in [
        config.model_id.as_bytes(),
        &config.temperature.to_bits().to_be_bytes(),
        &config.max_length.to_be_bytes(),
        prompt.as_bytes(),
    ] {
        h.update((part.len() as u64).to_be_bytes());
        h.update(part);
    }
    hex::encode(h.finalize())
}

/// A text-generation and embedding provider. Implementations must be safe
/// to call from several threads.
pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> Result<String>;

    /// Raw vectors, one per text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplayRecord {
    Completion {
        fingerprint: String,
        model_id: String,
        prompt: String,
        response: String,
    },
    Embedding {
        text: String,
        vector: Vec<f64>,
    },
}

/// Recorded responses. Later records for the same key replace earlier ones.
#[derive(Debug, Clone, Default)]
pub struct ReplayStore {
    completions: HashMap<String, String>,
    embeddings: HashMap<String, Vec<f64>>,
}

impl ReplayStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<ReplayStore> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut store = ReplayStore::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Validation(format!(
                    "{}:{}: bad replay record: {e}",
                    path.display(),
                    n + 1
                ))
            })?;
            store.insert(record);
        }
        Ok(store)
    }

    pub fn insert(&mut self, record: ReplayRecord) {
        match record {
            ReplayRecord::Completion {
                fingerprint,
                response,
                ..
            } => {
                self.completions.insert(fingerprint, response);
            }
            ReplayRecord::Embedding { text, vector } => {
                self.embeddings.insert(text, vector);
            }
        }
    }

    pub fn insert_completion(&mut self, prompt: &str, config: &GenerationConfig, response: &str) {
        self.insert(ReplayRecord::Completion {
            fingerprint: fingerprint(prompt, config),
            model_id: config.model_id.clone(),
            prompt: prompt.to_string(),
            response: response.to_string(),
        });
    }

    pub fn insert_embedding(&mut self, text: &str, vector: Vec<f64>) {
        self.embeddings.insert(text.to_string(), vector);
    }

    pub fn completion(&self, fingerprint: &str) -> Option<&str> {
        self.completions.get(fingerprint).map(String::as_str)
    }

    pub fn completion_count(&self) -> usize {
        self.completions.len()
    }

    pub fn embedding_count(&self) -> usize {
        self.embeddings.len()
    }
}

/// Serves responses from a [`ReplayStore`]; any unrecorded request fails.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    store: ReplayStore,
}

impl ReplayBackend {
    pub fn new(store: ReplayStore) -> Self {
        ReplayBackend { store }
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> Result<String> {
        let fp = fingerprint(prompt, config);
        self.store
            .completion(&fp)
            .map(str::to_string)
            .ok_or(Error::ReplayMiss { fingerprint: fp })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                self.store
                    .embeddings
                    .get(t)
                    .cloned()
                    .ok_or_else(|| Error::ReplayMiss {
                        fingerprint: format!("embedding:{t}"),
                    })
            })
            .collect()
    }
}

/// Exponential backoff: `base * 2^attempt`, capped at `max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackoffPolicy {
    pub base: Duration,
    pub max: Duration,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy {
            base: Duration::from_millis(500),
            max: Duration::from_secs(30),
        }
    }
}

impl BackoffPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.min(31));
        self.base.saturating_mul(factor).min(self.max)
    }
}

/// Failure of a single attempt.
#[derive(Debug)]
pub enum AttemptError {
    /// Timeout or rate limit; worth retrying.
    Retryable(String),
    Fatal(Error),
}

/// Runs `op` once plus up to `max_retries` retries on retryable failures,
/// sleeping between attempts with `sleep`.
pub fn with_retries<T>(
    max_retries: u32,
    policy: &BackoffPolicy,
    sleep: &mut dyn FnMut(Duration),
    mut op: impl FnMut(u32) -> Result<T, AttemptError>,
) -> Result<T> {
    let mut attempt = 0;
    loop {
        match op(attempt) {
            Ok(v) => return Ok(v),
            Err(AttemptError::Fatal(e)) => return Err(e),
            Err(AttemptError::Retryable(msg)) => {
                if attempt >= max_retries {
                    return Err(Error::Transport(format!(
                        "giving up after {} attempts: {msg}",
                        attempt + 1
                    )));
                }
                sleep(policy.delay(attempt));
                attempt += 1;
            }
        }
    }
}

/// Endpoint settings for [`HttpBackend`]. The API key is read from the
/// environment variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub completion_url: String,
    pub embedding_url: Option<String>,
    pub embedding_model: String,
    pub api_key_env: String,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            completion_url: "https://api.openai.com/v1/chat/completions".to_string(),
            embedding_url: None,
            embedding_model: "all-MiniLM-L6-v2".to_string(),
            api_key_env: "QUADNET_API_KEY".to_string(),
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: HttpConfig,
    api_key: Option<String>,
    backoff: BackoffPolicy,
    embed_timeout: Duration,
    embed_retries: u32,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        Ok(HttpBackend {
            client,
            config,
            api_key,
            backoff: BackoffPolicy::default(),
            embed_timeout: Duration::from_secs(120),
            embed_retries: 3,
        })
    }

    pub fn with_backoff(mut self, backoff: BackoffPolicy) -> Self {
        self.backoff = backoff;
        self
    }

    fn post<B: Serialize>(
        &self,
        url: &str,
        body: &B,
        timeout: Duration,
    ) -> Result<String, AttemptError> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                AttemptError::Retryable(format!("timeout: {e}"))
            } else {
                AttemptError::Fatal(Error::Transport(e.to_string()))
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                AttemptError::Retryable(format!("timeout: {e}"))
            } else {
                AttemptError::Fatal(Error::Transport(e.to_string()))
            }
        })?;
        if status.as_u16() == 429 {
            return Err(AttemptError::Retryable(format!("rate limited: {text}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(Error::Backend {
                status: status.as_u16(),
                body: text,
            }));
        }
        Ok(text)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> Result<String> {
        let body = ChatRequest {
            model: &config.model_id,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: config.temperature,
            max_tokens: config.max_length,
        };
        let raw = with_retries(
            config.max_retries,
            &self.backoff,
            &mut std::thread::sleep,
            |_| self.post(&self.config.completion_url, &body, config.timeout),
        )?;
        let parsed: ChatResponse = serde_json::from_str(&raw)
            .map_err(|e| Error::Transport(format!("unexpected completion payload: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Transport("completion payload has no message text".into()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let url = self
            .config
            .embedding_url
            .as_deref()
            .ok_or_else(|| Error::invalid("no embedding endpoint configured"))?;
        let body = EmbeddingRequest {
            model: &self.config.embedding_model,
            input: texts,
        };
        let raw = with_retries(
            self.embed_retries,
            &self.backoff,
            &mut std::thread::sleep,
            |_| self.post(url, &body, self.embed_timeout),
        )?;
        let mut parsed: EmbeddingResponse = serde_json::from_str(&raw)
            .map_err(|e| Error::Transport(format!("unexpected embedding payload: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(Error::Transport(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed.data.sort_by_key(|d| d.index);
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}

/// Wraps a live backend and appends each successful exchange to a replay
/// file. Write failures are logged and collected, never fatal.
pub struct Recorder<B> {
    inner: B,
    path: PathBuf,
    out: Mutex<Option<File>>,
    warnings: Mutex<Vec<String>>,
}

impl<B: Backend> Recorder<B> {
    pub fn new(inner: B, path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Recorder {
            inner,
            path: path.to_path_buf(),
            out: Mutex::new(Some(file)),
            warnings: Mutex::new(Vec::new()),
        })
    }

    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().expect("poisoned").clone()
    }

    fn append(&self, record: &ReplayRecord) {
        let line = serde_json::to_string(record).expect("record serializes");
        let mut out = self.out.lock().expect("poisoned");
        let result = match out.as_mut() {
            Some(f) => writeln!(f, "{line}").and_then(|_| f.flush()),
            None => return,
        };
        if let Err(e) = result {
            let msg = format!(
                "could not append to replay file {}: {e}",
                self.path.display()
            );
            log::warn!("{msg}");
            self.warnings.lock().expect("poisoned").push(msg);
        }
    }
}

impl<B: Backend> Backend for Recorder<B> {
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> Result<String> {
        let response = self.inner.complete(prompt, config)?;
        self.append(&ReplayRecord::Completion {
            fingerprint: fingerprint(prompt, config),
            model_id: config.model_id.clone(),
            prompt: prompt.to_string(),
            response: response.clone(),
        });
        Ok(response)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let vectors = self.inner.embed(texts)?;
        for (text, vector) in texts.iter().zip(&vectors) {
            self.append(&ReplayRecord::Embedding {
                text: text.clone(),
                vector: vector.clone(),
            });
        }
        Ok(vectors)
    }
}

struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            available: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("poisoned");
        while *n == 0 {
            n = self.cv.wait(n).expect("poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Uniform, concurrency-bounded access to a backend. Embeddings come back
/// L2-normalized whatever the backend returns.
pub struct Gateway {
    backend: Box<dyn Backend>,
    permits: Semaphore,
    max_in_flight: usize,
    fingerprints: Mutex<BTreeSet<String>>,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static, max_in_flight: usize) -> Self {
        Gateway {
            backend: Box::new(backend),
            permits: Semaphore::new(max_in_flight),
            max_in_flight: max_in_flight.max(1),
            fingerprints: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn replay(store: ReplayStore) -> Self {
        Gateway::new(ReplayBackend::new(store), DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn complete(&self, prompt: &str, config: &GenerationConfig) -> Result<String> {
        if prompt.trim().is_empty() {
            return Err(Error::invalid("empty prompt"));
        }
        self.fingerprints
            .lock()
            .expect("poisoned")
            .insert(fingerprint(prompt, config));
        let _permit = self.permits.acquire();
        self.backend.complete(prompt, config)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::invalid(format!("empty text at position {i}")));
        }
        let raw = {
            let _permit = self.permits.acquire();
            self.backend.embed(texts)?
        };
        if raw.len() != texts.len() {
            return Err(Error::Transport(format!(
                "backend returned {} vectors for {} texts",
                raw.len(),
                texts.len()
            )));
        }
        raw.into_iter()
            .zip(texts)
            .map(|(v, t)| {
                l2_normalize(v).ok_or_else(|| Error::invalid(format!("zero embedding for `{t}`")))
            })
            .collect()
    }

    /// Fingerprints of every completion requested so far, sorted.
    pub fn fingerprints(&self) -> Vec<String> {
        self.fingerprints
            .lock()
            .expect("poisoned")
            .iter()
            .cloned()
            .collect()
    }
}

pub fn l2_normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm.is_nan() || norm <= 0.0 || norm.is_infinite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn default_config_matches_inference_settings() {
        let c = GenerationConfig::default();
        assert_eq!(c.temperature, 0.0);
        assert_eq!(c.max_length, 4096);
        c.validate().unwrap();
        let bad = GenerationConfig {
            temperature: -0.1,
            ..c.clone()
        };
        assert!(bad.validate().is_err());
        let bad = GenerationConfig { max_length: 0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fingerprint_depends_on_every_field() {
        let c = GenerationConfig::default();
        let base = fingerprint("p", &c);
        assert_eq!(base, fingerprint("p", &c.clone()));
        assert_ne!(base, fingerprint("q", &c));
        assert_ne!(
            base,
            fingerprint(
                "p",
                &GenerationConfig {
                    temperature: 0.5,
                    ..c.clone()
                }
            )
        );
        assert_ne!(
            base,
            fingerprint(
                "p",
                &GenerationConfig {
                    max_length: 10,
                    ..c.clone()
                }
            )
        );
        assert_ne!(
            base,
            fingerprint(
                "p",
                &GenerationConfig {
                    model_id: "x".into(),
                    ..c.clone()
                }
            )
        );
        // timeout and retries do not affect output
        assert_eq!(
            base,
            fingerprint(
                "p",
                &GenerationConfig {
                    max_retries: 9,
                    ..c
                }
            )
        );
    }

    #[test]
    fn replay_hit_and_miss() {
        let c = GenerationConfig::default();
        let mut store = ReplayStore::new();
        store.insert_completion("p", &c, "[]");
        let gw = Gateway::replay(store);
        assert_eq!(gw.complete("p", &c).unwrap(), "[]");
        match Gateway::replay(ReplayStore::new()).complete("p", &c) {
            Err(Error::ReplayMiss { fingerprint: fp }) => assert_eq!(fp, fingerprint("p", &c)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(gw.complete("  ", &c), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn embeddings_are_normalized() {
        let mut store = ReplayStore::new();
        store.insert_embedding("net zero", vec![0.6, 0.8]);
        store.insert_embedding("finance", vec![3.0, 4.0]);
        store.insert_embedding("nothing", vec![0.0, 0.0]);
        let gw = Gateway::replay(store);
        let v = gw.embed(&["net zero".into(), "finance".into()]).unwrap();
        for (got, want) in v.iter().zip([[0.6, 0.8], [0.6, 0.8]]) {
            assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
            let norm = got.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        assert!(gw.embed(&[]).unwrap().is_empty());
        assert!(gw.embed(&["nothing".into()]).is_err());
        assert!(matches!(
            gw.embed(&["unknown".into()]),
            Err(Error::ReplayMiss { .. })
        ));
    }

    #[test]
    fn backoff_is_monotone_and_retries_bounded() {
        let policy = BackoffPolicy::default();
        let delays: Vec<Duration> = (0..40).map(|i| policy.delay(i)).collect();
        assert!(delays.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*delays.last().unwrap(), policy.max);

        for max_retries in 0..5 {
            let mut slept = Vec::new();
            let mut calls = 0;
            let r: Result<()> = with_retries(max_retries, &policy, &mut |d| slept.push(d), |_| {
                calls += 1;
                Err(AttemptError::Retryable("slow".into()))
            });
            assert!(matches!(r, Err(Error::Transport(_))));
            assert_eq!(calls, max_retries + 1);
            assert_eq!(slept.len() as u32, max_retries);
            assert!(slept.windows(2).all(|w| w[0] <= w[1]));
        }

        let mut calls = 0;
        let r = with_retries(3, &policy, &mut |_| {}, |attempt| {
            calls += 1;
            if attempt < 2 {
                Err(AttemptError::Retryable("429".into()))
            } else {
                Ok(attempt)
            }
        });
        assert_eq!(r.unwrap(), 2);
        assert_eq!(calls, 3);

        let r: Result<()> = with_retries(3, &policy, &mut |_| {}, |_| {
            Err(AttemptError::Fatal(Error::Backend {
                status: 400,
                body: String::new(),
            }))
        });
        assert!(matches!(r, Err(Error::Backend { status: 400, .. })));
    }

    struct Counting {
        calls: AtomicUsize,
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Backend for Arc<Counting> {
        fn complete(&self, prompt: &str, _config: &GenerationConfig) -> Result<String> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(format!("{prompt}#{n}"))
        }

        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            Ok(texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect())
        }
    }

    fn counting() -> Arc<Counting> {
        Arc::new(Counting {
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        })
    }

    #[test]
    fn in_flight_bound_is_respected() {
        let backend = counting();
        let gw = Gateway::new(backend.clone(), 2);
        let c = GenerationConfig::default();
        std::thread::scope(|s| {
            for i in 0..8 {
                let gw = &gw;
                let c = &c;
                s.spawn(move || gw.complete(&format!("p{i}"), c).unwrap());
            }
        });
        assert_eq!(backend.calls.load(Ordering::SeqCst), 8);
        assert!(backend.peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gw.fingerprints().len(), 8);
    }

    #[test]
    fn recorder_writes_replayable_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.rpl");
        let c = GenerationConfig::default();
        let recorder = Recorder::new(counting(), &path).unwrap();
        let gw = Gateway::new(recorder, 1);
        let live: Vec<String> = ["a", "b", "c"]
            .iter()
            .map(|p| gw.complete(p, &c).unwrap())
            .collect();
        gw.embed(&["net zero".into()]).unwrap();
        let store = ReplayStore::load(&path).unwrap();
        assert_eq!(store.completion_count(), 3);
        assert_eq!(store.embedding_count(), 1);

        let replayed = Gateway::replay(store);
        for (p, want) in ["a", "b", "c"].iter().zip(&live) {
            assert_eq!(&replayed.complete(p, &c).unwrap(), want);
        }
        assert_eq!(
            replayed.embed(&["net zero".into()]).unwrap(),
            gw.embed(&["net zero".into()]).unwrap()
        );
    }

    #[test]
    fn duplicate_prompt_keeps_last_response() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.rpl");
        let c = GenerationConfig::default();
        let gw = Gateway::new(Recorder::new(counting(), &path).unwrap(), 1);
        gw.complete("same", &c).unwrap();
        let second = gw.complete("same", &c).unwrap();
        let store = ReplayStore::load(&path).unwrap();
        assert_eq!(store.completion_count(), 1);
        assert_eq!(
            store.completion(&fingerprint("same", &c)),
            Some(second.as_str())
        );
        assert_eq!(second, "same#1");
    }
}
