//! Chat-completion dispatch to any OpenAI-compatible endpoint or the
//! deterministic offline mock, under a hard global in-flight bound, with
//! exponential-backoff retries, budget enforcement, and a write-ahead
//! transcript log for resume-without-recall.

mod http;
mod mock;
mod wal;

pub use http::HttpBackend;
pub use mock::MockBackend;
pub use wal::{TranscriptLog, WalEntry};

use crate::ledger::{Ledger, LedgerError, Stage};
use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;
use thiserror::Error;
use tokio::sync::Semaphore;

pub const SYNTHESIS_TEMPERATURE: f64 = 1.0;
pub const JUDGING_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Budget(#[from] LedgerError),
    #[error("permanent endpoint rejection: {0}")]
    Permanent(String),
    #[error("retries exhausted after {attempts} attempts; history: {history:?}")]
    RetriesExhausted { attempts: u32, history: Vec<String> },
    #[error("transcript log i/o: {0}")]
    Wal(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// One chat-completion request. `tag` names the ledger stage that pays for
/// it; `seed` is passed to the endpoint so repeated sampling of the same
/// prompt can be diversified deterministically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub tag: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Synthesis-stage request: temperature 1.0, top_p 1.0.
    pub fn synthesis(prompt: impl Into<String>, tag: impl Into<String>, seed: u64) -> Self {
        ChatRequest {
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.into(),
            }],
            temperature: SYNTHESIS_TEMPERATURE,
            top_p: 1.0,
            max_tokens: 2048,
            tag: tag.into(),
            seed: Some(seed),
        }
    }

    /// Judgment-stage request: temperature 0.0.
    pub fn judging(prompt: impl Into<String>, tag: impl Into<String>) -> Self {
        ChatRequest {
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.into(),
            }],
            temperature: JUDGING_TEMPERATURE,
            top_p: 1.0,
            max_tokens: 2048,
            tag: tag.into(),
            seed: None,
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }

    /// Content hash used as the transcript-log key.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }

    pub fn prompt_text(&self) -> &str {
        self.messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub attempt_count: u32,
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// 429, 5xx, timeouts: worth retrying.
    #[error("transient: {0}")]
    Transient(String),
    /// Other 4xx: retrying cannot help.
    #[error("permanent: {0}")]
    Permanent(String),
}

#[derive(Debug, Clone)]
pub struct BackendOutput {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<BackendOutput, BackendError>;
    fn name(&self) -> &str;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub cap: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            cap: 5,
            backoff_ms: 200,
        }
    }
}

/// The dispatcher. Safe for concurrent submission; the in-flight bound is a
/// hard global semaphore shared by `complete` and `complete_batch`.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    ledger: Arc<Ledger>,
    semaphore: Arc<Semaphore>,
    max_in_flight: usize,
    retry: RetryPolicy,
    wal: Option<Arc<TranscriptLog>>,
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn Backend>,
        ledger: Arc<Ledger>,
        max_in_flight: usize,
        retry: RetryPolicy,
    ) -> Result<Self, GatewayError> {
        if max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be >= 1".into()));
        }
        if retry.cap == 0 {
            return Err(GatewayError::Config("retry cap must be >= 1".into()));
        }
        Ok(Gateway {
            backend,
            ledger,
            semaphore: Arc::new(Semaphore::new(max_in_flight)),
            max_in_flight,
            retry,
            wal: None,
        })
    }

    /// Attaches a write-ahead transcript log; previously logged requests are
    /// answered from the log without spending calls.
    pub fn with_wal(mut self, wal: Arc<TranscriptLog>) -> Self {
        self.wal = Some(wal);
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    fn stage_of(&self, request: &ChatRequest) -> Result<Stage, GatewayError> {
        request
            .tag
            .parse::<Stage>()
            .map_err(|e| GatewayError::Config(e.to_string()))
    }

    /// Dispatches one request with retries. Every attempt is charged to the
    /// ledger as one call; token usage is recorded on success.
    pub async fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let stage = self.stage_of(request)?;
        let hash = request.content_hash();
        if let Some(wal) = &self.wal {
            if let Some(entry) = wal.lookup(&hash) {
                return Ok(Completion {
                    text: entry.response,
                    prompt_tokens: entry.prompt_tokens,
                    completion_tokens: entry.completion_tokens,
                    attempt_count: entry.attempts,
                });
            }
        }
        let _permit = self
            .semaphore
            .acquire()
            .await
            .map_err(|e| GatewayError::Config(e.to_string()))?;

        let mut history = Vec::new();
        for attempt in 1..=self.retry.cap {
            self.ledger.charge_call(stage)?;
            match self.backend.complete(request).await {
                Ok(out) => {
                    self.ledger
                        .record_tokens(stage, out.prompt_tokens, out.completion_tokens);
                    let completion = Completion {
                        text: out.text,
                        prompt_tokens: out.prompt_tokens,
                        completion_tokens: out.completion_tokens,
                        attempt_count: attempt,
                    };
                    if let Some(wal) = &self.wal {
                        wal.append(&WalEntry {
                            request_hash: hash.clone(),
                            request: request.clone(),
                            response: completion.text.clone(),
                            prompt_tokens: completion.prompt_tokens,
                            completion_tokens: completion.completion_tokens,
                            attempts: completion.attempt_count,
                        })
                        .map_err(|e| GatewayError::Wal(e.to_string()))?;
                    }
                    return Ok(completion);
                }
                Err(BackendError::Permanent(msg)) => return Err(GatewayError::Permanent(msg)),
                Err(BackendError::Transient(msg)) => {
                    history.push(format!("attempt {attempt}: {msg}"));
                    if attempt < self.retry.cap {
                        let delay = self.retry.backoff_ms.saturating_mul(1 << (attempt - 1));
                        tokio::time::sleep(std::time::Duration::from_millis(delay)).await;
                    }
                }
            }
        }
        Err(GatewayError::RetriesExhausted {
            attempts: self.retry.cap,
            history,
        })
    }

    /// Dispatches a batch. The output is index-aligned with the input; at
    /// most `max_in_flight` (the gateway bound) requests are outstanding;
    /// per-slot failures never abort the batch.
    pub async fn complete_batch(
        &self,
        requests: &[ChatRequest],
    ) -> Vec<Result<Completion, GatewayError>> {
        let width = self.max_in_flight;
        stream::iter(requests.iter())
            .map(|req| self.complete(req))
            .buffered(width)
            .collect()
            .await
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::Budget;
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    struct Scripted {
        // failures before success, per request prompt
        failures: AtomicU32,
        order: Mutex<Vec<String>>,
        fail_substring: Option<String>,
    }

    impl Scripted {
        fn new(failures: u32) -> Self {
            Scripted {
                failures: AtomicU32::new(failures),
                order: Mutex::new(Vec::new()),
                fail_substring: None,
            }
        }
    }

    #[async_trait]
    impl Backend for Scripted {
        async fn complete(&self, request: &ChatRequest) -> Result<BackendOutput, BackendError> {
            self.order
                .lock()
                .unwrap()
                .push(request.prompt_text().to_string());
            if let Some(s) = &self.fail_substring {
                if request.prompt_text().contains(s.as_str()) {
                    return Err(BackendError::Permanent("scripted failure".into()));
                }
            }
            let remaining = self.failures.load(Ordering::SeqCst);
            if remaining > 0 {
                self.failures.store(remaining - 1, Ordering::SeqCst);
                return Err(BackendError::Transient("scripted 503".into()));
            }
            Ok(BackendOutput {
                text: "ok".into(),
                prompt_tokens: 10,
                completion_tokens: 5,
            })
        }
        fn name(&self) -> &str {
            "scripted"
        }
    }

    fn fast_retry(cap: u32) -> RetryPolicy {
        RetryPolicy { cap, backoff_ms: 1 }
    }

    #[tokio::test]
    async fn two_failures_then_success_counts_three_attempts() {
        let ledger = Arc::new(Ledger::default());
        let gw = Gateway::new(
            Arc::new(Scripted::new(2)),
            Arc::clone(&ledger),
            4,
            fast_retry(3),
        )
        .unwrap();
        let c = gw
            .complete(&ChatRequest::synthesis("p", "other", 0))
            .await
            .unwrap();
        assert_eq!(c.attempt_count, 3);
        // every attempt charged as one call
        assert_eq!(ledger.snapshot().total().calls, 3);
        assert_eq!(ledger.snapshot().total().prompt_tokens, 10);
    }

    #[tokio::test]
    async fn retries_exhausted_reports_history() {
        let gw = Gateway::new(
            Arc::new(Scripted::new(10)),
            Arc::new(Ledger::default()),
            4,
            fast_retry(3),
        )
        .unwrap();
        match gw.complete(&ChatRequest::synthesis("p", "other", 0)).await {
            Err(GatewayError::RetriesExhausted { attempts: 3, history }) => {
                assert_eq!(history.len(), 3);
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[tokio::test]
    async fn batch_results_are_index_aligned_with_failure_slots() {
        let backend = Scripted {
            failures: AtomicU32::new(0),
            order: Mutex::new(Vec::new()),
            fail_substring: Some("poison".into()),
        };
        let gw = Gateway::new(Arc::new(backend), Arc::new(Ledger::default()), 8, fast_retry(2))
            .unwrap();
        let reqs: Vec<ChatRequest> = (0..100)
            .map(|i| {
                let p = if i == 42 {
                    "poison pill".to_string()
                } else {
                    format!("request {i}")
                };
                ChatRequest::synthesis(p, "other", i)
            })
            .collect();
        let results = gw.complete_batch(&reqs).await;
        assert_eq!(results.len(), 100);
        for (i, r) in results.iter().enumerate() {
            if i == 42 {
                assert!(matches!(r, Err(GatewayError::Permanent(_))));
            } else {
                assert!(r.is_ok(), "slot {i}: {r:?}");
            }
        }
    }

    #[tokio::test]
    async fn serial_batch_preserves_dispatch_order() {
        let backend = Arc::new(Scripted::new(0));
        let gw = Gateway::new(
            Arc::clone(&backend) as Arc<dyn Backend>,
            Arc::new(Ledger::default()),
            1,
            fast_retry(1),
        )
        .unwrap();
        let reqs: Vec<ChatRequest> = (0..20)
            .map(|i| ChatRequest::synthesis(format!("req {i}"), "other", i))
            .collect();
        let _ = gw.complete_batch(&reqs).await;
        let order = backend.order.lock().unwrap().clone();
        let expected: Vec<String> = (0..20).map(|i| format!("req {i}")).collect();
        assert_eq!(order, expected);
    }

    #[tokio::test]
    async fn budget_refuses_next_call() {
        let mut caps = BTreeMap::new();
        caps.insert(Stage::SeedSft, 2);
        let ledger = Arc::new(Ledger::new(Budget { caps, soft: false }));
        let gw = Gateway::new(Arc::new(Scripted::new(0)), ledger, 4, fast_retry(1)).unwrap();
        for i in 0..2 {
            gw.complete(&ChatRequest::synthesis(format!("p{i}"), "seed_sft", i))
                .await
                .unwrap();
        }
        assert!(matches!(
            gw.complete(&ChatRequest::synthesis("p3", "seed_sft", 3)).await,
            Err(GatewayError::Budget(_))
        ));
    }

    #[tokio::test]
    async fn unknown_tag_is_config_error() {
        let gw = Gateway::new(
            Arc::new(Scripted::new(0)),
            Arc::new(Ledger::default()),
            1,
            fast_retry(1),
        )
        .unwrap();
        let mut req = ChatRequest::synthesis("p", "other", 0);
        req.tag = "bogus".into();
        assert!(matches!(
            gw.complete(&req).await,
            Err(GatewayError::Config(_))
        ));
    }
}
