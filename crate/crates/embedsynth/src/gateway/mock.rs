//! Deterministic offline backend: a pure function of (request bytes, mock
//! seed) that answers every prompt family with schema-valid JSON, so the
//! whole pipeline runs without a network.

use super::{Backend, BackendError, BackendOutput, ChatRequest};
use crate::extract;
use async_trait::async_trait;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

const VOCAB: [&str; 64] = [
    "river", "archive", "signal", "harvest", "lattice", "meadow", "circuit", "glacier", "novel",
    "museum", "protein", "voltage", "canyon", "ledger", "orbit", "fresco", "timber", "plasma",
    "harbor", "sonata", "fossil", "quartz", "turbine", "saga", "compass", "mosaic", "ember",
    "prairie", "cipher", "anchor", "comet", "violin", "basalt", "lantern", "reef", "catalog",
    "summit", "pollen", "engine", "parchment", "tide", "falcon", "grove", "pendulum", "atlas",
    "marble", "current", "spire", "willow", "magnet", "furnace", "scroll", "delta", "beacon",
    "thicket", "prism", "keel", "geyser", "loom", "satchel", "vault", "bramble", "crest", "forge",
];

/// Offline chat backend. `fail_marker`, when set, makes any prompt that
/// contains it fail permanently (for fault-injection tests).
pub struct MockBackend {
    seed: u64,
    fail_marker: Option<String>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend {
            seed,
            fail_marker: None,
        }
    }

    pub fn with_fail_marker(mut self, marker: impl Into<String>) -> Self {
        self.fail_marker = Some(marker.into());
        self
    }

    fn rng_for(&self, request: &ChatRequest) -> ChaCha8Rng {
        let digest = Sha256::digest(request.canonical_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(bytes) ^ self.seed)
    }
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| *VOCAB.choose(rng).expect("vocab non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn sentence(rng: &mut ChaCha8Rng, n: usize) -> String {
    let mut s = words(rng, n);
    if let Some(first) = s.get_mut(0..1) {
        let upper = first.to_uppercase();
        s.replace_range(0..1, &upper);
    }
    s.push('.');
    s
}

fn mock_brainstorm(rng: &mut ChaCha8Rng, prompt: &str) -> Value {
    let topic = prompt
        .rsplit("for the topic: ")
        .next()
        .unwrap_or("")
        .trim_end_matches('.')
        .replace(['/', '_'], " ");
    let tasks: Vec<Value> = (0..4)
        .map(|_| {
            Value::String(format!(
                "Given a {} query, find {} texts about {}",
                words(rng, 1),
                words(rng, 1),
                topic.to_lowercase()
            ))
        })
        .collect();
    Value::Array(tasks)
}

fn mock_judgment(rng: &mut ChaCha8Rng, prompt: &str) -> Value {
    let len = prompt.matches("\"index\":").count().max(2);
    let best = rng.gen_range(0..len);
    let mut worst = rng.gen_range(0..len);
    while worst == best {
        worst = rng.gen_range(0..len);
    }
    json!({
        "reason": format!("candidate {best} follows the guidelines most closely while {worst} drifts off task"),
        "best": best,
        "worst": worst,
    })
}

fn mock_revision(rng: &mut ChaCha8Rng, prompt: &str) -> Value {
    let marker = "The output generated by the model is: ";
    let revised = prompt
        .split(marker)
        .nth(1)
        .and_then(|tail| extract::extract_json(tail).ok())
        .map(|(value, _)| {
            let mut v = value;
            if let Some(obj) = v.as_object_mut() {
                for field in obj.values_mut() {
                    if let Value::String(s) = field {
                        s.push_str(" (revised)");
                    }
                }
            }
            v
        })
        .unwrap_or_else(|| json!({"text": sentence(rng, 6)}));
    json!({
        "reason": "tightened relevance and completeness; corrected factual phrasing",
        "revision": serde_json::to_string(&revised).expect("revision serializes"),
    })
}

fn mock_sts(rng: &mut ChaCha8Rng) -> Value {
    let shared = words(rng, 4);
    let s1 = format!("The {shared} study covers {}.", words(rng, 3));
    let s2 = format!("A {shared} survey covers {}.", words(rng, 3));
    let s3 = format!("The {} report mentions {shared}.", words(rng, 4));
    json!({"S1": s1, "S2": s2, "S3": s3})
}

fn mock_retrieval(rng: &mut ChaCha8Rng) -> Value {
    json!({
        "user_query": words(rng, 6),
        "positive_document": sentence(rng, 30),
        "hard_negative_document": sentence(rng, 30),
    })
}

fn mock_classification(rng: &mut ChaCha8Rng) -> Value {
    let label = words(rng, 2);
    let mut misleading = words(rng, 2);
    if misleading == label {
        misleading.push_str(" other");
    }
    json!({
        "input_text": sentence(rng, 20),
        "label": label,
        "misleading_label": misleading,
    })
}

fn mock_matching(rng: &mut ChaCha8Rng) -> Value {
    json!({
        "input": sentence(rng, 8),
        "positive_document": sentence(rng, 10),
        "hard_negative_document": sentence(rng, 10),
    })
}

fn respond(rng: &mut ChaCha8Rng, prompt: &str) -> Value {
    // Order matters: judge/revise prompts embed synthesis prompts.
    if prompt.contains("\"revision\"") {
        mock_revision(rng, prompt)
    } else if prompt.contains("\"worst\"") {
        mock_judgment(rng, prompt)
    } else if prompt.contains("Brainstorm a list") {
        mock_brainstorm(rng, prompt)
    } else if prompt.contains("\"S1\"") {
        mock_sts(rng)
    } else if prompt.contains("\"user_query\"") {
        mock_retrieval(rng)
    } else if prompt.contains("\"input_text\"") {
        mock_classification(rng)
    } else if prompt.contains("\"input\"") {
        mock_matching(rng)
    } else {
        json!({"text": sentence(rng, 8)})
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<BackendOutput, BackendError> {
        let prompt = request.prompt_text();
        if let Some(marker) = &self.fail_marker {
            if prompt.contains(marker.as_str()) {
                return Err(BackendError::Permanent("mock: configured failure".into()));
            }
        }
        let mut rng = self.rng_for(request);
        let value = respond(&mut rng, prompt);
        let text = serde_json::to_string(&value).expect("mock value serializes");
        Ok(BackendOutput {
            prompt_tokens: (prompt.len() / 4) as u64,
            completion_tokens: (text.len() / 4) as u64,
            text,
        })
    }

    fn name(&self) -> &str {
        "mock"
    }
}
