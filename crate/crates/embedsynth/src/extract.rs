//! Lenient JSON extraction from raw LLM text plus schema validation into
//! typed records. Validation is total: every input maps to a typed value or
//! a categorized error, never a panic.

use crate::prompt::{TaskDescription, TaskFamily};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("no balanced JSON object found in output: '{excerpt}'")]
    NoJsonFound { excerpt: String },
    #[error("JSON parse error at byte {position}: {msg}")]
    Parse { position: usize, msg: String },
    #[error("expected a JSON object, got {0}")]
    NotAnObject(&'static str),
    #[error("missing key '{0}'")]
    MissingKey(String),
    #[error("empty value for key '{0}'")]
    EmptyValue(String),
    #[error("wrong type for key '{key}': expected {expected}")]
    WrongType { key: String, expected: &'static str },
    #[error("degenerate negative: positive and hard negative are identical")]
    DegenerateNegative,
    #[error("degenerate judgment: best == worst ({0})")]
    DegenerateJudgment(usize),
    #[error("index {index} out of range for candidate list of length {len}")]
    IndexOutOfRange { index: i64, len: usize },
    #[error("revision payload failed re-validation: {0}")]
    InvalidRevisionPayload(Box<ExtractError>),
}

impl ExtractError {
    /// Stable category labels for per-stage yield reports.
    pub fn category(&self) -> &'static str {
        match self {
            ExtractError::NoJsonFound { .. } => "no_json",
            ExtractError::Parse { .. } => "parse_error",
            ExtractError::NotAnObject(_) => "not_an_object",
            ExtractError::MissingKey(_) => "missing_key",
            ExtractError::EmptyValue(_) => "empty_value",
            ExtractError::WrongType { .. } => "wrong_type",
            ExtractError::DegenerateNegative => "degenerate_negative",
            ExtractError::DegenerateJudgment(_) => "degenerate_judgment",
            ExtractError::IndexOutOfRange { .. } => "index_out_of_range",
            ExtractError::InvalidRevisionPayload(_) => "invalid_revision_payload",
        }
    }
}

/// Per-category rejection tally.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RejectionCounters {
    pub counts: BTreeMap<String, u64>,
}

impl RejectionCounters {
    pub fn add(&mut self, err: &ExtractError) {
        *self.counts.entry(err.category().to_string()).or_insert(0) += 1;
    }
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Where a record came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub prompt_hash: String,
    pub revised: bool,
}

/// One synthetic embedding example with its family-specific payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRecord {
    pub family: TaskFamily,
    pub task: TaskDescription,
    pub payload: BTreeMap<String, String>,
    pub provenance: Provenance,
}

/// Key names per family: (query, positive, hard negative).
pub fn family_schema(family: TaskFamily) -> (&'static str, &'static str, &'static str) {
    match family {
        TaskFamily::Classification => ("input_text", "label", "misleading_label"),
        TaskFamily::Sts => ("S1", "S2", "S3"),
        TaskFamily::Retrieval => ("user_query", "positive_document", "hard_negative_document"),
        TaskFamily::MatchShortShort | TaskFamily::MatchLongLong => {
            ("input", "positive_document", "hard_negative_document")
        }
    }
}

impl EmbedRecord {
    pub fn query(&self) -> &str {
        &self.payload[family_schema(self.family).0]
    }
    pub fn positive(&self) -> &str {
        &self.payload[family_schema(self.family).1]
    }
    pub fn hard_negative(&self) -> &str {
        &self.payload[family_schema(self.family).2]
    }

    /// Validates a raw JSON value against the family schema and wraps it
    /// with its task and provenance.
    pub fn from_value(
        family: TaskFamily,
        task: TaskDescription,
        value: &Value,
        provenance: Provenance,
    ) -> Result<Self, ExtractError> {
        let payload = validate_record(value, family)?;
        Ok(EmbedRecord {
            family,
            task,
            payload,
            provenance,
        })
    }
}

/// GPT's best/worst verdict over a candidate list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub reason: String,
    pub best: usize,
    pub worst: usize,
}

/// A revised datum plus the reviewer's reasoning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub reason: String,
    pub revision: String,
}

fn value_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn excerpt(raw: &str) -> String {
    let mut e: String = raw.chars().take(80).collect();
    if raw.chars().count() > 80 {
        e.push_str("...");
    }
    e
}

/// Finds the outermost balanced region opened by `open` (string- and
/// escape-aware) and returns its byte range.
fn balanced_region(raw: &str, open: u8, close: u8) -> Option<Range<usize>> {
    let bytes = raw.as_bytes();
    let start = bytes.iter().position(|&b| b == open)?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            _ if b == open => depth += 1,
            _ if b == close => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(start..i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Strips surrounding prose and code fences by locating the outermost
/// balanced `{...}` region and parsing it. Returns the value and the byte
/// span used.
pub fn extract_json(raw: &str) -> Result<(Value, Range<usize>), ExtractError> {
    let span = balanced_region(raw, b'{', b'}').ok_or_else(|| ExtractError::NoJsonFound {
        excerpt: excerpt(raw),
    })?;
    match serde_json::from_str::<Value>(&raw[span.clone()]) {
        Ok(v) => Ok((v, span)),
        Err(e) => Err(ExtractError::Parse {
            position: span.start + e.column().saturating_sub(1),
            msg: e.to_string(),
        }),
    }
}

/// Same as `extract_json` but for a JSON array (brainstorm outputs).
pub fn extract_json_array(raw: &str) -> Result<(Value, Range<usize>), ExtractError> {
    let span = balanced_region(raw, b'[', b']').ok_or_else(|| ExtractError::NoJsonFound {
        excerpt: excerpt(raw),
    })?;
    match serde_json::from_str::<Value>(&raw[span.clone()]) {
        Ok(v) => Ok((v, span)),
        Err(e) => Err(ExtractError::Parse {
            position: span.start + e.column().saturating_sub(1),
            msg: e.to_string(),
        }),
    }
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<String, ExtractError> {
    let v = obj
        .get(key)
        .ok_or_else(|| ExtractError::MissingKey(key.to_string()))?;
    let s = v.as_str().ok_or_else(|| ExtractError::WrongType {
        key: key.to_string(),
        expected: "string",
    })?;
    let trimmed = s.trim();
    if trimmed.is_empty() {
        return Err(ExtractError::EmptyValue(key.to_string()));
    }
    Ok(trimmed.to_string())
}

/// Enforces the family schema: the three schema keys must exist as
/// non-empty strings and positive must differ from the hard negative
/// byte-wise. Values are whitespace-normalized; unknown keys are ignored
/// (notably the STS similarity scores are never stored).
pub fn validate_record(
    value: &Value,
    family: TaskFamily,
) -> Result<BTreeMap<String, String>, ExtractError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ExtractError::NotAnObject(value_kind(value)))?;
    let (query_key, positive_key, negative_key) = family_schema(family);
    let mut payload = BTreeMap::new();
    for key in [query_key, positive_key, negative_key] {
        payload.insert(key.to_string(), string_field(obj, key)?);
    }
    if payload[positive_key] == payload[negative_key] {
        return Err(ExtractError::DegenerateNegative);
    }
    Ok(payload)
}

fn index_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<i64, ExtractError> {
    let v = obj
        .get(key)
        .ok_or_else(|| ExtractError::MissingKey(key.to_string()))?;
    match v {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(i)
            } else if let Some(f) = n.as_f64() {
                if f.fract() == 0.0 && f.abs() < i64::MAX as f64 {
                    Ok(f as i64)
                } else {
                    Err(ExtractError::WrongType {
                        key: key.to_string(),
                        expected: "integer index",
                    })
                }
            } else {
                Err(ExtractError::WrongType {
                    key: key.to_string(),
                    expected: "integer index",
                })
            }
        }
        _ => Err(ExtractError::WrongType {
            key: key.to_string(),
            expected: "integer index",
        }),
    }
}

/// Coerces and bounds-checks best/worst and rejects best == worst.
pub fn validate_judgment(value: &Value, list_len: usize) -> Result<Judgment, ExtractError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ExtractError::NotAnObject(value_kind(value)))?;
    let best = index_field(obj, "best")?;
    let worst = index_field(obj, "worst")?;
    for idx in [best, worst] {
        if idx < 0 || idx as usize >= list_len {
            return Err(ExtractError::IndexOutOfRange {
                index: idx,
                len: list_len,
            });
        }
    }
    if best == worst {
        return Err(ExtractError::DegenerateJudgment(best as usize));
    }
    let reason = obj
        .get("reason")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    Ok(Judgment {
        reason,
        best: best as usize,
        worst: worst as usize,
    })
}

/// Pulls out the revision text. The revision may arrive as a JSON string
/// (often itself escaped JSON) or as an inline object; both are accepted,
/// objects are re-serialized compactly.
pub fn validate_revision(value: &Value) -> Result<Revision, ExtractError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ExtractError::NotAnObject(value_kind(value)))?;
    let rev = obj
        .get("revision")
        .ok_or_else(|| ExtractError::MissingKey("revision".to_string()))?;
    let revision = match rev {
        Value::String(s) => {
            let t = s.trim();
            if t.is_empty() {
                return Err(ExtractError::EmptyValue("revision".to_string()));
            }
            t.to_string()
        }
        Value::Object(_) => serde_json::to_string(rev).expect("object serializes"),
        _ => {
            return Err(ExtractError::WrongType {
                key: "revision".to_string(),
                expected: "string or object",
            })
        }
    };
    let reason = obj
        .get("reason")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    Ok(Revision { reason, revision })
}

/// Parses a revision's inner payload and re-validates it against the family
/// schema. Failures are flagged distinctly so the pipeline can keep the
/// pre-revision datum.
pub fn validate_revision_payload(
    revision: &Revision,
    family: TaskFamily,
) -> Result<BTreeMap<String, String>, ExtractError> {
    let (value, _) = extract_json(&revision.revision)
        .map_err(|e| ExtractError::InvalidRevisionPayload(Box::new(e)))?;
    validate_record(&value, family).map_err(|e| ExtractError::InvalidRevisionPayload(Box::new(e)))
}
