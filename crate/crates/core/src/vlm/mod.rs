//! Vision-language backends behind one trait: a deterministic mock for
//! tests and offline pipelines, a configurable-noise mock for consistency
//! experiments, and an HTTP client for chat-completions-style endpoints.

mod http;
mod mock;

pub use http::{HttpVlm, HttpVlmConfig};
pub use mock::{MockVlm, MockVlmConfig};

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, VlmError};

/// What shape of payload a request expects back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseSchema {
    /// A JSON object whose "Conditions" field is a free-form description.
    Caption,
    /// A JSON object whose "Conditions" field is an array of questions.
    ConditionList,
    /// A JSON object with exactly the keys "1".."K" mapped to booleans.
    BooleanMap(usize),
}

impl ResponseSchema {
    pub fn name(&self) -> String {
        match self {
            ResponseSchema::Caption => "caption".into(),
            ResponseSchema::ConditionList => "condition_list".into(),
            ResponseSchema::BooleanMap(k) => format!("boolean_map({k})"),
        }
    }
}

/// An image referenced by a request. The id is always present; the path is
/// needed only by backends that read real payload bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl ImageRef {
    pub fn id_only(id: impl Into<String>) -> Self {
        ImageRef { id: id.into(), path: None }
    }
}

#[derive(Debug, Clone)]
pub struct VlmRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub images: Vec<ImageRef>,
    pub schema: ResponseSchema,
    /// Structured copy of the numbered questions already rendered into
    /// `user_prompt`; lets offline backends answer without text scraping.
    pub questions: Vec<String>,
}

impl VlmRequest {
    pub fn validate(&self) -> Result<()> {
        if let ResponseSchema::BooleanMap(k) = self.schema {
            if k == 0 {
                return Err(Error::InvalidArgument(
                    "boolean_map schema requires at least one question".into(),
                ));
            }
            if !self.questions.is_empty() && self.questions.len() != k {
                return Err(Error::InvalidArgument(format!(
                    "schema expects {k} questions, request carries {}",
                    self.questions.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedPayload {
    Caption(String),
    ConditionList(Vec<String>),
    BooleanMap(Vec<bool>),
}

#[derive(Debug, Clone)]
pub struct VlmResponse {
    pub raw_text: String,
    pub payload: ParsedPayload,
    pub latency: Duration,
    pub attempts: u32,
}

/// A queryable vision-language backend. Implementations are safe for
/// concurrent use.
pub trait VlmBackend: Send + Sync {
    fn name(&self) -> &str;
    fn query(&self, request: &VlmRequest) -> Result<VlmResponse, VlmError>;
}

/// Strip markdown code fences some models wrap around JSON output.
fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    let t = t.strip_suffix("```").unwrap_or(t);
    t.trim()
}

/// Parse raw model text against the expected schema.
pub fn parse_response(raw: &str, schema: &ResponseSchema) -> Result<ParsedPayload, VlmError> {
    let violation = |detail: String| VlmError::SchemaViolation { schema: schema.name(), detail };
    let value: serde_json::Value = serde_json::from_str(strip_fences(raw))
        .map_err(|e| violation(format!("invalid JSON: {e}")))?;
    match schema {
        ResponseSchema::Caption => {
            let text = value
                .get("Conditions")
                .and_then(|v| v.as_str())
                .ok_or_else(|| violation("missing string field \"Conditions\"".into()))?;
            if text.trim().is_empty() {
                return Err(violation("empty caption".into()));
            }
            Ok(ParsedPayload::Caption(text.to_string()))
        }
        ResponseSchema::ConditionList => {
            let arr = value
                .get("Conditions")
                .and_then(|v| v.as_array())
                .ok_or_else(|| violation("missing array field \"Conditions\"".into()))?;
            let mut questions = Vec::with_capacity(arr.len());
            for (i, item) in arr.iter().enumerate() {
                let q = item
                    .as_str()
                    .ok_or_else(|| violation(format!("condition {i} is not a string")))?;
                questions.push(q.to_string());
            }
            if questions.is_empty() {
                return Err(violation("empty condition list".into()));
            }
            Ok(ParsedPayload::ConditionList(questions))
        }
        ResponseSchema::BooleanMap(k) => {
            let obj = value
                .as_object()
                .ok_or_else(|| violation("response is not a JSON object".into()))?;
            if obj.len() != *k {
                return Err(violation(format!("expected exactly {k} keys, got {}", obj.len())));
            }
            let mut bits = Vec::with_capacity(*k);
            for i in 1..=*k {
                let key = i.to_string();
                let v = obj
                    .get(&key)
                    .ok_or_else(|| violation(format!("missing key \"{key}\"")))?;
                let bit = match v {
                    serde_json::Value::Bool(b) => *b,
                    serde_json::Value::String(s) => match s.to_ascii_lowercase().as_str() {
                        "true" => true,
                        "false" => false,
                        other => {
                            return Err(violation(format!(
                                "key \"{key}\": expected True or False, got {other:?}"
                            )))
                        }
                    },
                    other => {
                        return Err(violation(format!(
                            "key \"{key}\": expected boolean, got {other}"
                        )))
                    }
                };
                bits.push(bit);
            }
            Ok(ParsedPayload::BooleanMap(bits))
        }
    }
}

/// Measured characteristics of a backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    /// Free-form parameter-count note, e.g. "1.9B".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_note: Option<String>,
    pub secs_per_image: f64,
}

/// Time captioning queries over a set of images.
pub fn benchmark_backend(
    backend: &dyn VlmBackend,
    images: &[ImageRef],
    system_prompt: &str,
    user_prompt: &str,
) -> Result<BackendProfile> {
    if images.is_empty() {
        return Err(Error::InvalidArgument(
            "benchmark requires at least one image".into(),
        ));
    }
    let start = Instant::now();
    for image in images {
        let request = VlmRequest {
            system_prompt: system_prompt.to_string(),
            user_prompt: user_prompt.to_string(),
            images: vec![image.clone()],
            schema: ResponseSchema::Caption,
            questions: Vec::new(),
        };
        backend.query(&request)?;
    }
    let secs = start.elapsed().as_secs_f64() / images.len() as f64;
    Ok(BackendProfile {
        name: backend.name().to_string(),
        param_note: None,
        secs_per_image: secs.max(f64::EPSILON),
    })
}

#[cfg(test)]
mod tests;
