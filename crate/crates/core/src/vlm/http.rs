//! HTTP backend for chat-completions-style endpoints with image input.
//!
//! Requests carry the system prompt, the user prompt and base64 data-URL
//! image parts, with temperature pinned to 0 so repeated queries are as
//! consistent as the endpoint allows.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;

use crate::error::VlmError;

use super::{parse_response, VlmBackend, VlmRequest, VlmResponse};

/// Connection settings; see `from_env` for the environment keys.
#[derive(Debug, Clone)]
pub struct HttpVlmConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Requests per second admitted by the client-side token bucket.
    pub rate_limit_rps: Option<f64>,
}

impl HttpVlmConfig {
    /// Read configuration from `VLCF_VLM_ENDPOINT`, `VLCF_VLM_API_KEY`,
    /// `VLCF_VLM_MODEL`, `VLCF_VLM_TIMEOUT_SECS`, `VLCF_VLM_MAX_RETRIES`
    /// and `VLCF_VLM_RATE_LIMIT_RPS`.
    pub fn from_env() -> Result<Self, VlmError> {
        let endpoint = std::env::var("VLCF_VLM_ENDPOINT")
            .map_err(|_| VlmError::NotConfigured("VLCF_VLM_ENDPOINT is not set".into()))?;
        let model = std::env::var("VLCF_VLM_MODEL")
            .map_err(|_| VlmError::NotConfigured("VLCF_VLM_MODEL is not set".into()))?;
        let parse_num = |key: &str, default: f64| -> f64 {
            std::env::var(key)
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(default)
        };
        Ok(HttpVlmConfig {
            endpoint,
            api_key: std::env::var("VLCF_VLM_API_KEY").ok(),
            model,
            timeout_secs: parse_num("VLCF_VLM_TIMEOUT_SECS", 60.0) as u64,
            max_retries: parse_num("VLCF_VLM_MAX_RETRIES", 2.0) as u32,
            rate_limit_rps: std::env::var("VLCF_VLM_RATE_LIMIT_RPS")
                .ok()
                .and_then(|v| v.parse().ok()),
        })
    }
}

struct TokenBucket {
    tokens: f64,
    last_refill: Instant,
}

pub struct HttpVlm {
    config: HttpVlmConfig,
    agent: ureq::Agent,
    bucket: Mutex<TokenBucket>,
}

impl HttpVlm {
    pub fn new(config: HttpVlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpVlm {
            config,
            agent,
            bucket: Mutex::new(TokenBucket { tokens: 1.0, last_refill: Instant::now() }),
        }
    }

    fn throttle(&self) {
        let Some(rps) = self.config.rate_limit_rps else { return };
        if rps <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut bucket = self.bucket.lock().expect("rate limit lock");
                let now = Instant::now();
                let elapsed = now.duration_since(bucket.last_refill).as_secs_f64();
                bucket.tokens = (bucket.tokens + elapsed * rps).min(rps.max(1.0));
                bucket.last_refill = now;
                if bucket.tokens >= 1.0 {
                    bucket.tokens -= 1.0;
                    None
                } else {
                    Some(Duration::from_secs_f64((1.0 - bucket.tokens) / rps))
                }
            };
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d),
            }
        }
    }

    /// Build the chat-completions request body.
    fn body(&self, request: &VlmRequest) -> Result<serde_json::Value, VlmError> {
        let mut content = vec![serde_json::json!({
            "type": "text",
            "text": request.user_prompt,
        })];
        for image in &request.images {
            let path = image.path.as_ref().ok_or_else(|| {
                VlmError::NotConfigured(format!(
                    "image {} has no payload path for the HTTP backend",
                    image.id
                ))
            })?;
            let bytes = std::fs::read(path)
                .map_err(|e| VlmError::Network(format!("reading {}: {e}", path.display())))?;
            let mime = match path.extension().and_then(|e| e.to_str()) {
                Some("jpg") | Some("jpeg") => "image/jpeg",
                _ => "image/png",
            };
            let encoded = base64::engine::general_purpose::STANDARD.encode(&bytes);
            content.push(serde_json::json!({
                "type": "image_url",
                "image_url": { "url": format!("data:{mime};base64,{encoded}") },
            }));
        }
        Ok(serde_json::json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                { "role": "system", "content": request.system_prompt },
                { "role": "user", "content": content },
            ],
        }))
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<String, VlmError> {
        self.throttle();
        let mut builder = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            builder = builder.header("authorization", format!("Bearer {key}"));
        }
        let result = builder.send_json(body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err(VlmError::Timeout(Duration::from_secs(self.config.timeout_secs)))
            }
            Err(e) => return Err(VlmError::Network(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| VlmError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(VlmError::HttpStatus { status, detail: truncate(&text, 300) });
        }
        Ok(text)
    }

    /// Pull the assistant message text out of the response envelope.
    fn extract_content(text: &str) -> Result<String, VlmError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| VlmError::Network(format!("response envelope is not JSON: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| VlmError::SchemaViolation {
                schema: "chat_completions".into(),
                detail: "missing choices[0].message.content".into(),
            })
    }
}

fn truncate(s: &str, n: usize) -> String {
    if s.len() <= n {
        s.to_string()
    } else {
        let mut end = n;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

impl VlmBackend for HttpVlm {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn query(&self, request: &VlmRequest) -> Result<VlmResponse, VlmError> {
        let start = Instant::now();
        let body = self.body(request)?;
        let mut attempts = 0u32;
        let raw = loop {
            attempts += 1;
            match self.send_once(&body) {
                Ok(text) => break Self::extract_content(&text)?,
                Err(err) => {
                    let retryable = matches!(
                        err,
                        VlmError::Timeout(_)
                            | VlmError::Network(_)
                            | VlmError::HttpStatus { status: 429 | 500..=599, .. }
                    );
                    if !retryable || attempts > self.config.max_retries {
                        return Err(err);
                    }
                    std::thread::sleep(Duration::from_millis(200 * u64::from(attempts)));
                }
            }
        };
        let payload = parse_response(&raw, &request.schema)?;
        Ok(VlmResponse { raw_text: raw, payload, latency: start.elapsed(), attempts })
    }
}

#[cfg(test)]
mod tests {
    use super::super::ResponseSchema;
    use super::*;

    #[test]
    fn body_structure_matches_wire_convention() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("scene.png");
        std::fs::write(&img, b"fakepng").unwrap();
        let vlm = HttpVlm::new(HttpVlmConfig {
            endpoint: "http://localhost:1/v1/chat/completions".into(),
            api_key: Some("k".into()),
            model: "test-model".into(),
            timeout_secs: 1,
            max_retries: 0,
            rate_limit_rps: None,
        });
        let request = VlmRequest {
            system_prompt: "sys".into(),
            user_prompt: "user".into(),
            images: vec![super::super::ImageRef { id: "scene".into(), path: Some(img) }],
            schema: ResponseSchema::Caption,
            questions: Vec::new(),
        };
        let body = vlm.body(&request).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["messages"][0]["role"], "system");
        let url = body["messages"][1]["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap();
        assert!(url.starts_with("data:image/png;base64,"));
        let encoded = url.split(',').nth(1).unwrap();
        assert_eq!(
            base64::engine::general_purpose::STANDARD.decode(encoded).unwrap(),
            b"fakepng"
        );
    }

    #[test]
    fn envelope_extraction() {
        let text = r#"{"choices":[{"message":{"content":"{\"Conditions\": \"x\"}"}}]}"#;
        assert_eq!(HttpVlm::extract_content(text).unwrap(), "{\"Conditions\": \"x\"}");
        assert!(HttpVlm::extract_content("{}").is_err());
    }

    #[test]
    fn missing_image_path_is_reported() {
        let vlm = HttpVlm::new(HttpVlmConfig {
            endpoint: "http://localhost:1".into(),
            api_key: None,
            model: "m".into(),
            timeout_secs: 1,
            max_retries: 0,
            rate_limit_rps: None,
        });
        let request = VlmRequest {
            system_prompt: String::new(),
            user_prompt: String::new(),
            images: vec![super::super::ImageRef::id_only("ghost")],
            schema: ResponseSchema::Caption,
            questions: Vec::new(),
        };
        assert!(matches!(vlm.body(&request), Err(VlmError::NotConfigured(_))));
    }
}
