//! Deterministic mock backend.
//!
//! Answers are pure functions of (request content, seed, occurrence index):
//! the occurrence index counts how many times an identical request has been
//! seen, so repeated queries resample flip noise while distinct requests
//! stay independent of call interleaving. A freshly constructed mock with
//! the same seed therefore reproduces a pipeline run byte for byte.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::error::VlmError;
use crate::seed;

use super::{parse_response, ParsedPayload, ResponseSchema, VlmBackend, VlmRequest, VlmResponse};

#[derive(Debug, Clone)]
pub struct MockVlmConfig {
    pub seed: u64,
    /// Returned verbatim (pre-dedup) for condition-list requests.
    pub extraction_questions: Vec<String>,
    /// Per-question flip probability for boolean answers, indexed by the
    /// question's position in the request. Missing entries fall back to
    /// `uniform_flip`.
    pub flip_probs: Vec<f64>,
    pub uniform_flip: f64,
    /// Injected latency per query, for backend profiling tests.
    pub delay: Option<Duration>,
    /// Image ids for which the mock emits unparseable text, exercising
    /// retry and failure paths.
    pub malformed_ids: Vec<String>,
    pub caption_pool: Vec<String>,
}

impl Default for MockVlmConfig {
    fn default() -> Self {
        MockVlmConfig {
            seed: 0,
            extraction_questions: default_extraction_fixture(),
            flip_probs: Vec::new(),
            uniform_flip: 0.0,
            delay: None,
            malformed_ids: Vec::new(),
            caption_pool: default_caption_pool(),
        }
    }
}

/// The canned extraction output: twelve questions of which three collapse
/// under normalization, leaving nine.
pub fn default_extraction_fixture() -> Vec<String> {
    vec![
        "Is the scene dark?".into(),
        "Is it raining?".into(),
        "Is the image blurry?".into(),
        "is the scene dark".into(),
        "Are there vehicles present?".into(),
        "Is it raining".into(),
        "Is the road wet or reflective?".into(),
        "Are pedestrians visible?".into(),
        "Is the  image   blurry?".into(),
        "Is the sky overcast?".into(),
        "Is there fog in the scene?".into(),
        "Is the scene set at night?".into(),
    ]
}

fn default_caption_pool() -> Vec<String> {
    vec![
        "A busy urban intersection on a cloudy day with several vehicles waiting.".into(),
        "A quiet residential street at dusk, parked cars lining both sides.".into(),
        "An open rural road under bright sunlight with sparse traffic.".into(),
        "A rain-soaked avenue at night, headlights reflecting off the asphalt.".into(),
        "A foggy stretch of highway with reduced visibility and slow traffic.".into(),
        "A downtown block in the early morning, delivery vans double-parked.".into(),
        "A tree-lined boulevard in light drizzle with cyclists in a marked lane.".into(),
        "A dim parking structure entrance with a single car approaching.".into(),
    ]
}

pub struct MockVlm {
    config: MockVlmConfig,
    occurrences: Mutex<HashMap<u64, u64>>,
}

impl MockVlm {
    pub fn new(config: MockVlmConfig) -> Self {
        MockVlm { config, occurrences: Mutex::new(HashMap::new()) }
    }

    pub fn with_seed(seed_val: u64) -> Self {
        MockVlm::new(MockVlmConfig { seed: seed_val, ..MockVlmConfig::default() })
    }

    fn request_key(request: &VlmRequest) -> u64 {
        let mut acc = seed::hash_str(&request.schema.name());
        for img in &request.images {
            acc = seed::mix(acc ^ seed::hash_str(&img.id));
        }
        for q in &request.questions {
            acc = seed::mix(acc ^ seed::hash_str(q));
        }
        seed::mix(acc ^ seed::hash_str(&request.user_prompt))
    }

    fn next_occurrence(&self, key: u64) -> u64 {
        let mut map = self.occurrences.lock().expect("mock occurrence lock");
        let entry = map.entry(key).or_insert(0);
        let occ = *entry;
        *entry += 1;
        occ
    }

    /// Stable base answer for (image, question); flips resample per repeat.
    fn answer(&self, image_id: &str, question: &str, index: usize, occurrence: u64) -> bool {
        let q = seed::hash_str(question);
        let img = seed::hash_str(image_id);
        let base = seed::derive(self.config.seed, &[img, q, 0x6261]) & 1 == 1;
        let flip_prob = self
            .config
            .flip_probs
            .get(index)
            .copied()
            .unwrap_or(self.config.uniform_flip);
        if flip_prob <= 0.0 {
            return base;
        }
        let draw = seed::unit_f64(seed::derive(
            self.config.seed,
            &[img, q, occurrence, 0x666c],
        ));
        if draw < flip_prob {
            !base
        } else {
            base
        }
    }

    fn caption_for(&self, image_id: &str) -> String {
        let pool = &self.config.caption_pool;
        let idx = (seed::derive(self.config.seed, &[seed::hash_str(image_id), 0x6361]) as usize)
            % pool.len();
        pool[idx].clone()
    }

    fn raw_text(&self, request: &VlmRequest, occurrence: u64) -> String {
        let first_image = request.images.first().map(|i| i.id.as_str()).unwrap_or("");
        if self.config.malformed_ids.iter().any(|id| id == first_image) {
            return "not json at all {{{".into();
        }
        match &request.schema {
            ResponseSchema::Caption => {
                serde_json::json!({ "Conditions": self.caption_for(first_image) }).to_string()
            }
            ResponseSchema::ConditionList => {
                serde_json::json!({ "Conditions": self.config.extraction_questions }).to_string()
            }
            ResponseSchema::BooleanMap(k) => {
                let mut map = serde_json::Map::new();
                for i in 0..*k {
                    let question = request
                        .questions
                        .get(i)
                        .map(String::as_str)
                        .unwrap_or("");
                    let bit = self.answer(first_image, question, i, occurrence);
                    map.insert((i + 1).to_string(), serde_json::Value::Bool(bit));
                }
                serde_json::Value::Object(map).to_string()
            }
        }
    }
}

impl VlmBackend for MockVlm {
    fn name(&self) -> &str {
        "mock"
    }

    fn query(&self, request: &VlmRequest) -> Result<VlmResponse, VlmError> {
        let start = Instant::now();
        if let Some(delay) = self.config.delay {
            std::thread::sleep(delay);
        }
        let occurrence = self.next_occurrence(Self::request_key(request));
        let raw = self.raw_text(request, occurrence);
        let payload: ParsedPayload = parse_response(&raw, &request.schema)?;
        Ok(VlmResponse {
            raw_text: raw,
            payload,
            latency: start.elapsed(),
            attempts: 1,
        })
    }
}
