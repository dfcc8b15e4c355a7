//! A backend that answers condition questions from the latent flags of
//! synthetic scenes, with optional per-question flip noise. It stands in
//! for a real vision-language model over the benchmark: question quality
//! and backend noise become controllable experiment knobs.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use crate::conditions::{normalize_question, ConditionSet, Provenance};
use crate::error::VlmError;
use crate::seed;
use crate::vlm::{parse_response, ResponseSchema, VlmBackend, VlmRequest, VlmResponse};

use super::scene::{DatasetManifest, LatentConditions};

/// What a question is about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionBinding {
    Dark,
    Rain,
    Blur,
    Nuisance(usize),
    /// True when any of dark/blur degrade the camera-like modality.
    CameraDegraded,
    /// True when no degradation is active.
    Clean,
    /// Fixed truth value; flips turn it into pure noise.
    Const(bool),
}

impl ConditionBinding {
    pub fn answer(&self, latent: &LatentConditions) -> bool {
        match self {
            ConditionBinding::Dark => latent.dark,
            ConditionBinding::Rain => latent.rain,
            ConditionBinding::Blur => latent.blur,
            ConditionBinding::Nuisance(i) => latent.nuisance.get(*i).copied().unwrap_or(false),
            ConditionBinding::CameraDegraded => latent.dark || latent.blur,
            ConditionBinding::Clean => !(latent.dark || latent.rain || latent.blur),
            ConditionBinding::Const(v) => *v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundCondition {
    pub question: String,
    pub binding: ConditionBinding,
    pub flip_prob: f64,
}

/// The question set a synthetic-benchmark backend can answer.
#[derive(Debug, Clone, Default)]
pub struct SyntheticConditionSpec {
    pub entries: Vec<BoundCondition>,
}

impl SyntheticConditionSpec {
    /// Six informative questions grounded in the latent flags: the three
    /// atomic degradations plus a paraphrase of each. Atomic bindings keep
    /// condition vectors additive under unseen flag combinations.
    pub fn informative(flip: f64) -> Self {
        let bind = |question: &str, binding: ConditionBinding| BoundCondition {
            question: question.into(),
            binding,
            flip_prob: flip,
        };
        SyntheticConditionSpec {
            entries: vec![
                bind("Is the scene dark?", ConditionBinding::Dark),
                bind("Is it raining?", ConditionBinding::Rain),
                bind("Is the camera image blurred?", ConditionBinding::Blur),
                bind("Is the ambient light very low?", ConditionBinding::Dark),
                bind("Is precipitation visible in the scene?", ConditionBinding::Rain),
                bind("Is the camera focus smeared?", ConditionBinding::Blur),
            ],
        }
    }

    /// The informative six plus `n_noisy` uninformative questions answered
    /// with the given flip probability.
    pub fn with_noisy_tail(n_noisy: usize, noisy_flip: f64) -> Self {
        let mut spec = Self::informative(0.0);
        let noise_questions = [
            "Is there fog on the horizon?",
            "Is the sun directly visible?",
            "Are shadows strongly pronounced?",
            "Is the scene windy?",
            "Are there birds in the sky?",
            "Is the ground uneven?",
        ];
        for i in 0..n_noisy {
            spec.entries.push(BoundCondition {
                question: noise_questions[i % noise_questions.len()].into(),
                binding: ConditionBinding::Const(false),
                flip_prob: noisy_flip,
            });
        }
        spec
    }

    pub fn condition_set(&self) -> ConditionSet {
        ConditionSet::new(
            Provenance::Extracted,
            self.entries.iter().map(|e| e.question.clone()).collect(),
        )
        .expect("synthetic questions are unique")
    }

    pub fn questions(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.question.clone()).collect()
    }
}

/// The oracle backend itself.
pub struct SyntheticOracleVlm {
    seed: u64,
    latents: HashMap<String, LatentConditions>,
    bindings: HashMap<String, (ConditionBinding, f64)>,
    extraction: Vec<String>,
    occurrences: Mutex<HashMap<u64, u64>>,
}

impl SyntheticOracleVlm {
    pub fn new(manifest: &DatasetManifest, spec: &SyntheticConditionSpec, seed_val: u64) -> Self {
        SyntheticOracleVlm {
            seed: seed_val,
            latents: manifest
                .scenes
                .iter()
                .map(|s| (s.id.clone(), s.latent.clone()))
                .collect(),
            bindings: spec
                .entries
                .iter()
                .map(|e| (normalize_question(&e.question), (e.binding.clone(), e.flip_prob)))
                .collect(),
            extraction: spec.questions(),
            occurrences: Mutex::new(HashMap::new()),
        }
    }

    fn occurrence(&self, key: u64) -> u64 {
        let mut map = self.occurrences.lock().expect("oracle occurrence lock");
        let slot = map.entry(key).or_insert(0);
        let occ = *slot;
        *slot += 1;
        occ
    }

    fn answer(&self, image_id: &str, question: &str) -> Result<bool, VlmError> {
        let latent = self.latents.get(image_id).ok_or_else(|| VlmError::SchemaViolation {
            schema: "oracle".into(),
            detail: format!("unknown scene id {image_id}"),
        })?;
        let (binding, flip) = self
            .bindings
            .get(&normalize_question(question))
            .ok_or_else(|| VlmError::SchemaViolation {
                schema: "oracle".into(),
                detail: format!("unbound question {question:?}"),
            })?;
        let base = binding.answer(latent);
        if *flip <= 0.0 {
            return Ok(base);
        }
        let key = seed::derive(
            self.seed,
            &[seed::hash_str(image_id), seed::hash_str(question), 0x6f63],
        );
        let occ = self.occurrence(key);
        let draw = seed::unit_f64(seed::derive(self.seed, &[key, occ, 0x666c]));
        Ok(if draw < *flip { !base } else { base })
    }

    fn caption_for(&self, image_id: &str) -> String {
        match self.latents.get(image_id) {
            Some(latent) => {
                let mut parts = Vec::new();
                if latent.dark {
                    parts.push("very dark");
                }
                if latent.rain {
                    parts.push("rainy");
                }
                if latent.blur {
                    parts.push("blurred");
                }
                if parts.is_empty() {
                    "A clear synthetic scene with several marked objects.".to_string()
                } else {
                    format!("A {} synthetic scene with several marked objects.", parts.join(", "))
                }
            }
            None => "An unknown scene.".to_string(),
        }
    }
}

impl VlmBackend for SyntheticOracleVlm {
    fn name(&self) -> &str {
        "synthetic-oracle"
    }

    fn query(&self, request: &VlmRequest) -> Result<VlmResponse, VlmError> {
        let start = Instant::now();
        let first = request.images.first().map(|i| i.id.as_str()).unwrap_or("");
        let raw = match &request.schema {
            ResponseSchema::Caption => {
                serde_json::json!({ "Conditions": self.caption_for(first) }).to_string()
            }
            ResponseSchema::ConditionList => {
                serde_json::json!({ "Conditions": self.extraction }).to_string()
            }
            ResponseSchema::BooleanMap(k) => {
                let mut map = serde_json::Map::new();
                for i in 0..*k {
                    let question = request.questions.get(i).map(String::as_str).unwrap_or("");
                    let bit = self.answer(first, question)?;
                    map.insert((i + 1).to_string(), serde_json::Value::Bool(bit));
                }
                serde_json::Value::Object(map).to_string()
            }
        };
        let payload = parse_response(&raw, &request.schema)?;
        Ok(VlmResponse { raw_text: raw, payload, latency: start.elapsed(), attempts: 1 })
    }
}
