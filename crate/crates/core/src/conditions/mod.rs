//! Offline condition mining: caption a subset, extract yes/no questions,
//! deduplicate, generate per-image boolean responses, rank conditions by
//! response consistency and select the top k. All artifacts persist as JSON
//! (schemas in `docs/schemas.md`) and every step is deterministic under the
//! mock backends.

mod pipeline;
mod prompts;

pub use pipeline::{
    caption_images, dedup_conditions, extract_conditions, generate_responses,
    sample_captioning_subset, score_consistency, select_top_k, CaptionFailure, CaptionOutcome,
    GenerateOptions, ResponseMode, RetryPolicy,
};
pub use prompts::PromptTemplates;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, sha256_hex, write_json_atomic};

/// One image in a dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uri: Option<PathBuf>,
    /// Split tag such as "train", "val", "test_seen", "test_unseen".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Caption {
    pub image_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub index: usize,
    pub question: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    HumanDefined,
    Extracted,
}

/// Ordered yes/no questions. Finished sets (anything loaded from disk or
/// produced by dedup) contain no duplicates after normalization; the raw
/// pre-dedup output of extraction may.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSet {
    pub provenance: Provenance,
    pub conditions: Vec<Condition>,
}

/// Normalization used for duplicate detection: case-fold, trim, collapse
/// internal whitespace, strip terminal punctuation.
pub fn normalize_question(q: &str) -> String {
    let folded = q.to_lowercase();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(['.', '?', '!', ';', ':', ','])
        .trim_end()
        .to_string()
}

pub const DEDUP_RULE: &str =
    "case-fold, trim, collapse internal whitespace, strip terminal punctuation";

impl ConditionSet {
    /// Build a finished set: indices assigned 1..n, duplicates rejected.
    pub fn new(provenance: Provenance, questions: Vec<String>) -> Result<Self> {
        let set = Self::raw(provenance, questions);
        set.check_unique("condition set")?;
        Ok(set)
    }

    /// Build without uniqueness checks (raw extraction output).
    pub fn raw(provenance: Provenance, questions: Vec<String>) -> Self {
        ConditionSet {
            provenance,
            conditions: questions
                .into_iter()
                .enumerate()
                .map(|(i, question)| Condition { index: i + 1, question })
                .collect(),
        }
    }

    fn check_unique(&self, context: &str) -> Result<()> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for c in &self.conditions {
            let norm = normalize_question(&c.question);
            if let Some(first) = seen.get(&norm) {
                return Err(Error::schema(
                    context,
                    format!(
                        "conditions[{}] duplicates conditions[{}] after normalization ({DEDUP_RULE}): {:?}",
                        c.index, first, c.question
                    ),
                ));
            }
            seen.insert(norm, c.index);
        }
        Ok(())
    }

    fn check_indices(&self, context: &str) -> Result<()> {
        for (i, c) in self.conditions.iter().enumerate() {
            if c.index != i + 1 {
                return Err(Error::schema(
                    context,
                    format!("conditions[{i}].index: expected {}, got {}", i + 1, c.index),
                ));
            }
            if c.question.trim().is_empty() {
                return Err(Error::schema(context, format!("conditions[{i}].question is empty")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn questions(&self) -> Vec<String> {
        self.conditions.iter().map(|c| c.question.clone()).collect()
    }

    /// Content hash binding response matrices to the set they answer.
    pub fn content_hash(&self) -> String {
        let joined = self
            .conditions
            .iter()
            .map(|c| c.question.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        sha256_hex(joined.as_bytes())
    }
}

/// Per-image boolean answers; `None` marks an unknown (parse-failed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub condition_set_hash: String,
    pub rows: BTreeMap<String, Vec<Option<bool>>>,
}

impl ResponseMatrix {
    /// Fraction of images with at least one true condition.
    pub fn fraction_any_true(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let active = self
            .rows
            .values()
            .filter(|row| row.iter().any(|c| *c == Some(true)))
            .count();
        active as f64 / self.rows.len() as f64
    }

    pub fn unknown_cells(&self) -> usize {
        self.rows.values().flatten().filter(|c| c.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionScore {
    pub index: usize,
    pub consistency: f64,
}

/// Consistency of each condition over repeated runs, ranked descending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub runs: usize,
    pub probe_count: usize,
    pub scores: Vec<ConditionScore>,
}

pub fn save_conditions(path: &Path, set: &ConditionSet) -> Result<()> {
    write_json_atomic(path, set)
}

/// Load a finished condition set, enforcing indices and uniqueness.
pub fn load_conditions(path: &Path) -> Result<ConditionSet> {
    let set: ConditionSet = read_json(path)?;
    let context = path.display().to_string();
    set.check_indices(&context)?;
    set.check_unique(&context)?;
    Ok(set)
}

pub fn save_responses(path: &Path, matrix: &ResponseMatrix) -> Result<()> {
    write_json_atomic(path, matrix)
}

pub fn load_responses(path: &Path, expected: Option<&ConditionSet>) -> Result<ResponseMatrix> {
    let matrix: ResponseMatrix = read_json(path)?;
    if let Some(set) = expected {
        if matrix.condition_set_hash != set.content_hash() {
            return Err(Error::schema(
                path.display().to_string(),
                "condition_set_hash does not match the provided condition set",
            ));
        }
        for (id, row) in &matrix.rows {
            if row.len() != set.len() {
                return Err(Error::schema(
                    path.display().to_string(),
                    format!("rows[{id}]: expected {} cells, got {}", set.len(), row.len()),
                ));
            }
        }
    }
    Ok(matrix)
}

pub fn save_consistency(path: &Path, report: &ConsistencyReport) -> Result<()> {
    write_json_atomic(path, report)
}

pub fn load_consistency(path: &Path) -> Result<ConsistencyReport> {
    read_json(path)
}

/// The example condition fixtures shipped with the crate.
pub fn example_condition_fixtures() -> Vec<(&'static str, &'static str)> {
    vec![
        ("urban_driving", include_str!("../../assets/conditions/urban_driving.json")),
        ("field_targets", include_str!("../../assets/conditions/field_targets.json")),
    ]
}
