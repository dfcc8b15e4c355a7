//! The mining operations themselves.

use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, VlmError};
use crate::seed;
use crate::vlm::{
    ImageRef, ParsedPayload, ResponseSchema, VlmBackend, VlmRequest, VlmResponse,
};

use super::prompts::PromptTemplates;
use super::{
    Caption, ConditionScore, ConditionSet, ConsistencyReport, ImageRecord, Provenance,
    ResponseMatrix,
};

/// Retry with exponential backoff. Attempts counts total tries.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, backoff: Duration::from_millis(250) }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; used throughout the test suites.
    pub fn immediate() -> Self {
        RetryPolicy { attempts: 3, backoff: Duration::ZERO }
    }
}

fn is_unreachable(err: &VlmError) -> bool {
    matches!(
        err,
        VlmError::Network(_)
            | VlmError::Timeout(_)
            | VlmError::HttpStatus { .. }
            | VlmError::NotConfigured(_)
    )
}

fn query_with_retry(
    vlm: &dyn VlmBackend,
    request: &VlmRequest,
    policy: RetryPolicy,
) -> Result<VlmResponse, VlmError> {
    let mut last = None;
    for attempt in 0..policy.attempts.max(1) {
        if attempt > 0 && !policy.backoff.is_zero() {
            std::thread::sleep(policy.backoff * 2u32.pow(attempt - 1));
        }
        match vlm.query(request) {
            Ok(mut response) => {
                response.attempts = attempt + 1;
                return Ok(response);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn image_ref(record: &ImageRecord) -> ImageRef {
    ImageRef { id: record.id.clone(), path: record.uri.clone() }
}

/// Pick `m` distinct records for captioning, deterministic under the seed.
/// The result preserves manifest order.
pub fn sample_captioning_subset(
    records: &[ImageRecord],
    m: usize,
    seed_val: u64,
) -> Result<Vec<ImageRecord>> {
    let n = records.len();
    if m < 1 || m > n {
        return Err(Error::InvalidArgument(format!(
            "captioning subset size {m} outside 1..={n}"
        )));
    }
    let mut rng = seed::rng(seed_val, &[seed::hash_str("captioning_subset")]);
    let mut picked = rand::seq::index::sample(&mut rng, n, m).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| records[i].clone()).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionFailure {
    pub image_id: String,
    pub error: String,
}

/// Captions plus the per-image failures that did not stop the run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CaptionOutcome {
    pub captions: Vec<Caption>,
    pub failures: Vec<CaptionFailure>,
}

/// Caption every record; per-image failures are recorded, never fatal.
pub fn caption_images(
    subset: &[ImageRecord],
    vlm: &dyn VlmBackend,
    templates: &PromptTemplates,
    retry: RetryPolicy,
) -> CaptionOutcome {
    let mut outcome = CaptionOutcome::default();
    for record in subset {
        let request = VlmRequest {
            system_prompt: templates.caption_system.clone(),
            user_prompt: templates.caption_user.clone(),
            images: vec![image_ref(record)],
            schema: ResponseSchema::Caption,
            questions: Vec::new(),
        };
        match query_with_retry(vlm, &request, retry) {
            Ok(response) => {
                if let ParsedPayload::Caption(text) = response.payload {
                    outcome.captions.push(Caption { image_id: record.id.clone(), text });
                }
            }
            Err(e) => {
                log::warn!("captioning failed for {}: {e}", record.id);
                outcome
                    .failures
                    .push(CaptionFailure { image_id: record.id.clone(), error: e.to_string() });
            }
        }
    }
    outcome
}

/// One extraction query over all image–caption pairs; returns the raw
/// (pre-dedup) condition set.
pub fn extract_conditions(
    pairs: &[(ImageRecord, Caption)],
    vlm: &dyn VlmBackend,
    templates: &PromptTemplates,
    retry: RetryPolicy,
) -> Result<ConditionSet> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "extraction requires at least one image-caption pair".into(),
        ));
    }
    let captions: Vec<String> = pairs.iter().map(|(_, c)| c.text.clone()).collect();
    let request = VlmRequest {
        system_prompt: templates.extract_system.clone(),
        user_prompt: templates.render_extraction_user(&captions),
        images: pairs.iter().map(|(r, _)| image_ref(r)).collect(),
        schema: ResponseSchema::ConditionList,
        questions: Vec::new(),
    };
    let response = query_with_retry(vlm, &request, retry)?;
    match response.payload {
        ParsedPayload::ConditionList(questions) => {
            Ok(ConditionSet::raw(Provenance::Extracted, questions))
        }
        other => Err(Error::InvalidArgument(format!(
            "extraction returned unexpected payload {other:?}"
        ))),
    }
}

/// Remove normalized exact-match duplicates, keeping first occurrences and
/// reassigning contiguous indices.
pub fn dedup_conditions(raw: &ConditionSet) -> ConditionSet {
    let mut seen = std::collections::BTreeSet::new();
    let mut questions = Vec::new();
    for c in &raw.conditions {
        if seen.insert(super::normalize_question(&c.question)) {
            questions.push(c.question.clone());
        }
    }
    ConditionSet::raw(raw.provenance, questions)
}

/// Ask all questions in one prompt per image (the default), or one question
/// per prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseMode {
    Batched,
    PerCondition,
}

#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    /// Partial-progress file enabling resume after backend outages.
    pub checkpoint: Option<PathBuf>,
    /// Concurrent in-flight queries; 0 or 1 runs sequentially.
    pub concurrency: usize,
}

fn batched_row(
    record: &ImageRecord,
    questions: &[String],
    vlm: &dyn VlmBackend,
    templates: &PromptTemplates,
    retry: RetryPolicy,
) -> Result<Vec<Option<bool>>, VlmError> {
    let request = VlmRequest {
        system_prompt: templates.generate_system.clone(),
        user_prompt: templates.render_generation_user(questions),
        images: vec![image_ref(record)],
        schema: ResponseSchema::BooleanMap(questions.len()),
        questions: questions.to_vec(),
    };
    match query_with_retry(vlm, &request, retry) {
        Ok(response) => match response.payload {
            ParsedPayload::BooleanMap(bits) => Ok(bits.into_iter().map(Some).collect()),
            _ => Ok(vec![None; questions.len()]),
        },
        Err(e) if is_unreachable(&e) => Err(e),
        Err(e) => {
            log::warn!("responses unparseable for {}: {e}; row marked unknown", record.id);
            Ok(vec![None; questions.len()])
        }
    }
}

fn per_condition_row(
    record: &ImageRecord,
    questions: &[String],
    vlm: &dyn VlmBackend,
    templates: &PromptTemplates,
    retry: RetryPolicy,
) -> Result<Vec<Option<bool>>, VlmError> {
    let mut row = Vec::with_capacity(questions.len());
    for q in questions {
        let single = std::slice::from_ref(q);
        let request = VlmRequest {
            system_prompt: templates.generate_system.clone(),
            user_prompt: templates.render_generation_user(single),
            images: vec![image_ref(record)],
            schema: ResponseSchema::BooleanMap(1),
            questions: single.to_vec(),
        };
        match query_with_retry(vlm, &request, retry) {
            Ok(response) => match response.payload {
                ParsedPayload::BooleanMap(bits) => row.push(Some(bits[0])),
                _ => row.push(None),
            },
            Err(e) if is_unreachable(&e) => return Err(e),
            Err(_) => row.push(None),
        }
    }
    Ok(row)
}

/// Generate the full response matrix over a manifest.
///
/// Parse failures become unknown cells and never abort; backend outages
/// checkpoint progress and return the error so the run can resume.
pub fn generate_responses(
    records: &[ImageRecord],
    conditions: &ConditionSet,
    vlm: &dyn VlmBackend,
    templates: &PromptTemplates,
    mode: ResponseMode,
    retry: RetryPolicy,
    options: &GenerateOptions,
) -> Result<ResponseMatrix> {
    if conditions.is_empty() {
        return Err(Error::InvalidArgument("condition set is empty".into()));
    }
    let questions = conditions.questions();
    let hash = conditions.content_hash();

    let mut matrix = ResponseMatrix { condition_set_hash: hash.clone(), rows: Default::default() };
    if let Some(path) = &options.checkpoint {
        if path.exists() {
            let prior = super::load_responses(path, Some(conditions))?;
            log::info!("resuming responses from {} ({} rows)", path.display(), prior.rows.len());
            matrix.rows = prior.rows;
        }
    }

    let pending: Vec<&ImageRecord> = records
        .iter()
        .filter(|r| !matrix.rows.contains_key(&r.id))
        .collect();

    let run_one = |record: &ImageRecord| -> (String, Result<Vec<Option<bool>>, VlmError>) {
        let row = match mode {
            ResponseMode::Batched => batched_row(record, &questions, vlm, templates, retry),
            ResponseMode::PerCondition => {
                per_condition_row(record, &questions, vlm, templates, retry)
            }
        };
        (record.id.clone(), row)
    };

    let results: Vec<(String, Result<Vec<Option<bool>>, VlmError>)> =
        if options.concurrency > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(options.concurrency)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            pool.install(|| pending.par_iter().map(|r| run_one(r)).collect())
        } else {
            pending.iter().map(|r| run_one(r)).collect()
        };

    let mut outage: Option<VlmError> = None;
    for (id, row) in results {
        match row {
            Ok(cells) => {
                matrix.rows.insert(id, cells);
            }
            Err(e) => {
                if outage.is_none() {
                    outage = Some(e);
                }
            }
        }
    }

    if let Some(path) = &options.checkpoint {
        super::save_responses(path, &matrix)?;
    }
    match outage {
        Some(e) => Err(Error::Vlm(e)),
        None => Ok(matrix),
    }
}

/// Consistency of each condition over `runs` repeated response runs on a
/// probe subset: majority-vote agreement averaged over probe images.
pub fn score_consistency(
    probe: &[ImageRecord],
    conditions: &ConditionSet,
    vlm: &dyn VlmBackend,
    templates: &PromptTemplates,
    runs: usize,
    retry: RetryPolicy,
) -> Result<ConsistencyReport> {
    if runs < 2 {
        return Err(Error::InvalidArgument(format!("consistency needs runs >= 2, got {runs}")));
    }
    if probe.is_empty() {
        return Err(Error::InvalidArgument("consistency probe subset is empty".into()));
    }
    let k = conditions.len();
    let mut matrices = Vec::with_capacity(runs);
    for _ in 0..runs {
        matrices.push(generate_responses(
            probe,
            conditions,
            vlm,
            templates,
            ResponseMode::Batched,
            retry,
            &GenerateOptions::default(),
        )?);
    }

    let mut scores = Vec::with_capacity(k);
    for ci in 0..k {
        let mut total = 0.0;
        for record in probe {
            // Unknown cells vote false, matching their downstream encoding.
            let trues = matrices
                .iter()
                .filter(|m| m.rows.get(&record.id).and_then(|row| row[ci]) == Some(true))
                .count();
            let majority = trues.max(runs - trues);
            total += majority as f64 / runs as f64;
        }
        scores.push(ConditionScore { index: ci + 1, consistency: total / probe.len() as f64 });
    }
    scores.sort_by(|a, b| {
        b.consistency
            .partial_cmp(&a.consistency)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    Ok(ConsistencyReport { runs, probe_count: probe.len(), scores })
}

/// Keep the k most consistent conditions; ties break on the original index.
pub fn select_top_k(
    report: &ConsistencyReport,
    conditions: &ConditionSet,
    k: usize,
) -> Result<ConditionSet> {
    if k < 1 || k > conditions.len() {
        return Err(Error::InvalidArgument(format!(
            "top-k {k} outside 1..={}",
            conditions.len()
        )));
    }
    let mut questions = Vec::with_capacity(k);
    for score in report.scores.iter().take(k) {
        let condition = conditions
            .conditions
            .iter()
            .find(|c| c.index == score.index)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "consistency report references unknown condition index {}",
                    score.index
                ))
            })?;
        questions.push(condition.question.clone());
    }
    ConditionSet::new(conditions.provenance, questions)
}
