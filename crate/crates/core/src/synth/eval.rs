//! Evaluation of a trained detector on a split.

use crate::error::{Error, Result};
use crate::metrics::{evaluate_detections, EvalReport, ImageDetections, ImageGroundTruth};

use super::detector::{DecodeConfig, DetectorParams};
use super::storage::SceneStore;
use super::train::{detect_scenes, ConditionsSource};

/// Run the detector over `ids` and score against ground truth.
pub fn evaluate_detector(
    store: &SceneStore,
    ids: &[String],
    params: &DetectorParams,
    conditions: &ConditionsSource,
    decode: &DecodeConfig,
) -> Result<EvalReport> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("evaluation split is empty".into()));
    }
    let detections = detect_scenes(store, ids, params, conditions, decode)?;
    let dets: Vec<ImageDetections> = detections
        .into_iter()
        .map(|(image_id, detections)| ImageDetections { image_id, detections })
        .collect();
    let gts: Vec<ImageGroundTruth> = ids
        .iter()
        .map(|id| {
            let scene = store.get(id)?;
            Ok(ImageGroundTruth { image_id: id.clone(), boxes: scene.boxes.clone() })
        })
        .collect::<Result<_>>()?;
    let classes: Vec<usize> = (0..store.manifest.spec.n_classes).collect();
    evaluate_detections(&dets, &gts, &classes)
}
