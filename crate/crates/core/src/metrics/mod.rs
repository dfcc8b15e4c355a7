//! Detection metrics: IoU, greedy score-ordered matching, 101-point
//! interpolated average precision, mAP over the 0.5:0.05:0.95 IoU sweep,
//! and mAR with a 100-detection-per-image cap.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in grid units, `min` strictly below `max` on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Box2D { x_min, y_min, x_max, y_max }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max
            && self.y_min < self.y_max
            && [self.x_min, self.y_min, self.x_max, self.y_max]
                .iter()
                .all(|v| v.is_finite())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &Box2D, b: &Box2D) -> Result<f64> {
    if !a.is_valid() || !b.is_valid() {
        return Err(Error::InvalidArgument(format!(
            "degenerate box in iou: {a:?} vs {b:?}"
        )));
    }
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

/// One scored detection on one image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub bbox: Box2D,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub class_id: usize,
    pub bbox: Box2D,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageGroundTruth {
    pub image_id: String,
    pub boxes: Vec<GroundTruthBox>,
}

/// Outcome for one detection in score order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetMatch {
    /// Index into the input slice.
    pub det_index: usize,
    pub score: f64,
    pub tp: bool,
    pub gt_index: Option<usize>,
}

/// Greedy single-class matching: detections in descending score order each
/// claim the highest-IoU unmatched ground truth at or above the threshold.
pub fn match_detections(
    scored: &[(f64, Box2D)],
    gts: &[Box2D],
    iou_thresh: f64,
) -> Result<Vec<DetMatch>> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&i, &j| {
        scored[j].0
            .partial_cmp(&scored[i].0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(scored.len());
    for &di in &order {
        let (score, dbox) = scored[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gbox) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let v = iou(&dbox, gbox)?;
            if v >= iou_thresh && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                out.push(DetMatch { det_index: di, score, tp: true, gt_index: Some(gi) });
            }
            None => out.push(DetMatch { det_index: di, score, tp: false, gt_index: None }),
        }
    }
    Ok(out)
}

/// 101-point interpolated average precision.
///
/// `labeled` pairs a score with a true/false-positive flag; order does not
/// matter. Returns `None` (excluded from class means) when there are neither
/// ground truths nor detections, and 0 when detections exist with no GT.
pub fn average_precision(labeled: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if labeled.is_empty() { None } else { Some(0.0) };
    }
    if labeled.is_empty() {
        return Some(0.0);
    }
    let mut sorted: Vec<(f64, bool)> = labeled.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut precisions = Vec::with_capacity(sorted.len());
    let mut recalls = Vec::with_capacity(sorted.len());
    let mut tp = 0usize;
    for (rank, (_, is_tp)) in sorted.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (rank + 1) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    // Precision envelope: best precision achievable at recall >= r.
    let mut envelope = precisions.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut acc = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        // First index with recall >= r; envelope is non-increasing past it.
        let p = recalls
            .iter()
            .position(|&rec| rec >= r - 1e-12)
            .map_or(0.0, |idx| envelope[idx]);
        acc += p;
    }
    Some(acc / 101.0)
}

/// The standard IoU threshold sweep 0.5, 0.55, ..., 0.95.
pub fn standard_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    /// AP per IoU threshold; `None` when the class is absent from both GT
    /// and detections at that threshold.
    pub ap_by_threshold: Vec<Option<f64>>,
    pub ap_50_95: Option<f64>,
    pub ap_50: Option<f64>,
    pub ar_100: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_thresholds: Vec<f64>,
    pub per_class: Vec<ClassReport>,
    /// Unweighted class means.
    pub map_50_95: f64,
    pub map_50: f64,
    pub mar_100: f64,
}

impl EvalReport {
    /// One row per class plus an overall row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,ap_50_95,ap_50,ar_100\n");
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for c in &self.per_class {
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.class_id,
                fmt(c.ap_50_95),
                fmt(c.ap_50),
                fmt(c.ar_100)
            ));
        }
        out.push_str(&format!(
            "overall,{:.6},{:.6},{:.6}\n",
            self.map_50_95, self.map_50, self.mar_100
        ));
        out
    }
}

/// Cap for the recall metric: at most this many detections per image.
pub const MAR_DETECTION_CAP: usize = 100;

/// Evaluate pooled detections against ground truth over a class universe.
///
/// Classes absent from both GT and detections are excluded from the class
/// means; classes with detections but no GT score 0 AP. The detection cap
/// applies only to the recall metric.
pub fn evaluate_detections(
    detections: &[ImageDetections],
    ground_truth: &[ImageGroundTruth],
    classes: &[usize],
) -> Result<EvalReport> {
    if ground_truth.is_empty() {
        return Err(Error::InvalidArgument(
            "evaluation requires at least one image with ground truth records".into(),
        ));
    }
    let total_gt: usize = ground_truth.iter().map(|g| g.boxes.len()).sum();
    if total_gt == 0 {
        return Err(Error::InvalidArgument(
            "evaluation requires at least one ground-truth box".into(),
        ));
    }

    let mut det_map: BTreeMap<&str, &ImageDetections> = BTreeMap::new();
    for d in detections {
        det_map.insert(d.image_id.as_str(), d);
    }

    let thresholds = standard_iou_thresholds();
    let mut per_class = Vec::with_capacity(classes.len());

    // Pre-split per image and class; image order never matters because all
    // pooled rankings tie-break on (score, image_id, index).
    for &class_id in classes {
        let mut n_gt_total = 0usize;
        let mut any_det = false;
        // (threshold index) -> labeled detections pooled over images.
        let mut pooled: Vec<Vec<(f64, bool, String, usize)>> =
            vec![Vec::new(); thresholds.len()];
        let mut matched_capped = vec![0usize; thresholds.len()];

        for gt_img in ground_truth {
            let gts: Vec<Box2D> = gt_img
                .boxes
                .iter()
                .filter(|b| b.class_id == class_id)
                .map(|b| b.bbox)
                .collect();
            n_gt_total += gts.len();

            let dets_all = det_map.get(gt_img.image_id.as_str());
            let scored: Vec<(f64, Box2D)> = dets_all
                .map(|d| {
                    d.detections
                        .iter()
                        .filter(|det| det.class_id == class_id)
                        .map(|det| (det.score, det.bbox))
                        .collect()
                })
                .unwrap_or_default();
            if !scored.is_empty() {
                any_det = true;
            }

            // Recall path: the cap ranks detections of all classes together.
            let capped: Vec<(f64, Box2D)> = dets_all
                .map(|d| {
                    let mut ranked: Vec<(f64, usize)> = d
                        .detections
                        .iter()
                        .enumerate()
                        .map(|(i, det)| (det.score, i))
                        .collect();
                    ranked.sort_by(|a, b| {
                        b.0.partial_cmp(&a.0)
                            .unwrap_or(std::cmp::Ordering::Equal)
                            .then(a.1.cmp(&b.1))
                    });
                    ranked
                        .into_iter()
                        .take(MAR_DETECTION_CAP)
                        .filter(|&(_, i)| d.detections[i].class_id == class_id)
                        .map(|(s, i)| (s, d.detections[i].bbox))
                        .collect()
                })
                .unwrap_or_default();

            for (ti, &t) in thresholds.iter().enumerate() {
                for m in match_detections(&scored, &gts, t)? {
                    pooled[ti].push((m.score, m.tp, gt_img.image_id.clone(), m.det_index));
                }
                matched_capped[ti] += match_detections(&capped, &gts, t)?
                    .iter()
                    .filter(|m| m.tp)
                    .count();
            }
        }

        let ap_by_threshold: Vec<Option<f64>> = pooled
            .iter()
            .map(|labels| {
                let mut l: Vec<(f64, bool, String, usize)> = labels.clone();
                l.sort_by(|a, b| {
                    b.0.partial_cmp(&a.0)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.2.cmp(&b.2))
                        .then(a.3.cmp(&b.3))
                });
                let flat: Vec<(f64, bool)> = l.iter().map(|x| (x.0, x.1)).collect();
                average_precision(&flat, n_gt_total)
            })
            .collect();

        let some_aps: Vec<f64> = ap_by_threshold.iter().flatten().copied().collect();
        let ap_50_95 = if some_aps.is_empty() {
            None
        } else {
            Some(some_aps.iter().sum::<f64>() / some_aps.len() as f64)
        };
        let ap_50 = ap_by_threshold[0];
        let ar_100 = if n_gt_total == 0 {
            None
        } else {
            Some(
                matched_capped
                    .iter()
                    .map(|&m| m as f64 / n_gt_total as f64)
                    .sum::<f64>()
                    / thresholds.len() as f64,
            )
        };

        if n_gt_total == 0 && !any_det {
            per_class.push(ClassReport {
                class_id,
                ap_by_threshold: vec![None; thresholds.len()],
                ap_50_95: None,
                ap_50: None,
                ar_100: None,
            });
        } else {
            per_class.push(ClassReport { class_id, ap_by_threshold, ap_50_95, ap_50, ar_100 });
        }
    }

    let mean = |items: Vec<f64>| -> f64 {
        if items.is_empty() {
            0.0
        } else {
            items.iter().sum::<f64>() / items.len() as f64
        }
    };
    let map_50_95 = mean(per_class.iter().filter_map(|c| c.ap_50_95).collect());
    let map_50 = mean(per_class.iter().filter_map(|c| c.ap_50).collect());
    let mar_100 = mean(per_class.iter().filter_map(|c| c.ar_100).collect());

    Ok(EvalReport { iou_thresholds: thresholds, per_class, map_50_95, map_50, mar_100 })
}
