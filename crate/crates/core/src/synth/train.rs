//! Trainer: stochastic gradient descent with momentum over the detector
//! graph, deterministic under its seed, keeping the checkpoint with the
//! best validation mAP.

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorD};
use crate::conditions::{ConditionSet, ResponseMatrix};
use crate::error::{Error, Result};
use crate::fusion::BoundParams;
use crate::seed;

use super::detector::{
    batch_inputs, build_detector_forward, decode_outputs, DecodeConfig, DetectorConfig,
    DetectorParams,
};
use super::eval::evaluate_detector;
use super::scene::{SyntheticScene, HEAD_STRIDE};
use super::storage::SceneStore;
use super::splits::Splits;

/// Where a detector's condition vectors come from.
#[derive(Debug, Clone)]
pub enum ConditionsSource {
    /// Unconditioned variants.
    None,
    /// Ground-truth latent flags (dark, rain, blur, nuisances).
    OracleLatents,
    /// Responses produced by a backend over a condition set.
    Matrix {
        conditions: ConditionSet,
        matrix: ResponseMatrix,
    },
}

impl ConditionsSource {
    /// Condition vector length this source yields.
    pub fn k(&self, store: &SceneStore) -> usize {
        match self {
            ConditionsSource::None => 0,
            ConditionsSource::OracleLatents => store.manifest.spec.latent_len(),
            ConditionsSource::Matrix { conditions, .. } => conditions.len(),
        }
    }

    /// Build the (B, K) matrix for a batch of scenes.
    pub fn batch(&self, scenes: &[&SyntheticScene]) -> Result<Option<Array2<f64>>> {
        match self {
            ConditionsSource::None => Ok(None),
            ConditionsSource::OracleLatents => {
                let k = scenes[0].latent.flags().len();
                let mut r = Array2::zeros((scenes.len(), k));
                for (i, scene) in scenes.iter().enumerate() {
                    for (j, flag) in scene.latent.flags().iter().enumerate() {
                        r[[i, j]] = f64::from(*flag);
                    }
                }
                Ok(Some(r))
            }
            ConditionsSource::Matrix { conditions, matrix } => {
                let k = conditions.len();
                let mut r = Array2::zeros((scenes.len(), k));
                for (i, scene) in scenes.iter().enumerate() {
                    let row = matrix.rows.get(&scene.id).ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "response matrix has no row for scene {}",
                            scene.id
                        ))
                    })?;
                    let vector = crate::fusion::ConditionVector::from_responses(row);
                    for (j, v) in vector.values().iter().enumerate() {
                        r[[i, j]] = *v;
                    }
                }
                Ok(Some(r))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Extra weight on positive cells in the objectness loss.
    pub pos_weight: f64,
    pub w_obj: f64,
    pub w_cls: f64,
    pub w_box: f64,
    /// Global gradient-norm ceiling; updates are rescaled above it.
    pub grad_clip: Option<f64>,
    pub decode: DecodeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            lr: 1e-2,
            momentum: 0.9,
            seed: 0,
            pos_weight: 4.0,
            w_obj: 1.0,
            w_cls: 1.0,
            w_box: 1.0,
            grad_clip: Some(5.0),
            decode: DecodeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub loss_obj: f64,
    pub loss_cls: f64,
    pub loss_box: f64,
    pub val_map_50_95: f64,
    pub val_map_50: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DetectorParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_map: f64,
}

impl TrainOutcome {
    /// Training log as CSV: epoch, loss terms, validation mAP.
    pub fn log_csv(&self) -> String {
        let mut out =
            String::from("epoch,loss,loss_obj,loss_cls,loss_box,val_map_50_95,val_map_50\n");
        for row in &self.log {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                row.epoch, row.loss, row.loss_obj, row.loss_cls, row.loss_box,
                row.val_map_50_95, row.val_map_50
            ));
        }
        out
    }
}

struct BatchTargets {
    obj_targets: TensorD,
    obj_weights: TensorD,
    cls_targets: TensorD,
    box_targets: TensorD,
    mask: TensorD,
}

/// Center-cell assignment: the cell containing each box center is positive.
fn build_targets(scenes: &[&SyntheticScene], n_classes: usize, pos_weight: f64) -> BatchTargets {
    let b = scenes.len();
    let g = scenes[0].modality_a.shape()[1];
    let h = g / HEAD_STRIDE;
    let stride = HEAD_STRIDE as f64;
    let mut obj_targets = Array4::zeros((b, 1, h, h));
    let mut obj_weights = Array4::from_elem((b, 1, h, h), 1.0);
    let mut cls_targets = Array4::zeros((b, n_classes, h, h));
    let mut box_targets = Array4::zeros((b, 4, h, h));
    let mut mask = Array4::zeros((b, 1, h, h));
    for (bi, scene) in scenes.iter().enumerate() {
        for gt in &scene.boxes {
            let cx = (gt.bbox.x_min + gt.bbox.x_max) / 2.0;
            let cy = (gt.bbox.y_min + gt.bbox.y_max) / 2.0;
            let (x, y) = (
                ((cx / stride) as usize).min(h - 1),
                ((cy / stride) as usize).min(h - 1),
            );
            obj_targets[[bi, 0, y, x]] = 1.0;
            obj_weights[[bi, 0, y, x]] = pos_weight;
            cls_targets[[bi, gt.class_id, y, x]] = 1.0;
            mask[[bi, 0, y, x]] = 1.0;
            box_targets[[bi, 0, y, x]] = cx / stride - x as f64;
            box_targets[[bi, 1, y, x]] = cy / stride - y as f64;
            box_targets[[bi, 2, y, x]] = ((gt.bbox.x_max - gt.bbox.x_min) / stride).ln();
            box_targets[[bi, 3, y, x]] = ((gt.bbox.y_max - gt.bbox.y_min) / stride).ln();
        }
    }
    BatchTargets {
        obj_targets: obj_targets.into_dyn(),
        obj_weights: obj_weights.into_dyn(),
        cls_targets: cls_targets.into_dyn(),
        box_targets: box_targets.into_dyn(),
        mask: mask.into_dyn(),
    }
}

struct StepLosses {
    total: f64,
    obj: f64,
    cls: f64,
    boxes: f64,
}

/// One SGD step over a batch; returns the loss terms.
fn train_step(
    params: &mut DetectorParams,
    velocity: &mut [TensorD],
    scenes: &[&SyntheticScene],
    conditions: Option<&Array2<f64>>,
    config: &TrainConfig,
    at: (usize, usize),
) -> Result<StepLosses> {
    let (a, b) = batch_inputs(scenes);
    let targets = build_targets(scenes, params.config.n_classes, config.pos_weight);

    let mut tape = Tape::new();
    let bound = BoundParams::bind_with(&mut tape, |f| params.for_each(f));
    let av = tape.leaf(a.into_dyn());
    let bv = tape.leaf(b.into_dyn());
    let rv = conditions.map(|r| tape.leaf(r.clone().into_dyn()));
    let head = build_detector_forward(&mut tape, params, &bound, av, bv, rv)?;

    let obj_loss = tape.bce_loss(head.obj_logits, targets.obj_targets, targets.obj_weights);
    let cls_loss = tape.ce_loss(head.class_logits, targets.cls_targets, targets.mask.clone());
    // Center offsets pass through a sigmoid; sizes stay in log space.
    let centers = tape.slice_axis(head.box_params, 1, 0, 2);
    let centers = tape.sigmoid(centers);
    let sizes = tape.slice_axis(head.box_params, 1, 2, 2);
    let box_pred = tape.concat(1, &[centers, sizes]);
    let box_loss = tape.l1_loss(box_pred, targets.box_targets, targets.mask);

    let wo = tape.scale(obj_loss, config.w_obj);
    let wc = tape.scale(cls_loss, config.w_cls);
    let wb = tape.scale(box_loss, config.w_box);
    let partial = tape.add(wo, wc);
    let total = tape.add(partial, wb);

    let losses = StepLosses {
        total: tape.value(total).as_slice().unwrap()[0],
        obj: tape.value(obj_loss).as_slice().unwrap()[0],
        cls: tape.value(cls_loss).as_slice().unwrap()[0],
        boxes: tape.value(box_loss).as_slice().unwrap()[0],
    };

    let grads = tape.backward(total);
    let clip_scale = match config.grad_clip {
        Some(max_norm) if max_norm > 0.0 => {
            let mut sq = 0.0;
            for (idx, _) in bound.vars.iter().enumerate() {
                if let Some(g) = grads.get(bound.vars[idx]) {
                    sq += g.iter().map(|v| v * v).sum::<f64>();
                }
            }
            let norm = sq.sqrt();
            if norm > max_norm {
                max_norm / norm
            } else {
                1.0
            }
        }
        _ => 1.0,
    };
    let mut idx = 0;
    let mut corrupted: Option<String> = None;
    params.for_each_mut(&mut |name, tensor| {
        let g = grads.get_or_zeros(bound.vars[idx], tensor.shape());
        let v = &mut velocity[idx];
        v.zip_mut_with(&g, |vv, &gv| *vv = config.momentum * *vv + clip_scale * gv);
        tensor.zip_mut_with(v, |w, &vv| *w -= config.lr * vv);
        if corrupted.is_none() && tensor.iter().any(|w| !w.is_finite()) {
            corrupted = Some(name);
        }
        idx += 1;
    });
    if let Some(name) = corrupted {
        return Err(Error::Diverged {
            epoch: at.0,
            step: at.1,
            detail: format!("non-finite values in parameter {name} after update"),
        });
    }
    Ok(losses)
}

/// Train a detector on the train split, evaluating on val each epoch and
/// keeping the parameters with the best validation mAP.
pub fn train(
    store: &SceneStore,
    splits: &Splits,
    detector_config: DetectorConfig,
    conditions: &ConditionsSource,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if splits.train.is_empty() {
        return Err(Error::InvalidArgument("train split is empty".into()));
    }
    let mut params = DetectorParams::seeded(detector_config, config.seed)?;
    let expected_k = conditions.k(store);
    if detector_config.arch.needs_conditions() && detector_config.k_conditions != expected_k {
        return Err(Error::ConditionLength {
            expected: detector_config.k_conditions,
            actual: expected_k,
        });
    }

    let mut velocity: Vec<TensorD> = Vec::new();
    params.for_each(&mut |_, t| velocity.push(TensorD::zeros(t.raw_dim())));

    let mut ids = splits.train.clone();
    let mut rng = seed::rng(config.seed, &[seed::hash_str("train_order")]);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, DetectorParams)> = None;

    for epoch in 0..config.epochs {
        ids.shuffle(&mut rng);
        let mut sums = StepLosses { total: 0.0, obj: 0.0, cls: 0.0, boxes: 0.0 };
        let mut steps = 0usize;
        for chunk in ids.chunks(config.batch_size.max(1)) {
            let scenes = store.select(chunk)?;
            let r = conditions.batch(&scenes)?;
            let losses =
                train_step(&mut params, &mut velocity, &scenes, r.as_ref(), config, (epoch, steps))?;
            if !losses.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: steps,
                    detail: format!(
                        "loss {} (obj {}, cls {}, box {})",
                        losses.total, losses.obj, losses.cls, losses.boxes
                    ),
                });
            }
            sums.total += losses.total;
            sums.obj += losses.obj;
            sums.cls += losses.cls;
            sums.boxes += losses.boxes;
            steps += 1;
        }
        let n = steps.max(1) as f64;

        let (val_map_50_95, val_map_50) = if splits.val.is_empty() {
            (0.0, 0.0)
        } else {
            let report = evaluate_detector(store, &splits.val, &params, conditions, &config.decode)?;
            (report.map_50_95, report.map_50)
        };
        log.push(EpochLog {
            epoch,
            loss: sums.total / n,
            loss_obj: sums.obj / n,
            loss_cls: sums.cls / n,
            loss_box: sums.boxes / n,
            val_map_50_95,
            val_map_50,
        });
        let better = best
            .as_ref()
            .map(|(_, best_map, _)| val_map_50_95 > *best_map)
            .unwrap_or(true);
        if better {
            best = Some((epoch, val_map_50_95, params.clone()));
        }
    }

    let (best_epoch, best_val_map, best_params) =
        best.unwrap_or((0, 0.0, params));
    Ok(TrainOutcome { params: best_params, log, best_epoch, best_val_map })
}

/// Forward + decode over a scene list, in deterministic batch order.
pub fn detect_scenes(
    store: &SceneStore,
    ids: &[String],
    params: &DetectorParams,
    conditions: &ConditionsSource,
    decode: &DecodeConfig,
) -> Result<Vec<(String, Vec<crate::metrics::Detection>)>> {
    use rayon::prelude::*;
    let grid = store.manifest.spec.grid;
    let chunks: Vec<&[String]> = ids.chunks(16).collect();
    let results: Vec<Result<Vec<(String, Vec<crate::metrics::Detection>)>>> = chunks
        .par_iter()
        .map(|chunk| {
            let scenes = store.select(chunk)?;
            let r = conditions.batch(&scenes)?;
            let raw = super::detector::forward_detector(&scenes, params, r.as_ref())?;
            let decoded = decode_outputs(&raw, grid, decode);
            Ok(chunk
                .iter()
                .cloned()
                .zip(decoded)
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(ids.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
