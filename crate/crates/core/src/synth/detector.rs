//! Anchor-free single-scale toy detector: one small conv encoder per
//! modality, a fusion block (or a single modality), and a dense head that
//! predicts objectness, class logits and box offsets per cell.

use ndarray::{Array2, Array4, Ix4};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid_scalar, Tape, TensorD, Var};
use crate::error::{Error, Result};
use crate::fusion::{
    BoundParams, ConvParams, FusionBlockParams, FusionDims, FusionVariant,
};
use crate::fusion::{load_archive, save_archive};
use crate::metrics::{iou, Box2D, Detection};
use crate::seed;

use super::scene::{SyntheticScene, HEAD_STRIDE, MODALITY_CHANNELS};

/// Which sensing path feeds the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorArch {
    SingleA,
    SingleB,
    Fused(FusionVariant),
}

impl DetectorArch {
    pub fn tag(&self) -> String {
        match self {
            DetectorArch::SingleA => "single_a".into(),
            DetectorArch::SingleB => "single_b".into(),
            DetectorArch::Fused(v) => v.tag().into(),
        }
    }

    pub fn needs_conditions(&self) -> bool {
        matches!(self, DetectorArch::Fused(FusionVariant::Vlc))
    }
}

impl std::str::FromStr for DetectorArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_a" => Ok(DetectorArch::SingleA),
            "single_b" => Ok(DetectorArch::SingleB),
            other => Ok(DetectorArch::Fused(other.parse()?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub arch: DetectorArch,
    pub n_classes: usize,
    /// Condition vector length; relevant only to the conditioned variant.
    pub k_conditions: usize,
    pub enc_channels: usize,
    pub head_hidden: usize,
    pub reduction: usize,
}

impl DetectorConfig {
    pub fn new(arch: DetectorArch, n_classes: usize, k_conditions: usize) -> Self {
        DetectorConfig {
            arch,
            n_classes,
            k_conditions,
            enc_channels: 8,
            head_hidden: 16,
            reduction: 4,
        }
    }

    fn fused_channels(&self) -> usize {
        match self.arch {
            DetectorArch::SingleA | DetectorArch::SingleB => self.enc_channels,
            DetectorArch::Fused(_) => 2 * self.enc_channels,
        }
    }

    /// Output channels: objectness, class logits, box offsets.
    fn head_out(&self) -> usize {
        1 + self.n_classes + 4
    }
}

/// Hard ceiling keeping the benchmark at desk scale.
pub const MAX_PARAMS: usize = 200_000;

#[derive(Debug, Clone)]
pub struct DetectorParams {
    pub config: DetectorConfig,
    pub enc_a: Vec<ConvParams>,
    pub enc_b: Vec<ConvParams>,
    pub fusion: Option<FusionBlockParams>,
    pub head: Vec<ConvParams>,
}

impl DetectorParams {
    pub fn seeded(config: DetectorConfig, seed_val: u64) -> Result<Self> {
        let e = config.enc_channels;
        let encoder = |salt: u64| -> Vec<ConvParams> {
            vec![
                ConvParams::seeded(e, MODALITY_CHANNELS, 3, seed::derive(seed_val, &[salt, 0])),
                ConvParams::seeded(e, e, 3, seed::derive(seed_val, &[salt, 1])),
            ]
        };
        let (enc_a, enc_b) = match config.arch {
            DetectorArch::SingleA => (encoder(1), Vec::new()),
            DetectorArch::SingleB => (Vec::new(), encoder(2)),
            DetectorArch::Fused(_) => (encoder(1), encoder(2)),
        };
        let fusion = match config.arch {
            DetectorArch::Fused(variant) => {
                let dims = FusionDims::new(e, e)
                    .with_c_out(2 * e)
                    .with_reduction(config.reduction)
                    .with_conditions(config.k_conditions);
                Some(FusionBlockParams::seeded(variant, dims, seed::derive(seed_val, &[3]))?)
            }
            _ => None,
        };
        let head = vec![
            ConvParams::seeded(
                config.head_hidden,
                config.fused_channels(),
                3,
                seed::derive(seed_val, &[4]),
            ),
            ConvParams::seeded(config.head_out(), config.head_hidden, 3, seed::derive(seed_val, &[5])),
        ];
        let params = DetectorParams { config, enc_a, enc_b, fusion, head };
        let count = params.param_count();
        if count > MAX_PARAMS {
            return Err(Error::InvalidArgument(format!(
                "detector has {count} parameters, above the {MAX_PARAMS} ceiling"
            )));
        }
        Ok(params)
    }

    pub fn for_each(&self, f: &mut dyn FnMut(String, &TensorD)) {
        for (i, c) in self.enc_a.iter().enumerate() {
            f(format!("enc_a.{i}.kernel"), &c.kernel);
            f(format!("enc_a.{i}.bias"), &c.bias);
        }
        for (i, c) in self.enc_b.iter().enumerate() {
            f(format!("enc_b.{i}.kernel"), &c.kernel);
            f(format!("enc_b.{i}.bias"), &c.bias);
        }
        if let Some(fusion) = &self.fusion {
            fusion.for_each(&mut |name, t| f(format!("fusion.{name}"), t));
        }
        for (i, c) in self.head.iter().enumerate() {
            f(format!("head.{i}.kernel"), &c.kernel);
            f(format!("head.{i}.bias"), &c.bias);
        }
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(String, &mut TensorD)) {
        for (i, c) in self.enc_a.iter_mut().enumerate() {
            f(format!("enc_a.{i}.kernel"), &mut c.kernel);
            f(format!("enc_a.{i}.bias"), &mut c.bias);
        }
        for (i, c) in self.enc_b.iter_mut().enumerate() {
            f(format!("enc_b.{i}.kernel"), &mut c.kernel);
            f(format!("enc_b.{i}.bias"), &mut c.bias);
        }
        if let Some(fusion) = &mut self.fusion {
            fusion.for_each_mut(&mut |name, t| f(format!("fusion.{name}"), t));
        }
        for (i, c) in self.head.iter_mut().enumerate() {
            f(format!("head.{i}.kernel"), &mut c.kernel);
            f(format!("head.{i}.bias"), &mut c.bias);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, t| n += t.len());
        n
    }

    /// Serialize to the shared checkpoint archive format.
    pub fn save(&self, path: &std::path::Path, seed_val: Option<u64>) -> Result<()> {
        let mut arrays = Vec::new();
        self.for_each(&mut |name, t| arrays.push((name, t.clone())));
        let borrowed: Vec<(String, &TensorD)> =
            arrays.iter().map(|(n, t)| (n.clone(), t)).collect();
        save_archive(
            path,
            "detector",
            Some(&self.config.arch.tag()),
            seed_val,
            serde_json::to_value(self.config)?,
            &borrowed,
        )
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = path.display().to_string();
        let (manifest, mut arrays) = load_archive(path)?;
        if manifest.kind != "detector" {
            return Err(Error::schema(
                &file,
                format!("expected kind detector, got {}", manifest.kind),
            ));
        }
        let config: DetectorConfig = serde_json::from_value(manifest.meta.clone())
            .map_err(|e| Error::schema(&file, format!("meta: {e}")))?;
        let mut params = DetectorParams::seeded(config, 0)?;
        let mut problems = Vec::new();
        params.for_each_mut(&mut |name, t| match arrays.remove(&name) {
            Some(loaded) if loaded.shape() == t.shape() => *t = loaded,
            Some(loaded) => problems.push(format!(
                "{name}: shape {:?} != expected {:?}",
                loaded.shape(),
                t.shape()
            )),
            None => problems.push(format!("{name}: absent from archive")),
        });
        if !problems.is_empty() {
            return Err(Error::schema(&file, problems.join("; ")));
        }
        if !arrays.is_empty() {
            return Err(Error::schema(
                &file,
                format!("unexpected arrays: {}", arrays.keys().cloned().collect::<Vec<_>>().join(", ")),
            ));
        }
        Ok(params)
    }
}

/// Raw head tensors on the tape, before activation.
pub struct HeadVars {
    pub obj_logits: Var,
    pub class_logits: Var,
    pub box_params: Var,
}

/// Assemble the full forward graph for a batch.
pub fn build_detector_forward(
    tape: &mut Tape,
    params: &DetectorParams,
    bound: &BoundParams,
    batch_a: Var,
    batch_b: Var,
    conditions: Option<Var>,
) -> Result<HeadVars> {
    let encode = |tape: &mut Tape, input: Var, prefix: &str, n_layers: usize| -> Var {
        let mut x = input;
        for i in 0..n_layers {
            x = crate::fusion::graph_conv(tape, x, bound, &format!("{prefix}.{i}"), 2, 1);
            x = tape.relu(x);
        }
        x
    };

    let fused = match params.config.arch {
        DetectorArch::SingleA => encode(tape, batch_a, "enc_a", params.enc_a.len()),
        DetectorArch::SingleB => encode(tape, batch_b, "enc_b", params.enc_b.len()),
        DetectorArch::Fused(_) => {
            let fa = encode(tape, batch_a, "enc_a", params.enc_a.len());
            let fb = encode(tape, batch_b, "enc_b", params.enc_b.len());
            let fusion = params.fusion.as_ref().expect("fused arch carries params");
            let scoped = bound.scoped("fusion.");
            crate::fusion::graph_fuse(tape, fusion, &scoped, fa, fb, conditions)?
        }
    };

    let hidden = crate::fusion::graph_conv(tape, fused, bound, "head.0", 1, 1);
    let hidden = tape.relu(hidden);
    let out = crate::fusion::graph_conv(tape, hidden, bound, "head.1", 1, 1);

    let n_classes = params.config.n_classes;
    Ok(HeadVars {
        obj_logits: tape.slice_axis(out, 1, 0, 1),
        class_logits: tape.slice_axis(out, 1, 1, n_classes),
        box_params: tape.slice_axis(out, 1, 1 + n_classes, 4),
    })
}

/// Stack scene tensors into batch arrays.
pub fn batch_inputs(scenes: &[&SyntheticScene]) -> (Array4<f64>, Array4<f64>) {
    let b = scenes.len();
    let g = scenes[0].modality_a.shape()[1];
    let mut a = Array4::zeros((b, MODALITY_CHANNELS, g, g));
    let mut bb = Array4::zeros((b, MODALITY_CHANNELS, g, g));
    for (i, scene) in scenes.iter().enumerate() {
        a.index_axis_mut(ndarray::Axis(0), i).assign(&scene.modality_a);
        bb.index_axis_mut(ndarray::Axis(0), i).assign(&scene.modality_b);
    }
    (a, bb)
}

/// Activated per-cell outputs of one forward pass.
pub struct RawOutputs {
    /// (B,1,h,w) objectness probabilities.
    pub objectness: Array4<f64>,
    /// (B,C,h,w) class distribution per cell (sums to one over C).
    pub class_probs: Array4<f64>,
    /// (B,4,h,w) raw box parameters.
    pub box_params: Array4<f64>,
}

/// Forward a batch of scenes without building gradients for training.
pub fn forward_detector(
    scenes: &[&SyntheticScene],
    params: &DetectorParams,
    conditions: Option<&Array2<f64>>,
) -> Result<RawOutputs> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("empty scene batch".into()));
    }
    if params.config.arch.needs_conditions() {
        let r = conditions.ok_or(Error::MissingConditions("vlc"))?;
        if r.shape() != [scenes.len(), params.config.k_conditions] {
            return Err(Error::ShapeMismatch {
                dim: "K",
                expected: params.config.k_conditions,
                actual: r.shape()[1],
            });
        }
    }
    let (a, b) = batch_inputs(scenes);
    let mut tape = Tape::new();
    let bound = BoundParams::bind_with(&mut tape, |f| params.for_each(f));
    let av = tape.leaf(a.into_dyn());
    let bv = tape.leaf(b.into_dyn());
    let rv = conditions.map(|r| tape.leaf(r.clone().into_dyn()));
    let head = build_detector_forward(&mut tape, params, &bound, av, bv, rv)?;

    let obj = tape.sigmoid(head.obj_logits);
    let objectness = tape.value(obj).clone().into_dimensionality::<Ix4>().unwrap();
    let logits = tape
        .value(head.class_logits)
        .clone()
        .into_dimensionality::<Ix4>()
        .unwrap();
    let class_probs = softmax_channels(&logits);
    let box_params = tape
        .value(head.box_params)
        .clone()
        .into_dimensionality::<Ix4>()
        .unwrap();
    Ok(RawOutputs { objectness, class_probs, box_params })
}

fn softmax_channels(logits: &Array4<f64>) -> Array4<f64> {
    let (b, c, h, w) = {
        let s = logits.shape();
        (s[0], s[1], s[2], s[3])
    };
    let mut out = logits.clone();
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let mut m = f64::NEG_INFINITY;
                for ci in 0..c {
                    m = m.max(out[[bi, ci, y, x]]);
                }
                let mut z = 0.0;
                for ci in 0..c {
                    let e = (out[[bi, ci, y, x]] - m).exp();
                    out[[bi, ci, y, x]] = e;
                    z += e;
                }
                for ci in 0..c {
                    out[[bi, ci, y, x]] /= z;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_per_image: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { score_threshold: 0.05, nms_iou: 0.55, max_per_image: 100 }
    }
}

/// Decode raw outputs into score-sorted detections per image.
pub fn decode_outputs(raw: &RawOutputs, grid: usize, cfg: &DecodeConfig) -> Vec<Vec<Detection>> {
    let (b, c, h, w) = {
        let s = raw.class_probs.shape();
        (s[0], s[1], s[2], s[3])
    };
    let stride = HEAD_STRIDE as f64;
    let gmax = grid as f64;
    let mut all = Vec::with_capacity(b);
    for bi in 0..b {
        let mut dets: Vec<Detection> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let p_obj = raw.objectness[[bi, 0, y, x]];
                let (mut best_c, mut best_p) = (0usize, raw.class_probs[[bi, 0, y, x]]);
                for ci in 1..c {
                    let p = raw.class_probs[[bi, ci, y, x]];
                    if p > best_p {
                        best_p = p;
                        best_c = ci;
                    }
                }
                let score = p_obj * best_p;
                if score < cfg.score_threshold {
                    continue;
                }
                let tx = sigmoid_scalar(raw.box_params[[bi, 0, y, x]]);
                let ty = sigmoid_scalar(raw.box_params[[bi, 1, y, x]]);
                let bw = raw.box_params[[bi, 2, y, x]].clamp(-4.0, 4.0).exp() * stride;
                let bh = raw.box_params[[bi, 3, y, x]].clamp(-4.0, 4.0).exp() * stride;
                let cx = (x as f64 + tx) * stride;
                let cy = (y as f64 + ty) * stride;
                let bbox = Box2D::new(
                    (cx - bw / 2.0).clamp(0.0, gmax),
                    (cy - bh / 2.0).clamp(0.0, gmax),
                    (cx + bw / 2.0).clamp(0.0, gmax),
                    (cy + bh / 2.0).clamp(0.0, gmax),
                );
                if bbox.is_valid() {
                    dets.push(Detection { class_id: best_c, bbox, score });
                }
            }
        }
        dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
        let kept = nms_per_class(dets, cfg.nms_iou);
        all.push(kept.into_iter().take(cfg.max_per_image).collect());
    }
    all
}

/// Greedy class-wise suppression; input must be score-sorted.
fn nms_per_class(dets: Vec<Detection>, iou_thresh: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for det in dets {
        let suppressed = kept.iter().any(|k| {
            k.class_id == det.class_id
                && iou(&k.bbox, &det.bbox).map(|v| v > iou_thresh).unwrap_or(false)
        });
        if !suppressed {
            kept.push(det);
        }
    }
    kept
}
