//! Conditioned multimodal fusion blocks.
//!
//! The conditioned block runs concatenation → CBAM attention → FiLM
//! modulation driven by a boolean condition vector. Four baselines cover the
//! common unconditioned designs: plain concat+conv, concat+conv with
//! self-attention, CBAM without conditioning, and cross-attention alignment.

mod checkpoint;
mod graph;
mod params;

pub use checkpoint::{load_archive, save_archive, ArchiveEntry, ArchiveManifest};
pub use params::{
    CbamParams, ConvParams, CrossAttnParams, FilmParams, FusionBlockParams, FusionDims,
    MlpParams, SelfAttnParams,
};
pub(crate) use graph::BoundParams;
pub(crate) use graph::{conv as graph_conv, fuse as graph_fuse};

use ndarray::{Array2, Array4, Ix4};
use std::str::FromStr;

use crate::autodiff::Tape;
use crate::error::{Error, Result};

/// The five fusion block designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    /// Concat → CBAM → FiLM on a condition vector.
    Vlc,
    /// Concat followed by one 3x3 convolution.
    ConcatConv,
    /// Concat+conv followed by single-head self-attention with residual.
    ConcatConvSelfAttn,
    /// Concat → CBAM → convolution stack, no conditioning.
    CbamOnly,
    /// Cross-attention alignment of one modality against the other.
    LearnableAlign,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 5] = [
        FusionVariant::Vlc,
        FusionVariant::ConcatConv,
        FusionVariant::ConcatConvSelfAttn,
        FusionVariant::CbamOnly,
        FusionVariant::LearnableAlign,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            FusionVariant::Vlc => "vlc",
            FusionVariant::ConcatConv => "concat_conv",
            FusionVariant::ConcatConvSelfAttn => "concat_conv_selfattn",
            FusionVariant::CbamOnly => "cbam_only",
            FusionVariant::LearnableAlign => "learnable_align",
        }
    }

    pub fn needs_conditions(&self) -> bool {
        matches!(self, FusionVariant::Vlc)
    }
}

impl FromStr for FusionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vlc" => Ok(FusionVariant::Vlc),
            "concat_conv" => Ok(FusionVariant::ConcatConv),
            "concat_conv_selfattn" => Ok(FusionVariant::ConcatConvSelfAttn),
            "cbam_only" => Ok(FusionVariant::CbamOnly),
            "learnable_align" => Ok(FusionVariant::LearnableAlign),
            other => Err(Error::UnknownVariant(other.to_string())),
        }
    }
}

impl std::fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Batched channel–spatial tensor (B, C, H, W); the currency of all fusion
/// blocks. All dims are at least 1 and every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(Array4<f64>);

impl FeatureMap {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        if data.shape().iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "feature map dims must all be >= 1, got {:?}",
                data.shape()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(FeatureMap(data.as_standard_layout().to_owned()))
    }

    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        FeatureMap(Array4::zeros((b, c, h, w)))
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array4<f64> {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    /// Two maps can be concatenated along channels iff B, H and W agree.
    pub fn concat_compatible(&self, other: &FeatureMap) -> Result<()> {
        for (dim, sa, sb) in [
            ("B", self.batch(), other.batch()),
            ("H", self.height(), other.height()),
            ("W", self.width(), other.width()),
        ] {
            if sa != sb {
                return Err(Error::ShapeMismatch {
                    dim,
                    expected: sa,
                    actual: sb,
                });
            }
        }
        Ok(())
    }
}

/// Per-channel attention weights (B, C, 1, 1); entries lie strictly in (0,1).
#[derive(Debug, Clone)]
pub struct ChannelMask(Array4<f64>);

impl ChannelMask {
    pub fn data(&self) -> &Array4<f64> {
        &self.0
    }
}

/// Per-position attention weights (B, 1, H, W); entries lie strictly in (0,1).
#[derive(Debug, Clone)]
pub struct SpatialMask(Array4<f64>);

impl SpatialMask {
    pub fn data(&self) -> &Array4<f64> {
        &self.0
    }
}

/// Ordered boolean answers to a condition set, encoded as 0.0/1.0 reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    values: Vec<f64>,
}

impl ConditionVector {
    pub fn from_bools(bits: &[bool]) -> Self {
        ConditionVector {
            values: bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Unknown responses encode as 0.0; each one is logged.
    pub fn from_responses(cells: &[Option<bool>]) -> Self {
        let mut unknowns = 0usize;
        let values = cells
            .iter()
            .map(|c| match c {
                Some(true) => 1.0,
                Some(false) => 0.0,
                None => {
                    unknowns += 1;
                    0.0
                }
            })
            .collect();
        if unknowns > 0 {
            log::warn!("{unknowns} unknown condition responses encoded as 0.0");
        }
        ConditionVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A batch of condition vectors as a (B, K) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBatch(Array2<f64>);

impl ConditionBatch {
    pub fn from_vectors(vectors: &[ConditionVector]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidArgument("empty condition batch".into()));
        }
        let k = vectors[0].len();
        for v in vectors {
            if v.len() != k {
                return Err(Error::ConditionLength {
                    expected: k,
                    actual: v.len(),
                });
            }
        }
        let mut data = Array2::zeros((vectors.len(), k));
        for (i, v) in vectors.iter().enumerate() {
            for (j, &x) in v.values().iter().enumerate() {
                data[[i, j]] = x;
            }
        }
        Ok(ConditionBatch(data))
    }

    pub fn single(v: &ConditionVector) -> Self {
        ConditionBatch::from_vectors(std::slice::from_ref(v)).expect("single vector")
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.0.shape()[1]
    }
}

fn to4(tape: &Tape, v: crate::autodiff::Var) -> Array4<f64> {
    tape.value(v)
        .clone()
        .into_dimensionality::<Ix4>()
        .expect("rank-4 tape value")
}

fn require_cbam(params: &FusionBlockParams) -> Result<()> {
    if params.cbam.is_none() {
        return Err(Error::InvalidArgument(format!(
            "variant {} carries no attention weights",
            params.variant
        )));
    }
    Ok(())
}

fn check_concat_channels(f: &FeatureMap, params: &FusionBlockParams) -> Result<()> {
    let expected = params.dims.concat_channels();
    if f.channels() != expected {
        return Err(Error::ShapeMismatch {
            dim: "C",
            expected,
            actual: f.channels(),
        });
    }
    Ok(())
}

/// Concatenate two maps along the channel axis; `a`'s channels come first.
pub fn concat_features(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    a.concat_compatible(b)?;
    let out = ndarray::concatenate(
        ndarray::Axis(1),
        &[a.data().view(), b.data().view()],
    )
    .expect("validated shapes");
    Ok(FeatureMap(out.as_standard_layout().to_owned()))
}

/// Channel attention mask over a concatenated map.
pub fn channel_attention(f: &FeatureMap, params: &FusionBlockParams) -> Result<ChannelMask> {
    require_cbam(params)?;
    check_concat_channels(f, params)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let fv = tape.leaf(f.data().clone().into_dyn());
    let mask = graph::channel_attention_mask(&mut tape, fv, &bound);
    Ok(ChannelMask(to4(&tape, mask)))
}

/// Spatial attention mask over a (already channel-attended) map.
pub fn spatial_attention(f: &FeatureMap, params: &FusionBlockParams) -> Result<SpatialMask> {
    require_cbam(params)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let fv = tape.leaf(f.data().clone().into_dyn());
    let mask = graph::spatial_attention_mask(&mut tape, fv, &bound);
    Ok(SpatialMask(to4(&tape, mask)))
}

/// Full CBAM: channel attention then spatial attention, both multiplicative.
pub fn cbam(f: &FeatureMap, params: &FusionBlockParams) -> Result<FeatureMap> {
    require_cbam(params)?;
    check_concat_channels(f, params)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let fv = tape.leaf(f.data().clone().into_dyn());
    let out = graph::cbam(&mut tape, fv, &bound);
    Ok(FeatureMap(to4(&tape, out)))
}

/// Condition-driven per-channel affine transform of `f`.
pub fn film_modulate(
    f: &FeatureMap,
    r: &ConditionBatch,
    params: &FilmParams,
) -> Result<FeatureMap> {
    if r.k() != params.condition_dim() {
        return Err(Error::ConditionLength {
            expected: params.condition_dim(),
            actual: r.k(),
        });
    }
    if f.channels() != params.channel_dim() {
        return Err(Error::ShapeMismatch {
            dim: "C",
            expected: params.channel_dim(),
            actual: f.channels(),
        });
    }
    if f.batch() != r.batch() {
        return Err(Error::ShapeMismatch {
            dim: "B",
            expected: f.batch(),
            actual: r.batch(),
        });
    }
    let mut tape = Tape::new();
    let bound = BoundParams::bind_film(&mut tape, params);
    let fv = tape.leaf(f.data().clone().into_dyn());
    let rv = tape.leaf(r.data().clone().into_dyn());
    let out = graph::film(&mut tape, fv, rv, &bound);
    Ok(FeatureMap(to4(&tape, out)))
}

fn run_fuse(
    a: &FeatureMap,
    b: &FeatureMap,
    r: Option<&ConditionBatch>,
    params: &FusionBlockParams,
) -> Result<FeatureMap> {
    a.concat_compatible(b)?;
    for (dim, expected, actual) in [
        ("C", params.dims.c_a, a.channels()),
        ("C'", params.dims.c_b, b.channels()),
    ] {
        if expected != actual {
            return Err(Error::ShapeMismatch { dim, expected, actual });
        }
    }
    if let Some(r) = r {
        if r.batch() != a.batch() {
            return Err(Error::ShapeMismatch {
                dim: "B",
                expected: a.batch(),
                actual: r.batch(),
            });
        }
        if params.variant.needs_conditions() && r.k() != params.dims.k_conditions {
            return Err(Error::ConditionLength {
                expected: params.dims.k_conditions,
                actual: r.k(),
            });
        }
    }
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let av = tape.leaf(a.data().clone().into_dyn());
    let bv = tape.leaf(b.data().clone().into_dyn());
    let rv = r.map(|r| tape.leaf(r.data().clone().into_dyn()));
    let out = graph::fuse(&mut tape, params, &bound, av, bv, rv)?;
    Ok(FeatureMap(to4(&tape, out)))
}

/// Conditioned fusion: concat → CBAM → FiLM.
pub fn vlc_fuse(
    a: &FeatureMap,
    b: &FeatureMap,
    r: &ConditionBatch,
    params: &FusionBlockParams,
) -> Result<FeatureMap> {
    if params.variant != FusionVariant::Vlc {
        return Err(Error::InvalidArgument(format!(
            "expected vlc params, got {}",
            params.variant
        )));
    }
    run_fuse(a, b, Some(r), params)
}

/// Concat followed by a single 3x3 convolution.
pub fn concat_conv_fuse(
    a: &FeatureMap,
    b: &FeatureMap,
    params: &FusionBlockParams,
) -> Result<FeatureMap> {
    if params.variant != FusionVariant::ConcatConv {
        return Err(Error::InvalidArgument(format!(
            "expected concat_conv params, got {}",
            params.variant
        )));
    }
    run_fuse(a, b, None, params)
}

/// Concat+conv then single-head self-attention over positions, residual-added.
pub fn self_attention_fuse(
    a: &FeatureMap,
    b: &FeatureMap,
    params: &FusionBlockParams,
) -> Result<FeatureMap> {
    if params.variant != FusionVariant::ConcatConvSelfAttn {
        return Err(Error::InvalidArgument(format!(
            "expected concat_conv_selfattn params, got {}",
            params.variant
        )));
    }
    run_fuse(a, b, None, params)
}

/// Concat → CBAM → convolution stack, without conditioning.
pub fn cbam_fuse(a: &FeatureMap, b: &FeatureMap, params: &FusionBlockParams) -> Result<FeatureMap> {
    if params.variant != FusionVariant::CbamOnly {
        return Err(Error::InvalidArgument(format!(
            "expected cbam_only params, got {}",
            params.variant
        )));
    }
    run_fuse(a, b, None, params)
}

/// Cross-attention alignment: cells of `a` query positions of `b`.
pub fn cross_attention_fuse(
    a: &FeatureMap,
    b: &FeatureMap,
    params: &FusionBlockParams,
) -> Result<FeatureMap> {
    if params.variant != FusionVariant::LearnableAlign {
        return Err(Error::InvalidArgument(format!(
            "expected learnable_align params, got {}",
            params.variant
        )));
    }
    run_fuse(a, b, None, params)
}

/// Dispatch to the matching fusion op. Conditions are required exactly for
/// the conditioned variant.
pub fn fuse(
    variant: FusionVariant,
    a: &FeatureMap,
    b: &FeatureMap,
    r: Option<&ConditionBatch>,
    params: &FusionBlockParams,
) -> Result<FeatureMap> {
    if variant != params.variant {
        return Err(Error::InvalidArgument(format!(
            "variant {variant} does not match params variant {}",
            params.variant
        )));
    }
    if variant.needs_conditions() && r.is_none() {
        return Err(Error::MissingConditions("vlc"));
    }
    run_fuse(a, b, if variant.needs_conditions() { r } else { None }, params)
}

/// Build a block's forward graph on an existing tape.
///
/// `a`, `b` and (for the conditioned variant) `r` must already be leaves on
/// the tape. Returns the output node plus the parameter leaves in
/// `for_each` order, so callers can train or gradient-check the block.
pub fn build_fusion_graph(
    tape: &mut Tape,
    params: &FusionBlockParams,
    a: crate::autodiff::Var,
    b: crate::autodiff::Var,
    r: Option<crate::autodiff::Var>,
) -> Result<(crate::autodiff::Var, Vec<crate::autodiff::Var>)> {
    let bound = BoundParams::bind(tape, params);
    let out = graph::fuse(tape, params, &bound, a, b, r)?;
    Ok((out, bound.vars))
}

/// Bilinear resize of a feature map to a new spatial extent. Alignment of
/// modalities is the caller's job; fusion ops require equal H×W.
pub fn resize_bilinear(f: &FeatureMap, h_out: usize, w_out: usize) -> Result<FeatureMap> {
    if h_out == 0 || w_out == 0 {
        return Err(Error::InvalidArgument("resize target must be >= 1".into()));
    }
    let (b, c, h, w) = {
        let s = f.data().shape();
        (s[0], s[1], s[2], s[3])
    };
    let mut out = Array4::zeros((b, c, h_out, w_out));
    let sy = if h_out > 1 { (h - 1) as f64 / (h_out - 1) as f64 } else { 0.0 };
    let sx = if w_out > 1 { (w - 1) as f64 / (w_out - 1) as f64 } else { 0.0 };
    for bi in 0..b {
        for ci in 0..c {
            for oy in 0..h_out {
                let fy = oy as f64 * sy;
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let dy = fy - y0 as f64;
                for ox in 0..w_out {
                    let fx = ox as f64 * sx;
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let dx = fx - x0 as f64;
                    let v00 = f.data()[[bi, ci, y0, x0]];
                    let v01 = f.data()[[bi, ci, y0, x1]];
                    let v10 = f.data()[[bi, ci, y1, x0]];
                    let v11 = f.data()[[bi, ci, y1, x1]];
                    out[[bi, ci, oy, ox]] = v00 * (1.0 - dy) * (1.0 - dx)
                        + v01 * (1.0 - dy) * dx
                        + v10 * dy * (1.0 - dx)
                        + v11 * dy * dx;
                }
            }
        }
    }
    Ok(FeatureMap(out))
}
