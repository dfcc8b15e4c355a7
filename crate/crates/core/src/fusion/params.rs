//! Parameter containers for the fusion blocks, with deterministic seeded
//! initialization and a flat visitor used by the optimizer, the checkpoint
//! writer and the gradient checker.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::TensorD;
use crate::error::{Error, Result};
use crate::seed;

use super::FusionVariant;

/// Two-layer feed-forward map: `w2 · relu(w1 · x + b1) + b2`.
///
/// Weights are stored input-major: `w1` is (in, hidden), `w2` is (hidden, out),
/// so a row vector of activations left-multiplies them.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub w1: TensorD,
    pub b1: TensorD,
    pub w2: TensorD,
    pub b2: TensorD,
}

impl MlpParams {
    pub fn seeded(d_in: usize, d_hidden: usize, d_out: usize, seed_val: u64, zero_out: bool) -> Self {
        let mut rng = seed::rng(seed_val, &[seed::hash_str("mlp")]);
        let w1 = kaiming(&mut rng, &[d_in, d_hidden], d_in);
        let b1 = TensorD::zeros(IxDyn(&[1, d_hidden]));
        let w2 = if zero_out {
            TensorD::zeros(IxDyn(&[d_hidden, d_out]))
        } else {
            kaiming(&mut rng, &[d_hidden, d_out], d_hidden)
        };
        let b2 = TensorD::zeros(IxDyn(&[1, d_out]));
        MlpParams { w1, b1, w2, b2 }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.shape()[0], self.w1.shape()[1], self.w2.shape()[1])
    }
}

/// Convolution weights: kernel (Cout, Cin, kh, kw) plus bias (1, Cout, 1, 1).
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub kernel: TensorD,
    pub bias: TensorD,
}

impl ConvParams {
    pub fn seeded(c_out: usize, c_in: usize, k: usize, seed_val: u64) -> Self {
        let mut rng = seed::rng(seed_val, &[seed::hash_str("conv")]);
        let fan_in = c_in * k * k;
        ConvParams {
            kernel: kaiming(&mut rng, &[c_out, c_in, k, k], fan_in),
            bias: TensorD::zeros(IxDyn(&[1, c_out, 1, 1])),
        }
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        ConvParams {
            kernel: TensorD::zeros(IxDyn(&[c_out, c_in, k, k])),
            bias: TensorD::zeros(IxDyn(&[1, c_out, 1, 1])),
        }
    }

    /// 3x3 kernel passing matched channels through unchanged.
    pub fn identity_3x3(c: usize) -> Self {
        let mut p = Self::zeros(c, c, 3);
        for ci in 0..c {
            p.kernel[[ci, ci, 1, 1]] = 1.0;
        }
        p
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape()[1]
    }
}

/// CBAM weights: the shared channel MLP and the 7x7 spatial convolution.
#[derive(Debug, Clone)]
pub struct CbamParams {
    pub channel_mlp: MlpParams,
    pub spatial_conv: ConvParams,
}

impl CbamParams {
    pub fn seeded(channels: usize, reduction: usize, seed_val: u64) -> Self {
        let hidden = (channels / reduction).max(1);
        CbamParams {
            channel_mlp: MlpParams::seeded(
                channels,
                hidden,
                channels,
                seed::derive(seed_val, &[1]),
                false,
            ),
            spatial_conv: ConvParams::seeded(1, 2, 7, seed::derive(seed_val, &[2])),
        }
    }
}

/// Conditioning weights: two small feed-forward maps from the condition
/// vector to a per-channel scale and shift. Output layers start at zero so
/// the block is the identity until trained.
#[derive(Debug, Clone)]
pub struct FilmParams {
    pub gamma: MlpParams,
    pub beta: MlpParams,
}

impl FilmParams {
    pub fn seeded(k_conditions: usize, channels: usize, seed_val: u64) -> Self {
        let hidden = (2 * k_conditions).max(32);
        FilmParams {
            gamma: MlpParams::seeded(
                k_conditions,
                hidden,
                channels,
                seed::derive(seed_val, &[1]),
                true,
            ),
            beta: MlpParams::seeded(
                k_conditions,
                hidden,
                channels,
                seed::derive(seed_val, &[2]),
                true,
            ),
        }
    }

    pub fn condition_dim(&self) -> usize {
        self.gamma.dims().0
    }

    pub fn channel_dim(&self) -> usize {
        self.gamma.dims().2
    }

    /// Visit both nets under the same names a full fusion block would use.
    pub(crate) fn for_each(&self, f: &mut dyn FnMut(String, &TensorD)) {
        visit_mlp("film.gamma", &self.gamma, f);
        visit_mlp("film.beta", &self.beta, f);
    }
}

/// Single-head self-attention projections over flattened positions.
#[derive(Debug, Clone)]
pub struct SelfAttnParams {
    pub wq: TensorD,
    pub wk: TensorD,
    pub wv: TensorD,
}

impl SelfAttnParams {
    pub fn seeded(channels: usize, seed_val: u64) -> Self {
        let mut rng = seed::rng(seed_val, &[seed::hash_str("selfattn")]);
        SelfAttnParams {
            wq: kaiming(&mut rng, &[channels, channels], channels),
            wk: kaiming(&mut rng, &[channels, channels], channels),
            wv: kaiming(&mut rng, &[channels, channels], channels),
        }
    }
}

/// Cross-attention alignment: 1x1 projections of the query modality and the
/// key/value modality into a shared dim, plus the 1x1 output reduction.
#[derive(Debug, Clone)]
pub struct CrossAttnParams {
    pub query_proj: ConvParams,
    pub key_proj: ConvParams,
    pub value_proj: ConvParams,
    pub out_proj: ConvParams,
}

impl CrossAttnParams {
    pub fn seeded(c_a: usize, c_b: usize, d: usize, c_out: usize, seed_val: u64) -> Self {
        CrossAttnParams {
            query_proj: ConvParams::seeded(d, c_a, 1, seed::derive(seed_val, &[1])),
            key_proj: ConvParams::seeded(d, c_b, 1, seed::derive(seed_val, &[2])),
            value_proj: ConvParams::seeded(d, c_b, 1, seed::derive(seed_val, &[3])),
            out_proj: ConvParams::seeded(c_out, d + c_a, 1, seed::derive(seed_val, &[4])),
        }
    }
}

/// Static dimensions of a fusion block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionDims {
    pub c_a: usize,
    pub c_b: usize,
    pub c_out: usize,
    /// Channel-MLP reduction ratio.
    pub reduction: usize,
    /// Condition vector length; 0 for unconditioned variants.
    pub k_conditions: usize,
    /// Depth of the convolution stack after CBAM in the cbam_only variant.
    pub cbam_conv_depth: usize,
}

impl FusionDims {
    pub fn new(c_a: usize, c_b: usize) -> Self {
        FusionDims {
            c_a,
            c_b,
            c_out: c_a + c_b,
            reduction: 16,
            k_conditions: 0,
            cbam_conv_depth: 1,
        }
    }

    pub fn with_c_out(mut self, c_out: usize) -> Self {
        self.c_out = c_out;
        self
    }

    pub fn with_reduction(mut self, r: usize) -> Self {
        self.reduction = r;
        self
    }

    pub fn with_conditions(mut self, k: usize) -> Self {
        self.k_conditions = k;
        self
    }

    pub fn with_cbam_conv_depth(mut self, depth: usize) -> Self {
        self.cbam_conv_depth = depth;
        self
    }

    pub fn concat_channels(&self) -> usize {
        self.c_a + self.c_b
    }
}

/// All learned weights of one fusion block, tagged by variant.
#[derive(Debug, Clone)]
pub struct FusionBlockParams {
    pub variant: FusionVariant,
    pub dims: FusionDims,
    pub cbam: Option<CbamParams>,
    pub film: Option<FilmParams>,
    pub out_convs: Vec<ConvParams>,
    pub self_attn: Option<SelfAttnParams>,
    pub cross_attn: Option<CrossAttnParams>,
}

impl FusionBlockParams {
    /// Deterministically initialize a block for the given variant.
    pub fn seeded(variant: FusionVariant, dims: FusionDims, seed_val: u64) -> Result<Self> {
        if dims.c_a == 0 || dims.c_b == 0 || dims.c_out == 0 {
            return Err(Error::InvalidArgument(
                "fusion dims must be nonzero".into(),
            ));
        }
        let cc = dims.concat_channels();
        let mut p = FusionBlockParams {
            variant,
            dims,
            cbam: None,
            film: None,
            out_convs: Vec::new(),
            self_attn: None,
            cross_attn: None,
        };
        match variant {
            FusionVariant::Vlc => {
                if dims.k_conditions == 0 {
                    return Err(Error::MissingConditions("vlc"));
                }
                p.cbam = Some(CbamParams::seeded(cc, dims.reduction, seed::derive(seed_val, &[10])));
                p.film = Some(FilmParams::seeded(
                    dims.k_conditions,
                    cc,
                    seed::derive(seed_val, &[11]),
                ));
            }
            FusionVariant::ConcatConv => {
                p.out_convs
                    .push(ConvParams::seeded(dims.c_out, cc, 3, seed::derive(seed_val, &[12])));
            }
            FusionVariant::ConcatConvSelfAttn => {
                p.out_convs
                    .push(ConvParams::seeded(dims.c_out, cc, 3, seed::derive(seed_val, &[13])));
                p.self_attn = Some(SelfAttnParams::seeded(dims.c_out, seed::derive(seed_val, &[14])));
            }
            FusionVariant::CbamOnly => {
                p.cbam = Some(CbamParams::seeded(cc, dims.reduction, seed::derive(seed_val, &[15])));
                let depth = dims.cbam_conv_depth.max(1);
                for di in 0..depth {
                    let c_in = cc;
                    let c_out = if di + 1 == depth { dims.c_out } else { cc };
                    p.out_convs.push(ConvParams::seeded(
                        c_out,
                        c_in,
                        3,
                        seed::derive(seed_val, &[16, di as u64]),
                    ));
                }
            }
            FusionVariant::LearnableAlign => {
                p.cross_attn = Some(CrossAttnParams::seeded(
                    dims.c_a,
                    dims.c_b,
                    dims.c_out,
                    dims.c_out,
                    seed::derive(seed_val, &[17]),
                ));
            }
        }
        Ok(p)
    }

    /// Output channel count of the block.
    pub fn output_channels(&self) -> usize {
        match self.variant {
            FusionVariant::Vlc => self.dims.concat_channels(),
            _ => self.dims.c_out,
        }
    }

    /// Visit every tensor in a stable order.
    pub fn for_each(&self, f: &mut dyn FnMut(String, &TensorD)) {
        if let Some(cbam) = &self.cbam {
            visit_mlp("cbam.channel_mlp", &cbam.channel_mlp, f);
            visit_conv("cbam.spatial_conv", &cbam.spatial_conv, f);
        }
        if let Some(film) = &self.film {
            visit_mlp("film.gamma", &film.gamma, f);
            visit_mlp("film.beta", &film.beta, f);
        }
        for (i, conv) in self.out_convs.iter().enumerate() {
            visit_conv(&format!("out_conv.{i}"), conv, f);
        }
        if let Some(attn) = &self.self_attn {
            f("self_attn.wq".into(), &attn.wq);
            f("self_attn.wk".into(), &attn.wk);
            f("self_attn.wv".into(), &attn.wv);
        }
        if let Some(cross) = &self.cross_attn {
            visit_conv("cross_attn.query_proj", &cross.query_proj, f);
            visit_conv("cross_attn.key_proj", &cross.key_proj, f);
            visit_conv("cross_attn.value_proj", &cross.value_proj, f);
            visit_conv("cross_attn.out_proj", &cross.out_proj, f);
        }
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(String, &mut TensorD)) {
        if let Some(cbam) = &mut self.cbam {
            visit_mlp_mut("cbam.channel_mlp", &mut cbam.channel_mlp, f);
            visit_conv_mut("cbam.spatial_conv", &mut cbam.spatial_conv, f);
        }
        if let Some(film) = &mut self.film {
            visit_mlp_mut("film.gamma", &mut film.gamma, f);
            visit_mlp_mut("film.beta", &mut film.beta, f);
        }
        for (i, conv) in self.out_convs.iter_mut().enumerate() {
            visit_conv_mut(&format!("out_conv.{i}"), conv, f);
        }
        if let Some(attn) = &mut self.self_attn {
            f("self_attn.wq".into(), &mut attn.wq);
            f("self_attn.wk".into(), &mut attn.wk);
            f("self_attn.wv".into(), &mut attn.wv);
        }
        if let Some(cross) = &mut self.cross_attn {
            visit_conv_mut("cross_attn.query_proj", &mut cross.query_proj, f);
            visit_conv_mut("cross_attn.key_proj", &mut cross.key_proj, f);
            visit_conv_mut("cross_attn.value_proj", &mut cross.value_proj, f);
            visit_conv_mut("cross_attn.out_proj", &mut cross.out_proj, f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, t| n += t.len());
        n
    }

    /// Set every weight (and bias) to zero; used in tests and identity setups.
    pub fn zero_all(&mut self) {
        self.for_each_mut(&mut |_, t| t.fill(0.0));
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(&mut |_, t| {
            if t.iter().any(|v| !v.is_finite()) {
                ok = false;
            }
        });
        ok
    }
}

fn visit_mlp(prefix: &str, mlp: &MlpParams, f: &mut dyn FnMut(String, &TensorD)) {
    f(format!("{prefix}.w1"), &mlp.w1);
    f(format!("{prefix}.b1"), &mlp.b1);
    f(format!("{prefix}.w2"), &mlp.w2);
    f(format!("{prefix}.b2"), &mlp.b2);
}

fn visit_mlp_mut(prefix: &str, mlp: &mut MlpParams, f: &mut dyn FnMut(String, &mut TensorD)) {
    f(format!("{prefix}.w1"), &mut mlp.w1);
    f(format!("{prefix}.b1"), &mut mlp.b1);
    f(format!("{prefix}.w2"), &mut mlp.w2);
    f(format!("{prefix}.b2"), &mut mlp.b2);
}

fn visit_conv(prefix: &str, conv: &ConvParams, f: &mut dyn FnMut(String, &TensorD)) {
    f(format!("{prefix}.kernel"), &conv.kernel);
    f(format!("{prefix}.bias"), &conv.bias);
}

fn visit_conv_mut(prefix: &str, conv: &mut ConvParams, f: &mut dyn FnMut(String, &mut TensorD)) {
    f(format!("{prefix}.kernel"), &mut conv.kernel);
    f(format!("{prefix}.bias"), &mut conv.bias);
}

fn kaiming(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> TensorD {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}
