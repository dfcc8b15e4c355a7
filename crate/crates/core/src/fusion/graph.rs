//! Tape builders for the fusion blocks. The public forward ops and the toy
//! detector both assemble graphs through these functions, so forward values
//! and analytic gradients always come from one implementation.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

use super::params::FusionBlockParams;
use super::FusionVariant;

/// Parameters registered as tape leaves, in `for_each` order.
pub struct BoundParams {
    names: Vec<String>,
    pub vars: Vec<Var>,
    prefix: String,
}

impl BoundParams {
    /// Register every tensor produced by a visitor as a leaf.
    pub fn bind_with(tape: &mut Tape, visit: impl FnOnce(&mut dyn FnMut(String, &crate::autodiff::TensorD))) -> Self {
        let mut names = Vec::new();
        let mut vars = Vec::new();
        visit(&mut |name, tensor| {
            names.push(name);
            vars.push(tape.leaf(tensor.clone()));
        });
        BoundParams { names, vars, prefix: String::new() }
    }

    pub fn bind(tape: &mut Tape, params: &FusionBlockParams) -> Self {
        Self::bind_with(tape, |f| params.for_each(f))
    }

    pub fn bind_film(tape: &mut Tape, film: &super::params::FilmParams) -> Self {
        Self::bind_with(tape, |f| film.for_each(f))
    }

    /// View that resolves names under an extra prefix, for nested blocks.
    pub fn scoped(&self, prefix: &str) -> BoundParams {
        BoundParams {
            names: self.names.clone(),
            vars: self.vars.clone(),
            prefix: format!("{}{prefix}", self.prefix),
        }
    }

    pub fn get(&self, name: &str) -> Var {
        let full = format!("{}{name}", self.prefix);
        match self.names.iter().position(|n| *n == full) {
            Some(i) => self.vars[i],
            None => panic!("unbound parameter {full}"),
        }
    }

}

/// `relu(x·w1 + b1)·w2 + b2` on a (N, d_in) input.
pub fn mlp(tape: &mut Tape, x: Var, bound: &BoundParams, prefix: &str) -> Var {
    let w1 = bound.get(&format!("{prefix}.w1"));
    let b1 = bound.get(&format!("{prefix}.b1"));
    let w2 = bound.get(&format!("{prefix}.w2"));
    let b2 = bound.get(&format!("{prefix}.b2"));
    let h = tape.matmul(x, w1);
    let h = tape.add(h, b1);
    let h = tape.relu(h);
    let o = tape.matmul(h, w2);
    tape.add(o, b2)
}

pub fn conv(tape: &mut Tape, x: Var, bound: &BoundParams, prefix: &str, stride: usize, pad: usize) -> Var {
    let kernel = bound.get(&format!("{prefix}.kernel"));
    let bias = bound.get(&format!("{prefix}.bias"));
    let c = tape.conv2d(x, kernel, stride, pad);
    tape.add(c, bias)
}

pub fn concat_channels(tape: &mut Tape, a: Var, b: Var) -> Var {
    tape.concat(1, &[a, b])
}

/// Channel attention mask (B,C,1,1): the shared two-layer MLP applied to the
/// global average- and max-pooled descriptors, summed, squashed.
pub fn channel_attention_mask(tape: &mut Tape, f: Var, bound: &BoundParams) -> Var {
    let shape = tape.shape(f).to_vec();
    let (b, c) = (shape[0], shape[1]);
    let avg = tape.global_avg_pool(f);
    let avg = tape.reshape(avg, &[b, c]);
    let max = tape.global_max_pool(f);
    let max = tape.reshape(max, &[b, c]);
    let avg_path = mlp(tape, avg, bound, "cbam.channel_mlp");
    let max_path = mlp(tape, max, bound, "cbam.channel_mlp");
    let sum = tape.add(avg_path, max_path);
    let mask = tape.sigmoid(sum);
    tape.reshape(mask, &[b, c, 1, 1])
}

/// Spatial attention mask (B,1,H,W): 7x7 convolution over the stacked
/// channel-wise average and max maps, squashed.
pub fn spatial_attention_mask(tape: &mut Tape, f: Var, bound: &BoundParams) -> Var {
    let avg = tape.channel_mean(f);
    let max = tape.channel_max(f);
    let stacked = tape.concat(1, &[avg, max]);
    let c = conv(tape, stacked, bound, "cbam.spatial_conv", 1, 3);
    tape.sigmoid(c)
}

/// Sequential channel then spatial attention, each applied multiplicatively.
pub fn cbam(tape: &mut Tape, f: Var, bound: &BoundParams) -> Var {
    let mc = channel_attention_mask(tape, f, bound);
    let f1 = tape.mul(mc, f);
    let ms = spatial_attention_mask(tape, f1, bound);
    tape.mul(ms, f1)
}

/// Condition-driven per-channel affine: `(1 + gamma(r)) ⊙ f + beta(r)`.
pub fn film(tape: &mut Tape, f: Var, r: Var, bound: &BoundParams) -> Var {
    let shape = tape.shape(f).to_vec();
    let (b, c) = (shape[0], shape[1]);
    let gamma = mlp(tape, r, bound, "film.gamma");
    let gamma = tape.reshape(gamma, &[b, c, 1, 1]);
    let beta = mlp(tape, r, bound, "film.beta");
    let beta = tape.reshape(beta, &[b, c, 1, 1]);
    let scale = tape.add_scalar(gamma, 1.0);
    let scaled = tape.mul(scale, f);
    tape.add(scaled, beta)
}

fn self_attention(tape: &mut Tape, x: Var, bound: &BoundParams) -> Var {
    let shape = tape.shape(x).to_vec();
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let flat = tape.reshape(x, &[b, c, h * w]);
    let tokens = tape.transpose_last2(flat); // (B, HW, C)
    let wq = bound.get("self_attn.wq");
    let wk = bound.get("self_attn.wk");
    let wv = bound.get("self_attn.wv");
    let q = tape.linear3(tokens, wq);
    let k = tape.linear3(tokens, wk);
    let v = tape.linear3(tokens, wv);
    let kt = tape.transpose_last2(k); // (B, C, HW)
    let logits = tape.batch_matmul(q, kt);
    let logits = tape.scale(logits, 1.0 / (c as f64).sqrt());
    let attn = tape.softmax_last(logits);
    let mixed = tape.batch_matmul(attn, v); // (B, HW, C)
    let mixed = tape.transpose_last2(mixed);
    let mixed = tape.reshape(mixed, &[b, c, h, w]);
    tape.add(x, mixed)
}

fn cross_attention(tape: &mut Tape, a: Var, b_in: Var, bound: &BoundParams) -> Var {
    let a_shape = tape.shape(a).to_vec();
    let (bb, _, h, w) = (a_shape[0], a_shape[1], a_shape[2], a_shape[3]);
    let b_shape = tape.shape(b_in).to_vec();
    let (hb, wb) = (b_shape[2], b_shape[3]);

    let q4 = conv(tape, a, bound, "cross_attn.query_proj", 1, 0);
    let d = tape.shape(q4)[1];
    let k4 = conv(tape, b_in, bound, "cross_attn.key_proj", 1, 0);
    let v4 = conv(tape, b_in, bound, "cross_attn.value_proj", 1, 0);

    let q3 = tape.reshape(q4, &[bb, d, h * w]);
    let q3 = tape.transpose_last2(q3); // (B, HWa, d)
    let k3 = tape.reshape(k4, &[bb, d, hb * wb]); // (B, d, HWb)
    let v3 = tape.reshape(v4, &[bb, d, hb * wb]);
    let v3 = tape.transpose_last2(v3); // (B, HWb, d)

    let logits = tape.batch_matmul(q3, k3); // (B, HWa, HWb)
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let attn = tape.softmax_last(logits);
    let aligned = tape.batch_matmul(attn, v3); // (B, HWa, d)
    let aligned = tape.transpose_last2(aligned);
    let aligned = tape.reshape(aligned, &[bb, d, h, w]);

    let cat = tape.concat(1, &[aligned, a]);
    conv(tape, cat, bound, "cross_attn.out_proj", 1, 0)
}

/// Assemble the forward graph of a fusion block.
///
/// `r` is the (B, K) condition matrix; required and consumed only by the
/// conditioned variant.
pub fn fuse(
    tape: &mut Tape,
    params: &FusionBlockParams,
    bound: &BoundParams,
    a: Var,
    b: Var,
    r: Option<Var>,
) -> Result<Var> {
    match params.variant {
        FusionVariant::Vlc => {
            let r = r.ok_or(Error::MissingConditions("vlc"))?;
            let cat = concat_channels(tape, a, b);
            let attended = cbam(tape, cat, bound);
            Ok(film(tape, attended, r, bound))
        }
        FusionVariant::ConcatConv => {
            let cat = concat_channels(tape, a, b);
            Ok(conv(tape, cat, bound, "out_conv.0", 1, 1))
        }
        FusionVariant::ConcatConvSelfAttn => {
            let cat = concat_channels(tape, a, b);
            let base = conv(tape, cat, bound, "out_conv.0", 1, 1);
            Ok(self_attention(tape, base, bound))
        }
        FusionVariant::CbamOnly => {
            let cat = concat_channels(tape, a, b);
            let mut x = cbam(tape, cat, bound);
            let depth = params.out_convs.len();
            for i in 0..depth {
                x = conv(tape, x, bound, &format!("out_conv.{i}"), 1, 1);
                if i + 1 < depth {
                    x = tape.relu(x);
                }
            }
            Ok(x)
        }
        FusionVariant::LearnableAlign => Ok(cross_attention(tape, a, b, bound)),
    }
}
