//! Independent scalar-loop reference implementations of every fusion
//! operation. Everything here is written directly against raw arrays with
//! nested loops — none of the library's tape machinery — so agreement with
//! the library is evidence, not tautology.

use ndarray::{Array2, Array4};
use vlcfusion::fusion::{CrossAttnParams, FilmParams, FusionBlockParams, MlpParams, SelfAttnParams};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dims(x: &Array4<f64>) -> (usize, usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2], s[3])
}

/// Two-layer MLP on a single row vector.
fn mlp_row(mlp: &MlpParams, x: &[f64]) -> Vec<f64> {
    let (d_in, d_hidden, d_out) = mlp.dims();
    assert_eq!(x.len(), d_in);
    let mut hidden = vec![0.0; d_hidden];
    for h in 0..d_hidden {
        let mut acc = mlp.b1[[0, h]];
        for (i, &xi) in x.iter().enumerate() {
            acc += xi * mlp.w1[[i, h]];
        }
        hidden[h] = acc.max(0.0);
    }
    let mut out = vec![0.0; d_out];
    for (o, out_v) in out.iter_mut().enumerate() {
        let mut acc = mlp.b2[[0, o]];
        for (h, &hv) in hidden.iter().enumerate() {
            acc += hv * mlp.w2[[h, o]];
        }
        *out_v = acc;
    }
    out
}

pub fn channel_attention_oracle(f: &Array4<f64>, params: &FusionBlockParams) -> Array4<f64> {
    let (b, c, h, w) = dims(f);
    let mlp = &params.cbam.as_ref().unwrap().channel_mlp;
    let mut mask = Array4::zeros((b, c, 1, 1));
    for bi in 0..b {
        let mut avg = vec![0.0; c];
        let mut max = vec![f64::NEG_INFINITY; c];
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = f[[bi, ci, y, x]];
                    avg[ci] += v;
                    if v > max[ci] {
                        max[ci] = v;
                    }
                }
            }
            avg[ci] /= (h * w) as f64;
        }
        let avg_path = mlp_row(mlp, &avg);
        let max_path = mlp_row(mlp, &max);
        for ci in 0..c {
            mask[[bi, ci, 0, 0]] = sigmoid(avg_path[ci] + max_path[ci]);
        }
    }
    mask
}

pub fn spatial_attention_oracle(f: &Array4<f64>, params: &FusionBlockParams) -> Array4<f64> {
    let (b, c, h, w) = dims(f);
    let conv = &params.cbam.as_ref().unwrap().spatial_conv;
    let mut mask = Array4::zeros((b, 1, h, w));
    for bi in 0..b {
        // Channel-wise average and max maps.
        let mut avg = vec![vec![0.0; w]; h];
        let mut mx = vec![vec![f64::NEG_INFINITY; w]; h];
        for y in 0..h {
            for x in 0..w {
                for ci in 0..c {
                    let v = f[[bi, ci, y, x]];
                    avg[y][x] += v;
                    if v > mx[y][x] {
                        mx[y][x] = v;
                    }
                }
                avg[y][x] /= c as f64;
            }
        }
        // 7x7 convolution, zero padding 3, over the two stacked maps.
        for y in 0..h {
            for x in 0..w {
                let mut acc = conv.bias[[0, 0, 0, 0]];
                for ky in 0..7 {
                    for kx in 0..7 {
                        let iy = y as isize + ky as isize - 3;
                        let ix = x as isize + kx as isize - 3;
                        if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                            continue;
                        }
                        acc += conv.kernel[[0, 0, ky, kx]] * avg[iy as usize][ix as usize];
                        acc += conv.kernel[[0, 1, ky, kx]] * mx[iy as usize][ix as usize];
                    }
                }
                mask[[bi, 0, y, x]] = sigmoid(acc);
            }
        }
    }
    mask
}

pub fn cbam_oracle(f: &Array4<f64>, params: &FusionBlockParams) -> Array4<f64> {
    let (b, c, h, w) = dims(f);
    let channel_mask = channel_attention_oracle(f, params);
    let mut refined = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    refined[[bi, ci, y, x]] = f[[bi, ci, y, x]] * channel_mask[[bi, ci, 0, 0]];
                }
            }
        }
    }
    let spatial_mask = spatial_attention_oracle(&refined, params);
    let mut out = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[[bi, ci, y, x]] = refined[[bi, ci, y, x]] * spatial_mask[[bi, 0, y, x]];
                }
            }
        }
    }
    out
}

pub fn film_oracle(f: &Array4<f64>, r: &Array2<f64>, film: &FilmParams) -> Array4<f64> {
    let (b, c, h, w) = dims(f);
    let mut out = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        let row: Vec<f64> = (0..r.shape()[1]).map(|k| r[[bi, k]]).collect();
        let gamma = mlp_row(&film.gamma, &row);
        let beta = mlp_row(&film.beta, &row);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[[bi, ci, y, x]] = (1.0 + gamma[ci]) * f[[bi, ci, y, x]] + beta[ci];
                }
            }
        }
    }
    out
}

pub fn concat_oracle(a: &Array4<f64>, b: &Array4<f64>) -> Array4<f64> {
    let (bb, ca, h, w) = dims(a);
    let cb = b.shape()[1];
    let mut out = Array4::zeros((bb, ca + cb, h, w));
    for bi in 0..bb {
        for y in 0..h {
            for x in 0..w {
                for ci in 0..ca {
                    out[[bi, ci, y, x]] = a[[bi, ci, y, x]];
                }
                for ci in 0..cb {
                    out[[bi, ca + ci, y, x]] = b[[bi, ci, y, x]];
                }
            }
        }
    }
    out
}

/// General convolution with bias, square kernel, stride 1.
pub fn conv_oracle(
    x: &Array4<f64>,
    kernel: &ndarray::ArrayD<f64>,
    bias: &ndarray::ArrayD<f64>,
    pad: usize,
) -> Array4<f64> {
    let (b, cin, h, w) = dims(x);
    let cout = kernel.shape()[0];
    let k = kernel.shape()[2];
    let mut out = Array4::zeros((b, cout, h + 2 * pad + 1 - k, w + 2 * pad + 1 - k));
    let (ho, wo) = (out.shape()[2], out.shape()[3]);
    for bi in 0..b {
        for co in 0..cout {
            for y in 0..ho {
                for x_ in 0..wo {
                    let mut acc = bias[[0, co, 0, 0]];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - pad as isize;
                                let ix = x_ as isize + kx as isize - pad as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += kernel[[co, ci, ky, kx]]
                                    * x[[bi, ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                    out[[bi, co, y, x_]] = acc;
                }
            }
        }
    }
    out
}

pub fn concat_conv_oracle(
    a: &Array4<f64>,
    b: &Array4<f64>,
    params: &FusionBlockParams,
) -> Array4<f64> {
    let cat = concat_oracle(a, b);
    let conv = &params.out_convs[0];
    conv_oracle(&cat, &conv.kernel, &conv.bias, 1)
}

fn softmax_row(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

pub fn self_attention_oracle(
    a: &Array4<f64>,
    b: &Array4<f64>,
    params: &FusionBlockParams,
) -> Array4<f64> {
    let base = concat_conv_oracle(a, b, params);
    let attn: &SelfAttnParams = params.self_attn.as_ref().unwrap();
    let (bb, c, h, w) = dims(&base);
    let n = h * w;
    let mut out = base.clone();
    for bi in 0..bb {
        // Token p is the channel vector at position p.
        let token = |p: usize| -> Vec<f64> {
            (0..c).map(|ci| base[[bi, ci, p / w, p % w]]).collect()
        };
        let project = |p: usize, m: &ndarray::ArrayD<f64>| -> Vec<f64> {
            let t = token(p);
            (0..c)
                .map(|o| (0..c).map(|i| t[i] * m[[i, o]]).sum::<f64>())
                .collect()
        };
        for p in 0..n {
            let q = project(p, &attn.wq);
            let mut logits = vec![0.0; n];
            for (p2, logit) in logits.iter_mut().enumerate() {
                let k = project(p2, &attn.wk);
                *logit = q.iter().zip(&k).map(|(x, y)| x * y).sum::<f64>() / (c as f64).sqrt();
            }
            softmax_row(&mut logits);
            for ci in 0..c {
                let mut mixed = 0.0;
                for (p2, weight) in logits.iter().enumerate() {
                    let v = project(p2, &attn.wv);
                    mixed += weight * v[ci];
                }
                out[[bi, ci, p / w, p % w]] += mixed;
            }
        }
    }
    out
}

pub fn cross_attention_oracle(
    a: &Array4<f64>,
    b: &Array4<f64>,
    params: &FusionBlockParams,
) -> Array4<f64> {
    let cross: &CrossAttnParams = params.cross_attn.as_ref().unwrap();
    let (bb, ca, h, w) = dims(a);
    let (_, cb, hb, wb) = dims(b);
    let d = cross.query_proj.kernel.shape()[0];
    let c_out = cross.out_proj.kernel.shape()[0];
    let nb = hb * wb;
    let mut out = Array4::zeros((bb, c_out, h, w));
    for bi in 0..bb {
        let project_a = |y: usize, x: usize| -> Vec<f64> {
            (0..d)
                .map(|o| {
                    let mut acc = cross.query_proj.bias[[0, o, 0, 0]];
                    for ci in 0..ca {
                        acc += cross.query_proj.kernel[[o, ci, 0, 0]] * a[[bi, ci, y, x]];
                    }
                    acc
                })
                .collect()
        };
        let project_b = |p: usize, conv: &vlcfusion::fusion::ConvParams| -> Vec<f64> {
            (0..d)
                .map(|o| {
                    let mut acc = conv.bias[[0, o, 0, 0]];
                    for ci in 0..cb {
                        acc += conv.kernel[[o, ci, 0, 0]] * b[[bi, ci, p / wb, p % wb]];
                    }
                    acc
                })
                .collect()
        };
        for y in 0..h {
            for x in 0..w {
                let q = project_a(y, x);
                let mut logits = vec![0.0; nb];
                for (p, logit) in logits.iter_mut().enumerate() {
                    let k = project_b(p, &cross.key_proj);
                    *logit = q.iter().zip(&k).map(|(u, v)| u * v).sum::<f64>() / (d as f64).sqrt();
                }
                softmax_row(&mut logits);
                let mut aligned = vec![0.0; d];
                for (p, weight) in logits.iter().enumerate() {
                    let v = project_b(p, &cross.value_proj);
                    for (av, vv) in aligned.iter_mut().zip(&v) {
                        *av += weight * vv;
                    }
                }
                for co in 0..c_out {
                    let mut acc = cross.out_proj.bias[[0, co, 0, 0]];
                    for (di, &av) in aligned.iter().enumerate() {
                        acc += cross.out_proj.kernel[[co, di, 0, 0]] * av;
                    }
                    for ci in 0..ca {
                        acc += cross.out_proj.kernel[[co, d + ci, 0, 0]] * a[[bi, ci, y, x]];
                    }
                    out[[bi, co, y, x]] = acc;
                }
            }
        }
    }
    out
}
