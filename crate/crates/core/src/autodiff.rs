//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is a Wengert list: forward ops append nodes and return [`Var`]
//! handles, [`Tape::backward`] walks the list in reverse and accumulates
//! gradients. The op set is exactly what the fusion blocks and the toy
//! detector need; every backward rule is validated against central finite
//! differences in the test suite.

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub type TensorD = ArrayD<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// Elementwise add with numpy-style broadcasting.
    Add(Var, Var),
    /// Elementwise multiply with numpy-style broadcasting.
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    /// (n,k) x (k,m) -> (n,m)
    MatMul(Var, Var),
    /// (b,n,c) x (c,d) -> (b,n,d); shared weight across the batch axis.
    Linear3(Var, Var),
    /// (b,n,k) x (b,k,m) -> (b,n,m)
    BatchMatMul(Var, Var),
    /// Swap the last two axes of a rank-3 tensor.
    TransposeLast2(Var),
    Reshape(Var),
    Concat {
        axis: usize,
        parts: Vec<Var>,
    },
    SliceAxis {
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    },
    Conv2d {
        x: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    },
    /// (B,C,H,W) -> (B,C,1,1), mean over H*W.
    GlobalAvgPool(Var),
    /// (B,C,H,W) -> (B,C,1,1), max over H*W; saves flat argmax per (b,c).
    GlobalMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    /// (B,C,H,W) -> (B,1,H,W), mean over channels.
    ChannelMean(Var),
    /// (B,C,H,W) -> (B,1,H,W), max over channels; saves channel argmax.
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    /// Softmax over the last axis.
    SoftmaxLast(Var),
    SumAll(Var),
    /// Binary cross-entropy with logits, per-element weights, normalized by
    /// the weight mass.
    BceLoss {
        logits: Var,
        targets: TensorD,
        weights: TensorD,
    },
    /// Cross-entropy over the channel axis of (B,C,H,W) logits against
    /// one-hot targets, averaged over cells selected by `mask` (B,1,H,W).
    CeLoss {
        logits: Var,
        targets: TensorD,
        mask: TensorD,
    },
    /// Mean absolute error over elements selected by a broadcastable mask.
    L1Loss {
        pred: Var,
        target: TensorD,
        mask: TensorD,
    },
}

struct Node {
    value: TensorD,
    op: Op,
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable softplus ln(1 + e^x).
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(Error::InvalidArgument(format!(
                "cannot broadcast shapes {a:?} and {b:?}"
            )));
        }
    }
    Ok(out)
}

/// Sum `grad` back down to `shape` after a broadcast.
fn unbroadcast(grad: &TensorD, shape: &[usize]) -> TensorD {
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(ndarray::Axis(0));
    }
    for (axis, (&gd, &sd)) in g.shape().to_vec().iter().zip(shape.iter()).enumerate() {
        if sd == 1 && gd != 1 {
            let summed = g.sum_axis(ndarray::Axis(axis));
            g = summed.insert_axis(ndarray::Axis(axis));
        }
    }
    g
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by [`Var`]; absent entries never influenced the root.
pub struct Gradients {
    grads: Vec<Option<TensorD>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&TensorD> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the given shape when it is absent.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> TensorD {
        match self.get(v) {
            Some(g) => g.clone(),
            None => TensorD::zeros(IxDyn(shape)),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &TensorD {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: TensorD, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: TensorD) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let shape = broadcast_shape(self.shape(a), self.shape(b)).expect("add: shapes");
        let av = self.nodes[a.0]
            .value
            .broadcast(IxDyn(&shape))
            .expect("add: lhs broadcast")
            .to_owned();
        let bv = self.nodes[b.0]
            .value
            .broadcast(IxDyn(&shape))
            .expect("add: rhs broadcast");
        let out = av + &bv;
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let shape = broadcast_shape(self.shape(a), self.shape(b)).expect("mul: shapes");
        let av = self.nodes[a.0]
            .value
            .broadcast(IxDyn(&shape))
            .expect("mul: lhs broadcast")
            .to_owned();
        let bv = self.nodes[b.0]
            .value
            .broadcast(IxDyn(&shape))
            .expect("mul: rhs broadcast");
        let out = av * &bv;
        self.push(out, Op::Mul(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(|x| -x);
        self.push(out, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.mapv(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(sigmoid_scalar);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.ndim(), 2, "matmul lhs must be rank 2");
        assert_eq!(bv.ndim(), 2, "matmul rhs must be rank 2");
        let (n, k) = (av.shape()[0], av.shape()[1]);
        let (k2, m) = (bv.shape()[0], bv.shape()[1]);
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = TensorD::zeros(IxDyn(&[n, m]));
        {
            let a_s = av.as_slice().unwrap();
            let b_s = bv.as_slice().unwrap();
            let o_s = out.as_slice_mut().unwrap();
            mat_mul_into(a_s, b_s, o_s, n, k, m);
        }
        self.push(out, Op::MatMul(a, b))
    }

    pub fn linear3(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        assert_eq!(xv.ndim(), 3, "linear3 input must be rank 3");
        assert_eq!(wv.ndim(), 2, "linear3 weight must be rank 2");
        let (b, n, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (c2, d) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(c, c2, "linear3 inner dims");
        let mut out = TensorD::zeros(IxDyn(&[b, n, d]));
        {
            let x_s = xv.as_slice().unwrap();
            let w_s = wv.as_slice().unwrap();
            let o_s = out.as_slice_mut().unwrap();
            for bi in 0..b {
                mat_mul_into(
                    &x_s[bi * n * c..(bi + 1) * n * c],
                    w_s,
                    &mut o_s[bi * n * d..(bi + 1) * n * d],
                    n,
                    c,
                    d,
                );
            }
        }
        self.push(out, Op::Linear3(x, w))
    }

    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.ndim(), 3, "batch_matmul lhs must be rank 3");
        assert_eq!(bv.ndim(), 3, "batch_matmul rhs must be rank 3");
        let (bb, n, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let (bb2, k2, m) = (bv.shape()[0], bv.shape()[1], bv.shape()[2]);
        assert_eq!(bb, bb2, "batch_matmul batch dims");
        assert_eq!(k, k2, "batch_matmul inner dims");
        let mut out = TensorD::zeros(IxDyn(&[bb, n, m]));
        {
            let a_s = av.as_slice().unwrap();
            let b_s = bv.as_slice().unwrap();
            let o_s = out.as_slice_mut().unwrap();
            for bi in 0..bb {
                mat_mul_into(
                    &a_s[bi * n * k..(bi + 1) * n * k],
                    &b_s[bi * k * m..(bi + 1) * k * m],
                    &mut o_s[bi * n * m..(bi + 1) * n * m],
                    n,
                    k,
                    m,
                );
            }
        }
        self.push(out, Op::BatchMatMul(a, b))
    }

    pub fn transpose_last2(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        assert_eq!(av.ndim(), 3, "transpose_last2 expects rank 3");
        let out = av
            .clone()
            .permuted_axes(IxDyn(&[0, 2, 1]))
            .as_standard_layout()
            .to_owned();
        self.push(out, Op::TransposeLast2(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let av = &self.nodes[a.0].value;
        let out = av
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count");
        self.push(out, Op::Reshape(a))
    }

    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let out = ndarray::concatenate(ndarray::Axis(axis), &views).expect("concat shapes");
        self.push(
            out.as_standard_layout().to_owned(),
            Op::Concat {
                axis,
                parts: parts.to_vec(),
            },
        )
    }

    pub fn slice_axis(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let out = xv
            .slice_axis(
                ndarray::Axis(axis),
                ndarray::Slice::from(start..start + len),
            )
            .as_standard_layout()
            .to_owned();
        self.push(out, Op::SliceAxis { x, axis, start, len })
    }

    /// 2-D convolution, zero padding, square stride. Input (B,Cin,H,W),
    /// kernel (Cout,Cin,kh,kw), output (B,Cout,Ho,Wo).
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Var {
        let (xv, kv) = (&self.nodes[x.0].value, &self.nodes[kernel.0].value);
        let out = conv2d_forward(xv, kv, stride, pad);
        self.push(out, Op::Conv2d { x, kernel, stride, pad })
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (b, c, h, w) = dims4(xv);
        let hw = (h * w) as f64;
        let mut out = TensorD::zeros(IxDyn(&[b, c, 1, 1]));
        let xs = xv.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();
        for bc in 0..b * c {
            os[bc] = xs[bc * h * w..(bc + 1) * h * w].iter().sum::<f64>() / hw;
        }
        self.push(out, Op::GlobalAvgPool(x))
    }

    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (b, c, h, w) = dims4(xv);
        let mut out = TensorD::zeros(IxDyn(&[b, c, 1, 1]));
        let mut argmax = vec![0usize; b * c];
        let xs = xv.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();
        for bc in 0..b * c {
            let row = &xs[bc * h * w..(bc + 1) * h * w];
            let (mut best_i, mut best) = (0usize, row[0]);
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            os[bc] = best;
            argmax[bc] = best_i;
        }
        self.push(out, Op::GlobalMaxPool { x, argmax })
    }

    pub fn channel_mean(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (b, c, h, w) = dims4(xv);
        let mut out = TensorD::zeros(IxDyn(&[b, 1, h, w]));
        let xs = xv.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();
        for bi in 0..b {
            for p in 0..h * w {
                let mut acc = 0.0;
                for ci in 0..c {
                    acc += xs[(bi * c + ci) * h * w + p];
                }
                os[bi * h * w + p] = acc / c as f64;
            }
        }
        self.push(out, Op::ChannelMean(x))
    }

    pub fn channel_max(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (b, c, h, w) = dims4(xv);
        let mut out = TensorD::zeros(IxDyn(&[b, 1, h, w]));
        let mut argmax = vec![0usize; b * h * w];
        let xs = xv.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();
        for bi in 0..b {
            for p in 0..h * w {
                let (mut best_c, mut best) = (0usize, xs[bi * c * h * w + p]);
                for ci in 1..c {
                    let v = xs[(bi * c + ci) * h * w + p];
                    if v > best {
                        best = v;
                        best_c = ci;
                    }
                }
                os[bi * h * w + p] = best;
                argmax[bi * h * w + p] = best_c;
            }
        }
        self.push(out, Op::ChannelMax { x, argmax })
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let last = xv.shape()[xv.ndim() - 1];
        let mut out = xv.clone();
        {
            let os = out.as_slice_mut().unwrap();
            for row in os.chunks_mut(last) {
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
        }
        self.push(out, Op::SoftmaxLast(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.sum();
        self.push(
            TensorD::from_elem(IxDyn(&[]), s),
            Op::SumAll(x),
        )
    }

    /// Weighted binary cross-entropy with logits; loss = sum(w * bce) / sum(w).
    pub fn bce_loss(&mut self, logits: Var, targets: TensorD, weights: TensorD) -> Var {
        let zv = &self.nodes[logits.0].value;
        assert_eq!(zv.shape(), targets.shape());
        assert_eq!(zv.shape(), weights.shape());
        let wsum: f64 = weights.sum();
        let mut acc = 0.0;
        let zs = zv.as_slice().unwrap();
        let ts = targets.as_slice().unwrap();
        let ws = weights.as_slice().unwrap();
        for i in 0..zs.len() {
            let z = zs[i];
            // max(z,0) - z*t + ln(1+exp(-|z|))
            let l = z.max(0.0) - z * ts[i] + softplus(-z.abs());
            acc += ws[i] * l;
        }
        let loss = if wsum > 0.0 { acc / wsum } else { 0.0 };
        self.push(
            TensorD::from_elem(IxDyn(&[]), loss),
            Op::BceLoss { logits, targets, weights },
        )
    }

    /// Softmax cross-entropy over the channel axis, averaged over cells where
    /// `mask` (B,1,H,W) is nonzero. `targets` is one-hot (B,C,H,W).
    pub fn ce_loss(&mut self, logits: Var, targets: TensorD, mask: TensorD) -> Var {
        let zv = &self.nodes[logits.0].value;
        let (b, c, h, w) = dims4(zv);
        assert_eq!(zv.shape(), targets.shape());
        assert_eq!(mask.shape(), &[b, 1, h, w]);
        let zs = zv.as_slice().unwrap();
        let ts = targets.as_slice().unwrap();
        let ms = mask.as_slice().unwrap();
        let count: f64 = ms.iter().sum();
        let mut acc = 0.0;
        for bi in 0..b {
            for p in 0..h * w {
                if ms[bi * h * w + p] == 0.0 {
                    continue;
                }
                let mut m = f64::NEG_INFINITY;
                for ci in 0..c {
                    m = m.max(zs[(bi * c + ci) * h * w + p]);
                }
                let mut z = 0.0;
                for ci in 0..c {
                    z += (zs[(bi * c + ci) * h * w + p] - m).exp();
                }
                let lse = m + z.ln();
                for ci in 0..c {
                    let t = ts[(bi * c + ci) * h * w + p];
                    if t != 0.0 {
                        acc += ms[bi * h * w + p] * t * (lse - zs[(bi * c + ci) * h * w + p]);
                    }
                }
            }
        }
        let loss = if count > 0.0 { acc / count } else { 0.0 };
        self.push(
            TensorD::from_elem(IxDyn(&[]), loss),
            Op::CeLoss { logits, targets, mask },
        )
    }

    /// Mean absolute error over elements where the broadcast of `mask`
    /// (B,1,H,W) across channels is nonzero.
    pub fn l1_loss(&mut self, pred: Var, target: TensorD, mask: TensorD) -> Var {
        let pv = &self.nodes[pred.0].value;
        let (b, c, h, w) = dims4(pv);
        assert_eq!(pv.shape(), target.shape());
        assert_eq!(mask.shape(), &[b, 1, h, w]);
        let ps = pv.as_slice().unwrap();
        let ts = target.as_slice().unwrap();
        let ms = mask.as_slice().unwrap();
        let count: f64 = ms.iter().map(|m| m * c as f64).sum();
        let mut acc = 0.0;
        for bi in 0..b {
            for ci in 0..c {
                for p in 0..h * w {
                    let m = ms[bi * h * w + p];
                    if m != 0.0 {
                        acc += m * (ps[(bi * c + ci) * h * w + p] - ts[(bi * c + ci) * h * w + p]).abs();
                    }
                }
            }
        }
        let loss = if count > 0.0 { acc / count } else { 0.0 };
        self.push(
            TensorD::from_elem(IxDyn(&[]), loss),
            Op::L1Loss { pred, target, mask },
        )
    }

    /// Accumulate gradients of `root` (a scalar) with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert!(
            self.nodes[root.0].value.len() == 1,
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<TensorD>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(TensorD::from_elem(
            self.nodes[root.0].value.raw_dim(),
            1.0,
        ));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, unbroadcast(&g, self.shape(*a)));
                    accumulate(&mut grads, *b, unbroadcast(&g, self.shape(*b)));
                }
                Op::Mul(a, b) => {
                    let shape = g.shape().to_vec();
                    let av = self.nodes[a.0].value.broadcast(IxDyn(&shape)).unwrap();
                    let bv = self.nodes[b.0].value.broadcast(IxDyn(&shape)).unwrap();
                    let ga = &g * &bv;
                    let gb = &g * &av;
                    accumulate(&mut grads, *a, unbroadcast(&ga, self.shape(*a)));
                    accumulate(&mut grads, *b, unbroadcast(&gb, self.shape(*b)));
                }
                Op::Neg(a) => accumulate(&mut grads, *a, g.mapv(|x| -x)),
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.mapv(|x| x * c)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let xa = &self.nodes[a.0].value;
                    let mut gx = g;
                    gx.zip_mut_with(xa, |gv, &xv| {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, gx);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let mut gx = g;
                    gx.zip_mut_with(y, |gv, &yv| *gv *= yv * (1.0 - yv));
                    accumulate(&mut grads, *a, gx);
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let (n, k) = (av.shape()[0], av.shape()[1]);
                    let m = bv.shape()[1];
                    // dA = dY . B^T ; dB = A^T . dY
                    let mut ga = TensorD::zeros(IxDyn(&[n, k]));
                    let mut gb = TensorD::zeros(IxDyn(&[k, m]));
                    mat_mul_bt_into(
                        g.as_slice().unwrap(),
                        bv.as_slice().unwrap(),
                        ga.as_slice_mut().unwrap(),
                        n,
                        m,
                        k,
                    );
                    mat_mul_at_into(
                        av.as_slice().unwrap(),
                        g.as_slice().unwrap(),
                        gb.as_slice_mut().unwrap(),
                        n,
                        k,
                        m,
                    );
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Linear3(x, w) => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (b, n, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let d = wv.shape()[1];
                    let mut gx = TensorD::zeros(IxDyn(&[b, n, c]));
                    let mut gw = TensorD::zeros(IxDyn(&[c, d]));
                    let gs = g.as_slice().unwrap();
                    let xs = xv.as_slice().unwrap();
                    let ws = wv.as_slice().unwrap();
                    let gxs = gx.as_slice_mut().unwrap();
                    let gws = gw.as_slice_mut().unwrap();
                    for bi in 0..b {
                        mat_mul_bt_into(
                            &gs[bi * n * d..(bi + 1) * n * d],
                            ws,
                            &mut gxs[bi * n * c..(bi + 1) * n * c],
                            n,
                            d,
                            c,
                        );
                        mat_mul_at_acc(
                            &xs[bi * n * c..(bi + 1) * n * c],
                            &gs[bi * n * d..(bi + 1) * n * d],
                            gws,
                            n,
                            c,
                            d,
                        );
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::BatchMatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let (bb, n, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                    let m = bv.shape()[2];
                    let mut ga = TensorD::zeros(IxDyn(&[bb, n, k]));
                    let mut gb = TensorD::zeros(IxDyn(&[bb, k, m]));
                    let gs = g.as_slice().unwrap();
                    let as_ = av.as_slice().unwrap();
                    let bs = bv.as_slice().unwrap();
                    let gas = ga.as_slice_mut().unwrap();
                    let gbs = gb.as_slice_mut().unwrap();
                    for bi in 0..bb {
                        mat_mul_bt_into(
                            &gs[bi * n * m..(bi + 1) * n * m],
                            &bs[bi * k * m..(bi + 1) * k * m],
                            &mut gas[bi * n * k..(bi + 1) * n * k],
                            n,
                            m,
                            k,
                        );
                        mat_mul_at_into(
                            &as_[bi * n * k..(bi + 1) * n * k],
                            &gs[bi * n * m..(bi + 1) * n * m],
                            &mut gbs[bi * k * m..(bi + 1) * k * m],
                            n,
                            k,
                            m,
                        );
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::TransposeLast2(a) => {
                    let gx = g
                        .permuted_axes(IxDyn(&[0, 2, 1]))
                        .as_standard_layout()
                        .to_owned();
                    accumulate(&mut grads, *a, gx);
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a).to_vec();
                    let gx = g.into_shape_with_order(IxDyn(&shape)).unwrap();
                    accumulate(&mut grads, *a, gx);
                }
                Op::Concat { axis, parts } => {
                    let mut start = 0usize;
                    for p in parts {
                        let len = self.shape(*p)[*axis];
                        let gp = g
                            .slice_axis(
                                ndarray::Axis(*axis),
                                ndarray::Slice::from(start..start + len),
                            )
                            .as_standard_layout()
                            .to_owned();
                        accumulate(&mut grads, *p, gp);
                        start += len;
                    }
                }
                Op::SliceAxis { x, axis, start, len } => {
                    let mut gx = TensorD::zeros(IxDyn(self.shape(*x)));
                    gx.slice_axis_mut(
                        ndarray::Axis(*axis),
                        ndarray::Slice::from(*start..*start + *len),
                    )
                    .assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Conv2d { x, kernel, stride, pad } => {
                    let (gx, gk) = conv2d_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[kernel.0].value,
                        &g,
                        *stride,
                        *pad,
                    );
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *kernel, gk);
                }
                Op::GlobalAvgPool(x) => {
                    let (b, c, h, w) = dims4(&self.nodes[x.0].value);
                    let hw = (h * w) as f64;
                    let mut gx = TensorD::zeros(IxDyn(&[b, c, h, w]));
                    let gs = g.as_slice().unwrap();
                    let gxs = gx.as_slice_mut().unwrap();
                    for bc in 0..b * c {
                        let gv = gs[bc] / hw;
                        for p in 0..h * w {
                            gxs[bc * h * w + p] = gv;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::GlobalMaxPool { x, argmax } => {
                    let (b, c, h, w) = dims4(&self.nodes[x.0].value);
                    let mut gx = TensorD::zeros(IxDyn(&[b, c, h, w]));
                    let gs = g.as_slice().unwrap();
                    let gxs = gx.as_slice_mut().unwrap();
                    for bc in 0..b * c {
                        gxs[bc * h * w + argmax[bc]] = gs[bc];
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ChannelMean(x) => {
                    let (b, c, h, w) = dims4(&self.nodes[x.0].value);
                    let mut gx = TensorD::zeros(IxDyn(&[b, c, h, w]));
                    let gs = g.as_slice().unwrap();
                    let gxs = gx.as_slice_mut().unwrap();
                    for bi in 0..b {
                        for ci in 0..c {
                            for p in 0..h * w {
                                gxs[(bi * c + ci) * h * w + p] = gs[bi * h * w + p] / c as f64;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ChannelMax { x, argmax } => {
                    let (b, c, h, w) = dims4(&self.nodes[x.0].value);
                    let mut gx = TensorD::zeros(IxDyn(&[b, c, h, w]));
                    let gs = g.as_slice().unwrap();
                    let gxs = gx.as_slice_mut().unwrap();
                    for bi in 0..b {
                        for p in 0..h * w {
                            let ci = argmax[bi * h * w + p];
                            gxs[(bi * c + ci) * h * w + p] = gs[bi * h * w + p];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxLast(x) => {
                    let y = &self.nodes[i].value;
                    let last = y.shape()[y.ndim() - 1];
                    let mut gx = g.clone();
                    {
                        let ys = y.as_slice().unwrap();
                        let gxs = gx.as_slice_mut().unwrap();
                        for (row_g, row_y) in gxs.chunks_mut(last).zip(ys.chunks(last)) {
                            let dot: f64 =
                                row_g.iter().zip(row_y.iter()).map(|(a, b)| a * b).sum();
                            for (gv, &yv) in row_g.iter_mut().zip(row_y.iter()) {
                                *gv = yv * (*gv - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    let gv = g.as_slice().unwrap()[0];
                    let gx = TensorD::from_elem(IxDyn(self.shape(*x)), gv);
                    accumulate(&mut grads, *x, gx);
                }
                Op::BceLoss { logits, targets, weights } => {
                    let gv = g.as_slice().unwrap()[0];
                    let zv = &self.nodes[logits.0].value;
                    let wsum: f64 = weights.sum();
                    let mut gx = TensorD::zeros(IxDyn(zv.shape()));
                    if wsum > 0.0 {
                        let zs = zv.as_slice().unwrap();
                        let ts = targets.as_slice().unwrap();
                        let ws = weights.as_slice().unwrap();
                        let gxs = gx.as_slice_mut().unwrap();
                        for i in 0..zs.len() {
                            gxs[i] = gv * ws[i] * (sigmoid_scalar(zs[i]) - ts[i]) / wsum;
                        }
                    }
                    accumulate(&mut grads, *logits, gx);
                }
                Op::CeLoss { logits, targets, mask } => {
                    let gv = g.as_slice().unwrap()[0];
                    let zv = &self.nodes[logits.0].value;
                    let (b, c, h, w) = dims4(zv);
                    let count: f64 = mask.sum();
                    let mut gx = TensorD::zeros(IxDyn(zv.shape()));
                    if count > 0.0 {
                        let zs = zv.as_slice().unwrap();
                        let ts = targets.as_slice().unwrap();
                        let ms = mask.as_slice().unwrap();
                        let gxs = gx.as_slice_mut().unwrap();
                        for bi in 0..b {
                            for p in 0..h * w {
                                let m = ms[bi * h * w + p];
                                if m == 0.0 {
                                    continue;
                                }
                                let mut mx = f64::NEG_INFINITY;
                                for ci in 0..c {
                                    mx = mx.max(zs[(bi * c + ci) * h * w + p]);
                                }
                                let mut z = 0.0;
                                for ci in 0..c {
                                    z += (zs[(bi * c + ci) * h * w + p] - mx).exp();
                                }
                                for ci in 0..c {
                                    let idx = (bi * c + ci) * h * w + p;
                                    let prob = (zs[idx] - mx).exp() / z;
                                    gxs[idx] = gv * m * (prob - ts[idx]) / count;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, gx);
                }
                Op::L1Loss { pred, target, mask } => {
                    let gv = g.as_slice().unwrap()[0];
                    let pv = &self.nodes[pred.0].value;
                    let (b, c, h, w) = dims4(pv);
                    let count: f64 = mask.sum() * c as f64;
                    let mut gx = TensorD::zeros(IxDyn(pv.shape()));
                    if count > 0.0 {
                        let ps = pv.as_slice().unwrap();
                        let ts = target.as_slice().unwrap();
                        let ms = mask.as_slice().unwrap();
                        let gxs = gx.as_slice_mut().unwrap();
                        for bi in 0..b {
                            for ci in 0..c {
                                for p in 0..h * w {
                                    let m = ms[bi * h * w + p];
                                    if m != 0.0 {
                                        let idx = (bi * c + ci) * h * w + p;
                                        gxs[idx] =
                                            gv * m * (ps[idx] - ts[idx]).signum() / count;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *pred, gx);
                }
            }
        }

        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<TensorD>], v: Var, g: TensorD) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn dims4(t: &TensorD) -> (usize, usize, usize, usize) {
    assert_eq!(t.ndim(), 4, "expected rank-4 tensor, got {:?}", t.shape());
    (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3])
}

/// o = a (n,k) . b (k,m)
fn mat_mul_into(a: &[f64], b: &[f64], o: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut o[i * m..(i + 1) * m];
        o_row.fill(0.0);
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * m..(kk + 1) * m];
            for (ov, &bv) in o_row.iter_mut().zip(b_row.iter()) {
                *ov += av * bv;
            }
        }
    }
}

/// o = a (n,m) . b^T where b is (k,m); result (n,k)
fn mat_mul_bt_into(a: &[f64], b: &[f64], o: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let a_row = &a[i * m..(i + 1) * m];
        let o_row = &mut o[i * k..(i + 1) * k];
        for (kk, ov) in o_row.iter_mut().enumerate() {
            let b_row = &b[kk * m..(kk + 1) * m];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            *ov = acc;
        }
    }
}

/// o = a^T . b where a is (n,k), b is (n,m); result (k,m)
fn mat_mul_at_into(a: &[f64], b: &[f64], o: &mut [f64], n: usize, k: usize, m: usize) {
    o.fill(0.0);
    mat_mul_at_acc(a, b, o, n, k, m);
}

fn mat_mul_at_acc(a: &[f64], b: &[f64], o: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * m..(i + 1) * m];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let o_row = &mut o[kk * m..(kk + 1) * m];
            for (ov, &bv) in o_row.iter_mut().zip(b_row.iter()) {
                *ov += av * bv;
            }
        }
    }
}

fn conv2d_forward(x: &TensorD, kernel: &TensorD, stride: usize, pad: usize) -> TensorD {
    let (b, cin, h, w) = dims4(x);
    let (cout, cin_k, kh, kw) = dims4(kernel);
    assert_eq!(cin, cin_k, "conv2d channel mismatch");
    assert!(stride >= 1);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = TensorD::zeros(IxDyn(&[b, cout, ho, wo]));
    let xs = x.as_slice().unwrap();
    let ks = kernel.as_slice().unwrap();
    let os = out.as_slice_mut().unwrap();
    for bi in 0..b {
        for co in 0..cout {
            let o_base = (bi * cout + co) * ho * wo;
            for ci in 0..cin {
                let x_base = (bi * cin + ci) * h * w;
                let k_base = (co * cin_k + ci) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kv = ks[k_base + ky * kw + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = x_base + iy as usize * w;
                            let o_row = o_base + oy * wo;
                            for ox in 0..wo {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                os[o_row + ox] += kv * xs[row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward(
    x: &TensorD,
    kernel: &TensorD,
    grad_out: &TensorD,
    stride: usize,
    pad: usize,
) -> (TensorD, TensorD) {
    let (b, cin, h, w) = dims4(x);
    let (cout, _, kh, kw) = dims4(kernel);
    let (gb, gc, ho, wo) = dims4(grad_out);
    assert_eq!((gb, gc), (b, cout));
    let mut gx = TensorD::zeros(IxDyn(&[b, cin, h, w]));
    let mut gk = TensorD::zeros(IxDyn(kernel.shape()));
    let xs = x.as_slice().unwrap();
    let ks = kernel.as_slice().unwrap();
    let gs = grad_out.as_slice().unwrap();
    let gxs = gx.as_slice_mut().unwrap();
    let gks = gk.as_slice_mut().unwrap();
    for bi in 0..b {
        for co in 0..cout {
            let g_base = (bi * cout + co) * ho * wo;
            for ci in 0..cin {
                let x_base = (bi * cin + ci) * h * w;
                let k_base = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kv = ks[k_base + ky * kw + kx];
                        let mut k_grad = 0.0;
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = x_base + iy as usize * w;
                            let g_row = g_base + oy * wo;
                            for ox in 0..wo {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let gv = gs[g_row + ox];
                                k_grad += gv * xs[row + ix as usize];
                                gxs[row + ix as usize] += gv * kv;
                            }
                        }
                        gks[k_base + ky * kw + kx] += k_grad;
                    }
                }
            }
        }
    }
    (gx, gk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> TensorD {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        TensorD::from_shape_vec(IxDyn(shape), data).unwrap()
    }

    /// Central finite differences of a scalar-valued builder with respect to
    /// one leaf, compared entrywise against tape gradients.
    fn check_grad(
        shapes: &[Vec<usize>],
        build: impl Fn(&mut Tape, &[Var]) -> Var,
        seed: u64,
    ) {
        let mut rng = crate::seed::rng(seed, &[0xad]);
        let leaves: Vec<TensorD> = shapes.iter().map(|s| rand_tensor(s, &mut rng)).collect();

        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
        let root = build(&mut tape, &vars);
        assert_eq!(tape.value(root).len(), 1, "builder must produce a scalar");
        let grads = tape.backward(root);

        let eps = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[li], leaf.shape());
            for idx in 0..leaf.len() {
                let eval = |delta: f64| {
                    let mut perturbed = leaves.clone();
                    perturbed[li].as_slice_mut().unwrap()[idx] += delta;
                    let mut t = Tape::new();
                    let vs: Vec<Var> = perturbed.into_iter().map(|l| t.leaf(l)).collect();
                    let r = build(&mut t, &vs);
                    t.value(r).as_slice().unwrap()[0]
                };
                let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let a = analytic.as_slice().unwrap()[idx];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < 1e-4,
                    "leaf {li} idx {idx}: analytic {a}, numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn grad_add_mul_broadcast() {
        check_grad(
            &[vec![2, 3, 2, 2], vec![2, 3, 1, 1], vec![1, 1, 2, 2]],
            |t, v| {
                let m = t.mul(v[0], v[1]);
                let s = t.add(m, v[2]);
                t.sum_all(s)
            },
            1,
        );
    }

    #[test]
    fn grad_sigmoid_relu() {
        check_grad(
            &[vec![3, 4]],
            |t, v| {
                let s = t.sigmoid(v[0]);
                let r = t.relu(s);
                let sc = t.scale(r, 2.5);
                t.sum_all(sc)
            },
            2,
        );
    }

    #[test]
    fn grad_matmul_chain() {
        check_grad(
            &[vec![3, 4], vec![4, 2], vec![2, 5]],
            |t, v| {
                let ab = t.matmul(v[0], v[1]);
                let r = t.relu(ab);
                let abc = t.matmul(r, v[2]);
                t.sum_all(abc)
            },
            3,
        );
    }

    #[test]
    fn grad_linear3_and_batch_matmul() {
        check_grad(
            &[vec![2, 3, 4], vec![4, 3], vec![2, 3, 3]],
            |t, v| {
                let q = t.linear3(v[0], v[1]);
                let qt = t.transpose_last2(q);
                let a = t.batch_matmul(v[2], qt);
                let sm = t.softmax_last(a);
                let w = t.mul(sm, v[2]);
                t.sum_all(w)
            },
            4,
        );
    }

    #[test]
    fn grad_softmax_weighted() {
        // Weight the softmax output so its gradient is nontrivial.
        check_grad(
            &[vec![2, 2, 3], vec![2, 2, 3]],
            |t, v| {
                let sm = t.softmax_last(v[0]);
                let w = t.mul(sm, v[1]);
                t.sum_all(w)
            },
            5,
        );
    }

    #[test]
    fn grad_conv2d_stride1_pad1() {
        check_grad(
            &[vec![1, 2, 4, 4], vec![3, 2, 3, 3]],
            |t, v| {
                let c = t.conv2d(v[0], v[1], 1, 1);
                let s = t.sigmoid(c);
                t.sum_all(s)
            },
            6,
        );
    }

    #[test]
    fn grad_conv2d_stride2() {
        check_grad(
            &[vec![2, 2, 5, 5], vec![2, 2, 3, 3]],
            |t, v| {
                let c = t.conv2d(v[0], v[1], 2, 1);
                t.sum_all(c)
            },
            7,
        );
    }

    #[test]
    fn grad_conv2d_7x7() {
        check_grad(
            &[vec![1, 2, 6, 6], vec![1, 2, 7, 7]],
            |t, v| {
                let c = t.conv2d(v[0], v[1], 1, 3);
                let s = t.sigmoid(c);
                t.sum_all(s)
            },
            8,
        );
    }

    #[test]
    fn grad_pools() {
        check_grad(
            &[vec![2, 3, 3, 3], vec![2, 3, 1, 1]],
            |t, v| {
                let avg = t.global_avg_pool(v[0]);
                let mx = t.global_max_pool(v[0]);
                let s = t.add(avg, mx);
                let w = t.mul(s, v[1]);
                t.sum_all(w)
            },
            9,
        );
    }

    #[test]
    fn grad_channel_pools() {
        check_grad(
            &[vec![2, 4, 3, 3], vec![2, 1, 3, 3]],
            |t, v| {
                let avg = t.channel_mean(v[0]);
                let mx = t.channel_max(v[0]);
                let cat = t.concat(1, &[avg, mx]);
                let sl = t.slice_axis(cat, 1, 0, 2);
                let r = t.reshape(sl, &[2, 2, 9]);
                let r4 = t.reshape(r, &[2, 2, 3, 3]);
                let half = t.slice_axis(r4, 1, 1, 1);
                let w = t.mul(half, v[1]);
                t.sum_all(w)
            },
            10,
        );
    }

    #[test]
    fn grad_concat_slice() {
        check_grad(
            &[vec![1, 2, 2, 2], vec![1, 3, 2, 2]],
            |t, v| {
                let cat = t.concat(1, &[v[0], v[1]]);
                let sl = t.slice_axis(cat, 1, 1, 3);
                let sg = t.sigmoid(sl);
                t.sum_all(sg)
            },
            11,
        );
    }

    #[test]
    fn grad_bce_loss() {
        let mut rng = crate::seed::rng(12, &[0xbc]);
        let targets = rand_tensor(&[2, 1, 3, 3], &mut rng).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
        let weights = rand_tensor(&[2, 1, 3, 3], &mut rng).mapv(|x| if x > -0.5 { 1.0 } else { 0.0 });
        check_grad(
            &[vec![2, 1, 3, 3]],
            move |t, v| t.bce_loss(v[0], targets.clone(), weights.clone()),
            12,
        );
    }

    #[test]
    fn grad_ce_loss() {
        let mut rng = crate::seed::rng(13, &[0xce]);
        let mut targets = TensorD::zeros(IxDyn(&[2, 3, 2, 2]));
        let mut mask = TensorD::zeros(IxDyn(&[2, 1, 2, 2]));
        for bi in 0..2 {
            for p in 0..4 {
                if rng.random_range(0.0..1.0) < 0.6 {
                    let cls = rng.random_range(0..3usize);
                    targets.as_slice_mut().unwrap()[(bi * 3 + cls) * 4 + p] = 1.0;
                    mask.as_slice_mut().unwrap()[bi * 4 + p] = 1.0;
                }
            }
        }
        check_grad(
            &[vec![2, 3, 2, 2]],
            move |t, v| t.ce_loss(v[0], targets.clone(), mask.clone()),
            13,
        );
    }

    #[test]
    fn grad_l1_loss() {
        let mut rng = crate::seed::rng(14, &[0x11]);
        let target = rand_tensor(&[2, 4, 2, 2], &mut rng);
        let mask = rand_tensor(&[2, 1, 2, 2], &mut rng).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
        check_grad(
            &[vec![2, 4, 2, 2]],
            move |t, v| t.l1_loss(v[0], target.clone(), mask.clone()),
            14,
        );
    }

    #[test]
    fn sigmoid_stable_at_extremes() {
        assert_eq!(sigmoid_scalar(1e4), 1.0);
        assert_eq!(sigmoid_scalar(-1e4), 0.0);
        assert!(sigmoid_scalar(750.0).is_finite());
        assert!(sigmoid_scalar(-750.0).is_finite());
        assert!((sigmoid_scalar(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn broadcast_shape_rules() {
        assert_eq!(broadcast_shape(&[2, 1, 3], &[2, 4, 3]).unwrap(), vec![2, 4, 3]);
        assert_eq!(broadcast_shape(&[3], &[2, 4, 3]).unwrap(), vec![2, 4, 3]);
        assert!(broadcast_shape(&[2, 2], &[3, 2]).is_err());
    }
}
