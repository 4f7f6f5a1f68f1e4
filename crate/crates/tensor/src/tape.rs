use std::cell::{Ref, RefCell};

use smallvec::SmallVec;

use crate::conv::{self, ConvCfg};
use crate::error::{Result, TensorError};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Handle into a [`Tape`]. Only valid for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    value: Tensor,
    parents: SmallVec<[usize; 2]>,
    op: Op,
    needs_grad: bool,
}

enum Op {
    Leaf,
    Add,
    Mul,
    Scale(f64),
    AddScalar,
    MatMul,
    Transpose,
    Reshape,
    GatherRows(Vec<usize>),
    ConcatRows,
    ConcatLast,
    SliceRows { start: usize },
    SliceLast { start: usize },
    Relu,
    Gelu,
    Tanh,
    Sigmoid,
    SoftmaxLast,
    LayerNorm { eps: f64 },
    Dropout { mask: Vec<f64> },
    Conv2d(ConvCfg),
    DepthwiseConv2d(ConvCfg),
    GlobalAvgPool,
    MaxPoolSet { arg: Vec<u8> },
    SumAll,
    MeanAll,
    MseLoss { target: Vec<f64> },
    BceWithLogits { target: Vec<f64> },
    SoftmaxCeLoss { class: usize },
}

/// Wengert list for reverse-mode differentiation. Build a fresh tape per
/// forward pass; `backward` fills gradients for every node that needs them.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, parents: SmallVec<[usize; 2]>, op: Op) -> Var {
        let needs_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].needs_grad)
        };
        self.push_with_grad(value, parents, op, needs_grad)
    }

    fn push_with_grad(
        &self,
        value: Tensor,
        parents: SmallVec<[usize; 2]>,
        op: Op,
        needs_grad: bool,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push_with_grad(t, SmallVec::new(), Op::Leaf, false)
    }

    /// Trainable leaf; `backward` produces its gradient.
    pub fn param(&self, t: Tensor) -> Var {
        self.push_with_grad(t, SmallVec::new(), Op::Leaf, true)
    }

    /// Non-trainable input that still receives a gradient (saliency probes).
    pub fn input(&self, t: Tensor) -> Var {
        self.push_with_grad(t, SmallVec::new(), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn value_cloned(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Gradient of the last `backward` loss wrt `v`, if one was produced.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let g = grads.get(v.0)?.as_ref()?;
        let shape = self.shape_of(v);
        Some(Tensor::new(shape, g.clone()).expect("grad shape matches value"))
    }

    // ---- binary elementwise with trailing broadcast ----

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<(Vec<usize>, usize)> {
        let nodes = self.nodes.borrow();
        let sa = nodes[a.0].value.shape().to_vec();
        let sb = nodes[b.0].value.shape();
        let la = nodes[a.0].value.len();
        let lb = nodes[b.0].value.len();
        let suffix_ok = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb;
        if !(suffix_ok || lb == 1) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa,
                right: sb.to_vec(),
            });
        }
        debug_assert!(la % lb == 0);
        Ok((sa, lb))
    }

    /// Elementwise sum; `b` may be a trailing-shape (or scalar) broadcast.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (shape, lb) = self.broadcast_check("add", a, b)?;
        let out = {
            let nodes = self.nodes.borrow();
            let ad = nodes[a.0].value.data();
            let bd = nodes[b.0].value.data();
            let mut out = Vec::with_capacity(ad.len());
            if lb == 1 {
                let bv = bd[0];
                out.extend(ad.iter().map(|x| x + bv));
            } else {
                out.extend(ad.iter().enumerate().map(|(i, x)| x + bd[i % lb]));
            }
            Tensor::new(shape, out)?
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0, b.0]), Op::Add))
    }

    /// Elementwise product; `b` may be a trailing-shape (or scalar) broadcast.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (shape, lb) = self.broadcast_check("mul", a, b)?;
        let out = {
            let nodes = self.nodes.borrow();
            let ad = nodes[a.0].value.data();
            let bd = nodes[b.0].value.data();
            let mut out = Vec::with_capacity(ad.len());
            if lb == 1 {
                let bv = bd[0];
                out.extend(ad.iter().map(|x| x * bv));
            } else {
                out.extend(ad.iter().enumerate().map(|(i, x)| x * bd[i % lb]));
            }
            Tensor::new(shape, out)?
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0, b.0]), Op::Mul))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            Tensor::new(v.shape().to_vec(), v.iter().map(|x| x * c).collect())?
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0]), Op::Scale(c)))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            Tensor::new(v.shape().to_vec(), v.iter().map(|x| x + c).collect())?
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0]), Op::AddScalar))
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let tb = &nodes[b.0].value;
            if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    left: ta.shape().to_vec(),
                    right: tb.shape().to_vec(),
                });
            }
            let (m, k) = (ta.shape()[0], ta.shape()[1]);
            let n = tb.shape()[1];
            Tensor::new(vec![m, n], matmul_nn(ta.data(), tb.data(), m, k, n))?
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0, b.0]), Op::MatMul))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            if t.rank() != 2 {
                return Err(TensorError::BadShape {
                    op: "transpose",
                    shape: t.shape().to_vec(),
                    reason: "expected rank 2".into(),
                });
            }
            let (m, n) = (t.shape()[0], t.shape()[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = t.data()[i * n + j];
                }
            }
            Tensor::new(vec![n, m], out)?
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0]), Op::Transpose))
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value_cloned(a).reshape(shape)?;
        Ok(self.push(out, SmallVec::from_slice(&[a.0]), Op::Reshape))
    }

    /// Row lookup from a 2-D table, e.g. embedding fetch. Backward scatter-adds.
    pub fn gather_rows(&self, table: Var, indices: &[usize]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[table.0].value;
            if t.rank() != 2 {
                return Err(TensorError::BadShape {
                    op: "gather_rows",
                    shape: t.shape().to_vec(),
                    reason: "expected rank 2".into(),
                });
            }
            let (rows, cols) = (t.shape()[0], t.shape()[1]);
            let mut out = Vec::with_capacity(indices.len() * cols);
            for &i in indices {
                if i >= rows {
                    return Err(TensorError::Invalid(format!(
                        "gather_rows: index {i} out of {rows} rows"
                    )));
                }
                out.extend_from_slice(t.row(i));
            }
            Tensor::new(vec![indices.len(), cols], out)?
        };
        Ok(self.push(
            out,
            SmallVec::from_slice(&[table.0]),
            Op::GatherRows(indices.to_vec()),
        ))
    }

    /// Stack 2-D blocks with equal column counts on top of each other.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("concat_rows: no inputs".into()));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let cols = nodes[parts[0].0].value.shape()[1];
            let mut rows = 0;
            let mut data = Vec::new();
            for &p in parts {
                let t = &nodes[p.0].value;
                if t.rank() != 2 || t.shape()[1] != cols {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat_rows",
                        left: nodes[parts[0].0].value.shape().to_vec(),
                        right: t.shape().to_vec(),
                    });
                }
                rows += t.shape()[0];
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![rows, cols], data)?
        };
        let parents: SmallVec<[usize; 2]> = parts.iter().map(|v| v.0).collect();
        Ok(self.push(out, parents, Op::ConcatRows))
    }

    /// Concatenate along the last dimension; leading dimensions must match.
    pub fn concat_last(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("concat_last: no inputs".into()));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts[0].0].value.shape().to_vec();
            let lead = &first[..first.len() - 1];
            let lead_n: usize = lead.iter().product();
            let mut widths = Vec::with_capacity(parts.len());
            for &p in parts {
                let s = nodes[p.0].value.shape();
                if s.len() != first.len() || s[..s.len() - 1] != *lead {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat_last",
                        left: first.clone(),
                        right: s.to_vec(),
                    });
                }
                widths.push(s[s.len() - 1]);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(lead_n * total);
            for row in 0..lead_n {
                for (pi, &p) in parts.iter().enumerate() {
                    let w = widths[pi];
                    let d = nodes[p.0].value.data();
                    data.extend_from_slice(&d[row * w..(row + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Tensor::new(shape, data)?
        };
        let parents: SmallVec<[usize; 2]> = parts.iter().map(|v| v.0).collect();
        Ok(self.push(out, parents, Op::ConcatLast))
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            if t.rank() != 2 || start + len > t.shape()[0] {
                return Err(TensorError::BadShape {
                    op: "slice_rows",
                    shape: t.shape().to_vec(),
                    reason: format!("slice {start}..{}", start + len),
                });
            }
            let cols = t.shape()[1];
            Tensor::new(
                vec![len, cols],
                t.data()[start * cols..(start + len) * cols].to_vec(),
            )?
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0]), Op::SliceRows { start }))
    }

    pub fn slice_last(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            let last = *t.shape().last().unwrap();
            if start + len > last {
                return Err(TensorError::BadShape {
                    op: "slice_last",
                    shape: t.shape().to_vec(),
                    reason: format!("slice {start}..{}", start + len),
                });
            }
            let lead: usize = t.len() / last;
            let mut data = Vec::with_capacity(lead * len);
            for row in 0..lead {
                let base = row * last + start;
                data.extend_from_slice(&t.data()[base..base + len]);
            }
            let mut shape = t.shape().to_vec();
            *shape.last_mut().unwrap() = len;
            Tensor::new(shape, data)?
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0]), Op::SliceLast { start }))
    }

    // ---- activations ----

    fn unary(&self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            t.check_finite(name)?;
            Tensor::new(t.shape().to_vec(), t.iter().map(|&x| f(x)).collect())?
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0]), op))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu, "relu", |x| x.max(0.0))
    }

    pub fn gelu(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Gelu, "gelu", gelu_exact)
    }

    pub fn tanh_op(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh, "tanh", f64::tanh)
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid, "sigmoid", sigmoid_stable)
    }

    /// Row-wise softmax over the last dimension, max-shifted for stability.
    pub fn softmax_last(&self, a: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            t.check_finite("softmax_lastdim")?;
            let last = *t.shape().last().unwrap();
            let mut data = vec![0.0; t.len()];
            for (row, chunk) in t.data().chunks_exact(last).enumerate() {
                let m = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let base = row * last;
                let mut sum = 0.0;
                for (i, &x) in chunk.iter().enumerate() {
                    let e = (x - m).exp();
                    data[base + i] = e;
                    sum += e;
                }
                for v in &mut data[base..base + last] {
                    *v /= sum;
                }
            }
            Tensor::new(t.shape().to_vec(), data)?
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0]), Op::SoftmaxLast))
    }

    /// Normalize each last-dim row to zero mean, unit variance (no affine).
    pub fn layer_norm(&self, a: Var, eps: f64) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            t.check_finite("layer_norm")?;
            let last = *t.shape().last().unwrap();
            let mut data = vec![0.0; t.len()];
            for (row, chunk) in t.data().chunks_exact(last).enumerate() {
                let mean = chunk.iter().sum::<f64>() / last as f64;
                let var = chunk.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / last as f64;
                let inv = 1.0 / (var + eps).sqrt();
                let base = row * last;
                for (i, &x) in chunk.iter().enumerate() {
                    data[base + i] = (x - mean) * inv;
                }
            }
            Tensor::new(t.shape().to_vec(), data)?
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0]), Op::LayerNorm { eps }))
    }

    /// Inverted dropout with a caller-supplied deterministic stream. Identity
    /// when not training or p == 0.
    pub fn dropout(&self, a: Var, p: f64, stream: &mut Stream, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid(format!("dropout p {p} outside [0,1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let (out, mask) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            let mask: Vec<f64> = (0..t.len())
                .map(|_| if stream.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                .collect();
            let data: Vec<f64> = t.iter().zip(&mask).map(|(x, m)| x * m).collect();
            (Tensor::new(t.shape().to_vec(), data)?, mask)
        };
        Ok(self.push(out, SmallVec::from_slice(&[a.0]), Op::Dropout { mask }))
    }

    // ---- structured layers ----

    pub fn conv2d(&self, x: Var, w: Var, cfg: ConvCfg) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            conv::conv2d_forward(&nodes[x.0].value, &nodes[w.0].value, cfg)?
        };
        Ok(self.push(out, SmallVec::from_slice(&[x.0, w.0]), Op::Conv2d(cfg)))
    }

    pub fn depthwise_conv2d(&self, x: Var, w: Var, cfg: ConvCfg) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            conv::depthwise_forward(&nodes[x.0].value, &nodes[w.0].value, cfg)?
        };
        Ok(self.push(
            out,
            SmallVec::from_slice(&[x.0, w.0]),
            Op::DepthwiseConv2d(cfg),
        ))
    }

    /// [B,H,W,C] -> [B,C], averaging over the spatial grid.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            if t.rank() != 4 {
                return Err(TensorError::BadShape {
                    op: "global_avg_pool",
                    shape: t.shape().to_vec(),
                    reason: "expected rank 4 NHWC".into(),
                });
            }
            let (b, h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
            let hw = (h * w) as f64;
            let mut out = vec![0.0; b * c];
            for bi in 0..b {
                for pos in 0..h * w {
                    let base = (bi * h * w + pos) * c;
                    for ch in 0..c {
                        out[bi * c + ch] += t.data()[base + ch];
                    }
                }
            }
            for v in &mut out {
                *v /= hw;
            }
            Tensor::new(vec![b, c], out)?
        };
        Ok(self.push(out, SmallVec::from_slice(&[x.0]), Op::GlobalAvgPool))
    }

    /// Elementwise maximum across same-shaped inputs; ties go to the earliest.
    pub fn max_pool_set(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Invalid("max_pool_set: no inputs".into()));
        }
        if parts.len() > u8::MAX as usize {
            return Err(TensorError::Invalid("max_pool_set: too many inputs".into()));
        }
        let (out, arg) = {
            let nodes = self.nodes.borrow();
            let shape = nodes[parts[0].0].value.shape().to_vec();
            for &p in parts {
                if nodes[p.0].value.shape() != shape.as_slice() {
                    return Err(TensorError::ShapeMismatch {
                        op: "max_pool_set",
                        left: shape,
                        right: nodes[p.0].value.shape().to_vec(),
                    });
                }
            }
            let n = nodes[parts[0].0].value.len();
            let mut data = nodes[parts[0].0].value.data().to_vec();
            let mut arg = vec![0u8; n];
            for (pi, &p) in parts.iter().enumerate().skip(1) {
                let d = nodes[p.0].value.data();
                for i in 0..n {
                    if d[i] > data[i] {
                        data[i] = d[i];
                        arg[i] = pi as u8;
                    }
                }
            }
            (Tensor::new(shape, data)?, arg)
        };
        let parents: SmallVec<[usize; 2]> = parts.iter().map(|v| v.0).collect();
        Ok(self.push(out, parents, Op::MaxPoolSet { arg }))
    }

    // ---- reductions and losses ----

    pub fn sum_all(&self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum::<f64>();
        Ok(self.push(Tensor::scalar(s), SmallVec::from_slice(&[a.0]), Op::SumAll))
    }

    pub fn mean_all(&self, a: Var) -> Result<Var> {
        let (s, n) = {
            let v = self.value(a);
            (v.iter().sum::<f64>(), v.len())
        };
        Ok(self.push(
            Tensor::scalar(s / n as f64),
            SmallVec::from_slice(&[a.0]),
            Op::MeanAll,
        ))
    }

    /// Mean squared error against a constant target; scalar output.
    pub fn mse_loss(&self, pred: Var, target: &[f64]) -> Result<Var> {
        let loss = {
            let nodes = self.nodes.borrow();
            let t = &nodes[pred.0].value;
            if t.len() != target.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "mse_loss",
                    left: t.shape().to_vec(),
                    right: vec![target.len()],
                });
            }
            t.check_finite("mse_loss")?;
            let n = target.len() as f64;
            t.iter()
                .zip(target)
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>()
                / n
        };
        Ok(self.push(
            Tensor::scalar(loss),
            SmallVec::from_slice(&[pred.0]),
            Op::MseLoss {
                target: target.to_vec(),
            },
        ))
    }

    /// Numerically stable mean binary cross-entropy on raw logits.
    pub fn bce_with_logits(&self, logits: Var, target: &[f64]) -> Result<Var> {
        let loss = {
            let nodes = self.nodes.borrow();
            let t = &nodes[logits.0].value;
            if t.len() != target.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "bce_with_logits",
                    left: t.shape().to_vec(),
                    right: vec![target.len()],
                });
            }
            t.check_finite("bce_with_logits")?;
            let n = target.len() as f64;
            t.iter()
                .zip(target)
                .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
                .sum::<f64>()
                / n
        };
        Ok(self.push(
            Tensor::scalar(loss),
            SmallVec::from_slice(&[logits.0]),
            Op::BceWithLogits {
                target: target.to_vec(),
            },
        ))
    }

    /// Softmax cross-entropy of a logit vector against one hot class index.
    pub fn softmax_ce_loss(&self, logits: Var, class: usize) -> Result<Var> {
        let loss = {
            let nodes = self.nodes.borrow();
            let t = &nodes[logits.0].value;
            if class >= t.len() {
                return Err(TensorError::Invalid(format!(
                    "softmax_ce_loss: class {class} out of {}",
                    t.len()
                )));
            }
            t.check_finite("softmax_ce_loss")?;
            let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + t.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
            lse - t.data()[class]
        };
        Ok(self.push(
            Tensor::scalar(loss),
            SmallVec::from_slice(&[logits.0]),
            Op::SoftmaxCeLoss { class },
        ))
    }

    // ---- reverse pass ----

    /// Reverse sweep from a scalar loss. Fills gradients for every node with
    /// `needs_grad` on a path to the loss; read them with [`Tape::grad`].
    pub fn backward(&self, loss: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        let ln = &nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(TensorError::BadShape {
                op: "backward",
                shape: ln.value.shape().to_vec(),
                reason: "loss must be scalar".into(),
            });
        }
        let lv = ln.value.data()[0];
        if !lv.is_finite() {
            return Err(TensorError::NonFinite {
                op: "backward",
                index: 0,
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.needs_grad || grads[id].is_none() {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(id);
            let g = hi[0].as_ref().unwrap();
            let mut sink = |parent: usize, add: ParentGrad| {
                if !nodes[parent].needs_grad {
                    return;
                }
                let dst = lo[parent].get_or_insert_with(|| vec![0.0; nodes[parent].value.len()]);
                match add {
                    ParentGrad::Owned(v) => {
                        for (d, s) in dst.iter_mut().zip(v) {
                            *d += s;
                        }
                    }
                }
            };
            backward_op(node, &nodes, g, &mut sink);
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }
}

enum ParentGrad {
    Owned(Vec<f64>),
}

fn backward_op(
    node: &Node,
    nodes: &[Node],
    g: &[f64],
    sink: &mut dyn FnMut(usize, ParentGrad),
) {
    let pv = |i: usize| -> &Tensor { &nodes[node.parents[i]].value };
    match &node.op {
        Op::Leaf => {}
        Op::Add => {
            let lb = pv(1).len();
            sink(node.parents[0], ParentGrad::Owned(g.to_vec()));
            let mut db = vec![0.0; lb];
            for (i, &gv) in g.iter().enumerate() {
                db[i % lb] += gv;
            }
            sink(node.parents[1], ParentGrad::Owned(db));
        }
        Op::Mul => {
            let a = pv(0).data();
            let b = pv(1).data();
            let lb = b.len();
            let da: Vec<f64> = g.iter().enumerate().map(|(i, &gv)| gv * b[i % lb]).collect();
            sink(node.parents[0], ParentGrad::Owned(da));
            let mut db = vec![0.0; lb];
            for (i, &gv) in g.iter().enumerate() {
                db[i % lb] += gv * a[i];
            }
            sink(node.parents[1], ParentGrad::Owned(db));
        }
        Op::Scale(c) => {
            sink(
                node.parents[0],
                ParentGrad::Owned(g.iter().map(|x| x * c).collect()),
            );
        }
        Op::AddScalar | Op::Reshape => {
            sink(node.parents[0], ParentGrad::Owned(g.to_vec()));
        }
        Op::MatMul => {
            let a = pv(0);
            let b = pv(1);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            sink(
                node.parents[0],
                ParentGrad::Owned(matmul_nt(g, b.data(), m, n, k)),
            );
            sink(
                node.parents[1],
                ParentGrad::Owned(matmul_tn(a.data(), g, m, k, n)),
            );
        }
        Op::Transpose => {
            let out_shape = node.value.shape();
            let (n, m) = (out_shape[0], out_shape[1]);
            let mut da = vec![0.0; m * n];
            for j in 0..n {
                for i in 0..m {
                    da[i * n + j] = g[j * m + i];
                }
            }
            sink(node.parents[0], ParentGrad::Owned(da));
        }
        Op::GatherRows(indices) => {
            let t = pv(0);
            let cols = t.shape()[1];
            let mut dt = vec![0.0; t.len()];
            for (row, &src) in indices.iter().enumerate() {
                for c in 0..cols {
                    dt[src * cols + c] += g[row * cols + c];
                }
            }
            sink(node.parents[0], ParentGrad::Owned(dt));
        }
        Op::ConcatRows => {
            let mut offset = 0;
            for pi in 0..node.parents.len() {
                let len = pv(pi).len();
                sink(
                    node.parents[pi],
                    ParentGrad::Owned(g[offset..offset + len].to_vec()),
                );
                offset += len;
            }
        }
        Op::ConcatLast => {
            let total = *node.value.shape().last().unwrap();
            let lead = node.value.len() / total;
            let mut offset = 0;
            for pi in 0..node.parents.len() {
                let w = *pv(pi).shape().last().unwrap();
                let mut dp = Vec::with_capacity(lead * w);
                for row in 0..lead {
                    let base = row * total + offset;
                    dp.extend_from_slice(&g[base..base + w]);
                }
                sink(node.parents[pi], ParentGrad::Owned(dp));
                offset += w;
            }
        }
        Op::SliceRows { start } => {
            let t = pv(0);
            let cols = t.shape()[1];
            let mut dt = vec![0.0; t.len()];
            dt[start * cols..start * cols + g.len()].copy_from_slice(g);
            sink(node.parents[0], ParentGrad::Owned(dt));
        }
        Op::SliceLast { start } => {
            let t = pv(0);
            let last = *t.shape().last().unwrap();
            let w = *node.value.shape().last().unwrap();
            let lead = t.len() / last;
            let mut dt = vec![0.0; t.len()];
            for row in 0..lead {
                let src = row * w;
                let dst = row * last + start;
                dt[dst..dst + w].copy_from_slice(&g[src..src + w]);
            }
            sink(node.parents[0], ParentGrad::Owned(dt));
        }
        Op::Relu => {
            let x = pv(0).data();
            sink(
                node.parents[0],
                ParentGrad::Owned(
                    g.iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect(),
                ),
            );
        }
        Op::Gelu => {
            let x = pv(0).data();
            sink(
                node.parents[0],
                ParentGrad::Owned(g.iter().zip(x).map(|(&gv, &xv)| gv * gelu_grad(xv)).collect()),
            );
        }
        Op::Tanh => {
            let y = node.value.data();
            sink(
                node.parents[0],
                ParentGrad::Owned(g.iter().zip(y).map(|(&gv, &yv)| gv * (1.0 - yv * yv)).collect()),
            );
        }
        Op::Sigmoid => {
            let y = node.value.data();
            sink(
                node.parents[0],
                ParentGrad::Owned(
                    g.iter()
                        .zip(y)
                        .map(|(&gv, &yv)| gv * yv * (1.0 - yv))
                        .collect(),
                ),
            );
        }
        Op::SoftmaxLast => {
            let y = node.value.data();
            let last = *node.value.shape().last().unwrap();
            let mut dx = vec![0.0; y.len()];
            for row in 0..y.len() / last {
                let base = row * last;
                let yr = &y[base..base + last];
                let gr = &g[base..base + last];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for i in 0..last {
                    dx[base + i] = yr[i] * (gr[i] - dot);
                }
            }
            sink(node.parents[0], ParentGrad::Owned(dx));
        }
        Op::LayerNorm { eps } => {
            let x = pv(0).data();
            let last = *node.value.shape().last().unwrap();
            let y = node.value.data();
            let mut dx = vec![0.0; x.len()];
            for row in 0..x.len() / last {
                let base = row * last;
                let xr = &x[base..base + last];
                let yr = &y[base..base + last];
                let gr = &g[base..base + last];
                let mean = xr.iter().sum::<f64>() / last as f64;
                let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / last as f64;
                let inv = 1.0 / (var + eps).sqrt();
                let g_mean = gr.iter().sum::<f64>() / last as f64;
                let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / last as f64;
                for i in 0..last {
                    dx[base + i] = inv * (gr[i] - g_mean - yr[i] * gy_mean);
                }
            }
            sink(node.parents[0], ParentGrad::Owned(dx));
        }
        Op::Dropout { mask } => {
            sink(
                node.parents[0],
                ParentGrad::Owned(g.iter().zip(mask).map(|(a, b)| a * b).collect()),
            );
        }
        Op::Conv2d(cfg) => {
            let (dx, dw) = conv::conv2d_backward(pv(0), pv(1), g, *cfg)
                .expect("backward geometry matches forward");
            sink(node.parents[0], ParentGrad::Owned(dx));
            sink(node.parents[1], ParentGrad::Owned(dw));
        }
        Op::DepthwiseConv2d(cfg) => {
            let (dx, dw) = conv::depthwise_backward(pv(0), pv(1), g, *cfg)
                .expect("backward geometry matches forward");
            sink(node.parents[0], ParentGrad::Owned(dx));
            sink(node.parents[1], ParentGrad::Owned(dw));
        }
        Op::GlobalAvgPool => {
            let t = pv(0);
            let (b, h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
            let hw = (h * w) as f64;
            let mut dx = vec![0.0; t.len()];
            for bi in 0..b {
                for pos in 0..h * w {
                    let base = (bi * h * w + pos) * c;
                    for ch in 0..c {
                        dx[base + ch] = g[bi * c + ch] / hw;
                    }
                }
            }
            sink(node.parents[0], ParentGrad::Owned(dx));
        }
        Op::MaxPoolSet { arg } => {
            for pi in 0..node.parents.len() {
                let mut dp = vec![0.0; node.value.len()];
                let mut any = false;
                for (i, &a) in arg.iter().enumerate() {
                    if a as usize == pi {
                        dp[i] = g[i];
                        any = true;
                    }
                }
                if any {
                    sink(node.parents[pi], ParentGrad::Owned(dp));
                }
            }
        }
        Op::SumAll => {
            sink(
                node.parents[0],
                ParentGrad::Owned(vec![g[0]; pv(0).len()]),
            );
        }
        Op::MeanAll => {
            let n = pv(0).len();
            sink(
                node.parents[0],
                ParentGrad::Owned(vec![g[0] / n as f64; n]),
            );
        }
        Op::MseLoss { target } => {
            let x = pv(0).data();
            let n = target.len() as f64;
            sink(
                node.parents[0],
                ParentGrad::Owned(
                    x.iter()
                        .zip(target)
                        .map(|(&p, &y)| g[0] * 2.0 * (p - y) / n)
                        .collect(),
                ),
            );
        }
        Op::BceWithLogits { target } => {
            let z = pv(0).data();
            let n = target.len() as f64;
            sink(
                node.parents[0],
                ParentGrad::Owned(
                    z.iter()
                        .zip(target)
                        .map(|(&zv, &y)| g[0] * (sigmoid_stable(zv) - y) / n)
                        .collect(),
                ),
            );
        }
        Op::SoftmaxCeLoss { class } => {
            let z = pv(0).data();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|&v| (v - m).exp()).sum();
            let mut dz: Vec<f64> = z.iter().map(|&v| g[0] * (v - m).exp() / sum).collect();
            dz[*class] -= g[0];
            sink(node.parents[0], ParentGrad::Owned(dz));
        }
    }
}

fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// a [m,n] times b^T where b is [k,n]: result [m,k].
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for p in 0..n {
                acc += arow[p] * brow[p];
            }
            out[i * k + j] = acc;
        }
    }
    out
}

/// a^T times b where a is [m,k], b is [m,n]: result [k,n].
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for p in 0..m {
        let arow = &a[p * k..(p + 1) * k];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..k {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// gelu(x) = 0.5 x (1 + erf(x / sqrt(2))), the exact (non-tanh-approximate) form.
pub fn gelu_exact(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

pub fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trivial_activation_values() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![0.0, 1.0, -1.0]).unwrap());
        assert_eq!(tape.value(tape.gelu(x).unwrap()).data()[0], 0.0);
        assert_eq!(tape.value(tape.tanh_op(x).unwrap()).data()[0], 0.0);
        assert_eq!(tape.value(tape.sigmoid(x).unwrap()).data()[0], 0.5);
        let z = tape.leaf(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let s = tape.softmax_last(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let i2 = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let v = tape.leaf(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
        let y = tape.matmul(i2, v).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_reports_both() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        match tape.matmul(a, b) {
            Err(TensorError::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn concat_last_of_two_1x2() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
        let c = tape.concat_last(&[a, b]).unwrap();
        assert_eq!(tape.shape_of(c), vec![1, 4]);
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_grad_of_ax_is_outer() {
        // y = A x, loss = sum(y). dL/dA = outer(1, x).
        let tape = Tape::new();
        let a = tape.param(Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap());
        let x = tape.leaf(Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.matmul(a, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        let da = tape.grad(a).unwrap();
        assert_eq!(da.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let tape = Tape::new();
        let x = tape.leaf(
            Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap(),
        );
        let s = tape.softmax_last(x).unwrap();
        let v = tape.value_cloned(s);
        for r in 0..2 {
            let sum: f64 = v.row(r).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
            assert!(v.row(r).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let tape = Tape::new();
        let x = tape.leaf(
            Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, -3.0, 0.0, 5.0, 9.0]).unwrap(),
        );
        let y = tape.layer_norm(x, 1e-8).unwrap();
        let v = tape.value_cloned(y);
        for r in 0..2 {
            let row = v.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() <= 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-5, "var {var}");
        }
    }

    #[test]
    fn dropout_zero_p_is_identity() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mut s = Stream::new(1, "drop", 0);
        let y = tape.dropout(x, 0.0, &mut s, true).unwrap();
        assert_eq!(y, x);
        let y = tape.dropout(x, 0.5, &mut s, false).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_mask_scales_kept_entries() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(vec![1000], 1.0));
        let mut s = Stream::new(9, "drop", 2);
        let y = tape.dropout(x, 0.25, &mut s, true).unwrap();
        let v = tape.value_cloned(y);
        let kept = v.iter().filter(|&&x| x > 0.0).count();
        for &val in v.iter() {
            assert!(val == 0.0 || (val - 1.0 / 0.75).abs() < 1e-12);
        }
        assert!((650..=850).contains(&kept), "kept {kept}");
    }

    #[test]
    fn global_avg_pool_of_constant_map() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(vec![1, 9, 15, 3], 2.5));
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.shape_of(y), vec![1, 3]);
        for &v in tape.value(y).iter() {
            assert_abs_diff_eq!(v, 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn max_pool_set_ties_go_to_first() {
        let tape = Tape::new();
        let a = tape.param(Tensor::new(vec![2], vec![1.0, 5.0]).unwrap());
        let b = tape.param(Tensor::new(vec![2], vec![1.0, 7.0]).unwrap());
        let m = tape.max_pool_set(&[a, b]).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 7.0]);
        let loss = tape.sum_all(m).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn non_finite_input_is_domain_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).unwrap());
        assert!(matches!(
            tape.relu(x),
            Err(TensorError::NonFinite { .. })
        ));
        assert!(matches!(
            tape.softmax_last(x),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let tape = Tape::new();
        let x = tape.param(Tensor::zeros(vec![3]));
        let y = tape.relu(x).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn grad_accumulates_over_shared_subexpression() {
        // loss = sum(x * x): gradient 2x via two paths through Mul.
        let tape = Tape::new();
        let x = tape.param(Tensor::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }
}
