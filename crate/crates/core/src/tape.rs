//! Reverse-mode differentiation over a flat operation tape.
//!
//! A `Tape` records one forward computation as a list of nodes in the order
//! they were built, which makes the list topologically sorted by
//! construction. `backward` walks the list once in reverse, pushing each
//! node's upstream gradient into its inputs. Replaying the same tape twice
//! produces bit-identical gradients: every loop below runs in a fixed order
//! and floating-point accumulation order never depends on thread timing or
//! hash iteration.
//!
//! All convolutions use the cross-correlation convention (no kernel flip);
//! the naive reference implementations in the test suite use the same
//! convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Spatial padding mode. `Valid` uses only fully covered positions;
/// `Same` zero-pads so the output grid is ceil(input / stride) long,
/// splitting the padding evenly with the extra cell at the high end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConvKind {
    One,
    Two,
    Three,
}

impl ConvKind {
    fn op_name(self) -> &'static str {
        match self {
            ConvKind::One => "conv1d",
            ConvKind::Two => "conv2d",
            ConvKind::Three => "conv3d",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv {
        kind: ConvKind,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: Padding,
    },
    BiasAdd {
        input: NodeId,
        bias: NodeId,
    },
    Relu {
        input: NodeId,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    /// Per-index linear map over the last axis: out[..., i] = sum_k W[i,k] in[..., k].
    IndexLinear {
        input: NodeId,
        weight: NodeId,
    },
    /// Order-preserving bilinear fusion of a grid [U,V,N] with a sequence
    /// [T,M] into [U,V,T,N*M]; entry (u,v,t,i*M+j) = x[u,v,i] * z[t,j].
    /// Registered as a single primitive with the analytic backward
    /// (d/dx picks up z, d/dz picks up x, summed over every index where
    /// the feature vector is reused) rather than as composed ops.
    BilinearFuse {
        x: NodeId,
        z: NodeId,
    },
    /// Index-wise concatenation [U,V,N] x [T,M] -> [U,V,T,N+M].
    ConcatIndex {
        x: NodeId,
        z: NodeId,
    },
    /// Sum of outer products over all indices -> [N*M].
    OrderlessPool {
        x: NodeId,
        z: NodeId,
    },
    /// [U,V,T,C] -> [C], arithmetic mean over the index grid.
    GlobalAvgPool {
        input: NodeId,
    },
    Flatten {
        input: NodeId,
    },
    Sum {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
    },
    L1Penalty {
        weights: Vec<NodeId>,
        lambda: f64,
    },
}

enum Val<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Val<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Val::Owned(t) => t,
            Val::Borrowed(t) => t,
        }
    }
}

struct Node<'p> {
    op: Op,
    value: Val<'p>,
}

/// Gradients for every node of a tape, indexed by `NodeId`. Nodes that do
/// not lie on a path to the loss keep their zero initialization.
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }
}

pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest |pre-activation| feeding any ReLU on this tape, or
    /// +inf when the tape has none. Finite-difference checks use this
    /// to skip inputs that sit on a ReLU kink, where the loss is not
    /// differentiable and central differences are meaningless.
    pub fn min_relu_input_abs(&self) -> f64 {
        let mut min = f64::INFINITY;
        for node in &self.nodes {
            if let Op::Relu { input } = &node.op {
                for v in &self.nodes[input.0].value.get().data {
                    min = min.min(v.abs());
                }
            }
        }
        min
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Val::Owned(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Record an input tensor (owned by the tape).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Record a parameter tensor by reference; avoids copying large
    /// weight matrices into every per-sample tape.
    pub fn param(&mut self, value: &'p Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Val::Borrowed(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    // ── convolutions ─────────────────────────────────────────────────

    /// input [L, C], kernel [K, C, F] -> [L', F].
    pub fn conv1d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        self.conv(ConvKind::One, input, kernel, stride, padding)
    }

    /// input [H, W, C], kernel [KH, KW, C, F] -> [H', W', F].
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        self.conv(ConvKind::Two, input, kernel, stride, padding)
    }

    /// input [U, V, T, C], kernel [KU, KV, KT, C, F] -> [U', V', T', F].
    pub fn conv3d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        self.conv(ConvKind::Three, input, kernel, stride, padding)
    }

    fn conv(
        &mut self,
        kind: ConvKind,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let geom = conv_geometry(
            kind,
            &self.value(input).shape,
            &self.value(kernel).shape,
            stride,
            padding,
        )?;
        let out = conv_forward(self.value(input), self.value(kernel), &geom);
        Ok(self.push(
            Op::Conv {
                kind,
                input,
                kernel,
                stride,
                padding,
            },
            out,
        ))
    }

    // ── pointwise and linear ops ─────────────────────────────────────

    /// input [..., C] plus bias [C], broadcast over leading axes.
    pub fn bias_add(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let b = self.value(bias);
        if b.rank() != 1 || x.rank() < 1 || *x.shape.last().unwrap() != b.shape[0] {
            return Err(Error::shape(
                "bias_add",
                format!(
                    "channel axis: input {:?} vs bias {:?}",
                    x.shape, b.shape
                ),
            ));
        }
        let c = b.shape[0];
        let mut out = x.clone();
        for block in out.data.chunks_mut(c) {
            for (o, bi) in block.iter_mut().zip(&b.data) {
                *o += bi;
            }
        }
        Ok(self.push(Op::BiasAdd { input, bias }, out))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let out = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|v| v.max(0.0)).collect(),
        };
        self.push(Op::Relu { input }, out)
    }

    /// input [n], weight [m, n], bias [m] -> [m]; computes W x + b.
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        if x.rank() != 1 || w.rank() != 2 || b.rank() != 1 {
            return Err(Error::shape(
                "dense",
                format!(
                    "expected ranks 1/2/1, got input {:?}, weight {:?}, bias {:?}",
                    x.shape, w.shape, b.shape
                ),
            ));
        }
        let (m, n) = (w.shape[0], w.shape[1]);
        if x.shape[0] != n {
            return Err(Error::shape(
                "dense",
                format!("input axis: weight expects {}, input has {}", n, x.shape[0]),
            ));
        }
        if b.shape[0] != m {
            return Err(Error::shape(
                "dense",
                format!("output axis: weight yields {}, bias has {}", m, b.shape[0]),
            ));
        }
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] = dot(&w.data[i * n..(i + 1) * n], &x.data) + b.data[i];
        }
        Ok(self.push(
            Op::Dense {
                input,
                weight,
                bias,
            },
            Tensor::from_vec(out),
        ))
    }

    /// input [..., D], weight [N, D] -> [..., N]; the same linear map
    /// applied independently at every index of the leading grid.
    pub fn index_linear(&mut self, input: NodeId, weight: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        if w.rank() != 2 || x.rank() < 1 {
            return Err(Error::shape(
                "index_linear",
                format!("expected weight rank 2, got {:?}", w.shape),
            ));
        }
        let (n_out, d) = (w.shape[0], w.shape[1]);
        if *x.shape.last().unwrap() != d {
            return Err(Error::shape(
                "index_linear",
                format!(
                    "depth axis: input depth {} vs weight in-dim {}",
                    x.shape.last().unwrap(),
                    d
                ),
            ));
        }
        let blocks = x.numel() / d;
        let mut out = vec![0.0; blocks * n_out];
        for b in 0..blocks {
            let xs = &x.data[b * d..(b + 1) * d];
            let os = &mut out[b * n_out..(b + 1) * n_out];
            for i in 0..n_out {
                os[i] = dot(&w.data[i * d..(i + 1) * d], xs);
            }
        }
        let mut shape = x.shape.clone();
        *shape.last_mut().unwrap() = n_out;
        Ok(self.push(Op::IndexLinear { input, weight }, Tensor { shape, data: out }))
    }

    // ── fusion ops ───────────────────────────────────────────────────
    //
    // Forward and backward of the fusion primitives live in `fusion.rs`
    // as pure functions; the tape ops just record them.

    /// x [U,V,N], z [T,M] -> [U,V,T,N*M] with slice (u,v,t) the
    /// row-major vectorization of the outer product x_{u,v} z_t^T
    /// (x-major: x1 z1 ... x1 zM ... xN zM).
    pub fn bilinear_fuse(&mut self, x: NodeId, z: NodeId) -> Result<NodeId> {
        let out = fusion::op_bilinear_fuse(self.value(x), self.value(z))?;
        Ok(self.push(Op::BilinearFuse { x, z }, out))
    }

    /// x [U,V,N], z [T,M] -> [U,V,T,N+M]; slice (u,v,t) = [x_{u,v}; z_t].
    pub fn concat_index(&mut self, x: NodeId, z: NodeId) -> Result<NodeId> {
        let out = fusion::op_concatenate(self.value(x), self.value(z))?;
        Ok(self.push(Op::ConcatIndex { x, z }, out))
    }

    /// x [U,V,N], z [T,M] -> [N*M]: the sum over every (u,v,t) of the
    /// outer product x_{u,v} z_t^T.
    pub fn orderless_pool(&mut self, x: NodeId, z: NodeId) -> Result<NodeId> {
        let out = fusion::orderless_bilinear_pool(self.value(x), self.value(z))?;
        Ok(self.push(Op::OrderlessPool { x, z }, out))
    }

    /// input [U,V,T,C] -> [C], mean over the (u,v,t) grid.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        if x.rank() != 4 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("expected [U,V,T,C], got {:?}", x.shape),
            ));
        }
        let c = x.shape[3];
        let blocks = x.numel() / c;
        let mut out = vec![0.0; c];
        for b in 0..blocks {
            for (o, v) in out.iter_mut().zip(&x.data[b * c..(b + 1) * c]) {
                *o += v;
            }
        }
        let scale = 1.0 / blocks as f64;
        for o in &mut out {
            *o *= scale;
        }
        Ok(self.push(Op::GlobalAvgPool { input }, Tensor::from_vec(out)))
    }

    pub fn flatten(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let out = Tensor {
            shape: vec![x.numel()],
            data: x.data.clone(),
        };
        self.push(Op::Flatten { input }, out)
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        // fixed left-to-right accumulation for determinism
        let mut s = 0.0;
        for v in &x.data {
            s += v;
        }
        self.push(Op::Sum { input }, Tensor::scalar(s))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", ta.shape, tb.shape),
            ));
        }
        let out = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect(),
        };
        Ok(self.push(Op::Add { a, b }, out))
    }

    /// -log softmax(logits)[label], computed with max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let l = self.value(logits);
        if l.rank() != 1 || l.numel() < 2 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits must be a vector of at least 2, got {:?}", l.shape),
            ));
        }
        if label >= l.numel() {
            return Err(Error::precondition(
                "softmax_cross_entropy",
                format!("label {} out of range for {} classes", label, l.numel()),
            ));
        }
        let loss = softmax_ce_value(&l.data, label);
        Ok(self.push(Op::SoftmaxCrossEntropy { logits, label }, Tensor::scalar(loss)))
    }

    /// lambda * sum of |w| over every listed weight tensor. The
    /// subgradient is lambda * sign(w), taken as 0 at w = 0.
    pub fn l1_penalty(&mut self, weights: Vec<NodeId>, lambda: f64) -> NodeId {
        let mut s = 0.0;
        for &w in &weights {
            for v in &self.value(w).data {
                s += v.abs();
            }
        }
        self.push(Op::L1Penalty { weights, lambda }, Tensor::scalar(lambda * s))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Returns one gradient tensor
    /// per node (zero for nodes off the loss path).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::precondition(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape),
            ));
        }
        let mut grads: Vec<Tensor> = self.nodes[..=loss.0]
            .iter()
            .map(|n| Tensor::zeros(&n.value.get().shape))
            .collect();
        grads[loss.0].data[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            // all consumers of node idx have indices > idx, so its
            // gradient is final when we reach it
            let (lo, hi) = grads.split_at_mut(idx);
            let gout = &hi[0];
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Conv {
                    kind,
                    input,
                    kernel,
                    stride,
                    padding,
                } => {
                    let geom = conv_geometry(
                        *kind,
                        &self.value(*input).shape,
                        &self.value(*kernel).shape,
                        *stride,
                        *padding,
                    )
                    .expect("geometry validated at forward time");
                    let (dinput, dkernel) =
                        conv_backward(self.value(*input), self.value(*kernel), gout, &geom);
                    add_into(&mut lo[input.0], &dinput);
                    add_into(&mut lo[kernel.0], &dkernel);
                }
                Op::BiasAdd { input, bias } => {
                    add_into(&mut lo[input.0], gout);
                    let c = self.value(*bias).numel();
                    let db = &mut lo[bias.0];
                    for block in gout.data.chunks(c) {
                        for (d, g) in db.data.iter_mut().zip(block) {
                            *d += g;
                        }
                    }
                }
                Op::Relu { input } => {
                    let x = self.value(*input);
                    let di = &mut lo[input.0];
                    for ((d, g), v) in di.data.iter_mut().zip(&gout.data).zip(&x.data) {
                        if *v > 0.0 {
                            *d += g;
                        }
                    }
                }
                Op::Dense {
                    input,
                    weight,
                    bias,
                } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (m, n) = (w.shape[0], w.shape[1]);
                    {
                        let di = &mut lo[input.0];
                        for i in 0..m {
                            axpy(gout.data[i], &w.data[i * n..(i + 1) * n], &mut di.data);
                        }
                    }
                    {
                        let dw = &mut lo[weight.0];
                        for i in 0..m {
                            axpy(gout.data[i], &x.data, &mut dw.data[i * n..(i + 1) * n]);
                        }
                    }
                    add_into(&mut lo[bias.0], gout);
                }
                Op::IndexLinear { input, weight } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (n_out, d) = (w.shape[0], w.shape[1]);
                    let blocks = x.numel() / d;
                    let (dlo, dhi) = split_two(lo, input.0, weight.0);
                    for b in 0..blocks {
                        let gs = &gout.data[b * n_out..(b + 1) * n_out];
                        let xs = &x.data[b * d..(b + 1) * d];
                        let dxs = &mut dlo[b * d..(b + 1) * d];
                        for i in 0..n_out {
                            let g = gs[i];
                            if g != 0.0 {
                                axpy(g, &w.data[i * d..(i + 1) * d], dxs);
                                axpy(g, xs, &mut dhi[i * d..(i + 1) * d]);
                            }
                        }
                    }
                }
                Op::BilinearFuse { x, z } => {
                    let (dx, dz) =
                        fusion::op_bilinear_backward(self.value(*x), self.value(*z), gout)?;
                    add_into(&mut lo[x.0], &dx);
                    add_into(&mut lo[z.0], &dz);
                }
                Op::ConcatIndex { x, z } => {
                    let (dx, dz) =
                        fusion::op_concatenate_backward(self.value(*x), self.value(*z), gout)?;
                    add_into(&mut lo[x.0], &dx);
                    add_into(&mut lo[z.0], &dz);
                }
                Op::OrderlessPool { x, z } => {
                    let (dx, dz) =
                        fusion::orderless_pool_backward(self.value(*x), self.value(*z), gout)?;
                    add_into(&mut lo[x.0], &dx);
                    add_into(&mut lo[z.0], &dz);
                }
                Op::GlobalAvgPool { input } => {
                    let x = self.value(*input);
                    let c = x.shape[3];
                    let blocks = x.numel() / c;
                    let scale = 1.0 / blocks as f64;
                    let di = &mut lo[input.0];
                    for b in 0..blocks {
                        axpy(scale, &gout.data, &mut di.data[b * c..(b + 1) * c]);
                    }
                }
                Op::Flatten { input } => {
                    add_into_flat(&mut lo[input.0], gout);
                }
                Op::Sum { input } => {
                    let g = gout.data[0];
                    let di = &mut lo[input.0];
                    for d in &mut di.data {
                        *d += g;
                    }
                }
                Op::Add { a, b } => {
                    add_into(&mut lo[a.0], gout);
                    add_into(&mut lo[b.0], gout);
                }
                Op::SoftmaxCrossEntropy { logits, label } => {
                    let l = self.value(*logits);
                    let g = gout.data[0];
                    let probs = softmax(&l.data);
                    let dl = &mut lo[logits.0];
                    for (i, (d, p)) in dl.data.iter_mut().zip(&probs).enumerate() {
                        let target = if i == *label { 1.0 } else { 0.0 };
                        *d += g * (p - target);
                    }
                }
                Op::L1Penalty { weights, lambda } => {
                    let g = gout.data[0] * lambda;
                    for &w in weights {
                        let wt = self.value(w);
                        let dw = &mut lo[w.0];
                        for (d, v) in dw.data.iter_mut().zip(&wt.data) {
                            *d += g * sign0(*v);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

// ── shared numeric helpers ───────────────────────────────────────────

/// Dot product with four independent accumulators. The association is
/// fixed, so results are reproducible run to run.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let a = &a[..n];
    let b = &b[..n];
    let m = n & !3;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < m {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    while i < n {
        s0 += a[i] * b[i];
        i += 1;
    }
    (s0 + s1) + (s2 + s3)
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.shape, src.shape);
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}

/// Accumulate ignoring shape (used by flatten, where shapes differ but
/// element order matches).
fn add_into_flat(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.numel(), src.numel());
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}

/// Two distinct mutable gradient buffers out of the prefix slice.
fn split_two(lo: &mut [Tensor], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert_ne!(a, b, "op reads the same node for both inputs");
    if a < b {
        let (l, r) = lo.split_at_mut(b);
        (&mut l[a].data, &mut r[0].data)
    } else {
        let (l, r) = lo.split_at_mut(a);
        (&mut r[0].data, &mut l[b].data)
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    for v in &mut e {
        *v /= s;
    }
    e
}

pub(crate) fn softmax_ce_value(logits: &[f64], label: usize) -> f64 {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|v| (v - mx).exp()).sum();
    -(logits[label] - mx - s.ln())
}

// ── convolution core ─────────────────────────────────────────────────
//
// conv1d and conv2d are expressed as conv3d with singleton axes, so a
// single kernel (and a single backward) serves all three. Input layout
// is [U, V, T, C] row-major; kernels are [KU, KV, KT, C, F]. For speed
// the kernel is transposed once per call to [F, KU, KV, KT, C], which
// makes the innermost loop a contiguous dot/axpy over the depth axis.

#[derive(Debug, Clone)]
struct ConvGeom {
    kind: ConvKind,
    in_dims: [usize; 3],
    pad_lo: [usize; 3],
    pad_hi: [usize; 3],
    out_dims: [usize; 3],
    k: [usize; 3],
    stride: [usize; 3],
    c: usize,
    f: usize,
}

impl ConvGeom {
    fn padded(&self, axis: usize) -> usize {
        self.in_dims[axis] + self.pad_lo[axis] + self.pad_hi[axis]
    }

    fn needs_padding(&self) -> bool {
        self.pad_lo != [0, 0, 0] || self.pad_hi != [0, 0, 0]
    }

    fn out_shape(&self) -> Vec<usize> {
        match self.kind {
            ConvKind::One => vec![self.out_dims[2], self.f],
            ConvKind::Two => vec![self.out_dims[0], self.out_dims[1], self.f],
            ConvKind::Three => vec![self.out_dims[0], self.out_dims[1], self.out_dims[2], self.f],
        }
    }
}

const AXIS_NAMES: [&str; 3] = ["height", "width", "length"];

fn axis_geometry(
    op: &'static str,
    axis: &'static str,
    in_dim: usize,
    k: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, usize)> {
    match padding {
        Padding::Valid => {
            if k > in_dim {
                return Err(Error::shape(
                    op,
                    format!(
                        "{} axis: kernel size {} exceeds input size {} with valid padding",
                        axis, k, in_dim
                    ),
                ));
            }
            Ok((0, 0, (in_dim - k) / stride + 1))
        }
        Padding::Same => {
            let out = in_dim.div_ceil(stride);
            let covered = (out - 1) * stride + k;
            let needed = covered.max(in_dim) - in_dim;
            Ok((needed / 2, needed - needed / 2, out))
        }
    }
}

fn conv_geometry(
    kind: ConvKind,
    in_shape: &[usize],
    k_shape: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    let op = kind.op_name();
    if stride == 0 {
        return Err(Error::precondition(op, "stride must be at least 1"));
    }
    // normalize to 3 spatial axes + depth
    let (in_dims, k_dims, c_in, c_k, f, strides): ([usize; 3], [usize; 3], usize, usize, usize, [usize; 3]) =
        match kind {
            ConvKind::One => {
                if in_shape.len() != 2 || k_shape.len() != 3 {
                    return Err(Error::shape(
                        op,
                        format!(
                            "expected input [L,C] and kernel [K,C,F], got {:?} and {:?}",
                            in_shape, k_shape
                        ),
                    ));
                }
                (
                    [1, 1, in_shape[0]],
                    [1, 1, k_shape[0]],
                    in_shape[1],
                    k_shape[1],
                    k_shape[2],
                    [1, 1, stride],
                )
            }
            ConvKind::Two => {
                if in_shape.len() != 3 || k_shape.len() != 4 {
                    return Err(Error::shape(
                        op,
                        format!(
                            "expected input [H,W,C] and kernel [KH,KW,C,F], got {:?} and {:?}",
                            in_shape, k_shape
                        ),
                    ));
                }
                (
                    [in_shape[0], in_shape[1], 1],
                    [k_shape[0], k_shape[1], 1],
                    in_shape[2],
                    k_shape[2],
                    k_shape[3],
                    [stride, stride, 1],
                )
            }
            ConvKind::Three => {
                if in_shape.len() != 4 || k_shape.len() != 5 {
                    return Err(Error::shape(
                        op,
                        format!(
                            "expected input [U,V,T,C] and kernel [KU,KV,KT,C,F], got {:?} and {:?}",
                            in_shape, k_shape
                        ),
                    ));
                }
                (
                    [in_shape[0], in_shape[1], in_shape[2]],
                    [k_shape[0], k_shape[1], k_shape[2]],
                    in_shape[3],
                    k_shape[3],
                    k_shape[4],
                    [stride, stride, stride],
                )
            }
        };
    if c_in != c_k {
        return Err(Error::shape(
            op,
            format!("depth axis: input depth {} vs kernel depth {}", c_in, c_k),
        ));
    }
    let mut pad_lo = [0; 3];
    let mut pad_hi = [0; 3];
    let mut out_dims = [0; 3];
    for a in 0..3 {
        let (lo, hi, out) = axis_geometry(op, AXIS_NAMES[a], in_dims[a], k_dims[a], strides[a], padding)?;
        pad_lo[a] = lo;
        pad_hi[a] = hi;
        out_dims[a] = out;
    }
    Ok(ConvGeom {
        kind,
        in_dims,
        pad_lo,
        pad_hi,
        out_dims,
        k: k_dims,
        stride: strides,
        c: c_in,
        f,
    })
}

fn padded_input(data: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (u, v, t, c) = (g.in_dims[0], g.in_dims[1], g.in_dims[2], g.c);
    let (pu, pv, pt) = (g.padded(0), g.padded(1), g.padded(2));
    let mut out = vec![0.0; pu * pv * pt * c];
    for iu in 0..u {
        for iv in 0..v {
            let src = ((iu * v + iv) * t) * c;
            let dst = (((iu + g.pad_lo[0]) * pv + (iv + g.pad_lo[1])) * pt + g.pad_lo[2]) * c;
            out[dst..dst + t * c].copy_from_slice(&data[src..src + t * c]);
        }
    }
    out
}

/// kernel [KU,KV,KT,C,F] -> [F,KU,KV,KT,C]
fn transpose_kernel(k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ku, kv, kt, c, f) = (g.k[0], g.k[1], g.k[2], g.c, g.f);
    let taps = ku * kv * kt;
    let mut out = vec![0.0; taps * c * f];
    for tap in 0..taps {
        for ci in 0..c {
            let src = (tap * c + ci) * f;
            for fi in 0..f {
                out[(fi * taps + tap) * c + ci] = k[src + fi];
            }
        }
    }
    out
}

/// [F,KU,KV,KT,C] -> [KU,KV,KT,C,F]
fn untranspose_kernel(ktr: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ku, kv, kt, c, f) = (g.k[0], g.k[1], g.k[2], g.c, g.f);
    let taps = ku * kv * kt;
    let mut out = vec![0.0; taps * c * f];
    for fi in 0..f {
        for tap in 0..taps {
            for ci in 0..c {
                out[(tap * c + ci) * f + fi] = ktr[(fi * taps + tap) * c + ci];
            }
        }
    }
    out
}

fn conv_forward(input: &Tensor, kernel: &Tensor, g: &ConvGeom) -> Tensor {
    let padded;
    let inp: &[f64] = if g.needs_padding() {
        padded = padded_input(&input.data, g);
        &padded
    } else {
        &input.data
    };
    let ktr = transpose_kernel(&kernel.data, g);
    let (pv, pt) = (g.padded(1), g.padded(2));
    let (ou, ov, ot) = (g.out_dims[0], g.out_dims[1], g.out_dims[2]);
    let (ku, kv, kt) = (g.k[0], g.k[1], g.k[2]);
    let (su, sv, st) = (g.stride[0], g.stride[1], g.stride[2]);
    let (c, f) = (g.c, g.f);
    let taps = ku * kv * kt;

    let mut out = vec![0.0; ou * ov * ot * f];
    for cu in 0..ou {
        for cv in 0..ov {
            for ct in 0..ot {
                let obase = ((cu * ov + cv) * ot + ct) * f;
                for fi in 0..f {
                    let kbase = fi * taps * c;
                    let mut acc = 0.0;
                    for du in 0..ku {
                        let iu = cu * su + du;
                        for dv in 0..kv {
                            let iv = cv * sv + dv;
                            let row = ((iu * pv + iv) * pt + ct * st) * c;
                            let krow = kbase + ((du * kv + dv) * kt) * c;
                            // the (dt, c) block of the input is contiguous,
                            // so the temporal taps collapse into one dot
                            acc += dot(&inp[row..row + kt * c], &ktr[krow..krow + kt * c]);
                        }
                    }
                    out[obase + fi] = acc;
                }
            }
        }
    }
    Tensor {
        shape: g.out_shape(),
        data: out,
    }
}

fn conv_backward(input: &Tensor, kernel: &Tensor, dout: &Tensor, g: &ConvGeom) -> (Tensor, Tensor) {
    let padded;
    let inp: &[f64] = if g.needs_padding() {
        padded = padded_input(&input.data, g);
        &padded
    } else {
        &input.data
    };
    let ktr = transpose_kernel(&kernel.data, g);
    let (pu, pv, pt) = (g.padded(0), g.padded(1), g.padded(2));
    let (ou, ov, ot) = (g.out_dims[0], g.out_dims[1], g.out_dims[2]);
    let (ku, kv, kt) = (g.k[0], g.k[1], g.k[2]);
    let (su, sv, st) = (g.stride[0], g.stride[1], g.stride[2]);
    let (c, f) = (g.c, g.f);
    let taps = ku * kv * kt;

    let mut dinp = vec![0.0; pu * pv * pt * c];
    let mut dktr = vec![0.0; taps * c * f];
    for cu in 0..ou {
        for cv in 0..ov {
            for ct in 0..ot {
                let obase = ((cu * ov + cv) * ot + ct) * f;
                for fi in 0..f {
                    let gv = dout.data[obase + fi];
                    if gv == 0.0 {
                        continue;
                    }
                    let kbase = fi * taps * c;
                    for du in 0..ku {
                        let iu = cu * su + du;
                        for dv in 0..kv {
                            let iv = cv * sv + dv;
                            let ibase = ((iu * pv + iv) * pt + ct * st) * c;
                            let kb = kbase + ((du * kv + dv) * kt) * c;
                            let span = kt * c;
                            axpy(gv, &ktr[kb..kb + span], &mut dinp[ibase..ibase + span]);
                            axpy(gv, &inp[ibase..ibase + span], &mut dktr[kb..kb + span]);
                        }
                    }
                }
            }
        }
    }

    let dinput = if g.needs_padding() {
        let (u, v, t) = (g.in_dims[0], g.in_dims[1], g.in_dims[2]);
        let mut cropped = vec![0.0; u * v * t * c];
        for iu in 0..u {
            for iv in 0..v {
                let src = (((iu + g.pad_lo[0]) * pv + (iv + g.pad_lo[1])) * pt + g.pad_lo[2]) * c;
                let dst = ((iu * v + iv) * t) * c;
                cropped[dst..dst + t * c].copy_from_slice(&dinp[src..src + t * c]);
            }
        }
        cropped
    } else {
        dinp
    };

    (
        Tensor {
            shape: input.shape.clone(),
            data: dinput,
        },
        Tensor {
            shape: kernel.shape.clone(),
            data: untranspose_kernel(&dktr, g),
        },
    )
}
