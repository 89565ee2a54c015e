//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the tape
//! is a valid topological order for the backward pass.

use crate::conv;
use crate::error::{Error, Result};
use crate::real::{gemm, MatMut, MatRef, Real};
use crate::tensor::{numel, Shape, Tensor};

pub type NodeId = usize;

enum Op<T> {
    Leaf,
    Conv3d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    BatchNormTrain {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    /// Batch norm with fixed statistics: a per-channel affine map.
    BatchNormEval {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        x: NodeId,
        alpha: T,
    },
    MaxPoolXy {
        x: NodeId,
        argmax: Vec<usize>,
    },
    UpsampleXy {
        x: NodeId,
    },
    Concat {
        xs: Vec<NodeId>,
    },
    SliceChannels {
        x: NodeId,
        start: usize,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Reshape {
        x: NodeId,
    },
    Softmax {
        x: NodeId,
    },
    SoftmaxCe {
        logits: NodeId,
        probs: Vec<T>,
        target: Vec<u8>,
    },
    Mse {
        a: NodeId,
        b: NodeId,
    },
    WeightedSum {
        x: NodeId,
        weights: Vec<T>,
    },
    AddScaled {
        a: NodeId,
        b: NodeId,
        s: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<V>(msg: String) -> Result<V> {
    Err(Error::Shape(msg))
}

/// Per-axis taps of ×2 bilinear upsampling with half-pixel centres:
/// `(lower index, upper index, lower weight, upper weight)`.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let lo = src.floor();
            let frac = src - lo;
            let clamp = |i: f64| i.max(0.0).min((n - 1) as f64) as usize;
            (clamp(lo), clamp(lo + 1.0), 1.0 - frac, frac)
        })
        .collect()
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id].grad.as_deref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let out = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv3d { x, w, b }, &inputs))
    }

    fn check_channel_param(&self, x: NodeId, p: NodeId, what: &str) -> Result<()> {
        if self.value(p).len() != self.value(x).channels() {
            return shape_err(format!(
                "{what} of {} for {} channels",
                self.value(p).len(),
                self.value(x).channels()
            ));
        }
        Ok(())
    }

    /// Training-mode batch norm. Returns the output and the batch mean and
    /// biased variance per channel, for the caller's running statistics.
    pub fn batch_norm_train(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> Result<(NodeId, Vec<T>, Vec<T>)> {
        self.check_channel_param(x, gamma, "gamma")?;
        self.check_channel_param(x, beta, "beta")?;
        let xv = self.value(x);
        let [nb, c, ..] = xv.shape();
        let v = xv.voxels();
        if nb == 0 || v == 0 {
            return Err(Error::EmptyBatch);
        }
        let count = T::from_usize(nb * v).expect("count fits");
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..nb {
                let o = (b * c + ch) * v;
                s += xv.data()[o..o + v].iter().copied().sum::<T>();
            }
            let m = s / count;
            let mut q = T::zero();
            for b in 0..nb {
                let o = (b * c + ch) * v;
                q += xv.data()[o..o + v].iter().map(|&t| (t - m) * (t - m)).sum::<T>();
            }
            mean[ch] = m;
            var[ch] = q / count;
        }
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = Tensor::zeros(xv.shape());
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        for b in 0..nb {
            for ch in 0..c {
                let o = (b * c + ch) * v;
                for i in o..o + v {
                    let h = (xv.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out.data_mut()[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let id = self.push(out, Op::BatchNormTrain { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta]);
        Ok((id, mean, var))
    }

    pub fn batch_norm_eval(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, mean: &[T], var: &[T], eps: T) -> Result<NodeId> {
        self.check_channel_param(x, gamma, "gamma")?;
        self.check_channel_param(x, beta, "beta")?;
        let xv = self.value(x);
        let [nb, c, ..] = xv.shape();
        if mean.len() != c || var.len() != c {
            return shape_err(format!("running stats of {} for {c} channels", mean.len()));
        }
        let v = xv.voxels();
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = Tensor::zeros(xv.shape());
        for b in 0..nb {
            for ch in 0..c {
                let o = (b * c + ch) * v;
                for i in o..o + v {
                    out.data_mut()[i] = g[ch] * (xv.data()[i] - mean[ch]) * inv_std[ch] + bt[ch];
                }
            }
        }
        let op = Op::BatchNormEval {
            x,
            gamma,
            beta,
            mean: mean.to_vec(),
            inv_std,
        };
        Ok(self.push(out, op, &[x, gamma, beta]))
    }

    pub fn leaky_relu(&mut self, x: NodeId, alpha: T) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < T::zero() {
                *v *= alpha;
            }
        }
        self.push(out, Op::LeakyRelu { x, alpha }, &[x])
    }

    /// 2×2 max pooling in the x-y plane; z is untouched.
    pub fn maxpool_xy(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let [nb, c, nz, ny, nx] = xv.shape();
        if ny % 2 != 0 || nx % 2 != 0 {
            return shape_err(format!("max pooling needs even x-y dims, got {ny}×{nx}"));
        }
        let (oy, ox) = (ny / 2, nx / 2);
        let mut out = Tensor::zeros([nb, c, nz, oy, ox]);
        let mut argmax = vec![0usize; out.len()];
        let mut k = 0;
        for plane in 0..nb * c * nz {
            let base = plane * ny * nx;
            for y in 0..oy {
                for xx in 0..ox {
                    let mut best = base + 2 * y * nx + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * y + dy) * nx + 2 * xx + dx;
                        if xv.data()[i] > xv.data()[best] {
                            best = i;
                        }
                    }
                    out.data_mut()[k] = xv.data()[best];
                    argmax[k] = best;
                    k += 1;
                }
            }
        }
        Ok(self.push(out, Op::MaxPoolXy { x, argmax }, &[x]))
    }

    /// ×2 bilinear upsampling in the x-y plane (half-pixel centres, edge
    /// clamped); z is untouched.
    pub fn upsample_xy(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let [nb, c, nz, ny, nx] = xv.shape();
        let (ty, tx) = (upsample_taps(ny), upsample_taps(nx));
        let mut out = Tensor::zeros([nb, c, nz, 2 * ny, 2 * nx]);
        let od = out.data_mut();
        let mut k = 0;
        for plane in 0..nb * c * nz {
            let src = &xv.data()[plane * ny * nx..(plane + 1) * ny * nx];
            for &(y0, y1, wy0, wy1) in &ty {
                let (wy0, wy1) = (T::from_f64_lossy(wy0), T::from_f64_lossy(wy1));
                for &(x0, x1, wx0, wx1) in &tx {
                    let (wx0, wx1) = (T::from_f64_lossy(wx0), T::from_f64_lossy(wx1));
                    od[k] = wy0 * (wx0 * src[y0 * nx + x0] + wx1 * src[y0 * nx + x1])
                        + wy1 * (wx0 * src[y1 * nx + x0] + wx1 * src[y1 * nx + x1]);
                    k += 1;
                }
            }
        }
        self.push(out, Op::UpsampleXy { x }, &[x])
    }

    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let s0 = self.value(first).shape();
        let mut c = 0;
        for &i in xs {
            let s = self.value(i).shape();
            if s[0] != s0[0] || s[2..] != s0[2..] {
                return shape_err(format!("concat {s:?} with {s0:?}"));
            }
            c += s[1];
        }
        let v = self.value(first).voxels();
        let nb = s0[0];
        let mut data = Vec::with_capacity(nb * c * v);
        for b in 0..nb {
            for &i in xs {
                let t = self.value(i);
                let per = t.channels() * v;
                data.extend_from_slice(&t.data()[b * per..(b + 1) * per]);
            }
        }
        let out = Tensor::new([nb, c, s0[2], s0[3], s0[4]], data)?;
        Ok(self.push(out, Op::Concat { xs: xs.to_vec() }, xs))
    }

    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let [nb, c, nz, ny, nx] = xv.shape();
        if start + len > c {
            return shape_err(format!("channels {start}..{} of {c}", start + len));
        }
        let v = xv.voxels();
        let mut data = Vec::with_capacity(nb * len * v);
        for b in 0..nb {
            let o = (b * c + start) * v;
            data.extend_from_slice(&xv.data()[o..o + len * v]);
        }
        let out = Tensor::new([nb, len, nz, ny, nx], data)?;
        Ok(self.push(out, Op::SliceChannels { x, start }, &[x]))
    }

    /// Affine map of the flattened sample: `y = x·wᵀ + b`, with `w` shaped
    /// `[out, in, 1, 1, 1]`. Output shape `[batch, out, 1, 1, 1]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let nb = xv.batch();
        let fin = xv.len() / nb.max(1);
        let ws = self.value(w).shape();
        let fout = ws[0];
        if numel(ws) != fout * fin || self.value(b).len() != fout {
            return shape_err(format!("linear weight {ws:?} for {fin} inputs"));
        }
        let mut y = vec![T::zero(); nb * fout];
        for r in 0..nb {
            y[r * fout..(r + 1) * fout].copy_from_slice(self.value(b).data());
        }
        gemm(
            nb,
            fin,
            fout,
            T::one(),
            MatRef::new(xv.data(), 0, fin, 1),
            MatRef::new(self.value(w).data(), 0, 1, fin),
            T::one(),
            MatMut::new(&mut y, 0, fout, 1),
        );
        let out = Tensor::matrix(nb, fout, y)?;
        Ok(self.push(out, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Shape) -> Result<NodeId> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }, &[x]))
    }

    /// Softmax over channels at every voxel.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let probs = softmax_channels(xv.data(), xv.shape());
        let out = Tensor::new(xv.shape(), probs).expect("same shape");
        self.push(out, Op::Softmax { x }, &[x])
    }

    /// Mean over voxels of `−log softmax(logits)[target]`.
    pub fn softmax_ce(&mut self, logits: NodeId, target: &[u8]) -> Result<NodeId> {
        let lv = self.value(logits);
        let [nb, c, ..] = lv.shape();
        let v = lv.voxels();
        if target.len() != nb * v {
            return shape_err(format!("{} targets for {} voxels", target.len(), nb * v));
        }
        if let Some(&t) = target.iter().find(|&&t| t as usize >= c) {
            return shape_err(format!("target class {t} with {c} channels"));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        let probs = softmax_channels(lv.data(), lv.shape());
        let mut loss = T::zero();
        for b in 0..nb {
            for i in 0..v {
                let t = target[b * v + i] as usize;
                let p = probs[(b * c + t) * v + i];
                loss -= p.max(T::min_positive_value()).ln();
            }
        }
        let n = T::from_usize(nb * v).expect("count fits");
        let op = Op::SoftmaxCe {
            logits,
            probs,
            target: target.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss / n), op, &[logits]))
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return shape_err(format!("mse {:?} vs {:?}", av.shape(), bv.shape()));
        }
        if !av.is_finite() || !bv.is_finite() {
            return Err(Error::NonFinite("mse input".into()));
        }
        let n = T::from_usize(av.len().max(1)).expect("count fits");
        let s = av.data().iter().zip(bv.data()).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>() / n;
        Ok(self.push(Tensor::scalar(s), Op::Mse { a, b }, &[a, b]))
    }

    /// `Σ wᵢ·xᵢ` with constant weights.
    pub fn weighted_sum(&mut self, x: NodeId, weights: Vec<T>) -> Result<NodeId> {
        let xv = self.value(x);
        if weights.len() != xv.len() {
            return shape_err(format!("{} weights for {} values", weights.len(), xv.len()));
        }
        let s = xv.data().iter().zip(&weights).map(|(&a, &w)| a * w).sum::<T>();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x]))
    }

    /// `a + s·b`.
    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, s: T) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("add {:?} and {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| p + s * q).collect();
        let out = Tensor::new(av.shape(), data)?;
        Ok(self.push(out, Op::AddScaled { a, b, s }, &[a, b]))
    }

    /// Backpropagate from the scalar node `loss`, replacing all gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.value(loss).shape()));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss].requires_grad {
            return Ok(());
        }
        self.nodes[loss].grad = Some(vec![T::one()]);
        for i in (0..=loss).rev() {
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            let Some(gy) = node.grad.as_deref() else { continue };
            if !node.requires_grad {
                continue;
            }
            backward_node(head, node, gy)?;
        }
        Ok(())
    }
}

pub fn softmax_channels<T: Real>(x: &[T], shape: Shape) -> Vec<T> {
    let [nb, c, ..] = shape;
    let v = shape[2] * shape[3] * shape[4];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..nb {
        for i in 0..v {
            let at = |ch: usize| (b * c + ch) * v + i;
            let m = (0..c).map(|ch| x[at(ch)]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for ch in 0..c {
                let e = (x[at(ch)] - m).exp();
                out[at(ch)] = e;
                s += e;
            }
            for ch in 0..c {
                out[at(ch)] /= s;
            }
        }
    }
    out
}

fn needs<T>(nodes: &[Node<T>], id: NodeId) -> bool {
    nodes[id].requires_grad
}

fn acc<T: Real>(nodes: &mut [Node<T>], id: NodeId, f: impl FnOnce(&mut [T])) {
    let n = &mut nodes[id];
    if !n.requires_grad {
        return;
    }
    let len = n.value.len();
    f(n.grad.get_or_insert_with(|| vec![T::zero(); len]))
}

fn acc_vec<T: Real>(nodes: &mut [Node<T>], id: NodeId, g: &[T]) {
    acc(nodes, id, |d| d.iter_mut().zip(g).for_each(|(a, &b)| *a += b));
}

fn backward_node<T: Real>(nodes: &mut [Node<T>], node: &Node<T>, gy: &[T]) -> Result<()> {
    match &node.op {
        Op::Leaf => {}
        &Op::Conv3d { x, w, b } => {
            let (nx, nw) = (needs(nodes, x), needs(nodes, w));
            let g = conv::backward(&nodes[x].value, &nodes[w].value, gy, nx, nw);
            if let Some(dx) = g.dx {
                acc_vec(nodes, x, &dx);
            }
            if let Some(dw) = g.dw {
                acc_vec(nodes, w, &dw);
            }
            if let Some(b) = b {
                acc_vec(nodes, b, &g.db);
            }
        }
        Op::BatchNormTrain { x, gamma, beta, xhat, inv_std } => {
            let [nb, c, ..] = node.value.shape();
            let v = node.value.voxels();
            let n = T::from_usize(nb * v).expect("count fits");
            let gam = nodes[*gamma].value.data().to_vec();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..nb {
                for ch in 0..c {
                    let o = (b * c + ch) * v;
                    for i in o..o + v {
                        dgamma[ch] += gy[i] * xhat[i];
                        dbeta[ch] += gy[i];
                    }
                }
            }
            if needs(nodes, *x) {
                let mut dx = vec![T::zero(); gy.len()];
                for ch in 0..c {
                    // Σ dxhat = γ·dβ and Σ dxhat·xhat = γ·dγ.
                    let (s1, s2) = (gam[ch] * dbeta[ch], gam[ch] * dgamma[ch]);
                    let k = inv_std[ch] / n;
                    for b in 0..nb {
                        let o = (b * c + ch) * v;
                        for i in o..o + v {
                            dx[i] = k * (n * gy[i] * gam[ch] - s1 - xhat[i] * s2);
                        }
                    }
                }
                acc_vec(nodes, *x, &dx);
            }
            acc_vec(nodes, *gamma, &dgamma);
            acc_vec(nodes, *beta, &dbeta);
        }
        Op::BatchNormEval { x, gamma, beta, mean, inv_std } => {
            let [nb, c, ..] = node.value.shape();
            let v = node.value.voxels();
            let gam = nodes[*gamma].value.data().to_vec();
            let xv = nodes[*x].value.data().to_vec();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dx = vec![T::zero(); gy.len()];
            for b in 0..nb {
                for ch in 0..c {
                    let o = (b * c + ch) * v;
                    for i in o..o + v {
                        dgamma[ch] += gy[i] * (xv[i] - mean[ch]) * inv_std[ch];
                        dbeta[ch] += gy[i];
                        dx[i] = gy[i] * gam[ch] * inv_std[ch];
                    }
                }
            }
            acc_vec(nodes, *x, &dx);
            acc_vec(nodes, *gamma, &dgamma);
            acc_vec(nodes, *beta, &dbeta);
        }
        &Op::LeakyRelu { x, alpha } => {
            let xv = nodes[x].value.data().to_vec();
            acc(nodes, x, |d| {
                for ((d, &g), &xi) in d.iter_mut().zip(gy).zip(&xv) {
                    *d += if xi < T::zero() { alpha * g } else { g };
                }
            });
        }
        Op::MaxPoolXy { x, argmax } => {
            acc(nodes, *x, |d| {
                for (&i, &g) in argmax.iter().zip(gy) {
                    d[i] += g;
                }
            });
        }
        &Op::UpsampleXy { x } => {
            let [nb, c, nz, ny, nx] = nodes[x].value.shape();
            let (ty, tx) = (upsample_taps(ny), upsample_taps(nx));
            acc(nodes, x, |d| {
                let mut k = 0;
                for plane in 0..nb * c * nz {
                    let dst = &mut d[plane * ny * nx..(plane + 1) * ny * nx];
                    for &(y0, y1, wy0, wy1) in &ty {
                        let (wy0, wy1) = (T::from_f64_lossy(wy0), T::from_f64_lossy(wy1));
                        for &(x0, x1, wx0, wx1) in &tx {
                            let (wx0, wx1) = (T::from_f64_lossy(wx0), T::from_f64_lossy(wx1));
                            let g = gy[k];
                            dst[y0 * nx + x0] += wy0 * wx0 * g;
                            dst[y0 * nx + x1] += wy0 * wx1 * g;
                            dst[y1 * nx + x0] += wy1 * wx0 * g;
                            dst[y1 * nx + x1] += wy1 * wx1 * g;
                            k += 1;
                        }
                    }
                }
            });
        }
        Op::Concat { xs } => {
            let [nb, c, ..] = node.value.shape();
            let v = node.value.voxels();
            let mut off = 0;
            for &i in xs {
                let ci = nodes[i].value.channels();
                acc(nodes, i, |d| {
                    for b in 0..nb {
                        let src = (b * c + off) * v;
                        let dst = b * ci * v;
                        for (a, &g) in d[dst..dst + ci * v].iter_mut().zip(&gy[src..src + ci * v]) {
                            *a += g;
                        }
                    }
                });
                off += ci;
            }
        }
        &Op::SliceChannels { x, start } => {
            let [nb, len, ..] = node.value.shape();
            let v = node.value.voxels();
            let c = nodes[x].value.channels();
            acc(nodes, x, |d| {
                for b in 0..nb {
                    let dst = (b * c + start) * v;
                    let src = b * len * v;
                    for (a, &g) in d[dst..dst + len * v].iter_mut().zip(&gy[src..src + len * v]) {
                        *a += g;
                    }
                }
            });
        }
        &Op::Linear { x, w, b } => {
            let nb = nodes[x].value.batch();
            let fin = nodes[x].value.len() / nb.max(1);
            let fout = node.value.channels();
            if needs(nodes, x) {
                let mut dx = vec![T::zero(); nb * fin];
                gemm(
                    nb,
                    fout,
                    fin,
                    T::one(),
                    MatRef::new(gy, 0, fout, 1),
                    MatRef::new(nodes[w].value.data(), 0, fin, 1),
                    T::zero(),
                    MatMut::new(&mut dx, 0, fin, 1),
                );
                acc_vec(nodes, x, &dx);
            }
            if needs(nodes, w) {
                let mut dw = vec![T::zero(); fout * fin];
                gemm(
                    fout,
                    nb,
                    fin,
                    T::one(),
                    MatRef::new(gy, 0, 1, fout),
                    MatRef::new(nodes[x].value.data(), 0, fin, 1),
                    T::zero(),
                    MatMut::new(&mut dw, 0, fin, 1),
                );
                acc_vec(nodes, w, &dw);
            }
            acc(nodes, b, |d| {
                for r in 0..nb {
                    for (a, &g) in d.iter_mut().zip(&gy[r * fout..(r + 1) * fout]) {
                        *a += g;
                    }
                }
            });
        }
        &Op::Reshape { x } => acc_vec(nodes, x, gy),
        &Op::Softmax { x } => {
            let p = node.value.data();
            let [nb, c, ..] = node.value.shape();
            let v = node.value.voxels();
            acc(nodes, x, |d| {
                for b in 0..nb {
                    for i in 0..v {
                        let at = |ch: usize| (b * c + ch) * v + i;
                        let dot = (0..c).map(|ch| gy[at(ch)] * p[at(ch)]).sum::<T>();
                        for ch in 0..c {
                            d[at(ch)] += p[at(ch)] * (gy[at(ch)] - dot);
                        }
                    }
                }
            });
        }
        Op::SoftmaxCe { logits, probs, target } => {
            let [nb, c, ..] = nodes[*logits].value.shape();
            let v = nodes[*logits].value.voxels();
            let k = gy[0] / T::from_usize(nb * v).expect("count fits");
            acc(nodes, *logits, |d| {
                for b in 0..nb {
                    for ch in 0..c {
                        for i in 0..v {
                            let j = (b * c + ch) * v + i;
                            let onehot = if target[b * v + i] as usize == ch { T::one() } else { T::zero() };
                            d[j] += k * (probs[j] - onehot);
                        }
                    }
                }
            });
        }
        &Op::Mse { a, b } => {
            let n = T::from_usize(nodes[a].value.len().max(1)).expect("count fits");
            let k = (T::one() + T::one()) * gy[0] / n;
            let diff: Vec<T> = nodes[a]
                .value
                .data()
                .iter()
                .zip(nodes[b].value.data())
                .map(|(&p, &q)| k * (p - q))
                .collect();
            acc_vec(nodes, a, &diff);
            acc(nodes, b, |d| d.iter_mut().zip(&diff).for_each(|(x, &g)| *x -= g));
        }
        Op::WeightedSum { x, weights } => {
            acc(nodes, *x, |d| d.iter_mut().zip(weights).for_each(|(a, &w)| *a += gy[0] * w));
        }
        &Op::AddScaled { a, b, s } => {
            acc_vec(nodes, a, gy);
            acc(nodes, b, |d| d.iter_mut().zip(gy).for_each(|(x, &g)| *x += s * g));
        }
    }
    Ok(())
}
