//! Eager reverse-mode tape.
//!
//! Every op computes its value immediately and records how to route the
//! upstream gradient to its inputs. Values are checked for finiteness as
//! they are produced, so a NaN surfaces at the op that created it.

use rand::Rng;

use super::conv::{conv_backward, conv_dims, conv_forward, convt_backward, convt_dims, convt_forward, ConvGeom};
use crate::error::{CoreError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf { name: Option<String> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    AddBias(Var, Var),
    OuterSum(Var, Var),
    PairwiseSum(Var, Var),
    ConcatCols(Var, Var),
    Select(Var, usize),
    Stack(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Sum(Var),
    Mean(Var),
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    ConvT { x: Var, w: Var, b: Var, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    AvgPool(Var, usize),
    WeightedCe { logits: Var, targets: Vec<u8>, weights: Vec<T>, probs: Vec<T> },
    BceLogits { x: Var, targets: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

/// `(outer, extent, inner)` split of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> CoreError {
    CoreError::Shape { op, left: a.to_vec(), right: b.to_vec() }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops the tape so it can be rebuilt for the next step.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, what: &str) -> Result<Var> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(what.to_string()));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient accumulated at `v` by the last backward pass.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        let mut t = t;
        t.zero_grad();
        t.requires_grad = requires_grad;
        self.nodes.push(Node { value: t, op: Op::Leaf { name: None }, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    /// Leaf tied to a named parameter; its gradient flows back through
    /// [`Graph::write_grads`]. With `track == false`, or for a buffer, the
    /// value enters as a constant.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str, track: bool) -> Result<Var> {
        let t = store.get(name)?;
        let trainable = track && store.is_trainable(name)?;
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        self.nodes.push(Node { value, op: Op::Leaf { name: Some(name.to_string()) }, needs_grad: trainable });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Adds gradients of named leaves into the store.
    pub fn write_grads(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Leaf { name: Some(name) }, Some(g)) = (&node.op, self.grads.get(i).and_then(|g| g.as_ref())) {
                store.get_mut(name)?.accumulate_grad(g);
            }
        }
        Ok(())
    }

    fn binary_same(&mut self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), data);
        let ng = self.needs(&[a, b]);
        self.push(t, Op::Add(a, b), ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x - y).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), data);
        let ng = self.needs(&[a, b]);
        self.push(t, Op::Sub(a, b), ng, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), data);
        let ng = self.needs(&[a, b]);
        self.push(t, Op::Mul(a, b), ng, "mul")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let t = self.value(a).map(|x| x * c);
        let ng = self.needs(&[a]);
        self.push(t, Op::Scale(a, c), ng, "scale")
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), self.data(a), (k, 1), self.data(b), (n, 1), T::zero(), &mut out, (n, 1));
        let ng = self.needs(&[a, b]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("transpose", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose_buf(self.data(a), r, c);
        let ng = self.needs(&[a]);
        self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a), ng, "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        let ng = self.needs(&[a]);
        self.push(t, Op::Reshape(a), ng, "reshape")
    }

    /// Adds `b: [C]` along the last axis of `x: [.., C]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(shape_err("add_bias", sx, sb));
        }
        let c = sb[0];
        let bias = self.data(b);
        let data = self.data(x).iter().enumerate().map(|(i, &v)| v + bias[i % c]).collect();
        let t = Tensor::from_parts(sx.to_vec(), data);
        let ng = self.needs(&[x, b]);
        self.push(t, Op::AddBias(x, b), ng, "add_bias")
    }

    /// `out[i,j] = col[i] + row[j]` for `col: [M,1]`, `row: [1,P]`.
    pub fn outer_sum(&mut self, col: Var, row: Var) -> Result<Var> {
        let (sc, sr) = (self.shape(col), self.shape(row));
        if sc.len() != 2 || sr.len() != 2 || sc[1] != 1 || sr[0] != 1 {
            return Err(shape_err("outer_sum", sc, sr));
        }
        let (m, p) = (sc[0], sr[1]);
        let (cd, rd) = (self.data(col), self.data(row));
        let mut out = Vec::with_capacity(m * p);
        for &ci in cd {
            out.extend(rd.iter().map(|&rj| ci + rj));
        }
        let ng = self.needs(&[col, row]);
        self.push(Tensor::from_parts(vec![m, p], out), Op::OuterSum(col, row), ng, "outer_sum")
    }

    /// `out[m*P + p, k] = a[m,k] + b[p,k]` for `a: [M,K]`, `b: [P,K]`.
    pub fn pairwise_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err("pairwise_sum", sa, sb));
        }
        let (m, p, k) = (sa[0], sb[0], sa[1]);
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(m * p * k);
        for ar in ad.chunks(k) {
            for br in bd.chunks(k) {
                out.extend(ar.iter().zip(br).map(|(&x, &y)| x + y));
            }
        }
        let ng = self.needs(&[a, b]);
        self.push(Tensor::from_parts(vec![m * p, k], out), Op::PairwiseSum(a, b), ng, "pairwise_sum")
    }

    /// `[r,c1] ++ [r,c2] -> [r,c1+c2]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(shape_err("concat_cols", sa, sb));
        }
        let (r, c1, c2) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::with_capacity(r * (c1 + c2));
        for i in 0..r {
            out.extend_from_slice(&self.data(a)[i * c1..(i + 1) * c1]);
            out.extend_from_slice(&self.data(b)[i * c2..(i + 1) * c2]);
        }
        let ng = self.needs(&[a, b]);
        self.push(Tensor::from_parts(vec![r, c1 + c2], out), Op::ConcatCols(a, b), ng, "concat_cols")
    }

    /// Slice `i` of the leading axis; drops that axis.
    pub fn select(&mut self, x: Var, i: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(CoreError::Axis { op: "select", axis: 0, rank: s.len() });
        }
        if i >= s[0] {
            return Err(shape_err("select", s, &[i]));
        }
        let inner: usize = s[1..].iter().product();
        let t = Tensor::from_parts(s[1..].to_vec(), self.data(x)[i * inner..(i + 1) * inner].to_vec());
        let ng = self.needs(&[x]);
        self.push(t, Op::Select(x, i), ng, "select")
    }

    /// Stacks equal-shape values along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(CoreError::invalid("stack: no inputs"));
        };
        let s = self.shape(first).to_vec();
        let mut out = Vec::with_capacity(s.iter().product::<usize>() * xs.len());
        for &x in xs {
            if self.shape(x) != s.as_slice() {
                return Err(shape_err("stack", &s, self.shape(x)));
            }
            out.extend_from_slice(self.data(x));
        }
        let mut shape = vec![xs.len()];
        shape.extend_from_slice(&s);
        let ng = self.needs(xs);
        self.push(Tensor::from_parts(shape, out), Op::Stack(xs.to_vec()), ng, "stack")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.max(T::zero()));
        let ng = self.needs(&[x]);
        self.push(t, Op::Relu(x), ng, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(sigmoid);
        let ng = self.needs(&[x]);
        self.push(t, Op::Sigmoid(x), ng, "sigmoid")
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(CoreError::Axis { op, axis, rank });
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let out = softmax_buf(self.data(x), self.shape(x), axis, false);
        let t = Tensor::from_parts(self.shape(x).to_vec(), out);
        let ng = self.needs(&[x]);
        self.push(t, Op::Softmax(x, axis), ng, "softmax")
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let out = softmax_buf(self.data(x), self.shape(x), axis, true);
        let t = Tensor::from_parts(self.shape(x).to_vec(), out);
        let ng = self.needs(&[x]);
        self.push(t, Op::LogSoftmax(x, axis), ng, "log_softmax")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().copied().sum();
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::lit(self.data(x).len() as f64);
        let s = self.data(x).iter().copied().sum::<T>() / n;
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), ng, "mean")
    }

    /// Cross-correlation of `x: [N,C,H,W]` with `w: [K,C,kh,kw]` plus `b: [K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let d = conv_dims("conv2d", self.shape(x), self.shape(w), self.shape(b), geom)?;
        let y = conv_forward(&d, self.data(x), self.data(w), self.data(b));
        let shape = vec![d.n, d.k, d.plane.oh, d.plane.ow];
        let ng = self.needs(&[x, w, b]);
        self.push(Tensor::from_parts(shape, y), Op::Conv { x, w, b, geom }, ng, "conv2d")
    }

    /// Transposed convolution, `w: [Cin,Cout,kh,kw]`; the adjoint of
    /// [`Graph::conv2d`] with the same geometry.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let d = convt_dims("conv_transpose2d", self.shape(x), self.shape(w), self.shape(b), geom)?;
        let y = convt_forward(&d, self.data(x), self.data(w), self.data(b));
        let shape = vec![d.n, d.plane.channels, d.plane.h, d.plane.w];
        let ng = self.needs(&[x, w, b]);
        self.push(Tensor::from_parts(shape, y), Op::ConvT { x, w, b, geom }, ng, "conv_transpose2d")
    }

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(shape_err("batch_norm", s, self.shape(gamma)));
        }
        let c = s[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("batch_norm", s, self.shape(gamma)));
        }
        let inner: usize = s[2..].iter().product();
        if s[0] * inner == 0 {
            return Err(CoreError::invalid("batch_norm: channel with zero elements"));
        }
        Ok((s[0], c, inner))
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T, batch_stats: bool) -> Result<Var> {
        let (n, c, inner) = self.bn_check(x, gamma, beta)?;
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xd, gd, bd) = (self.data(x), self.data(gamma), self.data(beta));
        let mut xhat = vec![T::zero(); xd.len()];
        let mut y = vec![T::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                for i in base..base + inner {
                    xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                    y[i] = xhat[i] * gd[ch] + bd[ch];
                }
            }
        }
        let t = Tensor::from_parts(self.shape(x).to_vec(), y);
        let ng = self.needs(&[x, gamma, beta]);
        self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, ng, "batch_norm")
    }

    /// Training-mode batch norm over all axes but 1; returns the biased
    /// batch statistics so the caller can fold them into running buffers.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (n, c, inner) = self.bn_check(x, gamma, beta)?;
        let count = T::lit((n * inner) as f64);
        let xd = self.data(x);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                mean[ch] += xd[base..base + inner].iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                var[ch] += xd[base..base + inner].iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let out = self.bn_apply(x, gamma, beta, &mean, &var, eps, true)?;
        Ok((out, BatchStats { mean, var }))
    }

    /// Evaluation-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        self.bn_apply(x, gamma, beta, mean, var, eps, false)
    }

    /// Non-overlapping `k x k` average pooling; trailing rows/columns that
    /// do not fill a window are dropped.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || k == 0 || s[2] < k || s[3] < k {
            return Err(shape_err("avg_pool2d", &s, &[k, k]));
        }
        let (oh, ow) = (s[2] / k, s[3] / k);
        let xd = self.data(x);
        let norm = T::one() / T::lit((k * k) as f64);
        let mut out = vec![T::zero(); s[0] * s[1] * oh * ow];
        for plane in 0..s[0] * s[1] {
            let src = &xd[plane * s[2] * s[3]..];
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = T::zero();
                    for u in 0..k {
                        for v in 0..k {
                            acc += src[(i * k + u) * s[3] + j * k + v];
                        }
                    }
                    out[(plane * oh + i) * ow + j] = acc * norm;
                }
            }
        }
        let ng = self.needs(&[x]);
        self.push(Tensor::from_parts(vec![s[0], s[1], oh, ow], out), Op::AvgPool(x, k), ng, "avg_pool2d")
    }

    /// Inverted dropout. Identity when `p == 0` or outside training.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(CoreError::invalid(format!("dropout probability {p} outside [0,1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.data(x).len()).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let m = self.constant(Tensor::from_parts(self.shape(x).to_vec(), mask));
        self.mul(x, m)
    }

    /// Mean over pixels of `weights[t] * -log softmax(logits)[t]`, with
    /// `logits: [N,M,H,W]` and `targets` holding one class per pixel.
    pub fn weighted_cross_entropy(&mut self, logits: Var, targets: &[u8], weights: &[T]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 4 || weights.len() != s[1] || targets.len() != s[0] * s[2] * s[3] {
            return Err(shape_err("weighted_cross_entropy", &s, &[weights.len(), targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= s[1]) {
            return Err(CoreError::invalid(format!("target class {bad} outside 0..{}", s[1])));
        }
        if weights.iter().any(|&w| !(w > T::zero())) {
            return Err(CoreError::invalid("class weights must be positive"));
        }
        let probs = softmax_buf(self.data(logits), &s, 1, false);
        let (m, hw) = (s[1], s[2] * s[3]);
        let mut total = T::zero();
        for b in 0..s[0] {
            for p in 0..hw {
                let t = targets[b * hw + p] as usize;
                let pr = probs[(b * m + t) * hw + p];
                total += weights[t] * -(pr.max(T::min_positive_value())).ln();
            }
        }
        let loss = total / T::lit((s[0] * hw) as f64);
        let ng = self.needs(&[logits]);
        let op = Op::WeightedCe { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs };
        self.push(Tensor::scalar(loss), op, ng, "weighted_cross_entropy")
    }

    /// Mean binary cross-entropy of `sigmoid(x)` against constant targets,
    /// evaluated in the log-sum-exp stable form.
    pub fn bce_with_logits(&mut self, x: Var, targets: &[T]) -> Result<Var> {
        let xd = self.data(x);
        if targets.len() != xd.len() {
            return Err(shape_err("bce_with_logits", self.shape(x), &[targets.len()]));
        }
        let total: T = xd
            .iter()
            .zip(targets)
            .map(|(&v, &t)| v.max(T::zero()) - v * t + (T::one() + (-v.abs()).exp()).ln())
            .sum();
        let loss = total / T::lit(xd.len() as f64);
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(loss), Op::BceLogits { x, targets: targets.to_vec() }, ng, "bce_with_logits")
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(CoreError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(CoreError::NotScalar(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            propagate(&self.nodes, i, &g, &mut self.grads);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite(format!("gradient of node {i}")));
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn transpose_buf<T: Scalar>(src: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

pub(crate) fn softmax_buf<T: Scalar>(x: &[T], shape: &[usize], axis: usize, log: bool) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mx = (0..len).map(|k| x[idx(k)]).fold(T::neg_infinity(), T::max);
            let z: T = (0..len).map(|k| (x[idx(k)] - mx).exp()).sum();
            let lz = z.ln();
            for k in 0..len {
                out[idx(k)] = if log { x[idx(k)] - mx - lz } else { (x[idx(k)] - mx).exp() / z };
            }
        }
    }
    out
}

fn accumulate<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    if !nodes[v.0].needs_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn propagate<T: Scalar>(nodes: &[Node<T>], i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &nodes[i];
    let val = |v: Var| nodes[v.0].value.data();
    let shape = |v: Var| nodes[v.0].value.shape();
    let wants = |v: Var| nodes[v.0].needs_grad;
    let mut acc = |v: Var, gv: Vec<T>| accumulate(nodes, grads, v, gv);
    match &node.op {
        Op::Leaf { .. } => {}
        Op::Add(a, b) => {
            acc(*a, g.to_vec());
            acc(*b, g.to_vec());
        }
        Op::Sub(a, b) => {
            acc(*a, g.to_vec());
            acc(*b, g.iter().map(|&v| -v).collect());
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                acc(*a, g.iter().zip(val(*b)).map(|(&u, &y)| u * y).collect());
            }
            if wants(*b) {
                acc(*b, g.iter().zip(val(*a)).map(|(&u, &x)| u * x).collect());
            }
        }
        Op::Scale(a, c) => acc(*a, g.iter().map(|&v| v * *c).collect()),
        Op::MatMul(a, b) => {
            let (m, k, n) = (shape(*a)[0], shape(*a)[1], shape(*b)[1]);
            if wants(*a) {
                let mut ga = vec![T::zero(); m * k];
                T::gemm(m, n, k, T::one(), g, (n, 1), val(*b), (1, n), T::zero(), &mut ga, (k, 1));
                acc(*a, ga);
            }
            if wants(*b) {
                let mut gb = vec![T::zero(); k * n];
                T::gemm(k, m, n, T::one(), val(*a), (1, k), g, (n, 1), T::zero(), &mut gb, (n, 1));
                acc(*b, gb);
            }
        }
        Op::Transpose(a) => {
            let s = shape(*a);
            acc(*a, transpose_buf(g, s[1], s[0]));
        }
        Op::Reshape(a) => acc(*a, g.to_vec()),
        Op::AddBias(x, b) => {
            acc(*x, g.to_vec());
            if wants(*b) {
                let c = shape(*b)[0];
                let mut gb = vec![T::zero(); c];
                g.iter().enumerate().for_each(|(i, &v)| gb[i % c] += v);
                acc(*b, gb);
            }
        }
        Op::OuterSum(col, row) => {
            let (m, p) = (shape(*col)[0], shape(*row)[1]);
            if wants(*col) {
                acc(*col, (0..m).map(|i| g[i * p..(i + 1) * p].iter().copied().sum()).collect());
            }
            if wants(*row) {
                let mut gr = vec![T::zero(); p];
                g.chunks(p).for_each(|r| gr.iter_mut().zip(r).for_each(|(a, &b)| *a += b));
                acc(*row, gr);
            }
        }
        Op::PairwiseSum(a, b) => {
            let (m, p, k) = (shape(*a)[0], shape(*b)[0], shape(*a)[1]);
            let mut ga = vec![T::zero(); m * k];
            let mut gb = vec![T::zero(); p * k];
            for (row, gr) in g.chunks(k).enumerate() {
                let (mi, pi) = (row / p, row % p);
                ga[mi * k..(mi + 1) * k].iter_mut().zip(gr).for_each(|(x, &y)| *x += y);
                gb[pi * k..(pi + 1) * k].iter_mut().zip(gr).for_each(|(x, &y)| *x += y);
            }
            acc(*a, ga);
            acc(*b, gb);
        }
        Op::ConcatCols(a, b) => {
            let (r, c1, c2) = (shape(*a)[0], shape(*a)[1], shape(*b)[1]);
            let w = c1 + c2;
            if wants(*a) {
                acc(*a, (0..r).flat_map(|i| g[i * w..i * w + c1].iter().copied()).collect());
            }
            if wants(*b) {
                acc(*b, (0..r).flat_map(|i| g[i * w + c1..(i + 1) * w].iter().copied()).collect());
            }
        }
        Op::Select(x, idx) => {
            let mut gx = vec![T::zero(); val(*x).len()];
            gx[idx * g.len()..(idx + 1) * g.len()].copy_from_slice(g);
            acc(*x, gx);
        }
        Op::Stack(xs) => {
            let inner = g.len() / xs.len();
            for (k, &x) in xs.iter().enumerate() {
                acc(x, g[k * inner..(k + 1) * inner].to_vec());
            }
        }
        Op::Relu(x) => acc(*x, g.iter().zip(val(*x)).map(|(&u, &v)| if v > T::zero() { u } else { T::zero() }).collect()),
        Op::Sigmoid(x) => {
            let y = node.value.data();
            acc(*x, g.iter().zip(y).map(|(&u, &s)| u * s * (T::one() - s)).collect());
        }
        Op::Softmax(x, axis) => {
            let y = node.value.data();
            let (outer, len, inner) = axis_split(node.value.shape(), *axis);
            let mut gx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let dot: T = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                    for k in 0..len {
                        gx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                    }
                }
            }
            acc(*x, gx);
        }
        Op::LogSoftmax(x, axis) => {
            let y = node.value.data();
            let (outer, len, inner) = axis_split(node.value.shape(), *axis);
            let mut gx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let total: T = (0..len).map(|k| g[idx(k)]).sum();
                    for k in 0..len {
                        gx[idx(k)] = g[idx(k)] - y[idx(k)].exp() * total;
                    }
                }
            }
            acc(*x, gx);
        }
        Op::Sum(x) => acc(*x, vec![g[0]; val(*x).len()]),
        Op::Mean(x) => {
            let n = val(*x).len();
            acc(*x, vec![g[0] / T::lit(n as f64); n]);
        }
        Op::Conv { x, w, b, geom } => {
            let d = conv_dims("conv2d", shape(*x), shape(*w), shape(*b), *geom).expect("shapes checked in forward");
            let (dx, dw, db) = conv_backward(&d, val(*x), val(*w), g, wants(*x), wants(*w));
            if let Some(dx) = dx {
                acc(*x, dx);
            }
            if let Some(dw) = dw {
                acc(*w, dw);
            }
            acc(*b, db);
        }
        Op::ConvT { x, w, b, geom } => {
            let d = convt_dims("conv_transpose2d", shape(*x), shape(*w), shape(*b), *geom).expect("shapes checked in forward");
            let (dx, dw, db) = convt_backward(&d, val(*x), val(*w), g, wants(*x), wants(*w));
            if let Some(dx) = dx {
                acc(*x, dx);
            }
            if let Some(dw) = dw {
                acc(*w, dw);
            }
            acc(*b, db);
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
            let s = shape(*x);
            let (n, c) = (s[0], s[1]);
            let inner: usize = s[2..].iter().product();
            let gam = val(*gamma);
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * inner;
                    for k in base..base + inner {
                        dgamma[ch] += g[k] * xhat[k];
                        dbeta[ch] += g[k];
                    }
                }
            }
            if wants(*x) {
                let mut gx = vec![T::zero(); g.len()];
                let count = T::lit((n * inner) as f64);
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * inner;
                        let scale = gam[ch] * inv_std[ch];
                        for k in base..base + inner {
                            gx[k] = if *batch_stats {
                                scale * (g[k] - dbeta[ch] / count - xhat[k] * dgamma[ch] / count)
                            } else {
                                scale * g[k]
                            };
                        }
                    }
                }
                acc(*x, gx);
            }
            acc(*gamma, dgamma);
            acc(*beta, dbeta);
        }
        Op::AvgPool(x, k) => {
            let s = shape(*x);
            let out = node.value.shape();
            let (oh, ow) = (out[2], out[3]);
            let norm = T::one() / T::lit((k * k) as f64);
            let mut gx = vec![T::zero(); val(*x).len()];
            for plane in 0..s[0] * s[1] {
                for i in 0..oh {
                    for j in 0..ow {
                        let gv = g[(plane * oh + i) * ow + j] * norm;
                        for u in 0..*k {
                            for v in 0..*k {
                                gx[plane * s[2] * s[3] + (i * k + u) * s[3] + j * k + v] += gv;
                            }
                        }
                    }
                }
            }
            acc(*x, gx);
        }
        Op::WeightedCe { logits, targets, weights, probs } => {
            let s = shape(*logits);
            let (m, hw) = (s[1], s[2] * s[3]);
            let scale = g[0] / T::lit((s[0] * hw) as f64);
            let mut gx = vec![T::zero(); probs.len()];
            for b in 0..s[0] {
                for p in 0..hw {
                    let t = targets[b * hw + p] as usize;
                    let wt = weights[t] * scale;
                    for c in 0..m {
                        let idx = (b * m + c) * hw + p;
                        let onehot = if c == t { T::one() } else { T::zero() };
                        gx[idx] = wt * (probs[idx] - onehot);
                    }
                }
            }
            acc(*logits, gx);
        }
        Op::BceLogits { x, targets } => {
            let scale = g[0] / T::lit(targets.len() as f64);
            acc(*x, val(*x).iter().zip(targets).map(|(&v, &t)| scale * (sigmoid(v) - t)).collect());
        }
    }
}
