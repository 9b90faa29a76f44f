//! Reverse-mode automatic differentiation on a per-forward tape.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! every node that depends on a leaf created with [`Graph::param`].
//! Nodes are appended in evaluation order, so the tape is always a valid
//! topological order.

use crate::error::{FusionError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor<T>),
    Scale(Var, Var),
    SoftmaxLast(Var),
    Index(Var, usize),
    ChannelLinear(Var, Var),
    ChannelBias(Var, Var),
    ConcatChannels(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    Attention { x: Var, y: Var, probs: Vec<T> },
    MeanLength(Var),
    Linear { x: Var, w: Var, b: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    BceLogits { logits: Var, targets: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn zeros_like(&mut self, v: Var) -> Var {
        let z = Tensor::zeros(self.shape(v));
        self.constant(z)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Sums a nonempty list of equally shaped nodes.
    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| FusionError::InvalidArgument("sum of zero terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant tensor (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Tensor<T>) -> Result<Var> {
        let value = self.value(a).zip_map(&c, |p, q| p * q)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MulConst(a, c), rg))
    }

    /// Multiplies every element of `a` by the single-element node `s`.
    pub fn scale(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(FusionError::shape(
                "scale",
                format!("scale factor must hold one element, got {:?}", self.shape(s)),
            ));
        }
        let k = self.value(s).data()[0];
        let value = self.value(a).scale(k);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(value, Op::Scale(a, s), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, v: Var) -> Result<Var> {
        let x = self.value(v);
        let width = *x.shape().last().ok_or_else(|| {
            FusionError::shape("softmax", "cannot take softmax of a rank-0 tensor")
        })?;
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(width.max(1)) {
            softmax_in_place(row);
        }
        if !out.all_finite() {
            return Err(FusionError::NonFinite("softmax".into()));
        }
        let rg = self.rg(v);
        Ok(self.push(out, Op::SoftmaxLast(v), rg))
    }

    /// Extracts one element (flat row-major index) as a rank-0 node.
    pub fn index(&mut self, v: Var, flat: usize) -> Result<Var> {
        let x = self.value(v);
        if flat >= x.len() {
            return Err(FusionError::shape(
                "index",
                format!("flat index {flat} out of range for {:?}", x.shape()),
            ));
        }
        let value = Tensor::scalar(x.data()[flat]);
        let rg = self.rg(v);
        Ok(self.push(value, Op::Index(v, flat), rg))
    }

    /// Applies `w: (C_in, C_out)` along the channel axis of `x: (N, C_in, L)`.
    pub fn channel_linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, cin, l) = self.value(x).ncl()?;
        let ws = self.shape(w);
        if ws.len() != 2 || ws[0] != cin {
            return Err(FusionError::shape(
                "channel_linear",
                format!("weight {ws:?} does not map {cin} input channels"),
            ));
        }
        let cout = ws[1];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![T::zero(); n * cout * l];
        for b in 0..n {
            for c in 0..cin {
                let xrow = &xd[(b * cin + c) * l..(b * cin + c + 1) * l];
                for o in 0..cout {
                    let wv = wd[c * cout + o];
                    if wv == T::zero() {
                        continue;
                    }
                    let orow = &mut out[(b * cout + o) * l..(b * cout + o + 1) * l];
                    for (ov, &xv) in orow.iter_mut().zip(xrow) {
                        *ov = *ov + xv * wv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, cout, l], out)?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(value, Op::ChannelLinear(x, w), rg))
    }

    /// Adds a per-channel bias `b: (C)` to `x: (N, C, L)`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, c, l) = self.value(x).ncl()?;
        if self.shape(b) != [c] {
            return Err(FusionError::shape(
                "channel_bias",
                format!("bias {:?} for {c} channels", self.shape(b)),
            ));
        }
        let bd = self.value(b).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, chunk) in value.data_mut().chunks_mut(l).enumerate() {
            let bias = bd[i % c];
            chunk.iter_mut().for_each(|v| *v = *v + bias);
        }
        debug_assert_eq!(value.len(), n * c * l);
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(value, Op::ChannelBias(x, b), rg))
    }

    pub fn concat_channels(&mut self, x: Var, y: Var) -> Result<Var> {
        let (n, cx, l) = self.value(x).ncl()?;
        let (ny, cy, ly) = self.value(y).ncl()?;
        if n != ny || l != ly {
            return Err(FusionError::shape(
                "concat_channels",
                format!("{:?} vs {:?}", self.shape(x), self.shape(y)),
            ));
        }
        let xd = self.value(x).data();
        let yd = self.value(y).data();
        let mut out = Vec::with_capacity(n * (cx + cy) * l);
        for b in 0..n {
            out.extend_from_slice(&xd[b * cx * l..(b + 1) * cx * l]);
            out.extend_from_slice(&yd[b * cy * l..(b + 1) * cy * l]);
        }
        let value = Tensor::new(vec![n, cx + cy, l], out)?;
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(value, Op::ConcatChannels(x, y), rg))
    }

    pub fn sigmoid(&mut self, v: Var) -> Var {
        let value = self.value(v).map(sigmoid);
        let rg = self.rg(v);
        self.push(value, Op::Sigmoid(v), rg)
    }

    pub fn relu(&mut self, v: Var) -> Var {
        let value = self.value(v).map(|a| a.max(T::zero()));
        let rg = self.rg(v);
        self.push(value, Op::Relu(v), rg)
    }

    /// Single-head scaled dot-product attention with `x` as query and `y`
    /// as both key and value. The sequence axis is `L`, the head dimension
    /// is `C`; scores have shape `(N, L, L)` and are normalized over keys.
    pub fn attention(&mut self, x: Var, y: Var) -> Result<Var> {
        self.value(x).expect_same_shape(self.value(y), "attention")?;
        let (n, c, l) = self.value(x).ncl()?;
        if c == 0 {
            return Err(FusionError::InvalidArgument(
                "attention needs at least one channel".into(),
            ));
        }
        let scale = T::one() / T::of(c as f64).sqrt();
        let xd = self.value(x).data();
        let yd = self.value(y).data();
        let mut probs = vec![T::zero(); n * l * l];
        let mut out = vec![T::zero(); n * c * l];
        for b in 0..n {
            let xb = &xd[b * c * l..(b + 1) * c * l];
            let yb = &yd[b * c * l..(b + 1) * c * l];
            let pb = &mut probs[b * l * l..(b + 1) * l * l];
            for i in 0..l {
                for j in 0..l {
                    let mut s = T::zero();
                    for ch in 0..c {
                        s = s + xb[ch * l + i] * yb[ch * l + j];
                    }
                    pb[i * l + j] = s * scale;
                }
            }
            if pb.iter().any(|v| !v.is_finite()) {
                return Err(FusionError::NonFinite("attention scores".into()));
            }
            for row in pb.chunks_mut(l) {
                softmax_in_place(row);
            }
            let ob = &mut out[b * c * l..(b + 1) * c * l];
            for ch in 0..c {
                for i in 0..l {
                    let mut acc = T::zero();
                    for j in 0..l {
                        acc = acc + pb[i * l + j] * yb[ch * l + j];
                    }
                    ob[ch * l + i] = acc;
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::NonFinite("attention output".into()));
        }
        let value = Tensor::new(vec![n, c, l], out)?;
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(value, Op::Attention { x, y, probs }, rg))
    }

    /// Mean over the sequence axis: `(N, C, L) -> (N, C)`.
    pub fn mean_length(&mut self, v: Var) -> Result<Var> {
        let (n, c, l) = self.value(v).ncl()?;
        let inv = T::one() / T::of(l as f64);
        let data = self
            .value(v)
            .data()
            .chunks(l)
            .map(|row| row.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![n, c], data)?;
        let rg = self.rg(v);
        Ok(self.push(value, Op::MeanLength(v), rg))
    }

    /// Row-wise affine map `(N, C) x (C, K) + (K)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || self.shape(b) != [ws[1]] {
            return Err(FusionError::shape(
                "linear",
                format!("x {xs:?}, w {ws:?}, b {:?}", self.shape(b)),
            ));
        }
        let (n, c, k) = (xs[0], xs[1], ws[1]);
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(b).data();
        let mut out = Vec::with_capacity(n * k);
        for r in 0..n {
            for o in 0..k {
                let mut acc = bd[o];
                for i in 0..c {
                    acc = acc + xd[r * c + i] * wd[i * k + o];
                }
                out.push(acc);
            }
        }
        let value = Tensor::new(vec![n, k], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    /// Mean softmax cross-entropy of `(N, K)` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(FusionError::shape(
                "cross_entropy",
                format!("logits {s:?} for {} targets", targets.len()),
            ));
        }
        let k = s[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(FusionError::InvalidArgument(format!(
                "class {bad} out of range for {k} classes"
            )));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = T::zero();
        for (row, &t) in probs.chunks_mut(k).zip(targets) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss = loss + lse - row[t];
            softmax_in_place(row);
        }
        let loss = loss / T::of(targets.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy on logits against a `(N, K)` 0/1 target.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        self.value(logits)
            .expect_same_shape(targets, "bce_with_logits")?;
        let z = self.value(logits).data();
        let loss = z
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln())
            .sum::<T>()
            / T::of(z.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits,
                targets: targets.data().to_vec(),
            },
            rg,
        ))
    }

    /// Gradients of the single-element node `loss` with respect to every
    /// node that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(FusionError::shape(
                "backward",
                format!("loss must be a single element, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e = *e + *d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = g.zip_map(self.value(*b), |p, q| p * q).expect("shape");
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*b) {
                    let d = g.zip_map(self.value(*a), |p, q| p * q).expect("shape");
                    self.accumulate(grads, *b, d);
                }
            }
            Op::MulConst(a, c) => {
                let d = g.zip_map(c, |p, q| p * q).expect("shape");
                self.accumulate(grads, *a, d);
            }
            Op::Scale(a, s) => {
                let k = self.value(*s).data()[0];
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.scale(k));
                }
                if self.rg(*s) {
                    let dot: T = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&p, &q)| p * q)
                        .sum();
                    let shape = self.shape(*s).to_vec();
                    self.accumulate(grads, *s, Tensor::filled(&shape, dot));
                }
            }
            Op::SoftmaxLast(v) => {
                let y = &node.value;
                let width = *y.shape().last().unwrap_or(&1);
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(width).zip(y.data().chunks(width)) {
                    let dot: T = drow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for (dv, &yv) in drow.iter_mut().zip(yrow) {
                        *dv = yv * (*dv - dot);
                    }
                }
                self.accumulate(grads, *v, d);
            }
            Op::Index(v, flat) => {
                let mut d = Tensor::zeros(self.shape(*v));
                d.data_mut()[*flat] = g.data()[0];
                self.accumulate(grads, *v, d);
            }
            Op::ChannelLinear(x, w) => {
                let (n, cin, l) = self.value(*x).ncl().expect("rank 3");
                let cout = self.shape(*w)[1];
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let gd = g.data();
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); n * cin * l];
                    for b in 0..n {
                        for c in 0..cin {
                            let drow = &mut dx[(b * cin + c) * l..(b * cin + c + 1) * l];
                            for o in 0..cout {
                                let wv = wd[c * cout + o];
                                let grow = &gd[(b * cout + o) * l..(b * cout + o + 1) * l];
                                for (dv, &gv) in drow.iter_mut().zip(grow) {
                                    *dv = *dv + gv * wv;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![n, cin, l], dx).expect("shape"));
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); cin * cout];
                    for b in 0..n {
                        for c in 0..cin {
                            let xrow = &xd[(b * cin + c) * l..(b * cin + c + 1) * l];
                            for o in 0..cout {
                                let grow = &gd[(b * cout + o) * l..(b * cout + o + 1) * l];
                                let dot: T = xrow.iter().zip(grow).map(|(&p, &q)| p * q).sum();
                                dw[c * cout + o] = dw[c * cout + o] + dot;
                            }
                        }
                    }
                    self.accumulate(grads, *w, Tensor::new(vec![cin, cout], dw).expect("shape"));
                }
            }
            Op::ChannelBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*b) {
                    let (_, c, l) = g.ncl().expect("rank 3");
                    let mut db = vec![T::zero(); c];
                    for (i, chunk) in g.data().chunks(l).enumerate() {
                        db[i % c] = db[i % c] + chunk.iter().copied().sum::<T>();
                    }
                    self.accumulate(grads, *b, Tensor::vector(db));
                }
            }
            Op::ConcatChannels(x, y) => {
                let (n, cx, l) = self.value(*x).ncl().expect("rank 3");
                let cy = self.shape(*y)[1];
                let gd = g.data();
                let block = (cx + cy) * l;
                if self.rg(*x) {
                    let mut dx = Vec::with_capacity(n * cx * l);
                    for b in 0..n {
                        dx.extend_from_slice(&gd[b * block..b * block + cx * l]);
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![n, cx, l], dx).expect("shape"));
                }
                if self.rg(*y) {
                    let mut dy = Vec::with_capacity(n * cy * l);
                    for b in 0..n {
                        dy.extend_from_slice(&gd[b * block + cx * l..(b + 1) * block]);
                    }
                    self.accumulate(grads, *y, Tensor::new(vec![n, cy, l], dy).expect("shape"));
                }
            }
            Op::Sigmoid(v) => {
                let d = g
                    .zip_map(&node.value, |gv, s| gv * s * (T::one() - s))
                    .expect("shape");
                self.accumulate(grads, *v, d);
            }
            Op::Relu(v) => {
                let d = g
                    .zip_map(self.value(*v), |gv, a| if a > T::zero() { gv } else { T::zero() })
                    .expect("shape");
                self.accumulate(grads, *v, d);
            }
            Op::Attention { x, y, probs } => {
                let (n, c, l) = self.value(*x).ncl().expect("rank 3");
                let scale = T::one() / T::of(c as f64).sqrt();
                let xd = self.value(*x).data();
                let yd = self.value(*y).data();
                let gd = g.data();
                let mut dx = vec![T::zero(); n * c * l];
                let mut dy = vec![T::zero(); n * c * l];
                let mut dp = vec![T::zero(); l * l];
                for b in 0..n {
                    let r = b * c * l..(b + 1) * c * l;
                    let (xb, yb, gb) = (&xd[r.clone()], &yd[r.clone()], &gd[r.clone()]);
                    let pb = &probs[b * l * l..(b + 1) * l * l];
                    let dyb = &mut dy[r.clone()];
                    for i in 0..l {
                        for j in 0..l {
                            let mut acc = T::zero();
                            for ch in 0..c {
                                acc = acc + gb[ch * l + i] * yb[ch * l + j];
                                dyb[ch * l + j] = dyb[ch * l + j] + pb[i * l + j] * gb[ch * l + i];
                            }
                            dp[i * l + j] = acc;
                        }
                    }
                    // dp becomes d(scores) in place.
                    for i in 0..l {
                        let row = i * l..(i + 1) * l;
                        let dot: T = pb[row.clone()]
                            .iter()
                            .zip(&dp[row.clone()])
                            .map(|(&p, &q)| p * q)
                            .sum();
                        for j in row {
                            dp[j] = pb[j] * (dp[j] - dot) * scale;
                        }
                    }
                    let dxb = &mut dx[r];
                    for ch in 0..c {
                        for i in 0..l {
                            for j in 0..l {
                                let ds = dp[i * l + j];
                                dxb[ch * l + i] = dxb[ch * l + i] + ds * yb[ch * l + j];
                                dyb[ch * l + j] = dyb[ch * l + j] + ds * xb[ch * l + i];
                            }
                        }
                    }
                }
                let shape = vec![n, c, l];
                self.accumulate(grads, *x, Tensor::new(shape.clone(), dx).expect("shape"));
                self.accumulate(grads, *y, Tensor::new(shape, dy).expect("shape"));
            }
            Op::MeanLength(v) => {
                let (n, c, l) = self.value(*v).ncl().expect("rank 3");
                let inv = T::one() / T::of(l as f64);
                let mut d = Vec::with_capacity(n * c * l);
                for &gv in g.data() {
                    d.extend(std::iter::repeat_n(gv * inv, l));
                }
                self.accumulate(grads, *v, Tensor::new(vec![n, c, l], d).expect("shape"));
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, c) = (xs[0], xs[1]);
                let k = self.shape(*w)[1];
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let gd = g.data();
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); n * c];
                    for r in 0..n {
                        for i in 0..c {
                            let mut acc = T::zero();
                            for o in 0..k {
                                acc = acc + gd[r * k + o] * wd[i * k + o];
                            }
                            dx[r * c + i] = acc;
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![n, c], dx).expect("shape"));
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); c * k];
                    for r in 0..n {
                        for i in 0..c {
                            let xv = xd[r * c + i];
                            for o in 0..k {
                                dw[i * k + o] = dw[i * k + o] + xv * gd[r * k + o];
                            }
                        }
                    }
                    self.accumulate(grads, *w, Tensor::new(vec![c, k], dw).expect("shape"));
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k];
                    for row in gd.chunks(k) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d = *d + gv;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::vector(db));
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let coef = g.data()[0] / T::of(targets.len() as f64);
                let mut d = probs.clone();
                for (row, &t) in d.chunks_mut(k).zip(targets) {
                    row[t] = row[t] - T::one();
                    row.iter_mut().for_each(|v| *v = *v * coef);
                }
                let shape = self.shape(*logits).to_vec();
                self.accumulate(grads, *logits, Tensor::new(shape, d).expect("shape"));
            }
            Op::BceLogits { logits, targets } => {
                let coef = g.data()[0] / T::of(targets.len() as f64);
                let d = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| (sigmoid(z) - t) * coef)
                    .collect();
                let shape = self.shape(*logits).to_vec();
                self.accumulate(grads, *logits, Tensor::new(shape, d).expect("shape"));
            }
        }
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub(crate) fn sigmoid<T: Scalar>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Softmax of a plain slice.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}
