//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes. Nodes are
//! addressed by [`Var`] handles, which are only meaningful for the graph that
//! issued them. Calling [`Graph::backward`] returns the gradients of all
//! parameter leaves and clears the tape.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRowBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Reshape(Var),
    DepthwiseConv {
        x: Var,
        k: Var,
        stride: usize,
        pad: usize,
    },
    PointwiseConv(Var, Var),
    GlobalAvgPool(Var),
    ConcatLeading(Vec<Var>),
    ConcatCols(Vec<Var>),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: bool,
}

/// Gradients of the parameter leaves of a finished graph.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.remove(&v)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

// out[m,n] += a[m,k] * b[k,n]
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

// out[m,n] += a[m,k] * b[n,k]^T
fn gemm_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

// out[k,n] += a[m,k]^T * g[m,n]
fn gemm_at_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Output extent of a sliding window.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.nodes[v.0].param = true;
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(Error::dim("transpose", self.shape(a), &[]));
        }
        let t = self.value(a).transpose();
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self
            .value(a)
            .zip_map(self.value(b), |x, y| x + y)
            .map_err(|_| Error::dim("add", self.shape(a), self.shape(b)))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self
            .value(a)
            .zip_map(self.value(b), |x, y| x - y)
            .map_err(|_| Error::dim("sub", self.shape(a), self.shape(b)))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// `x[m,n] + bias[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::dim("add_row_bias", sx, sb));
        }
        let n = sx[1];
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(x).clone();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += b[i % n];
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(t, Op::AddRowBias(x, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self
            .value(a)
            .zip_map(self.value(b), |x, y| x * y)
            .map_err(|_| Error::dim("mul", self.shape(a), self.shape(b)))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Identity => a,
            Activation::Relu => self.relu(a),
            Activation::Tanh => self.tanh(a),
            Activation::Sigmoid => self.sigmoid(a),
        }
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Per-channel 2-D convolution of `x[C,H,W]` with `k[C,Kh,Kw]`, zero padded.
    pub fn depthwise_conv(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 3 || sk.len() != 3 || sx[0] != sk[0] {
            return Err(Error::dim("depthwise_conv", &sx, &sk));
        }
        let (c, h, w, kh, kw) = (sx[0], sx[1], sx[2], sk[1], sk[2]);
        let (Some(oh), Some(ow)) = (
            conv_out_extent(h, kh, stride, pad),
            conv_out_extent(w, kw, stride, pad),
        ) else {
            return Err(Error::dim("depthwise_conv", &sx, &sk));
        };
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let xp = &xd[ch * h * w..(ch + 1) * h * w];
            let kp = &kd[ch * kh * kw..(ch + 1) * kh * kw];
            let op = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += xp[iy as usize * w + ix as usize] * kp[ky * kw + kx];
                        }
                    }
                    op[oy * ow + ox] = acc;
                }
            }
        }
        let rg = self.rg(&[x, k]);
        Ok(self.push(
            Tensor::new(&[c, oh, ow], out)?,
            Op::DepthwiseConv { x, k, stride, pad },
            rg,
        ))
    }

    /// 1x1 convolution: `w[N,C]` applied at every pixel of `x[C,H,W]`.
    pub fn pointwise_conv(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 2 || sw[1] != sx[0] {
            return Err(Error::dim("pointwise_conv", &sx, &sw));
        }
        let (c, hw, n) = (sx[0], sx[1] * sx[2], sw[0]);
        let mut out = vec![0.0; n * hw];
        gemm_acc(
            self.value(w).data(),
            self.value(x).data(),
            &mut out,
            n,
            c,
            hw,
        );
        let rg = self.rg(&[x, w]);
        Ok(self.push(
            Tensor::new(&[n, sx[1], sx[2]], out)?,
            Op::PointwiseConv(x, w),
            rg,
        ))
    }

    /// Mean over the spatial extent of `x[C,H,W]`, giving `[C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(Error::dim("global_avg_pool", &sx, &[]));
        }
        let t = self.value(x);
        let plane = (sx[1] * sx[2]) as f64;
        let pooled: Vec<f64> = (0..sx[0])
            .map(|ch| t.channel(ch).iter().sum::<f64>() / plane)
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[sx[0]], pooled)?, Op::GlobalAvgPool(x), rg))
    }

    /// Concatenate along the leading axis; trailing extents must agree.
    /// For `[C,H,W]` maps this is channel concatenation.
    pub fn concat_leading(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Invalid("concat of empty list".into()));
        };
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(Error::dim("concat", self.shape(first), s));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(&shape, data)?,
            Op::ConcatLeading(parts.to_vec()),
            rg,
        ))
    }

    /// Stack equal-length vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let mut reshaped = Vec::with_capacity(rows.len());
        for &r in rows {
            let n = self.value(r).len();
            reshaped.push(self.reshape(r, &[1, n])?);
        }
        self.concat_leading(&reshaped)
    }

    /// Concatenate 2-D tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Invalid("concat of empty list".into()));
        };
        let rows = self.shape(first)[0];
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::dim("concat_cols", self.shape(first), s));
            }
            cols += s[1];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(&[rows, cols], data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Mean cross-entropy of `logits[B,K]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::dim("softmax_cross_entropy", &s, &[labels.len()]));
        }
        let (b, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label {
                label: bad,
                classes: k,
            });
        }
        let lt = self.value(logits);
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = lt.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|&z| (z - max).exp()).sum();
            let lse = max + denom.ln();
            loss += lse - row[label];
            for j in 0..k {
                probs[i * k + j] = (row[j] - max).exp() / denom;
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / b as f64),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::dim("mse", p.shape(), target.shape()));
        }
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.nodes.iter().position(|n| !n.value.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("{:?}", self.nodes[i].op))),
            None => Ok(()),
        }
    }

    /// Propagate `d loss / d node` through the tape and return the gradients
    /// of every parameter leaf. The tape is cleared afterwards, also on error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let result = self.backward_inner(loss);
        self.reset();
        result
    }

    fn backward_inner(&mut self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if node.param {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.param {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("backward".into()));
                }
                out.grads
                    .insert(Var(i), Tensor::new(node.value.shape(), g)?);
            }
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        // Accumulate into the gradient slot of `v`, allocating it on first use.
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if needs(a) {
                    let bd = nodes[b.0].value.data();
                    gemm_bt_acc(g, bd, slot(grads, nodes, a), m, n, k);
                }
                if needs(b) {
                    let ad = nodes[a.0].value.data();
                    gemm_at_acc(ad, g, slot(grads, nodes, b), m, k, n);
                }
            }
            &Op::Transpose(a) => {
                let s = out.shape();
                let (r, c) = (s[0], s[1]);
                let ga = slot(grads, nodes, a);
                for idx in 0..r * c {
                    let (ri, ci) = (idx / c, idx % c);
                    ga[ci * r + ri] += g[idx];
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        for (d, &s) in slot(grads, nodes, v).iter_mut().zip(g) {
                            *d += s;
                        }
                    }
                }
            }
            &Op::Sub(a, b) => {
                if needs(a) {
                    for (d, &s) in slot(grads, nodes, a).iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if needs(b) {
                    for (d, &s) in slot(grads, nodes, b).iter_mut().zip(g) {
                        *d -= s;
                    }
                }
            }
            &Op::AddRowBias(x, bias) => {
                if needs(x) {
                    for (d, &s) in slot(grads, nodes, x).iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if needs(bias) {
                    let n = nodes[bias.0].value.len();
                    let gb = slot(grads, nodes, bias);
                    for (idx, &s) in g.iter().enumerate() {
                        gb[idx % n] += s;
                    }
                }
            }
            &Op::Mul(a, b) => {
                if needs(a) {
                    let bd = nodes[b.0].value.data();
                    for ((d, &s), &y) in slot(grads, nodes, a).iter_mut().zip(g).zip(bd) {
                        *d += s * y;
                    }
                }
                if needs(b) {
                    let ad = nodes[a.0].value.data();
                    for ((d, &s), &x) in slot(grads, nodes, b).iter_mut().zip(g).zip(ad) {
                        *d += s * x;
                    }
                }
            }
            &Op::Scale(a, c) => {
                for (d, &s) in slot(grads, nodes, a).iter_mut().zip(g) {
                    *d += s * c;
                }
            }
            &Op::Sigmoid(a) => {
                for ((d, &s), &y) in slot(grads, nodes, a).iter_mut().zip(g).zip(out.data()) {
                    *d += s * y * (1.0 - y);
                }
            }
            &Op::Tanh(a) => {
                for ((d, &s), &y) in slot(grads, nodes, a).iter_mut().zip(g).zip(out.data()) {
                    *d += s * (1.0 - y * y);
                }
            }
            &Op::Relu(a) => {
                let xd = nodes[a.0].value.data();
                for ((d, &s), &x) in slot(grads, nodes, a).iter_mut().zip(g).zip(xd) {
                    if x > 0.0 {
                        *d += s;
                    }
                }
            }
            &Op::Reshape(a) => {
                for (d, &s) in slot(grads, nodes, a).iter_mut().zip(g) {
                    *d += s;
                }
            }
            &Op::DepthwiseConv { x, k, stride, pad } => {
                let sx = nodes[x.0].value.shape();
                let sk = nodes[k.0].value.shape();
                let (c, h, w, kh, kw) = (sx[0], sx[1], sx[2], sk[1], sk[2]);
                let (oh, ow) = (out.shape()[1], out.shape()[2]);
                let xd = nodes[x.0].value.data();
                let kd = nodes[k.0].value.data();
                let mut gx = needs(x).then(|| vec![0.0; xd.len()]);
                let mut gk = needs(k).then(|| vec![0.0; kd.len()]);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let go = g[(ch * oh + oy) * ow + ox];
                            if go == 0.0 {
                                continue;
                            }
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = (ch * h + iy as usize) * w + ix as usize;
                                    let ki = (ch * kh + ky) * kw + kx;
                                    if let Some(gx) = gx.as_mut() {
                                        gx[xi] += go * kd[ki];
                                    }
                                    if let Some(gk) = gk.as_mut() {
                                        gk[ki] += go * xd[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                for (v, local) in [(x, gx), (k, gk)] {
                    if let Some(local) = local {
                        for (d, s) in slot(grads, nodes, v).iter_mut().zip(local) {
                            *d += s;
                        }
                    }
                }
            }
            &Op::PointwiseConv(x, w) => {
                let sx = nodes[x.0].value.shape();
                let (c, hw) = (sx[0], sx[1] * sx[2]);
                let n = nodes[w.0].value.shape()[0];
                if needs(x) {
                    let wd = nodes[w.0].value.data();
                    gemm_at_acc(wd, g, slot(grads, nodes, x), n, c, hw);
                }
                if needs(w) {
                    let xd = nodes[x.0].value.data();
                    gemm_bt_acc(g, xd, slot(grads, nodes, w), n, hw, c);
                }
            }
            &Op::GlobalAvgPool(x) => {
                let sx = nodes[x.0].value.shape();
                let plane = sx[1] * sx[2];
                let gx = slot(grads, nodes, x);
                for (idx, d) in gx.iter_mut().enumerate() {
                    *d += g[idx / plane] / plane as f64;
                }
            }
            Op::ConcatLeading(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if needs(p) {
                        for (d, &s) in slot(grads, nodes, p)
                            .iter_mut()
                            .zip(&g[offset..offset + len])
                        {
                            *d += s;
                        }
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = out.shape()[0];
                let cols = out.shape()[1];
                let mut col0 = 0;
                for &p in parts {
                    let pc = nodes[p.0].value.shape()[1];
                    if needs(p) {
                        let gp = slot(grads, nodes, p);
                        for r in 0..rows {
                            for j in 0..pc {
                                gp[r * pc + j] += g[r * cols + col0 + j];
                            }
                        }
                    }
                    col0 += pc;
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = g[0] / b as f64;
                let gl = slot(grads, nodes, *logits);
                for (i, &label) in labels.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        gl[i * k + j] += scale * (probs[i * k + j] - onehot);
                    }
                }
            }
            Op::Mse { pred, target } => {
                let pd = nodes[pred.0].value.data();
                let scale = 2.0 * g[0] / pd.len() as f64;
                let gp = slot(grads, nodes, *pred);
                for ((d, &p), &t) in gp.iter_mut().zip(pd).zip(target.data()) {
                    *d += scale * (p - t);
                }
            }
        }
    }
}
