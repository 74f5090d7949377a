//! Minimal reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value;
//! [`Graph::backward`] walks the nodes in reverse creation order and
//! accumulates adjoints. The op set is exactly what the encoder-decoder
//! needs, with attention and cross-entropy fused into single nodes.

use std::borrow::Cow;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{dot, log_sum_exp, matmul, matmul_a_bt_acc, matmul_at_b_acc, Tensor};

pub const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Shape and masking information for a fused multi-head attention node.
#[derive(Debug, Clone)]
pub struct AttentionSpec {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    pub causal: bool,
    /// `batch * k_len` flags; `false` keys receive exactly zero weight.
    pub key_mask: Option<Vec<bool>>,
    /// `q_len * k_len` bucket indices into the bias table.
    pub buckets: Option<Vec<usize>>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Gelu(Var),
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Embed {
        table: Var,
        ids: Vec<u32>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        spec: AttentionSpec,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<u32>,
        weights: Vec<f64>,
        probs: Vec<f64>,
        denom: f64,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// Computation graph. Leaves may borrow their values.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            dropout_rng: None,
        }
    }

    /// A graph whose [`dropout`](Self::dropout) nodes draw masks from `rng`.
    pub fn with_dropout(rng: ChaCha8Rng) -> Self {
        Graph {
            nodes: Vec::new(),
            dropout_rng: Some(rng),
        }
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    pub fn leaf_ref(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.shape().len(), 2, "right operand must be a matrix");
        let (k, m) = (bv.shape()[0], bv.shape()[1]);
        assert_eq!(av.cols(), k, "matmul inner dimension");
        let n = av.rows();
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("non-scalar") = m;
        let out = Tensor::from_vec(&shape, matmul(av.data(), bv.data(), n, k, m));
        self.push(Cow::Owned(out), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(av.shape(), data);
        self.push(Cow::Owned(out), Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(av.shape(), data);
        self.push(Cow::Owned(out), Op::Mul(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| gelu(x)).collect();
        let out = Tensor::from_vec(av.shape(), data);
        self.push(Cow::Owned(out), Op::Gelu(a))
    }

    /// Root-mean-square normalization over the last axis with a learned gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Var {
        let (xv, gv) = (self.value(x), self.value(gain));
        let d = xv.cols();
        assert_eq!(gv.len(), d, "rms gain size");
        let mut inv_rms = Vec::with_capacity(xv.rows());
        let mut data = Vec::with_capacity(xv.len());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let inv = 1.0 / (row.iter().map(|v| v * v).sum::<f64>() / d as f64 + RMS_EPS).sqrt();
            inv_rms.push(inv);
            data.extend(row.iter().zip(gv.data()).map(|(v, g)| v * inv * g));
        }
        let out = Tensor::from_vec(xv.shape(), data);
        self.push(Cow::Owned(out), Op::RmsNorm { x, gain, inv_rms })
    }

    /// Looks up rows of `table` (`[vocab, d]`), producing `[ids.len(), d]`.
    pub fn embed(&mut self, table: Var, ids: &[u32]) -> Var {
        let tv = self.value(table);
        let d = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(tv.row(id as usize));
        }
        let out = Tensor::from_vec(&[ids.len(), d], data);
        self.push(
            Cow::Owned(out),
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = self.value(x);
        let d = xv.cols();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(xv.row(r));
        }
        let out = Tensor::from_vec(&[rows.len(), d], data);
        self.push(
            Cow::Owned(out),
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Inverted dropout. Identity when the graph has no dropout generator.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        let n = self.nodes[x.0].value.len();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(xv.shape(), data);
        self.push(Cow::Owned(out), Op::Dropout { x, mask })
    }

    /// Fused scaled dot-product attention over `heads` heads.
    ///
    /// `q` is `[batch*q_len, d]`, `k` and `v` are `[batch*k_len, d]`; the
    /// optional `bias` table is `[buckets, heads]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, bias: Option<Var>, spec: AttentionSpec) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let AttentionSpec {
            batch,
            q_len,
            k_len,
            heads,
            ..
        } = spec;
        assert_eq!(qv.rows(), batch * q_len, "query rows");
        assert_eq!(kv.rows(), batch * k_len, "key rows");
        assert_eq!(vv.rows(), batch * k_len, "value rows");
        assert_eq!(d % heads, 0, "d_model divisible by heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let bias_v = bias.map(|b| self.value(b));
        let mut probs = vec![0.0; batch * heads * q_len * k_len];
        let mut out = vec![0.0; batch * q_len * d];
        let mut scores = vec![0.0; k_len];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..q_len {
                    let qrow = &qv.row(b * q_len + i)[off..off + dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..k_len {
                        if !attends(&spec, b, i, j) {
                            scores[j] = f64::NEG_INFINITY;
                            continue;
                        }
                        let mut s = dot(qrow, &kv.row(b * k_len + j)[off..off + dh]) * scale;
                        if let (Some(bv), Some(buckets)) = (bias_v, spec.buckets.as_ref()) {
                            s += bv.data()[buckets[i * k_len + j] * heads + h];
                        }
                        scores[j] = s;
                        max = max.max(s);
                    }
                    if max == f64::NEG_INFINITY {
                        continue;
                    }
                    let p = &mut probs[((b * heads + h) * q_len + i) * k_len..][..k_len];
                    let mut z = 0.0;
                    for j in 0..k_len {
                        p[j] = if scores[j] == f64::NEG_INFINITY {
                            0.0
                        } else {
                            (scores[j] - max).exp()
                        };
                        z += p[j];
                    }
                    let orow = &mut out[(b * q_len + i) * d + off..][..dh];
                    for j in 0..k_len {
                        p[j] /= z;
                        if p[j] != 0.0 {
                            let vrow = &vv.row(b * k_len + j)[off..off + dh];
                            for (o, x) in orow.iter_mut().zip(vrow) {
                                *o += p[j] * x;
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[batch * q_len, d], out);
        self.push(
            Cow::Owned(out),
            Op::Attention {
                q,
                k,
                v,
                bias,
                spec,
                probs,
            },
        )
    }

    /// Weighted mean token cross-entropy of `logits` (`[n, vocab]`).
    ///
    /// Panics if all weights are zero; callers check for that first.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], weights: &[f64]) -> Var {
        let lv = self.value(logits);
        let vocab = lv.cols();
        assert_eq!(lv.rows(), targets.len(), "one target per logit row");
        assert_eq!(targets.len(), weights.len());
        let denom: f64 = weights.iter().sum();
        assert!(denom > 0.0, "cross entropy with no weighted positions");
        let mut probs = vec![0.0; lv.len()];
        let mut total = 0.0;
        for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            let row = lv.row(r);
            let lse = log_sum_exp(row);
            for (p, &x) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
            if w != 0.0 {
                total += w * (lse - row[t as usize]);
            }
        }
        let out = Tensor::scalar(total / denom);
        self.push(
            Cow::Owned(out),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
                denom,
            },
        )
    }

    /// Reverse sweep from the scalar `root`; returns one adjoint per node
    /// (`None` where no gradient flowed).
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let rv = self.value(root);
        assert_eq!(rv.len(), 1, "backward needs a scalar root");
        grads[root.0] = Some(Tensor::from_vec(rv.shape(), vec![1.0]));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients(grads)
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, m) = (bv.shape()[0], bv.shape()[1]);
                let n = av.rows();
                let ga = slot(grads, *a, av);
                matmul_a_bt_acc(ga.data_mut(), g.data(), bv.data(), n, k, m);
                let gb = slot(grads, *b, bv);
                matmul_at_b_acc(gb.data_mut(), av.data(), g.data(), n, k, m);
            }
            Op::Add(a, b) => {
                slot(grads, *a, self.value(*a)).add_assign(g);
                slot(grads, *b, self.value(*b)).add_assign(g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = slot(grads, *a, av);
                for ((o, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                    *o += gv * y;
                }
                let gb = slot(grads, *b, bv);
                for ((o, gv), x) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    *o += gv * x;
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                for o in slot(grads, *a, self.value(*a)).data_mut() {
                    *o += s;
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                let ga = slot(grads, *a, av);
                for ((o, gv), &x) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                    *o += gv * gelu_grad(x);
                }
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (xv, gainv) = (self.value(*x), self.value(*gain));
                let d = xv.cols();
                let mut dgain = vec![0.0; d];
                let gx = slot(grads, *x, xv);
                for (r, &inv) in inv_rms.iter().enumerate() {
                    let xr = xv.row(r);
                    let gr = g.row(r);
                    // dy/dx for y = x * inv * gain with inv = (mean(x²) + eps)^(-1/2)
                    let mut proj = 0.0;
                    for c in 0..d {
                        proj += gr[c] * gainv.data()[c] * xr[c];
                        dgain[c] += gr[c] * xr[c] * inv;
                    }
                    let coeff = inv * inv * inv * proj / d as f64;
                    let out = &mut gx.data_mut()[r * d..(r + 1) * d];
                    for c in 0..d {
                        out[c] += gr[c] * gainv.data()[c] * inv - xr[c] * coeff;
                    }
                }
                let gg = slot(grads, *gain, gainv);
                for (o, v) in gg.data_mut().iter_mut().zip(dgain) {
                    *o += v;
                }
            }
            Op::Embed { table, ids } => {
                let tv = self.value(*table);
                let d = tv.cols();
                let gt = slot(grads, *table, tv);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut gt.data_mut()[id as usize * d..(id as usize + 1) * d];
                    for (o, v) in dst.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let gx = slot(grads, *x, xv);
                for (r, &src) in rows.iter().enumerate() {
                    let dst = &mut gx.data_mut()[src * d..(src + 1) * d];
                    for (o, v) in dst.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let gx = slot(grads, *x, self.value(*x));
                for ((o, gv), m) in gx.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *o += gv * m;
                }
            }
            Op::Attention {
                q,
                k,
                v,
                bias,
                spec,
                probs,
            } => self.attention_backward(g, *q, *k, *v, *bias, spec, probs, grads),
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
                denom,
            } => {
                let lv = self.value(*logits);
                let vocab = lv.cols();
                let scale = g.data()[0] / denom;
                let gl = slot(grads, *logits, lv);
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let dst = &mut gl.data_mut()[r * vocab..(r + 1) * vocab];
                    for (o, p) in dst.iter_mut().zip(&probs[r * vocab..(r + 1) * vocab]) {
                        *o += scale * w * p;
                    }
                    dst[t as usize] -= scale * w;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &Tensor,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        spec: &AttentionSpec,
        probs: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let (batch, q_len, k_len, heads) = (spec.batch, spec.q_len, spec.k_len, spec.heads);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; qv.len()];
        let mut dk = vec![0.0; kv.len()];
        let mut dv = vec![0.0; vv.len()];
        let mut dbias = bias.map(|b| vec![0.0; self.value(b).len()]);
        let mut dp = vec![0.0; k_len];
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..q_len {
                    let p = &probs[((b * heads + h) * q_len + i) * k_len..][..k_len];
                    let grow = &g.row(b * q_len + i)[off..off + dh];
                    let mut weighted = 0.0;
                    for j in 0..k_len {
                        if p[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vrow = (b * k_len + j) * d + off;
                        dp[j] = dot(grow, &vv.data()[vrow..vrow + dh]);
                        weighted += p[j] * dp[j];
                        for (o, gv) in dv[vrow..vrow + dh].iter_mut().zip(grow) {
                            *o += p[j] * gv;
                        }
                    }
                    let qrow = (b * q_len + i) * d + off;
                    for j in 0..k_len {
                        if p[j] == 0.0 {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - weighted);
                        if let (Some(db), Some(buckets)) = (dbias.as_mut(), spec.buckets.as_ref()) {
                            db[buckets[i * k_len + j] * heads + h] += ds;
                        }
                        let krow = (b * k_len + j) * d + off;
                        let c = ds * scale;
                        for t in 0..dh {
                            dq[qrow + t] += c * kv.data()[krow + t];
                            dk[krow + t] += c * qv.data()[qrow + t];
                        }
                    }
                }
            }
        }
        accumulate(grads, q, qv, &dq);
        accumulate(grads, k, kv, &dk);
        accumulate(grads, v, vv, &dv);
        if let (Some(bvar), Some(db)) = (bias, dbias) {
            accumulate(grads, bvar, self.value(bvar), &db);
        }
    }
}

fn attends(spec: &AttentionSpec, b: usize, i: usize, j: usize) -> bool {
    if spec.causal && j > i {
        return false;
    }
    spec.key_mask
        .as_ref()
        .map_or(true, |m| m[b * spec.k_len + j])
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], v: Var, like: &Tensor) -> &'g mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, like: &Tensor, delta: &[f64]) {
    let t = slot(grads, v, like);
    for (o, d) in t.data_mut().iter_mut().zip(delta) {
        *o += d;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of the Gaussian error linear unit.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0[v.0].take()
    }
}
