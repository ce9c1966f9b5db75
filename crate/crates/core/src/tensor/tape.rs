use super::{gemm, MatLayout, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Gelu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    Attention {
        qkv: Var,
        segments: Vec<usize>,
        heads: usize,
        causal: bool,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<u32>,
        include: Vec<bool>,
        count: usize,
        /// Row log-sum-exp, reused by the backward pass.
        lse: Vec<T>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in execution order so gradients can be replayed
/// backwards. Recording order is a topological order of the graph.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every leaf that asked for them.
#[derive(Debug)]
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e = *e + c;
            }
        }
        None => *slot = Some(contribution),
    }
}

/// `(outer, len, inner)` decomposition of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Attention scores for one (segment, head): fills `probs` (len x len) with
/// the row-softmaxed scaled dot products, zeros above the diagonal when causal.
#[allow(clippy::too_many_arguments)]
fn attention_probs<T: Scalar>(
    qkv: &[T],
    offset: usize,
    len: usize,
    head: usize,
    head_dim: usize,
    d_model: usize,
    causal: bool,
    probs: &mut [T],
) {
    let stride = 3 * d_model;
    let q = MatLayout::at(offset * stride + head * head_dim, len, head_dim, stride);
    let k = MatLayout::at(offset * stride + d_model + head * head_dim, len, head_dim, stride);
    gemm(qkv, q, qkv, k.t(), probs, MatLayout::dense(len, len), false);
    let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());
    for i in 0..len {
        let row = &mut probs[i * len..(i + 1) * len];
        let visible = if causal { i + 1 } else { len };
        let mut max = T::neg_infinity();
        for s in &mut row[..visible] {
            *s = *s * scale;
            if *s > max {
                max = *s;
            }
        }
        let mut total = T::zero();
        for s in &mut row[..visible] {
            *s = (*s - max).exp();
            total = total + *s;
        }
        for s in &mut row[..visible] {
            *s = *s / total;
        }
        for s in &mut row[visible..] {
            *s = T::zero();
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records an input. Gradients are only collected for leaves created with
    /// `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let va = self.value(a);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| x * factor).collect());
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Adds a bias vector to every row (last axis).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(bias));
        let cols = vx.cols();
        assert_eq!(vb.numel(), cols, "add_bias: bias length mismatch");
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (r, &b) in row.iter_mut().zip(vb.data()) {
                *r = *r + b;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data);
        let rg = self.rg(&[x, bias]);
        self.push(out, Op::AddBias(x, bias), rg)
    }

    /// `a [.. x k] * b [k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.shape().len(), 2, "matmul: right operand must be 2-d");
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        assert_eq!(vb.rows(), k, "matmul: inner dimension mismatch");
        let mut out = vec![T::zero(); m * n];
        gemm(
            va.data(),
            MatLayout::dense(m, k),
            vb.data(),
            MatLayout::dense(k, n),
            &mut out,
            MatLayout::dense(m, n),
            false,
        );
        let mut shape = va.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(shape, out), Op::MatMul(a, b), rg)
    }

    /// `a [.. x k] * b^T` where `b` is `[n x k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.shape().len(), 2, "matmul_nt: right operand must be 2-d");
        let (m, k, n) = (va.rows(), va.cols(), vb.rows());
        assert_eq!(vb.cols(), k, "matmul_nt: inner dimension mismatch");
        let mut out = vec![T::zero(); m * n];
        gemm(
            va.data(),
            MatLayout::dense(m, k),
            vb.data(),
            MatLayout::dense(n, k).t(),
            &mut out,
            MatLayout::dense(m, n),
            false,
        );
        let mut shape = va.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(shape, out), Op::MatMulNT(a, b), rg)
    }

    /// Exact GELU, `x * Phi(x)` with the Gaussian CDF written through erf.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if !vx.is_finite() {
            return Err(Error::Numeric("gelu received a non-finite input".into()));
        }
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let data = vx
            .data()
            .iter()
            .map(|&v| v * half * (T::one() + (v * inv_sqrt2).erf()))
            .collect();
        let out = Tensor::new(vx.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Gelu(x), rg))
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let vx = self.value(x);
        assert!(axis < vx.shape().len(), "softmax: axis out of range");
        let (outer, len, inner) = axis_split(vx.shape(), axis);
        let src = vx.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total = total + e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), out);
        let rg = self.rg(&[x]);
        self.push(out, Op::Softmax { x, axis }, rg)
    }

    /// Layer normalization over the last axis (population variance).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let cols = vx.cols();
        assert!(cols >= 2, "layer_norm: normalized extent must be at least 2");
        assert_eq!(vg.numel(), cols);
        assert_eq!(vb.numel(), cols);
        let rows = vx.rows();
        let n = T::from_f64(cols as f64);
        let eps = T::from_f64(eps);
        let mut out = vec![T::zero(); vx.numel()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for (r, row) in vx.data().chunks(cols).enumerate() {
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
            let rstd = T::one() / (var + eps).sqrt();
            for c in 0..cols {
                out[r * cols + c] = (row[c] - mean) * rstd * vg.data()[c] + vb.data()[c];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let out = Tensor::new(vx.shape().to_vec(), out);
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean: means,
                rstd: rstds,
            },
            rg,
        )
    }

    /// Gathers rows of `table [V x d]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Var {
        let vt = self.value(table);
        let (v, d) = (vt.rows(), vt.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            assert!(id < v, "embedding: id {id} out of range for table of {v} rows");
            out.extend_from_slice(&vt.data()[id * d..(id + 1) * d]);
        }
        let out = Tensor::new(vec![ids.len(), d], out);
        let rg = self.rg(&[table]);
        self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Multi-head self-attention over packed variable-length segments.
    ///
    /// `qkv` is `[n x 3d]` with the query, key and value projections side by
    /// side; `segments` lists the lengths of consecutive sequences (summing to
    /// `n`). Attention never crosses a segment boundary. Probabilities are
    /// recomputed during backward instead of stored.
    pub fn attention(&mut self, qkv: Var, segments: &[usize], heads: usize, causal: bool) -> Var {
        let vq = self.value(qkv);
        let n = vq.rows();
        assert_eq!(
            segments.iter().sum::<usize>(),
            n,
            "attention: segments must cover all rows"
        );
        assert_eq!(vq.cols() % 3, 0);
        let d = vq.cols() / 3;
        assert_eq!(d % heads, 0, "attention: d_model not divisible by heads");
        let dh = d / heads;
        let mut out = vec![T::zero(); n * d];
        let mut offset = 0;
        let max_len = segments.iter().copied().max().unwrap_or(0);
        let mut probs = vec![T::zero(); max_len * max_len];
        for &len in segments {
            for h in 0..heads {
                let p = &mut probs[..len * len];
                attention_probs(vq.data(), offset, len, h, dh, d, causal, p);
                let v = MatLayout::at(offset * 3 * d + 2 * d + h * dh, len, dh, 3 * d);
                let o = MatLayout::at(offset * d + h * dh, len, dh, d);
                gemm(p, MatLayout::dense(len, len), vq.data(), v, &mut out, o, false);
            }
            offset += len;
        }
        let out = Tensor::new(vec![n, d], out);
        let rg = self.rg(&[qkv]);
        self.push(
            out,
            Op::Attention {
                qkv,
                segments: segments.to_vec(),
                heads,
                causal,
            },
            rg,
        )
    }

    /// Mean token cross-entropy of `logits [n x V]` against `targets`, over
    /// rows where `include` is set.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], include: &[bool]) -> Result<Var> {
        let vl = self.value(logits);
        let (n, v) = (vl.rows(), vl.cols());
        if targets.len() != n || include.len() != n {
            return Err(Error::Input(format!(
                "cross_entropy: {} rows but {} targets and {} mask entries",
                n,
                targets.len(),
                include.len()
            )));
        }
        let count = include.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::UndefinedLoss);
        }
        let mut total = 0.0f64;
        let mut lse = vec![T::zero(); n];
        for (r, row) in vl.data().chunks(v).enumerate() {
            if !include[r] {
                continue;
            }
            let t = targets[r] as usize;
            if t >= v {
                return Err(Error::Input(format!("target {t} outside vocabulary of {v}")));
            }
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let sum: f64 = row.iter().map(|&x| (x - max).exp().as_f64()).sum();
            let row_lse = max.as_f64() + sum.ln();
            lse[r] = T::from_f64(row_lse);
            total += row_lse - row[t].as_f64();
        }
        let loss = Tensor::scalar(T::from_f64(total / count as f64));
        let rg = self.rg(&[logits]);
        Ok(self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                include: include.to_vec(),
                count,
                lse,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Reverse pass from a scalar `loss`. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Usage("backward called on an already consumed tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage("backward needs a scalar loss".into()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backward_node(idx, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.requires_grad => Some(Tensor::new(node.value.shape().to_vec(), g)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(v) {
                        accumulate(&mut grads[v.0], g.to_vec());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if wants(a) {
                    accumulate(&mut grads[a.0], g.iter().zip(vb).map(|(&g, &y)| g * y).collect());
                }
                if wants(b) {
                    accumulate(&mut grads[b.0], g.iter().zip(va).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::Scale(a, f) => {
                if wants(a) {
                    accumulate(&mut grads[a.0], g.iter().map(|&g| g * *f).collect());
                }
            }
            Op::AddBias(x, b) => {
                if wants(x) {
                    accumulate(&mut grads[x.0], g.to_vec());
                }
                if wants(b) {
                    let cols = self.value(*b).numel();
                    let mut gb = vec![T::zero(); cols];
                    for row in g.chunks(cols) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if wants(a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(
                        g,
                        MatLayout::dense(m, n),
                        vb.data(),
                        MatLayout::dense(k, n).t(),
                        &mut ga,
                        MatLayout::dense(m, k),
                        false,
                    );
                    accumulate(&mut grads[a.0], ga);
                }
                if wants(b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(
                        va.data(),
                        MatLayout::dense(m, k).t(),
                        g,
                        MatLayout::dense(m, n),
                        &mut gb,
                        MatLayout::dense(k, n),
                        false,
                    );
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::MatMulNT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                if wants(a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(
                        g,
                        MatLayout::dense(m, n),
                        vb.data(),
                        MatLayout::dense(n, k),
                        &mut ga,
                        MatLayout::dense(m, k),
                        false,
                    );
                    accumulate(&mut grads[a.0], ga);
                }
                if wants(b) {
                    let mut gb = vec![T::zero(); n * k];
                    gemm(
                        g,
                        MatLayout::dense(m, n).t(),
                        va.data(),
                        MatLayout::dense(m, k),
                        &mut gb,
                        MatLayout::dense(n, k),
                        false,
                    );
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Gelu(x) => {
                if wants(x) {
                    let gx = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&g, &v)| {
                            let v = v.as_f64();
                            let cdf = 0.5 * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
                            g * T::from_f64(cdf + v * std_normal_pdf(v))
                        })
                        .collect();
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::Softmax { x, axis } => {
                if wants(x) {
                    let y = node.value.data();
                    let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                    let mut gx = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let dot = (0..len).fold(T::zero(), |acc, j| acc + g[at(j)] * y[at(j)]);
                            for j in 0..len {
                                gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let vx = self.value(*x);
                let vg = self.value(*gain).data();
                let cols = vx.cols();
                let n = T::from_f64(cols as f64);
                let mut gx = vec![T::zero(); vx.numel()];
                let mut gg = vec![T::zero(); cols];
                let mut gb = vec![T::zero(); cols];
                let mut xhat = vec![T::zero(); cols];
                let mut dxhat = vec![T::zero(); cols];
                for (r, row) in vx.data().chunks(cols).enumerate() {
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for c in 0..cols {
                        xhat[c] = (row[c] - mean[r]) * rstd[r];
                        dxhat[c] = gr[c] * vg[c];
                        gg[c] = gg[c] + gr[c] * xhat[c];
                        gb[c] = gb[c] + gr[c];
                        mean_d = mean_d + dxhat[c];
                        mean_dx = mean_dx + dxhat[c] * xhat[c];
                    }
                    mean_d = mean_d / n;
                    mean_dx = mean_dx / n;
                    for c in 0..cols {
                        gx[r * cols + c] = rstd[r] * (dxhat[c] - mean_d - xhat[c] * mean_dx);
                    }
                }
                if wants(x) {
                    accumulate(&mut grads[x.0], gx);
                }
                if wants(gain) {
                    accumulate(&mut grads[gain.0], gg);
                }
                if wants(bias) {
                    accumulate(&mut grads[bias.0], gb);
                }
            }
            Op::Embedding { table, ids } => {
                if wants(table) {
                    let vt = self.value(*table);
                    let d = vt.cols();
                    let mut gt = vec![T::zero(); vt.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                        for (acc, &v) in dst.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *acc = *acc + v;
                        }
                    }
                    accumulate(&mut grads[table.0], gt);
                }
            }
            Op::Attention {
                qkv,
                segments,
                heads,
                causal,
            } => {
                if wants(qkv) {
                    let gq = self.attention_backward(*qkv, segments, *heads, *causal, g);
                    accumulate(&mut grads[qkv.0], gq);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                include,
                count,
                lse,
            } => {
                if wants(logits) {
                    let vl = self.value(*logits);
                    let v = vl.cols();
                    let scale = T::from_f64(g[0].as_f64() / *count as f64);
                    let mut gl = vec![T::zero(); vl.numel()];
                    for (r, row) in vl.data().chunks(v).enumerate() {
                        if !include[r] {
                            continue;
                        }
                        let dst = &mut gl[r * v..(r + 1) * v];
                        for (d, &x) in dst.iter_mut().zip(row) {
                            *d = (x - lse[r]).exp() * scale;
                        }
                        let t = targets[r] as usize;
                        dst[t] = dst[t] - scale;
                    }
                    accumulate(&mut grads[logits.0], gl);
                }
            }
            Op::Sum(x) => {
                if wants(x) {
                    accumulate(&mut grads[x.0], vec![g[0]; self.value(*x).numel()]);
                }
            }
        }
    }

    fn attention_backward(&self, qkv: Var, segments: &[usize], heads: usize, causal: bool, g: &[T]) -> Vec<T> {
        let vq = self.value(qkv);
        let data = vq.data();
        let d = vq.cols() / 3;
        let dh = d / heads;
        let stride = 3 * d;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut gq = vec![T::zero(); data.len()];
        let max_len = segments.iter().copied().max().unwrap_or(0);
        let mut probs = vec![T::zero(); max_len * max_len];
        let mut dp = vec![T::zero(); max_len * max_len];
        let mut offset = 0;
        for &len in segments {
            let sq = MatLayout::dense(len, len);
            for h in 0..heads {
                let p = &mut probs[..len * len];
                attention_probs(data, offset, len, h, dh, d, causal, p);
                let q = MatLayout::at(offset * stride + h * dh, len, dh, stride);
                let k = MatLayout::at(offset * stride + d + h * dh, len, dh, stride);
                let v = MatLayout::at(offset * stride + 2 * d + h * dh, len, dh, stride);
                let go = MatLayout::at(offset * d + h * dh, len, dh, d);
                // dV = P^T dO
                gemm(p, sq.t(), g, go, &mut gq, v, true);
                // dP = dO V^T
                let dpm = &mut dp[..len * len];
                gemm(g, go, data, v.t(), dpm, sq, false);
                // dS = P * (dP - rowsum(dP * P)), folded with the score scale
                for i in 0..len {
                    let prow = &p[i * len..(i + 1) * len];
                    let drow = &mut dpm[i * len..(i + 1) * len];
                    let dot = prow.iter().zip(drow.iter()).fold(T::zero(), |a, (&x, &y)| a + x * y);
                    for (dv, &pv) in drow.iter_mut().zip(prow) {
                        *dv = pv * (*dv - dot) * scale;
                    }
                }
                // dQ = dS K, dK = dS^T Q
                gemm(dpm, sq, data, k, &mut gq, q, true);
                gemm(dpm, sq.t(), data, q, &mut gq, k, true);
            }
            offset += len;
        }
        gq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data)
    }

    #[test]
    fn gelu_reference_points() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[0.0, 10.0, 1.0]));
        let y = tape.gelu(x).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 10.0).abs() < 1e-6);
        // 0.5 * (1 + erf(1/sqrt 2)) evaluated at 50 digits
        assert!((v[2] - 0.841_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn gelu_rejects_non_finite() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[1.0, f64::NAN]));
        assert!(matches!(tape.gelu(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 3], &[2.0, 2.0, 2.0, 0.0, 3f64.ln(), f64::NEG_INFINITY]));
        let y = tape.softmax(x, 1);
        let v = tape.value(y).data();
        for &p in &v[..3] {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((v[3] - 0.25).abs() < 1e-15);
        assert!((v[4] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariant_and_axis0() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 2], &[0.3, -1.0, 2.0, 0.5]));
        let b = tape.constant(t(&[2, 2], &[7.3, 6.0, 9.0, 7.5]));
        let sa = tape.softmax(a, 0);
        let sb = tape.softmax(b, 0);
        for (x, y) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            assert!((x - y).abs() < 1e-12);
        }
        // columns sum to one along axis 0
        let v = tape.value(sa).data();
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
        assert!((v[1] + v[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::<f64>::new();
        let g3 = tape.constant(t(&[3], &[1.0; 3]));
        let b3 = tape.constant(t(&[3], &[0.0; 3]));
        let x = tape.constant(t(&[2, 3], &[5.0, 5.0, 5.0, 0.0, 2.0, 4.0]));
        let y = tape.layer_norm(x, g3, b3, 1e-5);
        let v = tape.value(y).data().to_vec();
        assert!(v[..3].iter().all(|&z| z == 0.0));
        assert!((v[3] + 1.2247).abs() < 1e-3);
        assert!(v[4].abs() < 1e-12);
        assert!((v[5] - 1.2247).abs() < 1e-3);

        let g2 = tape.constant(t(&[2], &[1.0; 2]));
        let b2 = tape.constant(t(&[2], &[0.0; 2]));
        let x = tape.constant(t(&[2], &[-1.0, 1.0]));
        let y = tape.layer_norm(x, g2, b2, 1e-12);
        let v = tape.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::<f64>::new();
        let uniform = tape.constant(t(&[1, 8], &[0.25; 8]));
        let l = tape.cross_entropy(uniform, &[5], &[true]).unwrap();
        assert!((tape.value(l).data()[0] - 8f64.ln()).abs() < 1e-12);

        let mut row = vec![0.0; 8];
        row[3] = 20.0;
        let sat = tape.constant(t(&[1, 8], &row));
        let l = tape.cross_entropy(sat, &[3], &[true]).unwrap();
        assert!(tape.value(l).data()[0] < 1e-6);

        let two = tape.constant(t(&[1, 2], &[0.0, 3f64.ln()]));
        let l = tape.cross_entropy(two, &[0], &[true]).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_all_ignored_is_undefined() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 3], &[0.0; 6]));
        assert!(matches!(
            tape.cross_entropy(x, &[0, 1], &[false, false]),
            Err(Error::UndefinedLoss)
        ));
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[4], &[1.0, -2.0, 0.5, 3.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);

        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[4], &[1.0, -2.0, 0.5, 3.0]));
        let xx = tape.mul(x, x);
        let s = tape.sum(xx);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 1.0, 6.0]);
    }

    #[test]
    fn gradient_accumulates_over_consumers() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let a = tape.scale(x, 2.0);
        let b = tape.scale(x, -5.0);
        let c = tape.add(a, b);
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[-3.0; 3]);
    }

    #[test]
    fn tape_cannot_be_replayed() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[1], &[1.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2], &[3.0, 4.0]));
        let y = tape.mul(x, c);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn causal_attention_ignores_future_rows() {
        let mut tape = Tape::<f64>::new();
        let base: Vec<f64> = (0..4 * 6).map(|i| ((i * 7) % 11) as f64 * 0.1).collect();
        let mut altered = base.clone();
        for v in &mut altered[3 * 6..] {
            *v += 1.5;
        }
        let a = tape.constant(t(&[4, 6], &base));
        let b = tape.constant(t(&[4, 6], &altered));
        let oa = tape.attention(a, &[4], 2, true);
        let ob = tape.attention(b, &[4], 2, true);
        assert_eq!(tape.value(oa).data()[..3 * 2], tape.value(ob).data()[..3 * 2]);
        let oa = tape.attention(a, &[4], 2, false);
        let ob = tape.attention(b, &[4], 2, false);
        assert_ne!(tape.value(oa).data()[..2], tape.value(ob).data()[..2]);
    }
}
