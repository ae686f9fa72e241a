use crate::autograd::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Sum(Var),
    Transpose(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    /// Per-row reciprocal standard deviations are cached for the adjoint.
    LayerNormRows(Var, Vec<f64>),
    Conv2d { input: Var, weight: Var, stride: usize },
    SliceCols { input: Var, start: usize },
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Bce { input: Var, targets: Vec<f64>, eps: f64 },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Define-by-run record of executed primitives.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// [`Graph::backward`] sweeps that order in reverse and touches each node once.
/// Gradients land only on leaves created with [`Graph::parameter`] and
/// accumulate across repeated backward calls until [`Graph::zero_grad`].
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_str(t: &Tensor) -> String {
    format!("{:?}", t.shape())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, p)) = match (ta.dims2(), tb.dims2()) {
            (Ok(x), Ok(y)) => (x, y),
            _ => {
                return Err(Error::dim(
                    "matmul",
                    format!("expected rank-2 operands, got {} and {}", shape_str(ta), shape_str(tb)),
                ))
            }
        };
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner extents differ: {} × {}", shape_str(ta), shape_str(tb)),
            ));
        }
        let out = kernels::gemm(ta.data(), tb.data(), m, k, p);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, p], out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(op, format!("{} vs {}", shape_str(ta), shape_str(tb))));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let ta = self.value(a);
        let data = ta.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    fn row_operand(&self, op: &'static str, x: Var, r: Var) -> Result<usize> {
        let (tx, tr) = (self.value(x), self.value(r));
        let cols = *tx.shape().last().unwrap_or(&0);
        if tx.rank() != 2 || tr.numel() != cols {
            return Err(Error::dim(
                op,
                format!("row operand {} does not match columns of {}", shape_str(tr), shape_str(tx)),
            ));
        }
        Ok(cols)
    }

    /// `x[m×n] + b[n]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let cols = self.row_operand("add_row", x, b)?;
        let (tx, tb) = (self.value(x), self.value(b));
        let data = tx.data().iter().enumerate().map(|(i, &v)| v + tb.data()[i % cols]).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddRow(x, b), rg))
    }

    /// `x[m×n] ⊙ g[n]`, broadcasting `g` over rows.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let cols = self.row_operand("mul_row", x, g)?;
        let (tx, tg) = (self.value(x), self.value(g));
        let data = tx.data().iter().enumerate().map(|(i, &v)| v * tg.data()[i % cols]).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(g);
        Ok(self.push(out, Op::MulRow(x, g), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Scale(x, s), rg))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v + s);
        let rg = self.rg(x);
        Ok(self.push(out, Op::AddScalar(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        Ok(self.push(out, Op::Relu(x), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Sigmoid(x), rg))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::abs);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Abs(x), rg))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2().map_err(|_| {
            Error::dim("transpose", format!("expected rank 2, got {}", shape_str(self.value(x))))
        })?;
        let out = Tensor::new(vec![c, r], kernels::transpose(self.value(x).data(), r, c))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let out = Tensor::new(shape.to_vec(), tx.data().to_vec())
            .map_err(|_| Error::dim("reshape", format!("{} to {shape:?}", shape_str(tx))))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.value(x).dims2()?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    /// Normalizes each row of a rank-2 tensor to zero mean and unit variance.
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (_, cols) = self.value(x).dims2()?;
        let mut data = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(data.len() / cols);
        for row in data.chunks_mut(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::LayerNormRows(x, inv_std), rg))
    }

    /// Zero-padded cross-correlation of `x[h×w×cin]` with `weight[kh×kw×cin×cout]`.
    ///
    /// Output extent is `ceil(h/stride) × ceil(w/stride) × cout`; at stride 1
    /// the spatial size is preserved.
    pub fn conv2d(&mut self, x: Var, weight: Var, stride: usize) -> Result<Var> {
        let geom = self.conv_geom(x, weight, stride)?;
        let cout = self.value(weight).shape()[3];
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let out = kernels::gemm(&cols, self.value(weight).data(), geom.out_h() * geom.out_w(), geom.patch(), cout);
        let out = Tensor::new(vec![geom.out_h(), geom.out_w(), cout], out)?;
        let rg = self.rg(x) || self.rg(weight);
        Ok(self.push(out, Op::Conv2d { input: x, weight, stride }, rg))
    }

    fn conv_geom(&self, x: Var, weight: Var, stride: usize) -> Result<ConvGeom> {
        let (tx, tw) = (self.value(x), self.value(weight));
        let (&[h, w, cin], &[kh, kw, wcin, _]) = (tx.shape(), tw.shape()) else {
            return Err(Error::dim(
                "conv2d",
                format!("expected input h×w×cin and weight kh×kw×cin×cout, got {} and {}", shape_str(tx), shape_str(tw)),
            ));
        };
        if cin != wcin {
            return Err(Error::dim("conv2d", format!("input has {cin} channels but weight expects {wcin}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim("conv2d", format!("kernel {kh}×{kw} must have odd extents")));
        }
        if stride == 0 {
            return Err(Error::Usage("conv2d stride must be positive".into()));
        }
        Ok(ConvGeom { h, w, cin, kh, kw, stride })
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if len == 0 || start + len > cols {
            return Err(Error::dim("slice_cols", format!("range {start}..{} of {cols} columns", start + len)));
        }
        let src = self.value(x).data();
        let data = (0..rows).flat_map(|r| src[r * cols + start..r * cols + start + len].iter().copied()).collect();
        let out = Tensor::new(vec![rows, len], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols { input: x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).dims2()?.0,
            None => return Err(Error::Usage("concat_cols of nothing".into())),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::dim("concat_cols", format!("row counts {rows} and {r} differ")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Selects rows of a rank-2 tensor by index, in the given order.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = self.value(x).dims2()?;
        if rows.is_empty() {
            return Err(Error::Usage("gather_rows with no indices".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::dim("gather_rows", format!("row {bad} of {n}")));
        }
        let src = self.value(x).data();
        let data = rows.iter().flat_map(|&r| src[r * cols..(r + 1) * cols].iter().copied()).collect();
        let out = Tensor::new(vec![rows.len(), cols], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GatherRows(x, rows.to_vec()), rg))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets.
    ///
    /// Probabilities are clamped to `[eps, 1-eps]`; clamped entries pass no gradient.
    pub fn bce(&mut self, p: Var, targets: &[f64], eps: f64) -> Result<Var> {
        let tp = self.value(p);
        if tp.numel() != targets.len() {
            return Err(Error::dim("bce", format!("{} probabilities vs {} targets", tp.numel(), targets.len())));
        }
        let n = targets.len() as f64;
        let loss = tp
            .data()
            .iter()
            .zip(targets)
            .map(|(&s, &t)| {
                let s = s.clamp(eps, 1.0 - eps);
                -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())
            })
            .sum::<f64>()
            / n;
        let rg = self.rg(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                input: p,
                targets: targets.to_vec(),
                eps,
            },
            rg,
        ))
    }

    /// Attention weights `softmax(q·kᵀ/√c)`; each row sums to one.
    pub fn attention_weights(&mut self, q: Var, k: Var) -> Result<Var> {
        let (_, cq) = self.value(q).dims2()?;
        let (_, ck) = self.value(k).dims2()?;
        if cq != ck || cq == 0 {
            return Err(Error::dim("attention", format!("query channels {cq} vs key channels {ck}")));
        }
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scaled = self.scale(scores, 1.0 / (cq as f64).sqrt())?;
        self.softmax_rows(scaled)
    }

    /// Scaled dot-product attention `softmax(q·kᵀ/√c)·v`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (nk, _) = self.value(k).dims2()?;
        let (nv, cv) = self.value(v).dims2()?;
        let (_, cq) = self.value(q).dims2()?;
        if nk != nv || cv != cq {
            return Err(Error::dim(
                "attention",
                format!("keys {:?} and values {:?} disagree", self.value(k).shape(), self.value(v).shape()),
            ));
        }
        let weights = self.attention_weights(q, k)?;
        self.matmul(weights, v)
    }

    /// Reverse sweep from a one-element `loss`, accumulating into parameter grads.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut send = |v: Var, delta: Vec<f64>| {
                if self.nodes[v.0].requires_grad {
                    match &mut adj[v.0] {
                        Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                        slot => *slot = Some(delta),
                    }
                }
            };
            let val = |v: Var| self.nodes[v.0].value.data();
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::MatMul(a, b) => {
                    let (m, k) = self.nodes[a.0].value.dims2()?;
                    let (_, p) = self.nodes[b.0].value.dims2()?;
                    if self.nodes[a.0].requires_grad {
                        send(*a, kernels::gemm_a_bt(&g, val(*b), m, p, k));
                    }
                    if self.nodes[b.0].requires_grad {
                        send(*b, kernels::gemm_at_b(val(*a), &g, m, k, p));
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.iter().map(|v| -v).collect());
                }
                Op::Mul(a, b) => {
                    send(*a, g.iter().zip(val(*b)).map(|(d, y)| d * y).collect());
                    send(*b, g.iter().zip(val(*a)).map(|(d, x)| d * x).collect());
                }
                Op::AddRow(x, b) => {
                    let cols = self.nodes[b.0].value.numel();
                    let mut db = vec![0.0; cols];
                    g.iter().enumerate().for_each(|(j, d)| db[j % cols] += d);
                    send(*b, db);
                    send(*x, g);
                }
                Op::MulRow(x, r) => {
                    let cols = self.nodes[r.0].value.numel();
                    let (xv, rv) = (val(*x), val(*r));
                    let mut dr = vec![0.0; cols];
                    g.iter().enumerate().for_each(|(j, d)| dr[j % cols] += d * xv[j]);
                    let dx = g.iter().enumerate().map(|(j, d)| d * rv[j % cols]).collect();
                    send(*r, dr);
                    send(*x, dx);
                }
                Op::Scale(x, s) => send(*x, g.iter().map(|d| d * s).collect()),
                Op::AddScalar(x) => send(*x, g),
                Op::Relu(x) => send(*x, g.iter().zip(val(*x)).map(|(d, &v)| if v > 0.0 { *d } else { 0.0 }).collect()),
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    send(*x, g.iter().zip(y).map(|(d, y)| d * y * (1.0 - y)).collect());
                }
                Op::Abs(x) => send(
                    *x,
                    g.iter()
                        .zip(val(*x))
                        .map(|(d, &v)| if v > 0.0 { *d } else if v < 0.0 { -d } else { 0.0 })
                        .collect(),
                ),
                Op::Sum(x) => send(*x, vec![g[0]; self.nodes[x.0].value.numel()]),
                Op::Transpose(x) => {
                    let (r, c) = self.nodes[x.0].value.dims2()?;
                    send(*x, kernels::transpose(&g, c, r));
                }
                Op::Reshape(x) => send(*x, g),
                Op::SoftmaxRows(x) => {
                    let (_, cols) = node.value.dims2()?;
                    let y = node.value.data();
                    let mut dx = vec![0.0; g.len()];
                    for ((dr, yr), out) in g.chunks(cols).zip(y.chunks(cols)).zip(dx.chunks_mut(cols)) {
                        let dot: f64 = dr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, d), y) in out.iter_mut().zip(dr).zip(yr) {
                            *o = y * (d - dot);
                        }
                    }
                    send(*x, dx);
                }
                Op::LayerNormRows(x, inv_std) => {
                    let (_, cols) = node.value.dims2()?;
                    let y = node.value.data();
                    let n = cols as f64;
                    let mut dx = vec![0.0; g.len()];
                    for (r, ((dr, yr), out)) in g.chunks(cols).zip(y.chunks(cols)).zip(dx.chunks_mut(cols)).enumerate() {
                        let mean_d = dr.iter().sum::<f64>() / n;
                        let mean_dy = dr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, d), y) in out.iter_mut().zip(dr).zip(yr) {
                            *o = inv_std[r] * (d - mean_d - y * mean_dy);
                        }
                    }
                    send(*x, dx);
                }
                Op::Conv2d { input, weight, stride } => {
                    let geom = self.conv_geom(*input, *weight, *stride)?;
                    let cout = self.nodes[weight.0].value.shape()[3];
                    let rows = geom.out_h() * geom.out_w();
                    if self.nodes[weight.0].requires_grad {
                        let cols = kernels::im2col(val(*input), &geom);
                        send(*weight, kernels::gemm_at_b(&cols, &g, rows, geom.patch(), cout));
                    }
                    if self.nodes[input.0].requires_grad {
                        let dcols = kernels::gemm_a_bt(&g, val(*weight), rows, cout, geom.patch());
                        send(*input, kernels::col2im(&dcols, &geom));
                    }
                }
                Op::SliceCols { input, start } => {
                    let (rows, cols) = self.nodes[input.0].value.dims2()?;
                    let len = g.len() / rows;
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        dx[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    send(*input, dx);
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = node.value.dims2()?;
                    let mut offset = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.numel() / rows;
                        let dp = (0..rows)
                            .flat_map(|r| g[r * total + offset..r * total + offset + w].iter().copied())
                            .collect();
                        send(*p, dp);
                        offset += w;
                    }
                }
                Op::GatherRows(x, rows) => {
                    let cols = node.value.dims2()?.1;
                    let mut dx = vec![0.0; self.nodes[x.0].value.numel()];
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            dx[r * cols + c] += g[k * cols + c];
                        }
                    }
                    send(*x, dx);
                }
                Op::Bce { input, targets, eps } => {
                    let n = targets.len() as f64;
                    let dp = val(*input)
                        .iter()
                        .zip(targets)
                        .map(|(&s, &t)| {
                            if s < *eps || s > 1.0 - eps {
                                0.0
                            } else {
                                g[0] * (-(t / s) + (1.0 - t) / (1.0 - s)) / n
                            }
                        })
                        .collect();
                    send(*input, dp);
                }
            }
        }

        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                slot => *slot = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
