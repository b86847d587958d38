use super::kernels::{mm_nn, mm_nt, mm_tn};
use super::{Element, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    GateMul {
        x: Var,
        gates: Var,
        index: usize,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        denom: f64,
        probs: Vec<f64>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Sum(Var),
}

#[derive(Debug)]
struct Node<E> {
    value: Tensor<E>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations for one forward/backward pair.
#[derive(Debug, Default)]
pub struct Tape<E: Element = f32> {
    nodes: Vec<Node<E>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<E: Element = f32> {
    grads: Vec<Option<Vec<E>>>,
    shapes: Vec<Vec<usize>>,
    requires: Vec<bool>,
}

impl<E: Element> Gradients<E> {
    /// Gradient of a differentiable value; zeros if it does not reach the loss.
    /// `None` for constants.
    pub fn get(&self, var: Var) -> Option<Tensor<E>> {
        if !*self.requires.get(var.0)? {
            return None;
        }
        let shape = self.shapes[var.0].clone();
        Some(match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        })
    }

    /// Raw gradient buffer if one was produced.
    pub fn slice(&self, var: Var) -> Option<&[E]> {
        self.grads.get(var.0)?.as_deref()
    }
}

fn add_into<E: Element>(slot: &mut Option<Vec<E>>, contrib: Vec<E>) {
    match slot {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        None => *slot = Some(contrib),
    }
}

fn add_into_with<E: Element>(slot: &mut Option<Vec<E>>, len: usize, f: impl FnOnce(&mut [E])) {
    let g = slot.get_or_insert_with(|| vec![E::zero(); len]);
    f(g);
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded value and operation.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn node(&self, v: Var) -> Result<&Node<E>> {
        self.nodes.get(v.0).ok_or(TensorError::ForeignVar(v.0))
    }

    fn push(&mut self, value: Tensor<E>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<E>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        let (m, k) = av.dims2("matmul")?;
        let (k2, n) = bv.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = vec![E::zero(); m * n];
        mm_nn(av.data(), bv.data(), m, k, n, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        let (m, k) = av.dims2("matmul_t")?;
        let (n, k2) = bv.dims2("matmul_t")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_t",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = vec![E::zero(); m * n];
        mm_nt(av.data(), bv.data(), m, k, n, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMulT(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Row-broadcast bias add: `x[m×n] + b[n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (&self.node(x)?.value, &self.node(bias)?.value);
        let (_, n) = xv.dims2("add_bias")?;
        if bv.numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let b = bv.data();
        let data = xv
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &w)| v + w))
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let f = E::narrow(factor);
        let data = xv.data().iter().map(|&v| v * f).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Scale(x, factor), rg))
    }

    /// Multiplies every element of `x` by the scalar `gates[index]`.
    pub fn gate_mul(&mut self, x: Var, gates: Var, index: usize) -> Result<Var> {
        let gv = &self.node(gates)?.value;
        if index >= gv.numel() {
            return Err(TensorError::IndexOutOfRange {
                op: "gate_mul",
                index,
                extent: gv.numel(),
            });
        }
        let g = gv.data()[index];
        let xv = &self.node(x)?.value;
        let data = xv.data().iter().map(|&v| v * g).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x, gates]);
        Ok(self.push(out, Op::GateMul { x, gates, index }, rg))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if axis >= xv.rank() {
            return Err(TensorError::IndexOutOfRange {
                op: "softmax",
                index: axis,
                extent: xv.rank(),
            });
        }
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![E::zero(); src.len()];
        let mut buf = vec![0f64; len];
        for o in 0..outer {
            for r in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + r;
                let mut max = f64::NEG_INFINITY;
                for i in 0..len {
                    max = max.max(src[idx(i)].widen());
                }
                let mut total = 0f64;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = (src[idx(i)].widen() - max).exp();
                    total += *b;
                }
                for (i, b) in buf.iter().enumerate() {
                    out[idx(i)] = E::narrow(b / total);
                }
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let n = *xv.shape().last().unwrap_or(&1);
        let (gv, bv) = (&self.node(gamma)?.value, &self.node(beta)?.value);
        if gv.numel() != n || bv.numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let rows = xv.numel() / n.max(1);
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks_exact(n) {
            let mu = row.iter().map(|v| v.widen()).sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v.widen() - mu).powi(2)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            for ((v, g), b) in row.iter().zip(gv.data()).zip(bv.data()) {
                out.push(E::narrow((v.widen() - mu) * rs * g.widen() + b.widen()));
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
            rg,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let data = xv
            .data()
            .iter()
            .map(|&v| E::narrow(gelu_f(v.widen())))
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Gelu(x), rg))
    }

    /// Row gather (embedding lookup): `out[i] = table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = &self.node(table)?.value;
        let (rows, d) = tv.dims2("gather_rows")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    extent: rows,
                });
            }
            out.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new([ids.len(), d], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Alias of [`Tape::gather_rows`] for token embedding tables.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// `Σ_i −log softmax(logits_i)[target_i] / denom` over rows with a target.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        denom: f64,
    ) -> Result<Var> {
        let lv = &self.node(logits)?.value;
        let (m, v) = lv.dims2("cross_entropy")?;
        if targets.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if !(denom > 0.0) {
            return Err(TensorError::Invalid(format!(
                "cross_entropy: denominator must be positive, got {denom}"
            )));
        }
        let mut probs = vec![0f64; m * v];
        let mut total = 0f64;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    extent: v,
                });
            }
            let row = lv.row(i);
            let max = row.iter().map(|x| x.widen()).fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[i * v..(i + 1) * v];
            let mut z = 0f64;
            for (pj, x) in p.iter_mut().zip(row) {
                *pj = (x.widen() - max).exp();
                z += *pj;
            }
            p.iter_mut().for_each(|pj| *pj /= z);
            total += max + z.ln() - row[t].widen();
        }
        let out = Tensor::scalar(E::narrow(total / denom));
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                denom,
                probs,
            },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let (rows, cols) = xv.dims2("slice_rows")?;
        if start + len > rows {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                extent: rows,
            });
        }
        let data = xv.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::new([len, cols], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_rows: no inputs".into()))?;
        let (_, cols) = self.node(*first)?.value.dims2("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let pv = &self.node(*p)?.value;
            let (r, c) = pv.dims2("concat_rows")?;
            if c != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: vec![rows, cols],
                    right: pv.shape().to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::new([rows, cols], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let out = Tensor::scalar(E::narrow(xv.sum_f64()));
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    /// Reverse pass from a scalar `loss`, visiting nodes in reverse execution order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        let lv = &self.node(loss)?.value;
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![E::one()]);
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            requires: self.nodes.iter().map(|n| n.requires_grad).collect(),
        })
    }

    fn propagate(&self, node: &Node<E>, dy: &[E], grads: &mut [Option<Vec<E>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2("").unwrap();
                let n = val(*b).shape()[1];
                if rg(*a) {
                    let mut da = vec![E::zero(); m * k];
                    mm_nt(dy, val(*b).data(), m, n, k, &mut da);
                    add_into(&mut grads[a.0], da);
                }
                if rg(*b) {
                    let mut db = vec![E::zero(); k * n];
                    mm_tn(val(*a).data(), dy, m, k, n, &mut db);
                    add_into(&mut grads[b.0], db);
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = val(*a).dims2("").unwrap();
                let n = val(*b).shape()[0];
                if rg(*a) {
                    let mut da = vec![E::zero(); m * k];
                    mm_nn(dy, val(*b).data(), m, n, k, &mut da);
                    add_into(&mut grads[a.0], da);
                }
                if rg(*b) {
                    let mut db = vec![E::zero(); n * k];
                    mm_tn(dy, val(*a).data(), m, n, k, &mut db);
                    add_into(&mut grads[b.0], db);
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    add_into(&mut grads[a.0], dy.to_vec());
                }
                if rg(*b) {
                    add_into(&mut grads[b.0], dy.to_vec());
                }
            }
            Op::AddBias(x, b) => {
                if rg(*x) {
                    add_into(&mut grads[x.0], dy.to_vec());
                }
                if rg(*b) {
                    let n = val(*b).numel();
                    let mut acc = vec![0f64; n];
                    for row in dy.chunks_exact(n) {
                        for (s, &g) in acc.iter_mut().zip(row) {
                            *s += g.widen();
                        }
                    }
                    add_into(&mut grads[b.0], acc.into_iter().map(E::narrow).collect());
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let g = dy.iter().zip(val(*b).data()).map(|(&g, &y)| g * y).collect();
                    add_into(&mut grads[a.0], g);
                }
                if rg(*b) {
                    let g = dy.iter().zip(val(*a).data()).map(|(&g, &x)| g * x).collect();
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Scale(x, f) => {
                if rg(*x) {
                    let f = E::narrow(*f);
                    add_into(&mut grads[x.0], dy.iter().map(|&g| g * f).collect());
                }
            }
            Op::GateMul { x, gates, index } => {
                let gv = val(*gates);
                if rg(*x) {
                    let g = gv.data()[*index];
                    add_into(&mut grads[x.0], dy.iter().map(|&d| d * g).collect());
                }
                if rg(*gates) {
                    let s: f64 = dy
                        .iter()
                        .zip(val(*x).data())
                        .map(|(d, v)| d.widen() * v.widen())
                        .sum();
                    let len = gv.numel();
                    add_into_with(&mut grads[gates.0], len, |g| g[*index] += E::narrow(s));
                }
            }
            Op::Softmax { x, axis } => {
                if rg(*x) {
                    let y = node.value.data();
                    let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                    let mut dx = vec![E::zero(); y.len()];
                    for o in 0..outer {
                        for r in 0..inner {
                            let idx = |i: usize| (o * len + i) * inner + r;
                            let dot: f64 = (0..len)
                                .map(|i| y[idx(i)].widen() * dy[idx(i)].widen())
                                .sum();
                            for i in 0..len {
                                let j = idx(i);
                                dx[j] = E::narrow(y[j].widen() * (dy[j].widen() - dot));
                            }
                        }
                    }
                    add_into(&mut grads[x.0], dx);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let xv = val(*x);
                let gv = val(*gamma).data();
                let n = gv.len();
                let mut dgamma = vec![0f64; n];
                let mut dbeta = vec![0f64; n];
                let mut dx = vec![E::zero(); xv.numel()];
                let mut xhat = vec![0f64; n];
                let mut dxhat = vec![0f64; n];
                for (r, (row, drow)) in xv.data().chunks_exact(n).zip(dy.chunks_exact(n)).enumerate() {
                    let (mu, rs) = (mean[r], rstd[r]);
                    for j in 0..n {
                        xhat[j] = (row[j].widen() - mu) * rs;
                        let d = drow[j].widen();
                        dgamma[j] += d * xhat[j];
                        dbeta[j] += d;
                        dxhat[j] = d * gv[j].widen();
                    }
                    let m1 = dxhat.iter().sum::<f64>() / n as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        dx[r * n + j] = E::narrow(rs * (dxhat[j] - m1 - xhat[j] * m2));
                    }
                }
                if rg(*x) {
                    add_into(&mut grads[x.0], dx);
                }
                if rg(*gamma) {
                    add_into(&mut grads[gamma.0], dgamma.into_iter().map(E::narrow).collect());
                }
                if rg(*beta) {
                    add_into(&mut grads[beta.0], dbeta.into_iter().map(E::narrow).collect());
                }
            }
            Op::Gelu(x) => {
                if rg(*x) {
                    let g = val(*x)
                        .data()
                        .iter()
                        .zip(dy)
                        .map(|(v, d)| E::narrow(gelu_grad(v.widen()) * d.widen()))
                        .collect();
                    add_into(&mut grads[x.0], g);
                }
            }
            Op::Gather { table, ids } => {
                if rg(*table) {
                    let tv = val(*table);
                    let d = tv.shape()[1];
                    add_into_with(&mut grads[table.0], tv.numel(), |g| {
                        for (i, &id) in ids.iter().enumerate() {
                            for (a, &b) in g[id * d..(id + 1) * d].iter_mut().zip(&dy[i * d..(i + 1) * d]) {
                                *a += b;
                            }
                        }
                    });
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                denom,
                probs,
            } => {
                if rg(*logits) {
                    let v = val(*logits).shape()[1];
                    let scale = dy[0].widen() / denom;
                    let mut g = vec![E::zero(); probs.len()];
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..v {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            g[i * v + j] = E::narrow((probs[i * v + j] - onehot) * scale);
                        }
                    }
                    add_into(&mut grads[logits.0], g);
                }
            }
            Op::SliceRows { x, start } => {
                if rg(*x) {
                    let xv = val(*x);
                    let cols = xv.shape()[1];
                    let off = start * cols;
                    add_into_with(&mut grads[x.0], xv.numel(), |g| {
                        for (a, &b) in g[off..off + dy.len()].iter_mut().zip(dy) {
                            *a += b;
                        }
                    });
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = val(*p).numel();
                    if rg(*p) {
                        add_into(&mut grads[p.0], dy[off..off + len].to_vec());
                    }
                    off += len;
                }
            }
            Op::Sum(x) => {
                if rg(*x) {
                    add_into(&mut grads[x.0], vec![dy[0]; val(*x).numel()]);
                }
            }
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

const GELU_C: f64 = 0.797_884_560_802_865_4;

fn gelu_f(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_example() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_f64([2, 2], &[1., 2., 3., 4.]).unwrap());
        let b = tape.constant(Tensor::from_f64([2, 1], &[5., 6.]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::<f32>::new();
        let m = Tensor::from_f64([2, 3], &[1., -2., 3.5, 0., 7., 1.25]).unwrap();
        let i = tape.constant(Tensor::identity(2));
        let mv = tape.constant(m.clone());
        let c = tape.matmul(i, mv).unwrap();
        assert_eq!(tape.value(c), &m);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3] and [2, 3]"));
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64([1, 2], &[0.0, 0.0]).unwrap());
        let y = tape.softmax(x, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        let x = tape.constant(Tensor::from_f64([1, 2], &[1000.0, 0.0]).unwrap());
        let y = tape.softmax(x, 1).unwrap();
        let v = tape.value(y).data();
        assert!(v.iter().all(|p| p.is_finite()));
        assert_eq!(v[0], 1.0);
        assert!(v[1] < 1e-30);
    }

    #[test]
    fn softmax_axis_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2, 3], &[1., 2., 3., 1., 0., -3.]).unwrap());
        let y = tape.softmax(x, 0).unwrap();
        let v = tape.value(y);
        for c in 0..3 {
            assert!((v.at(0, c) + v.at(1, c) - 1.0).abs() < 1e-12);
        }
        assert!((v.at(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_loss_has_zero_grads() {
        let mut tape = Tape::<f32>::new();
        let w = tape.param(Tensor::full([3], 2.0));
        let c = tape.constant(Tensor::scalar(4.0));
        let loss = tape.sum(c).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[0.0, 0.0, 0.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn sum_grad_is_ones() {
        let mut tape = Tape::<f32>::new();
        let w = tape.param(Tensor::from_f64([2, 2], &[1., -1., 3., 0.5]).unwrap());
        let loss = tape.sum(w).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn grads_accumulate_over_reuse() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::from_f64([2], &[1.5, -2.0]).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let twice = tape.add(sq, w).unwrap();
        let loss = tape.sum(twice).unwrap();
        let g = tape.backward(loss).unwrap().get(w).unwrap();
        assert_eq!(g.data(), &[4.0, -3.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let w = tape.param(Tensor::zeros([2]));
        assert_eq!(tape.backward(w).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
    }

    #[test]
    fn clear_frees_nodes() {
        let mut tape = Tape::<f32>::new();
        let w = tape.param(Tensor::zeros([2]));
        let _ = tape.sum(w).unwrap();
        assert_eq!(tape.len(), 2);
        tape.clear();
        assert!(tape.is_empty());
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_vocab() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.param(Tensor::zeros([3, 7]));
        let loss = tape
            .cross_entropy(logits, &[Some(1), None, Some(6)], 2.0)
            .unwrap();
        assert!((tape.value(loss).data()[0] - 7f64.ln()).abs() < 1e-12);
        let g = tape.backward(loss).unwrap().get(logits).unwrap();
        assert!(g.row(1).iter().all(|&v| v == 0.0));
    }
}
