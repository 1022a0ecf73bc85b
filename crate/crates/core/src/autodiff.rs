//! Define-by-run reverse-mode differentiation over dense vectors and matrices.
//!
//! A [`Tape`] is rebuilt for every example. Each op appends a node holding
//! its forward value; [`Tape::backward`] walks the nodes once in reverse and
//! returns a [`Gradients`] table. Parameters enter the tape by copy (or by a
//! single column for embedding lookups) and their gradients are added back
//! into the [`ParamStore`] with [`Gradients::accumulate_into`], so repeated
//! uses of one parameter sum their contributions.

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    ParamColumn { param: ParamId, index: usize, cols: usize },
    Matvec(Var, Var),
    Dot(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Sum(Var),
    MaskedSoftmax { input: Var, mask: Vec<bool> },
    Lookup { table: Var, index: usize },
    WeightedSum { weights: Var, items: Vec<Var> },
    Map { input: Var, df: fn(f64, f64) -> f64 },
    BceWithLogits { logits: Var, targets: Vec<f64> },
    SoftmaxCrossEntropy { logits: Var, target: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op_name: &'static str, value: Vec<f64>, shape: Vec<usize>, op: Op) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, shape, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn vec_len(&self, op: &'static str, v: Var) -> Result<usize> {
        match self.nodes[v.0].shape.as_slice() {
            [n] => Ok(*n),
            other => Err(Error::dim(op, format!("expected vector, got shape {other:?}"))),
        }
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let (na, nb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if na != nb || self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            ));
        }
        Ok(na)
    }

    /// Records a constant or differentiable input.
    pub fn leaf(&mut self, t: &Tensor) -> Result<Var> {
        self.push("leaf", t.values().to_vec(), t.shape().to_vec(), Op::Leaf)
    }

    pub fn vector(&mut self, values: Vec<f64>) -> Result<Var> {
        if values.is_empty() {
            return Err(Error::EmptyInput("vector leaf"));
        }
        let n = values.len();
        self.push("leaf", values, vec![n], Op::Leaf)
    }

    pub fn zeros(&mut self, n: usize) -> Result<Var> {
        self.vector(vec![0.0; n])
    }

    /// Copies a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let t = store.get(id);
        self.push("param", t.values().to_vec(), t.shape().to_vec(), Op::Param(id))
    }

    /// Embedding lookup straight from a stored `[dim, entries]` table; only
    /// the selected column is copied and only it receives gradient.
    pub fn lookup_param(&mut self, store: &ParamStore, id: ParamId, index: usize) -> Result<Var> {
        let t = store.get(id);
        let (_, cols) = t.dims2()?;
        let value = t.column(index)?;
        let n = value.len();
        self.push(
            "embedding_lookup",
            value,
            vec![n],
            Op::ParamColumn {
                param: id,
                index,
                cols,
            },
        )
    }

    /// Embedding lookup on a table that is already on the tape.
    pub fn lookup(&mut self, table: Var, index: usize) -> Result<Var> {
        let node = &self.nodes[table.0];
        let (rows, cols) = match node.shape.as_slice() {
            [r, c] => (*r, *c),
            other => return Err(Error::dim("embedding_lookup", format!("table shape {other:?}"))),
        };
        if index >= cols {
            return Err(Error::Index {
                what: "embedding table",
                index,
                size: cols,
            });
        }
        let value = (0..rows).map(|i| node.value[i * cols + index]).collect();
        self.push("embedding_lookup", value, vec![rows], Op::Lookup { table, index })
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (rows, cols) = match self.nodes[m.0].shape.as_slice() {
            [r, c] => (*r, *c),
            other => return Err(Error::dim("matvec", format!("matrix shape {other:?}"))),
        };
        let n = self.vec_len("matvec", x)?;
        if n != cols {
            return Err(Error::dim("matvec", format!("[{rows}x{cols}] times [{n}]")));
        }
        let (mv, xv) = (&self.nodes[m.0].value, &self.nodes[x.0].value);
        let out = (0..rows)
            .map(|i| {
                mv[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        self.push("matvec", out, vec![rows], Op::Matvec(m, x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("dot", a, b)?;
        let s = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        self.push("dot", vec![s], vec![1], Op::Dot(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("add", a, b)?;
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push("add", out, shape, Op::Add(a, b))
    }

    /// Sums any number of same-shape nodes.
    pub fn add_all(&mut self, items: &[Var]) -> Result<Var> {
        let (&first, rest) = items.split_first().ok_or(Error::EmptyInput("add_all"))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("elementwise_mul", a, b)?;
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push("elementwise_mul", out, shape, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.nodes[a.0].value.iter().map(|x| x * s).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push("scale", out, shape, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push("tanh", out, shape, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push("sigmoid", out, shape, Op::Sigmoid(a))
    }

    /// Elementwise map with a caller-supplied derivative `df(x, y)`.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Result<Var> {
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push("map", out, shape, Op::Map { input: a, df })
    }

    /// Concatenates vectors along their single axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat"));
        }
        let mut out = Vec::new();
        for &p in parts {
            self.vec_len("concat", p)?;
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let n = out.len();
        self.push("concat", out, vec![n], Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.vec_len("slice", a)?;
        if len == 0 || start + len > n {
            return Err(Error::dim("slice", format!("[{start}..{}] of {n}", start + len)));
        }
        let out = self.nodes[a.0].value[start..start + len].to_vec();
        self.push("slice", out, vec![len], Op::Slice { input: a, start })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().sum();
        self.push("sum", vec![s], vec![1], Op::Sum(a))
    }

    /// Softmax over the entries where `mask` is true; masked entries are 0.
    pub fn masked_softmax(&mut self, scores: Var, mask: &[bool]) -> Result<Var> {
        let n = self.vec_len("masked_softmax", scores)?;
        if mask.len() != n {
            return Err(Error::dim("masked_softmax", format!("{n} scores, {} mask", mask.len())));
        }
        let out = masked_softmax_values(&self.nodes[scores.0].value, mask)?;
        self.push(
            "masked_softmax",
            out,
            vec![n],
            Op::MaskedSoftmax {
                input: scores,
                mask: mask.to_vec(),
            },
        )
    }

    /// `Σ_i weights[i] · items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let n = self.vec_len("weighted_sum", weights)?;
        if n != items.len() || items.is_empty() {
            return Err(Error::dim("weighted_sum", format!("{n} weights, {} items", items.len())));
        }
        let m = self.vec_len("weighted_sum", items[0])?;
        let mut out = vec![0.0; m];
        for (k, &it) in items.iter().enumerate() {
            if self.vec_len("weighted_sum", it)? != m {
                return Err(Error::dim("weighted_sum", "items differ in length"));
            }
            let w = self.nodes[weights.0].value[k];
            for (o, x) in out.iter_mut().zip(&self.nodes[it.0].value) {
                *o += w * x;
            }
        }
        self.push(
            "weighted_sum",
            out,
            vec![m],
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let n = self.vec_len("bce_with_logits", logits)?;
        if targets.len() != n {
            return Err(Error::dim("bce_with_logits", format!("{n} logits, {} targets", targets.len())));
        }
        let loss = self.nodes[logits.0]
            .value
            .iter()
            .zip(targets)
            .map(|(&z, &y)| softplus(z) - z * y)
            .sum::<f64>()
            / n as f64;
        self.push(
            "bce_with_logits",
            vec![loss],
            vec![1],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// Categorical cross-entropy of `softmax(logits)` against one target.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let n = self.vec_len("softmax_cross_entropy", logits)?;
        if target >= n {
            return Err(Error::Index {
                what: "label",
                index: target,
                size: n,
            });
        }
        let z = &self.nodes[logits.0].value;
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[target];
        self.push(
            "softmax_cross_entropy",
            vec![loss],
            vec![1],
            Op::SoftmaxCrossEntropy { logits, target },
        )
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.backprop_node(i, &g, &mut grads);
            grads[i] = g;
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((i, id, None)),
                Op::ParamColumn { param, index, cols } => Some((i, param, Some((index, cols)))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) | Op::ParamColumn { .. } => {}
            Op::Matvec(m, x) => {
                let cols = self.nodes[m.0].shape[1];
                let (mv, xv) = (&self.nodes[m.0].value, &self.nodes[x.0].value);
                let gm = acc(grads, *m, mv.len());
                for (r, &gr) in g.iter().enumerate() {
                    if gr != 0.0 {
                        for (dst, &xj) in gm[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                            *dst += gr * xj;
                        }
                    }
                }
                let gx = acc(grads, *x, cols);
                for (r, &gr) in g.iter().enumerate() {
                    if gr != 0.0 {
                        for (dst, &mij) in gx.iter_mut().zip(&mv[r * cols..(r + 1) * cols]) {
                            *dst += gr * mij;
                        }
                    }
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                axpy(acc(grads, *a, av.len()), g[0], bv);
                axpy(acc(grads, *b, bv.len()), g[0], av);
            }
            Op::Add(a, b) => {
                axpy(acc(grads, *a, g.len()), 1.0, g);
                axpy(acc(grads, *b, g.len()), 1.0, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                for ((dst, gi), bi) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(bv) {
                    *dst += gi * bi;
                }
                for ((dst, gi), ai) in acc(grads, *b, g.len()).iter_mut().zip(g).zip(av) {
                    *dst += gi * ai;
                }
            }
            Op::Scale(a, s) => axpy(acc(grads, *a, g.len()), *s, g),
            Op::Tanh(a) => {
                for ((dst, gi), yi) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(y) {
                    *dst += gi * (1.0 - yi * yi);
                }
            }
            Op::Sigmoid(a) => {
                for ((dst, gi), yi) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(y) {
                    *dst += gi * yi * (1.0 - yi);
                }
            }
            Op::Map { input, df } => {
                let xv = &self.nodes[input.0].value;
                for (k, dst) in acc(grads, *input, g.len()).iter_mut().enumerate() {
                    *dst += g[k] * df(xv[k], y[k]);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    axpy(acc(grads, *p, n), 1.0, &g[off..off + n]);
                    off += n;
                }
            }
            Op::Slice { input, start } => {
                let n = self.nodes[input.0].value.len();
                axpy(&mut acc(grads, *input, n)[*start..*start + g.len()], 1.0, g);
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                acc(grads, *a, n).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::MaskedSoftmax { input, mask } => {
                let inner: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                for (k, dst) in acc(grads, *input, g.len()).iter_mut().enumerate() {
                    if mask[k] {
                        *dst += y[k] * (g[k] - inner);
                    }
                }
            }
            Op::Lookup { table, index } => {
                let cols = self.nodes[table.0].shape[1];
                let n = self.nodes[table.0].value.len();
                let gt = acc(grads, *table, n);
                for (r, gi) in g.iter().enumerate() {
                    gt[r * cols + index] += gi;
                }
            }
            Op::WeightedSum { weights, items } => {
                let wv = &self.nodes[weights.0].value;
                let gw: Vec<f64> = items
                    .iter()
                    .map(|it| self.nodes[it.0].value.iter().zip(g).map(|(a, b)| a * b).sum())
                    .collect();
                axpy(acc(grads, *weights, wv.len()), 1.0, &gw);
                for (k, it) in items.iter().enumerate() {
                    if wv[k] != 0.0 {
                        axpy(acc(grads, *it, g.len()), wv[k], g);
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let z = &self.nodes[logits.0].value;
                let n = z.len() as f64;
                for (k, dst) in acc(grads, *logits, z.len()).iter_mut().enumerate() {
                    *dst += g[0] * (sigmoid(z[k]) - targets[k]) / n;
                }
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let z = &self.nodes[logits.0].value;
                let p = masked_softmax_values(z, &vec![true; z.len()]).expect("non-empty logits");
                for (k, dst) in acc(grads, *logits, z.len()).iter_mut().enumerate() {
                    let onehot = if k == *target { 1.0 } else { 0.0 };
                    *dst += g[0] * (p[k] - onehot);
                }
            }
        }
    }
}

fn acc(grads: &mut [Vec<f64>], v: Var, n: usize) -> &mut Vec<f64> {
    let g = &mut grads[v.0];
    if g.is_empty() {
        g.resize(n, 0.0);
    }
    g
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, xi) in dst.iter_mut().zip(x) {
        *d += a * xi;
    }
}

/// Plain-array masked softmax with max subtraction.
pub fn masked_softmax_values(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyGroup);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}

/// Tape node, parameter, and the column it was read from (whole tensor if none).
type ParamUse = (usize, ParamId, Option<(usize, usize)>);

/// Result of one reverse pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
    params: Vec<ParamUse>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v` (zeros if unreached).
    pub fn get(&self, v: Var, len: usize) -> Vec<f64> {
        let g = &self.grads[v.0];
        if g.is_empty() {
            vec![0.0; len]
        } else {
            g.clone()
        }
    }

    /// Like [`Gradients::get`] but sized from the tape.
    pub fn of(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.get(v, tape.value(v).len())
    }

    /// Adds every parameter contribution into the store's gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, id, column) in &self.params {
            let g = &self.grads[node];
            if g.is_empty() {
                continue;
            }
            let dst = store.get_mut(id).grad_mut();
            match column {
                None => axpy(dst, 1.0, g),
                Some((index, cols)) => {
                    for (r, gi) in g.iter().enumerate() {
                        dst[r * cols + index] += gi;
                    }
                }
            }
        }
    }
}
