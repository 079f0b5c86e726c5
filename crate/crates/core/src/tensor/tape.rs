//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every op of one forward pass as a node holding its
//! value and operand handles. [`Tape::backward`] walks the nodes once in
//! reverse record order and returns the gradients of the trainable
//! parameters that were read through [`Tape::param`].
//!
//! Parameters are never copied onto the tape; param nodes point into the
//! borrowed [`ParameterStore`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::dense::{matmul_raw, transpose_raw};
use crate::tensor::{Gradients, ParamId, ParameterStore, Tensor};

/// Storage precision of op results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    /// Every op result is rounded to the nearest 32-bit float.
    F32,
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    /// Flat index of the selected operand element for every output element.
    Select(Var, Vec<usize>),
    SoftmaxRows(Var),
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    ComplementCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
        eps: f64,
    },
    Sum(Var),
    Dot(Var, Var),
}

#[derive(Debug)]
struct Node {
    /// `None` for param nodes; their value lives in the store.
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    precision: Precision,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self::with_precision(store, Precision::F64)
    }

    pub fn with_precision(store: &'s ParameterStore, precision: Precision) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("non-param node without a value"),
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        let value = match self.precision {
            Precision::F64 => value,
            Precision::F32 => value.map(|x| x as f32 as f64),
        };
        if !value.is_finite() {
            return Err(Error::Numeric {
                location: op_name.to_string(),
                detail: format!("non-finite result of shape {:?}", value.shape()),
            });
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2()?;
        let (k2, n) = tb.dims2()?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = Tensor::matrix(m, n, matmul_raw(ta.data(), tb.data(), m, k, n))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = ta.dims2()?;
        let out = Tensor::matrix(c, r, transpose_raw(ta.data(), r, c))?;
        self.push("transpose", out, Op::Transpose(a))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.numel() == 1 {
            let y = tb.data()[0];
            ta.map(|x| f(x, y))
        } else if ta.numel() == 1 {
            let x = ta.data()[0];
            tb.map(|y| f(x, y))
        } else {
            return Err(Error::Dimension {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push("scale", out, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(a))
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("concat_rows of zero tensors".into()));
        }
        let (_, cols) = self.value(parts[0]).dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.dims2()?;
            if c != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        if start >= end || end > r {
            return Err(Error::Argument(format!(
                "row slice {start}..{end} out of range for {:?}",
                t.shape()
            )));
        }
        let out = Tensor::matrix(end - start, c, t.data()[start * c..end * c].to_vec())?;
        self.push("slice_rows", out, Op::SliceRows(a, start))
    }

    /// Embedding lookup: rows `indices` of a table, in order.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = t.dims2()?;
        if indices.is_empty() {
            return Err(Error::Usage("gather with no indices".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::Argument(format!(
                    "gather index {i} out of range for table of {r} rows"
                )));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::matrix(indices.len(), c, data)?;
        self.push("gather", out, Op::Gather(table, indices.to_vec()))
    }

    /// Maximum over all elements. Backpropagates to the first maximal element.
    pub fn max(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data();
        let arg = argmax_first(data.iter().copied());
        let out = Tensor::scalar(data[arg]);
        self.push("max", out, Op::Select(a, vec![arg]))
    }

    /// Per-column maximum over groups of rows.
    ///
    /// For an `r x k` input, output row `g` column `j` is the maximum of
    /// `a[i, j]` over `i` in `groups[g]`, scanned in the listed order; the
    /// first maximal row receives the gradient.
    pub fn group_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let t = self.value(a);
        let (r, k) = t.dims2()?;
        if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
            return Err(Error::Usage("group_max needs non-empty groups".into()));
        }
        let mut data = Vec::with_capacity(groups.len() * k);
        let mut picks = Vec::with_capacity(groups.len() * k);
        for g in groups {
            if let Some(&bad) = g.iter().find(|&&i| i >= r) {
                return Err(Error::Argument(format!(
                    "group_max row {bad} out of range for {r} rows"
                )));
            }
            for j in 0..k {
                let pos = argmax_first(g.iter().map(|&i| t.data()[i * k + j]));
                let flat = g[pos] * k + j;
                picks.push(flat);
                data.push(t.data()[flat]);
            }
        }
        let out = Tensor::matrix(groups.len(), k, data)?;
        self.push("group_max", out, Op::Select(a, picks))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(softmax(t.row_slice(i)));
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push("softmax_rows", out, Op::SoftmaxRows(a))
    }

    fn row_probs(&self, logits: Var, targets: &[usize]) -> Result<Tensor> {
        let t = self.value(logits);
        let (r, c) = t.dims2()?;
        if targets.len() != r {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&i| i >= c) {
            return Err(Error::Argument(format!(
                "target index {bad} out of range for {c} classes"
            )));
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(softmax(t.row_slice(i)));
        }
        Tensor::matrix(r, c, data)
    }

    /// Row-wise `-log softmax(logits)[target]`; returns an `r x 1` column.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let probs = self.row_probs(logits, targets)?;
        let t = self.value(logits);
        let (r, _) = t.dims2()?;
        let losses = (0..r)
            .map(|i| {
                let row = t.row_slice(i);
                let (max, shifted_lse) = shifted_log_sum_exp(row);
                (max - row[targets[i]]) + shifted_lse
            })
            .collect();
        let out = Tensor::matrix(r, 1, losses)?;
        self.push(
            "softmax_cross_entropy",
            out,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Row-wise `-[log p(target) + sum_{v != target} log(1 - p(v))]` with
    /// `p = softmax(logits)` clamped to `[eps, 1 - eps]`; returns `r x 1`.
    pub fn complement_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        eps: f64,
    ) -> Result<Var> {
        let probs = self.row_probs(logits, targets)?;
        let (r, c) = probs.dims2()?;
        let losses = (0..r)
            .map(|i| {
                let row = probs.row_slice(i);
                let mut acc = 0.0;
                for (j, &p) in row.iter().enumerate() {
                    let p = p.clamp(eps, 1.0 - eps);
                    acc += if j == targets[i] { p.ln() } else { (-p).ln_1p() };
                }
                debug_assert!(c > 0);
                -acc
            })
            .collect();
        let out = Tensor::matrix(r, 1, losses)?;
        self.push(
            "complement_cross_entropy",
            out,
            Op::ComplementCe {
                logits,
                targets: targets.to_vec(),
                probs,
                eps,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a))
    }

    /// Inner product of two tensors with the same element count.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.numel() != tb.numel() {
            return Err(Error::Dimension {
                op: "dot",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let v = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        self.push("dot", Tensor::scalar(v), Op::Dot(a, b))
    }

    /// Propagate from a scalar node back to every parameter it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("node {} is not on this tape", loss.0)));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut out = Gradients::with_len(self.store.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match &mut out.per_param[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => {
                        *slot = Some(g.with_shape(self.store.value(*id).shape().to_vec()))
                    }
                },
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = ta.dims2()?;
                    let (_, n) = tb.dims2()?;
                    let bt = transpose_raw(tb.data(), k, n);
                    let da = matmul_raw(g.data(), &bt, m, n, k);
                    let at = transpose_raw(ta.data(), m, k);
                    let db = matmul_raw(&at, g.data(), k, m, n);
                    accumulate(&mut grads, *a, ta.shape(), da);
                    accumulate(&mut grads, *b, tb.shape(), db);
                }
                Op::Transpose(a) => {
                    let ta = self.value(*a);
                    let (r, c) = ta.dims2()?;
                    accumulate(&mut grads, *a, ta.shape(), transpose_raw(g.data(), c, r));
                }
                Op::Add(a, b) => {
                    self.accumulate_broadcast(&mut grads, *a, g.data().to_vec());
                    self.accumulate_broadcast(&mut grads, *b, g.into_data());
                }
                Op::Sub(a, b) => {
                    let neg = g.data().iter().map(|v| -v).collect();
                    self.accumulate_broadcast(&mut grads, *a, g.into_data());
                    self.accumulate_broadcast(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da = zip_broadcast(g.data(), tb.data(), |gv, y| gv * y);
                    let db = zip_broadcast(g.data(), ta.data(), |gv, x| gv * x);
                    self.accumulate_broadcast(&mut grads, *a, da);
                    self.accumulate_broadcast(&mut grads, *b, db);
                }
                Op::Div(a, b) => {
                    let tb = self.value(*b);
                    let y = node.value.as_ref().expect("div value");
                    let da = zip_broadcast(g.data(), tb.data(), |gv, d| gv / d);
                    // d(a/b)/db = -(a/b)/b
                    let gy: Vec<f64> = g.data().iter().zip(y.data()).map(|(gv, q)| -gv * q).collect();
                    let db = zip_broadcast(&gy, tb.data(), |v, d| v / d);
                    self.accumulate_broadcast(&mut grads, *a, da);
                    self.accumulate_broadcast(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    let da = g.data().iter().map(|v| v * c).collect();
                    accumulate(&mut grads, *a, self.value(*a).shape(), da);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("sigmoid value");
                    let da = g.data().iter().zip(y.data()).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                    accumulate(&mut grads, *a, self.value(*a).shape(), da);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("tanh value");
                    let da = g.data().iter().zip(y.data()).map(|(gv, t)| gv * (1.0 - t * t)).collect();
                    accumulate(&mut grads, *a, self.value(*a).shape(), da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let tp = self.value(*p);
                        let n = tp.numel();
                        accumulate(&mut grads, *p, tp.shape(), g.data()[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::SliceRows(a, start) => {
                    let ta = self.value(*a);
                    let (_, c) = ta.dims2()?;
                    let mut da = vec![0.0; ta.numel()];
                    da[start * c..start * c + g.numel()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ta.shape(), da);
                }
                Op::Gather(table, indices) => {
                    // scatter straight into the table's buffer; tables can be large
                    let tt = self.value(*table);
                    let (_, c) = tt.dims2()?;
                    let slot = grads[table.0].get_or_insert_with(|| Tensor::zeros(tt.shape()));
                    let dt = slot.data_mut();
                    for (r, &i) in indices.iter().enumerate() {
                        for (d, gv) in dt[i * c..(i + 1) * c].iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                            *d += gv;
                        }
                    }
                }
                Op::Select(a, picks) => {
                    let ta = self.value(*a);
                    let mut da = vec![0.0; ta.numel()];
                    for (&flat, gv) in picks.iter().zip(g.data()) {
                        da[flat] += gv;
                    }
                    accumulate(&mut grads, *a, ta.shape(), da);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let (r, c) = y.dims2()?;
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = y.row_slice(i);
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let inner: f64 = yr.iter().zip(gr).map(|(s, gv)| s * gv).sum();
                        for j in 0..c {
                            da[i * c + j] = yr[j] * (gr[j] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, self.value(*a).shape(), da);
                }
                Op::SoftmaxCe {
                    logits,
                    targets,
                    probs,
                } => {
                    let (r, c) = probs.dims2()?;
                    let mut da = probs.data().to_vec();
                    for i in 0..r {
                        da[i * c + targets[i]] -= 1.0;
                        let gi = g.data()[i];
                        da[i * c..(i + 1) * c].iter_mut().for_each(|v| *v *= gi);
                    }
                    accumulate(&mut grads, *logits, self.value(*logits).shape(), da);
                }
                Op::ComplementCe {
                    logits,
                    targets,
                    probs,
                    eps,
                } => {
                    let (r, c) = probs.dims2()?;
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let p = probs.row_slice(i);
                        // dL/dp, zero where the clamp is active
                        let dp: Vec<f64> = p
                            .iter()
                            .enumerate()
                            .map(|(j, &pj)| {
                                if pj < *eps || pj > 1.0 - eps {
                                    0.0
                                } else if j == targets[i] {
                                    -1.0 / pj
                                } else {
                                    1.0 / (1.0 - pj)
                                }
                            })
                            .collect();
                        let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                        let gi = g.data()[i];
                        for j in 0..c {
                            da[i * c + j] = gi * p[j] * (dp[j] - inner);
                        }
                    }
                    accumulate(&mut grads, *logits, self.value(*logits).shape(), da);
                }
                Op::Sum(a) => {
                    let ta = self.value(*a);
                    let gv = g.data()[0];
                    accumulate(&mut grads, *a, ta.shape(), vec![gv; ta.numel()]);
                }
                Op::Dot(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let gv = g.data()[0];
                    let da = tb.data().iter().map(|v| v * gv).collect();
                    let db = ta.data().iter().map(|v| v * gv).collect();
                    accumulate(&mut grads, *a, ta.shape(), da);
                    accumulate(&mut grads, *b, tb.shape(), db);
                }
            }
        }
        Ok(out)
    }

    /// Route a gradient of the broadcast result back to an operand, summing
    /// when the operand was a broadcast scalar.
    fn accumulate_broadcast(&self, grads: &mut [Option<Tensor>], v: Var, g: Vec<f64>) {
        let t = self.value(v);
        if t.numel() == g.len() {
            accumulate(grads, v, t.shape(), g);
        } else {
            let s = g.iter().sum();
            accumulate(grads, v, t.shape(), vec![s]);
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape")),
    }
}

/// Elementwise `f(g, other)` where `other` may be a broadcast scalar.
fn zip_broadcast(g: &[f64], other: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if other.len() == 1 {
        g.iter().map(|&gv| f(gv, other[0])).collect()
    } else if g.len() == other.len() {
        g.iter().zip(other).map(|(&gv, &o)| f(gv, o)).collect()
    } else {
        // scalar result of a scalar-op-scalar can't reach here; g is the larger side
        debug_assert_eq!(g.len(), 1);
        other.iter().map(|&o| f(g[0], o)).collect()
    }
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if i == 0 || v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let (max, rest) = shifted_log_sum_exp(xs);
    max + rest
}

/// `(max, ln sum exp(x - max))`, the second term via `ln_1p` over the
/// non-maximal entries so tiny tails keep full precision.
fn shifted_log_sum_exp(xs: &[f64]) -> (f64, f64) {
    let arg = argmax_first(xs.iter().copied());
    let max = xs[arg];
    let tail: f64 = xs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != arg)
        .map(|(_, x)| (x - max).exp())
        .sum();
    (max, tail.ln_1p())
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
