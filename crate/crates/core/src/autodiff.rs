//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in creation order; since inputs always
//! precede outputs, walking the tape backwards is a valid topological order.
//! Graphs own their values and gradients, so independent graphs can be used
//! from different threads at once.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Gelu(Var),
    Mean { x: Var, axis: usize },
    Sum(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Index(Var, usize),
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a length-`c` vector to every row of an `r × c` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2("add_bias")?;
        if self.shape(bias) != [c] {
            return Err(self.shape_err("add_bias", x, bias));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += b[j];
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    /// Multiplies every entry of `x` by the one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let Some(factor) = self.value(s).item() else {
            return Err(self.shape_err("scale_by", x, s));
        };
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x, s]);
        Ok(self.push(value, Op::ScaleBy(x, s), rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = tensor::softmax_rows(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let value = tensor::layer_norm_rows(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, eps }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(tensor::gelu);
        let rg = self.rg(&[x]);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = tensor::mean_axis(self.value(x), axis)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Mean { x, axis }, rg))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        if axis > 1 {
            return Err(Error::Domain {
                op: "concat",
                detail: format!("axis {axis} not supported"),
            });
        }
        let (r0, c0) = self.value(first).dims2("concat")?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat")?;
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(self.shape_err("concat", first, p));
            }
            total += if axis == 0 { r } else { c };
        }
        let value = if axis == 0 {
            let mut data = Vec::with_capacity(total * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::new(vec![total, c0], data)?
        } else {
            let mut data = Vec::with_capacity(r0 * total);
            for i in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(i));
                }
            }
            Tensor::new(vec![r0, total], data)?
        };
        let rg = self.rg(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Rows (`axis == 0`) or columns (`axis == 1`) `start..start + len` of a matrix.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2("slice")?;
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(Error::Domain {
                op: "slice",
                detail: format!("range {start}..{} on axis {axis} of {:?}", start + len, [r, c]),
            });
        }
        let src = self.value(x);
        let value = if axis == 0 {
            Tensor::new(vec![len, c], src.data()[start * c..(start + len) * c].to_vec())?
        } else {
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&src.row(i)[start..start + len]);
            }
            Tensor::new(vec![r, len], data)?
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Entry `flat` (row-major) of `x` as a rank-0 tensor.
    pub fn index(&mut self, x: Var, flat: usize) -> Result<Var> {
        let src = self.value(x);
        if flat >= src.numel() {
            return Err(Error::Domain {
                op: "index",
                detail: format!("index {flat} out of range for {:?}", src.shape()),
            });
        }
        let value = Tensor::scalar(src.data()[flat]);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Index(x, flat), rg))
    }

    /// Gathers rows of `table` (`vocab × d`) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.value(table).dims2("embedding")?;
        if ids.is_empty() {
            return Err(Error::Contract("embedding lookup of an empty sequence".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::UnknownTokenId { id, vocab });
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Mean cross-entropy of `logits` (`batch × classes`) against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, classes) = self.value(logits).dims2("cross_entropy")?;
        if targets.len() != b || targets.iter().any(|&t| t >= classes) {
            return Err(Error::Contract(format!(
                "cross_entropy: {} targets for {b} rows of {classes} classes",
                targets.len()
            )));
        }
        let x = self.value(logits);
        if !x.is_finite() {
            return Err(Error::Domain {
                op: "cross_entropy",
                detail: "non-finite logits".into(),
            });
        }
        // log-sum-exp form keeps confident wrong answers finite
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let row = x.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - row[t]
            })
            .sum();
        let value = Tensor::scalar(total / b as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Back-propagates from a one-element `loss`, accumulating into the
    /// gradient buffers of trainable leaves. Call [`Graph::zero_grad`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                if self.grads.len() < self.nodes.len() {
                    self.grads.resize(self.nodes.len(), None);
                }
                match &mut self.grads[idx] {
                    Some(acc) => acc.add_assign(&upstream),
                    slot => *slot = Some(upstream),
                }
                continue;
            }
            for (input, g) in self.local_grads(idx, &upstream)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` with respect to each input.
    fn local_grads(&self, idx: usize, dy: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                vec![
                    (*a, tensor::matmul(dy, &bv.transpose()?)?),
                    (*b, tensor::matmul(&av.transpose()?, dy)?),
                ]
            }
            Op::Transpose(x) => vec![(*x, dy.transpose()?)],
            Op::Add(a, b) => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::AddBias(x, bias) => {
                let (r, c) = dy.dims2("add_bias")?;
                let mut db = vec![0.0; c];
                for i in 0..r {
                    for (acc, v) in db.iter_mut().zip(dy.row(i)) {
                        *acc += v;
                    }
                }
                vec![(*x, dy.clone()), (*bias, Tensor::vector(db)?)]
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                vec![
                    (*a, dy.zip_map(bv, "mul", |g, v| g * v)?),
                    (*b, dy.zip_map(av, "mul", |g, v| g * v)?),
                ]
            }
            Op::Scale(x, f) => vec![(*x, dy.map(|g| g * f))],
            Op::ScaleBy(x, s) => {
                let factor = self.value(*s).item().unwrap_or_default();
                let xv = self.value(*x);
                let ds: f64 = dy.data().iter().zip(xv.data()).map(|(g, v)| g * v).sum();
                let ds = Tensor::new(self.shape(*s).to_vec(), vec![ds])?;
                vec![(*x, dy.map(|g| g * factor)), (*s, ds)]
            }
            Op::Softmax(x) => {
                let (r, c) = y.dims2("softmax_rows")?;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = dy.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*x, Tensor::new(vec![r, c], dx)?)]
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gamma).data();
                let (r, c) = xv.dims2("layer_norm")?;
                let mut dx = vec![0.0; r * c];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut xhat = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                for i in 0..r {
                    let (mean, rstd) = tensor::row_moments(xv.row(i), *eps);
                    let gr = dy.row(i);
                    for j in 0..c {
                        xhat[j] = (xv.row(i)[j] - mean) * rstd;
                        dxhat[j] = gr[j] * gv[j];
                        dgamma[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                    }
                    let mean_dxhat = dxhat.iter().sum::<f64>() / c as f64;
                    let mean_dxhat_xhat = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx[i * c + j] = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                vec![
                    (*x, Tensor::new(vec![r, c], dx)?),
                    (*gamma, Tensor::vector(dgamma)?),
                    (*beta, Tensor::vector(dbeta)?),
                ]
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                vec![(*x, dy.zip_map(xv, "gelu", |g, v| g * tensor::gelu_grad(v))?)]
            }
            Op::Mean { x, axis } => {
                let shape = self.shape(*x).to_vec();
                let (outer, len, inner) = tensor::split_axis(&shape, *axis);
                let mut dx = vec![0.0; outer * len * inner];
                let scale = 1.0 / len as f64;
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            dx[(o * len + k) * inner + i] = dy.data()[o * inner + i] * scale;
                        }
                    }
                }
                vec![(*x, Tensor::new(shape, dx)?)]
            }
            Op::Sum(x) => {
                let g = dy.data()[0];
                vec![(*x, Tensor::full(self.shape(*x), g))]
            }
            Op::Concat { parts, axis } => {
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.value(p).dims2("concat")?;
                    let piece = if *axis == 0 {
                        let cols = dy.shape()[1];
                        Tensor::new(vec![r, c], dy.data()[offset * cols..(offset + r) * cols].to_vec())?
                    } else {
                        let mut data = Vec::with_capacity(r * c);
                        for i in 0..r {
                            data.extend_from_slice(&dy.row(i)[offset..offset + c]);
                        }
                        Tensor::new(vec![r, c], data)?
                    };
                    offset += if *axis == 0 { r } else { c };
                    out.push((p, piece));
                }
                out
            }
            Op::Slice { x, axis, start } => {
                let (r, c) = self.value(*x).dims2("slice")?;
                let (sr, sc) = dy.dims2("slice")?;
                let mut dx = vec![0.0; r * c];
                for i in 0..sr {
                    for j in 0..sc {
                        let (ti, tj) = if *axis == 0 { (start + i, j) } else { (i, start + j) };
                        dx[ti * c + tj] = dy.data()[i * sc + j];
                    }
                }
                vec![(*x, Tensor::new(vec![r, c], dx)?)]
            }
            Op::Reshape(x) => vec![(*x, dy.reshape(self.shape(*x))?)],
            Op::Index(x, flat) => {
                let mut dx = Tensor::zeros(self.shape(*x));
                dx.data_mut()[*flat] = dy.data()[0];
                vec![(*x, dx)]
            }
            Op::Embedding { table, ids } => {
                let mut dt = Tensor::zeros(self.shape(*table));
                let d = dt.shape()[1];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt.data_mut()[id * d + j] += dy.data()[row * d + j];
                    }
                }
                vec![(*table, dt)]
            }
            Op::CrossEntropy { logits, targets } => {
                let mut probs = tensor::softmax_rows(self.value(*logits))?;
                let (b, classes) = probs.dims2("cross_entropy")?;
                let scale = dy.data()[0] / b as f64;
                let data = probs.data_mut();
                for (i, &t) in targets.iter().enumerate() {
                    data[i * classes + t] -= 1.0;
                }
                for v in data.iter_mut() {
                    *v *= scale;
                }
                vec![(*logits, probs)]
            }
        };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap());
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dot_product_gives_twice_w() {
        let mut g = Graph::new();
        let w = Tensor::vector(vec![0.5, -2.0, 3.0]).unwrap();
        let wv = g.param(w.clone());
        let sq = g.mul(wv, wv).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(wv).unwrap(), &w.map(|v| 2.0 * v));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert_eq!(g.backward(x).unwrap_err().kind(), "contract");
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let x = g.param(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let p = g.mul(c, x).unwrap();
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn unknown_embedding_id() {
        let mut g = Graph::new();
        let t = g.param(Tensor::zeros(&[3, 2]));
        assert_eq!(g.embedding(t, &[0, 3]).unwrap_err().kind(), "token");
    }
}
