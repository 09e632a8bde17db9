use std::rc::Rc;

use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Deliberate errors in backward rules, used as negative controls for
/// gradient checking.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Multiplies every relu input gradient by the given factor.
    ReluGradScale(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { inputs: Vec<Var>, axis: usize },
    Gather { input: Var, indices: Rc<[usize]>, axis: usize },
    Sum { input: Var, axis: usize },
    Mean { input: Var, axis: usize },
    Max { input: Var, axis: usize, argmax: Vec<usize> },
    Relu(Var),
    Softmax(Var),
    Sqrt(Var),
    Abs(Var),
    Broadcast { input: Var, map: Rc<[usize]> },
    Reshape(Var),
    Transpose(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records forward operations for reverse-mode differentiation.
///
/// A tape created with [`Tape::no_record`] computes the same forward values
/// but keeps no graph; calling [`Tape::backward`] on it is an error.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
    fault: Option<Fault>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every grad-requiring leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`; `None` when `var` is not a grad-requiring leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// Splits `shape` around `axis` into `(outer, axis_len, inner)`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(shape: &[usize], axis: usize, what: &str) -> Result<()> {
    if axis >= shape.len() {
        return shape_err(format!("{what}: axis {axis} out of range for shape {shape:?}"));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
            fault: None,
        }
    }

    /// A tape that evaluates forward values only.
    pub fn no_record() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let (op, needs_grad) = if self.record {
            (op, needs_grad)
        } else {
            (Op::Leaf, false)
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, t: Tensor) -> Var {
        let ng = self.record;
        self.push(t, Op::Leaf, ng)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return shape_err(format!("bmm {sa:?} x {sb:?}"));
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bt * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for t in 0..bt {
            matmul_into(
                &da[t * m * k..(t + 1) * m * k],
                &db[t * k * n..(t + 1) * k * n],
                &mut out[t * m * n..(t + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![bt, m, n], out), Op::BatchMatMul(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what} {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::from_parts(shape, data), op, ng)
    }

    fn map_unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        let ng = self.ng(a);
        self.push(Tensor::from_parts(shape, data), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map_unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    /// Square root. The gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Sqrt(a), f64::sqrt)
    }

    /// Absolute value. The gradient at exactly zero is taken as zero.
    pub fn abs(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Abs(a), f64::abs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return shape_err(format!("transpose of rank-{} tensor", s.len()));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = s.iter().product::<usize>() / (r * c).max(1);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for b in 0..batch {
            let base = b * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[base + j * r + i] = src[base + i * c + j];
                }
            }
        }
        let mut shape = s;
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Transpose(a), ng))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return shape_err("concat of zero tensors");
        };
        let base = self.shape(first).to_vec();
        check_axis(&base, axis, "concat")?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().enumerate().any(|(d, &n)| d != axis && n != base[d])
            {
                return shape_err(format!("concat along {axis}: {base:?} vs {s:?}"));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let ng = inputs.iter().any(|&v| self.ng(v));
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Selects `indices` along `axis` (repeats allowed).
    pub fn gather(&mut self, a: Var, indices: &[usize], axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        check_axis(&s, axis, "gather")?;
        let (outer, len, inner) = split(&s, axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return shape_err(format!("gather index {bad} out of range {len} on axis {axis}"));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let start = (o * len + i) * inner;
                out.extend_from_slice(&src[start..start + inner]);
            }
        }
        let mut shape = s;
        shape[axis] = indices.len();
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Gather {
                input: a,
                indices: indices.into(),
                axis,
            },
            ng,
        ))
    }

    fn reduce(&mut self, a: Var, axis: usize, what: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let s = self.shape(a).to_vec();
        check_axis(&s, axis, what)?;
        let (outer, len, inner) = split(&s, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, &x) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += x;
                }
            }
        }
        let mut shape = s;
        shape.remove(axis);
        Ok((shape, out))
    }

    /// Sums over `axis`, removing it.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, out) = self.reduce(a, axis, "sum")?;
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Sum { input: a, axis }, ng))
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, mut out) = self.reduce(a, axis, "mean")?;
        let len = self.shape(a)[axis] as f64;
        for x in &mut out {
            *x /= len;
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mean { input: a, axis }, ng))
    }

    /// Maximum over `axis`; ties resolve to the first position.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        check_axis(&s, axis, "max")?;
        let (outer, len, inner) = split(&s, axis);
        if len == 0 {
            return shape_err("max over an empty axis");
        }
        let src = self.value(a).data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let x = src[(o * len + l) * inner + i];
                    let slot = o * inner + i;
                    if x > out[slot] || l == 0 {
                        out[slot] = x;
                        argmax[slot] = l;
                    }
                }
            }
        }
        let mut shape = s;
        shape.remove(axis);
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Max {
                input: a,
                axis,
                argmax,
            },
            ng,
        ))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, &[n])?;
        self.sum(flat, 0)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, &[n])?;
        self.mean(flat, 0)
    }

    /// Softmax over the last axis. Each row is shifted by its maximum first.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let Some(&width) = s.last() else {
            return shape_err("softmax of a scalar");
        };
        let mut out = self.value(a).data().to_vec();
        if width > 0 {
            for row in out.chunks_exact_mut(width) {
                softmax_row(row);
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(s, out), Op::Softmax(a), ng))
    }

    /// Numpy-style broadcast of `a` to `shape` (right-aligned, size-1 axes expand).
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src_shape = self.shape(a).to_vec();
        let map = broadcast_map(&src_shape, shape)?;
        let src = self.value(a).data();
        let out = map.iter().map(|&i| src[i]).collect();
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(shape.to_vec(), out),
            Op::Broadcast {
                input: a,
                map: map.into(),
            },
            ng,
        ))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.record {
            return Err(Error::Contract("backward on a non-recording tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                (node.needs_grad && matches!(node.op, Op::Leaf)).then(|| {
                    let shape = node.value.shape().to_vec();
                    match g {
                        Some(g) => Tensor::from_parts(shape, g),
                        None => Tensor::zeros(&shape),
                    }
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.accumulate(grads, *a) {
                    matmul_grad_lhs(g, vb, ga, m, k, n);
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    matmul_grad_rhs(va, g, gb, m, k, n);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.accumulate(grads, *a) {
                    for t in 0..bt {
                        matmul_grad_lhs(
                            &g[t * m * n..(t + 1) * m * n],
                            &vb[t * k * n..(t + 1) * k * n],
                            &mut ga[t * m * k..(t + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    for t in 0..bt {
                        matmul_grad_rhs(
                            &va[t * m * k..(t + 1) * m * k],
                            &g[t * m * n..(t + 1) * m * n],
                            &mut gb[t * k * n..(t + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(acc) = self.accumulate(grads, v) {
                        axpy(sign, g, acc);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(acc) = self.accumulate(grads, v) {
                        axpy(sign, g, acc);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(acc) = self.accumulate(grads, *a) {
                    for ((acc, &gi), &y) in acc.iter_mut().zip(g).zip(vb) {
                        *acc += gi * y;
                    }
                }
                if let Some(acc) = self.accumulate(grads, *b) {
                    for ((acc, &gi), &x) in acc.iter_mut().zip(g).zip(va) {
                        *acc += gi * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(acc) = self.accumulate(grads, *a) {
                    axpy(*s, g, acc);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split(node.value.shape(), *axis);
                let total = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.shape(v)[*axis] * inner;
                    if let Some(acc) = self.accumulate(grads, v) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            axpy(1.0, src, &mut acc[o * chunk..(o + 1) * chunk]);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Gather {
                input,
                indices,
                axis,
            } => {
                let (outer, len, inner) = split(self.shape(*input), *axis);
                if let Some(acc) = self.accumulate(grads, *input) {
                    let count = indices.len();
                    for o in 0..outer {
                        for (j, &i) in indices.iter().enumerate() {
                            let src = &g[(o * count + j) * inner..(o * count + j + 1) * inner];
                            let dst = (o * len + i) * inner;
                            axpy(1.0, src, &mut acc[dst..dst + inner]);
                        }
                    }
                }
            }
            Op::Sum { input, axis } | Op::Mean { input, axis } => {
                let (outer, len, inner) = split(self.shape(*input), *axis);
                let factor = if matches!(node.op, Op::Mean { .. }) {
                    1.0 / len as f64
                } else {
                    1.0
                };
                if let Some(acc) = self.accumulate(grads, *input) {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = (o * len + l) * inner;
                            axpy(factor, src, &mut acc[dst..dst + inner]);
                        }
                    }
                }
            }
            Op::Max {
                input,
                axis,
                argmax,
            } => {
                let (outer, len, inner) = split(self.shape(*input), *axis);
                if let Some(acc) = self.accumulate(grads, *input) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let slot = o * inner + i;
                            acc[(o * len + argmax[slot]) * inner + i] += g[slot];
                        }
                    }
                }
            }
            Op::Relu(a) => {
                let factor = match self.fault {
                    Some(Fault::ReluGradScale(f)) => f,
                    None => 1.0,
                };
                let x = self.value(*a).data();
                if let Some(acc) = self.accumulate(grads, *a) {
                    for ((acc, &gi), &xi) in acc.iter_mut().zip(g).zip(x) {
                        if xi > 0.0 {
                            *acc += gi * factor;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let width = *node.value.shape().last().unwrap();
                if let Some(acc) = self.accumulate(grads, *a) {
                    if width > 0 {
                        for ((acc, gr), yr) in acc
                            .chunks_exact_mut(width)
                            .zip(g.chunks_exact(width))
                            .zip(y.chunks_exact(width))
                        {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for ((acc, &gi), &yi) in acc.iter_mut().zip(gr).zip(yr) {
                                *acc += yi * (gi - dot);
                            }
                        }
                    }
                }
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                if let Some(acc) = self.accumulate(grads, *a) {
                    for ((acc, &gi), &yi) in acc.iter_mut().zip(g).zip(y) {
                        if yi > 0.0 {
                            *acc += gi / (2.0 * yi);
                        }
                    }
                }
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                if let Some(acc) = self.accumulate(grads, *a) {
                    for ((acc, &gi), &xi) in acc.iter_mut().zip(g).zip(x) {
                        if xi > 0.0 {
                            *acc += gi;
                        } else if xi < 0.0 {
                            *acc -= gi;
                        }
                    }
                }
            }
            Op::Broadcast { input, map } => {
                if let Some(acc) = self.accumulate(grads, *input) {
                    for (&src, &gi) in map.iter().zip(g) {
                        acc[src] += gi;
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(acc) = self.accumulate(grads, *a) {
                    axpy(1.0, g, acc);
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let batch = s.iter().product::<usize>() / (r * c).max(1);
                if let Some(acc) = self.accumulate(grads, *a) {
                    for b in 0..batch {
                        let base = b * r * c;
                        for i in 0..r {
                            for j in 0..c {
                                acc[base + i * c + j] += g[base + j * r + i];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out += a[m,k] * b[k,n]`.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, &b[p * n..(p + 1) * n], row);
            }
        }
    }
}

/// `ga[m,k] += g[m,n] * b[k,n]^T`.
fn matmul_grad_lhs(g: &[f64], b: &[f64], ga: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let bp = &b[p * n..(p + 1) * n];
            ga[i * k + p] += gi.iter().zip(bp).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `gb[k,n] += a[m,k]^T * g[m,n]`.
fn matmul_grad_rhs(a: &[f64], g: &[f64], gb: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, gi, &mut gb[p * n..(p + 1) * n]);
            }
        }
    }
}

/// For every output element, the flat index of the source element it copies.
fn broadcast_map(src: &[usize], dst: &[usize]) -> Result<Vec<usize>> {
    if src.len() > dst.len() {
        return shape_err(format!("cannot broadcast {src:?} to {dst:?}"));
    }
    let pad = dst.len() - src.len();
    let mut src_strides = vec![0usize; dst.len()];
    let mut stride = 1;
    for d in (0..src.len()).rev() {
        let (s, t) = (src[d], dst[pad + d]);
        if s != t && s != 1 {
            return shape_err(format!("cannot broadcast {src:?} to {dst:?}"));
        }
        src_strides[pad + d] = if s == 1 { 0 } else { stride };
        stride *= s;
    }
    let total: usize = dst.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; dst.len()];
    for _ in 0..total {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for d in (0..dst.len()).rev() {
            idx[d] += 1;
            if idx[d] < dst[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(map)
}
