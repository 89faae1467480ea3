//! Reverse-mode differentiation over an append-only tape.
//!
//! Nodes are pushed in evaluation order, so the tape is already a
//! topological order of the graph and backward is a single reverse sweep.
//! Leaf values may be borrowed (parameters) or owned (inputs, constants).

use std::borrow::Cow;

use super::{Array, AutodiffError, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    Sum(Vec<Var>),
    Slice { x: Var, start: usize },
    SumElements(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<T>,
        inv_std: T,
    },
    NegL2 { a: Var, b: Var },
    SoftmaxCrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::Relu(x) | Op::Sigmoid(x) | Op::Tanh(x) | Op::Scale(x, _) | Op::SumElements(x) => {
                vec![*x]
            }
            Op::Slice { x, .. } => vec![*x],
            Op::Add(a, b) | Op::Mul(a, b) | Op::NegL2 { a, b } => vec![*a, *b],
            Op::Concat(xs) | Op::Sum(xs) => xs.clone(),
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Array<T>>,
    op: Op<T>,
    trainable: bool,
    requires_grad: bool,
}

/// Counters reported by [`Tape::backward`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BackwardStats {
    /// Nodes whose backward rule ran during the sweep.
    pub nodes_visited: usize,
}

/// LSTM cell weights as tape variables.
///
/// `weight` has shape `[4·hidden, input + hidden]` and `bias` `[4·hidden]`,
/// with gate blocks ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub weight: Var,
    pub bias: Var,
}

/// Recorded computation graph for one forward pass.
///
/// Gradients of trainable leaves accumulate across calls to
/// [`Tape::backward`] until [`Tape::zero_gradients`] is called.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    leaf_grads: Vec<Option<Array<T>>>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Array<T>>, op: Op<T>, trainable: bool) -> Var {
        let requires_grad = trainable
            || op
                .inputs()
                .iter()
                .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            trainable,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Array<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn parameter(&mut self, value: Array<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn parameter_ref(&mut self, value: &'a Array<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Array<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Accumulated gradient of a trainable leaf, if backward reached it.
    pub fn grad(&self, var: Var) -> Option<&Array<T>> {
        self.leaf_grads[var.0].as_ref()
    }

    /// Moves the accumulated gradient of a leaf out of the tape.
    pub fn take_grad(&mut self, var: Var) -> Option<Array<T>> {
        self.leaf_grads[var.0].take()
    }

    pub fn zero_gradients(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn vector_len(&self, op: &'static str, var: Var) -> Result<usize, AutodiffError> {
        let shape = self.shape(var);
        if shape.len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op,
                expected: vec![shape.iter().product()],
                found: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op,
                expected: self.shape(a).to_vec(),
                found: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// `w·x + b` for `x: [n_in]`, `w: [n_out, n_in]`, `b: [n_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let n_in = self.vector_len("linear", x)?;
        let w_shape = self.shape(w).to_vec();
        if w_shape.len() != 2 || w_shape[1] != n_in {
            return Err(AutodiffError::ShapeMismatch {
                op: "linear",
                expected: vec![w_shape.first().copied().unwrap_or(0), n_in],
                found: w_shape,
            });
        }
        let n_out = w_shape[0];
        if self.shape(b) != [n_out] {
            return Err(AutodiffError::ShapeMismatch {
                op: "linear",
                expected: vec![n_out],
                found: self.shape(b).to_vec(),
            });
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        let out: Vec<T> = (0..n_out)
            .map(|r| {
                let row = &ws[r * n_in..(r + 1) * n_in];
                row.iter()
                    .zip(xs)
                    .fold(bs[r], |acc, (&wv, &xv)| acc + wv * xv)
            })
            .collect();
        Ok(self.push(Cow::Owned(Array::vector(out)), Op::Linear { x, w, b }, false))
    }

    fn map_unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x);
        let data = value.data().iter().map(|&v| f(v)).collect();
        let shape = value.shape().to_vec();
        let out = Array::new(shape, data).expect("shape preserved");
        self.push(Cow::Owned(out), op, false)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map_unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.map_unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), false))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(Cow::Owned(out), Op::Mul(a, b), false))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, AutodiffError> {
        if xs.is_empty() {
            return Err(AutodiffError::Empty("concat"));
        }
        let mut data = Vec::new();
        for &x in xs {
            self.vector_len("concat", x)?;
            data.extend_from_slice(self.value(x).data());
        }
        Ok(self.push(Cow::Owned(Array::vector(data)), Op::Concat(xs.to_vec()), false))
    }

    /// Elementwise sum of equally shaped arrays.
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var, AutodiffError> {
        let (&first, rest) = xs.split_first().ok_or(AutodiffError::Empty("sum"))?;
        let mut out = self.value(first).clone();
        for &x in rest {
            self.same_shape("sum", first, x)?;
            out.add_assign(self.value(x).data());
        }
        Ok(self.push(Cow::Owned(out), Op::Sum(xs.to_vec()), false))
    }

    /// Contiguous sub-vector `x[start..start + len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let n = self.vector_len("slice", x)?;
        if len == 0 || start + len > n {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice",
                expected: vec![start + len],
                found: vec![n],
            });
        }
        let data = self.value(x).data()[start..start + len].to_vec();
        Ok(self.push(Cow::Owned(Array::vector(data)), Op::Slice { x, start }, false))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_elements(&mut self, x: Var) -> Var {
        let total = self
            .value(x)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        self.push(Cow::Owned(Array::scalar(total)), Op::SumElements(x), false)
    }

    /// `(x − mean) / sqrt(var + epsilon)` scaled by `gain` and shifted by
    /// `bias`, with the population variance over the vector.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        epsilon: T,
    ) -> Result<Var, AutodiffError> {
        let d = self.vector_len("layer_norm", x)?;
        self.same_shape("layer_norm", x, gain)?;
        self.same_shape("layer_norm", x, bias)?;
        let n = T::lit(d as f64);
        let xs = self.value(x).data();
        let mean = xs.iter().fold(T::zero(), |acc, &v| acc + v) / n;
        let var = xs
            .iter()
            .fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean))
            / n;
        let inv_std = T::one() / (var + epsilon).sqrt();
        let normalized: Vec<T> = xs.iter().map(|&v| (v - mean) * inv_std).collect();
        let gs = self.value(gain).data();
        let bs = self.value(bias).data();
        let out = normalized
            .iter()
            .zip(gs.iter().zip(bs))
            .map(|(&h, (&g, &b))| h * g + b)
            .collect();
        Ok(self.push(
            Cow::Owned(Array::vector(out)),
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            false,
        ))
    }

    /// `−sqrt(Σ(a−b)² + epsilon)`; the smoothing term keeps the gradient
    /// finite when `a == b`.
    pub fn neg_l2_distance(&mut self, a: Var, b: Var, epsilon: T) -> Result<Var, AutodiffError> {
        self.same_shape("neg_l2_distance", a, b)?;
        let sq = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        let dist = (sq + epsilon).sqrt();
        Ok(self.push(Cow::Owned(Array::scalar(-dist)), Op::NegL2 { a, b }, false))
    }

    /// `−log softmax(logits)[target]`, stabilised by max subtraction.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        target: usize,
    ) -> Result<Var, AutodiffError> {
        let k = self.vector_len("softmax_cross_entropy", logits)?;
        if target >= k {
            return Err(AutodiffError::IndexOutOfRange {
                index: target,
                classes: k,
            });
        }
        let xs = self.value(logits).data();
        let probs = softmax(xs);
        let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
        let log_sum = xs
            .iter()
            .fold(T::zero(), |acc, &v| acc + (v - max).exp())
            .ln();
        let loss = log_sum - (xs[target] - max);
        Ok(self.push(
            Cow::Owned(Array::scalar(loss)),
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            },
            false,
        ))
    }

    /// One LSTM step. Returns the new hidden and cell state.
    pub fn lstm_cell(
        &mut self,
        input: Var,
        h_prev: Var,
        c_prev: Var,
        weights: LstmWeights,
    ) -> Result<(Var, Var), AutodiffError> {
        let hidden = self.vector_len("lstm_cell", h_prev)?;
        self.same_shape("lstm_cell", h_prev, c_prev)?;
        let joined = self.concat(&[input, h_prev])?;
        let gates = self.linear(joined, weights.weight, weights.bias)?;
        if self.shape(gates) != [4 * hidden] {
            return Err(AutodiffError::ShapeMismatch {
                op: "lstm_cell",
                expected: vec![4 * hidden],
                found: self.shape(gates).to_vec(),
            });
        }
        let i_pre = self.slice(gates, 0, hidden)?;
        let f_pre = self.slice(gates, hidden, hidden)?;
        let g_pre = self.slice(gates, 2 * hidden, hidden)?;
        let o_pre = self.slice(gates, 3 * hidden, hidden)?;
        let i = self.sigmoid(i_pre);
        let f = self.sigmoid(f_pre);
        let g = self.tanh(g_pre);
        let o = self.sigmoid(o_pre);
        let kept = self.mul(f, c_prev)?;
        let written = self.mul(i, g)?;
        let c = self.add(kept, written)?;
        let c_act = self.tanh(c);
        let h = self.mul(o, c_act)?;
        Ok((h, c))
    }

    /// Back-propagates from a scalar `loss`, adding into the gradients of
    /// every trainable ancestor.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardStats, AutodiffError> {
        if self.shape(loss) != [1] {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut stats = BackwardStats::default();
        if !self.nodes[loss.0].requires_grad {
            return Ok(stats);
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            stats.nodes_visited += 1;
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            if node.trainable {
                match &mut self.leaf_grads[idx] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => {
                        *slot = Some(Array::new(node.value.shape().to_vec(), g).expect("shape"))
                    }
                }
            }
        }
        Ok(stats)
    }

    fn propagate(&self, op: &Op<T>, out: &Array<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xs = self.value(*x).data();
                let ws = self.value(*w).data();
                let n_in = xs.len();
                if self.wants(*x) {
                    let dx = self.slot(grads, *x);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == T::zero() {
                            continue;
                        }
                        let row = &ws[r * n_in..(r + 1) * n_in];
                        for (d, &wv) in dx.iter_mut().zip(row) {
                            *d = *d + gr * wv;
                        }
                    }
                }
                if self.wants(*w) {
                    let dw = self.slot(grads, *w);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == T::zero() {
                            continue;
                        }
                        let row = &mut dw[r * n_in..(r + 1) * n_in];
                        for (d, &xv) in row.iter_mut().zip(xs) {
                            *d = *d + gr * xv;
                        }
                    }
                }
                if self.wants(*b) {
                    add_into(self.slot(grads, *b), g);
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xs = self.value(*x).data();
                    let dx = self.slot(grads, *x);
                    for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(xs) {
                        if xv > T::zero() {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.wants(*x) {
                    let ys = out.data();
                    let dx = self.slot(grads, *x);
                    for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(ys) {
                        *d = *d + gv * y * (T::one() - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if self.wants(*x) {
                    let ys = out.data();
                    let dx = self.slot(grads, *x);
                    for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(ys) {
                        *d = *d + gv * (T::one() - y * y);
                    }
                }
            }
            Op::Scale(x, factor) => {
                if self.wants(*x) {
                    let dx = self.slot(grads, *x);
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d = *d + gv * *factor;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        add_into(self.slot(grads, v), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let da = self.slot(grads, *a);
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(vb) {
                        *d = *d + gv * y;
                    }
                }
                if self.wants(*b) {
                    let db = self.slot(grads, *b);
                    for ((d, &gv), &x) in db.iter_mut().zip(g).zip(va) {
                        *d = *d + gv * x;
                    }
                }
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.value(x).len();
                    if self.wants(x) {
                        add_into(self.slot(grads, x), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Sum(xs) => {
                for &x in xs {
                    if self.wants(x) {
                        add_into(self.slot(grads, x), g);
                    }
                }
            }
            Op::Slice { x, start } => {
                if self.wants(*x) {
                    let dx = self.slot(grads, *x);
                    add_into(&mut dx[*start..*start + g.len()], g);
                }
            }
            Op::SumElements(x) => {
                if self.wants(*x) {
                    let dx = self.slot(grads, *x);
                    for d in dx.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                if self.wants(*gain) {
                    let dg = self.slot(grads, *gain);
                    for ((d, &gv), &h) in dg.iter_mut().zip(g).zip(normalized) {
                        *d = *d + gv * h;
                    }
                }
                if self.wants(*bias) {
                    add_into(self.slot(grads, *bias), g);
                }
                if self.wants(*x) {
                    let gs = self.value(*gain).data();
                    let n = T::lit(g.len() as f64);
                    let dh: Vec<T> = g.iter().zip(gs).map(|(&gv, &gn)| gv * gn).collect();
                    let mean_dh = dh.iter().fold(T::zero(), |acc, &v| acc + v) / n;
                    let mean_dh_h = dh
                        .iter()
                        .zip(normalized)
                        .fold(T::zero(), |acc, (&d, &h)| acc + d * h)
                        / n;
                    let dx = self.slot(grads, *x);
                    for ((d, &dhv), &h) in dx.iter_mut().zip(&dh).zip(normalized) {
                        *d = *d + *inv_std * (dhv - mean_dh - h * mean_dh_h);
                    }
                }
            }
            Op::NegL2 { a, b } => {
                let dist = -out.item();
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let coef = g[0] / dist;
                if self.wants(*a) {
                    let da = self.slot(grads, *a);
                    for ((d, &x), &y) in da.iter_mut().zip(va).zip(vb) {
                        *d = *d - coef * (x - y);
                    }
                }
                if self.wants(*b) {
                    let db = self.slot(grads, *b);
                    for ((d, &x), &y) in db.iter_mut().zip(va).zip(vb) {
                        *d = *d + coef * (x - y);
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            } => {
                if self.wants(*logits) {
                    let dl = self.slot(grads, *logits);
                    for (i, (d, &p)) in dl.iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *target { T::one() } else { T::zero() };
                        *d = *d + g[0] * (p - onehot);
                    }
                }
            }
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], var: Var) -> &'g mut Vec<T> {
        let len = self.nodes[var.0].value.len();
        grads[var.0].get_or_insert_with(|| vec![T::zero(); len])
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = xs.iter().map(|&v| (v - max).exp()).collect();
    let total = exps.iter().fold(T::zero(), |acc, &v| acc + v);
    exps.into_iter().map(|e| e / total).collect()
}
