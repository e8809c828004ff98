use std::cell::Cell;

use super::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    AddBias,
    Concat,
    Slice,
    Sigmoid,
    Tanh,
    Exp,
    Scale,
    AddScalar,
    Sum,
    Mean,
    BceWithLogits,
}

impl OpKind {
    pub const ALL: [OpKind; 16] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::AddBias,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Exp,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::BceWithLogits,
    ];

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddBias => "add_bias",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::BceWithLogits => "bce_with_logits",
        }
    }
}

thread_local! {
    static BACKWARD_FAULT: Cell<Option<OpKind>> = const { Cell::new(None) };
}

/// Deliberately corrupts the backward rule of `op` on this thread (gradients
/// scaled by 1.5). Used to confirm that gradient checking catches broken rules.
#[doc(hidden)]
pub fn set_backward_fault(op: Option<OpKind>) {
    BACKWARD_FAULT.with(|f| f.set(op));
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    BceWithLogits { logits: Var, target: Vec<f64> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Exp(_) => OpKind::Exp,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(_) => OpKind::AddScalar,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::BceWithLogits { .. } => OpKind::BceWithLogits,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient, kept for leaves that require it.
    grad: Option<Tensor>,
}

/// Records operations in execution order; `backward` replays them in reverse.
///
/// A graph is single-use per forward pass: build it, call `backward`, read the
/// leaf gradients, drop it.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.node(v).grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch { op, left: sa.to_vec(), right: sb.to_vec() });
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor { shape: va.shape().to_vec(), data };
        let rg = self.rg(&[a, b]);
        self.push(t, op, rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let t = Tensor { shape: va.shape().to_vec(), data: va.data().iter().map(|&x| f(x)).collect() };
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch { op: "matmul", left: sa.to_vec(), right: sb.to_vec() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a bias of shape `[n]` to every row of `[m,n]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch { op: "add_bias", left: sa.to_vec(), right: sb.to_vec() });
        }
        let n = sb[0];
        let bv = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % n])
            .collect();
        let t = Tensor { shape: sa.to_vec(), data };
        let rg = self.rg(&[a, bias]);
        Ok(self.push(t, Op::AddBias(a, bias), rg))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty("concat"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::BadAxis { op: "concat", axis, shape: base });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch { op: "concat", left: base, right: s.to_vec() });
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * block..(o + 1) * block]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor { shape, data }, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(TensorError::BadAxis { op: "slice", axis, shape: sa });
        }
        if start + len > sa[axis] {
            let mut want = sa.clone();
            want[axis] = start + len;
            return Err(TensorError::ShapeMismatch { op: "slice", left: sa, right: want });
        }
        let (outer, inner) = outer_inner(&sa, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * sa[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = sa;
        shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::Slice { input: a, axis, start }, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Sum of all entries, as shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against `target`,
    /// evaluated stably from the logits.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor) -> Result<Var, TensorError> {
        let sl = self.shape(logits);
        if sl != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                left: sl.to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let loss = self
            .value(logits)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&l, &t)| l.max(0.0) - t * l + (-l.abs()).exp().ln_1p())
            .sum();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits { logits, target: target.data().to_vec() },
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss`, adding into the accumulated
    /// gradient of every leaf that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let fault = BACKWARD_FAULT.with(Cell::get);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(mut g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if fault == Some(node.op.kind()) && !matches!(node.op, Op::Leaf) {
                g.iter_mut().for_each(|x| *x *= 1.5);
            }
            let nodes = &self.nodes;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
                f(slot);
            };
            let out = node.value.data();
            match &node.op {
                Op::Leaf => {
                    let t = Tensor { shape: node.value.shape().to_vec(), data: g };
                    let node = &mut self.nodes[i];
                    match &mut node.grad {
                        Some(acc) => acc.data.iter_mut().zip(&t.data).for_each(|(a, b)| *a += b),
                        None => node.grad = Some(t),
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (va.shape[0], va.shape[1], vb.shape[1]);
                    acc(*a, &mut |s| matmul_bt_acc(&g, vb.data(), s, m, k, n));
                    acc(*b, &mut |s| matmul_at_acc(va.data(), &g, s, m, k, n));
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |s| s.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                    acc(*b, &mut |s| s.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |s| s.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                    acc(*b, &mut |s| s.iter_mut().zip(&g).for_each(|(x, y)| *x -= y));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |s| {
                        for ((x, gv), bv) in s.iter_mut().zip(&g).zip(vb) {
                            *x += gv * bv;
                        }
                    });
                    acc(*b, &mut |s| {
                        for ((x, gv), av) in s.iter_mut().zip(&g).zip(va) {
                            *x += gv * av;
                        }
                    });
                }
                Op::AddBias(a, bias) => {
                    let n = nodes[bias.0].value.numel();
                    acc(*a, &mut |s| s.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                    acc(*bias, &mut |s| {
                        for row in g.chunks(n) {
                            s.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                        }
                    });
                }
                Op::Concat { parts, axis } => {
                    let (outer, inner) = outer_inner(node.value.shape(), *axis);
                    let total = node.value.shape()[*axis] * inner;
                    let mut offset = 0;
                    for &p in parts {
                        let block = nodes[p.0].value.shape()[*axis] * inner;
                        acc(p, &mut |s| {
                            for o in 0..outer {
                                let src = &g[o * total + offset..o * total + offset + block];
                                s[o * block..(o + 1) * block]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(x, y)| *x += y);
                            }
                        });
                        offset += block;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let full = nodes[input.0].value.shape();
                    let (outer, inner) = outer_inner(full, *axis);
                    let len = node.value.shape()[*axis];
                    let dim = full[*axis];
                    acc(*input, &mut |s| {
                        for o in 0..outer {
                            let dst = (o * dim + start) * inner;
                            let src = &g[o * len * inner..(o + 1) * len * inner];
                            s[dst..dst + len * inner].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    });
                }
                Op::Sigmoid(a) => acc(*a, &mut |s| {
                    for ((x, gv), y) in s.iter_mut().zip(&g).zip(out) {
                        *x += gv * y * (1.0 - y);
                    }
                }),
                Op::Tanh(a) => acc(*a, &mut |s| {
                    for ((x, gv), y) in s.iter_mut().zip(&g).zip(out) {
                        *x += gv * (1.0 - y * y);
                    }
                }),
                Op::Exp(a) => acc(*a, &mut |s| {
                    for ((x, gv), y) in s.iter_mut().zip(&g).zip(out) {
                        *x += gv * y;
                    }
                }),
                Op::Scale(a, c) => acc(*a, &mut |s| s.iter_mut().zip(&g).for_each(|(x, y)| *x += c * y)),
                Op::AddScalar(a) => acc(*a, &mut |s| s.iter_mut().zip(&g).for_each(|(x, y)| *x += y)),
                Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
                Op::Mean(a) => {
                    let n = nodes[a.0].value.numel() as f64;
                    acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0] / n));
                }
                Op::BceWithLogits { logits, target } => {
                    let l = nodes[logits.0].value.data();
                    acc(*logits, &mut |s| {
                        for ((x, &lv), &t) in s.iter_mut().zip(l).zip(target) {
                            *x += g[0] * (sigmoid(lv) - t);
                        }
                    });
                }
            }
        }
        Ok(())
    }
}
