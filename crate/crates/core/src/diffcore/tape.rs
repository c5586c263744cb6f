use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the second operand of an elementwise binary op lines up with the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `[n]` or `[1, n]` added to every row of an `[m, n]` tensor.
    Row,
    /// One element applied everywhere.
    Scalar,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var),
    Div(Var, Var),
    ScalarMul(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    Sum(Var, Option<usize>),
    Mean(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, Range<usize>),
    Reshape(Var),
    /// Mask already holds the `1 / (1 - rate)` survivor scale.
    Dropout(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Primitive identifiers for [`Tape::apply_primitive`].
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    ScalarMul(f64),
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
    Exp,
    Log,
    Square,
    Sqrt,
    Abs,
    /// `None` reduces everything to a one-element tensor; `Some(axis)` keeps the axis with size 1.
    Sum(Option<usize>),
    Mean,
    Concat(usize),
    Slice(usize, Range<usize>),
    Reshape(Vec<usize>),
    Dropout { rate: f64, train: bool, seed: u64 },
    GatherRows(Vec<usize>),
}

/// Define-by-run record of primitive applications.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// A node whose inputs carry no gradient is stored as a constant and is skipped
/// by [`Tape::backward`].
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn get_data(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Generic entry point dispatching on a [`Primitive`] identifier.
    pub fn apply_primitive(&mut self, op: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize, name: &'static str| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::Shape {
                    op: name,
                    shapes: format!("expected {n} inputs, got {}", inputs.len()),
                })
            }
        };
        match op {
            Primitive::MatMul => {
                arity(2, "matmul")?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Add => {
                arity(2, "add")?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Sub => {
                arity(2, "sub")?;
                self.sub(inputs[0], inputs[1])
            }
            Primitive::Mul => {
                arity(2, "mul")?;
                self.mul(inputs[0], inputs[1])
            }
            Primitive::Div => {
                arity(2, "div")?;
                self.div(inputs[0], inputs[1])
            }
            Primitive::ScalarMul(c) => {
                arity(1, "scalar_mul")?;
                Ok(self.scalar_mul(inputs[0], c))
            }
            Primitive::Relu => {
                arity(1, "relu")?;
                Ok(self.relu(inputs[0]))
            }
            Primitive::Sigmoid => {
                arity(1, "sigmoid")?;
                Ok(self.sigmoid(inputs[0]))
            }
            Primitive::Tanh => {
                arity(1, "tanh")?;
                Ok(self.tanh(inputs[0]))
            }
            Primitive::Softplus => {
                arity(1, "softplus")?;
                Ok(self.softplus(inputs[0]))
            }
            Primitive::Exp => {
                arity(1, "exp")?;
                Ok(self.exp(inputs[0]))
            }
            Primitive::Log => {
                arity(1, "log")?;
                self.log(inputs[0])
            }
            Primitive::Square => {
                arity(1, "square")?;
                Ok(self.square(inputs[0]))
            }
            Primitive::Sqrt => {
                arity(1, "sqrt")?;
                self.sqrt(inputs[0])
            }
            Primitive::Abs => {
                arity(1, "abs")?;
                Ok(self.abs(inputs[0]))
            }
            Primitive::Sum(axis) => {
                arity(1, "sum")?;
                match axis {
                    None => Ok(self.sum(inputs[0])),
                    Some(a) => self.sum_axis(inputs[0], a),
                }
            }
            Primitive::Mean => {
                arity(1, "mean")?;
                Ok(self.mean(inputs[0]))
            }
            Primitive::Concat(axis) => self.concat(inputs, axis),
            Primitive::Slice(axis, range) => {
                arity(1, "slice")?;
                self.slice(inputs[0], axis, range)
            }
            Primitive::Reshape(shape) => {
                arity(1, "reshape")?;
                self.reshape(inputs[0], &shape)
            }
            Primitive::Dropout { rate, train, seed } => {
                arity(1, "dropout")?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.dropout(inputs[0], rate, train, &mut rng)
            }
            Primitive::GatherRows(idx) => {
                arity(1, "gather_rows")?;
                self.gather_rows(inputs[0], &idx)
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &[sa, sb]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    fn broadcast_rule(&self, op: &'static str, a: Var, b: Var, allow: bool) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        if allow {
            let nb = self.value(b).numel();
            if nb == 1 {
                return Ok(Broadcast::Scalar);
            }
            let row_like = sb.len() == 1 || (sb.len() == 2 && sb[0] == 1);
            if sa.len() == 2 && row_like && nb == sa[1] {
                return Ok(Broadcast::Row);
            }
        }
        Err(Error::shape(op, &[sa, sb]))
    }

    fn zip_broadcast(&self, a: Var, b: Var, mode: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bd = self.value(b).data();
        let data: Vec<f64> = match mode {
            Broadcast::Same => av.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => av.data().iter().map(|&x| f(x, bd[0])).collect(),
            Broadcast::Row => {
                let n = bd.len();
                av.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bd[i % n]))
                    .collect()
            }
        };
        Tensor::from_parts(av.shape().to_vec(), data)
    }

    /// Elementwise sum. `b` may also be a row vector (bias) or a single element.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.broadcast_rule("add", a, b, true)?;
        let value = self.zip_broadcast(a, b, mode, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b, mode), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = self.broadcast_rule("sub", a, b, true)?;
        let value = self.zip_broadcast(a, b, mode, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b, mode), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_rule("mul", a, b, false)?;
        let value = self.zip_broadcast(a, b, Broadcast::Same, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_rule("div", a, b, false)?;
        if let Some(i) = self.value(b).data().iter().position(|&v| v == 0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: format!("zero denominator at element {i}"),
            });
        }
        let value = self.zip_broadcast(a, b, Broadcast::Same, |x, y| x / y);
        Ok(self.push(value, Op::Div(a, b), &[a, b]))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push(value, op, &[x])
    }

    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| c * v, Op::ScalarMul(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.check_positive("log", x)?;
        Ok(self.map(x, f64::ln, Op::Log(x)))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.check_positive("sqrt", x)?;
        Ok(self.map(x, f64::sqrt, Op::Sqrt(x)))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, f64::abs, Op::Abs(x))
    }

    fn check_positive(&self, op: &'static str, x: Var) -> Result<()> {
        match self.value(x).data().iter().position(|&v| !(v > 0.0)) {
            None => Ok(()),
            Some(i) => Err(Error::Domain {
                op,
                detail: format!("element {i} = {}", self.value(x).data()[i]),
            }),
        }
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x, None), &[x])
    }

    /// Sums over `axis`, keeping it with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                op: "sum",
                shapes: format!("axis {axis} on {shape:?}"),
            });
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let xd = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let base = (o * dim + d) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xd[base + i];
                }
            }
        }
        let mut oshape = shape;
        oshape[axis] = 1;
        let value = Tensor::from_parts(oshape, out);
        Ok(self.push(value, Op::Sum(x, Some(axis)), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or(Error::Empty("concat"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape {
                op: "concat",
                shapes: format!("axis {axis} on {base:?}"),
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &[&base, s]));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let xv = self.value(x);
                let w = xv.shape()[axis] * inner;
                out.extend_from_slice(&xv.data()[o * w..(o + 1) * w]);
            }
        }
        let mut oshape = base;
        oshape[axis] = total;
        let value = Tensor::from_parts(oshape, out);
        Ok(self.push(value, Op::Concat(xs.to_vec(), axis), xs))
    }

    pub fn slice(&mut self, x: Var, axis: usize, range: Range<usize>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || range.start >= range.end || range.end > shape[axis] {
            return Err(Error::Shape {
                op: "slice",
                shapes: format!("{shape:?} axis {axis} range {range:?}"),
            });
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let xd = self.value(x).data();
        let len = range.end - range.start;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let start = (o * dim + range.start) * inner;
            out.extend_from_slice(&xd[start..start + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let value = Tensor::from_parts(oshape, out);
        Ok(self.push(value, Op::Slice(x, axis, range), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.is_empty() || shape.iter().product::<usize>() != xv.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", &[xv.shape(), shape]));
        }
        let value = Tensor::from_parts(shape.to_vec(), xv.data().to_vec());
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Inverted dropout. In eval mode, or with `rate == 0`, returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Domain {
                op: "dropout",
                detail: format!("rate {rate} not in [0, 1)"),
            });
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - rate);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        Ok(self.push(value, Op::Dropout(x, mask), &[x]))
    }

    /// Selects rows (first-axis entries) by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let rows = xv.shape()[0];
        if idx.is_empty() {
            return Err(Error::Empty("gather_rows"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape {
                op: "gather_rows",
                shapes: format!("index {bad} into {:?}", xv.shape()),
            });
        }
        let w = xv.numel() / rows;
        let mut out = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            out.extend_from_slice(&xv.data()[i * w..(i + 1) * w]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = idx.len();
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, Op::GatherRows(x, idx.to_vec()), &[x]))
    }

    /// Reverse-mode sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            self.propagate(node, g, lower);
            // Intermediate gradients are not needed once propagated.
            upper[0] = None;
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(ga) = self.slot(grads, *a) {
                    let bd = bv.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let s: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            ga[i * k + p] += s;
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let ad = av.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    match mode {
                        Broadcast::Same => gb.iter_mut().zip(g).for_each(|(o, &v)| *o += sign * v),
                        Broadcast::Scalar => gb[0] += sign * g.iter().sum::<f64>(),
                        Broadcast::Row => {
                            let n = gb.len();
                            for (i, &v) in g.iter().enumerate() {
                                gb[i % n] += sign * v;
                            }
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(bd) {
                        *o += gv * y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(ad) {
                        *o += gv * x;
                    }
                }
            }
            Op::Div(a, b) => {
                let bd = self.value(*b).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(bd) {
                        *o += gv / y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // d(a/b)/db = -(a/b)/b
                    for (((o, &gv), &y), &q) in gb.iter_mut().zip(g).zip(bd).zip(out) {
                        *o -= gv * q / y;
                    }
                }
            }
            Op::ScalarMul(x, c) => self.unary(grads, *x, g, out, |_, _| *c),
            Op::Relu(x) => self.unary(grads, *x, g, out, |xv, _| if xv > 0.0 { 1.0 } else { 0.0 }),
            Op::Sigmoid(x) => self.unary(grads, *x, g, out, |_, y| y * (1.0 - y)),
            Op::Tanh(x) => self.unary(grads, *x, g, out, |_, y| 1.0 - y * y),
            Op::Softplus(x) => self.unary(grads, *x, g, out, |xv, _| sigmoid(xv)),
            Op::Exp(x) => self.unary(grads, *x, g, out, |_, y| y),
            Op::Log(x) => self.unary(grads, *x, g, out, |xv, _| 1.0 / xv),
            Op::Square(x) => self.unary(grads, *x, g, out, |xv, _| 2.0 * xv),
            Op::Sqrt(x) => self.unary(grads, *x, g, out, |_, y| 0.5 / y),
            Op::Abs(x) => self.unary(grads, *x, g, out, |xv, _| {
                if xv > 0.0 {
                    1.0
                } else if xv < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Sum(x, None) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Sum(x, Some(axis)) => {
                let shape = self.shape(*x).to_vec();
                let (outer, dim, inner) = split_axis(&shape, *axis);
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for d in 0..dim {
                            let base = (o * dim + d) * inner;
                            for i in 0..inner {
                                gx[base + i] += g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let scale = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|o| *o += scale);
                }
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let w = self.shape(x)[*axis] * inner;
                    if let Some(gx) = self.slot(grads, x) {
                        for o in 0..outer {
                            let src = o * total * inner + offset;
                            for (dst, &v) in gx[o * w..(o + 1) * w].iter_mut().zip(&g[src..src + w]) {
                                *dst += v;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice(x, axis, range) => {
                let shape = self.shape(*x).to_vec();
                let (outer, dim, inner) = split_axis(&shape, *axis);
                let len = range.end - range.start;
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        let start = (o * dim + range.start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (dst, &v) in gx[start..start + len * inner].iter_mut().zip(src) {
                            *dst += v;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
                }
            }
            Op::Dropout(x, mask) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((o, &v), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *o += v * m;
                    }
                }
            }
            Op::GatherRows(x, idx) => {
                let w = node.value.numel() / idx.len();
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        for (dst, &v) in gx[i * w..(i + 1) * w].iter_mut().zip(&g[r * w..(r + 1) * w]) {
                            *dst += v;
                        }
                    }
                }
            }
        }
    }

    /// Accumulates `g * f(x, y)` into `x`'s gradient, where `y` is the op's output.
    fn unary(&self, grads: &mut [Option<Vec<f64>>], x: Var, g: &[f64], y: &[f64], f: impl Fn(f64, f64) -> f64) {
        let xd = self.value(x).data();
        if let Some(gx) = self.slot(grads, x) {
            for (((o, &gv), &xv), &yv) in gx.iter_mut().zip(g).zip(xd).zip(y) {
                *o += gv * f(xv, yv);
            }
        }
    }
}
