//! Tape-based reverse-mode differentiation.
//!
//! Every vector-Jacobian product is itself expressed with recorded ops, so a
//! gradient returned by [`Graph::grad`] is an ordinary [`Var`] that can be
//! differentiated again. The R1 penalty relies on this. Ops whose second
//! derivative is never needed (`SeluCurv`) refuse a further backward pass.

use std::cell::RefCell;
use std::fmt;

use super::array::Tensor;
use super::kernels as k;
use crate::error::{shape_err, Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    Selu(NodeId),
    SeluGrad(NodeId),
    SeluCurv(NodeId),
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Reshape(NodeId),
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize },
    Pad { x: NodeId, axis: usize, start: usize },
    SumAxis(NodeId),
    SumTo(NodeId),
    BroadcastTo(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::Selu(..) => "selu",
            Op::SeluGrad(..) => "selu_grad",
            Op::SeluCurv(..) => "selu_curv",
            Op::MatMul { .. } => "matmul",
            Op::Reshape(..) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::SumAxis(..) => "sum_axis",
            Op::SumTo(..) => "sum_to",
            Op::BroadcastTo(..) => "broadcast_to",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Scale(x, _)
            | Op::Shift(x)
            | Op::Square(x)
            | Op::Sqrt(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Softplus(x)
            | Op::Sigmoid(x)
            | Op::Selu(x)
            | Op::SeluGrad(x)
            | Op::SeluCurv(x)
            | Op::Reshape(x)
            | Op::Slice { x, .. }
            | Op::Pad { x, .. }
            | Op::SumAxis(x)
            | Op::SumTo(x)
            | Op::BroadcastTo(x)
            | Op::Softmax(x)
            | Op::LogSoftmax(x) => vec![*x],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded computation. Nodes are appended in evaluation order, so node ids
/// are a topological order by construction.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register an input. Whether it receives a gradient is decided by the
    /// `wrt` list passed to [`Graph::grad`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(Op::Leaf, value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    fn push_unchecked(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, op: Op, value: Tensor) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        Ok(self.push_unchecked(op, value))
    }

    fn value_of(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn shape_of(&self, id: NodeId) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    fn op_of(&self, id: NodeId) -> Op {
        self.nodes.borrow()[id].op.clone()
    }

    fn var(&self, id: NodeId) -> Var<'_> {
        Var { graph: self, id }
    }

    /// Gradients of a scalar `output` with respect to each of `wrt`.
    ///
    /// The returned vars are recorded in this graph and can be differentiated
    /// again. Leaves that do not influence `output` get a zero gradient.
    pub fn grad<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>]) -> Result<Vec<Var<'g>>> {
        if output.numel() != 1 {
            return shape_err("backward", format!("output must be scalar, got {:?}", output.shape()));
        }
        let last = output.id;
        let mut relevant = vec![false; last + 1];
        for w in wrt {
            if w.id <= last {
                relevant[w.id] = true;
            }
        }
        for id in 0..=last {
            if relevant[id] {
                continue;
            }
            let inputs = self.nodes.borrow()[id].op.inputs();
            for &i in &inputs {
                if i >= id {
                    return Err(Error::InvalidArgument(format!(
                        "graph cycle: node {} consumes node {}",
                        id, i
                    )));
                }
            }
            relevant[id] = inputs.iter().any(|&i| relevant[i]);
        }

        let mut grads: Vec<Option<Var<'g>>> = vec![None; last + 1];
        if relevant[last] {
            grads[last] = Some(self.leaf(Tensor::ones(&output.shape())));
        }
        for id in (0..=last).rev() {
            if !relevant[id] {
                continue;
            }
            let Some(g) = grads[id] else { continue };
            let op = self.op_of(id);
            for (input, contribution) in self.vjp(id, &op, g, &relevant)? {
                grads[input] = Some(match grads[input] {
                    Some(acc) => acc.add(contribution)?,
                    None => contribution,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.leaf(Tensor::zeros(&w.shape())),
            })
            .collect())
    }

    /// Input-gradient contributions of node `id` given its output gradient.
    /// Contributions are only built for inputs flagged in `need`.
    fn vjp<'g>(
        &'g self,
        id: NodeId,
        op: &Op,
        g: Var<'g>,
        need: &[bool],
    ) -> Result<Vec<(NodeId, Var<'g>)>> {
        let out = self.var(id);
        let v = |i: NodeId| self.var(i);
        let mut res = Vec::with_capacity(2);
        let mut emit = |i: NodeId, f: &dyn Fn() -> Result<Var<'g>>| -> Result<()> {
            if need[i] {
                res.push((i, f()?));
            }
            Ok(())
        };
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(a, &|| g.sum_to(&v(a).shape()))?;
                emit(b, &|| g.sum_to(&v(b).shape()))?;
            }
            Op::Sub(a, b) => {
                emit(a, &|| g.sum_to(&v(a).shape()))?;
                emit(b, &|| g.sum_to(&v(b).shape())?.neg())?;
            }
            Op::Mul(a, b) => {
                emit(a, &|| g.mul(v(b))?.sum_to(&v(a).shape()))?;
                emit(b, &|| g.mul(v(a))?.sum_to(&v(b).shape()))?;
            }
            Op::Div(a, b) => {
                emit(a, &|| g.div(v(b))?.sum_to(&v(a).shape()))?;
                emit(b, &|| g.mul(out)?.div(v(b))?.neg()?.sum_to(&v(b).shape()))?;
            }
            Op::Scale(x, c) => emit(x, &|| g.scale(c))?,
            Op::Shift(x) => emit(x, &|| Ok(g))?,
            Op::Square(x) => emit(x, &|| g.mul(v(x))?.scale(2.0))?,
            Op::Sqrt(x) => emit(x, &|| g.div(out)?.scale(0.5))?,
            Op::Exp(x) => emit(x, &|| g.mul(out))?,
            Op::Log(x) => emit(x, &|| g.div(v(x)))?,
            Op::Softplus(x) => emit(x, &|| g.mul(v(x).sigmoid()?))?,
            Op::Sigmoid(x) => emit(x, &|| g.mul(out.mul(out.neg()?.shift(1.0)?)?))?,
            Op::Selu(x) => emit(x, &|| g.mul(v(x).selu_grad()?))?,
            Op::SeluGrad(x) => emit(x, &|| g.mul(v(x).selu_curv()?))?,
            Op::SeluCurv(x) => emit(x, &|| {
                Err(Error::Unsupported("third-order derivative of selu".into()))
            })?,
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (v(a), v(b));
                emit(a, &|| {
                    if !ta {
                        g.matmul_t(vb, false, !tb)
                    } else {
                        vb.matmul_t(g, tb, true)
                    }
                })?;
                emit(b, &|| {
                    let shared = vb.shape().len() == 2 && va.shape().len() > 2;
                    if shared {
                        let sa = va.shape();
                        let kdim = sa[sa.len() - 1];
                        let rows = va.numel() / kdim;
                        let af = va.reshape(&[rows, kdim])?;
                        let gs = g.shape();
                        let gf = g.reshape(&[rows, gs[gs.len() - 1]])?;
                        if !tb {
                            af.matmul_t(gf, true, false)
                        } else {
                            gf.matmul_t(af, true, false)
                        }
                    } else if !tb {
                        va.matmul_t(g, !ta, false)
                    } else {
                        g.matmul_t(va, true, ta)
                    }
                })?;
            }
            Op::Reshape(x) => emit(x, &|| g.reshape(&v(x).shape()))?,
            Op::Concat { ref parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let len = v(p).shape()[axis];
                    emit(p, &|| g.slice(axis, start, len))?;
                    start += len;
                }
            }
            Op::Slice { x, axis, start } => {
                emit(x, &|| g.pad(axis, start, v(x).shape()[axis]))?
            }
            Op::Pad { x, axis, start } => {
                emit(x, &|| g.slice(axis, start, v(x).shape()[axis]))?
            }
            Op::SumAxis(x) | Op::SumTo(x) => emit(x, &|| g.broadcast_to(&v(x).shape()))?,
            Op::BroadcastTo(x) => emit(x, &|| g.sum_to(&v(x).shape()))?,
            Op::Softmax(x) => emit(x, &|| {
                let last = out.shape().len() - 1;
                let s = g.mul(out)?.sum_axis(last)?;
                g.sub(s)?.mul(out)
            })?,
            Op::LogSoftmax(x) => emit(x, &|| {
                let last = out.shape().len() - 1;
                let total = g.sum_axis(last)?;
                g.sub(v(x).softmax()?.mul(total)?)
            })?,
        }
        Ok(res)
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.numel()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    /// Same value as a fresh leaf, cut off from this var's history.
    pub fn detach(&self) -> Var<'g> {
        self.graph.leaf(self.value())
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'g>> {
        let value = self.value().map(f);
        self.graph.push(op, value)
    }

    fn check_same_graph(&self, other: &Var<'g>) -> Result<()> {
        if !std::ptr::eq(self.graph, other.graph) {
            return Err(Error::InvalidArgument("vars belong to different graphs".into()));
        }
        Ok(())
    }

    fn binary(self, other: Var<'g>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'g>> {
        self.check_same_graph(&other)?;
        let value = k::binary(&self.value(), &other.value(), op.name(), f)?;
        self.graph.push(op, value)
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn scale(self, c: f64) -> Result<Var<'g>> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn neg(self) -> Result<Var<'g>> {
        self.scale(-1.0)
    }

    pub fn shift(self, c: f64) -> Result<Var<'g>> {
        self.unary(Op::Shift(self.id), |x| x + c)
    }

    pub fn square(self) -> Result<Var<'g>> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn sqrt(self) -> Result<Var<'g>> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn exp(self) -> Result<Var<'g>> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Result<Var<'g>> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn softplus(self) -> Result<Var<'g>> {
        self.unary(Op::Softplus(self.id), k::softplus)
    }

    pub fn sigmoid(self) -> Result<Var<'g>> {
        self.unary(Op::Sigmoid(self.id), k::sigmoid)
    }

    pub fn selu(self) -> Result<Var<'g>> {
        self.unary(Op::Selu(self.id), k::selu)
    }

    fn selu_grad(self) -> Result<Var<'g>> {
        self.unary(Op::SeluGrad(self.id), k::selu_grad)
    }

    fn selu_curv(self) -> Result<Var<'g>> {
        self.unary(Op::SeluCurv(self.id), k::selu_curv)
    }

    /// `self @ other`. A rank-2 `other` is shared across `self`'s batch axes.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.matmul_t(other, false, false)
    }

    /// Matrix product with optional transposes of the last two axes.
    pub fn matmul_t(self, other: Var<'g>, ta: bool, tb: bool) -> Result<Var<'g>> {
        self.check_same_graph(&other)?;
        let value = k::matmul(&self.value(), &other.value(), ta, tb)?;
        self.graph.push(
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
            value,
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        if shape == self.shape().as_slice() {
            return Ok(self);
        }
        let value = self.value().reshape(shape)?;
        self.graph.push(Op::Reshape(self.id), value)
    }

    pub fn concat(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero vars".into()))?;
        for p in parts {
            first.check_same_graph(p)?;
        }
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().collect();
        let value = k::concat(&refs, axis)?;
        first.graph.push(
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            value,
        )
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let value = k::slice(&self.value(), axis, start, len)?;
        self.graph.push(Op::Slice { x: self.id, axis, start }, value)
    }

    pub fn pad(self, axis: usize, start: usize, total: usize) -> Result<Var<'g>> {
        let value = k::pad(&self.value(), axis, start, total)?;
        self.graph.push(Op::Pad { x: self.id, axis, start }, value)
    }

    /// Sum along `axis`, keeping the axis with extent 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g>> {
        let value = k::sum_axis(&self.value(), axis)?;
        self.graph.push(Op::SumAxis(self.id), value)
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'g>> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::Shape { op: "mean_axis", detail: format!("axis {}", axis) })?;
        self.sum_axis(axis)?.scale(1.0 / n as f64)
    }

    pub fn sum_to(self, shape: &[usize]) -> Result<Var<'g>> {
        if shape == self.shape().as_slice() {
            return Ok(self);
        }
        let value = k::sum_to(&self.value(), shape)?;
        self.graph.push(Op::SumTo(self.id), value)
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'g>> {
        if shape == self.shape().as_slice() {
            return Ok(self);
        }
        let value = k::broadcast_to(&self.value(), shape)?;
        self.graph.push(Op::BroadcastTo(self.id), value)
    }

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum(self) -> Result<Var<'g>> {
        self.sum_to(&[])
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let n = self.numel();
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'g>> {
        let value = k::softmax(&self.value())?;
        self.graph.push(Op::Softmax(self.id), value)
    }

    pub fn log_softmax(self) -> Result<Var<'g>> {
        let value = k::log_softmax(&self.value())?;
        self.graph.push(Op::LogSoftmax(self.id), value)
    }
}
