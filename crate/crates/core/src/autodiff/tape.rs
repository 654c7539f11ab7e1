//! Wengert-list reverse-mode differentiation.
//!
//! Every differentiable operation appends one node holding its output value and
//! whatever the backward rule needs. `backward` walks the list in reverse
//! recording order, which is a valid reverse topological order because a node
//! can only reference nodes recorded before it.

use crate::attention::FuseMode;
use crate::autodiff::param::{ParamId, ParamStore};
use crate::error::{contract, Error, Result};
use crate::nn::{self, Conv2dSpec, Pool2dSpec, PoolKind};
use crate::tensor::{Scalar, Shape, Tensor};

/// Node handle on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Payload-free operation tag, for inspecting a recorded graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Abs,
    Relu,
    Sigmoid,
    Sum,
    ScaleChannels,
    ScaleSpatial,
    Concat,
    MaxFuse,
    Conv2d,
    Pool2d,
    GlobalPool,
    ChannelPool,
    Linear,
    BatchNorm,
    Upsample,
    Softmax,
    CrossEntropy,
}

pub(crate) enum Op<T> {
    Leaf { param: Option<ParamId> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    ScaleChannels { x: Var, s: Var },
    ScaleSpatial { x: Var, s: Var },
    Concat { a: Var, b: Var },
    MaxFuse { x: Var, mode: FuseMode, take_first: Vec<bool> },
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec },
    Pool2d { x: Var, spec: Pool2dSpec, route: Vec<usize> },
    GlobalPool { x: Var, kind: PoolKind, route: Vec<usize> },
    ChannelPool { x: Var, kind: PoolKind, route: Vec<usize> },
    Linear { x: Var, w: Var, b: Option<Var> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<T>, inv_std: Vec<T>, train: bool },
    Upsample { x: Var },
    Softmax { x: Var },
    CrossEntropy { logits: Var, probs: Tensor<T>, targets: Vec<Option<usize>>, count: usize },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf { .. } => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Abs(..) => OpKind::Abs,
            Op::Relu(..) => OpKind::Relu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Sum(..) => OpKind::Sum,
            Op::ScaleChannels { .. } => OpKind::ScaleChannels,
            Op::ScaleSpatial { .. } => OpKind::ScaleSpatial,
            Op::Concat { .. } => OpKind::Concat,
            Op::MaxFuse { .. } => OpKind::MaxFuse,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Pool2d { .. } => OpKind::Pool2d,
            Op::GlobalPool { .. } => OpKind::GlobalPool,
            Op::ChannelPool { .. } => OpKind::ChannelPool,
            Op::Linear { .. } => OpKind::Linear,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _) | Op::Abs(x) | Op::Relu(x) | Op::Sigmoid(x) | Op::Sum(x) => vec![*x],
            Op::ScaleChannels { x, s } | Op::ScaleSpatial { x, s } => vec![*x, *s],
            Op::Concat { a, b } => vec![*a, *b],
            Op::MaxFuse { x, .. }
            | Op::Pool2d { x, .. }
            | Op::GlobalPool { x, .. }
            | Op::ChannelPool { x, .. }
            | Op::Upsample { x }
            | Op::Softmax { x } => vec![*x],
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Read-only view of one recorded node.
#[derive(Clone, Debug)]
pub struct NodeView {
    pub var: Var,
    pub kind: OpKind,
    pub inputs: Vec<Var>,
    pub shape: Shape,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recorded: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), recorded: 0 }
    }

    /// Number of recorded operations (leaves excluded).
    pub fn len(&self) -> usize {
        self.recorded
    }

    pub fn is_empty(&self) -> bool {
        self.recorded == 0
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Registers a constant input. Its gradient is available from [`Gradients`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf { param: None } });
        Var(self.nodes.len() - 1)
    }

    /// Registers a snapshot of a stored parameter; `backward` accumulates into its grad.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if !store.contains(id) {
            return Err(Error::Structural(format!("unknown parameter id {}", id.0)));
        }
        self.nodes.push(Node { value: store.value(id).clone(), op: Op::Leaf { param: Some(id) } });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or_else(|| Error::Structural(format!("unknown node id {}", v.0)))
    }

    pub fn shape(&self, v: Var) -> Result<Shape> {
        self.value(v).map(Tensor::shape)
    }

    pub fn kind(&self, v: Var) -> Result<OpKind> {
        self.nodes
            .get(v.0)
            .map(|n| n.op.kind())
            .ok_or_else(|| Error::Structural(format!("unknown node id {}", v.0)))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeView> + '_ {
        self.nodes.iter().enumerate().map(|(i, n)| NodeView {
            var: Var(i),
            kind: n.op.kind(),
            inputs: n.op.inputs(),
            shape: n.value.shape(),
        })
    }

    /// Appends an operation node. Every input must already be on the tape.
    pub(crate) fn record(&mut self, op: Op<T>, value: Tensor<T>) -> Result<Var> {
        for v in op.inputs() {
            if v.0 >= self.nodes.len() {
                return Err(Error::Structural(format!(
                    "input node {} not registered (tape has {} nodes)",
                    v.0,
                    self.nodes.len()
                )));
            }
        }
        self.nodes.push(Node { value, op });
        self.recorded += 1;
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar node. Parameter leaves reachable from `loss`
    /// have `∂loss/∂param` added to their stored grad (accumulating, never
    /// overwriting); everything else is left untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let shape = self.shape(loss)?;
        contract!(shape == Shape::SCALAR, "backward requires a scalar loss, got {shape}");

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(shape));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf { param } = node.op {
                if let Some(id) = param {
                    if !store.contains(id) {
                        return Err(Error::Structural(format!("unknown parameter id {}", id.0)));
                    }
                    let p = store.get_mut(id);
                    if p.trainable {
                        p.grad.add_assign(&g);
                    }
                }
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), |g, y| g * y)?);
                accumulate(grads, *b, g.zip_map(val(*a), |g, x| g * x)?);
            }
            Op::Scale(x, s) => {
                let s = *s;
                accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::Abs(x) => {
                accumulate(grads, *x, g.zip_map(val(*x), |g, x| g * sign(x))?);
            }
            Op::Relu(x) => {
                accumulate(grads, *x, g.zip_map(val(*x), |g, x| if x > T::zero() { g } else { T::zero() })?);
            }
            Op::Sigmoid(x) => {
                accumulate(grads, *x, g.zip_map(&node.value, |g, y| g * y * (T::one() - y))?);
            }
            Op::Sum(x) => {
                accumulate(grads, *x, Tensor::full(val(*x).shape(), g.data()[0]));
            }
            Op::ScaleChannels { x, s } => {
                let (dx, ds) = nn::elementwise::scale_channels_backward(val(*x), val(*s), g);
                accumulate(grads, *x, dx);
                accumulate(grads, *s, ds);
            }
            Op::ScaleSpatial { x, s } => {
                let (dx, ds) = nn::elementwise::scale_spatial_backward(val(*x), val(*s), g);
                accumulate(grads, *x, dx);
                accumulate(grads, *s, ds);
            }
            Op::Concat { a, b } => {
                let ca = val(*a).shape().c;
                accumulate(grads, *a, g.channels(0, ca));
                accumulate(grads, *b, g.channels(ca, g.shape().c));
            }
            Op::MaxFuse { x, mode, take_first } => {
                accumulate(grads, *x, crate::attention::max_fuse_backward(val(*x).shape(), *mode, take_first, g));
            }
            Op::Conv2d { x, w, b, spec } => {
                let (dx, dw, db) = nn::conv::conv2d_backward(val(*x), val(*w), spec, g);
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                if let Some(b) = b {
                    accumulate(grads, *b, db);
                }
            }
            Op::Pool2d { x, spec, route } => {
                accumulate(grads, *x, nn::pool::pool2d_backward(val(*x).shape(), spec, route, g));
            }
            Op::GlobalPool { x, kind, route } => {
                accumulate(grads, *x, nn::pool::global_pool_backward(val(*x).shape(), *kind, route, g));
            }
            Op::ChannelPool { x, kind, route } => {
                accumulate(grads, *x, nn::pool::channel_pool_backward(val(*x).shape(), *kind, route, g));
            }
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = nn::linear::linear_backward(val(*x), val(*w), g);
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                if let Some(b) = b {
                    accumulate(grads, *b, db);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let (dx, dgamma, dbeta) = nn::norm::batchnorm_backward(val(*gamma), xhat, inv_std, *train, g);
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, dgamma);
                accumulate(grads, *beta, dbeta);
            }
            Op::Upsample { x } => {
                accumulate(grads, *x, nn::upsample::upsample_backward(val(*x).shape(), g));
            }
            Op::Softmax { x } => {
                accumulate(grads, *x, nn::loss::softmax_backward(&node.value, g));
            }
            Op::CrossEntropy { logits, probs, targets, count } => {
                accumulate(grads, *logits, nn::loss::cross_entropy_backward(probs, targets, *count, g.data()[0]));
            }
        }
        Ok(())
    }
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of one backward pass, retained for leaf nodes.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
