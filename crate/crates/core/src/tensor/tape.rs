use super::active::ActivationKind;
use super::pool::PoolKind;
use super::{conv, elementwise, loss, norm, pool, resize, Real, Shape5, Tensor5};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: [usize; 3],
    },
    Pool {
        x: Var,
        kind: PoolKind,
        stride: [usize; 3],
        argmax: Vec<u32>,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Activation {
        x: Var,
        kind: ActivationKind,
    },
    Resize {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Sigmoid {
        x: Var,
    },
    Dice {
        pred: Var,
        target: Var,
        eps: T,
    },
    Sum {
        x: Var,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor5<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// A tape is single-owner; build a fresh one per forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor5<T>) -> Var {
        self.push_raw(value, false, Op::Leaf)
    }

    /// Records a differentiable input.
    pub fn param(&mut self, value: Tensor5<T>) -> Var {
        self.push_raw(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor5<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape5 {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor5<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Saved buffers are only needed when something upstream wants a gradient.
        let op = if requires_grad { op } else { Op::Leaf };
        self.push_raw(value, requires_grad, op)
    }

    fn push_raw(&mut self, value: Tensor5<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar. Every node is visited once, last to first.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar output, got shape {}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = Accumulator {
                tape: self,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv {
                    x,
                    kernel,
                    bias,
                    dilation,
                } => conv::backward(&mut acc, &g, *x, *kernel, *bias, *dilation),
                Op::Pool {
                    x,
                    kind,
                    stride,
                    argmax,
                } => pool::backward(&mut acc, &g, node.value.shape(), *x, *kind, *stride, argmax),
                Op::InstanceNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => norm::backward(&mut acc, &g, *x, *gamma, *beta, xhat, inv_std),
                Op::Activation { x, kind } => {
                    elementwise::activation_backward(&mut acc, &g, *x, &node.value, *kind)
                }
                Op::Resize { x } => resize::backward(&mut acc, &g, node.value.shape(), *x),
                Op::Add { a, b } => {
                    acc.add(*a, |ga| super::axpy(T::one(), &g, ga));
                    acc.add(*b, |gb| super::axpy(T::one(), &g, gb));
                }
                Op::Mul { a, b } => elementwise::mul_backward(&mut acc, &g, *a, *b),
                Op::Concat { a, b } => elementwise::concat_backward(&mut acc, &g, *a, *b),
                Op::Sigmoid { x } => elementwise::sigmoid_backward(&mut acc, &g, *x, &node.value),
                Op::Dice { pred, target, eps } => {
                    loss::dice_backward(&mut acc, g[0], *pred, *target, *eps)
                }
                Op::Sum { x } => acc.add(*x, |gx| gx.iter_mut().for_each(|v| *v += g[0])),
                Op::WeightedSum { x, weights } => acc.add(*x, |gx| super::axpy(g[0], weights, gx)),
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradient sink used by backward rules.
pub(crate) struct Accumulator<'a, T> {
    tape: &'a Tape<T>,
    grads: &'a mut Vec<Option<Vec<T>>>,
}

impl<'a, T: Real> Accumulator<'a, T> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.tape.nodes[v.0].requires_grad
    }

    pub(crate) fn value(&self, v: Var) -> &'a Tensor5<T> {
        let tape: &'a Tape<T> = self.tape;
        &tape.nodes[v.0].value
    }

    /// Runs `f` on the gradient buffer of `v`, allocating it on first use.
    pub(crate) fn add(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.wants(v) {
            return;
        }
        let n = self.tape.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
