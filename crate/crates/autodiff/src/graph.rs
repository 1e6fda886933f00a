use crate::error::{invalid, Result};
use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// `(outer, axis_len, inner)` factorization of a shape around one axis.
pub(crate) type Split = (usize, usize, usize);

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    AddConst(Var),
    MulConst(Var, Vec<T>),
    Scale(Var, T),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Bmm { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, Split),
    LogSoftmax(Var, Split),
    Sum(Var),
    Mean(Var),
    MeanAxis(Var, Split),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>, usize, Vec<usize>, usize),
    Slice { x: Var, outer: usize, n: usize, inner: usize, start: usize, len: usize },
    Conv1d(ops::conv::ConvSaved<T>),
    MaxPool(Var, Vec<usize>),
    AvgPool(Var, usize, usize),
    BatchNorm(ops::norm::BatchNormSaved<T>),
    LayerNorm(ops::norm::LayerNormSaved<T>),
    L2Normalize(Var, Vec<T>),
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) param: Option<ParamId>,
}

/// Tape of operations for one forward/backward pass.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    pub(crate) parallel: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// Batch-parallel kernels when the `parallel` feature is enabled.
    pub fn new() -> Self {
        Self::with_parallel(cfg!(feature = "parallel"))
    }

    pub fn with_parallel(parallel: bool) -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), parallel: parallel && cfg!(feature = "parallel") }
    }

    pub fn is_parallel(&self) -> bool {
        self.parallel
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant: no gradient is tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false, None)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true, None)
    }

    /// Copies a parameter into the graph. Trainable parameters track gradients.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push_leaf(store.value(id).clone(), store.is_trainable(id), Some(id))
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, param });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// First element of the value; the loss for scalar nodes.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Reverse-mode sweep from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(invalid(format!(
                "backward needs a single-element loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let mut ctx = Backward { nodes: &self.nodes, grads: &mut self.grads };
            ops::backward_node(&mut ctx, i, &g, self.parallel);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Adds the gradients of parameter leaves into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(Some(g))) = (node.param, self.grads.get(i)) {
                store.accumulate_grad(id, g);
            }
        }
    }
}

/// Gradient buffers during a backward sweep.
pub(crate) struct Backward<'a, T> {
    pub(crate) nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Real> Backward<'_, T> {
    pub(crate) fn value(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub(crate) fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient buffer of `v`, allocated on first use; `None` when `v` is constant.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len]).as_mut_slice())
    }

    /// `grad(v) += g` elementwise.
    pub(crate) fn add(&mut self, v: Var, g: &[T]) {
        if let Some(s) = self.slot(v) {
            s.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
    }
}
