//! Forward kernels grouped by family; each family also owns its backward rules.

pub(crate) mod conv;
mod elementwise;
mod linalg;
pub(crate) mod norm;
mod reduce;
mod shape;

use crate::graph::{Backward, Op};
use crate::scalar::Real;

pub(crate) fn backward_node<T: Real>(ctx: &mut Backward<'_, T>, i: usize, g: &[T], parallel: bool) {
    let node = &ctx.nodes[i];
    match &node.op {
        Op::Leaf => {}
        Op::Add(..)
        | Op::Sub(..)
        | Op::Mul(..)
        | Op::AddBias(..)
        | Op::AddConst(..)
        | Op::MulConst(..)
        | Op::Scale(..)
        | Op::Relu(..)
        | Op::Exp(..)
        | Op::Log(..) => elementwise::backward(ctx, i, g),
        Op::MatMul { .. } | Op::Bmm { .. } => linalg::backward(ctx, i, g),
        Op::Softmax(..) | Op::LogSoftmax(..) | Op::Sum(..) | Op::Mean(..) | Op::MeanAxis(..) => {
            reduce::backward(ctx, i, g)
        }
        Op::Reshape(..) | Op::Gather(..) | Op::Concat(..) | Op::Slice { .. } => shape::backward(ctx, i, g),
        Op::Conv1d(..) | Op::MaxPool(..) | Op::AvgPool(..) => conv::backward(ctx, i, g, parallel),
        Op::BatchNorm(..) | Op::LayerNorm(..) | Op::L2Normalize(..) => norm::backward(ctx, i, g),
    }
}

pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
