//! Recorded primitive applications and their adjoint dispatch.

use crate::tape::{Node, NodeId};
use crate::tensor::Tensor;
use crate::{elementwise, fft, linalg, recurrent, shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Unary {
    Neg,
    /// `scale * x + shift`
    Affine { scale: f64, shift: f64 },
    Powi(i32),
    Tanh,
    Sigmoid,
    Sin,
    Exp,
    Log,
    Abs,
    Sqrt,
    Clamp { lo: f64, hi: f64 },
}

pub(crate) enum Op {
    Leaf,
    Binary { kind: Binary, a: NodeId, b: NodeId },
    Unary { kind: Unary, x: NodeId },
    Sum { x: NodeId },
    SumAxis { x: NodeId, axis: usize },
    Reshape { x: NodeId },
    Transpose { x: NodeId },
    Slice { x: NodeId, axis: usize, start: usize, end: usize },
    Concat { xs: Vec<NodeId>, axis: usize },
    Repeat { x: NodeId, axis: usize, times: usize },
    Pad { x: NodeId, axis: usize, before: usize, after: usize },
    Frames { x: NodeId, win: usize, hop: usize },
    MaxPool { x: NodeId, argmax: Vec<usize> },
    AvgPool { x: NodeId, block: usize },
    Upsample { x: NodeId, block: usize },
    MatMul { a: NodeId, b: NodeId },
    Conv1d { x: NodeId, w: NodeId, bias: Option<NodeId>, dilation: usize },
    Rfft { x: NodeId },
    Irfft { x: NodeId },
    ComplexMul { a: NodeId, b: NodeId },
    BiquadResponse { coeffs: NodeId },
    Lstm { inputs: [NodeId; 6], saved: Box<recurrent::LstmSaved> },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b } | Op::ComplexMul { a, b } => vec![*a, *b],
            Op::Unary { x, .. }
            | Op::Sum { x }
            | Op::SumAxis { x, .. }
            | Op::Reshape { x }
            | Op::Transpose { x }
            | Op::Slice { x, .. }
            | Op::Repeat { x, .. }
            | Op::Pad { x, .. }
            | Op::Frames { x, .. }
            | Op::MaxPool { x, .. }
            | Op::AvgPool { x, .. }
            | Op::Upsample { x, .. }
            | Op::Rfft { x }
            | Op::Irfft { x } => vec![*x],
            Op::BiquadResponse { coeffs } => vec![*coeffs],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Conv1d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            Op::Lstm { inputs, .. } => inputs.to_vec(),
        }
    }
}

pub(crate) type Contributions = Vec<(NodeId, Vec<f64>)>;

/// Vector-Jacobian product of one node: gradient contributions to its operands.
pub(crate) fn backward(
    op: &Op,
    g: &[f64],
    out: &Tensor,
    nodes: &[Node],
    wants: &dyn Fn(NodeId) -> bool,
) -> Contributions {
    let val = |id: NodeId| -> &Tensor { &nodes[id].value };
    match op {
        Op::Leaf => vec![],
        Op::Binary { kind, a, b } => elementwise::binary_backward(*kind, g, val(*a), val(*b), out, *a, *b, wants),
        Op::Unary { kind, x } => vec![(*x, elementwise::unary_backward(*kind, g, val(*x), out))],
        Op::Sum { x } => vec![(*x, vec![g[0]; val(*x).numel()])],
        Op::SumAxis { x, axis } => vec![(*x, shape::sum_axis_backward(g, val(*x).shape(), *axis))],
        Op::Reshape { x } => vec![(*x, g.to_vec())],
        Op::Transpose { x } => vec![(*x, shape::transpose_backward(g, val(*x).shape()))],
        Op::Slice { x, axis, start, end } => {
            vec![(*x, shape::slice_backward(g, val(*x).shape(), *axis, *start, *end))]
        }
        Op::Concat { xs, axis } => {
            let shapes: Vec<&[usize]> = xs.iter().map(|&i| val(i).shape()).collect();
            xs.iter().copied().zip(shape::concat_backward(g, &shapes, *axis)).collect()
        }
        Op::Repeat { x, axis, times } => vec![(*x, shape::repeat_backward(g, val(*x).shape(), *axis, *times))],
        Op::Pad { x, axis, before, after } => {
            vec![(*x, shape::pad_backward(g, val(*x).shape(), *axis, *before, *after))]
        }
        Op::Frames { x, win, hop } => vec![(*x, shape::frames_backward(g, val(*x).numel(), *win, *hop))],
        Op::MaxPool { x, argmax } => {
            let mut dx = vec![0.0; val(*x).numel()];
            for (gi, &src) in g.iter().zip(argmax) {
                if src != usize::MAX {
                    dx[src] += gi;
                }
            }
            vec![(*x, dx)]
        }
        Op::AvgPool { x, block } => vec![(*x, shape::avg_pool_backward(g, val(*x).shape(), *block))],
        Op::Upsample { x, block } => vec![(*x, shape::upsample_backward(g, val(*x).shape(), out.shape(), *block))],
        Op::MatMul { a, b } => linalg::matmul_backward(g, val(*a), val(*b), *a, *b, wants),
        Op::Conv1d { x, w, bias, dilation } => {
            linalg::conv1d_backward(g, val(*x), val(*w), *x, *w, *bias, *dilation, wants)
        }
        Op::Rfft { x } => vec![(*x, fft::rfft_backward(g, val(*x).shape()))],
        Op::Irfft { x } => vec![(*x, fft::irfft_backward(g, val(*x).shape(), out.shape()))],
        Op::ComplexMul { a, b } => fft::complex_mul_backward(g, val(*a), val(*b), out, *a, *b, wants),
        Op::BiquadResponse { coeffs } => vec![(*coeffs, fft::biquad_response_backward(g, val(*coeffs), out))],
        Op::Lstm { inputs, saved } => {
            let vals: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
            recurrent::lstm_backward(g, &vals, saved, inputs, wants)
        }
    }
}
