//! Differentiable operations. Each submodule adds its forward methods to
//! [`Tape`] and supplies the matching backward routine.

pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod loss;
pub(crate) mod lstm;
pub(crate) mod norm;
pub(crate) mod pool;
pub(crate) mod softmax;

use super::tape::{Grads, Var};
use super::Tensor;

/// A recorded operation together with what its backward pass needs.
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    TransposeLast2 {
        input: Var,
        outer: usize,
        rows: usize,
        cols: usize,
    },
    ConcatLast {
        inputs: Vec<Var>,
        widths: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MatMul(linalg::MatMulSaved),
    Softmax(softmax::SoftmaxSaved),
    Conv1d(conv::Conv1dSaved),
    MaxPool1d(pool::MaxPoolSaved),
    StatsPool(pool::StatsPoolSaved),
    BatchNorm(norm::BatchNormSaved),
    Lstm(Box<lstm::LstmSaved>),
    CrossEntropy(loss::CrossEntropySaved),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Relu(_) => "relu",
            Op::Reshape(_) => "reshape",
            Op::TransposeLast2 { .. } => "transpose",
            Op::ConcatLast { .. } => "concat",
            Op::Linear { .. } => "linear",
            Op::MatMul(_) => "matmul",
            Op::Softmax(_) => "softmax",
            Op::Conv1d(_) => "conv1d",
            Op::MaxPool1d(_) => "maxpool1d",
            Op::StatsPool(_) => "statistics_pool",
            Op::BatchNorm(_) => "batchnorm1d",
            Op::Lstm(_) => "lstm",
            Op::CrossEntropy(_) => "cross_entropy",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _) | Op::Sum(x) | Op::Relu(x) | Op::Reshape(x) => vec![*x],
            Op::TransposeLast2 { input, .. } => vec![*input],
            Op::ConcatLast { inputs, .. } => inputs.clone(),
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::MatMul(s) => vec![s.a, s.b],
            Op::Softmax(s) => vec![s.input],
            Op::Conv1d(s) => {
                let mut v = vec![s.input, s.weight];
                v.extend(s.bias);
                v
            }
            Op::MaxPool1d(s) => vec![s.input],
            Op::StatsPool(s) => vec![s.input],
            Op::BatchNorm(s) => vec![s.input, s.gamma, s.beta],
            Op::Lstm(s) => vec![s.input, s.w_ih, s.w_hh, s.bias],
            Op::CrossEntropy(s) => vec![s.logits],
        }
    }
}

pub(crate) fn backward(op: &Op, values: &[Tensor], out: &Tensor, gout: &[f64], g: &mut Grads) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            g.add(*a, gout);
            g.add(*b, gout);
        }
        Op::Mul(a, b) => elementwise::mul_backward(*a, *b, values, gout, g),
        Op::Scale(x, c) => {
            if g.wants(*x) {
                g.slot(*x)
                    .iter_mut()
                    .zip(gout)
                    .for_each(|(s, d)| *s += c * d);
            }
        }
        Op::Sum(x) => {
            if g.wants(*x) {
                let d = gout[0];
                g.slot(*x).iter_mut().for_each(|s| *s += d);
            }
        }
        Op::Relu(x) => elementwise::relu_backward(*x, values, gout, g),
        Op::Reshape(x) => g.add(*x, gout),
        Op::TransposeLast2 {
            input,
            outer,
            rows,
            cols,
        } => {
            if g.wants(*input) {
                // forward mapped [rows x cols] -> [cols x rows]
                let slot = g.slot(*input);
                for o in 0..*outer {
                    let base = o * rows * cols;
                    for r in 0..*rows {
                        for c in 0..*cols {
                            slot[base + r * cols + c] += gout[base + c * rows + r];
                        }
                    }
                }
            }
        }
        Op::ConcatLast { inputs, widths } => {
            elementwise::concat_backward(inputs, widths, out, gout, g)
        }
        Op::Linear {
            input,
            weight,
            bias,
        } => linalg::linear_backward(*input, *weight, *bias, values, gout, g),
        Op::MatMul(s) => linalg::matmul_backward(s, values, gout, g),
        Op::Softmax(s) => softmax::backward(s, out, gout, g),
        Op::Conv1d(s) => conv::backward(s, values, gout, g),
        Op::MaxPool1d(s) => pool::maxpool_backward(s, gout, g),
        Op::StatsPool(s) => pool::stats_backward(s, values, gout, g),
        Op::BatchNorm(s) => norm::backward(s, values, gout, g),
        Op::Lstm(s) => lstm::backward(s, values, out, gout, g),
        Op::CrossEntropy(s) => loss::backward(s, gout, g),
    }
}
