use super::Op;
use crate::tensor::tape::{Grads, Var};
use crate::tensor::{Tape, Tensor, TensorError};

pub(crate) struct SoftmaxSaved {
    pub input: Var,
    outer: usize,
    len: usize,
    inner: usize,
}

impl Tape {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_var(x)?;
        let v = self.value(x);
        let shape = v.shape();
        if axis >= shape.len() {
            return Err(TensorError::shape(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        if inner == 1 && len > 0 {
            for (row, dst) in src.chunks_exact(len).zip(out.chunks_exact_mut(len)) {
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let mut total = 0.0;
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d = (v - max).exp();
                    total += *d;
                }
                dst.iter_mut().for_each(|d| *d /= total);
            }
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * len * inner + j * inner + i;
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..len {
                        max = max.max(src[at(j)]);
                    }
                    let mut total = 0.0;
                    for j in 0..len {
                        let e = (src[at(j)] - max).exp();
                        out[at(j)] = e;
                        total += e;
                    }
                    for j in 0..len {
                        out[at(j)] /= total;
                    }
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            Op::Softmax(SoftmaxSaved {
                input: x,
                outer,
                len,
                inner,
            }),
        )
    }
}

pub(super) fn backward(s: &SoftmaxSaved, out: &Tensor, gout: &[f64], g: &mut Grads) {
    if !g.wants(s.input) {
        return;
    }
    let y = out.data();
    let slot = g.slot(s.input);
    let (len, inner) = (s.len, s.inner);
    if inner == 1 && len > 0 {
        for ((yr, gr), dst) in y.chunks_exact(len).zip(gout.chunks_exact(len)).zip(slot.chunks_exact_mut(len)) {
            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                *d += yv * (gv - dot);
            }
        }
        return;
    }
    for o in 0..s.outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut dot = 0.0;
            for j in 0..len {
                dot += gout[at(j)] * y[at(j)];
            }
            for j in 0..len {
                slot[at(j)] += y[at(j)] * (gout[at(j)] - dot);
            }
        }
    }
}
