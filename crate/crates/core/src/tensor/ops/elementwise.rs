use super::Op;
use crate::tensor::tape::{Grads, Var};
use crate::tensor::{Tape, Tensor, TensorError};

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        self.check_var(a)?;
        self.check_var(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        self.check_var(x)?;
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|p| p * factor).collect())?;
        self.push(out, Op::Scale(x, factor))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check_var(x)?;
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check_var(x)?;
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|p| p.max(0.0)).collect())?;
        self.push(out, Op::Relu(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        self.check_var(x)?;
        let out = Tensor::new(shape, self.value(x).data().to_vec())
            .map_err(|e| TensorError::shape("reshape", e.to_string()))?;
        self.push(out, Op::Reshape(x))
    }

    /// Swaps the last two axes: `[.., r, c] -> [.., c, r]`.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var, TensorError> {
        self.check_var(x)?;
        let v = self.value(x);
        let nd = v.ndim();
        if nd < 2 {
            return Err(TensorError::shape(
                "transpose",
                format!("needs at least 2 axes, got {:?}", v.shape()),
            ));
        }
        let (rows, cols) = (v.shape()[nd - 2], v.shape()[nd - 1]);
        let outer = v.numel() / (rows * cols);
        let src = v.data();
        let mut data = vec![0.0; v.numel()];
        for o in 0..outer {
            let base = o * rows * cols;
            for r in 0..rows {
                for c in 0..cols {
                    data[base + c * rows + r] = src[base + r * cols + c];
                }
            }
        }
        let mut shape = v.shape().to_vec();
        shape.swap(nd - 2, nd - 1);
        let out = Tensor::new(shape, data)?;
        self.push(
            out,
            Op::TransposeLast2 {
                input: x,
                outer,
                rows,
                cols,
            },
        )
    }

    /// Concatenates along the last axis; all leading dimensions must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = xs.first() else {
            return Err(TensorError::Usage("concat of zero tensors".into()));
        };
        for &x in xs {
            self.check_var(x)?;
        }
        let lead = {
            let s = self.shape(first);
            if s.is_empty() {
                return Err(TensorError::shape("concat", "scalar input"));
            }
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(TensorError::shape(
                    "concat",
                    format!("{:?} does not match leading dims {:?}", s, lead),
                ));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, data)?;
        self.push(
            out,
            Op::ConcatLast {
                inputs: xs.to_vec(),
                widths,
            },
        )
    }
}

pub(super) fn mul_backward(a: Var, b: Var, values: &[Tensor], gout: &[f64], g: &mut Grads) {
    if g.wants(a) {
        let other = values[b.index()].data();
        let s = g.slot(a);
        for i in 0..s.len() {
            s[i] += gout[i] * other[i];
        }
    }
    if g.wants(b) {
        let other = values[a.index()].data();
        let s = g.slot(b);
        for i in 0..s.len() {
            s[i] += gout[i] * other[i];
        }
    }
}

pub(super) fn relu_backward(x: Var, values: &[Tensor], gout: &[f64], g: &mut Grads) {
    if g.wants(x) {
        let input = values[x.index()].data();
        let s = g.slot(x);
        for i in 0..s.len() {
            if input[i] > 0.0 {
                s[i] += gout[i];
            }
        }
    }
}

pub(super) fn concat_backward(
    inputs: &[Var],
    widths: &[usize],
    out: &Tensor,
    gout: &[f64],
    g: &mut Grads,
) {
    let total: usize = widths.iter().sum();
    let rows = out.numel() / total;
    let mut offset = 0;
    for (&x, &w) in inputs.iter().zip(widths) {
        if g.wants(x) {
            let s = g.slot(x);
            for r in 0..rows {
                let src = &gout[r * total + offset..r * total + offset + w];
                s[r * w..(r + 1) * w]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, b)| *a += b);
            }
        }
        offset += w;
    }
}
