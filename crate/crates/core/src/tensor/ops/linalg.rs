use super::Op;
use crate::tensor::gemm;
use crate::tensor::tape::{Grads, Var};
use crate::tensor::{Tape, Tensor, TensorError};

pub(crate) struct MatMulSaved {
    pub a: Var,
    pub b: Var,
    trans_b: bool,
    alpha: f64,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

impl Tape {
    /// Affine map over the last axis: `y = x W^T + b` with `W` of shape
    /// `[d_out, d_in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        self.check_var(x)?;
        self.check_var(weight)?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.is_empty() || ws.len() != 2 {
            return Err(TensorError::shape(
                "linear",
                format!("input {xs:?}, weight {ws:?}"),
            ));
        }
        let d_in = *xs.last().unwrap();
        let (d_out, w_in) = (ws[0], ws[1]);
        if d_in != w_in {
            return Err(TensorError::shape(
                "linear",
                format!("input feature dim {d_in} but weight expects {w_in}"),
            ));
        }
        if let Some(b) = bias {
            self.check_var(b)?;
            if self.shape(b) != [d_out] {
                return Err(TensorError::shape(
                    "linear",
                    format!("bias {:?} for output dim {d_out}", self.shape(b)),
                ));
            }
        }
        let rows = self.value(x).numel() / d_in;
        let mut out = vec![0.0; rows * d_out];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for r in 0..rows {
                out[r * d_out..(r + 1) * d_out].copy_from_slice(bv);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(
            rows,
            d_in,
            d_out,
            1.0,
            self.value(x).data(),
            false,
            self.value(weight).data(),
            true,
            beta,
            &mut out,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = d_out;
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            Op::Linear {
                input: x,
                weight,
                bias,
            },
        )
    }

    /// `alpha * a @ b` (or `alpha * a @ b^T` when `trans_b`), optionally
    /// batched over a shared leading axis: `[B, m, k] x [B, k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool, alpha: f64) -> Result<Var, TensorError> {
        self.check_var(a)?;
        self.check_var(b)?;
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let bad = || TensorError::shape("matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})"));
        if sa.len() != sb.len() || !(sa.len() == 2 || sa.len() == 3) {
            return Err(bad());
        }
        let (batch, m, k) = if sa.len() == 3 {
            (sa[0], sa[1], sa[2])
        } else {
            (1, sa[0], sa[1])
        };
        let (bb, r, c) = if sb.len() == 3 {
            (sb[0], sb[1], sb[2])
        } else {
            (1, sb[0], sb[1])
        };
        let (kb, n) = if trans_b { (c, r) } else { (r, c) };
        if bb != batch || kb != k {
            return Err(bad());
        }
        let mut out = vec![0.0; batch * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                alpha,
                &av[i * m * k..(i + 1) * m * k],
                false,
                &bv[i * k * n..(i + 1) * k * n],
                trans_b,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let shape = if sa.len() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            Op::MatMul(MatMulSaved {
                a,
                b,
                trans_b,
                alpha,
                batch,
                m,
                k,
                n,
            }),
        )
    }
}

pub(super) fn linear_backward(
    x: Var,
    weight: Var,
    bias: Option<Var>,
    values: &[Tensor],
    gout: &[f64],
    g: &mut Grads,
) {
    let w = &values[weight.index()];
    let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
    let xv = values[x.index()].data();
    let rows = xv.len() / d_in;
    if g.wants(x) {
        gemm(rows, d_out, d_in, 1.0, gout, false, w.data(), false, 1.0, g.slot(x));
    }
    if g.wants(weight) {
        gemm(d_out, rows, d_in, 1.0, gout, true, xv, false, 1.0, g.slot(weight));
    }
    if let Some(b) = bias {
        if g.wants(b) {
            let s = g.slot(b);
            for r in 0..rows {
                s.iter_mut()
                    .zip(&gout[r * d_out..(r + 1) * d_out])
                    .for_each(|(a, d)| *a += d);
            }
        }
    }
}

pub(super) fn matmul_backward(s: &MatMulSaved, values: &[Tensor], gout: &[f64], g: &mut Grads) {
    let &MatMulSaved {
        a,
        b,
        trans_b,
        alpha,
        batch,
        m,
        k,
        n,
    } = s;
    let av = values[a.index()].data();
    let bv = values[b.index()].data();
    if g.wants(a) {
        let slot = g.slot(a);
        for i in 0..batch {
            let go = &gout[i * m * n..(i + 1) * m * n];
            let bi = &bv[i * k * n..(i + 1) * k * n];
            // da = alpha * dC op(b)^T
            gemm(m, n, k, alpha, go, false, bi, !trans_b, 1.0, &mut slot[i * m * k..(i + 1) * m * k]);
        }
    }
    if g.wants(b) {
        let slot = g.slot(b);
        for i in 0..batch {
            let go = &gout[i * m * n..(i + 1) * m * n];
            let ai = &av[i * m * k..(i + 1) * m * k];
            let dst = &mut slot[i * k * n..(i + 1) * k * n];
            if trans_b {
                // b stored [n, k]: db = alpha * dC^T a
                gemm(n, m, k, alpha, go, true, ai, false, 1.0, dst);
            } else {
                gemm(k, m, n, alpha, ai, true, go, false, 1.0, dst);
            }
        }
    }
}
