use super::Op;
use crate::tensor::gemm;
use crate::tensor::tape::{Grads, Var};
use crate::tensor::{Tape, Tensor, TensorError};

pub(crate) struct Conv1dSaved {
    pub input: Var,
    pub weight: Var,
    pub bias: Option<Var>,
    geom: ConvGeometry,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    len_out: usize,
}

/// Output length of a 1-D sliding window, or `None` when the window does not
/// fit in the padded input.
pub fn window_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 {
        return None;
    }
    let padded = len + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Splits `[C, L]` or `[B, C, L]` into `(B, C, L)`.
pub(crate) fn batch_channels_len(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize), TensorError> {
    match *shape {
        [c, l] => Ok((1, c, l)),
        [b, c, l] => Ok((b, c, l)),
        _ => Err(TensorError::shape(
            op,
            format!("expected [C, L] or [B, C, L], got {shape:?}"),
        )),
    }
}

impl ConvGeometry {
    /// Unfolds one batch item into a `[c_in * kernel, len_out]` column matrix.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let ConvGeometry {
            c_in,
            len,
            kernel,
            stride,
            padding,
            len_out,
            ..
        } = *self;
        for ci in 0..c_in {
            let row_in = &x[ci * len..(ci + 1) * len];
            for j in 0..kernel {
                let dst = &mut cols[(ci * kernel + j) * len_out..(ci * kernel + j + 1) * len_out];
                for (t, d) in dst.iter_mut().enumerate() {
                    let pos = (t * stride + j) as isize - padding as isize;
                    *d = if pos >= 0 && (pos as usize) < len {
                        row_in[pos as usize]
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let ConvGeometry {
            c_in,
            len,
            kernel,
            stride,
            padding,
            len_out,
            ..
        } = *self;
        for ci in 0..c_in {
            let row = &mut dx[ci * len..(ci + 1) * len];
            for j in 0..kernel {
                let src = &cols[(ci * kernel + j) * len_out..(ci * kernel + j + 1) * len_out];
                for (t, s) in src.iter().enumerate() {
                    let pos = (t * stride + j) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        row[pos as usize] += s;
                    }
                }
            }
        }
    }
}

impl Tape {
    /// 1-D cross-correlation of `[C_in, L]` (or `[B, C_in, L]`) with a
    /// `[C_out, C_in, k]` kernel.
    pub fn conv1d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        self.check_var(x)?;
        self.check_var(weight)?;
        let (batch, c_in, len) = batch_channels_len("conv1d", self.shape(x))?;
        let ws = self.shape(weight).to_vec();
        if ws.len() != 3 {
            return Err(TensorError::shape(
                "conv1d",
                format!("weight must be [C_out, C_in, k], got {ws:?}"),
            ));
        }
        let (c_out, w_in, kernel) = (ws[0], ws[1], ws[2]);
        if w_in != c_in {
            return Err(TensorError::shape(
                "conv1d",
                format!("input has {c_in} channels but weight expects {w_in}"),
            ));
        }
        if stride == 0 {
            return Err(TensorError::shape("conv1d", "stride must be at least 1"));
        }
        let len_out = window_output_len(len, kernel, stride, padding).ok_or_else(|| {
            TensorError::shape(
                "conv1d",
                format!("kernel {kernel} exceeds padded length {}", len + 2 * padding),
            )
        })?;
        if let Some(b) = bias {
            self.check_var(b)?;
            if self.shape(b) != [c_out] {
                return Err(TensorError::shape(
                    "conv1d",
                    format!("bias {:?} for {c_out} output channels", self.shape(b)),
                ));
            }
        }
        let geom = ConvGeometry {
            batch,
            c_in,
            len,
            c_out,
            kernel,
            stride,
            padding,
            len_out,
        };
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let mut out = vec![0.0; batch * c_out * len_out];
        let mut cols = vec![0.0; c_in * kernel * len_out];
        for b in 0..batch {
            geom.im2col(&xv[b * c_in * len..(b + 1) * c_in * len], &mut cols);
            let dst = &mut out[b * c_out * len_out..(b + 1) * c_out * len_out];
            if let Some(bias) = bias {
                for (co, &bv) in self.value(bias).data().iter().enumerate() {
                    dst[co * len_out..(co + 1) * len_out].fill(bv);
                }
            }
            let beta = if bias.is_some() { 1.0 } else { 0.0 };
            gemm(c_out, c_in * kernel, len_out, 1.0, wv, false, &cols, false, beta, dst);
        }
        let shape = if self.shape(x).len() == 3 {
            vec![batch, c_out, len_out]
        } else {
            vec![c_out, len_out]
        };
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            Op::Conv1d(Conv1dSaved {
                input: x,
                weight,
                bias,
                geom,
            }),
        )
    }
}

pub(super) fn backward(s: &Conv1dSaved, values: &[Tensor], gout: &[f64], g: &mut Grads) {
    let geom = s.geom;
    let ConvGeometry {
        batch,
        c_in,
        len,
        c_out,
        kernel,
        len_out,
        ..
    } = geom;
    let ck = c_in * kernel;
    let xv = values[s.input.index()].data();
    let wv = values[s.weight.index()].data();
    let want_w = g.wants(s.weight);
    let want_x = g.wants(s.input);
    let mut cols = vec![0.0; ck * len_out];
    for b in 0..batch {
        let go = &gout[b * c_out * len_out..(b + 1) * c_out * len_out];
        if want_w {
            geom.im2col(&xv[b * c_in * len..(b + 1) * c_in * len], &mut cols);
            gemm(c_out, len_out, ck, 1.0, go, false, &cols, true, 1.0, g.slot(s.weight));
        }
        if want_x {
            gemm(ck, c_out, len_out, 1.0, wv, true, go, false, 0.0, &mut cols);
            let dx = g.slot(s.input);
            geom.col2im(&cols, &mut dx[b * c_in * len..(b + 1) * c_in * len]);
        }
    }
    if let Some(bias) = s.bias {
        if g.wants(bias) {
            let slot = g.slot(bias);
            for b in 0..batch {
                for (co, acc) in slot.iter_mut().enumerate() {
                    let base = (b * c_out + co) * len_out;
                    *acc += gout[base..base + len_out].iter().sum::<f64>();
                }
            }
        }
    }
}
