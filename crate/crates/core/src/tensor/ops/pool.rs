use super::conv::{batch_channels_len, window_output_len};
use super::Op;
use crate::tensor::tape::{Grads, Var};
use crate::tensor::{Tape, Tensor, TensorError};

pub(crate) struct MaxPoolSaved {
    pub input: Var,
    /// Flat input index feeding each output element.
    argmax: Vec<usize>,
}

pub(crate) struct StatsPoolSaved {
    pub input: Var,
    frames: usize,
    dim: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Tape {
    /// Sliding-window maximum over the last axis of `[C, L]` or `[B, C, L]`.
    /// Padding positions act as negative infinity; ties resolve to the lowest
    /// index.
    pub fn maxpool1d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var, TensorError> {
        self.check_var(x)?;
        let (batch, channels, len) = batch_channels_len("maxpool1d", self.shape(x))?;
        if stride == 0 || kernel == 0 {
            return Err(TensorError::shape("maxpool1d", "kernel and stride must be at least 1"));
        }
        if padding >= kernel {
            return Err(TensorError::shape(
                "maxpool1d",
                format!("padding {padding} must be smaller than kernel {kernel}"),
            ));
        }
        let len_out = window_output_len(len, kernel, stride, padding).ok_or_else(|| {
            TensorError::shape(
                "maxpool1d",
                format!("window {kernel} exceeds padded length {}", len + 2 * padding),
            )
        })?;
        let src = self.value(x).data();
        let rows = batch * channels;
        let mut out = Vec::with_capacity(rows * len_out);
        let mut argmax = Vec::with_capacity(rows * len_out);
        for r in 0..rows {
            let row = &src[r * len..(r + 1) * len];
            for t in 0..len_out {
                let start = (t * stride) as isize - padding as isize;
                let lo = start.max(0) as usize;
                let hi = ((start + kernel as isize) as usize).min(len);
                let mut best = lo;
                for i in lo + 1..hi {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        let shape = if self.shape(x).len() == 3 {
            vec![batch, channels, len_out]
        } else {
            vec![channels, len_out]
        };
        let out = Tensor::new(shape, out)?;
        self.push(out, Op::MaxPool1d(MaxPoolSaved { input: x, argmax }))
    }

    /// Concatenated per-feature mean and standard deviation over time.
    ///
    /// Input `[T, D]` gives `[2D]`; `[B, T, D]` gives `[B, 2D]`. Variance is
    /// the population variance and `eps` is added inside the square root.
    pub fn statistics_pool(&mut self, x: Var, eps: f64) -> Result<Var, TensorError> {
        self.check_var(x)?;
        let shape = self.shape(x).to_vec();
        let (batch, frames, dim) = match shape[..] {
            [t, d] => (1, t, d),
            [b, t, d] => (b, t, d),
            _ => {
                return Err(TensorError::shape(
                    "statistics_pool",
                    format!("expected [T, D] or [B, T, D], got {shape:?}"),
                ))
            }
        };
        let src = self.value(x).data();
        let mut mean = vec![0.0; batch * dim];
        let mut std = vec![0.0; batch * dim];
        let inv_t = 1.0 / frames as f64;
        // Sums run over each feature's values in sorted order, so any
        // reordering of the frames gives bit-identical statistics.
        let mut column = vec![0.0; frames];
        for b in 0..batch {
            for d in 0..dim {
                for (t, c) in column.iter_mut().enumerate() {
                    *c = src[(b * frames + t) * dim + d];
                }
                column.sort_unstable_by(f64::total_cmp);
                let rough = column.iter().sum::<f64>() / frames as f64;
                let m = rough + column.iter().map(|v| v - rough).sum::<f64>() / frames as f64;
                let ss: f64 = column.iter().map(|v| (v - m) * (v - m)).sum();
                mean[b * dim + d] = m;
                std[b * dim + d] = (ss * inv_t + eps).sqrt();
            }
        }
        let mut out = Vec::with_capacity(batch * 2 * dim);
        for b in 0..batch {
            out.extend_from_slice(&mean[b * dim..(b + 1) * dim]);
            out.extend_from_slice(&std[b * dim..(b + 1) * dim]);
        }
        let out_shape = if shape.len() == 3 {
            vec![batch, 2 * dim]
        } else {
            vec![2 * dim]
        };
        let out = Tensor::new(out_shape, out)?;
        self.push(
            out,
            Op::StatsPool(StatsPoolSaved {
                input: x,
                frames,
                dim,
                mean,
                std,
            }),
        )
    }
}

pub(super) fn maxpool_backward(s: &MaxPoolSaved, gout: &[f64], g: &mut Grads) {
    if g.wants(s.input) {
        let slot = g.slot(s.input);
        for (&src, &d) in s.argmax.iter().zip(gout) {
            slot[src] += d;
        }
    }
}

pub(super) fn stats_backward(s: &StatsPoolSaved, values: &[Tensor], gout: &[f64], g: &mut Grads) {
    if !g.wants(s.input) {
        return;
    }
    let (frames, dim) = (s.frames, s.dim);
    let batch = s.mean.len() / dim;
    let src = values[s.input.index()].data();
    let slot = g.slot(s.input);
    let inv_t = 1.0 / frames as f64;
    for b in 0..batch {
        let g_mean = &gout[b * 2 * dim..b * 2 * dim + dim];
        let g_std = &gout[b * 2 * dim + dim..(b + 1) * 2 * dim];
        let mean = &s.mean[b * dim..(b + 1) * dim];
        let std = &s.std[b * dim..(b + 1) * dim];
        for t in 0..frames {
            let off = (b * frames + t) * dim;
            for d in 0..dim {
                slot[off + d] += inv_t * (g_mean[d] + g_std[d] * (src[off + d] - mean[d]) / std[d]);
            }
        }
    }
}
