use super::conv::batch_channels_len;
use super::Op;
use crate::tensor::tape::{Grads, Var};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalise with batch statistics and update the running estimates.
    Train,
    /// Normalise with the running estimates.
    Eval,
}

/// Running per-channel mean and variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of training batches folded in; zero means "no statistics yet".
    pub tracked: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            tracked: 0,
        }
    }
}

pub(crate) struct BatchNormSaved {
    pub input: Var,
    pub gamma: Var,
    pub beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: NormMode,
    batch: usize,
    channels: usize,
    len: usize,
}

impl Tape {
    /// Per-channel normalisation of `[C, L]` or `[B, C, L]` over the batch
    /// and length axes, followed by `gamma * x + beta`.
    ///
    /// In training mode `running` is updated with exponential `momentum`
    /// using the unbiased batch variance.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
        mode: NormMode,
        momentum: f64,
        eps: f64,
    ) -> Result<Var, TensorError> {
        self.check_var(x)?;
        self.check_var(gamma)?;
        self.check_var(beta)?;
        let (batch, channels, len) = batch_channels_len("batchnorm1d", self.shape(x))?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [channels] {
                return Err(TensorError::shape(
                    "batchnorm1d",
                    format!("{name} {:?} for {channels} channels", self.shape(v)),
                ));
            }
        }
        if running.mean.len() != channels || running.var.len() != channels {
            return Err(TensorError::shape(
                "batchnorm1d",
                format!("running statistics sized {} for {channels} channels", running.mean.len()),
            ));
        }
        if mode == NormMode::Eval && running.tracked == 0 {
            return Err(TensorError::State {
                op: "batchnorm1d",
                detail: "evaluation requested before any running statistics were accumulated".into(),
            });
        }
        let src = self.value(x).data();
        let n = (batch * len) as f64;
        let mut inv_std = vec![0.0; channels];
        let mut mean = vec![0.0; channels];
        match mode {
            NormMode::Train => {
                let mut var = vec![0.0; channels];
                for c in 0..channels {
                    let mut s = 0.0;
                    for b in 0..batch {
                        s += src[(b * channels + c) * len..(b * channels + c + 1) * len].iter().sum::<f64>();
                    }
                    let m = s / n;
                    let mut q = 0.0;
                    for b in 0..batch {
                        for v in &src[(b * channels + c) * len..(b * channels + c + 1) * len] {
                            q += (v - m) * (v - m);
                        }
                    }
                    mean[c] = m;
                    var[c] = q / n;
                    inv_std[c] = 1.0 / (var[c] + eps).sqrt();
                }
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for c in 0..channels {
                    running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * mean[c];
                    running.var[c] = (1.0 - momentum) * running.var[c] + momentum * var[c] * unbias;
                }
                running.tracked += 1;
            }
            NormMode::Eval => {
                mean.copy_from_slice(&running.mean);
                for c in 0..channels {
                    inv_std[c] = 1.0 / (running.var[c] + eps).sqrt();
                }
            }
        }
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * len;
                for i in off..off + len {
                    let h = (src[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = gv[c] * h + bv[c];
                }
            }
        }
        let out = Tensor::new(self.shape(x), out)?;
        self.push(
            out,
            Op::BatchNorm(BatchNormSaved {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
                batch,
                channels,
                len,
            }),
        )
    }
}

pub(super) fn backward(s: &BatchNormSaved, values: &[Tensor], gout: &[f64], g: &mut Grads) {
    let (batch, channels, len) = (s.batch, s.channels, s.len);
    let n = (batch * len) as f64;
    let gamma = values[s.gamma.index()].data();
    let mut sum_dy = vec![0.0; channels];
    let mut sum_dy_xhat = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * len;
            for i in off..off + len {
                sum_dy[c] += gout[i];
                sum_dy_xhat[c] += gout[i] * s.xhat[i];
            }
        }
    }
    if g.wants(s.gamma) {
        g.slot(s.gamma).iter_mut().zip(&sum_dy_xhat).for_each(|(a, v)| *a += v);
    }
    if g.wants(s.beta) {
        g.slot(s.beta).iter_mut().zip(&sum_dy).for_each(|(a, v)| *a += v);
    }
    if g.wants(s.input) {
        let dx = g.slot(s.input);
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * len;
                let k = gamma[c] * s.inv_std[c];
                match s.mode {
                    NormMode::Train => {
                        let mean_dy = sum_dy[c] / n;
                        let mean_dy_xhat = sum_dy_xhat[c] / n;
                        for i in off..off + len {
                            dx[i] += k * (gout[i] - mean_dy - s.xhat[i] * mean_dy_xhat);
                        }
                    }
                    NormMode::Eval => {
                        for i in off..off + len {
                            dx[i] += k * gout[i];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(tape: &mut Tape, c: usize) -> (Var, Var) {
        (tape.param(Tensor::full([c], 1.0)), tape.param(Tensor::zeros([c])))
    }

    #[test]
    fn constant_channel_normalises_to_beta() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full([2, 4], 3.0));
        let gamma = tape.param(Tensor::full([2], 2.0));
        let beta = tape.param(Tensor::new([2], vec![0.5, -0.5]).unwrap());
        let mut rs = RunningStats::new(2);
        let y = tape.batchnorm1d(x, gamma, beta, &mut rs, NormMode::Train, 0.1, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 0.5, 0.5, -0.5, -0.5, -0.5, -0.5]);
    }

    #[test]
    fn unit_affine_gives_zero_mean_unit_variance() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([2, 3, 16], |i| ((i * 7919) % 31) as f64 * 0.3 - 2.0));
        let (gamma, beta) = affine(&mut tape, 3);
        let mut rs = RunningStats::new(3);
        let y = tape.batchnorm1d(x, gamma, beta, &mut rs, NormMode::Train, 0.1, 0.0).unwrap();
        let v = tape.value(y).data();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|b| v[(b * 3 + c) * 16..(b * 3 + c + 1) * 16].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / 32.0;
            let var = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 32.0;
            assert!(m.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-10);
        }
        assert_eq!(rs.tracked, 1);
    }

    #[test]
    fn eval_without_statistics_is_a_state_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([2, 4]));
        let (gamma, beta) = affine(&mut tape, 2);
        let mut rs = RunningStats::new(2);
        assert!(matches!(
            tape.batchnorm1d(x, gamma, beta, &mut rs, NormMode::Eval, 0.1, 1e-5),
            Err(TensorError::State { .. })
        ));
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([1, 2], vec![1.0, 3.0]).unwrap());
        let (gamma, beta) = affine(&mut tape, 1);
        let mut rs = RunningStats::new(1);
        tape.batchnorm1d(x, gamma, beta, &mut rs, NormMode::Train, 0.1, 1e-5).unwrap();
        assert!((rs.mean[0] - 0.2).abs() < 1e-15);
        // unbiased variance of [1, 3] is 2
        assert!((rs.var[0] - (0.9 + 0.2)).abs() < 1e-15);
        let y = tape.batchnorm1d(x, gamma, beta, &mut rs, NormMode::Eval, 0.1, 0.0).unwrap();
        let want = (1.0 - 0.2) / 1.1f64.sqrt();
        assert!((tape.value(y).data()[0] - want).abs() < 1e-12);
    }
}
