use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f64>> = sizes.into_iter().map(|n| vec![0.0; n]).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn for_params(params: &ModelParams) -> Self {
        Self::new(params.weights().values().map(Tensor::numel))
    }

    fn check(&self, sizes: impl ExactSizeIterator<Item = usize>, grads: &[Tensor]) -> Result<(), TrainError> {
        if sizes.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                sizes.len(),
                grads.len()
            )));
        }
        for (i, (n, g)) in sizes.zip(grads).enumerate() {
            if n != self.m[i].len() || g.numel() != n {
                return Err(TrainError::Shape(format!(
                    "tensor {i}: parameter has {n} values, moments {}, gradient {}",
                    self.m[i].len(),
                    g.numel()
                )));
            }
        }
        Ok(())
    }

    fn apply(&mut self, i: usize, p: &mut [f64], g: &[f64], cfg: &AdamConfig) {
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<(), TrainError> {
    state.check(params.iter().map(Tensor::numel), grads)?;
    state.t += 1;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.apply(i, p.data_mut(), g.data(), cfg);
    }
    Ok(())
}

/// [`adam_step`] on model weights (in layout order); the updated weights
/// are rounded to `f32` precision.
pub fn adam_step_model(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    state.check(params.weights().values().map(Tensor::numel), grads)?;
    state.t += 1;
    params.update_weights(|i, p| state.apply(i, p.data_mut(), grads[i].data(), cfg));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        let mut p = vec![Tensor::new([3], vec![0.5, -2.0, 1.0]).unwrap()];
        let g = vec![Tensor::new([3], vec![3.0, -0.25, 1e-3]).unwrap()];
        let mut s = AdamState::new([3]);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        let want = [0.5 - 1e-3, -2.0 + 1e-3, 1.0 - 1e-3];
        for (a, b) in p[0].data().iter().zip(want) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_gradient_and_zero_lr_leave_parameters_alone() {
        let orig = Tensor::new([2], vec![0.3, -0.7]).unwrap();
        let mut p = vec![orig.clone()];
        let mut s = AdamState::new([2]);
        for _ in 0..3 {
            adam_step(&mut p, &[Tensor::zeros([2])], &mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p[0], orig);
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &[Tensor::full([2], 5.0)], &mut s, &cfg).unwrap();
        assert_eq!(p[0], orig);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![Tensor::zeros([2])];
        let mut s = AdamState::new([2]);
        assert!(adam_step(&mut p, &[Tensor::zeros([3])], &mut s, &AdamConfig::default()).is_err());
        assert_eq!(s.t, 0);
    }
}
