use super::Op;
use crate::tensor::tape::{Grads, Var};
use crate::tensor::{Tape, Tensor, TensorError};

pub(crate) struct CrossEntropySaved {
    pub logits: Var,
    labels: Vec<usize>,
    probs: Vec<f64>,
}

impl Tape {
    /// Mean softmax cross-entropy of `[B, C]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        self.check_var(logits)?;
        let (batch, classes) = match *self.shape(logits) {
            [b, c] => (b, c),
            ref s => {
                return Err(TensorError::shape(
                    "cross_entropy",
                    format!("logits must be [B, C], got {s:?}"),
                ))
            }
        };
        if labels.len() != batch {
            return Err(TensorError::shape(
                "cross_entropy",
                format!("{} labels for batch of {batch}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::Usage(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; z.len()];
        let mut total = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            let row = &z[b * classes..(b + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[label];
            for (p, v) in probs[b * classes..(b + 1) * classes].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let loss = Tensor::scalar(total / batch as f64);
        self.push(
            loss,
            Op::CrossEntropy(CrossEntropySaved {
                logits,
                labels: labels.to_vec(),
                probs,
            }),
        )
    }
}

pub(super) fn backward(s: &CrossEntropySaved, gout: &[f64], g: &mut Grads) {
    if !g.wants(s.logits) {
        return;
    }
    let batch = s.labels.len();
    let classes = s.probs.len() / batch;
    let scale = gout[0] / batch as f64;
    let slot = g.slot(s.logits);
    for (b, &label) in s.labels.iter().enumerate() {
        for c in 0..classes {
            let target = if c == label { 1.0 } else { 0.0 };
            slot[b * classes + c] += scale * (s.probs[b * classes + c] - target);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let mut tape = Tape::new();
        let z = tape.param(Tensor::zeros([3, 8]));
        let l = tape.cross_entropy(z, &[0, 4, 7]).unwrap();
        assert!((tape.value(l).item().unwrap() - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let mut tape = Tape::new();
        let z = tape.param(Tensor::new([1, 3], vec![0.0, 500.0, 0.0]).unwrap());
        let l = tape.cross_entropy(z, &[1]).unwrap();
        assert!(tape.value(l).item().unwrap() < 1e-12);
    }

    #[test]
    fn out_of_range_label() {
        let mut tape = Tape::new();
        let z = tape.param(Tensor::zeros([1, 3]));
        assert!(matches!(tape.cross_entropy(z, &[3]), Err(TensorError::Usage(_))));
    }
}
