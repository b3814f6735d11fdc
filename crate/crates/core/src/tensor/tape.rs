use super::ops::{self, Op};
use super::{Tensor, TensorError};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered record of differentiable operations.
///
/// Nodes are only ever appended, so every input of a node has a smaller
/// index than the node itself.
#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    requires: Vec<bool>,
    ops: Vec<Op>,
    check_finite: bool,
}

/// Gradient slots of the nodes recorded before the one being differentiated.
pub(crate) struct Grads<'a> {
    slots: &'a mut [Option<Vec<f64>>],
    requires: &'a [bool],
    values: &'a [Tensor],
}

impl Grads<'_> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Accumulation buffer for `v`, zero-initialised on first use.
    pub(crate) fn slot(&mut self, v: Var) -> &mut [f64] {
        let n = self.values[v.0].numel();
        self.slots[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    pub(crate) fn add(&mut self, v: Var, g: &[f64]) {
        if self.wants(v) {
            self.slot(v).iter_mut().zip(g).for_each(|(s, x)| *s += x);
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that rejects any operation producing NaN or infinity.
    pub fn with_finite_checks() -> Self {
        Tape {
            check_finite: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires_grad);
        self.ops.push(Op::Leaf);
        Var(self.values.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Accumulated gradient, if backward reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient as a tensor shaped like `v`, zero when backward did not reach it.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.values[v.0].shape().to_vec();
        match &self.grads[v.0] {
            Some(g) => Tensor { shape, data: g.clone() },
            None => Tensor::zeros(shape),
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Result<Var, TensorError> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires = op.inputs().iter().any(|v| self.requires[v.0]);
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.ops.push(op);
        Ok(Var(self.values.len() - 1))
    }

    pub(crate) fn check_var(&self, v: Var) -> Result<(), TensorError> {
        if v.0 < self.values.len() {
            Ok(())
        } else {
            Err(TensorError::Usage(format!(
                "variable {} is not recorded on this tape",
                v.0
            )))
        }
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// Gradients of leaves accumulate across calls; gradients of recorded
    /// intermediates are recomputed on every call.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        self.check_var(loss)?;
        if self.values[loss.0].numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        if !self.requires[loss.0] {
            return Ok(());
        }
        let Tape {
            values,
            grads,
            requires,
            ops,
            ..
        } = self;
        for (g, op) in grads.iter_mut().zip(ops.iter()) {
            if !matches!(op, Op::Leaf) {
                *g = None;
            }
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !requires[i] || matches!(ops[i], Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let (before, rest) = grads.split_at_mut(i);
            let mut sink = Grads {
                slots: before,
                requires,
                values,
            };
            ops::backward(&ops[i], values, &values[i], &gout, &mut sink);
            rest[0] = Some(gout);
        }
        Ok(())
    }
}
