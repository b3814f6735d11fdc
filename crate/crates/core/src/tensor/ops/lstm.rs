use super::Op;
use crate::tensor::gemm;
use crate::tensor::tape::{Grads, Var};
use crate::tensor::{Tape, Tensor, TensorError};

/// Weights of a single LSTM layer with gates stacked in the order
/// input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[4H, D]`
    pub w_ih: Var,
    /// `[4H, H]`
    pub w_hh: Var,
    /// `[4H]`
    pub bias: Var,
}

pub(crate) struct LstmSaved {
    pub input: Var,
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    batch: usize,
    steps: usize,
    in_dim: usize,
    hidden: usize,
    /// Post-activation gates `[B, T, 4H]`.
    gates: Vec<f64>,
    /// Cell states `[B, T, H]`.
    cells: Vec<f64>,
    /// `tanh` of the cell states `[B, T, H]`.
    cells_tanh: Vec<f64>,
    h0: Vec<f64>,
    c0: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn expand_state(name: &str, state: Option<&Tensor>, batch: usize, hidden: usize) -> Result<Vec<f64>, TensorError> {
    let Some(t) = state else {
        return Ok(vec![0.0; batch * hidden]);
    };
    match t.shape() {
        [h] if *h == hidden => Ok(t.data().repeat(batch)),
        [b, h] if *b == batch && *h == hidden => Ok(t.data().to_vec()),
        s => Err(TensorError::shape(
            "lstm",
            format!("{name} shape {s:?} does not match hidden size {hidden} (batch {batch})"),
        )),
    }
}

impl Tape {
    /// Unidirectional LSTM over `[T, D]` or `[B, T, D]`; returns the full
    /// hidden-state sequence `[.., T, H]`. Missing initial states are zero.
    pub fn lstm(
        &mut self,
        x: Var,
        w: LstmWeights,
        h0: Option<&Tensor>,
        c0: Option<&Tensor>,
    ) -> Result<Var, TensorError> {
        for v in [x, w.w_ih, w.w_hh, w.bias] {
            self.check_var(v)?;
        }
        let xs = self.shape(x).to_vec();
        let (batch, steps, in_dim) = match xs[..] {
            [t, d] => (1, t, d),
            [b, t, d] => (b, t, d),
            _ => return Err(TensorError::shape("lstm", format!("input {xs:?}"))),
        };
        let whh = self.shape(w.w_hh).to_vec();
        if whh.len() != 2 || whh[0] != 4 * whh[1] {
            return Err(TensorError::shape("lstm", format!("w_hh must be [4H, H], got {whh:?}")));
        }
        let hidden = whh[1];
        if self.shape(w.w_ih) != [4 * hidden, in_dim] {
            return Err(TensorError::shape(
                "lstm",
                format!("w_ih {:?} for input dim {in_dim}, hidden {hidden}", self.shape(w.w_ih)),
            ));
        }
        if self.shape(w.bias) != [4 * hidden] {
            return Err(TensorError::shape("lstm", format!("bias {:?}", self.shape(w.bias))));
        }
        let h0 = expand_state("h0", h0, batch, hidden)?;
        let c0 = expand_state("c0", c0, batch, hidden)?;
        let g4 = 4 * hidden;

        let xv = self.value(x).data();
        let mut pre = vec![0.0; batch * steps * g4];
        gemm(batch * steps, in_dim, g4, 1.0, xv, false, self.value(w.w_ih).data(), true, 0.0, &mut pre);
        let bias = self.value(w.bias).data();
        let w_hh = self.value(w.w_hh).data();

        let mut gates = pre;
        let mut cells = vec![0.0; batch * steps * hidden];
        let mut cells_tanh = vec![0.0; batch * steps * hidden];
        let mut out = vec![0.0; batch * steps * hidden];
        let mut h_prev = h0.clone();
        let mut c_prev = c0.clone();
        let mut hw = vec![0.0; batch * g4];
        for t in 0..steps {
            gemm(batch, hidden, g4, 1.0, &h_prev, false, w_hh, true, 0.0, &mut hw);
            for b in 0..batch {
                let row = &mut gates[(b * steps + t) * g4..(b * steps + t + 1) * g4];
                let rec = &hw[b * g4..(b + 1) * g4];
                for j in 0..g4 {
                    row[j] += rec[j] + bias[j];
                }
                let (ig, rest) = row.split_at_mut(hidden);
                let (fg, rest) = rest.split_at_mut(hidden);
                let (gg, og) = rest.split_at_mut(hidden);
                let cell_off = (b * steps + t) * hidden;
                for k in 0..hidden {
                    ig[k] = sigmoid(ig[k]);
                    fg[k] = sigmoid(fg[k]);
                    gg[k] = gg[k].tanh();
                    og[k] = sigmoid(og[k]);
                    let c = fg[k] * c_prev[b * hidden + k] + ig[k] * gg[k];
                    let tc = c.tanh();
                    let h = og[k] * tc;
                    cells[cell_off + k] = c;
                    cells_tanh[cell_off + k] = tc;
                    out[cell_off + k] = h;
                    c_prev[b * hidden + k] = c;
                    h_prev[b * hidden + k] = h;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = hidden;
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            Op::Lstm(Box::new(LstmSaved {
                input: x,
                w_ih: w.w_ih,
                w_hh: w.w_hh,
                bias: w.bias,
                batch,
                steps,
                in_dim,
                hidden,
                gates,
                cells,
                cells_tanh,
                h0,
                c0,
            })),
        )
    }
}

pub(super) fn backward(s: &LstmSaved, values: &[Tensor], out: &Tensor, gout: &[f64], g: &mut Grads) {
    let (batch, steps, in_dim, hidden) = (s.batch, s.steps, s.in_dim, s.hidden);
    let g4 = 4 * hidden;
    let hseq = out.data();
    let w_hh = values[s.w_hh.index()].data();
    let mut dpre = vec![0.0; batch * steps * g4];
    let mut dh_next = vec![0.0; batch * hidden];
    let mut dc_next = vec![0.0; batch * hidden];
    let mut dgates_t = vec![0.0; batch * g4];
    let mut h_prev = vec![0.0; batch * hidden];
    let mut dw_hh = vec![0.0; g4 * hidden];
    for t in (0..steps).rev() {
        for b in 0..batch {
            let off = (b * steps + t) * hidden;
            let gate = &s.gates[(b * steps + t) * g4..(b * steps + t + 1) * g4];
            let dst = &mut dgates_t[b * g4..(b + 1) * g4];
            for k in 0..hidden {
                let (i, f, gg, o) = (gate[k], gate[hidden + k], gate[2 * hidden + k], gate[3 * hidden + k]);
                let tc = s.cells_tanh[off + k];
                let c_prev = if t == 0 { s.c0[b * hidden + k] } else { s.cells[off - hidden + k] };
                let dh = gout[off + k] + dh_next[b * hidden + k];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[b * hidden + k];
                dst[k] = dc * gg * i * (1.0 - i);
                dst[hidden + k] = dc * c_prev * f * (1.0 - f);
                dst[2 * hidden + k] = dc * i * (1.0 - gg * gg);
                dst[3 * hidden + k] = d_o * o * (1.0 - o);
                dc_next[b * hidden + k] = dc * f;
                h_prev[b * hidden + k] = if t == 0 { s.h0[b * hidden + k] } else { hseq[off - hidden + k] };
            }
            dpre[(b * steps + t) * g4..(b * steps + t + 1) * g4].copy_from_slice(dst);
        }
        gemm(batch, g4, hidden, 1.0, &dgates_t, false, w_hh, false, 0.0, &mut dh_next);
        gemm(g4, batch, hidden, 1.0, &dgates_t, true, &h_prev, false, 1.0, &mut dw_hh);
    }
    if g.wants(s.w_hh) {
        g.add(s.w_hh, &dw_hh);
    }
    if g.wants(s.bias) {
        let slot = g.slot(s.bias);
        for row in dpre.chunks_exact(g4) {
            slot.iter_mut().zip(row).for_each(|(a, d)| *a += d);
        }
    }
    let rows = batch * steps;
    if g.wants(s.w_ih) {
        let xv = values[s.input.index()].data();
        gemm(g4, rows, in_dim, 1.0, &dpre, true, xv, false, 1.0, g.slot(s.w_ih));
    }
    if g.wants(s.input) {
        let w_ih = values[s.w_ih.index()].data();
        gemm(rows, g4, in_dim, 1.0, &dpre, false, w_ih, false, 1.0, g.slot(s.input));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(tape: &mut Tape, d: usize, h: usize, f: impl Fn(usize) -> f64) -> LstmWeights {
        LstmWeights {
            w_ih: tape.param(Tensor::from_fn([4 * h, d], &f)),
            w_hh: tape.param(Tensor::from_fn([4 * h, h], |i| f(i + 1000))),
            bias: tape.param(Tensor::from_fn([4 * h], |i| f(i + 2000))),
        }
    }

    #[test]
    fn zero_weights_stay_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn([5, 3], |i| i as f64));
        let w = weights(&mut tape, 3, 4, |_| 0.0);
        let y = tape.lstm(x, w, None, None).unwrap();
        assert_eq!(tape.shape(y), &[5, 4]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_state_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([5, 3]));
        let w = weights(&mut tape, 3, 4, |_| 0.0);
        let h0 = Tensor::zeros([5]);
        assert!(matches!(
            tape.lstm(x, w, Some(&h0), None),
            Err(TensorError::Shape { op: "lstm", .. })
        ));
    }

    #[test]
    fn batched_rows_match_unbatched() {
        let f = |i: usize| ((i * 37 % 17) as f64 - 8.0) * 0.05;
        let mut tape = Tape::new();
        let w = weights(&mut tape, 2, 3, f);
        let xa = Tensor::from_fn([4, 2], |i| (i as f64 * 0.7).sin());
        let xb = Tensor::from_fn([4, 2], |i| (i as f64 * 1.3).cos());
        let both = Tensor::new([2, 4, 2], [xa.data(), xb.data()].concat()).unwrap();
        let (va, vb, vboth) = (tape.constant(xa), tape.constant(xb), tape.constant(both));
        let ya = tape.lstm(va, w, None, None).unwrap();
        let yb = tape.lstm(vb, w, None, None).unwrap();
        let y = tape.lstm(vboth, w, None, None).unwrap();
        let joined = [tape.value(ya).data(), tape.value(yb).data()].concat();
        for (p, q) in tape.value(y).data().iter().zip(&joined) {
            assert!((p - q).abs() < 1e-14);
        }
    }
}
