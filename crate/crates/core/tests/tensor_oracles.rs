use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawlid::tensor::gradcheck::{check, weighted_sum};
use rawlid::tensor::{LstmWeights, NormMode, RunningStats, Tape, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale))
}

#[test]
fn conv1d_gradients_at_coarse_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = vec![
        random(&mut rng, &[2, 16], 1.0),
        random(&mut rng, &[3, 2, 3], 1.0),
        random(&mut rng, &[3], 1.0),
    ];
    let r = check(&inputs, 1e-3, None, |t, v| {
        let y = t.conv1d(v[0], v[1], Some(v[2]), 2, 1)?;
        weighted_sum(t, y, 1)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn lstm_single_step_matches_cell_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d, h) = (3, 2);
    let x = random(&mut rng, &[1, d], 1.0);
    let w_ih = random(&mut rng, &[4 * h, d], 0.5);
    let w_hh = random(&mut rng, &[4 * h, h], 0.5);
    let bias = random(&mut rng, &[4 * h], 0.5);
    let h0 = random(&mut rng, &[h], 0.5);
    let c0 = random(&mut rng, &[h], 0.5);

    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let gate = |row: usize| -> f64 {
        let mut s = bias.data()[row];
        for j in 0..d {
            s += w_ih.data()[row * d + j] * x.data()[j];
        }
        for j in 0..h {
            s += w_hh.data()[row * h + j] * h0.data()[j];
        }
        s
    };
    let mut want = Vec::new();
    for k in 0..h {
        let i = sig(gate(k));
        let f = sig(gate(h + k));
        let g = gate(2 * h + k).tanh();
        let o = sig(gate(3 * h + k));
        let c = f * c0.data()[k] + i * g;
        want.push(o * c.tanh());
    }

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = LstmWeights {
        w_ih: tape.param(w_ih.clone()),
        w_hh: tape.param(w_hh.clone()),
        bias: tape.param(bias.clone()),
    };
    let y = tape.lstm(xv, w, Some(&h0), Some(&c0)).unwrap();
    for (got, want) in tape.value(y).data().iter().zip(&want) {
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn lstm_gradients_through_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t_len, d, h) = (5, 3, 4);
    let inputs = vec![
        random(&mut rng, &[t_len, d], 1.0),
        random(&mut rng, &[4 * h, d], 0.5),
        random(&mut rng, &[4 * h, h], 0.5),
        random(&mut rng, &[4 * h], 0.5),
    ];
    let r = check(&inputs, 1e-5, None, |t, v| {
        let w = LstmWeights {
            w_ih: v[1],
            w_hh: v[2],
            bias: v[3],
        };
        let y = t.lstm(v[0], w, None, None)?;
        t.sum(y)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn composite_conv_pool_linear_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let inputs = vec![
        random(&mut rng, &[2, 1, 20], 1.0),
        random(&mut rng, &[4, 1, 5], 1.0),
        random(&mut rng, &[4], 0.3),
        random(&mut rng, &[3, 4], 1.0),
        random(&mut rng, &[3], 0.3),
    ];
    let r = check(&inputs, 1e-6, None, |t, v| {
        let c = t.conv1d(v[0], v[1], Some(v[2]), 2, 2)?;
        let r = t.relu(c)?;
        let p = t.maxpool1d(r, 3, 2, 1)?;
        let tr = t.transpose_last2(p)?;
        let y = t.linear(tr, v[3], Some(v[4]))?;
        weighted_sum(t, y, 9)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn batchnorm_eval_mode_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = vec![
        random(&mut rng, &[2, 8], 1.0),
        random(&mut rng, &[2], 1.0),
        random(&mut rng, &[2], 1.0),
    ];
    let r = check(&inputs, 1e-5, None, |t, v| {
        let mut rs = RunningStats {
            mean: vec![0.1, -0.2],
            var: vec![0.5, 2.0],
            tracked: 3,
        };
        let y = t.batchnorm1d(v[0], v[1], v[2], &mut rs, NormMode::Eval, 0.1, 1e-5)?;
        weighted_sum(t, y, 2)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn tensor_used_twice_gets_both_contributions() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::from_fn([4], |i| i as f64));
    let y = tape.add(x, x).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0; 4]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-1e4f64..1e4, 1..40), rows in 1usize..4) {
        let n = values.len();
        let data: Vec<f64> = (0..rows).flat_map(|r| values.iter().map(move |v| v / (r + 1) as f64)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([rows, n], data).unwrap());
        let y = tape.softmax(x, 1).unwrap();
        for r in 0..rows {
            let row = &tape.value(y).data()[r * n..(r + 1) * n];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
