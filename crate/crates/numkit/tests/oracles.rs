//! Tape kernels against naive scalar-loop implementations.

use std::sync::Arc;

use numkit::{matmul, softmax, Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    tensor(&[m, n], out)
}

/// y[n,t,o] = Σ_j Σ_i x[n, t+j-h, i] · k[j, i, o]
fn naive_temporal_conv(x: &Tensor, k: &Tensor) -> Tensor {
    let (n, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (w, d_out) = (k.shape()[0], k.shape()[2]);
    let half = (w as isize - 1) / 2;
    let mut out = vec![0.0; n * t * d_out];
    for p in 0..n {
        for f in 0..t {
            for o in 0..d_out {
                let mut s = 0.0;
                for j in 0..w {
                    let src = f as isize + j as isize - half;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    for i in 0..d {
                        s += x.data()[(p * t + src as usize) * d + i] * k.data()[(j * d + i) * d_out + o];
                    }
                }
                out[(p * t + f) * d_out + o] = s;
            }
        }
    }
    tensor(&[n, t, d_out], out)
}

/// Two-pass cross-entropy: probabilities first, then mean negative log.
fn naive_cross_entropy(z: &Tensor, labels: &[usize]) -> f64 {
    let c = z.shape()[1];
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &z.data()[r * c..(r + 1) * c];
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
        total -= ((row[y] - m).exp() / denom).ln();
    }
    total / labels.len() as f64
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #[test]
    fn matmul_matches_naive(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in values(72)) {
        let a = tensor(&[m, k], seed.iter().cycle().take(m * k).copied().collect());
        let b = tensor(&[k, n], seed.iter().rev().cycle().take(k * n).copied().collect());
        let got = matmul(&a, &b).unwrap();
        prop_assert!(got.max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn temporal_conv_matches_triple_sum(
        n in 1usize..3, t in 1usize..7, d in 1usize..4, d_out in 1usize..4,
        half in 0usize..3, seed in values(64),
    ) {
        let w = 2 * half + 1;
        let x = tensor(&[n, t, d], seed.iter().cycle().take(n * t * d).copied().collect());
        let k = tensor(&[w, d, d_out], seed.iter().rev().cycle().take(w * d * d_out).copied().collect());
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let kv = tape.constant(k.clone());
        let y = tape.temporal_conv(xv, kv).unwrap();
        prop_assert!(tape.value(y).max_abs_diff(&naive_temporal_conv(&x, &k)) < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_two_pass(z in values(40), labels in prop::collection::vec(0usize..8, 5)) {
        let zt = tensor(&[5, 8], z.iter().map(|v| v * 5.0).collect());
        let mut tape = Tape::new();
        let zv = tape.constant(zt.clone());
        let loss = tape.softmax_cross_entropy(zv, Arc::new(labels.clone())).unwrap();
        let got = tape.value(loss).item();
        prop_assert!(got >= 0.0);
        prop_assert!((got - naive_cross_entropy(&zt, &labels)).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one(z in values(36)) {
        let p = softmax(&tensor(&[4, 9], z.iter().map(|v| v * 30.0).collect()));
        for r in 0..4 {
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_is_deterministic(z in values(24)) {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.constant(tensor(&[2, 4, 3], z.clone()));
            let k = tape.constant(tensor(&[3, 3, 2], z[..18].to_vec()));
            let y = tape.temporal_conv(x, k).unwrap();
            let r = tape.relu(y);
            tape.value(r).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn outputs_are_finite_on_finite_inputs() {
    let mut tape = Tape::new();
    let x = tape.constant(tensor(&[1, 3, 2], vec![1e150, -1e150, 3.0, 0.0, -2.0, 1.0]));
    let loss = tape
        .softmax_cross_entropy(x, Arc::new(vec![0, 1, 0]))
        .unwrap();
    assert!(tape.value(loss).is_finite());
}
