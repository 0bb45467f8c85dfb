//! Closed-form behaviour of individual operations.

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn sum_and_square_gradients() {
    let tape = Tape::new();
    let x = tape.param(t(&[3], &[1.0, -2.0, 0.5]));
    let s = tape.sum(x);
    assert_eq!(tape.backward(s).unwrap().data(x).unwrap(), &[1.0, 1.0, 1.0]);

    let tape = Tape::new();
    let x = tape.param(t(&[3], &[1.0, -2.0, 0.5]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    assert_eq!(tape.backward(s).unwrap().data(x).unwrap(), &[2.0, -4.0, 1.0]);
}

#[test]
fn disconnected_parameter_gets_zero_gradient() {
    let tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let unused = tape.param(t(&[2], &[3.0, 4.0]));
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.data(unused).unwrap(), &[0.0, 0.0]);
    assert!(tape.backward(x).is_err());
}

#[test]
fn layer_norm_closed_forms() {
    let tape = Tape::new();
    let ones = tape.constant(Tensor::full(&[4], 1.0));
    let zeros = tape.constant(Tensor::zeros(&[4]));
    let x = tape.constant(t(&[1, 4], &[3.0, 3.0, 3.0, 3.0]));
    let p = LayerNormParams { gamma: ones, beta: zeros };
    let y = layer_norm(&tape, x, &p).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let ones2 = tape.constant(Tensor::full(&[2], 1.0));
    let zeros2 = tape.constant(Tensor::zeros(&[2]));
    let x = tape.constant(t(&[1, 2], &[-1.0, 1.0]));
    let y = tape.layer_norm(x, ones2, zeros2, LN_EPS).unwrap();
    let v = tape.to_tensor(y);
    assert!((v.data()[0] + 1.0).abs() < 1e-4 && (v.data()[1] - 1.0).abs() < 1e-4);

    let beta = tape.constant(t(&[2], &[0.25, -0.75]));
    let x = tape.constant(t(&[1, 2], &[5.0, -9.0]));
    let y = tape.layer_norm(x, zeros2, beta, LN_EPS).unwrap();
    assert_eq!(tape.value(y).data(), &[0.25, -0.75]);
}

#[test]
fn softmax_closed_forms() {
    let tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[1, 3]));
    let p = tape.softmax(z);
    assert!(tape.value(p).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

    let a = tape.constant(t(&[1, 3], &[0.0, 2f64.ln(), 0.0]));
    let b = tape.constant(t(&[1, 3], &[10.0, 10.0 + 2f64.ln(), 10.0]));
    let (pa, pb) = (tape.softmax(a), tape.softmax(b));
    let (va, vb) = (tape.to_tensor(pa), tape.to_tensor(pb));
    for (x, want) in va.data().iter().zip([0.25, 0.5, 0.25]) {
        assert!((x - want).abs() < 1e-15);
    }
    for (x, y) in va.data().iter().zip(vb.data()) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn cross_entropy_closed_forms() {
    let tape = Tape::new();
    let onehot = tape.constant(t(&[3], &[0.0, 1.0, 0.0]));
    let l = cross_entropy(&tape, onehot, 1).unwrap();
    assert_eq!(tape.scalar(l), 0.0);

    let uniform = tape.constant(Tensor::full(&[3], 1.0 / 3.0));
    let l = cross_entropy(&tape, uniform, 0).unwrap();
    assert!((tape.scalar(l) - 3f64.ln()).abs() < 1e-12);

    let p = tape.constant(t(&[3], &[0.5, 0.25, 0.25]));
    let l = cross_entropy(&tape, p, 1).unwrap();
    assert!((tape.scalar(l) - 4f64.ln()).abs() < 1e-12);

    assert_eq!(tape.clamped_losses(), 0);
    let l = cross_entropy(&tape, onehot, 2).unwrap();
    assert!((tape.scalar(l) + PROB_FLOOR.ln()).abs() < 1e-9);
    assert_eq!(tape.clamped_losses(), 1);
    assert!(cross_entropy(&tape, onehot, 3).is_err());
}

#[test]
fn delta_kernel_is_identity() {
    let img = Tensor::from_fn(&[4, 5, 2], |i| (i as f64 * 0.37).sin());
    let mut w = Tensor::zeros(&[3, 3, 2, 2]);
    // Center tap, channel c -> c.
    for c in 0..2 {
        w.data_mut()[((3 + 1) * 2 + c) * 2 + c] = 1.0;
    }
    let tape = Tape::new();
    let x = tape.constant(img.clone());
    let w = tape.constant(w);
    let b = tape.constant(Tensor::zeros(&[2]));
    let y = tape.conv2d(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), img.data());

    let bad = tape.constant(Tensor::zeros(&[3, 3, 3, 2]));
    assert!(matches!(tape.conv2d(x, bad, b), Err(Error::Shape(_))));
}

#[test]
fn pooling_closed_forms() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::full(&[5, 4, 3], 0.7));
    let y = tape.max_pool2(x).unwrap();
    assert_eq!(tape.shape(y), vec![3, 2, 3]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.7));

    let mut hot = Tensor::zeros(&[4, 4, 2]);
    hot.data_mut()[(2 * 4 + 1) * 2 + 1] = 1.0;
    let x = tape.constant(hot);
    let g = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.value(g).data(), &[0.0, 1.0 / 16.0]);
}

#[test]
fn attention_rows_are_distributions() {
    let q = Tensor::from_fn(&[6, 8], |i| (i as f64 * 0.3).sin());
    let k = Tensor::from_fn(&[6, 8], |i| (i as f64 * 0.7).cos());
    let v = Tensor::from_fn(&[6, 8], |i| (i as f64 * 0.1).sin());
    for w in attention_weights(&q, &k, &v, 4).unwrap() {
        for r in 0..6 {
            let s: f64 = w.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(w.row(r).iter().all(|&p| p > 0.0));
        }
    }
    let single = Tensor::from_fn(&[1, 8], |i| i as f64);
    let w = attention_weights(&single, &single, &single, 4).unwrap();
    assert!(w.iter().all(|w| w.data() == [1.0]));
    assert!(attention_weights(&q, &k, &v, 3).is_err());
}

#[test]
fn attention_rejects_non_finite_logits() {
    let tape = Tape::new();
    let q = tape.constant(Tensor::full(&[2, 4], f64::MAX));
    let r = tape.attention(q, q, q, 2);
    assert!(matches!(r, Err(Error::NonFinite(_))));
}

#[test]
fn attention_is_permutation_equivariant_bitwise() {
    let x = Tensor::from_fn(&[7, 8], |i| ((i * 37 % 11) as f64 * 0.41).sin());
    let perm = [0usize, 4, 2, 6, 1, 5, 3];
    let mut px = Vec::new();
    for &p in &perm {
        px.extend_from_slice(x.row(p));
    }
    let px = Tensor::new(&[7, 8], px).unwrap();
    let run = |input: &Tensor| {
        let tape = Tape::new();
        let v = tape.constant(input.clone());
        let y = tape.attention(v, v, v, 2).unwrap();
        tape.to_tensor(y)
    };
    let (a, b) = (run(&x), run(&px));
    for (i, &p) in perm.iter().enumerate() {
        let ra: Vec<u64> = a.row(p).iter().map(|v| v.to_bits()).collect();
        let rb: Vec<u64> = b.row(i).iter().map(|v| v.to_bits()).collect();
        assert_eq!(ra, rb);
    }
}
