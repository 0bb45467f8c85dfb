//! Finite-difference checks of every tape operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference step.
pub const H: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Reduces an arbitrary output to a scalar with fixed random weights so
/// every output element contributes to the checked gradient.
fn weighted_sum(tape: &Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(out);
    let w = tape.constant(random(&shape, &mut rng));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

/// Compares analytic and central-difference gradients of `f` for every
/// input coordinate; returns the worst relative error.
pub fn check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars).unwrap();
        let l = weighted_sum(&tape, out, 99).unwrap();
        tape.scalar(l)
    };
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars).unwrap();
    let loss = weighted_sum(&tape, out, 99).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.data(vars[i]).unwrap().to_vec();
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worst relative error of every tape operation on small random inputs.
pub fn operation_report() -> Vec<(&'static str, f64)> {
    let mut r = rng(1);
    let a = random(&[3, 4], &mut r);
    let b = random(&[3, 4], &mut r);
    let mut out = vec![
        ("add", check(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]))),
        ("mul", check(&[a.clone(), b], |t, v| t.mul(v[0], v[1]))),
        ("scale", check(&[a.clone()], |t, v| Ok(t.scale(v[0], -2.5)))),
        ("sum", check(&[a.clone()], |t, v| Ok(t.sum(v[0])))),
        ("gelu", check(&[a.clone()], |t, v| Ok(t.gelu(v[0])))),
        ("relu", check(&[a], |t, v| Ok(t.relu(v[0])))),
    ];

    let mut r = rng(2);
    let a = random(&[3, 5], &mut r);
    let b = random(&[5, 2], &mut r);
    let bias = random(&[2], &mut r);
    let c = random(&[2, 5], &mut r);
    out.extend([
        ("linear", check(&[a.clone(), b, bias], |t, v| t.linear(v[0], v[1], v[2]))),
        ("reshape", check(&[a.clone()], |t, v| t.reshape(v[0], &[15]))),
        ("row", check(&[a.clone()], |t, v| t.row(v[0], 1))),
        ("concat_rows", check(&[a, c], |t, v| t.concat_rows(v[0], v[1]))),
    ]);

    let mut r = rng(3);
    let x = random(&[4, 6], &mut r);
    let g = random(&[6], &mut r);
    let b = random(&[6], &mut r);
    out.extend([
        ("layer_norm", check(&[x.clone(), g, b], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5))),
        ("softmax", check(&[x], |t, v| Ok(t.softmax(v[0])))),
    ]);

    let mut r = rng(4);
    let q = random(&[5, 8], &mut r);
    let k = random(&[5, 8], &mut r);
    let v = random(&[5, 8], &mut r);
    out.extend([
        ("attention/2 heads", check(&[q.clone(), k.clone(), v.clone()], |t, x| t.attention(x[0], x[1], x[2], 2))),
        ("attention/1 head", check(&[q, k, v], |t, x| t.attention(x[0], x[1], x[2], 1))),
    ]);

    let mut r = rng(5);
    let x = random(&[5, 4, 2], &mut r);
    let w = random(&[3, 3, 2, 3], &mut r);
    let b = random(&[3], &mut r);
    out.extend([
        ("conv2d", check(&[x.clone(), w, b], |t, v| t.conv2d(v[0], v[1], v[2]))),
        ("max_pool2", check(&[x.clone()], |t, v| t.max_pool2(v[0]))),
        ("global_avg_pool", check(&[x], |t, v| t.global_avg_pool(v[0]))),
    ]);

    let mut r = rng(6);
    let logits = random(&[1, 3], &mut r);
    out.push((
        "softmax+nll",
        check(&[logits], |t, v| {
            let p = t.softmax(v[0]);
            t.nll(p, 2)
        }),
    ));
    out
}
