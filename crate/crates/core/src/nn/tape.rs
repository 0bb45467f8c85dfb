//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its value and enough saved state
//! to run its vector-Jacobian product. [`Tape::backward`] walks the nodes in
//! reverse and returns gradients for every leaf created with
//! `requires_grad = true`.

use std::cell::{Cell, Ref, RefCell};

use super::linalg::{gemm, matmul, matmul_nt, matmul_tn, Layout};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probability floor applied before taking logarithms in [`Tape::nll`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Conv {
    height: usize,
    width: usize,
    c_in: usize,
    c_out: usize,
    cols: Vec<f64>,
}

struct AttentionState {
    heads: usize,
    order: Vec<Vec<usize>>,
    probs: Vec<Vec<f64>>,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Gelu(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        state: AttentionState,
    },
    ConcatRows(Var, Var),
    Row(Var, usize),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        conv: Box<Conv>,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Nll {
        probs: Var,
        label: usize,
        clamped: bool,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    clamped: Cell<usize>,
}

/// Gradients of a scalar with respect to the tape's leaves.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` if it does not require gradients.
    /// Leaves unreachable from the loss get an all-zero gradient.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        let shape = &self.shapes[var.0];
        self.grads[var.0].as_ref().map(|g| Tensor::new(shape, g.clone()).expect("grad shape"))
    }

    pub fn data(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.row_count(), t.last_dim())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax summing left to right within each row.
fn softmax_rows(x: &[f64], cols: usize, out: &mut [f64]) {
    for (src, dst) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
}

/// Canonical order of key rows for one head: lexicographic on the key
/// slice, then the value slice. Depends only on row contents, so summing
/// in this order makes every query's output independent of token order.
fn canonical_key_order(k: &[f64], v: &[f64], tokens: usize, d: usize, lo: usize, hi: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tokens).collect();
    order.sort_by(|&a, &b| {
        let ka = &k[a * d + lo..a * d + hi];
        let kb = &k[b * d + lo..b * d + hi];
        let va = &v[a * d + lo..a * d + hi];
        let vb = &v[b * d + lo..b * d + hi];
        ka.iter()
            .zip(kb)
            .chain(va.iter().zip(vb))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

fn gather_rows(src: &[f64], order: &[usize], d: usize, lo: usize, hi: usize) -> Vec<f64> {
    let w = hi - lo;
    let mut out = Vec::with_capacity(order.len() * w);
    for &j in order {
        out.extend_from_slice(&src[j * d + lo..j * d + hi]);
    }
    debug_assert_eq!(out.len(), order.len() * w);
    out
}

/// Multi-head scaled dot-product attention on `[tokens, d]` inputs.
/// Returns the concatenated head outputs and the saved softmax state.
fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    tokens: usize,
    d: usize,
    heads: usize,
) -> Result<(Vec<f64>, AttentionState)> {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; tokens * d];
    let mut state = AttentionState {
        heads,
        order: Vec::with_capacity(heads),
        probs: Vec::with_capacity(heads),
    };
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let order = canonical_key_order(k, v, tokens, d, lo, hi);
        let ks = gather_rows(k, &order, d, lo, hi);
        let vs = gather_rows(v, &order, d, lo, hi);
        let mut logits = vec![0.0; tokens * tokens];
        gemm(
            tokens,
            dh,
            tokens,
            scale,
            q,
            Layout::rows(d).at(lo),
            &ks,
            Layout::transposed(dh),
            0.0,
            &mut logits,
            Layout::rows(tokens),
        );
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("attention logits"));
        }
        let mut probs = vec![0.0; tokens * tokens];
        softmax_rows(&logits, tokens, &mut probs);
        gemm(
            tokens,
            tokens,
            dh,
            1.0,
            &probs,
            Layout::rows(tokens),
            &vs,
            Layout::rows(dh),
            0.0,
            &mut out,
            Layout::rows(d).at(lo),
        );
        state.order.push(order);
        state.probs.push(probs);
    }
    Ok((out, state))
}

/// Per-head attention weights (rows = queries, columns = keys in their
/// original order) for inspection and tests.
pub fn attention_weights(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Vec<Tensor>> {
    let (tokens, d) = as_matrix(q);
    check_attention_shapes(q, k, v, heads)?;
    let (_, state) = attention_forward(q.data(), k.data(), v.data(), tokens, d, heads)?;
    Ok(state
        .order
        .iter()
        .zip(&state.probs)
        .map(|(order, probs)| {
            let mut w = vec![0.0; tokens * tokens];
            for i in 0..tokens {
                for (jj, &j) in order.iter().enumerate() {
                    w[i * tokens + j] = probs[i * tokens + jj];
                }
            }
            Tensor::new(&[tokens, tokens], w).expect("square weights")
        })
        .collect())
}

fn check_attention_shapes(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<()> {
    if q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() {
        return shape_err(format!(
            "attention expects equal [tokens, d] inputs, got {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    if heads == 0 || q.shape()[1] % heads != 0 {
        return shape_err(format!("{heads} heads do not divide width {}", q.shape()[1]));
    }
    Ok(())
}

/// Lays out 3×3 zero-padded neighbourhoods of an H×W×C map as rows.
fn im2col(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let k = 9 * c;
    let mut cols = vec![0.0; h * w * k];
    for y in 0..h {
        for xx in 0..w {
            let row = &mut cols[(y * w + xx) * k..(y * w + xx + 1) * k];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = ((sy as usize) * w + sx as usize) * c;
                    let dst = (ky * 3 + kx) * c;
                    row[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], h: usize, w: usize, c: usize, dx: &mut [f64]) {
    let k = 9 * c;
    for y in 0..h {
        for xx in 0..w {
            let row = &cols[(y * w + xx) * k..(y * w + xx + 1) * k];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = ((sy as usize) * w + sx as usize) * c;
                    let src = (ky * 3 + kx) * c;
                    for ch in 0..c {
                        dx[dst + ch] += row[src + ch];
                    }
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// How many [`Tape::nll`] evaluations hit the probability floor.
    pub fn clamped_losses(&self) -> usize {
        self.clamped.get()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> Ref<'_, Tensor> {
        self.val(var)
    }

    fn val(&self, var: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[var.0].value)
    }

    pub fn shape(&self, var: Var) -> Vec<usize> {
        self.val(var).shape().to_vec()
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.val(var).data()[0]
    }

    pub fn to_tensor(&self, var: Var) -> Tensor {
        self.val(var).clone()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(format!("{what}: {sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = {
            let (x, y) = (self.val(a), self.val(b));
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
            Tensor::new(x.shape(), data)?
        };
        Ok(self.push(value, Op::Add(a, b), self.needs(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = {
            let (x, y) = (self.val(a), self.val(b));
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
            Tensor::new(x.shape(), data)?
        };
        Ok(self.push(value, Op::Mul(a, b), self.needs(&[a, b])))
    }

    pub fn scale(&self, a: Var, factor: f64) -> Var {
        let value = {
            let x = self.val(a);
            Tensor::new(x.shape(), x.data().iter().map(|p| p * factor).collect()).expect("same shape")
        };
        self.push(value, Op::Scale(a, factor), self.needs(&[a]))
    }

    pub fn sum(&self, a: Var) -> Var {
        let total = self.val(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), self.needs(&[a]))
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (x, y) = (self.val(a), self.val(b));
            if x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[0] {
                return shape_err(format!("matmul {:?} x {:?}", x.shape(), y.shape()));
            }
            let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
            let mut out = vec![0.0; m * n];
            matmul(m, k, n, x.data(), y.data(), &mut out, false);
            Tensor::new(&[m, n], out)?
        };
        Ok(self.push(value, Op::MatMul(a, b), self.needs(&[a, b])))
    }

    /// Adds a `[n]` bias to every row of `a` (last axis `n`).
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        let value = {
            let (x, b) = (self.val(a), self.val(bias));
            if b.rank() != 1 || x.last_dim() != b.len() {
                return shape_err(format!("bias {:?} for {:?}", b.shape(), x.shape()));
            }
            let n = b.len();
            let mut data = x.data().to_vec();
            for row in data.chunks_exact_mut(n) {
                for (r, bb) in row.iter_mut().zip(b.data()) {
                    *r += bb;
                }
            }
            Tensor::new(x.shape(), data)?
        };
        Ok(self.push(value, Op::AddBias(a, bias), self.needs(&[a, bias])))
    }

    /// `x · w + b`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn gelu(&self, a: Var) -> Var {
        let value = {
            let x = self.val(a);
            Tensor::new(x.shape(), x.data().iter().map(|&v| gelu(v)).collect()).expect("same shape")
        };
        self.push(value, Op::Gelu(a), self.needs(&[a]))
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = {
            let x = self.val(a);
            Tensor::new(x.shape(), x.data().iter().map(|&v| v.max(0.0)).collect()).expect("same shape")
        };
        self.push(value, Op::Relu(a), self.needs(&[a]))
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (value, xhat, rstd) = {
            let (xv, g, b) = (self.val(x), self.val(gamma), self.val(beta));
            let n = xv.last_dim();
            if g.shape() != [n] || b.shape() != [n] {
                return shape_err(format!(
                    "layer norm params {:?}/{:?} for {:?}",
                    g.shape(),
                    b.shape(),
                    xv.shape()
                ));
            }
            let rows = xv.row_count();
            let mut out = vec![0.0; xv.len()];
            let mut xhat = vec![0.0; xv.len()];
            let mut rstd = vec![0.0; rows];
            for r in 0..rows {
                let row = xv.row(r);
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let s = 1.0 / (var + eps).sqrt();
                rstd[r] = s;
                for j in 0..n {
                    let h = (row[j] - mean) * s;
                    xhat[r * n + j] = h;
                    out[r * n + j] = g.data()[j] * h + b.data()[j];
                }
            }
            (Tensor::new(xv.shape(), out)?, xhat, rstd)
        };
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        Ok(self.push(value, op, self.needs(&[x, gamma, beta])))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, a: Var) -> Var {
        let value = {
            let x = self.val(a);
            let mut out = vec![0.0; x.len()];
            softmax_rows(x.data(), x.last_dim(), &mut out);
            Tensor::new(x.shape(), out).expect("same shape")
        };
        self.push(value, Op::Softmax(a), self.needs(&[a]))
    }

    /// Multi-head scaled dot-product self-attention over `[tokens, d]`
    /// query/key/value projections, heads concatenated along the last axis.
    pub fn attention(&self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (value, state) = {
            let (qv, kv, vv) = (self.val(q), self.val(k), self.val(v));
            check_attention_shapes(&qv, &kv, &vv, heads)?;
            let (tokens, d) = as_matrix(&qv);
            let (out, state) = attention_forward(qv.data(), kv.data(), vv.data(), tokens, d, heads)?;
            (Tensor::new(&[tokens, d], out)?, state)
        };
        Ok(self.push(value, Op::Attention { q, k, v, state }, self.needs(&[q, k, v])))
    }

    /// Stacks `[m1, n]` on top of `[m2, n]`.
    pub fn concat_rows(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (x, y) = (self.val(a), self.val(b));
            if x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[1] {
                return shape_err(format!("concat {:?} with {:?}", x.shape(), y.shape()));
            }
            let mut data = x.data().to_vec();
            data.extend_from_slice(y.data());
            Tensor::new(&[x.shape()[0] + y.shape()[0], x.shape()[1]], data)?
        };
        Ok(self.push(value, Op::ConcatRows(a, b), self.needs(&[a, b])))
    }

    /// Row `i` of a matrix as `[1, n]`.
    pub fn row(&self, a: Var, i: usize) -> Result<Var> {
        let value = {
            let x = self.val(a);
            if x.rank() != 2 || i >= x.shape()[0] {
                return shape_err(format!("row {i} of {:?}", x.shape()));
            }
            Tensor::new(&[1, x.shape()[1]], x.row(i).to_vec())?
        };
        Ok(self.push(value, Op::Row(a, i), self.needs(&[a])))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.val(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a), self.needs(&[a])))
    }

    /// 3×3, stride 1, zero-padded cross-correlation of `[H, W, Cin]` with
    /// `[3, 3, Cin, Cout]` filters plus a `[Cout]` bias.
    pub fn conv2d(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (value, conv) = {
            let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
            if xv.rank() != 3 || wv.rank() != 4 || wv.shape()[..2] != [3, 3] {
                return shape_err(format!("conv2d {:?} with filters {:?}", xv.shape(), wv.shape()));
            }
            let (h, wd, c_in) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
            let c_out = wv.shape()[3];
            if wv.shape()[2] != c_in {
                return shape_err(format!(
                    "conv2d channel mismatch: input has {c_in}, filters expect {}",
                    wv.shape()[2]
                ));
            }
            if bv.shape() != [c_out] {
                return shape_err(format!("conv2d bias {:?} for {c_out} filters", bv.shape()));
            }
            let cols = im2col(xv.data(), h, wd, c_in);
            let mut out = vec![0.0; h * wd * c_out];
            for row in out.chunks_exact_mut(c_out) {
                row.copy_from_slice(bv.data());
            }
            matmul(h * wd, 9 * c_in, c_out, &cols, wv.data(), &mut out, true);
            let conv = Conv {
                height: h,
                width: wd,
                c_in,
                c_out,
                cols,
            };
            (Tensor::new(&[h, wd, c_out], out)?, conv)
        };
        let op = Op::Conv2d {
            x,
            w,
            b,
            conv: Box::new(conv),
        };
        Ok(self.push(value, op, self.needs(&[x, w, b])))
    }

    /// 2×2 max pooling, stride 2; odd edges pool over the cells present.
    pub fn max_pool2(&self, x: Var) -> Result<Var> {
        let (value, argmax) = {
            let xv = self.val(x);
            if xv.rank() != 3 {
                return shape_err(format!("max_pool2 expects [H, W, C], got {:?}", xv.shape()));
            }
            let (h, w, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
            let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
            let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
            let mut argmax = vec![0usize; oh * ow * c];
            let data = xv.data();
            for y in 0..h {
                for xx in 0..w {
                    let o = ((y / 2) * ow + xx / 2) * c;
                    let s = (y * w + xx) * c;
                    for ch in 0..c {
                        if data[s + ch] > out[o + ch] {
                            out[o + ch] = data[s + ch];
                            argmax[o + ch] = s + ch;
                        }
                    }
                }
            }
            (Tensor::new(&[oh, ow, c], out)?, argmax)
        };
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, self.needs(&[x])))
    }

    /// Channel-wise spatial mean of `[H, W, C]`, giving `[C]`.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let value = {
            let xv = self.val(x);
            if xv.rank() != 3 {
                return shape_err(format!("global_avg_pool expects [H, W, C], got {:?}", xv.shape()));
            }
            let c = xv.shape()[2];
            let cells = (xv.len() / c) as f64;
            let mut out = vec![0.0; c];
            for px in xv.data().chunks_exact(c) {
                for (o, v) in out.iter_mut().zip(px) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= cells);
            Tensor::new(&[c], out)?
        };
        Ok(self.push(value, Op::GlobalAvgPool(x), self.needs(&[x])))
    }

    /// `−ln(max(probs[label], PROB_FLOOR))`. Hitting the floor is counted
    /// in [`Tape::clamped_losses`].
    pub fn nll(&self, probs: Var, label: usize) -> Result<Var> {
        let (value, clamped) = {
            let p = self.val(probs);
            if label >= p.len() {
                return shape_err(format!("label {label} outside {} classes", p.len()));
            }
            let pl = p.data()[label];
            let clamped = !(pl >= PROB_FLOOR);
            (Tensor::scalar(-pl.max(PROB_FLOOR).ln()), clamped)
        };
        if clamped {
            self.clamped.set(self.clamped.get() + 1);
        }
        let op = Op::Nll {
            probs,
            label,
            clamped,
        };
        Ok(self.push(value, op, self.needs(&[probs])))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return shape_err(format!(
                "backward needs a scalar loss, got {:?}",
                nodes[loss.0].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        acc(v, &mut |s| s.iter_mut().zip(&g).for_each(|(s, g)| *s += g));
                    }
                }
                Op::Mul(a, b) => {
                    let (x, y) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |s| {
                        for j in 0..s.len() {
                            s[j] += g[j] * y[j];
                        }
                    });
                    acc(*b, &mut |s| {
                        for j in 0..s.len() {
                            s[j] += g[j] * x[j];
                        }
                    });
                }
                Op::Scale(a, f) => {
                    acc(*a, &mut |s| s.iter_mut().zip(&g).for_each(|(s, g)| *s += g * f));
                }
                Op::Sum(a) => {
                    acc(*a, &mut |s| s.iter_mut().for_each(|s| *s += g[0]));
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                    acc(*a, &mut |s| matmul_nt(m, n, k, &g, y.data(), s, true));
                    acc(*b, &mut |s| matmul_tn(k, m, n, x.data(), &g, s, true));
                }
                Op::AddBias(a, b) => {
                    acc(*a, &mut |s| s.iter_mut().zip(&g).for_each(|(s, g)| *s += g));
                    acc(*b, &mut |s| {
                        let n = s.len();
                        for row in g.chunks_exact(n) {
                            s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                        }
                    });
                }
                Op::Gelu(a) => {
                    let x = nodes[a.0].value.data();
                    acc(*a, &mut |s| {
                        for j in 0..s.len() {
                            s[j] += g[j] * gelu_grad(x[j]);
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = nodes[a.0].value.data();
                    acc(*a, &mut |s| {
                        for j in 0..s.len() {
                            if x[j] > 0.0 {
                                s[j] += g[j];
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gv = nodes[gamma.0].value.data();
                    let n = gv.len();
                    acc(*x, &mut |s| {
                        for (r, &sd) in rstd.iter().enumerate() {
                            let gr = &g[r * n..(r + 1) * n];
                            let hr = &xhat[r * n..(r + 1) * n];
                            let mut mean_d = 0.0;
                            let mut mean_dh = 0.0;
                            for j in 0..n {
                                let d = gr[j] * gv[j];
                                mean_d += d;
                                mean_dh += d * hr[j];
                            }
                            mean_d /= n as f64;
                            mean_dh /= n as f64;
                            for j in 0..n {
                                let d = gr[j] * gv[j];
                                s[r * n + j] += sd * (d - mean_d - hr[j] * mean_dh);
                            }
                        }
                    });
                    acc(*gamma, &mut |s| {
                        for (gr, hr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                            for j in 0..n {
                                s[j] += gr[j] * hr[j];
                            }
                        }
                    });
                    acc(*beta, &mut |s| {
                        for gr in g.chunks_exact(n) {
                            s.iter_mut().zip(gr).for_each(|(s, g)| *s += g);
                        }
                    });
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let n = node.value.last_dim();
                    acc(*a, &mut |s| {
                        for ((sr, yr), gr) in s.chunks_exact_mut(n).zip(y.chunks_exact(n)).zip(g.chunks_exact(n)) {
                            let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                            for j in 0..n {
                                sr[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
                Op::Attention { q, k, v, state } => {
                    let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
                    let (tokens, d) = as_matrix(qv);
                    let (dq, dk, dv) = attention_backward(&g, qv.data(), kv.data(), vv.data(), tokens, d, state);
                    acc(*q, &mut |s| s.iter_mut().zip(&dq).for_each(|(s, g)| *s += g));
                    acc(*k, &mut |s| s.iter_mut().zip(&dk).for_each(|(s, g)| *s += g));
                    acc(*v, &mut |s| s.iter_mut().zip(&dv).for_each(|(s, g)| *s += g));
                }
                Op::ConcatRows(a, b) => {
                    let split = nodes[a.0].value.len();
                    acc(*a, &mut |s| s.iter_mut().zip(&g[..split]).for_each(|(s, g)| *s += g));
                    acc(*b, &mut |s| s.iter_mut().zip(&g[split..]).for_each(|(s, g)| *s += g));
                }
                Op::Row(a, r) => {
                    let n = g.len();
                    acc(*a, &mut |s| {
                        s[r * n..(r + 1) * n].iter_mut().zip(&g).for_each(|(s, g)| *s += g)
                    });
                }
                Op::Reshape(a) => {
                    acc(*a, &mut |s| s.iter_mut().zip(&g).for_each(|(s, g)| *s += g));
                }
                Op::Conv2d { x, w, b, conv } => {
                    let &Conv {
                        height,
                        width,
                        c_in,
                        c_out,
                        ref cols,
                    } = conv.as_ref();
                    let cells = height * width;
                    let kdim = 9 * c_in;
                    acc(*w, &mut |s| matmul_tn(kdim, cells, c_out, cols, &g, s, true));
                    acc(*b, &mut |s| {
                        for row in g.chunks_exact(c_out) {
                            s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                        }
                    });
                    let wv = nodes[w.0].value.data();
                    acc(*x, &mut |s| {
                        let mut dcols = vec![0.0; cells * kdim];
                        matmul_nt(cells, c_out, kdim, &g, wv, &mut dcols, false);
                        col2im(&dcols, height, width, c_in, s);
                    });
                }
                Op::MaxPool2 { x, argmax } => {
                    acc(*x, &mut |s| {
                        for (&src, gv) in argmax.iter().zip(&g) {
                            s[src] += gv;
                        }
                    });
                }
                Op::GlobalAvgPool(x) => {
                    let c = g.len();
                    let cells = (nodes[x.0].value.len() / c) as f64;
                    acc(*x, &mut |s| {
                        for px in s.chunks_exact_mut(c) {
                            px.iter_mut().zip(&g).for_each(|(s, g)| *s += g / cells);
                        }
                    });
                }
                Op::Nll {
                    probs,
                    label,
                    clamped,
                } => {
                    if !clamped {
                        let p = nodes[probs.0].value.data()[*label];
                        acc(*probs, &mut |s| s[*label] -= g[0] / p);
                    } else {
                        acc(*probs, &mut |_| {});
                    }
                }
            }
        }

        let mut leaf_grads = vec![None; nodes.len()];
        let mut shapes = Vec::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            shapes.push(node.value.shape().to_vec());
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                leaf_grads[i] = Some(grads[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]));
            }
        }
        Ok(Gradients {
            grads: leaf_grads,
            shapes,
        })
    }
}

fn attention_backward(
    g: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    tokens: usize,
    d: usize,
    state: &AttentionState,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let heads = state.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; tokens * d];
    let mut dk = vec![0.0; tokens * d];
    let mut dv = vec![0.0; tokens * d];
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let order = &state.order[h];
        let probs = &state.probs[h];
        let ks = gather_rows(k, order, d, lo, hi);
        let vs = gather_rows(v, order, d, lo, hi);

        // dP = dO·Vsᵀ
        let mut dp = vec![0.0; tokens * tokens];
        gemm(tokens, dh, tokens, 1.0, g, Layout::rows(d).at(lo), &vs, Layout::transposed(dh), 0.0, &mut dp, Layout::rows(tokens));
        // dVs = Pᵀ·dO
        let mut dvs = vec![0.0; tokens * dh];
        gemm(tokens, tokens, dh, 1.0, probs, Layout::transposed(tokens), g, Layout::rows(d).at(lo), 0.0, &mut dvs, Layout::rows(dh));
        // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with the logit scale.
        let mut ds = vec![0.0; tokens * tokens];
        for i in 0..tokens {
            let pr = &probs[i * tokens..(i + 1) * tokens];
            let dpr = &dp[i * tokens..(i + 1) * tokens];
            let dot: f64 = pr.iter().zip(dpr).map(|(p, d)| p * d).sum();
            for j in 0..tokens {
                ds[i * tokens + j] = pr[j] * (dpr[j] - dot) * scale;
            }
        }
        // dQ = dS·Ks, written straight into the head's columns.
        gemm(tokens, tokens, dh, 1.0, &ds, Layout::rows(tokens), &ks, Layout::rows(dh), 1.0, &mut dq, Layout::rows(d).at(lo));
        // dKs = dSᵀ·Q
        let mut dks = vec![0.0; tokens * dh];
        gemm(tokens, tokens, dh, 1.0, &ds, Layout::transposed(tokens), q, Layout::rows(d).at(lo), 0.0, &mut dks, Layout::rows(dh));
        for (jj, &j) in order.iter().enumerate() {
            for c in 0..dh {
                dk[j * d + lo + c] += dks[jj * dh + c];
                dv[j * d + lo + c] += dvs[jj * dh + c];
            }
        }
    }
    (dq, dk, dv)
}
