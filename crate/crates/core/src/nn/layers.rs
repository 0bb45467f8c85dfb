//! Transformer building blocks expressed as tape operations.

use super::tape::{Tape, Var};
use crate::error::Result;

/// Epsilon inside the layer-norm variance square root.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gamma: Var,
    pub beta: Var,
}

/// One pre-norm encoder layer: attention then MLP, each with a residual.
#[derive(Debug, Clone, Copy)]
pub struct EncoderLayer {
    pub ln1: LayerNormParams,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2: LayerNormParams,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub heads: usize,
}

/// Final normalization and the class-logit projection.
#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    pub ln: LayerNormParams,
    pub w: Var,
    pub b: Var,
}

pub fn layer_norm(tape: &Tape, x: Var, p: &LayerNormParams) -> Result<Var> {
    tape.layer_norm(x, p.gamma, p.beta, LN_EPS)
}

/// Embeds `[n, p²C]` patches and prepends the class token:
/// `[v_c; a_1·E; …; a_n·E] + E_p`, giving `[n + 1, d]`.
pub fn linear_embed(
    tape: &Tape,
    patches: Var,
    embed_w: Var,
    embed_b: Var,
    class_token: Var,
    positions: Var,
) -> Result<Var> {
    let tokens = tape.linear(patches, embed_w, embed_b)?;
    let seq = tape.concat_rows(class_token, tokens)?;
    tape.add(seq, positions)
}

/// `x + MSA(LN(x))`.
pub fn msa_block(tape: &Tape, x: Var, layer: &EncoderLayer) -> Result<Var> {
    let h = layer_norm(tape, x, &layer.ln1)?;
    let q = tape.linear(h, layer.wq, layer.bq)?;
    let k = tape.linear(h, layer.wk, layer.bk)?;
    let v = tape.linear(h, layer.wv, layer.bv)?;
    let heads = tape.attention(q, k, v, layer.heads)?;
    let projected = tape.linear(heads, layer.wo, layer.bo)?;
    tape.add(projected, x)
}

/// `x + W2·GELU(W1·LN(x) + b1) + b2`, row by row.
pub fn mlp_block(tape: &Tape, x: Var, layer: &EncoderLayer) -> Result<Var> {
    let h = layer_norm(tape, x, &layer.ln2)?;
    let hidden = tape.linear(h, layer.w1, layer.b1)?;
    let act = tape.gelu(hidden);
    let out = tape.linear(act, layer.w2, layer.b2)?;
    tape.add(out, x)
}

/// Class probabilities from the `[1, d]` class-token state.
pub fn softmax_head(tape: &Tape, class_token: Var, head: &HeadParams) -> Result<Var> {
    let h = layer_norm(tape, class_token, &head.ln)?;
    let logits = tape.linear(h, head.w, head.b)?;
    Ok(tape.softmax(logits))
}

/// `−ln p[label]` with the probability floor applied.
pub fn cross_entropy(tape: &Tape, probs: Var, label: usize) -> Result<Var> {
    tape.nll(probs, label)
}
