//! Building blocks, one instance at a time.
//!
//! Shapes follow the row convention: a hidden state is `1 x d`, a stack of
//! `n` states is `n x d`, and weight matrices multiply from the right.

use crate::error::{Error, Result};
use crate::model::Activation;
use crate::tensor::{Tape, Tensor, Var};

/// Tape handles for one GRU's weights.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

/// `act(x W + b)`.
#[derive(Debug, Clone, Copy)]
pub struct DenseWeights {
    pub weight: Var,
    pub bias: Var,
}

/// `b` repeated over `rows` rows.
pub(crate) fn row_bias(tape: &mut Tape<'_>, bias: Var, rows: usize) -> Result<Var> {
    if rows == 1 {
        return Ok(bias);
    }
    let ones = tape.constant(Tensor::full(&[rows, 1], 1.0))?;
    tape.matmul(ones, bias)
}

pub(crate) fn zeros(tape: &mut Tape<'_>, rows: usize, cols: usize) -> Result<Var> {
    tape.constant(Tensor::zeros(&[rows, cols]))
}

fn gate(tape: &mut Tape<'_>, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var> {
    let rows = tape.value(x).dims2()?.0;
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let pre = tape.add(xw, hu)?;
    let b = row_bias(tape, b, rows)?;
    tape.add(pre, b)
}

/// One GRU step for each row of `x` and `h_prev`:
///
/// ```text
/// z  = sigmoid(x W_z + h U_z + b_z)
/// r  = sigmoid(x W_r + h U_r + b_r)
/// h~ = tanh(x W_h + (r * h) U_h + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
pub fn gru_cell(tape: &mut Tape<'_>, x: Var, h_prev: Var, w: &GruWeights) -> Result<Var> {
    let (xs, hs) = (tape.value(x).dims2()?, tape.value(h_prev).dims2()?);
    if xs.0 != hs.0 {
        return Err(Error::Dimension {
            op: "gru_cell",
            lhs: tape.value(x).shape().to_vec(),
            rhs: tape.value(h_prev).shape().to_vec(),
        });
    }
    let z = gate(tape, x, h_prev, w.w_z, w.u_z, w.b_z)?;
    let z = tape.sigmoid(z)?;
    let r = gate(tape, x, h_prev, w.w_r, w.u_r, w.b_r)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h_prev)?;
    let cand = gate(tape, x, rh, w.w_h, w.u_h, w.b_h)?;
    let cand = tape.tanh(cand)?;
    let one = tape.constant(Tensor::scalar(1.0))?;
    let keep = tape.sub(one, z)?;
    let kept = tape.mul(keep, h_prev)?;
    let new = tape.mul(z, cand)?;
    tape.add(kept, new)
}

/// Hidden state after every item, starting from the zero state.
pub fn run_gru(tape: &mut Tape<'_>, items: &[u32], item_emb: Var, w: &GruWeights) -> Result<Vec<Var>> {
    if items.is_empty() {
        return Err(Error::Usage("cannot encode an empty item sequence".into()));
    }
    let d = tape.value(item_emb).dims2()?.1;
    let mut h = zeros(tape, 1, d)?;
    let mut states = Vec::with_capacity(items.len());
    for &item in items {
        let x = tape.gather(item_emb, &[item as usize])?;
        h = gru_cell(tape, x, h, w)?;
        states.push(h);
    }
    Ok(states)
}

/// Current preference: the GRU state after the last context item.
pub fn encode_local(tape: &mut Tape<'_>, context: &[u32], item_emb: Var, w: &GruWeights) -> Result<Var> {
    Ok(*run_gru(tape, context, item_emb, w)?.last().expect("non-empty"))
}

/// Similarity of a candidate session to the current preference `h_c`:
/// the maximum over candidate positions of `h_i . h_c`. Returns the score
/// and the per-position products.
pub fn ssrn_similarity(
    tape: &mut Tape<'_>,
    candidate: &[u32],
    h_c: Var,
    item_emb: Var,
    w: &GruWeights,
) -> Result<(Var, Vec<Var>)> {
    let states = run_gru(tape, candidate, item_emb, w)?;
    let lambdas = states
        .iter()
        .map(|&h| tape.dot(h, h_c))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat_rows(&lambdas)?;
    let score = tape.max(stacked)?;
    Ok((score, lambdas))
}

/// Below this magnitude the attention normalizer is treated as zero.
pub const NORMALIZER_EPS: f64 = 1e-8;

/// Owner-weighted pooling of a candidate session's item embeddings.
///
/// `alpha_i = (x_i . theta) / eta` with `eta = sum_j x_j . theta`, and the
/// result is `sum_i alpha_i x_i`. When `|eta| < NORMALIZER_EPS` the weights
/// fall back to `1 / t`.
pub fn encode_session(
    tape: &mut Tape<'_>,
    candidate: &[u32],
    owner: u32,
    item_emb: Var,
    user_emb: Var,
) -> Result<Var> {
    if candidate.is_empty() {
        return Err(Error::Usage("cannot encode an empty session".into()));
    }
    let idx: Vec<usize> = candidate.iter().map(|&i| i as usize).collect();
    let x = tape.gather(item_emb, &idx)?;
    let theta = tape.gather(user_emb, &[owner as usize])?;
    let theta_t = tape.transpose(theta)?;
    let dots = tape.matmul(x, theta_t)?;
    let eta = tape.sum(dots)?;
    let alpha = if tape.value(eta).item()?.abs() < NORMALIZER_EPS {
        let t = candidate.len();
        tape.constant(Tensor::full(&[t, 1], 1.0 / t as f64))?
    } else {
        tape.div(dots, eta)?
    };
    let alpha_t = tape.transpose(alpha)?;
    tape.matmul(alpha_t, x)
}

/// Unweighted mean of a session's item embeddings, `1 x d`.
pub fn mean_embedding(tape: &mut Tape<'_>, items: &[u32], item_emb: Var) -> Result<Var> {
    if items.is_empty() {
        return Err(Error::Usage("cannot average an empty session".into()));
    }
    let idx: Vec<usize> = items.iter().map(|&i| i as usize).collect();
    let x = tape.gather(item_emb, &idx)?;
    let t = items.len();
    let w = tape.constant(Tensor::full(&[1, t], 1.0 / t as f64))?;
    tape.matmul(w, x)
}

pub fn dense(tape: &mut Tape<'_>, x: Var, layer: &DenseWeights, act: Activation) -> Result<Var> {
    let rows = tape.value(x).dims2()?.0;
    let xw = tape.matmul(x, layer.weight)?;
    let b = row_bias(tape, layer.bias, rows)?;
    let pre = tape.add(xw, b)?;
    match act {
        Activation::Tanh => tape.tanh(pre),
        Activation::Identity => Ok(pre),
    }
}

/// `MLP(sum_cs score_cs * w_cs)`, or exactly zero for an empty pool.
pub fn aggregate_prior(
    tape: &mut Tape<'_>,
    candidates: &[(Var, Var)],
    mlp: &DenseWeights,
    act: Activation,
    embed_dim: usize,
) -> Result<Var> {
    let Some(weighted) = weighted_sum(tape, candidates)? else {
        return zeros(tape, 1, embed_dim);
    };
    dense(tape, weighted, mlp, act)
}

/// `sum score * w` in candidate order; `None` for no candidates.
pub fn weighted_sum(tape: &mut Tape<'_>, candidates: &[(Var, Var)]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &(score, w) in candidates {
        let term = tape.mul(score, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc)
}
