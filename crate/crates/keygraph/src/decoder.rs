//! Pointer decoder with hard coverage counts and context modification.
//!
//! Each phrase restarts the GRU stack from a context state built out of
//! the document vector and the mean representation of the phrases
//! already emitted. Attention scores over the N nodes plus the end
//! token read v·tanh(W_h·h + W_x·x_j + w_c·c_j + b), where c_j counts
//! how often node j appeared in earlier phrases. The end token carries
//! its own learned representation and always has coverage zero.

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tape::{Tape, Val};
use crate::tensor::{Scalar, Tensor};

/// Integer per-node emission counts; the end token is not tracked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coverage {
    counts: Vec<u32>,
}

impl Coverage {
    pub fn new(node_count: usize) -> Self {
        Coverage {
            counts: vec![0; node_count],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Adds one count per occurrence in the emitted phrase.
    pub fn update(&mut self, phrase: &[usize]) -> Result<()> {
        for &node in phrase {
            if node >= self.counts.len() {
                return Err(Error::IndexOutOfRange {
                    index: node,
                    len: self.counts.len(),
                });
            }
        }
        for &node in phrase {
            self.counts[node] += 1;
        }
        Ok(())
    }
}

/// Decoder parameters loaded onto one tape.
pub struct GruCellVals {
    pub w_z: Val,
    pub u_z: Val,
    pub b_z: Val,
    pub w_r: Val,
    pub u_r: Val,
    pub b_r: Val,
    pub w_h: Val,
    pub u_h: Val,
    pub b_h: Val,
}

pub struct DecoderVals {
    pub gru: Vec<GruCellVals>,
    pub att_w_h: Val,
    pub att_w_x: Val,
    pub att_v: Val,
    pub att_w_c: Val,
    pub att_b: Val,
    pub ctx_w_y: Val,
    pub ctx_b_y: Val,
    pub ctx_w_s: Val,
    pub ctx_b_s: Val,
    pub x_end: Val,
}

pub fn load_decoder<T: Scalar>(tape: &Tape<T>, state: &ModelState<T>) -> DecoderVals {
    let p = |id| tape.param(state.params.get(id));
    let d = &state.decoder;
    DecoderVals {
        gru: d
            .gru
            .iter()
            .map(|c| GruCellVals {
                w_z: p(c.w_z),
                u_z: p(c.u_z),
                b_z: p(c.b_z),
                w_r: p(c.w_r),
                u_r: p(c.u_r),
                b_r: p(c.b_r),
                w_h: p(c.w_h),
                u_h: p(c.u_h),
                b_h: p(c.b_h),
            })
            .collect(),
        att_w_h: p(d.att_w_h),
        att_w_x: p(d.att_w_x),
        att_v: p(d.att_v),
        att_w_c: p(d.att_w_c),
        att_b: p(d.att_b),
        ctx_w_y: p(d.ctx_w_y),
        ctx_b_y: p(d.ctx_b_y),
        ctx_w_s: p(d.ctx_w_s),
        ctx_b_s: p(d.ctx_b_s),
        x_end: p(d.x_end),
    }
}

/// Node representations stacked with the end-token representation:
/// row N is the end token.
pub fn candidate_matrix<T: Scalar>(
    tape: &Tape<T>,
    dv: &DecoderVals,
    node_reprs: Val,
) -> Result<Val> {
    tape.concat_rows(node_reprs, dv.x_end)
}

/// Standard GRU cell: z and r gates, candidate state, convex blend.
pub fn gru_cell<T: Scalar>(
    tape: &Tape<T>,
    cell: &GruCellVals,
    x: Val,
    h: Val,
) -> Result<Val> {
    let z = tape.sigmoid(tape.add(
        tape.add(tape.matmul(x, cell.w_z)?, tape.matmul(h, cell.u_z)?)?,
        cell.b_z,
    )?);
    let r = tape.sigmoid(tape.add(
        tape.add(tape.matmul(x, cell.w_r)?, tape.matmul(h, cell.u_r)?)?,
        cell.b_r,
    )?);
    let rh = tape.mul(r, h)?;
    let candidate = tape.tanh(tape.add(
        tape.add(tape.matmul(x, cell.w_h)?, tape.matmul(rh, cell.u_h)?)?,
        cell.b_h,
    )?);
    let keep = tape.affine(z, -T::one(), T::one()); // 1 - z
    tape.add(tape.mul(keep, h)?, tape.mul(z, candidate)?)
}

/// Phrase-initial input y_0 and hidden state h_0 from the document
/// vector and the history mean; h_0 is replicated across GRU layers.
pub fn init_phrase_state<T: Scalar>(
    tape: &Tape<T>,
    dv: &DecoderVals,
    doc_vector: Val,
    history_mean: Val,
) -> Result<(Val, Vec<Val>)> {
    let ctx = tape.concat_cols(doc_vector, history_mean)?;
    let y0 = tape.add(tape.matmul(ctx, dv.ctx_w_y)?, dv.ctx_b_y)?;
    let h0 = tape.tanh(tape.add(tape.matmul(ctx, dv.ctx_w_s)?, dv.ctx_b_s)?);
    Ok((y0, vec![h0; dv.gru.len()]))
}

/// Per-phrase attention keys: W_x·x_j + w_c·c_j + b for every candidate
/// (coverage term zero for the end token). Constant within a phrase, so
/// callers compute it once.
pub fn attention_keys<T: Scalar>(
    tape: &Tape<T>,
    dv: &DecoderVals,
    candidates: Val,
    coverage: &Coverage,
    coverage_enabled: bool,
) -> Result<Val> {
    let base = tape.matmul(candidates, dv.att_w_x)?;
    let with_cov = if coverage_enabled {
        let n_plus_1 = tape.shape(candidates).0;
        debug_assert_eq!(coverage.len() + 1, n_plus_1);
        let mut col = Tensor::zeros(n_plus_1, 1);
        for (j, &c) in coverage.counts().iter().enumerate() {
            col.set(j, 0, T::from_f64(c as f64));
        }
        let cov_col = tape.constant(col);
        tape.add(base, tape.matmul(cov_col, dv.att_w_c)?)?
    } else {
        base
    };
    tape.add_row(with_cov, dv.att_b)
}

/// e_j = v·tanh(keys_j + W_h·h) for every candidate; (N+1)×1.
pub fn attention_logits<T: Scalar>(
    tape: &Tape<T>,
    dv: &DecoderVals,
    keys: Val,
    hidden_top: Val,
) -> Result<Val> {
    let hw = tape.matmul(hidden_top, dv.att_w_h)?;
    tape.matmul(tape.tanh(tape.add_row(keys, hw)?), dv.att_v)
}

/// Masked softmax over the candidate axis. `mask_end` removes the end
/// token (used at t=1 so phrases are never empty).
pub fn pointer_distribution<T: Scalar>(
    tape: &Tape<T>,
    logits: Val,
    mask_end: bool,
) -> Result<Val> {
    let n_plus_1 = tape.shape(logits).0;
    let mut mask = vec![true; n_plus_1];
    if mask_end {
        mask[n_plus_1 - 1] = false;
    }
    tape.masked_softmax(logits, &mask)
}

/// Advances the GRU stack one step and returns the pointer distribution
/// over N nodes plus the end token, with the new hidden states.
pub fn decode_step<T: Scalar>(
    tape: &Tape<T>,
    dv: &DecoderVals,
    keys: Val,
    input: Val,
    hidden: &[Val],
    mask_end: bool,
) -> Result<(Val, Vec<Val>)> {
    let mut x = input;
    let mut new_hidden = Vec::with_capacity(hidden.len());
    for (cell, &h) in dv.gru.iter().zip(hidden) {
        let h_next = gru_cell(tape, cell, x, h)?;
        new_hidden.push(h_next);
        x = h_next;
    }
    let logits = attention_logits(tape, dv, keys, x)?;
    let probs = pointer_distribution(tape, logits, mask_end)?;
    Ok((probs, new_hidden))
}

/// Mean of the node representations of a phrase's words.
pub fn phrase_representation<T: Scalar>(
    tape: &Tape<T>,
    node_reprs: Val,
    phrase: &[usize],
) -> Result<Val> {
    if phrase.is_empty() {
        return Err(Error::EmptyPhrase);
    }
    Ok(tape.mean_rows(tape.gather_rows(node_reprs, phrase)?))
}

/// Mean of previous phrase representations; the zero vector before the
/// first phrase.
pub fn history_mean<T: Scalar>(tape: &Tape<T>, reprs: &[Val], d_h: usize) -> Result<Val> {
    match reprs.split_first() {
        None => Ok(tape.constant(Tensor::zeros(1, d_h))),
        Some((&first, rest)) => {
            let mut stacked = first;
            for &r in rest {
                stacked = tape.concat_rows(stacked, r)?;
            }
            Ok(tape.mean_rows(stacked))
        }
    }
}
