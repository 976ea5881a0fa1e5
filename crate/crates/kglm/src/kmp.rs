//! Masked-prediction objective with a position shift.
//!
//! Mask positions are sampled without replacement, never position 0 (BOS) or
//! special tokens, with entity positions upweighted by their importance
//! score. The loss reads the logits for a masked position `i` from the
//! hidden state at `i-1` and averages the negative log-likelihood over the
//! mask set. Masked positions keep their kind and entity link so the
//! attention mask still sees their structural role.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kgstore::ImportanceScores;
use crate::numcore::{Scalar, Tape, ValueId};
use crate::seqbuild::{TokenId, TokenKind, TokenSequence, MASK};

/// A sequence with MASK substitutions and the bookkeeping to score them.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    pub masked_seq: TokenSequence,
    /// Sorted, unique positions in (0, N).
    pub mask_set: Vec<usize>,
    /// Original token ids at the masked positions.
    pub targets: Vec<TokenId>,
    /// Realized masking ratio |M| / N.
    pub gamma: f64,
}

/// Sampling weight for one position: zero for specials and position 0, one
/// for text/relation tokens, 1 + combined importance for entity tokens.
fn position_weight(seq: &TokenSequence, pos: usize, importance: &ImportanceScores) -> f64 {
    match seq.kinds[pos] {
        TokenKind::Special => 0.0,
        TokenKind::Entity => {
            let e = seq.entity_of[pos].expect("entity position without entity_of");
            1.0 + importance.combined.get(e as usize).copied().unwrap_or(0.0)
        }
        TokenKind::Text | TokenKind::Relation => 1.0,
    }
}

/// Draw `max(1, round(gamma * (N-1)))` positions without replacement from
/// 1..N-1, weighted by importance; clamped to the number of maskable
/// positions. Fails when nothing is maskable.
pub fn sample_mask_set(
    seq: &TokenSequence,
    gamma: f64,
    importance: &ImportanceScores,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&gamma) || gamma == 0.0 {
        return Err(Error::data(format!("gamma {gamma} outside (0,1)")));
    }
    let n = seq.len();
    if n < 2 {
        return Err(Error::data("sequence too short to mask"));
    }
    let mut weights: Vec<(usize, f64)> = (1..n)
        .map(|i| (i, position_weight(seq, i, importance)))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    if weights.is_empty() {
        return Err(Error::data("no maskable positions"));
    }
    let want = ((gamma * (n - 1) as f64).round() as usize)
        .max(1)
        .min(weights.len());
    let mut picked = Vec::with_capacity(want);
    for _ in 0..want {
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = weights.len() - 1;
        for (idx, (_, w)) in weights.iter().enumerate() {
            u -= w;
            if u <= 0.0 {
                chosen = idx;
                break;
            }
        }
        picked.push(weights.swap_remove(chosen).0);
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Substitute MASK at each listed position, recording original targets.
/// Kinds and entity links are preserved.
pub fn mask_tokens(seq: &TokenSequence, mask_set: &[usize]) -> Result<MaskedBatch> {
    let n = seq.len();
    let mut seen = std::collections::HashSet::new();
    for &i in mask_set {
        if i == 0 || i >= n {
            return Err(Error::data(format!("mask position {i} outside (0, {n})")));
        }
        if !seen.insert(i) {
            return Err(Error::data(format!("duplicate mask position {i}")));
        }
    }
    let mut mask_set = mask_set.to_vec();
    mask_set.sort_unstable();
    let mut masked_seq = seq.clone();
    let mut targets = Vec::with_capacity(mask_set.len());
    for &i in &mask_set {
        targets.push(seq.ids[i]);
        masked_seq.ids[i] = MASK;
    }
    let gamma = mask_set.len() as f64 / n as f64;
    Ok(MaskedBatch {
        masked_seq,
        mask_set,
        targets,
        gamma,
    })
}

/// Logits over the full vocabulary for one d-vector: W_P h + b_P.
pub fn project_logits<S: Scalar>(
    tape: &mut Tape<S>,
    h: ValueId,
    w_p: ValueId,
    b_p: ValueId,
) -> Result<ValueId> {
    let d = tape.value(h).len();
    let col = tape.reshape(h, vec![d, 1])?;
    let prod = tape.matmul(w_p, col)?; // [V, 1]
    let v = tape.shape(prod)[0];
    let flat = tape.reshape(prod, vec![v])?;
    tape.add(flat, b_p)
}

/// Average negative log-likelihood over the mask set, with logits for
/// position `i` read from the hidden state at `i-1`.
pub fn kmp_loss<S: Scalar>(
    tape: &mut Tape<S>,
    h_l: ValueId,
    batch: &MaskedBatch,
    w_p: ValueId,
    b_p: ValueId,
) -> Result<ValueId> {
    if batch.mask_set.is_empty() {
        return Err(Error::data("kmp_loss: empty mask set"));
    }
    let n = tape.shape(h_l)[0];
    for &i in &batch.mask_set {
        if i == 0 || i >= n {
            return Err(Error::data(format!(
                "kmp_loss: mask position {i} outside (0, {n})"
            )));
        }
    }
    let prev: Arc<Vec<usize>> = Arc::new(batch.mask_set.iter().map(|&i| i - 1).collect());
    let gathered = tape.gather_rows(h_l, prev)?; // [M, d]
    let w_t = tape.transpose(w_p)?; // [d, V]
    let logits = tape.matmul(gathered, w_t)?; // [M, V]
    let logits = tape.add(logits, b_p)?;
    let logp = tape.log_softmax_rows(logits)?;
    let targets: Arc<Vec<usize>> = Arc::new(batch.targets.iter().map(|&t| t as usize).collect());
    let picked = tape.pick_per_row(logp, targets)?;
    let mean = tape.mean_all(picked)?;
    tape.scale(mean, -S::one())
}
