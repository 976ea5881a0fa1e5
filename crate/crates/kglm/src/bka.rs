//! Graph-aware bidirectional attention and the encoder stack.
//!
//! The attention mask admits a pair of positions (i, j) if at least one of
//! three conditions holds: they are within a local window of each other, both
//! are non-entity tokens while text-bidirectional mode is on, or both carry
//! entities connected by a relation path of bounded length. Substituting
//! `j <= i` for the condition set recovers a causal decoder mask; opening the
//! window recovers a fully bidirectional encoder.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kgstore::{k_hop_reachable, neighborhood, EntityId, KnowledgeGraph};
use crate::numcore::{Scalar, Tape, Tensor, ValueId};
use crate::seqbuild::{TokenKind, TokenSequence, N_KINDS};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Additive-mask "minus infinity": the most negative finite float, so mask
/// arithmetic stays NaN-free. The softmax op zeroes disallowed entries
/// exactly rather than relying on exp underflow.
pub const NEG_INF: f32 = f32::MIN;

/// Encoder and mask configuration. `None` for the window or hop threshold
/// means unlimited (the corresponding condition always passes).
#[derive(Debug, Clone)]
pub struct BkaConfig {
    pub hop_threshold: Option<usize>,
    pub local_window: Option<usize>,
    pub text_bidirectional: bool,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout_p: f64,
    pub max_len: usize,
}

impl BkaConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::usage(format!(
                "heads ({}) must divide model_dim ({})",
                self.heads, self.model_dim
            )));
        }
        if self.max_len < 4 {
            return Err(Error::usage("max_len must be >= 4"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::usage(format!(
                "dropout_p {} outside [0,1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Desk-scale defaults: small enough to train on a laptop CPU.
    pub fn desk_default() -> Self {
        BkaConfig {
            hop_threshold: Some(2),
            local_window: Some(2),
            text_bidirectional: true,
            layers: 2,
            model_dim: 64,
            heads: 4,
            ffn_dim: 256,
            dropout_p: 0.1,
            max_len: 128,
        }
    }

    /// Tiny configuration for gradient checks.
    pub fn toy() -> Self {
        BkaConfig {
            hop_threshold: Some(1),
            local_window: Some(1),
            text_bidirectional: true,
            layers: 2,
            model_dim: 16,
            heads: 2,
            ffn_dim: 32,
            dropout_p: 0.1,
            max_len: 16,
        }
    }
}

/// N x N additive attention mask with entries in {0, NEG_INF}.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    n: usize,
    additive: Vec<f32>,
    allowed: Arc<Vec<bool>>,
}

impl AttentionMask {
    pub fn from_allowed(n: usize, allowed: Vec<bool>) -> Self {
        debug_assert_eq!(allowed.len(), n * n);
        let additive = allowed
            .iter()
            .map(|&a| if a { 0.0 } else { NEG_INF })
            .collect();
        AttentionMask {
            n,
            additive,
            allowed: Arc::new(allowed),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn additive(&self) -> &[f32] {
        &self.additive
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }

    pub fn allowed_flags(&self) -> Arc<Vec<bool>> {
        Arc::clone(&self.allowed)
    }

    /// Text grid: `0` for allowed pairs, `-` for masked ones.
    pub fn to_text_grid(&self) -> String {
        let mut out = String::with_capacity(self.n * (self.n + 1));
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(if self.allowed(i, j) { '0' } else { '-' });
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise interaction rule: local window, text-bidirectional, or bounded
/// relation path between the entities the two positions carry.
pub fn can_interact(
    i: usize,
    j: usize,
    seq: &TokenSequence,
    kg: &KnowledgeGraph,
    cfg: &BkaConfig,
) -> Result<bool> {
    let within_window = match cfg.local_window {
        None => true,
        Some(w) => i.abs_diff(j) <= w,
    };
    if within_window {
        return Ok(true);
    }
    let (ki, kj) = (seq.kinds[i], seq.kinds[j]);
    if cfg.text_bidirectional && ki != TokenKind::Entity && kj != TokenKind::Entity {
        return Ok(true);
    }
    if let (Some(a), Some(b)) = (seq.entity_of[i], seq.entity_of[j]) {
        return match cfg.hop_threshold {
            None => Ok(true),
            Some(h) => k_hop_reachable(kg, a, b, h),
        };
    }
    Ok(false)
}

/// Build a mask from an arbitrary pair predicate. The reduction tests use
/// this to substitute `j <= i` for the interaction conditions.
pub fn build_mask_from_predicate(n: usize, pred: impl Fn(usize, usize) -> bool) -> AttentionMask {
    let mut allowed = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            allowed[i * n + j] = pred(i, j);
        }
    }
    AttentionMask::from_allowed(n, allowed)
}

/// Graph-aware mask for a sequence. Reachability between the sequence's
/// entities is precomputed with one bounded BFS per distinct entity.
pub fn build_bka_mask(
    seq: &TokenSequence,
    kg: &KnowledgeGraph,
    cfg: &BkaConfig,
) -> Result<AttentionMask> {
    let n = seq.len();
    if n > cfg.max_len {
        return Err(Error::data(format!(
            "sequence length {n} exceeds max_len {}",
            cfg.max_len
        )));
    }
    // reach[e] = entities within hop_threshold of e
    let reach: Option<HashMap<EntityId, HashMap<EntityId, usize>>> = match cfg.hop_threshold {
        None => None,
        Some(h) => {
            let mut map = HashMap::new();
            for e in seq.entities() {
                if (e as usize) >= kg.n_entities() {
                    return Err(Error::data(format!("unknown entity id {e} in sequence")));
                }
                map.insert(e, neighborhood(kg, e, h));
            }
            Some(map)
        }
    };
    let entity_ok = |a: EntityId, b: EntityId| -> bool {
        match &reach {
            None => true,
            Some(map) => map[&a].contains_key(&b),
        }
    };
    let mut allowed = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let ok = match cfg.local_window {
                None => true,
                Some(w) => i.abs_diff(j) <= w,
            } || (cfg.text_bidirectional
                && seq.kinds[i] != TokenKind::Entity
                && seq.kinds[j] != TokenKind::Entity)
                || match (seq.entity_of[i], seq.entity_of[j]) {
                    (Some(a), Some(b)) => entity_ok(a, b),
                    _ => false,
                };
            allowed[i * n + j] = ok;
        }
    }
    Ok(AttentionMask::from_allowed(n, allowed))
}

/// Strictly causal mask: zeros at and below the diagonal.
pub fn causal_mask(n: usize) -> AttentionMask {
    build_mask_from_predicate(n, |i, j| j <= i)
}

// ── model parameters ─────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ParamDef {
    pub name: String,
    pub shape: Vec<usize>,
    /// Whether decoupled weight decay applies (matrices yes, vectors no).
    pub decay: bool,
}

/// Per-layer parameter slot indices.
#[derive(Debug, Clone, Copy)]
pub struct LayerSlots {
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub w_o: usize,
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub ffn_w1: usize,
    pub ffn_w2: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
}

/// Fixed parameter ordering for a given configuration.
#[derive(Debug, Clone)]
pub struct ParamIndex {
    pub token_emb: usize,
    pub pos_emb: usize,
    pub kind_emb: usize,
    pub layers: Vec<LayerSlots>,
    pub w_p: usize,
    pub b_p: usize,
}

impl ParamIndex {
    pub fn for_layers(n_layers: usize) -> Self {
        let mut next = 3;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layers.push(LayerSlots {
                w_q: next,
                w_k: next + 1,
                w_v: next + 2,
                w_o: next + 3,
                ln1_gain: next + 4,
                ln1_bias: next + 5,
                ffn_w1: next + 6,
                ffn_w2: next + 7,
                ln2_gain: next + 8,
                ln2_bias: next + 9,
            });
            next += 10;
        }
        ParamIndex {
            token_emb: 0,
            pos_emb: 1,
            kind_emb: 2,
            layers,
            w_p: next,
            b_p: next + 1,
        }
    }

    pub fn n_params(&self) -> usize {
        self.b_p + 1
    }
}

/// All trainable parameters: embedding tables, per-layer blocks, output
/// projection. Stored as `f32` (the checkpoint format); cast per tape.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub defs: Vec<ParamDef>,
    pub values: Vec<Vec<f32>>,
    pub index: ParamIndex,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 in (0, 1]
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl ModelParams {
    pub fn init(cfg: &BkaConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let index = ParamIndex::for_layers(cfg.layers);
        let mut defs = vec![
            ParamDef {
                name: "embed.token".into(),
                shape: vec![vocab_size, d],
                decay: true,
            },
            ParamDef {
                name: "embed.pos".into(),
                shape: vec![cfg.max_len, d],
                decay: true,
            },
            ParamDef {
                name: "embed.kind".into(),
                shape: vec![N_KINDS, d],
                decay: true,
            },
        ];
        for l in 0..cfg.layers {
            for (suffix, shape, decay) in [
                ("attn.w_q", vec![d, d], true),
                ("attn.w_k", vec![d, d], true),
                ("attn.w_v", vec![d, d], true),
                ("attn.w_o", vec![d, d], true),
                ("ln1.gain", vec![d], false),
                ("ln1.bias", vec![d], false),
                ("ffn.w1", vec![d, cfg.ffn_dim], true),
                ("ffn.w2", vec![cfg.ffn_dim, d], true),
                ("ln2.gain", vec![d], false),
                ("ln2.bias", vec![d], false),
            ] {
                defs.push(ParamDef {
                    name: format!("layer{l}.{suffix}"),
                    shape,
                    decay,
                });
            }
        }
        defs.push(ParamDef {
            name: "proj.w_p".into(),
            shape: vec![vocab_size, d],
            decay: true,
        });
        defs.push(ParamDef {
            name: "proj.b_p".into(),
            shape: vec![vocab_size],
            decay: false,
        });

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = defs
            .iter()
            .map(|def| {
                let n: usize = def.shape.iter().product();
                if def.name.ends_with(".gain") {
                    vec![1.0f32; n]
                } else if def.name.ends_with(".bias") || def.name.ends_with(".b_p") {
                    vec![0.0f32; n]
                } else {
                    (0..n)
                        .map(|_| (standard_normal(&mut rng) * 0.02) as f32)
                        .collect()
                }
            })
            .collect();
        Ok(ModelParams {
            defs,
            values,
            index,
        })
    }

    pub fn n_params(&self) -> usize {
        self.defs.len()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn tensors<S: Scalar>(&self) -> Vec<Tensor<S>> {
        self.defs
            .iter()
            .zip(self.values.iter())
            .map(|(def, v)| {
                Tensor::new(
                    def.shape.clone(),
                    v.iter().map(|&x| S::from_f32(x)).collect(),
                )
                .expect("param shape/data mismatch")
                .with_grad()
            })
            .collect()
    }
}

/// Parameter leaves bound into one tape, with their slot layout.
pub struct BoundParams<'a> {
    pub ids: Vec<ValueId>,
    pub index: &'a ParamIndex,
}

pub fn bind_params<'a, S: Scalar>(
    tape: &mut Tape<S>,
    tensors: &[Tensor<S>],
    index: &'a ParamIndex,
) -> BoundParams<'a> {
    let ids = tensors
        .iter()
        .enumerate()
        .map(|(i, t)| tape.leaf(t.clone(), Some(i)))
        .collect();
    BoundParams { ids, index }
}

impl BoundParams<'_> {
    pub fn layer(&self, l: usize) -> LayerIds {
        let s = self.index.layers[l];
        LayerIds {
            w_q: self.ids[s.w_q],
            w_k: self.ids[s.w_k],
            w_v: self.ids[s.w_v],
            w_o: self.ids[s.w_o],
            ln1_gain: self.ids[s.ln1_gain],
            ln1_bias: self.ids[s.ln1_bias],
            ffn_w1: self.ids[s.ffn_w1],
            ffn_w2: self.ids[s.ffn_w2],
            ln2_gain: self.ids[s.ln2_gain],
            ln2_bias: self.ids[s.ln2_bias],
        }
    }

    pub fn token_emb(&self) -> ValueId {
        self.ids[self.index.token_emb]
    }

    pub fn pos_emb(&self) -> ValueId {
        self.ids[self.index.pos_emb]
    }

    pub fn kind_emb(&self) -> ValueId {
        self.ids[self.index.kind_emb]
    }

    pub fn w_p(&self) -> ValueId {
        self.ids[self.index.w_p]
    }

    pub fn b_p(&self) -> ValueId {
        self.ids[self.index.b_p]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerIds {
    pub w_q: ValueId,
    pub w_k: ValueId,
    pub w_v: ValueId,
    pub w_o: ValueId,
    pub ln1_gain: ValueId,
    pub ln1_bias: ValueId,
    pub ffn_w1: ValueId,
    pub ffn_w2: ValueId,
    pub ln2_gain: ValueId,
    pub ln2_bias: ValueId,
}

// ── forward pass ─────────────────────────────────────────────────────

/// Scaled dot-product attention with the additive mask:
/// softmax(Q K^T / sqrt(d_h) + M) V. Disallowed pairs carry exactly zero
/// weight; a fully masked row is an error.
pub fn attention<S: Scalar>(
    tape: &mut Tape<S>,
    q: ValueId,
    k: ValueId,
    v: ValueId,
    mask: &AttentionMask,
) -> Result<ValueId> {
    attention_inner(tape, q, k, v, mask, None)
}

fn attention_inner<S: Scalar>(
    tape: &mut Tape<S>,
    q: ValueId,
    k: ValueId,
    v: ValueId,
    mask: &AttentionMask,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<ValueId> {
    let (sq, sk, sv) = (
        tape.shape(q).to_vec(),
        tape.shape(k).to_vec(),
        tape.shape(v).to_vec(),
    );
    if sq.len() != 2 || sq != sk || sq != sv {
        return Err(Error::Shape {
            op: "attention",
            detail: format!("Q {sq:?}, K {sk:?}, V {sv:?}"),
        });
    }
    if mask.n() != sq[0] {
        return Err(Error::Shape {
            op: "attention",
            detail: format!("mask {}x{} vs N={}", mask.n(), mask.n(), sq[0]),
        });
    }
    let d_h = sq[1];
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, S::from_f64(1.0 / (d_h as f64).sqrt()))?;
    let mut probs = tape.softmax_rows_masked(scaled, Some(mask.allowed_flags()))?;
    if let Some((p, rng)) = dropout {
        if p > 0.0 {
            probs = tape.dropout(probs, p, rng)?;
        }
    }
    tape.matmul(probs, v)
}

/// One encoder layer: per-head masked attention, concat, output projection,
/// residual + layer norm, position-wise FFN (linear, GELU, linear), residual
/// + layer norm. Dropout applies to attention weights and the FFN output,
/// only in training mode.
pub fn encoder_layer<S: Scalar>(
    tape: &mut Tape<S>,
    h: ValueId,
    layer: &LayerIds,
    mask: &AttentionMask,
    cfg: &BkaConfig,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ValueId> {
    let d = cfg.model_dim;
    if tape.shape(h) != [mask.n(), d] {
        return Err(Error::Shape {
            op: "encoder_layer",
            detail: format!("H {:?} vs N={} d={d}", tape.shape(h), mask.n()),
        });
    }
    let d_h = cfg.head_dim();
    let q_full = tape.matmul(h, layer.w_q)?;
    let k_full = tape.matmul(h, layer.w_k)?;
    let v_full = tape.matmul(h, layer.w_v)?;
    let mut heads = Vec::with_capacity(cfg.heads);
    for hd in 0..cfg.heads {
        let q = tape.slice_cols(q_full, hd * d_h, d_h)?;
        let k = tape.slice_cols(k_full, hd * d_h, d_h)?;
        let v = tape.slice_cols(v_full, hd * d_h, d_h)?;
        let dropout = if train && cfg.dropout_p > 0.0 {
            Some((cfg.dropout_p, &mut *rng))
        } else {
            None
        };
        heads.push(attention_inner(tape, q, k, v, mask, dropout)?);
    }
    let concat = tape.concat_cols(&heads)?;
    let attn_out = tape.matmul(concat, layer.w_o)?;
    let res1 = tape.add(h, attn_out)?;
    let eps = S::from_f64(LAYER_NORM_EPS);
    let norm1 = tape.layer_norm(res1, layer.ln1_gain, layer.ln1_bias, eps)?;

    let ffn_mid = tape.matmul(norm1, layer.ffn_w1)?;
    let ffn_act = tape.gelu(ffn_mid)?;
    let mut ffn_out = tape.matmul(ffn_act, layer.ffn_w2)?;
    if train && cfg.dropout_p > 0.0 {
        ffn_out = tape.dropout(ffn_out, cfg.dropout_p, rng)?;
    }
    let res2 = tape.add(norm1, ffn_out)?;
    tape.layer_norm(res2, layer.ln2_gain, layer.ln2_bias, eps)
}

/// Embed a sequence (token + position + kind embeddings) and run the layer
/// stack. Returns the final hidden states, N x d.
pub fn encode<S: Scalar>(
    tape: &mut Tape<S>,
    seq: &TokenSequence,
    mask: &AttentionMask,
    params: &BoundParams,
    cfg: &BkaConfig,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ValueId> {
    let n = seq.len();
    if n == 0 {
        return Err(Error::data("encode: empty sequence"));
    }
    if n > cfg.max_len {
        return Err(Error::data(format!(
            "encode: sequence length {n} exceeds {}",
            cfg.max_len
        )));
    }
    let vocab_rows = tape.shape(params.token_emb())[0];
    for &id in &seq.ids {
        if id as usize >= vocab_rows {
            return Err(Error::data(format!(
                "encode: token id {id} >= vocab size {vocab_rows}"
            )));
        }
    }
    let tok_idx = Arc::new(seq.ids.iter().map(|&t| t as usize).collect::<Vec<_>>());
    let pos_idx = Arc::new((0..n).collect::<Vec<_>>());
    let kind_idx = Arc::new(seq.kinds.iter().map(|k| k.index()).collect::<Vec<_>>());
    let tok = tape.gather_rows(params.token_emb(), tok_idx)?;
    let pos = tape.gather_rows(params.pos_emb(), pos_idx)?;
    let kind = tape.gather_rows(params.kind_emb(), kind_idx)?;
    let tp = tape.add(tok, pos)?;
    let mut h = tape.add(tp, kind)?;
    for l in 0..cfg.layers {
        let layer = params.layer(l);
        h = encoder_layer(tape, h, &layer, mask, cfg, train, rng)?;
    }
    Ok(h)
}
