//! Contrastive alignment of two corrupted views of a sub-graph.
//!
//! Each origin (a triple list) yields two views through independent
//! stochastic augmentation: dropping a non-bridging triple whose entities
//! stay within the hop radius of the remainder, deleting a short span from
//! one entity description, and shuffling triple frames. Views are encoded,
//! pooled to unit vectors, and scored with a temperature-scaled InfoNCE loss
//! whose candidates are the second-view embeddings.
//!
//! Augmentation draw order (one `f64` gate per op, then its inner choices):
//! triple drop, span deletion, frame shuffle. Tests replay this protocol.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kgstore::{k_hop_reachable, EntityId, KnowledgeGraph, Triple};
use crate::numcore::{Scalar, Tape, ValueId};
use crate::seqbuild::{serialize_with, tokenize_text, TokenSequence, Vocab, PAD};

/// Two views of one origin sub-graph.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub view1: TokenSequence,
    pub view2: TokenSequence,
    pub origin: Vec<Triple>,
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Independent probability for each augmentation op.
    pub p_aug: f64,
    /// Hop radius constraining which triples may be dropped.
    pub hop_radius: usize,
    pub max_len: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_aug: 0.3,
            hop_radius: 2,
            max_len: 128,
        }
    }
}

fn entities_of(triples: &[Triple]) -> Vec<EntityId> {
    let mut out = Vec::new();
    for t in triples {
        for e in [t.head, t.tail] {
            if !out.contains(&e) {
                out.push(e);
            }
        }
    }
    out
}

/// Triples whose removal keeps both endpoints within `hop_radius` of the
/// remaining triples' entities.
fn droppable(origin: &[Triple], kg: &KnowledgeGraph, hop_radius: usize) -> Result<Vec<usize>> {
    if origin.len() < 2 {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, t) in origin.iter().enumerate() {
        let rest: Vec<Triple> = origin
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, &x)| x)
            .collect();
        let rest_entities = entities_of(&rest);
        let mut ok = true;
        for e in [t.head, t.tail] {
            let mut within = false;
            for &e2 in &rest_entities {
                if k_hop_reachable(kg, e, e2, hop_radius)? {
                    within = true;
                    break;
                }
            }
            if !within {
                ok = false;
                break;
            }
        }
        if ok {
            out.push(i);
        }
    }
    Ok(out)
}

/// One stochastic view: possibly drop a triple, delete a description span of
/// up to 3 words, and shuffle triple frames; then serialize. Falls back to
/// the unmodified serialization when every op is rejected. At least one
/// triple always survives.
pub fn augment(
    origin: &[Triple],
    kg: &KnowledgeGraph,
    vocab: &Vocab,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TokenSequence> {
    if origin.is_empty() {
        return Err(Error::data("augment: empty origin"));
    }
    let mut triples: Vec<Triple> = origin.to_vec();
    let mut desc_override: HashMap<EntityId, String> = HashMap::new();

    // (a) drop one non-bridging triple
    if rng.gen::<f64>() < cfg.p_aug {
        let candidates = droppable(&triples, kg, cfg.hop_radius)?;
        if !candidates.is_empty() {
            let pick = candidates[rng.gen_range(0..candidates.len())];
            triples.remove(pick);
        }
    }

    // (b) delete a contiguous description span of <= 3 words
    if rng.gen::<f64>() < cfg.p_aug {
        let described: Vec<EntityId> = entities_of(&triples)
            .into_iter()
            .filter(|&e| kg.description(e).is_some())
            .collect();
        if !described.is_empty() {
            let e = described[rng.gen_range(0..described.len())];
            let words = tokenize_text(kg.description(e).unwrap());
            if !words.is_empty() {
                let span = rng.gen_range(1..=words.len().min(3));
                let start = rng.gen_range(0..=words.len() - span);
                let kept: Vec<&str> = words[..start]
                    .iter()
                    .chain(words[start + span..].iter())
                    .map(|s| s.as_str())
                    .collect();
                desc_override.insert(e, kept.join(" "));
            }
        }
    }

    // (c) shuffle triple frame order
    if rng.gen::<f64>() < cfg.p_aug {
        triples.shuffle(rng);
    }

    serialize_with(
        &triples,
        |e| {
            desc_override
                .get(&e)
                .map(|s| s.as_str())
                .or_else(|| kg.description(e))
        },
        vocab,
        cfg.max_len,
    )
}

/// Two independently augmented views of the same origin.
pub fn make_view_pair(
    origin: &[Triple],
    kg: &KnowledgeGraph,
    vocab: &Vocab,
    cfg: &AugmentConfig,
    rng1: &mut ChaCha8Rng,
    rng2: &mut ChaCha8Rng,
) -> Result<ViewPair> {
    Ok(ViewPair {
        view1: augment(origin, kg, vocab, cfg, rng1)?,
        view2: augment(origin, kg, vocab, cfg, rng2)?,
        origin: origin.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMethod {
    Mean,
    Bos,
}

/// Reduce hidden states to a unit-length sequence embedding: mean over
/// non-PAD rows, or the first (BOS) row. Fails if every row is PAD.
pub fn pool<S: Scalar>(
    tape: &mut Tape<S>,
    h_l: ValueId,
    method: PoolMethod,
    ids: Option<&[u32]>,
) -> Result<ValueId> {
    let shape = tape.shape(h_l).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Shape {
            op: "pool",
            detail: format!("{shape:?}"),
        });
    }
    let n = shape[0];
    let rows: Vec<usize> = match ids {
        None => (0..n).collect(),
        Some(ids) => {
            if ids.len() != n {
                return Err(Error::Shape {
                    op: "pool",
                    detail: format!("{} ids for {n} rows", ids.len()),
                });
            }
            (0..n).filter(|&i| ids[i] != PAD).collect()
        }
    };
    if rows.is_empty() {
        return Err(Error::data("pool: all rows are PAD"));
    }
    let vec = match method {
        PoolMethod::Mean => {
            let picked = tape.gather_rows(h_l, Arc::new(rows))?;
            tape.mean_rows(picked)?
        }
        PoolMethod::Bos => {
            let first = tape.gather_rows(h_l, Arc::new(vec![rows[0]]))?;
            let d = shape[1];
            tape.reshape(first, vec![d])?
        }
    };
    tape.l2_normalize(vec)
}

/// Cosine similarity of two vectors. Fails on a zero vector.
pub fn cosine_sim(u: &[f32], v: &[f32]) -> Result<f32> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "cosine_sim",
            detail: format!("[{}] vs [{}]", u.len(), v.len()),
        });
    }
    let dot: f64 = u
        .iter()
        .zip(v.iter())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum();
    let nu: f64 = u
        .iter()
        .map(|&a| (a as f64) * (a as f64))
        .sum::<f64>()
        .sqrt();
    let nv: f64 = v
        .iter()
        .map(|&a| (a as f64) * (a as f64))
        .sum::<f64>()
        .sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::numerical("cosine_sim of a zero vector"));
    }
    Ok((dot / (nu * nv)) as f32)
}

/// InfoNCE over pooled unit vectors: anchors are first-view embeddings,
/// candidates the second-view ones; averaged over the batch.
pub fn cgsa_loss<S: Scalar>(
    tape: &mut Tape<S>,
    z1: &[ValueId],
    z2: &[ValueId],
    tau: f64,
) -> Result<ValueId> {
    cgsa_loss_with(tape, z1, z2, tau, false)
}

/// `symmetric` additionally averages the transposed direction (second-view
/// anchors against first-view candidates).
pub fn cgsa_loss_with<S: Scalar>(
    tape: &mut Tape<S>,
    z1: &[ValueId],
    z2: &[ValueId],
    tau: f64,
    symmetric: bool,
) -> Result<ValueId> {
    if z1.is_empty() || z1.len() != z2.len() {
        return Err(Error::data(format!(
            "cgsa_loss: batch sizes {} vs {}",
            z1.len(),
            z2.len()
        )));
    }
    if tau <= 0.0 {
        return Err(Error::data(format!(
            "cgsa_loss: tau {tau} must be positive"
        )));
    }
    let fwd = info_nce_direction(tape, z1, z2, tau)?;
    if !symmetric {
        return Ok(fwd);
    }
    let bwd = info_nce_direction(tape, z2, z1, tau)?;
    let sum = tape.add(fwd, bwd)?;
    tape.scale(sum, S::from_f64(0.5))
}

fn info_nce_direction<S: Scalar>(
    tape: &mut Tape<S>,
    anchors: &[ValueId],
    candidates: &[ValueId],
    tau: f64,
) -> Result<ValueId> {
    let b = anchors.len();
    let za = tape.stack_rows(anchors)?;
    let zc = tape.stack_rows(candidates)?;
    let zc_t = tape.transpose(zc)?;
    let sims = tape.matmul(za, zc_t)?; // unit vectors: dot = cosine
    if !tape.value(sims).all_finite() {
        return Err(Error::numerical("cgsa_loss: non-finite similarity"));
    }
    let scaled = tape.scale(sims, S::from_f64(1.0 / tau))?;
    let logp = tape.log_softmax_rows(scaled)?;
    let diag: Arc<Vec<usize>> = Arc::new((0..b).collect());
    let picked = tape.pick_per_row(logp, diag)?;
    let mean = tape.mean_all(picked)?;
    tape.scale(mean, -S::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgstore::parse_descriptions;
    use crate::numcore::Tensor;
    use crate::seqbuild::{build_vocab, serialize};
    use rand::SeedableRng;

    fn kg_with_descs() -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::from_named_triples(vec![
            ("a", "r", "b"),
            ("b", "r", "c"),
            ("c", "s", "d"),
            ("d", "s", "a"),
        ])
        .unwrap();
        parse_descriptions(
            "a\tred fox den\nb\tblue bird nest\nc\tgreen frog pond\nd\tgray wolf cave\n",
            &mut kg,
        )
        .unwrap();
        kg
    }

    #[test]
    fn p_aug_zero_is_identity() {
        let kg = kg_with_descs();
        let vocab = build_vocab(&kg, 1).unwrap();
        let cfg = AugmentConfig {
            p_aug: 0.0,
            hop_radius: 2,
            max_len: 64,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let origin = kg.triples().to_vec();
        let out = augment(&origin, &kg, &vocab, &cfg, &mut rng).unwrap();
        let plain = serialize(&origin, &kg, &vocab, 64).unwrap();
        assert_eq!(out, plain);
    }

    #[test]
    fn single_triple_origin_always_survives() {
        let kg = kg_with_descs();
        let vocab = build_vocab(&kg, 1).unwrap();
        let cfg = AugmentConfig {
            p_aug: 1.0,
            hop_radius: 2,
            max_len: 64,
        };
        let origin = vec![kg.triples()[0]];
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = augment(&origin, &kg, &vocab, &cfg, &mut rng).unwrap();
            assert_eq!(crate::seqbuild::recover_triples(&out, &vocab), origin);
        }
    }

    /// Step-by-step replay of the documented augmentation protocol.
    #[test]
    fn seeded_replay_oracle() {
        let kg = kg_with_descs();
        let vocab = build_vocab(&kg, 1).unwrap();
        let cfg = AugmentConfig {
            p_aug: 0.7,
            hop_radius: 2,
            max_len: 64,
        };
        let origin = kg.triples().to_vec();
        assert_eq!(origin.len(), 4);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let got = augment(&origin, &kg, &vocab, &cfg, &mut rng).unwrap();

            // independent replay with a fresh rng from the same seed
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut triples = origin.clone();
            let mut overrides: HashMap<EntityId, String> = HashMap::new();
            if r.gen::<f64>() < cfg.p_aug {
                let cand = droppable(&triples, &kg, cfg.hop_radius).unwrap();
                if !cand.is_empty() {
                    let pick = cand[r.gen_range(0..cand.len())];
                    triples.remove(pick);
                }
            }
            if r.gen::<f64>() < cfg.p_aug {
                let described: Vec<EntityId> = entities_of(&triples)
                    .into_iter()
                    .filter(|&e| kg.description(e).is_some())
                    .collect();
                if !described.is_empty() {
                    let e = described[r.gen_range(0..described.len())];
                    let words = tokenize_text(kg.description(e).unwrap());
                    if !words.is_empty() {
                        let span = r.gen_range(1..=words.len().min(3));
                        let start = r.gen_range(0..=words.len() - span);
                        let kept: Vec<&str> = words[..start]
                            .iter()
                            .chain(words[start + span..].iter())
                            .map(|s| s.as_str())
                            .collect();
                        overrides.insert(e, kept.join(" "));
                    }
                }
            }
            if r.gen::<f64>() < cfg.p_aug {
                triples.shuffle(&mut r);
            }
            let expect = serialize_with(
                &triples,
                |e| {
                    overrides
                        .get(&e)
                        .map(|s| s.as_str())
                        .or_else(|| kg.description(e))
                },
                &vocab,
                cfg.max_len,
            )
            .unwrap();
            assert_eq!(got.ids, expect.ids, "seed {seed}");
        }
    }

    #[test]
    fn augmented_views_differ_and_share_origin() {
        let kg = kg_with_descs();
        let vocab = build_vocab(&kg, 1).unwrap();
        let cfg = AugmentConfig {
            p_aug: 0.8,
            hop_radius: 2,
            max_len: 64,
        };
        let origin = kg.triples().to_vec();
        let mut r1 = ChaCha8Rng::seed_from_u64(100);
        let mut r2 = ChaCha8Rng::seed_from_u64(200);
        let pair = make_view_pair(&origin, &kg, &vocab, &cfg, &mut r1, &mut r2).unwrap();
        assert_eq!(pair.origin, origin);
        assert!(!pair.view1.is_empty() && !pair.view2.is_empty());
    }

    #[test]
    fn pool_single_row_is_normalized_row() {
        let mut tape = Tape::<f32>::new();
        let h = tape.constant(Tensor::matrix(1, 3, vec![3.0, 0.0, 4.0]).unwrap());
        for method in [PoolMethod::Mean, PoolMethod::Bos] {
            let z = pool(&mut tape, h, method, None).unwrap();
            let d = tape.value(z).data();
            assert!((d[0] - 0.6).abs() < 1e-6 && (d[2] - 0.8).abs() < 1e-6);
        }
    }

    #[test]
    fn pool_mean_of_identical_rows_keeps_direction() {
        let mut tape = Tape::<f32>::new();
        let h = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 2.0, 1.0, 2.0, 2.0]).unwrap());
        let z = pool(&mut tape, h, PoolMethod::Mean, None).unwrap();
        let d = tape.value(z).data();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-6);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn pool_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n, d) = (4, 8);
        let data: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let mut tape = Tape::<f32>::new();
        let h = tape.constant(Tensor::matrix(n, d, data.clone()).unwrap());
        let z = pool(&mut tape, h, PoolMethod::Mean, None).unwrap();
        let mut mean = vec![0.0f64; d];
        for r in 0..n {
            for c in 0..d {
                mean[c] += data[r * d + c] as f64 / n as f64;
            }
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in tape.value(z).data().iter().zip(mean.iter()) {
            assert!((*a as f64 - b / norm).abs() < 1e-6);
        }
        let nz: f32 = tape
            .value(z)
            .data()
            .iter()
            .map(|x| x * x)
            .sum::<f32>()
            .sqrt();
        assert!((nz - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pool_all_pad_fails() {
        let mut tape = Tape::<f32>::new();
        let h = tape.constant(Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
        assert!(pool(&mut tape, h, PoolMethod::Mean, Some(&[PAD, PAD])).is_err());
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_sim(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-6);
        assert!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-6);
        assert!((cosine_sim(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-6);
        assert!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    fn unit_leaf(tape: &mut Tape<f32>, v: Vec<f32>) -> ValueId {
        let raw = tape.leaf(Tensor::vector(v).with_grad(), None);
        tape.l2_normalize(raw).unwrap()
    }

    #[test]
    fn single_pair_loss_is_exactly_zero() {
        let mut tape = Tape::<f32>::new();
        let z1 = unit_leaf(&mut tape, vec![0.3, -0.4, 0.9]);
        let z2 = unit_leaf(&mut tape, vec![-0.1, 0.8, 0.2]);
        let loss = cgsa_loss(&mut tape, &[z1], &[z2], 0.07).unwrap();
        assert_eq!(tape.value(loss).item().unwrap(), 0.0);
    }

    #[test]
    fn aligned_pairs_orthogonal_negatives() {
        // exact value at f64 precision
        let mut tape = Tape::<f64>::new();
        let mk = |tape: &mut Tape<f64>, v: Vec<f64>| {
            let raw = tape.leaf(Tensor::vector(v).with_grad(), None);
            tape.l2_normalize(raw).unwrap()
        };
        let e1 = mk(&mut tape, vec![1.0, 0.0]);
        let e2 = mk(&mut tape, vec![0.0, 1.0]);
        let loss = cgsa_loss(&mut tape, &[e1, e2], &[e1, e2], 0.07).unwrap();
        let got = tape.value(loss).item().unwrap();
        let expect = (1.0f64 + (-1.0 / 0.07f64).exp()).ln();
        assert!(got > 0.0);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");

        // the training-precision path stays under the acceptance tolerance
        let mut tape32 = Tape::<f32>::new();
        let f1 = unit_leaf(&mut tape32, vec![1.0, 0.0]);
        let f2 = unit_leaf(&mut tape32, vec![0.0, 1.0]);
        let loss32 = cgsa_loss(&mut tape32, &[f1, f2], &[f1, f2], 0.07).unwrap();
        assert!(tape32.value(loss32).item().unwrap() < 1e-5);
    }

    #[test]
    fn loss_nonnegative_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let b = rng.gen_range(1..6usize);
            let d = rng.gen_range(2..6usize);
            let mut tape = Tape::<f32>::new();
            let mk = |tape: &mut Tape<f32>, rng: &mut ChaCha8Rng| {
                let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                // avoid the zero vector
                let v = if v.iter().all(|x| x.abs() < 1e-3) {
                    vec![1.0; d]
                } else {
                    v
                };
                unit_leaf(tape, v)
            };
            let z1: Vec<ValueId> = (0..b).map(|_| mk(&mut tape, &mut rng)).collect();
            let z2: Vec<ValueId> = (0..b).map(|_| mk(&mut tape, &mut rng)).collect();
            let loss = cgsa_loss(&mut tape, &z1, &z2, 0.07).unwrap();
            assert!(tape.value(loss).item().unwrap() >= 0.0);
        }
    }

    #[test]
    fn loss_invariant_under_rotation() {
        // rotate all z by the same Givens rotations: cosines unchanged
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 4;
        let b = 3;
        let vecs: Vec<Vec<f32>> = (0..2 * b)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        let rotations: Vec<(usize, usize, f32)> = (0..5)
            .map(|_| {
                let i = rng.gen_range(0..d);
                let mut j = rng.gen_range(0..d - 1);
                if j >= i {
                    j += 1;
                }
                (i, j, rng.gen_range(0.0..std::f32::consts::TAU))
            })
            .collect();
        let rotate = |v: &[f32]| -> Vec<f32> {
            let mut v = v.to_vec();
            for &(i, j, theta) in &rotations {
                let (c, s) = (theta.cos(), theta.sin());
                let (vi, vj) = (v[i], v[j]);
                v[i] = c * vi - s * vj;
                v[j] = s * vi + c * vj;
            }
            v
        };
        let eval = |vs: &[Vec<f32>]| -> f32 {
            let mut tape = Tape::<f32>::new();
            let z: Vec<ValueId> = vs.iter().map(|v| unit_leaf(&mut tape, v.clone())).collect();
            let loss = cgsa_loss(&mut tape, &z[..b], &z[b..], 0.07).unwrap();
            tape.value(loss).item().unwrap()
        };
        let base = eval(&vecs);
        let rotated: Vec<Vec<f32>> = vecs.iter().map(|v| rotate(v)).collect();
        assert!((eval(&rotated) - base).abs() < 1e-5);
    }

    #[test]
    fn raising_negative_similarity_never_decreases_loss() {
        // anchor 1 fixed at e1; candidate 2 moves toward e1 while keeping
        // its similarity to anchor 2 constant (second coordinate fixed).
        let fixed_b = 0.3f32;
        let eval = |a: f32| -> f32 {
            let c = (1.0 - a * a - fixed_b * fixed_b).max(0.0).sqrt();
            let mut tape = Tape::<f32>::new();
            let z1a = unit_leaf(&mut tape, vec![1.0, 0.0, 0.0]);
            let z1b = unit_leaf(&mut tape, vec![0.0, 1.0, 0.0]);
            let z2a = unit_leaf(&mut tape, vec![1.0, 0.0, 0.0]);
            let z2b = unit_leaf(&mut tape, vec![a, fixed_b, c]);
            let loss = cgsa_loss(&mut tape, &[z1a, z1b], &[z2a, z2b], 0.07).unwrap();
            tape.value(loss).item().unwrap()
        };
        let mut prev = eval(-0.9);
        for step in 1..=18 {
            let a = -0.9 + 0.1 * step as f32;
            if a * a + fixed_b * fixed_b >= 1.0 {
                break;
            }
            let cur = eval(a);
            assert!(
                cur >= prev - 1e-6,
                "loss decreased: {prev} -> {cur} at a={a}"
            );
            prev = cur;
        }
    }

    #[test]
    fn symmetric_variant_averages_both_directions() {
        let mut tape = Tape::<f32>::new();
        let e1 = unit_leaf(&mut tape, vec![1.0, 0.0]);
        let e2 = unit_leaf(&mut tape, vec![0.6, 0.8]);
        let f1 = unit_leaf(&mut tape, vec![0.0, 1.0]);
        let f2 = unit_leaf(&mut tape, vec![0.8, 0.6]);
        let fwd = cgsa_loss_with(&mut tape, &[e1, e2], &[f1, f2], 0.1, false).unwrap();
        let bwd = cgsa_loss_with(&mut tape, &[f1, f2], &[e1, e2], 0.1, false).unwrap();
        let sym = cgsa_loss_with(&mut tape, &[e1, e2], &[f1, f2], 0.1, true).unwrap();
        let want = 0.5 * (tape.value(fwd).item().unwrap() + tape.value(bwd).item().unwrap());
        assert!((tape.value(sym).item().unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn cgsa_gradients_pass_grad_check() {
        use crate::numcore::grad_check;
        // B = 2, d = 8: loss as a function of the raw pre-pool hidden states.
        let (n, d) = (3usize, 8usize);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mk = |rng: &mut ChaCha8Rng| -> Tensor<f64> {
            Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap()
                .with_grad()
        };
        let params = vec![mk(&mut rng), mk(&mut rng), mk(&mut rng), mk(&mut rng)];
        let f = |ps: &[Tensor<f64>], want: bool| {
            let mut tape = Tape::<f64>::new();
            let hs: Vec<ValueId> = ps
                .iter()
                .enumerate()
                .map(|(i, t)| tape.leaf(t.clone(), Some(i)))
                .collect();
            let zs: Vec<ValueId> = hs
                .iter()
                .map(|&h| pool(&mut tape, h, PoolMethod::Mean, None))
                .collect::<Result<_>>()?;
            let loss = cgsa_loss(&mut tape, &zs[..2], &zs[2..], 0.07)?;
            let value = tape.value(loss).item()?;
            if want {
                let mut grads = tape.backward(loss)?;
                let g: Vec<Vec<f64>> = (0..ps.len())
                    .map(|i| grads.take_or_zero(i, ps[i].len()))
                    .collect();
                Ok((value, Some(g)))
            } else {
                Ok((value, None))
            }
        };
        let report = grad_check(f, &params, 1e-4).unwrap();
        assert!(report.max_rel_err < 1e-3, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn dropout_gives_independent_view_embeddings() {
        use crate::bka::{bind_params, build_bka_mask, encode, BkaConfig, ModelParams};
        let kg = kg_with_descs();
        let vocab = build_vocab(&kg, 1).unwrap();
        let seq = serialize(kg.triples(), &kg, &vocab, 64).unwrap();
        let cfg = BkaConfig {
            max_len: 64,
            ..BkaConfig::toy()
        };
        let mask = build_bka_mask(&seq, &kg, &cfg).unwrap();
        let params = ModelParams::init(&cfg, vocab.size(), 3).unwrap();
        let tensors = params.tensors::<f32>();
        let run = |seed: u64| -> Vec<f32> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::<f32>::new();
            let bound = bind_params(&mut tape, &tensors, &params.index);
            let h = encode(&mut tape, &seq, &mask, &bound, &cfg, true, &mut rng).unwrap();
            let z = pool(&mut tape, h, PoolMethod::Mean, Some(&seq.ids)).unwrap();
            tape.value(z).data().to_vec()
        };
        let (z1, z2) = (run(1), run(2));
        assert_ne!(z1, z2, "independent dropout streams must decorrelate views");
    }
}
