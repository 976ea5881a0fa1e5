//! Link-prediction evaluation: candidate scoring, filtered/raw ranking,
//! MR / MRR / Hits@k, and a uniform-random baseline as the statistical floor.
//!
//! Two scorers ship. `mask-logit` serializes the query triple with the
//! unknown slot masked, encodes it, and reads the vocabulary projection at
//! the position preceding the mask, restricted to entity symbols.
//! `embed-cosine` pools the query sequence and every candidate's description
//! sequence and scores by cosine similarity, which extends to entities never
//! seen in training as long as they have a description.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bka::{bind_params, build_bka_mask, encode, BkaConfig, BoundParams, ModelParams};
use crate::cgsa::{cosine_sim, pool, PoolMethod};
use crate::error::{Error, Result};
use crate::kgstore::{EntityId, KnowledgeGraph, RelationId, Split, Triple};
use crate::kmp::project_logits;
use crate::numcore::parallel::map_indices;
use crate::numcore::{Tape, ValueId};
use crate::seqbuild::{
    serialize_description, TokenKind, TokenSequence, Vocab, BOS, EOS, MASK, SEP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Filtered,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    PredictTail,
    PredictHead,
}

/// One ranking task: the known (entity, relation) pair, which slot to
/// predict, and the true answer.
#[derive(Debug, Clone, Copy)]
pub struct Query {
    pub known_entity: EntityId,
    pub relation: RelationId,
    pub direction: Direction,
    pub answer: EntityId,
}

impl Query {
    pub fn from_triple(t: &Triple, direction: Direction) -> Query {
        match direction {
            Direction::PredictTail => Query {
                known_entity: t.head,
                relation: t.rel,
                direction,
                answer: t.tail,
            },
            Direction::PredictHead => Query {
                known_entity: t.tail,
                relation: t.rel,
                direction,
                answer: t.head,
            },
        }
    }
}

/// Everything a scorer needs: the training graph (attention masks must not
/// see evaluation edges), vocabulary, parameters, and encoder config.
pub struct EvalModel<'a> {
    pub kg: &'a KnowledgeGraph,
    pub vocab: &'a Vocab,
    pub params: &'a ModelParams,
    pub cfg: &'a BkaConfig,
    pub pool_method: PoolMethod,
}

impl EvalModel<'_> {
    fn run_encode(&self, seq: &TokenSequence) -> Result<(Tape<f32>, ValueId, BoundParams<'_>)> {
        let mask = build_bka_mask(seq, self.kg, self.cfg)?;
        let mut tape = Tape::<f32>::new();
        let tensors = self.params.tensors::<f32>();
        let bound = bind_params(&mut tape, &tensors, &self.params.index);
        let mut rng = ChaCha8Rng::seed_from_u64(0); // eval mode draws nothing
        let h = encode(&mut tape, seq, &mask, &bound, self.cfg, false, &mut rng)?;
        Ok((tape, h, bound))
    }

    /// Unit-length pooled embedding of a sequence, evaluation mode.
    pub fn pooled(&self, seq: &TokenSequence) -> Result<Vec<f32>> {
        let (mut tape, h, _) = self.run_encode(seq)?;
        let z = pool(&mut tape, h, self.pool_method, Some(&seq.ids))?;
        Ok(tape.value(z).data().to_vec())
    }
}

/// Query serialization: the triple frame with MASK in the unknown slot
/// (kind Special, no entity link), then the known entity's description frame
/// when available.
pub fn build_query_sequence(
    query: &Query,
    kg: &KnowledgeGraph,
    vocab: &Vocab,
    max_len: usize,
) -> TokenSequence {
    let known_sym = vocab.entity_symbol(query.known_entity);
    let rel_sym = vocab.relation_symbol(query.relation);
    let mut seq = TokenSequence {
        ids: vec![BOS],
        kinds: vec![TokenKind::Special],
        entity_of: vec![None],
        source_triples: Vec::new(),
    };
    let slots: [(u32, TokenKind, Option<EntityId>); 3] = match query.direction {
        Direction::PredictTail => [
            (known_sym, TokenKind::Entity, Some(query.known_entity)),
            (rel_sym, TokenKind::Relation, None),
            (MASK, TokenKind::Special, None),
        ],
        Direction::PredictHead => [
            (MASK, TokenKind::Special, None),
            (rel_sym, TokenKind::Relation, None),
            (known_sym, TokenKind::Entity, Some(query.known_entity)),
        ],
    };
    for (id, kind, ent) in slots {
        seq.ids.push(id);
        seq.kinds.push(kind);
        seq.entity_of.push(ent);
    }
    seq.ids.push(SEP);
    seq.kinds.push(TokenKind::Special);
    seq.entity_of.push(None);
    if let Some(desc) = kg.description(query.known_entity) {
        let budget = max_len.saturating_sub(seq.len() + 3);
        if budget > 0 {
            seq.ids.push(known_sym);
            seq.kinds.push(TokenKind::Entity);
            seq.entity_of.push(Some(query.known_entity));
            for w in crate::seqbuild::tokenize_text(desc).iter().take(budget) {
                seq.ids.push(vocab.text_token(w));
                seq.kinds.push(TokenKind::Text);
                seq.entity_of.push(None);
            }
            seq.ids.push(SEP);
            seq.kinds.push(TokenKind::Special);
            seq.entity_of.push(None);
        }
    }
    seq.ids.push(EOS);
    seq.kinds.push(TokenKind::Special);
    seq.entity_of.push(None);
    seq
}

/// Scores one query against every entity (index = entity id).
pub trait Scorer: Sync {
    fn score_all(&self, query: &Query, model: &EvalModel) -> Result<Vec<f32>>;
}

/// Read the masked-position logits (shifted one position left) and restrict
/// them to entity symbols.
pub struct MaskLogitScorer;

impl Scorer for MaskLogitScorer {
    fn score_all(&self, query: &Query, model: &EvalModel) -> Result<Vec<f32>> {
        let seq = build_query_sequence(query, model.kg, model.vocab, model.cfg.max_len);
        let mask_pos = match query.direction {
            Direction::PredictTail => 3,
            Direction::PredictHead => 1,
        };
        let (mut tape, h, bound) = model.run_encode(&seq)?;
        let prev = tape.gather_rows(h, Arc::new(vec![mask_pos - 1]))?;
        let d = model.cfg.model_dim;
        let hvec = tape.reshape(prev, vec![d])?;
        let logits = project_logits(&mut tape, hvec, bound.w_p(), bound.b_p())?;
        let data = tape.value(logits).data();
        Ok((0..model.kg.n_entities() as EntityId)
            .map(|e| data[model.vocab.entity_symbol(e) as usize])
            .collect())
    }
}

/// Cosine similarity between the pooled query sequence and cached pooled
/// description sequences. Candidates without a description score -1.
pub struct EmbedCosineScorer {
    candidate_z: Vec<Option<Vec<f32>>>,
}

impl EmbedCosineScorer {
    pub fn new(model: &EvalModel) -> Result<Self> {
        let n = model.kg.n_entities();
        let candidate_z: Vec<Result<Option<Vec<f32>>>> = map_indices(n, |e| {
            let e = e as EntityId;
            if model.kg.description(e).is_none() {
                return Ok(None);
            }
            let seq = serialize_description(e, model.kg, model.vocab, model.cfg.max_len)?;
            Ok(Some(model.pooled(&seq)?))
        });
        let candidate_z = candidate_z.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(EmbedCosineScorer { candidate_z })
    }
}

impl Scorer for EmbedCosineScorer {
    fn score_all(&self, query: &Query, model: &EvalModel) -> Result<Vec<f32>> {
        let seq = build_query_sequence(query, model.kg, model.vocab, model.cfg.max_len);
        let qz = model.pooled(&seq)?;
        self.candidate_z
            .iter()
            .map(|cz| match cz {
                Some(z) => cosine_sim(&qz, z),
                None => Ok(-1.0),
            })
            .collect()
    }
}

/// Scorer selection for the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    MaskLogit,
    EmbedCosine,
}

/// Score every candidate entity for one query.
pub fn score_candidates(scorer: &dyn Scorer, query: &Query, model: &EvalModel) -> Result<Vec<f32>> {
    scorer.score_all(query, model)
}

/// Deterministic mid-tie rank: 1 + #strictly-greater + #ties/2. Under the
/// filtered protocol all known-true candidates except the answer are removed
/// before ranking.
pub fn rank_of(
    scores: &[f32],
    answer: EntityId,
    known_true: &HashSet<EntityId>,
    protocol: Protocol,
) -> Result<f64> {
    let a = answer as usize;
    if a >= scores.len() {
        return Err(Error::data(format!("answer {answer} has no score")));
    }
    let answer_score = scores[a];
    if !answer_score.is_finite() {
        return Err(Error::numerical(format!(
            "answer {answer} scored {answer_score}"
        )));
    }
    let mut greater = 0usize;
    let mut ties = 0usize;
    for (e, &s) in scores.iter().enumerate() {
        if e == a {
            continue;
        }
        if protocol == Protocol::Filtered && known_true.contains(&(e as EntityId)) {
            continue;
        }
        if s > answer_score {
            greater += 1;
        } else if s == answer_score {
            ties += 1;
        }
    }
    Ok(1.0 + greater as f64 + ties as f64 / 2.0)
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub mr: f64,
    pub mrr: f64,
    /// Hits@1, Hits@3, Hits@10.
    pub hits: [f64; 3],
    pub n: usize,
}

pub const HITS_AT: [usize; 3] = [1, 3, 10];

/// MR, MRR, Hits@{1,3,10} from a rank list.
pub fn rank_metrics(ranks: &[f64]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::data("rank_metrics: empty rank list"));
    }
    for &r in ranks {
        if !(r >= 1.0) {
            return Err(Error::data(format!("rank {r} < 1")));
        }
    }
    let n = ranks.len() as f64;
    let mr = ranks.iter().sum::<f64>() / n;
    let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
    let mut hits = [0.0; 3];
    for (slot, &k) in HITS_AT.iter().enumerate() {
        hits[slot] = ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / n;
    }
    Ok(Metrics {
        mr,
        mrr,
        hits,
        n: ranks.len(),
    })
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub overall: Metrics,
    pub tail: Metrics,
    pub head: Metrics,
    pub protocol: Protocol,
    pub n_queries: usize,
    /// Fraction of test triples touching an unseen entity, when the split
    /// declares any.
    pub unseen_coverage: Option<f64>,
}

impl EvalReport {
    pub fn to_kv_text(&self) -> String {
        let proto = match self.protocol {
            Protocol::Filtered => "filtered",
            Protocol::Raw => "raw",
        };
        let mut out = format!("protocol={proto}\nn_queries={}\n", self.n_queries);
        for (name, m) in [
            ("overall", &self.overall),
            ("tail", &self.tail),
            ("head", &self.head),
        ] {
            out.push_str(&format!(
                "{name}.mr={}\n{name}.mrr={}\n{name}.hits1={}\n{name}.hits3={}\n{name}.hits10={}\n",
                m.mr, m.mrr, m.hits[0], m.hits[1], m.hits[2]
            ));
        }
        if let Some(c) = self.unseen_coverage {
            out.push_str(&format!("unseen_coverage={c}\n"));
        }
        out
    }

    /// Header + one data row, tab-separated.
    pub fn to_tsv(&self) -> String {
        let proto = match self.protocol {
            Protocol::Filtered => "filtered",
            Protocol::Raw => "raw",
        };
        format!(
            "protocol\tn_queries\tmr\tmrr\thits1\thits3\thits10\ttail_mrr\thead_mrr\n\
             {proto}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            self.n_queries,
            self.overall.mr,
            self.overall.mrr,
            self.overall.hits[0],
            self.overall.hits[1],
            self.overall.hits[2],
            self.tail.mrr,
            self.head.mrr
        )
    }
}

/// Known-true candidate sets per (entity, relation, direction), assembled
/// from train, valid and test triples for filtered ranking.
pub struct TrueFacts {
    tail: HashMap<(EntityId, RelationId), HashSet<EntityId>>,
    head: HashMap<(EntityId, RelationId), HashSet<EntityId>>,
}

impl TrueFacts {
    pub fn from_split(split: &Split) -> TrueFacts {
        let mut tail: HashMap<(EntityId, RelationId), HashSet<EntityId>> = HashMap::new();
        let mut head: HashMap<(EntityId, RelationId), HashSet<EntityId>> = HashMap::new();
        let all = split
            .train
            .triples()
            .iter()
            .chain(split.valid_triples.iter())
            .chain(split.test_triples.iter());
        for t in all {
            tail.entry((t.head, t.rel)).or_default().insert(t.tail);
            head.entry((t.tail, t.rel)).or_default().insert(t.head);
        }
        TrueFacts { tail, head }
    }

    pub fn answers(&self, query: &Query) -> &HashSet<EntityId> {
        static EMPTY: std::sync::OnceLock<HashSet<EntityId>> = std::sync::OnceLock::new();
        let map = match query.direction {
            Direction::PredictTail => &self.tail,
            Direction::PredictHead => &self.head,
        };
        map.get(&(query.known_entity, query.relation))
            .unwrap_or_else(|| EMPTY.get_or_init(HashSet::new))
    }
}

/// Score and rank both prediction directions for every test triple.
pub fn evaluate(
    model: &EvalModel,
    split: &Split,
    scorer: &dyn Scorer,
    protocol: Protocol,
) -> Result<EvalReport> {
    if split.test_triples.is_empty() {
        return Err(Error::data("evaluate: empty test set"));
    }
    let facts = TrueFacts::from_split(split);
    let mut queries = Vec::with_capacity(split.test_triples.len() * 2);
    for t in &split.test_triples {
        queries.push(Query::from_triple(t, Direction::PredictTail));
        queries.push(Query::from_triple(t, Direction::PredictHead));
    }
    let ranks: Vec<Result<f64>> = map_indices(queries.len(), |i| {
        let q = &queries[i];
        let scores = scorer.score_all(q, model)?;
        rank_of(&scores, q.answer, facts.answers(q), protocol)
    });
    let ranks = ranks.into_iter().collect::<Result<Vec<f64>>>()?;
    let tail_ranks: Vec<f64> = ranks.iter().step_by(2).copied().collect();
    let head_ranks: Vec<f64> = ranks.iter().skip(1).step_by(2).copied().collect();
    let unseen_coverage = if split.unseen_entities.is_empty() {
        None
    } else {
        let covered = split
            .test_triples
            .iter()
            .filter(|t| {
                split.unseen_entities.contains(&t.head) || split.unseen_entities.contains(&t.tail)
            })
            .count();
        Some(covered as f64 / split.test_triples.len() as f64)
    };
    Ok(EvalReport {
        overall: rank_metrics(&ranks)?,
        tail: rank_metrics(&tail_ranks)?,
        head: rank_metrics(&head_ranks)?,
        protocol,
        n_queries: ranks.len(),
        unseen_coverage,
    })
}

/// Statistical floor: uniform random scores over `n_candidates`, ranked raw.
pub fn random_baseline(
    n_candidates: usize,
    n_queries: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EvalReport> {
    if n_candidates == 0 || n_queries == 0 {
        return Err(Error::data("random_baseline: empty task"));
    }
    let empty = HashSet::new();
    let mut ranks = Vec::with_capacity(n_queries);
    for _ in 0..n_queries {
        let scores: Vec<f32> = (0..n_candidates).map(|_| rng.gen::<f32>()).collect();
        ranks.push(rank_of(&scores, 0, &empty, Protocol::Raw)?);
    }
    let m = rank_metrics(&ranks)?;
    Ok(EvalReport {
        overall: m.clone(),
        tail: m.clone(),
        head: m,
        protocol: Protocol::Raw,
        n_queries,
        unseen_coverage: None,
    })
}

/// Exact binomial survival function P(X >= k) for X ~ Bin(n, p).
pub fn binomial_sf(k: usize, n: usize, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let q = 1.0 - p;
    let mut pmf = q.powi(n as i32);
    let mut cdf_below_k = 0.0;
    for i in 0..k {
        cdf_below_k += pmf;
        pmf *= (n - i) as f64 / (i + 1) as f64 * (p / q);
    }
    (1.0 - cdf_below_k).max(0.0)
}
