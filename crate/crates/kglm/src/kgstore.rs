//! Knowledge graph storage and queries.
//!
//! Loads tab-separated triple files, indexes adjacency, answers bounded-hop
//! reachability, computes entity importance (PageRank blended with relation
//! entropy), samples bounded-radius sub-graphs, and produces zero-shot
//! splits. The graph is immutable after load; all queries are read-only.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
}

/// One adjacency entry: the neighbor reached by an incident triple.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub neighbor: EntityId,
    pub rel: RelationId,
    pub direction: Direction,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relation_ids: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    descriptions: Vec<Option<String>>,
    adjacency: Vec<Vec<Edge>>,
}

impl KnowledgeGraph {
    pub fn n_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[id as usize]
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    pub fn description(&self, id: EntityId) -> Option<&str> {
        self.descriptions
            .get(id as usize)
            .and_then(|d| d.as_deref())
    }

    pub fn n_descriptions(&self) -> usize {
        self.descriptions.iter().filter(|d| d.is_some()).count()
    }

    pub fn edges(&self, id: EntityId) -> &[Edge] {
        &self.adjacency[id as usize]
    }

    pub fn degree(&self, id: EntityId) -> usize {
        self.adjacency[id as usize].len()
    }

    fn check_entity(&self, id: EntityId) -> Result<()> {
        if (id as usize) < self.entity_names.len() {
            Ok(())
        } else {
            Err(Error::data(format!("unknown entity id {id}")))
        }
    }

    fn intern_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_ids.get(name) {
            return id;
        }
        let id = self.entity_names.len() as EntityId;
        self.entity_names.push(name.to_string());
        self.entity_ids.insert(name.to_string(), id);
        self.descriptions.push(None);
        id
    }

    fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_ids.get(name) {
            return id;
        }
        let id = self.relation_names.len() as RelationId;
        self.relation_names.push(name.to_string());
        self.relation_ids.insert(name.to_string(), id);
        id
    }

    fn rebuild_adjacency(&mut self) {
        self.adjacency = vec![Vec::new(); self.entity_names.len()];
        for t in &self.triples {
            self.adjacency[t.head as usize].push(Edge {
                neighbor: t.tail,
                rel: t.rel,
                direction: Direction::Out,
            });
            self.adjacency[t.tail as usize].push(Edge {
                neighbor: t.head,
                rel: t.rel,
                direction: Direction::In,
            });
        }
    }

    /// Build a graph from in-memory (head, relation, tail) name triples.
    /// Ids are assigned in first-appearance order, duplicates dropped.
    pub fn from_named_triples<'a>(
        triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    ) -> Result<Self> {
        let mut kg = KnowledgeGraph::default();
        let mut seen = HashSet::new();
        for (h, r, t) in triples {
            let head = kg.intern_entity(h);
            let rel = kg.intern_relation(r);
            let tail = kg.intern_entity(t);
            let triple = Triple { head, rel, tail };
            if seen.insert(triple) {
                kg.triples.push(triple);
            }
        }
        if kg.triples.is_empty() {
            return Err(Error::data("no triples"));
        }
        kg.rebuild_adjacency();
        Ok(kg)
    }

    /// Same entity/relation tables, different triple set. Used for split
    /// construction so ids stay stable across train/test.
    pub fn with_triples(&self, triples: Vec<Triple>) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::data("with_triples: empty triple set"));
        }
        let mut kg = self.clone();
        kg.triples = triples;
        kg.rebuild_adjacency();
        Ok(kg)
    }

    pub fn attach_description(&mut self, id: EntityId, text: String) {
        self.descriptions[id as usize] = Some(text);
    }
}

/// Load a `head<TAB>relation<TAB>tail` file. Ids are assigned in
/// first-appearance order; duplicate lines collapse to one triple.
pub fn load_triples(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::data(format!("{}: {e}", path.as_ref().display())))?;
    parse_triples(&text)
}

pub fn parse_triples(text: &str) -> Result<KnowledgeGraph> {
    let rows = parse_triple_rows(text)?;
    if rows.is_empty() {
        return Err(Error::data("empty triple file"));
    }
    KnowledgeGraph::from_named_triples(rows.iter().map(|(h, r, t)| (*h, *r, *t)))
}

/// Validate and split raw `head<TAB>relation<TAB>tail` lines without
/// building a graph.
pub fn parse_triple_rows(text: &str) -> Result<Vec<(&str, &str, &str)>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split('\t');
        match (it.next(), it.next(), it.next(), it.next()) {
            (Some(h), Some(r), Some(t), None)
                if !h.is_empty() && !r.is_empty() && !t.is_empty() =>
            {
                rows.push((h, r, t));
            }
            _ => {
                return Err(Error::data(format!(
                    "line {}: expected head<TAB>relation<TAB>tail, got {:?}",
                    lineno + 1,
                    line
                )));
            }
        }
    }
    Ok(rows)
}

/// Outcome of a description load: how many lines matched an entity by name,
/// and the names that matched nothing (reported, not fatal).
#[derive(Debug, Default)]
pub struct DescriptionReport {
    pub attached: usize,
    pub skipped: Vec<String>,
}

/// Attach `entity_name<TAB>description` lines to a graph.
pub fn load_descriptions(
    path: impl AsRef<Path>,
    kg: &mut KnowledgeGraph,
) -> Result<DescriptionReport> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::data(format!("{}: {e}", path.as_ref().display())))?;
    parse_descriptions(&text, kg)
}

pub fn parse_descriptions(text: &str, kg: &mut KnowledgeGraph) -> Result<DescriptionReport> {
    let mut report = DescriptionReport::default();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let Some((name, desc)) = line.split_once('\t') else {
            continue;
        };
        match kg.entity_id(name) {
            Some(id) => {
                kg.attach_description(id, desc.to_string());
                report.attached += 1;
            }
            None => report.skipped.push(name.to_string()),
        }
    }
    Ok(report)
}

/// True iff a path of length <= `hops` connects `a` and `b`, treating every
/// triple as an undirected edge. An entity is 0-hop reachable from itself.
pub fn k_hop_reachable(kg: &KnowledgeGraph, a: EntityId, b: EntityId, hops: usize) -> Result<bool> {
    kg.check_entity(a)?;
    kg.check_entity(b)?;
    if a == b {
        return Ok(true);
    }
    if hops == 0 {
        return Ok(false);
    }
    let mut dist: HashMap<EntityId, usize> = HashMap::new();
    dist.insert(a, 0);
    let mut queue = VecDeque::from([a]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        if du == hops {
            continue;
        }
        for e in kg.edges(u) {
            if !dist.contains_key(&e.neighbor) {
                if e.neighbor == b {
                    return Ok(true);
                }
                dist.insert(e.neighbor, du + 1);
                queue.push_back(e.neighbor);
            }
        }
    }
    Ok(false)
}

/// Entities within `hops` of `seed` (including the seed), with their BFS
/// distance. Used to precompute reachability for a whole token sequence.
pub fn neighborhood(kg: &KnowledgeGraph, seed: EntityId, hops: usize) -> HashMap<EntityId, usize> {
    let mut dist: HashMap<EntityId, usize> = HashMap::new();
    dist.insert(seed, 0);
    let mut queue = VecDeque::from([seed]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        if du == hops {
            continue;
        }
        for e in kg.edges(u) {
            if !dist.contains_key(&e.neighbor) {
                dist.insert(e.neighbor, du + 1);
                queue.push_back(e.neighbor);
            }
        }
    }
    dist
}

/// Entity importance signals. PageRank runs over the undirected
/// degree-normalized adjacency; relation entropy is the Shannon entropy of
/// the relation-type histogram over an entity's incident edges. `combined`
/// is an equal-weight blend of the min-max-normalized signals, in [0, 1].
#[derive(Debug, Clone)]
pub struct ImportanceScores {
    pub pagerank: Vec<f64>,
    pub relation_entropy: Vec<f64>,
    pub combined: Vec<f64>,
}

impl ImportanceScores {
    pub fn combined_of(&self, id: EntityId) -> f64 {
        self.combined[id as usize]
    }
}

pub fn importance_scores(
    kg: &KnowledgeGraph,
    damping: f64,
    iters: usize,
) -> Result<ImportanceScores> {
    if kg.n_entities() == 0 {
        return Err(Error::data("importance_scores on an empty graph"));
    }
    if !(0.0..1.0).contains(&damping) || damping == 0.0 {
        return Err(Error::data(format!("damping {damping} outside (0,1)")));
    }
    if iters == 0 {
        return Err(Error::data("iters must be >= 1"));
    }
    let n = kg.n_entities();
    let pagerank = pagerank_power_iteration(kg, damping, iters);
    let relation_entropy: Vec<f64> = (0..n)
        .map(|e| {
            let edges = kg.edges(e as EntityId);
            if edges.is_empty() {
                return 0.0;
            }
            let mut hist: HashMap<RelationId, usize> = HashMap::new();
            for edge in edges {
                *hist.entry(edge.rel).or_default() += 1;
            }
            let total = edges.len() as f64;
            hist.values()
                .map(|&c| {
                    let p = c as f64 / total;
                    -p * p.ln()
                })
                .sum()
        })
        .collect();
    let pr_norm = min_max_normalize(&pagerank);
    let re_norm = min_max_normalize(&relation_entropy);
    let combined: Vec<f64> = pr_norm
        .iter()
        .zip(re_norm.iter())
        .map(|(a, b)| 0.5 * a + 0.5 * b)
        .collect();
    Ok(ImportanceScores {
        pagerank,
        relation_entropy,
        combined,
    })
}

fn pagerank_power_iteration(kg: &KnowledgeGraph, damping: f64, iters: usize) -> Vec<f64> {
    let n = kg.n_entities();
    let teleport = (1.0 - damping) / n as f64;
    let mut pr = vec![1.0 / n as f64; n];
    let mut next = vec![0.0f64; n];
    for _ in 0..iters {
        next.fill(teleport);
        for u in 0..n {
            let deg = kg.degree(u as EntityId);
            if deg == 0 {
                // dangling mass redistributed uniformly
                let share = damping * pr[u] / n as f64;
                for v in next.iter_mut() {
                    *v += share;
                }
                continue;
            }
            let share = damping * pr[u] / deg as f64;
            for e in kg.edges(u as EntityId) {
                next[e.neighbor as usize] += share;
            }
        }
        std::mem::swap(&mut pr, &mut next);
    }
    pr
}

fn min_max_normalize(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo).is_finite() || hi - lo < 1e-300 {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|&x| (x - lo) / (hi - lo)).collect()
}

/// BFS out to `radius` hops from `seed_entity`, collecting every traversed
/// triple; uniform subsample without replacement if more than `max_triples`
/// are found, always keeping at least one triple incident to the seed.
pub fn sample_subgraph(
    kg: &KnowledgeGraph,
    seed_entity: EntityId,
    radius: usize,
    max_triples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Triple>> {
    kg.check_entity(seed_entity)?;
    if radius == 0 {
        return Err(Error::data("sample_subgraph: radius must be >= 1"));
    }
    if kg.degree(seed_entity) == 0 {
        return Err(Error::data(format!(
            "sample_subgraph: entity {} is isolated",
            kg.entity_name(seed_entity)
        )));
    }
    // Collect triples whose nearer endpoint lies within radius-1 of the
    // seed, in BFS discovery order for determinism.
    let mut collected: Vec<Triple> = Vec::new();
    let mut seen: HashSet<Triple> = HashSet::new();
    let mut dist: HashMap<EntityId, usize> = HashMap::from([(seed_entity, 0)]);
    let mut queue = VecDeque::from([seed_entity]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        if du >= radius {
            continue;
        }
        for e in kg.edges(u) {
            let triple = match e.direction {
                Direction::Out => Triple {
                    head: u,
                    rel: e.rel,
                    tail: e.neighbor,
                },
                Direction::In => Triple {
                    head: e.neighbor,
                    rel: e.rel,
                    tail: u,
                },
            };
            if seen.insert(triple) {
                collected.push(triple);
            }
            if !dist.contains_key(&e.neighbor) {
                dist.insert(e.neighbor, du + 1);
                queue.push_back(e.neighbor);
            }
        }
    }
    if collected.len() <= max_triples {
        return Ok(collected);
    }
    let incident: Vec<usize> = collected
        .iter()
        .enumerate()
        .filter(|(_, t)| t.head == seed_entity || t.tail == seed_entity)
        .map(|(i, _)| i)
        .collect();
    let keep_incident = incident[rng.gen_range(0..incident.len())];
    let mut others: Vec<usize> = (0..collected.len())
        .filter(|&i| i != keep_incident)
        .collect();
    others.shuffle(rng);
    let mut chosen: Vec<usize> = others
        .into_iter()
        .take(max_triples.saturating_sub(1))
        .collect();
    chosen.push(keep_incident);
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| collected[i]).collect())
}

/// Train/valid/test partition of a graph's triples.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: KnowledgeGraph,
    pub valid_triples: Vec<Triple>,
    pub test_triples: Vec<Triple>,
    pub unseen_entities: HashSet<EntityId>,
}

/// Hold out a fraction of entities entirely: every triple touching a held-out
/// entity moves to test, so each test triple contains at least one entity
/// absent from training.
pub fn zero_shot_split(
    kg: &KnowledgeGraph,
    entity_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Split> {
    if !(0.0..=0.5).contains(&entity_fraction) || entity_fraction == 0.0 {
        return Err(Error::data(format!(
            "entity_fraction {entity_fraction} outside (0, 0.5]"
        )));
    }
    let n = kg.n_entities();
    let k = ((entity_fraction * n as f64).round() as usize).max(1);
    let mut ids: Vec<EntityId> = (0..n as EntityId).collect();
    ids.shuffle(rng);
    let unseen: HashSet<EntityId> = ids.into_iter().take(k).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for &t in kg.triples() {
        if unseen.contains(&t.head) || unseen.contains(&t.tail) {
            test.push(t);
        } else {
            train.push(t);
        }
    }
    if train.is_empty() {
        return Err(Error::data("zero_shot_split left the train set empty"));
    }
    Ok(Split {
        train: kg.with_triples(train)?,
        valid_triples: Vec::new(),
        test_triples: test,
        unseen_entities: unseen,
    })
}

/// Random triple holdout that keeps every entity covered by at least one
/// training triple (the standard link-prediction protocol).
pub fn random_triple_split(
    kg: &KnowledgeGraph,
    n_valid: usize,
    n_test: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Split> {
    let mut order: Vec<usize> = (0..kg.triples().len()).collect();
    order.shuffle(rng);
    let mut deg: Vec<usize> = (0..kg.n_entities())
        .map(|e| kg.degree(e as EntityId))
        .collect();
    let mut held = Vec::new();
    for idx in order {
        if held.len() == n_valid + n_test {
            break;
        }
        let t = kg.triples()[idx];
        let ok = if t.head == t.tail {
            deg[t.head as usize] > 2
        } else {
            deg[t.head as usize] > 1 && deg[t.tail as usize] > 1
        };
        if ok {
            deg[t.head as usize] -= 1;
            deg[t.tail as usize] -= 1;
            held.push(idx);
        }
    }
    if held.len() < n_valid + n_test {
        return Err(Error::data(format!(
            "random_triple_split: only {} of {} holdout triples available",
            held.len(),
            n_valid + n_test
        )));
    }
    let held_set: HashSet<usize> = held.iter().copied().collect();
    let train: Vec<Triple> = kg
        .triples()
        .iter()
        .enumerate()
        .filter(|(i, _)| !held_set.contains(i))
        .map(|(_, &t)| t)
        .collect();
    let valid: Vec<Triple> = held[..n_valid].iter().map(|&i| kg.triples()[i]).collect();
    let test: Vec<Triple> = held[n_valid..].iter().map(|&i| kg.triples()[i]).collect();
    Ok(Split {
        train: kg.with_triples(train)?,
        valid_triples: valid,
        test_triples: test,
        unseen_entities: HashSet::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn chain() -> KnowledgeGraph {
        KnowledgeGraph::from_named_triples(vec![("A", "r", "B"), ("B", "r", "C"), ("C", "r", "D")])
            .unwrap()
    }

    #[test]
    fn load_counts_and_dedup() {
        let kg = parse_triples("a\tr\tb\nb\tr\tc\n").unwrap();
        assert_eq!(kg.n_entities(), 3);
        assert_eq!(kg.n_relations(), 1);
        assert_eq!(kg.triples().len(), 2);

        let kg = parse_triples("a\tr\tb\na\tr\tb\n").unwrap();
        assert_eq!(kg.triples().len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_triples("a\tr\tb\nbad line\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_triples("").is_err());
    }

    #[test]
    fn descriptions_attach_by_name_and_report_skips() {
        let mut kg = chain();
        let report =
            parse_descriptions("A\talpha entity\nZZZ\tmissing\nB\tbeta entity\n", &mut kg).unwrap();
        assert_eq!(report.attached, 2);
        assert_eq!(report.skipped, vec!["ZZZ"]);
        assert_eq!(kg.description(0), Some("alpha entity"));
        assert_eq!(kg.n_descriptions(), 2);
    }

    #[test]
    fn reachability_on_chain() {
        let kg = chain();
        let (a, c) = (kg.entity_id("A").unwrap(), kg.entity_id("C").unwrap());
        assert!(k_hop_reachable(&kg, a, a, 0).unwrap());
        assert!(!k_hop_reachable(&kg, a, c, 1).unwrap());
        assert!(k_hop_reachable(&kg, a, c, 2).unwrap());
        assert!(k_hop_reachable(&kg, a, c, 10).unwrap());
        assert!(k_hop_reachable(&kg, 99, a, 1).is_err());
    }

    #[test]
    fn disconnected_pair_unreachable() {
        let kg =
            KnowledgeGraph::from_named_triples(vec![("A", "r", "B"), ("X", "r", "Y")]).unwrap();
        let (a, x) = (kg.entity_id("A").unwrap(), kg.entity_id("X").unwrap());
        for h in 0..=10 {
            assert!(!k_hop_reachable(&kg, a, x, h).unwrap());
        }
    }

    /// Independent oracle: boolean adjacency-matrix powers.
    fn reachable_oracle(kg: &KnowledgeGraph, a: usize, b: usize, hops: usize) -> bool {
        let n = kg.n_entities();
        let mut adj = vec![false; n * n];
        for t in kg.triples() {
            adj[t.head as usize * n + t.tail as usize] = true;
            adj[t.tail as usize * n + t.head as usize] = true;
        }
        let mut reach = vec![false; n * n];
        for i in 0..n {
            reach[i * n + i] = true;
        }
        for _ in 0..hops {
            let mut next = reach.clone();
            for i in 0..n {
                for j in 0..n {
                    if !next[i * n + j] {
                        next[i * n + j] = (0..n).any(|k| reach[i * n + k] && adj[k * n + j]);
                    }
                }
            }
            reach = next;
        }
        reach[a * n + b]
    }

    #[test]
    fn reachability_matches_matrix_oracle_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..25 {
            let n = rng.gen_range(3..20usize);
            let m = rng.gen_range(2..30usize);
            let names: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
            let triples: Vec<(String, String, String)> = (0..m)
                .map(|_| {
                    let h = rng.gen_range(0..n);
                    let t = rng.gen_range(0..n);
                    (names[h].clone(), "r".to_string(), names[t].clone())
                })
                .collect();
            let kg = KnowledgeGraph::from_named_triples(
                triples
                    .iter()
                    .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
            )
            .unwrap();
            for _ in 0..20 {
                let a = rng.gen_range(0..kg.n_entities());
                let b = rng.gen_range(0..kg.n_entities());
                let h = rng.gen_range(0..5usize);
                assert_eq!(
                    k_hop_reachable(&kg, a as EntityId, b as EntityId, h).unwrap(),
                    reachable_oracle(&kg, a, b, h),
                    "a={a} b={b} h={h}"
                );
            }
        }
    }

    #[test]
    fn pagerank_uniform_on_complete_graph() {
        let mut triples = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                if i < j {
                    triples.push((format!("n{i}"), "r".to_string(), format!("n{j}")));
                }
            }
        }
        let kg = KnowledgeGraph::from_named_triples(
            triples
                .iter()
                .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
        )
        .unwrap();
        let scores = importance_scores(&kg, 0.85, 100).unwrap();
        for &p in &scores.pagerank {
            assert!((p - 0.25).abs() < 1e-9, "pagerank {p}");
        }
        let sum: f64 = scores.pagerank.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn relation_entropy_zero_for_single_relation_type() {
        let kg = chain();
        let scores = importance_scores(&kg, 0.85, 50).unwrap();
        for &h in &scores.relation_entropy {
            assert_eq!(h, 0.0);
        }
    }

    /// Independent dense-matrix power-iteration oracle.
    fn pagerank_dense_oracle(kg: &KnowledgeGraph, damping: f64, iters: usize) -> Vec<f64> {
        let n = kg.n_entities();
        let mut m = vec![0.0f64; n * n]; // column-stochastic transition
        for u in 0..n {
            let deg = kg.degree(u as EntityId);
            if deg == 0 {
                for v in 0..n {
                    m[v * n + u] = 1.0 / n as f64;
                }
            } else {
                for e in kg.edges(u as EntityId) {
                    m[e.neighbor as usize * n + u] += 1.0 / deg as f64;
                }
            }
        }
        let mut pr = vec![1.0 / n as f64; n];
        for _ in 0..iters {
            let mut next = vec![(1.0 - damping) / n as f64; n];
            for v in 0..n {
                let mut acc = 0.0;
                for u in 0..n {
                    acc += m[v * n + u] * pr[u];
                }
                next[v] += damping * acc;
            }
            pr = next;
        }
        pr
    }

    #[test]
    fn pagerank_matches_dense_oracle_on_chain() {
        let kg = chain();
        let scores = importance_scores(&kg, 0.85, 100).unwrap();
        let oracle = pagerank_dense_oracle(&kg, 0.85, 100);
        for (a, b) in scores.pagerank.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn pagerank_invariant_under_relabeling() {
        let kg1 = KnowledgeGraph::from_named_triples(vec![
            ("A", "r", "B"),
            ("B", "r", "C"),
            ("A", "s", "C"),
        ])
        .unwrap();
        // Same undirected topology, entities introduced in another order.
        let kg2 = KnowledgeGraph::from_named_triples(vec![
            ("C", "s", "A"),
            ("B", "r", "C"),
            ("A", "r", "B"),
        ])
        .unwrap();
        let s1 = importance_scores(&kg1, 0.85, 100).unwrap();
        let s2 = importance_scores(&kg2, 0.85, 100).unwrap();
        for name in ["A", "B", "C"] {
            let p1 = s1.pagerank[kg1.entity_id(name).unwrap() as usize];
            let p2 = s2.pagerank[kg2.entity_id(name).unwrap() as usize];
            assert!((p1 - p2).abs() < 1e-10, "{name}: {p1} vs {p2}");
        }
    }

    #[test]
    fn subgraph_star_center_returns_all_spokes() {
        let triples: Vec<(String, String, String)> = (0..6)
            .map(|i| ("hub".to_string(), "r".to_string(), format!("s{i}")))
            .collect();
        let kg = KnowledgeGraph::from_named_triples(
            triples
                .iter()
                .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = sample_subgraph(&kg, kg.entity_id("hub").unwrap(), 1, 100, &mut rng).unwrap();
        assert_eq!(out.len(), 6);
    }

    #[test]
    fn subgraph_leaf_radius_one_is_single_triple() {
        let kg = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = sample_subgraph(&kg, kg.entity_id("A").unwrap(), 1, 100, &mut rng).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(kg.entity_name(out[0].head), "A");
    }

    #[test]
    fn subgraph_subsample_respects_radius_and_count() {
        // 20-triple two-hop neighborhood around "c", plus one edge beyond it.
        let mut triples = Vec::new();
        for i in 0..10 {
            triples.push(("c".to_string(), "r".to_string(), format!("m{i}")));
            triples.push((format!("m{i}"), "r".to_string(), format!("f{i}")));
        }
        triples.push(("f0".to_string(), "r".to_string(), "far".to_string()));
        let kg = KnowledgeGraph::from_named_triples(
            triples
                .iter()
                .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
        )
        .unwrap();
        let c = kg.entity_id("c").unwrap();
        let dist = neighborhood(&kg, c, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = sample_subgraph(&kg, c, 2, 5, &mut rng).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().any(|t| t.head == c || t.tail == c));
        for t in &out {
            let dh = dist.get(&t.head).copied().unwrap_or(usize::MAX);
            let dt = dist.get(&t.tail).copied().unwrap_or(usize::MAX);
            assert!(dh.min(dt) < 2, "triple outside radius: {t:?}");
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let out2 = sample_subgraph(&kg, c, 2, 5, &mut rng2).unwrap();
        assert_eq!(out, out2);
    }

    #[test]
    fn subgraph_isolated_seed_fails() {
        let mut kg = chain();
        kg.intern_entity("lonely");
        kg.rebuild_adjacency();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_subgraph(&kg, kg.entity_id("lonely").unwrap(), 1, 10, &mut rng).is_err());
    }

    #[test]
    fn zero_shot_split_chain_holds_out_middle() {
        let kg = chain();
        let c = kg.entity_id("C").unwrap();
        for seed in 0..64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let split = zero_shot_split(&kg, 0.25, &mut rng).unwrap();
            if split.unseen_entities.contains(&c) && split.unseen_entities.len() == 1 {
                let test_names: Vec<(String, String)> = split
                    .test_triples
                    .iter()
                    .map(|t| {
                        (
                            kg.entity_name(t.head).to_string(),
                            kg.entity_name(t.tail).to_string(),
                        )
                    })
                    .collect();
                assert_eq!(split.train.triples().len(), 1);
                assert_eq!(split.test_triples.len(), 2);
                assert!(test_names.contains(&("B".into(), "C".into())));
                assert!(test_names.contains(&("C".into(), "D".into())));
                return;
            }
        }
        panic!("no seed held out exactly C");
    }

    #[test]
    fn zero_shot_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let names: Vec<String> = (0..30).map(|i| format!("e{i}")).collect();
        let triples: Vec<(String, String, String)> = (0..80)
            .map(|_| {
                let h = rng.gen_range(0..30);
                let t = rng.gen_range(0..30);
                (
                    names[h].clone(),
                    format!("r{}", rng.gen_range(0..3)),
                    names[t].clone(),
                )
            })
            .collect();
        let kg = KnowledgeGraph::from_named_triples(
            triples
                .iter()
                .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
        )
        .unwrap();
        let split = zero_shot_split(&kg, 0.2, &mut rng).unwrap();
        for t in &split.test_triples {
            assert!(
                split.unseen_entities.contains(&t.head) || split.unseen_entities.contains(&t.tail)
            );
        }
        for t in split.train.triples() {
            assert!(!split.unseen_entities.contains(&t.head));
            assert!(!split.unseen_entities.contains(&t.tail));
        }
        assert_eq!(
            split.train.triples().len() + split.test_triples.len(),
            kg.triples().len()
        );
    }

    #[test]
    fn random_split_keeps_entities_covered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let names: Vec<String> = (0..20).map(|i| format!("e{i}")).collect();
        let mut triples = Vec::new();
        for i in 0..20 {
            for j in 1..4 {
                triples.push((
                    names[i].clone(),
                    "r".to_string(),
                    names[(i + j) % 20].clone(),
                ));
            }
        }
        let kg = KnowledgeGraph::from_named_triples(
            triples
                .iter()
                .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
        )
        .unwrap();
        let split = random_triple_split(&kg, 5, 10, &mut rng).unwrap();
        assert_eq!(split.valid_triples.len(), 5);
        assert_eq!(split.test_triples.len(), 10);
        for e in 0..20u32 {
            assert!(split.train.degree(e) > 0, "entity {e} lost train coverage");
        }
    }
}
