//! Joint token/entity vocabulary and sequence serialization.
//!
//! A vocabulary holds four disjoint id ranges: specials (PAD, BOS, EOS, SEP,
//! MASK), lowercased text words from entity descriptions, one dedicated
//! symbol per entity, and one per relation. Sequences are laid out as triple
//! frames (`head relation tail SEP`) followed by description frames
//! (`entity word... SEP`), bracketed by BOS/EOS. BOS is always position 0 so
//! every maskable position has a predecessor.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kgstore::{EntityId, KnowledgeGraph, RelationId, Triple};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const MASK: TokenId = 4;
pub const UNK: TokenId = 5;

const N_SPECIALS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Text,
    Entity,
    Relation,
    Special,
}

impl TokenKind {
    pub fn index(self) -> usize {
        match self {
            TokenKind::Text => 0,
            TokenKind::Entity => 1,
            TokenKind::Relation => 2,
            TokenKind::Special => 3,
        }
    }
}

/// Number of token kinds (for the kind embedding table).
pub const N_KINDS: usize = 4;

#[derive(Debug, Clone)]
pub struct Vocab {
    surfaces: Vec<String>,
    kinds: Vec<TokenKind>,
    text_lookup: HashMap<String, TokenId>,
    n_text: u32,
    n_entities: u32,
    n_relations: u32,
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.surfaces.len()
    }

    pub fn n_text(&self) -> u32 {
        self.n_text
    }

    pub fn n_entities(&self) -> u32 {
        self.n_entities
    }

    pub fn n_relations(&self) -> u32 {
        self.n_relations
    }

    pub fn entity_base(&self) -> TokenId {
        N_SPECIALS + self.n_text
    }

    pub fn entity_symbol(&self, e: EntityId) -> TokenId {
        debug_assert!(e < self.n_entities);
        self.entity_base() + e
    }

    pub fn relation_symbol(&self, r: RelationId) -> TokenId {
        debug_assert!(r < self.n_relations);
        N_SPECIALS + self.n_text + self.n_entities + r
    }

    /// Text token id for a (already lowercased) word, falling back to UNK.
    pub fn text_token(&self, word: &str) -> TokenId {
        self.text_lookup.get(word).copied().unwrap_or(UNK)
    }

    pub fn kind_of(&self, tok: TokenId) -> TokenKind {
        self.kinds[tok as usize]
    }

    pub fn surface(&self, tok: TokenId) -> &str {
        &self.surfaces[tok as usize]
    }

    /// Entity id carried by an entity-symbol token, if any.
    pub fn entity_of_symbol(&self, tok: TokenId) -> Option<EntityId> {
        let base = self.entity_base();
        if tok >= base && tok < base + self.n_entities {
            Some(tok - base)
        } else {
            None
        }
    }

    /// Serialize as `class<TAB>surface<TAB>id` lines in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, (surface, kind)) in self.surfaces.iter().zip(self.kinds.iter()).enumerate() {
            let class = match kind {
                TokenKind::Special => "special",
                TokenKind::Text => "text",
                TokenKind::Entity => "entity",
                TokenKind::Relation => "relation",
            };
            out.push_str(class);
            out.push('\t');
            out.push_str(surface);
            out.push('\t');
            out.push_str(&id.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Vocab> {
        let mut surfaces = Vec::new();
        let mut kinds = Vec::new();
        let (mut n_text, mut n_entities, mut n_relations) = (0u32, 0u32, 0u32);
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split('\t');
            let (Some(class), Some(surface), Some(id), None) =
                (it.next(), it.next(), it.next(), it.next())
            else {
                return Err(Error::data(format!(
                    "vocab line {}: bad format",
                    lineno + 1
                )));
            };
            let id: usize = id
                .parse()
                .map_err(|_| Error::data(format!("vocab line {}: bad id {id:?}", lineno + 1)))?;
            if id != surfaces.len() {
                return Err(Error::data(format!(
                    "vocab line {}: id {id} out of order (expected {})",
                    lineno + 1,
                    surfaces.len()
                )));
            }
            let kind = match class {
                "special" => TokenKind::Special,
                "text" => {
                    n_text += 1;
                    TokenKind::Text
                }
                "entity" => {
                    n_entities += 1;
                    TokenKind::Entity
                }
                "relation" => {
                    n_relations += 1;
                    TokenKind::Relation
                }
                other => {
                    return Err(Error::data(format!(
                        "vocab line {}: unknown class {other:?}",
                        lineno + 1
                    )))
                }
            };
            surfaces.push(surface.to_string());
            kinds.push(kind);
        }
        if surfaces.len() < N_SPECIALS as usize + 1 {
            return Err(Error::data("vocab too small"));
        }
        let mut text_lookup = HashMap::new();
        for (id, (s, k)) in surfaces.iter().zip(kinds.iter()).enumerate() {
            if *k == TokenKind::Text {
                text_lookup.insert(s.clone(), id as TokenId);
            }
        }
        Ok(Vocab {
            surfaces,
            kinds,
            text_lookup,
            n_text,
            n_entities,
            n_relations,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Vocab> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::data(format!("{}: {e}", path.as_ref().display())))?;
        Vocab::parse(&text)
    }

    /// Hex SHA-256 of the canonical serialization; stored in checkpoints to
    /// guard against evaluating with the wrong vocabulary.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// Lowercase and split on non-alphanumeric runs.
pub fn tokenize_text(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_string())
        .collect()
}

/// Build the joint vocabulary: description words with frequency >= `min_freq`
/// (rarer words fold into UNK), one symbol per entity, one per relation.
pub fn build_vocab(kg: &KnowledgeGraph, min_freq: usize) -> Result<Vocab> {
    let mut freq: HashMap<String, usize> = HashMap::new();
    for e in 0..kg.n_entities() {
        if let Some(desc) = kg.description(e as EntityId) {
            for w in tokenize_text(desc) {
                *freq.entry(w).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(_, c)| *c >= min_freq.max(1))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut surfaces = vec![
        "<pad>".to_string(),
        "<bos>".to_string(),
        "<eos>".to_string(),
        "<sep>".to_string(),
        "<mask>".to_string(),
        "<unk>".to_string(),
    ];
    let mut kinds = vec![TokenKind::Special; 5];
    kinds.push(TokenKind::Text); // <unk>
    for (w, _) in &kept {
        surfaces.push(w.clone());
        kinds.push(TokenKind::Text);
    }
    for e in 0..kg.n_entities() {
        let name = kg.entity_name(e as EntityId);
        if name.contains('\t') || name.contains('\n') {
            return Err(Error::data(format!(
                "entity name {name:?} contains tab/newline"
            )));
        }
        surfaces.push(name.to_string());
        kinds.push(TokenKind::Entity);
    }
    for r in 0..kg.n_relations() {
        let name = kg.relation_name(r as RelationId);
        if name.contains('\t') || name.contains('\n') {
            return Err(Error::data(format!(
                "relation name {name:?} contains tab/newline"
            )));
        }
        surfaces.push(name.to_string());
        kinds.push(TokenKind::Relation);
    }
    let n_text = 1 + kept.len() as u32;
    let mut text_lookup = HashMap::new();
    for (id, (s, k)) in surfaces.iter().zip(kinds.iter()).enumerate() {
        if *k == TokenKind::Text {
            text_lookup.insert(s.clone(), id as TokenId);
        }
    }
    Ok(Vocab {
        surfaces,
        kinds,
        text_lookup,
        n_text,
        n_entities: kg.n_entities() as u32,
        n_relations: kg.n_relations() as u32,
    })
}

/// Token sequence with per-position structure: the kind of each position and,
/// for entity symbols, the entity they stand for.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub kinds: Vec<TokenKind>,
    pub entity_of: Vec<Option<EntityId>>,
    pub source_triples: Vec<Triple>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Distinct entities present, in first-appearance order.
    pub fn entities(&self) -> Vec<EntityId> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for e in self.entity_of.iter().flatten() {
            if seen.insert(*e) {
                out.push(*e);
            }
        }
        out
    }
}

/// Serialize triples plus available entity descriptions into one sequence:
/// `BOS (h r t SEP)* (e w... SEP)* EOS`, hard-truncated to `max_len` with a
/// terminal EOS. The description token budget is split equally across the
/// entities that have one.
pub fn serialize(
    triples: &[Triple],
    kg: &KnowledgeGraph,
    vocab: &Vocab,
    max_len: usize,
) -> Result<TokenSequence> {
    serialize_with(triples, |e| kg.description(e), vocab, max_len)
}

/// `serialize` with an explicit description source, so augmentation can
/// substitute edited descriptions without touching the graph.
pub fn serialize_with<'a>(
    triples: &[Triple],
    desc_of: impl Fn(EntityId) -> Option<&'a str>,
    vocab: &Vocab,
    max_len: usize,
) -> Result<TokenSequence> {
    if triples.is_empty() {
        return Err(Error::data("serialize: empty triple list"));
    }
    if max_len < 4 {
        return Err(Error::data(format!("serialize: max_len {max_len} < 4")));
    }
    let mut seq = TokenSequence {
        ids: vec![BOS],
        kinds: vec![TokenKind::Special],
        entity_of: vec![None],
        source_triples: triples.to_vec(),
    };
    let push = |seq: &mut TokenSequence, id: TokenId, kind: TokenKind, ent: Option<EntityId>| {
        seq.ids.push(id);
        seq.kinds.push(kind);
        seq.entity_of.push(ent);
    };
    let mut order: Vec<EntityId> = Vec::new();
    for t in triples {
        push(
            &mut seq,
            vocab.entity_symbol(t.head),
            TokenKind::Entity,
            Some(t.head),
        );
        push(
            &mut seq,
            vocab.relation_symbol(t.rel),
            TokenKind::Relation,
            None,
        );
        push(
            &mut seq,
            vocab.entity_symbol(t.tail),
            TokenKind::Entity,
            Some(t.tail),
        );
        push(&mut seq, SEP, TokenKind::Special, None);
        for e in [t.head, t.tail] {
            if !order.contains(&e) {
                order.push(e);
            }
        }
    }

    let described: Vec<(EntityId, Vec<String>)> = order
        .iter()
        .filter_map(|&e| desc_of(e).map(|d| (e, tokenize_text(d))))
        .collect();
    if !described.is_empty() {
        // Equal word budget per described entity within what's left of
        // max_len after frames and the closing EOS.
        let frame_overhead = 2 * described.len(); // entity symbol + SEP each
        let used = seq.ids.len() + 1; // current tokens + EOS
        let budget = max_len.saturating_sub(used + frame_overhead) / described.len();
        if budget >= 1 {
            for (e, words) in &described {
                push(
                    &mut seq,
                    vocab.entity_symbol(*e),
                    TokenKind::Entity,
                    Some(*e),
                );
                for w in words.iter().take(budget) {
                    push(&mut seq, vocab.text_token(w), TokenKind::Text, None);
                }
                push(&mut seq, SEP, TokenKind::Special, None);
            }
        }
    }
    push(&mut seq, EOS, TokenKind::Special, None);

    if seq.ids.len() > max_len {
        seq.ids.truncate(max_len - 1);
        seq.kinds.truncate(max_len - 1);
        seq.entity_of.truncate(max_len - 1);
        seq.ids.push(EOS);
        seq.kinds.push(TokenKind::Special);
        seq.entity_of.push(None);
    }
    debug_assert!(seq
        .kinds
        .iter()
        .zip(seq.entity_of.iter())
        .all(|(k, e)| (*k == TokenKind::Entity) == e.is_some()));
    Ok(seq)
}

/// Description-only sequence for one entity: `BOS e w... SEP EOS`.
/// Used by the embedding-similarity scorer.
pub fn serialize_description(
    entity: EntityId,
    kg: &KnowledgeGraph,
    vocab: &Vocab,
    max_len: usize,
) -> Result<TokenSequence> {
    if max_len < 4 {
        return Err(Error::data(format!(
            "serialize_description: max_len {max_len} < 4"
        )));
    }
    let mut seq = TokenSequence {
        ids: vec![BOS, vocab.entity_symbol(entity)],
        kinds: vec![TokenKind::Special, TokenKind::Entity],
        entity_of: vec![None, Some(entity)],
        source_triples: Vec::new(),
    };
    if let Some(desc) = kg.description(entity) {
        for w in tokenize_text(desc).iter().take(max_len.saturating_sub(4)) {
            seq.ids.push(vocab.text_token(w));
            seq.kinds.push(TokenKind::Text);
            seq.entity_of.push(None);
        }
    }
    seq.ids.push(SEP);
    seq.kinds.push(TokenKind::Special);
    seq.entity_of.push(None);
    seq.ids.push(EOS);
    seq.kinds.push(TokenKind::Special);
    seq.entity_of.push(None);
    Ok(seq)
}

/// Recover the triple frames of an untruncated sequence by scanning
/// `(entity, relation, entity, SEP)` windows from position 1.
pub fn recover_triples(seq: &TokenSequence, vocab: &Vocab) -> Vec<Triple> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 3 < seq.len() {
        let (a, b, c, d) = (seq.ids[i], seq.ids[i + 1], seq.ids[i + 2], seq.ids[i + 3]);
        let (Some(h), Some(t)) = (vocab.entity_of_symbol(a), vocab.entity_of_symbol(c)) else {
            break;
        };
        if vocab.kind_of(b) != TokenKind::Relation || d != SEP {
            break;
        }
        let rel = b - N_SPECIALS - vocab.n_text - vocab.n_entities;
        out.push(Triple {
            head: h,
            rel,
            tail: t,
        });
        i += 4;
    }
    out
}
