//! Synthetic knowledge-graph generator for tests and benchmarks.
//!
//! Entities form groups of members around shared hub entities. A member of
//! group `g` connects through relation `rel<j>` to `hub<(g + j mod 3) mod G>`,
//! so tail prediction is a learnable (group, relation) -> hub lookup, while
//! descriptions lexically tie members to their clan, realm and hubs, giving
//! description-based scorers a signal for entities never seen in training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kgstore::{KnowledgeGraph, Triple};

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub groups: usize,
    pub members_per_group: usize,
    pub relations: usize,
    /// Probability that each candidate triple is kept.
    pub keep_prob: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        // 8 * 24 members + 8 hubs = 200 entities, 8 relations,
        // ~0.97 * 1536 = ~1490 triples
        SynthSpec {
            groups: 8,
            members_per_group: 24,
            relations: 8,
            keep_prob: 0.97,
            seed: 2024,
        }
    }
}

/// Generate the graph together with templated per-entity descriptions.
pub fn generate(spec: &SynthSpec) -> Result<KnowledgeGraph> {
    let g = spec.groups;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows: Vec<(String, String, String)> = Vec::new();
    for grp in 0..g {
        for i in 0..spec.members_per_group {
            let member = format!("ent{grp}x{i}");
            for j in 0..spec.relations {
                if rng.gen::<f64>() < spec.keep_prob {
                    let hub = format!("hub{}", (grp + j % 3) % g);
                    rows.push((member.clone(), format!("rel{j}"), hub));
                }
            }
        }
    }
    let mut kg = KnowledgeGraph::from_named_triples(
        rows.iter()
            .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
    )?;
    for grp in 0..g {
        for i in 0..spec.members_per_group {
            let member = format!("ent{grp}x{i}");
            if let Some(id) = kg.entity_id(&member) {
                // discriminative words lead so budget truncation keeps them
                let desc = format!(
                    "clan{grp} realm{grp} hub{} hub{} hub{} member dwelling therein",
                    grp % g,
                    (grp + 1) % g,
                    (grp + 2) % g
                );
                kg.attach_description(id, desc);
            }
        }
        let hub = format!("hub{grp}");
        if let Some(id) = kg.entity_id(&hub) {
            let desc = format!(
                "hub{grp} nexus clan{} clan{} clan{grp} realm{grp} gathering",
                (grp + g - 2) % g,
                (grp + g - 1) % g
            );
            kg.attach_description(id, desc);
        }
    }
    Ok(kg)
}

/// Triples rendered back to `head<TAB>relation<TAB>tail` lines.
pub fn triples_to_text(kg: &KnowledgeGraph, triples: &[Triple]) -> String {
    let mut out = String::new();
    for t in triples {
        out.push_str(kg.entity_name(t.head));
        out.push('\t');
        out.push_str(kg.relation_name(t.rel));
        out.push('\t');
        out.push_str(kg.entity_name(t.tail));
        out.push('\n');
    }
    out
}

/// All attached descriptions as `entity_name<TAB>description` lines.
pub fn descriptions_to_text(kg: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for e in 0..kg.n_entities() as u32 {
        if let Some(d) = kg.description(e) {
            out.push_str(kg.entity_name(e));
            out.push('\t');
            out.push_str(d);
            out.push('\n');
        }
    }
    out
}
