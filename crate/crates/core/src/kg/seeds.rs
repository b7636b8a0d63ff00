use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{read_tsv, AlignmentStore, AttributeId, EntityId, KnowledgeGraph, Provenance, RelationId, ValueText};
use crate::error::{Error, Result};

/// Per-graph frequent attribute sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequentAttributes {
    pub left: BTreeSet<AttributeId>,
    pub right: BTreeSet<AttributeId>,
}

impl FrequentAttributes {
    /// Closes both sets under the store's attribute pairs: an aligned
    /// attribute is frequent on both sides if it is frequent on either.
    pub fn unified(&self, store: &AlignmentStore) -> FrequentAttributes {
        let mut out = self.clone();
        for (l, r, _) in store.attribute_pairs() {
            if self.left.contains(&l) || self.right.contains(&r) {
                out.left.insert(l);
                out.right.insert(r);
            }
        }
        out
    }

    /// K: number of distinct identifications once aligned pairs share one.
    pub fn united_len(&self, store: &AlignmentStore) -> usize {
        let u = self.unified(store);
        let shared = u
            .right
            .iter()
            .filter(|&&r| store.attribute_left_of(r).is_some_and(|l| u.left.contains(&l)))
            .count();
        u.left.len() + u.right.len() - shared
    }
}

/// Attributes occurring strictly more than `min_count` times in either graph.
pub fn frequent_attributes(g: &KnowledgeGraph, g2: &KnowledgeGraph, min_count: usize) -> FrequentAttributes {
    let pick = |g: &KnowledgeGraph| {
        (0..g.num_attributes())
            .map(AttributeId::from)
            .filter(|&a| g.attribute_count(a) > min_count)
            .collect()
    };
    FrequentAttributes {
        left: pick(g),
        right: pick(g2),
    }
}

/// The value slots of `e` fed to the attribute model.
///
/// Frequent-attribute triples are ranked by global attribute frequency
/// (descending), then attribute id, then value; the first `m` are kept.
pub fn top_m_attr_slots<'g>(
    g: &'g KnowledgeGraph,
    e: EntityId,
    m: usize,
    frequent: &BTreeSet<AttributeId>,
) -> Vec<(AttributeId, &'g ValueText)> {
    let mut slots: Vec<_> = g
        .entity_attrs(e)
        .filter(|t| frequent.contains(&t.attribute))
        .map(|t| (t.attribute, &t.value))
        .collect();
    slots.sort_by(|a, b| {
        g.attribute_count(b.0)
            .cmp(&g.attribute_count(a.0))
            .then(a.0.cmp(&b.0))
            .then_with(|| a.1.raw().cmp(b.1.raw()))
    });
    slots.truncate(m);
    slots
}

/// Reads an ILL file: `left<TAB>right` per line.
pub fn load_ills(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    Ok(read_tsv(path.as_ref(), 2)?
        .into_iter()
        .map(|mut r| {
            let right = r.pop().unwrap();
            let left = r.pop().unwrap();
            (left, right)
        })
        .collect())
}

/// Maps ILL label pairs to entity ids.
pub fn resolve_ills(
    g: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    pairs: &[(String, String)],
) -> Result<Vec<(EntityId, EntityId)>> {
    pairs
        .iter()
        .map(|(l, r)| {
            let le = g.entity_id(l).ok_or_else(|| Error::UnknownEntity(l.clone()))?;
            let re = g2.entity_id(r).ok_or_else(|| Error::UnknownEntity(r.clone()))?;
            Ok((le, re))
        })
        .collect()
}

/// Comparison key for the same-name rule: trimmed, case-folded local name
/// (the part after the last `/` or `#` of a URI).
pub(crate) fn name_key(label: &str) -> String {
    let local = label.rsplit(['/', '#']).next().unwrap_or(label);
    local.trim().to_lowercase()
}

fn same_name_pairs<'a>(left: &'a [String], right: &'a [String]) -> Vec<(usize, usize)> {
    let mut by_key: BTreeMap<String, usize> = BTreeMap::new();
    for (i, l) in right.iter().enumerate() {
        by_key.entry(name_key(l)).or_insert(i);
    }
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for (i, l) in left.iter().enumerate() {
        if let Some(&j) = by_key.get(&name_key(l)) {
            if used.insert(j) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Value pairs `(v, v')` of triples whose entities and attributes are both
/// aligned in `store`.
pub fn implied_value_pairs(g: &KnowledgeGraph, g2: &KnowledgeGraph, store: &AlignmentStore) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for (m, n, _) in store.entity_pairs() {
        let right: Vec<_> = g2.entity_attrs(n).collect();
        for t in g.entity_attrs(m) {
            let Some(a2) = store.attribute_right_of(t.attribute) else {
                continue;
            };
            for t2 in right.iter().filter(|t2| t2.attribute == a2) {
                out.insert((t.value.raw().to_owned(), t2.value.raw().to_owned()));
            }
        }
    }
    out
}

/// Initial seed set: ILL entity pairs, same-name relation and attribute pairs,
/// and the values implied by both.
pub fn build_initial_seeds(
    g: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    ill_train: &[(String, String)],
) -> Result<AlignmentStore> {
    let mut store = AlignmentStore::new();
    for (l, r) in resolve_ills(g, g2, ill_train)? {
        store.insert_entity(l, r, Provenance::Seed)?;
    }
    for (i, j) in same_name_pairs(g.relations().labels(), g2.relations().labels()) {
        store.insert_relation(RelationId::from(i), RelationId::from(j), Provenance::Seed)?;
    }
    for (i, j) in same_name_pairs(g.attributes().labels(), g2.attributes().labels()) {
        store.insert_attribute(AttributeId::from(i), AttributeId::from(j), Provenance::Seed)?;
    }
    for (v, v2) in implied_value_pairs(g, g2, &store) {
        store.insert_value(v, v2, Provenance::Seed);
    }
    Ok(store)
}
