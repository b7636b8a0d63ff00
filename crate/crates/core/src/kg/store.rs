use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::{AttributeId, EntityId, RelationId};
use crate::error::{Error, Result};

/// Where an alignment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Seed,
    AttributeView,
    RelationshipView,
    Merged,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Seed => "seed",
            Provenance::AttributeView => "attribute-view",
            Provenance::RelationshipView => "relationship-view",
            Provenance::Merged => "merged",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "seed" => Provenance::Seed,
            "attribute-view" => Provenance::AttributeView,
            "relationship-view" => Provenance::RelationshipView,
            "merged" => Provenance::Merged,
            other => return Err(Error::Invalid(format!("unknown provenance `{other}`"))),
        })
    }
}

/// One-to-one pair set with provenance.
#[derive(Debug, Clone)]
struct Bijection<K: Copy + Ord + Hash> {
    pairs: BTreeMap<(K, K), Provenance>,
    left: HashMap<K, K>,
    right: HashMap<K, K>,
}

impl<K: Copy + Ord + Hash> Default for Bijection<K> {
    fn default() -> Self {
        Bijection {
            pairs: BTreeMap::new(),
            left: HashMap::new(),
            right: HashMap::new(),
        }
    }
}

impl<K: Copy + Ord + Hash + fmt::Debug> Bijection<K> {
    fn insert(&mut self, l: K, r: K, prov: Provenance) -> Result<bool> {
        match (self.left.get(&l), self.right.get(&r)) {
            (Some(&r0), _) if r0 == r => return Ok(false),
            (None, None) => {}
            _ => {
                return Err(Error::Conflict(format!(
                    "({l:?}, {r:?}) reuses an already aligned endpoint"
                )))
            }
        }
        self.left.insert(l, r);
        self.right.insert(r, l);
        self.pairs.insert((l, r), prov);
        Ok(true)
    }

    fn can_insert(&self, l: K, r: K) -> bool {
        !self.left.contains_key(&l) && !self.right.contains_key(&r)
    }
}

/// The growing set `I` of aligned entities, relations, attributes and values.
///
/// Entity, relation and attribute pairs are one-to-one; inserting a pair that
/// reuses an aligned endpoint is rejected. Nothing is ever removed.
#[derive(Debug, Clone, Default)]
pub struct AlignmentStore {
    ent: Bijection<EntityId>,
    rel: Bijection<RelationId>,
    attr: Bijection<AttributeId>,
    val: BTreeMap<(String, String), Provenance>,
}

impl AlignmentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `Ok(false)` if the exact pair is already present.
    pub fn insert_entity(&mut self, l: EntityId, r: EntityId, prov: Provenance) -> Result<bool> {
        self.ent.insert(l, r, prov)
    }

    pub fn insert_relation(&mut self, l: RelationId, r: RelationId, prov: Provenance) -> Result<bool> {
        self.rel.insert(l, r, prov)
    }

    pub fn insert_attribute(&mut self, l: AttributeId, r: AttributeId, prov: Provenance) -> Result<bool> {
        self.attr.insert(l, r, prov)
    }

    pub fn insert_value(&mut self, l: impl Into<String>, r: impl Into<String>, prov: Provenance) -> bool {
        let key = (l.into(), r.into());
        if self.val.contains_key(&key) {
            return false;
        }
        self.val.insert(key, prov);
        true
    }

    pub fn can_align_entities(&self, l: EntityId, r: EntityId) -> bool {
        self.ent.can_insert(l, r)
    }

    pub fn can_align_relations(&self, l: RelationId, r: RelationId) -> bool {
        self.rel.can_insert(l, r)
    }

    pub fn can_align_attributes(&self, l: AttributeId, r: AttributeId) -> bool {
        self.attr.can_insert(l, r)
    }

    pub fn entity_pairs(&self) -> impl Iterator<Item = (EntityId, EntityId, Provenance)> + '_ {
        self.ent.pairs.iter().map(|(&(l, r), &p)| (l, r, p))
    }

    pub fn relation_pairs(&self) -> impl Iterator<Item = (RelationId, RelationId, Provenance)> + '_ {
        self.rel.pairs.iter().map(|(&(l, r), &p)| (l, r, p))
    }

    pub fn attribute_pairs(&self) -> impl Iterator<Item = (AttributeId, AttributeId, Provenance)> + '_ {
        self.attr.pairs.iter().map(|(&(l, r), &p)| (l, r, p))
    }

    pub fn value_pairs(&self) -> impl Iterator<Item = (&str, &str, Provenance)> + '_ {
        self.val.iter().map(|((l, r), &p)| (l.as_str(), r.as_str(), p))
    }

    pub fn contains_entity_pair(&self, l: EntityId, r: EntityId) -> bool {
        self.ent.pairs.contains_key(&(l, r))
    }

    pub fn contains_value_pair(&self, l: &str, r: &str) -> bool {
        self.val.contains_key(&(l.to_owned(), r.to_owned()))
    }

    pub fn entity_right_of(&self, l: EntityId) -> Option<EntityId> {
        self.ent.left.get(&l).copied()
    }

    pub fn entity_left_of(&self, r: EntityId) -> Option<EntityId> {
        self.ent.right.get(&r).copied()
    }

    pub fn relation_right_of(&self, l: RelationId) -> Option<RelationId> {
        self.rel.left.get(&l).copied()
    }

    pub fn relation_left_of(&self, r: RelationId) -> Option<RelationId> {
        self.rel.right.get(&r).copied()
    }

    pub fn attribute_right_of(&self, l: AttributeId) -> Option<AttributeId> {
        self.attr.left.get(&l).copied()
    }

    pub fn attribute_left_of(&self, r: AttributeId) -> Option<AttributeId> {
        self.attr.right.get(&r).copied()
    }

    pub fn num_entity_pairs(&self) -> usize {
        self.ent.pairs.len()
    }

    pub fn num_relation_pairs(&self) -> usize {
        self.rel.pairs.len()
    }

    pub fn num_attribute_pairs(&self) -> usize {
        self.attr.pairs.len()
    }

    pub fn num_value_pairs(&self) -> usize {
        self.val.len()
    }

    /// |I| over all four object types.
    pub fn len(&self) -> usize {
        self.num_entity_pairs() + self.num_relation_pairs() + self.num_attribute_pairs() + self.num_value_pairs()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The candidate entity pairs `C`: every pair whose endpoints are both still
/// unaligned and that has not been consumed by an earlier iteration.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    left_taken: Vec<bool>,
    right_taken: Vec<bool>,
    removed: HashSet<(EntityId, EntityId)>,
}

impl CandidateSet {
    pub fn new(n_left: usize, n_right: usize, store: &AlignmentStore) -> Self {
        let mut c = CandidateSet {
            left_taken: vec![false; n_left],
            right_taken: vec![false; n_right],
            removed: HashSet::new(),
        };
        c.remove_pairs(store.entity_pairs().map(|(l, r, _)| (l, r)));
        c
    }

    pub fn contains(&self, l: EntityId, r: EntityId) -> bool {
        !self.left_taken[l.index()] && !self.right_taken[r.index()] && !self.removed.contains(&(l, r))
    }

    pub fn left_available(&self, l: EntityId) -> bool {
        !self.left_taken[l.index()]
    }

    pub fn right_available(&self, r: EntityId) -> bool {
        !self.right_taken[r.index()]
    }

    pub fn remove_pairs(&mut self, pairs: impl IntoIterator<Item = (EntityId, EntityId)>) {
        for (l, r) in pairs {
            self.left_taken[l.index()] = true;
            self.right_taken[r.index()] = true;
            self.removed.insert((l, r));
        }
    }

    /// Number of candidate pairs left.
    pub fn len(&self) -> usize {
        let l = self.left_taken.iter().filter(|t| !**t).count();
        let r = self.right_taken.iter().filter(|t| !**t).count();
        l * r
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `C ∩ I = ∅`.
    pub fn is_disjoint_from(&self, store: &AlignmentStore) -> bool {
        store.entity_pairs().all(|(l, r, _)| !self.contains(l, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_to_one_is_enforced() {
        let mut s = AlignmentStore::new();
        assert!(s.insert_entity(EntityId(0), EntityId(1), Provenance::Seed).unwrap());
        assert!(!s.insert_entity(EntityId(0), EntityId(1), Provenance::Merged).unwrap());
        assert!(s.insert_entity(EntityId(0), EntityId(2), Provenance::Seed).is_err());
        assert!(s.insert_entity(EntityId(3), EntityId(1), Provenance::Seed).is_err());
        assert_eq!(s.num_entity_pairs(), 1);
        assert_eq!(s.entity_pairs().next().unwrap().2, Provenance::Seed);
    }

    #[test]
    fn candidates_exclude_aligned_endpoints() {
        let mut s = AlignmentStore::new();
        s.insert_entity(EntityId(0), EntityId(0), Provenance::Seed).unwrap();
        let mut c = CandidateSet::new(3, 3, &s);
        assert_eq!(c.len(), 4);
        assert!(!c.contains(EntityId(0), EntityId(1)));
        assert!(c.contains(EntityId(1), EntityId(2)));
        s.insert_entity(EntityId(1), EntityId(2), Provenance::Merged).unwrap();
        assert!(!c.is_disjoint_from(&s));
        c.remove_pairs([(EntityId(1), EntityId(2))]);
        assert!(c.is_disjoint_from(&s));
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn provenance_parses_back() {
        for p in [Provenance::Seed, Provenance::AttributeView, Provenance::RelationshipView, Provenance::Merged] {
            assert_eq!(p.as_str().parse::<Provenance>().unwrap(), p);
        }
    }
}
