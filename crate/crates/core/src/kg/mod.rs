//! Knowledge graph data model and ingestion.
//!
//! A graph is the union of relationship triples `(head, relation, tail)` and
//! attribute triples `(head, attribute, value)`. Entities, relations and
//! attributes are interned into dense ids in first-appearance order, so
//! loading the same files twice yields identical ids.

mod seeds;
mod store;
mod value;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use seeds::{
    build_initial_seeds, frequent_attributes, implied_value_pairs, load_ills, resolve_ills, top_m_attr_slots,
    FrequentAttributes,
};
pub use store::{AlignmentStore, CandidateSet, Provenance};
pub use value::{tokenize, ValueText};

macro_rules! id_newtype {
    ($name:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl From<usize> for $name {
            fn from(i: usize) -> Self {
                $name(i as u32)
            }
        }
    };
}

id_newtype!(EntityId);
id_newtype!(RelationId);
id_newtype!(AttributeId);

/// Bijective label ↔ dense id table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    labels: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.ids.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelTriple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttrTriple {
    pub head: EntityId,
    pub attribute: AttributeId,
    pub value: ValueText,
}

/// An interned, immutable knowledge graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    attributes: Interner,
    rel_triples: Vec<RelTriple>,
    attr_triples: Vec<AttrTriple>,
    /// Per-entity indices into `attr_triples`, sorted by (attribute, value).
    attrs_by_entity: Vec<Vec<usize>>,
    attr_counts: Vec<usize>,
}

impl KnowledgeGraph {
    /// Builds a graph from label triples. Duplicates collapse; ids follow
    /// first appearance, relationship triples before attribute triples.
    pub fn from_triples<'a, R, A>(rel: R, attr: A) -> Self
    where
        R: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
        A: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut builder = GraphBuilder::default();
        for (h, r, t) in rel {
            builder.add_rel(h, r, t);
        }
        for (h, a, v) in attr {
            builder.add_attr(h, a, v);
        }
        builder.finish()
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn attributes(&self) -> &Interner {
        &self.attributes
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn rel_triples(&self) -> &[RelTriple] {
        &self.rel_triples
    }

    pub fn attr_triples(&self) -> &[AttrTriple] {
        &self.attr_triples
    }

    /// Attribute triples of `e`, ordered by (attribute id, value).
    pub fn entity_attrs(&self, e: EntityId) -> impl Iterator<Item = &AttrTriple> + '_ {
        self.attrs_by_entity
            .get(e.index())
            .into_iter()
            .flatten()
            .map(move |&i| &self.attr_triples[i])
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        self.entities.label(e.0)
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        self.relations.label(r.0)
    }

    pub fn attribute_label(&self, a: AttributeId) -> &str {
        self.attributes.label(a.0)
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn attribute_id(&self, label: &str) -> Option<AttributeId> {
        self.attributes.get(label).map(AttributeId)
    }

    /// Number of attribute triples using `a`.
    pub fn attribute_count(&self, a: AttributeId) -> usize {
        self.attr_counts[a.index()]
    }
}

#[derive(Default)]
struct GraphBuilder {
    entities: Interner,
    relations: Interner,
    attributes: Interner,
    rel: BTreeSet<RelTriple>,
    attr: BTreeSet<AttrTriple>,
}

impl GraphBuilder {
    fn add_rel(&mut self, h: &str, r: &str, t: &str) {
        let head = EntityId(self.entities.intern(h));
        let relation = RelationId(self.relations.intern(r));
        let tail = EntityId(self.entities.intern(t));
        self.rel.insert(RelTriple { head, relation, tail });
    }

    fn add_attr(&mut self, h: &str, a: &str, v: &str) {
        let head = EntityId(self.entities.intern(h));
        let attribute = AttributeId(self.attributes.intern(a));
        self.attr.insert(AttrTriple {
            head,
            attribute,
            value: ValueText::new(v),
        });
    }

    fn finish(self) -> KnowledgeGraph {
        let rel_triples: Vec<_> = self.rel.into_iter().collect();
        // BTreeSet order is (head, attribute, value): already grouped per entity.
        let attr_triples: Vec<_> = self.attr.into_iter().collect();
        let mut attrs_by_entity = vec![Vec::new(); self.entities.len()];
        let mut attr_counts = vec![0; self.attributes.len()];
        for (i, t) in attr_triples.iter().enumerate() {
            attrs_by_entity[t.head.index()].push(i);
            attr_counts[t.attribute.index()] += 1;
        }
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            attributes: self.attributes,
            rel_triples,
            attr_triples,
            attrs_by_entity,
            attr_counts,
        }
    }
}

/// Reads a tab-separated file with exactly `fields` columns per non-empty line.
pub(crate) fn read_tsv(path: &Path, fields: usize) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != fields {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("expected {fields} tab-separated fields, found {}", parts.len()),
            });
        }
        rows.push(parts.into_iter().map(str::to_owned).collect());
    }
    Ok(rows)
}

/// Loads a graph from a relationship triple file and an attribute triple file.
pub fn load_graph(rel_path: impl AsRef<Path>, attr_path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let rel = read_tsv(rel_path.as_ref(), 3)?;
    let attr = read_tsv(attr_path.as_ref(), 3)?;
    Ok(KnowledgeGraph::from_triples(
        rel.iter().map(|r| (r[0].as_str(), r[1].as_str(), r[2].as_str())),
        attr.iter().map(|r| (r[0].as_str(), r[1].as_str(), r[2].as_str())),
    ))
}
