//! Synthetic cross-lingual graph pairs with complete ground truth.
//!
//! The left graph uses tokens `w0..w{V-1}` drawn with Zipf frequencies. The
//! right graph is the same graph pushed through a random bijective token
//! dictionary (`w_i -> t_π(i)`), with renamed entities, partially renamed
//! relations and attributes, and optionally dropped triples. Every entity
//! carries a unique two-token `name` value that is never dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{AlignmentStore, KnowledgeGraph, Provenance};

pub const NAME_ATTRIBUTE: &str = "name";
pub const ZIPF_EXPONENT: f64 = 1.0;

pub const REL_FILES: [&str; 2] = ["rel_triples_1", "rel_triples_2"];
pub const ATTR_FILES: [&str; 2] = ["attr_triples_1", "attr_triples_2"];
pub const ILL_FILE: &str = "ent_ILLs";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.tsv";
pub const DICTIONARY_FILE: &str = "dictionary.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    /// Attributes besides `name`.
    pub n_attributes: usize,
    /// Relationship triples per entity.
    pub rel_density: f64,
    /// Non-name attribute triples per entity (rounded).
    pub attr_per_entity: f64,
    pub dictionary_size: usize,
    pub drop_prob: f64,
    pub seed_fraction: f64,
    /// Fraction of non-name relation and attribute labels kept identical in
    /// the right graph.
    pub shared_label_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_entities: 300,
            n_relations: 10,
            n_attributes: 8,
            rel_density: 3.0,
            attr_per_entity: 3.0,
            dictionary_size: 400,
            drop_prob: 0.0,
            seed_fraction: 0.3,
            shared_label_fraction: 0.5,
            rng_seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn n_rel_triples(&self) -> usize {
        (self.n_entities as f64 * self.rel_density).round() as usize
    }

    pub fn attrs_per_entity(&self) -> usize {
        self.attr_per_entity.round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_owned()));
        if self.n_entities < 2 || self.n_relations == 0 || self.dictionary_size < 2 {
            return bad("need at least 2 entities, 1 relation and 2 dictionary tokens");
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return bad("drop_prob must lie in [0, 1)");
        }
        if !(self.seed_fraction > 0.0 && self.seed_fraction < 1.0) {
            return bad("seed_fraction must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.shared_label_fraction) {
            return bad("shared_label_fraction must lie in [0, 1]");
        }
        if !(self.attr_per_entity >= 0.0) || self.attrs_per_entity() > self.n_attributes {
            return bad("attr_per_entity must be between 0 and n_attributes");
        }
        let n = self.n_entities;
        if self.n_rel_triples() < n || self.n_rel_triples() > n * (n - 1) * self.n_relations {
            return bad("rel_density must give between 1 and (n-1)·relations triples per entity");
        }
        let v = self.dictionary_size;
        if v * (v - 1) / 2 < n {
            return bad("dictionary too small for unique two-token names");
        }
        Ok(())
    }
}

pub type LabelTriple = (String, String, String);

/// A generated pair with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub rel: [Vec<LabelTriple>; 2],
    pub attr: [Vec<LabelTriple>; 2],
    pub entity_pairs: Vec<(String, String)>,
    pub relation_pairs: Vec<(String, String)>,
    pub attribute_pairs: Vec<(String, String)>,
    /// Left token to right token.
    pub dictionary: BTreeMap<String, String>,
}

fn as_refs(t: &[LabelTriple]) -> impl Iterator<Item = (&str, &str, &str)> {
    t.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))
}

impl SynthData {
    pub fn graphs(&self) -> (KnowledgeGraph, KnowledgeGraph) {
        (
            KnowledgeGraph::from_triples(as_refs(&self.rel[0]), as_refs(&self.attr[0])),
            KnowledgeGraph::from_triples(as_refs(&self.rel[1]), as_refs(&self.attr[1])),
        )
    }

    pub fn translate(&self, value: &str) -> String {
        value
            .split(' ')
            .map(|w| self.dictionary.get(w).map(String::as_str).unwrap_or(w))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Complete ground truth over `g`/`g2` ids. Value pairs are those of
    /// attribute triples present on both sides.
    pub fn ground_truth(&self, g: &KnowledgeGraph, g2: &KnowledgeGraph) -> Result<AlignmentStore> {
        let mut store = AlignmentStore::new();
        for (l, r) in &self.entity_pairs {
            let (Some(a), Some(b)) = (g.entity_id(l), g2.entity_id(r)) else {
                return Err(Error::UnknownEntity(format!("{l} / {r}")));
            };
            store.insert_entity(a, b, Provenance::Seed)?;
        }
        for (l, r) in &self.relation_pairs {
            if let (Some(a), Some(b)) = (g.relation_id(l), g2.relation_id(r)) {
                store.insert_relation(a, b, Provenance::Seed)?;
            }
        }
        for (l, r) in &self.attribute_pairs {
            if let (Some(a), Some(b)) = (g.attribute_id(l), g2.attribute_id(r)) {
                store.insert_attribute(a, b, Provenance::Seed)?;
            }
        }
        let right: BTreeSet<(&str, &str, &str)> = as_refs(&self.attr[1]).collect();
        let attr_map: BTreeMap<&str, &str> =
            self.attribute_pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let ent_map: BTreeMap<&str, &str> = self.entity_pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        for (h, a, v) in as_refs(&self.attr[0]) {
            let v2 = self.translate(v);
            if right.contains(&(ent_map[h], attr_map[a], v2.as_str())) {
                store.insert_value(v, v2, Provenance::Seed);
            }
        }
        Ok(store)
    }

    /// Writes the five dataset files plus ground truth and dictionary.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut emit = |name: &str, lines: &mut dyn Iterator<Item = String>| -> Result<()> {
            let path = dir.join(name);
            let err = |e| Error::io(&path, e);
            let mut w = BufWriter::new(File::create(&path).map_err(err)?);
            for line in lines {
                writeln!(w, "{line}").map_err(err)?;
            }
            w.flush().map_err(err)?;
            written.push(path);
            Ok(())
        };
        let tsv3 = |t: &LabelTriple| format!("{}\t{}\t{}", t.0, t.1, t.2);
        for side in 0..2 {
            emit(REL_FILES[side], &mut self.rel[side].iter().map(tsv3))?;
            emit(ATTR_FILES[side], &mut self.attr[side].iter().map(tsv3))?;
        }
        emit(ILL_FILE, &mut self.entity_pairs.iter().map(|(a, b)| format!("{a}\t{b}")))?;
        let truth = self
            .entity_pairs
            .iter()
            .map(|p| ("ent", p))
            .chain(self.relation_pairs.iter().map(|p| ("rel", p)))
            .chain(self.attribute_pairs.iter().map(|p| ("attr", p)));
        emit(GROUND_TRUTH_FILE, &mut truth.map(|(k, (a, b))| format!("{k}\t{a}\t{b}")))?;
        emit(DICTIONARY_FILE, &mut self.dictionary.iter().map(|(a, b)| format!("{a}\t{b}")))?;
        Ok(written)
    }
}

fn entity_label(side: usize, i: usize) -> String {
    if side == 0 {
        format!("http://kg1.example/resource/e{i}")
    } else {
        format!("http://kg2.example/resource/x{i}")
    }
}

fn schema_label(side: usize, kind: &str, local: &str) -> String {
    format!("http://kg{}.example/{kind}/{local}", side + 1)
}

/// Left/right labels for `n` schema items; the first `shared` keep their
/// local name.
fn schema_pairs(n: usize, shared: usize, kind: &str, prefix: &str, rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
    let mut renamed: Vec<usize> = (0..n).collect();
    renamed.shuffle(rng);
    (0..n)
        .map(|i| {
            let right = if i < shared {
                format!("{prefix}{i}")
            } else {
                format!("{prefix}_{}", renamed[i])
            };
            (
                schema_label(0, kind, &format!("{prefix}{i}")),
                schema_label(1, kind, &right),
            )
        })
        .collect()
}

/// Generates a graph pair; identical output for identical specs.
pub fn generate_synth(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let n = spec.n_entities;
    let v = spec.dictionary_size;

    let mut perm: Vec<usize> = (0..v).collect();
    perm.shuffle(&mut rng);
    let dictionary: BTreeMap<String, String> = (0..v).map(|i| (format!("w{i}"), format!("t{}", perm[i]))).collect();
    let zipf = Zipf::new(v as f64, ZIPF_EXPONENT).map_err(|e| Error::Invalid(e.to_string()))?;
    let token = |rng: &mut ChaCha8Rng| zipf.sample(rng) as usize - 1;

    let mut right_ids: Vec<usize> = (0..n).collect();
    right_ids.shuffle(&mut rng);
    let entity_pairs: Vec<(String, String)> =
        (0..n).map(|i| (entity_label(0, i), entity_label(1, right_ids[i]))).collect();

    let shared = |k: usize| (k as f64 * spec.shared_label_fraction).round() as usize;
    let relation_pairs = schema_pairs(spec.n_relations, shared(spec.n_relations), "property", "r", &mut rng);
    let mut attribute_pairs = vec![(schema_label(0, "attribute", NAME_ATTRIBUTE), schema_label(1, "attribute", NAME_ATTRIBUTE))];
    attribute_pairs.extend(schema_pairs(spec.n_attributes, shared(spec.n_attributes), "attribute", "a", &mut rng));

    // Relationship triples: one outgoing edge per entity, then uniform extras.
    let mut rel = BTreeSet::new();
    let mut order = Vec::new();
    let mut add = |h: usize, rng: &mut ChaCha8Rng, rel: &mut BTreeSet<(usize, usize, usize)>| {
        let mut t = rng.random_range(0..n - 1);
        if t >= h {
            t += 1;
        }
        let r = rng.random_range(0..spec.n_relations);
        if rel.insert((h, r, t)) {
            order.push((h, r, t));
        }
    };
    for h in 0..n {
        while rel.len() < h + 1 {
            add(h, &mut rng, &mut rel);
        }
    }
    while rel.len() < spec.n_rel_triples() {
        let h = rng.random_range(0..n);
        add(h, &mut rng, &mut rel);
    }

    // Attribute triples: a unique two-token name, then single-valued attributes.
    let offsets: Vec<usize> = (0..spec.n_attributes).map(|_| rng.random_range(0..v)).collect();
    let mut names = BTreeSet::new();
    let mut attr_ids = Vec::new();
    for _ in 0..n {
        let name = loop {
            let (a, b) = (token(&mut rng), token(&mut rng));
            if a != b && names.insert((a.min(b), a.max(b))) {
                break (a, b);
            }
        };
        let mut chosen: Vec<usize> = (0..spec.n_attributes).collect();
        chosen.shuffle(&mut rng);
        chosen.truncate(spec.attrs_per_entity());
        chosen.sort_unstable();
        let values: Vec<(usize, Vec<usize>)> = chosen
            .into_iter()
            .map(|a| {
                let len = rng.random_range(1..=2);
                (a, (0..len).map(|_| (token(&mut rng) + offsets[a]) % v).collect())
            })
            .collect();
        attr_ids.push((name, values));
    }

    let words = |toks: &[usize], side: usize| {
        toks.iter()
            .map(|&t| if side == 0 { format!("w{t}") } else { format!("t{}", perm[t]) })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let ent = |side: usize, i: usize| if side == 0 { entity_label(0, i) } else { entity_label(1, right_ids[i]) };
    let rel_label = |side: usize, r: usize| if side == 0 { &relation_pairs[r].0 } else { &relation_pairs[r].1 };
    let attr_label = |side: usize, a: usize| if side == 0 { &attribute_pairs[a].0 } else { &attribute_pairs[a].1 };

    let mut rel_out: [Vec<LabelTriple>; 2] = Default::default();
    let mut attr_out: [Vec<LabelTriple>; 2] = Default::default();
    for &(h, r, t) in &order {
        let keep = !rng.random_bool(spec.drop_prob);
        for side in 0..2 {
            if side == 0 || keep {
                rel_out[side].push((ent(side, h), rel_label(side, r).clone(), ent(side, t)));
            }
        }
    }
    for (e, (name, values)) in attr_ids.iter().enumerate() {
        for side in 0..2 {
            attr_out[side].push((ent(side, e), attr_label(side, 0).clone(), words(&[name.0, name.1], side)));
        }
        for (a, toks) in values {
            let keep = !rng.random_bool(spec.drop_prob);
            for side in 0..2 {
                if side == 0 || keep {
                    attr_out[side].push((ent(side, e), attr_label(side, a + 1).clone(), words(toks, side)));
                }
            }
        }
    }

    Ok(SynthData {
        rel: rel_out,
        attr: attr_out,
        entity_pairs,
        relation_pairs,
        attribute_pairs,
        dictionary,
    })
}
