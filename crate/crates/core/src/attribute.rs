//! Interaction-based attribute model.
//!
//! Each entity is represented by up to `M` value slots. The entity similarity
//! sums the dot products of all slot pairs whose attributes share a unified
//! identification:
//!
//! ```text
//! S[m][n] = Σ_i Σ_j ⟨V[m][i], V'[n][j]⟩ · [id[m][i] = id'[n][j] ≠ -1]
//! ```
//!
//! The `N × N' × M × M` interaction tensor is never built. Grouping slots by
//! id and summing their embeddings gives, by bilinearity,
//! `S = Σ_k Agg_k · Agg'_kᵀ`, which only touches entities that actually carry
//! attribute `k`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::{Array2, Array3, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{
    top_m_attr_slots, AlignmentStore, AttributeId, CandidateSet, EntityId, FrequentAttributes, KnowledgeGraph,
};
use crate::similarity::{select_above_threshold, RankedAlignmentList, SimilarityMatrix, View};
use crate::translator::{embed_value, translate_value, TranslationTable, WordVectorProvider};

pub const DEFAULT_BLOCK_ROWS: usize = 1024;

/// `N × M × D_v` value embeddings with per-slot attribute ids.
#[derive(Debug, Clone)]
pub struct ValueEmbeddingMatrix {
    pub data: Array3<f64>,
    pub slot_count: Vec<usize>,
    /// Graph attribute of each filled slot, per entity.
    pub slot_attributes: Vec<Vec<AttributeId>>,
}

impl ValueEmbeddingMatrix {
    pub fn n_entities(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn max_slots(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn dim(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    pub fn slot(&self, e: usize, i: usize) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![e, i, ..])
    }
}

/// Builds `V` (or `V'` when `table` is `None`).
///
/// Slot `i` of entity `m` holds the embedding of the (translated) value of the
/// `i`-th slot chosen by [`top_m_attr_slots`].
pub fn build_value_matrix(
    g: &KnowledgeGraph,
    table: Option<&TranslationTable>,
    provider: &WordVectorProvider,
    m: usize,
    frequent: &BTreeSet<AttributeId>,
) -> ValueEmbeddingMatrix {
    let n = g.num_entities();
    let dim = provider.dimension();
    let mut data = Array3::zeros((n, m, dim));
    let mut slot_count = vec![0; n];
    let mut slot_attributes = vec![Vec::new(); n];
    for e in 0..n {
        let slots = top_m_attr_slots(g, EntityId::from(e), m, frequent);
        slot_count[e] = slots.len();
        for (i, (a, v)) in slots.into_iter().enumerate() {
            let emb = match table {
                Some(t) => embed_value(provider, &translate_value(t, v)),
                None => embed_value(provider, v),
            };
            data.slice_mut(ndarray::s![e, i, ..])
                .assign(&ArrayView1::from(emb.0.as_slice()));
            slot_attributes[e].push(a);
        }
    }
    ValueEmbeddingMatrix {
        data,
        slot_count,
        slot_attributes,
    }
}

/// Unified attribute identifications: aligned attributes of both graphs share
/// one id in `[0, K)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeIdentification {
    left: HashMap<AttributeId, i64>,
    right: HashMap<AttributeId, i64>,
    k: usize,
}

impl AttributeIdentification {
    pub fn new(frequent: &FrequentAttributes, store: &AlignmentStore) -> Self {
        let u = frequent.unified(store);
        let mut left = HashMap::new();
        let mut right = HashMap::new();
        let mut next = 0i64;
        for &a in &u.left {
            left.insert(a, next);
            next += 1;
        }
        for &a in &u.right {
            let shared = store.attribute_left_of(a).and_then(|l| left.get(&l).copied());
            let id = shared.unwrap_or_else(|| {
                next += 1;
                next - 1
            });
            right.insert(a, id);
        }
        AttributeIdentification {
            left,
            right,
            k: next as usize,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn left_id(&self, a: AttributeId) -> Option<i64> {
        self.left.get(&a).copied()
    }

    pub fn right_id(&self, a: AttributeId) -> Option<i64> {
        self.right.get(&a).copied()
    }
}

/// `N × M` unified attribute ids of every value slot, `-1` for padding.
///
/// Equivalent to the one-hot `N × M × K` identification tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSlotMatrix {
    pub ids: Array2<i64>,
    pub k: usize,
}

impl AttributeSlotMatrix {
    /// Expands to the one-hot `N × M × K` tensor.
    pub fn one_hot(&self) -> Array3<f64> {
        let (n, m) = self.ids.dim();
        let mut a = Array3::zeros((n, m, self.k));
        for ((e, i), &id) in self.ids.indexed_iter() {
            if id >= 0 {
                a[[e, i, id as usize]] = 1.0;
            }
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Builds the slot id matrix of one graph; slot layout matches
/// [`build_value_matrix`] for the same `m` and frequent set.
pub fn build_attr_slot_matrix(
    g: &KnowledgeGraph,
    side: Side,
    m: usize,
    frequent: &BTreeSet<AttributeId>,
    ident: &AttributeIdentification,
) -> AttributeSlotMatrix {
    let n = g.num_entities();
    let mut ids = Array2::from_elem((n, m), -1i64);
    for e in 0..n {
        for (i, (a, _)) in top_m_attr_slots(g, EntityId::from(e), m, frequent).into_iter().enumerate() {
            let id = match side {
                Side::Left => ident.left_id(a),
                Side::Right => ident.right_id(a),
            };
            ids[[e, i]] = id.unwrap_or(-1);
        }
    }
    AttributeSlotMatrix { ids, k: ident.k() }
}

/// Per entity, the sum of slot embeddings for each unified id, ordered by id.
fn aggregate(v: &ValueEmbeddingMatrix, ids: &AttributeSlotMatrix) -> Vec<Vec<(i64, Vec<f64>)>> {
    let dim = v.dim();
    (0..v.n_entities())
        .map(|e| {
            let mut by_id: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
            for i in 0..v.max_slots() {
                let id = ids.ids[[e, i]];
                if id < 0 {
                    continue;
                }
                let acc = by_id.entry(id).or_insert_with(|| vec![0.0; dim]);
                for (a, x) in acc.iter_mut().zip(v.slot(e, i).iter()) {
                    *a += x;
                }
            }
            by_id.into_iter().collect()
        })
        .collect()
}

fn check_shapes(
    v: &ValueEmbeddingMatrix,
    v2: &ValueEmbeddingMatrix,
    ids: &AttributeSlotMatrix,
    ids2: &AttributeSlotMatrix,
) -> Result<()> {
    if v.dim() != v2.dim() {
        return Err(Error::Shape(format!("value dimensions differ: {} vs {}", v.dim(), v2.dim())));
    }
    if ids.ids.dim() != (v.n_entities(), v.max_slots()) || ids2.ids.dim() != (v2.n_entities(), v2.max_slots()) {
        return Err(Error::Shape("slot id matrix does not match value matrix".into()));
    }
    Ok(())
}

/// Masked attribute similarity `S^A`, blockwise over left rows.
///
/// Each block of `block_rows` left entities is computed independently with a
/// fixed summation order, so the result does not depend on the number of
/// worker threads.
pub fn entity_similarity_attr_blocked(
    v: &ValueEmbeddingMatrix,
    v2: &ValueEmbeddingMatrix,
    ids: &AttributeSlotMatrix,
    ids2: &AttributeSlotMatrix,
    block_rows: usize,
) -> Result<SimilarityMatrix> {
    check_shapes(v, v2, ids, ids2)?;
    let block_rows = block_rows.max(1);
    let (n, n2, dim) = (v.n_entities(), v2.n_entities(), v.dim());
    let left = aggregate(v, ids);
    let right = aggregate(v2, ids2);

    // Right-hand aggregates grouped per id: (entity indices, stacked rows).
    let mut right_by_id: BTreeMap<i64, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for (e, groups) in right.iter().enumerate() {
        for (id, vec) in groups {
            let entry = right_by_id.entry(*id).or_default();
            entry.0.push(e);
            entry.1.extend_from_slice(vec);
        }
    }
    let right_by_id: BTreeMap<i64, (Vec<usize>, Array2<f64>)> = right_by_id
        .into_iter()
        .map(|(id, (ents, rows))| {
            let mat = Array2::from_shape_vec((ents.len(), dim), rows).expect("stacked rows");
            (id, (ents, mat))
        })
        .collect();

    let starts: Vec<usize> = (0..n).step_by(block_rows).collect();
    let blocks: Vec<Array2<f64>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + block_rows).min(n);
            let mut out = Array2::zeros((end - start, n2));
            let mut left_by_id: BTreeMap<i64, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
            for (e, groups) in left[start..end].iter().enumerate() {
                for (id, vec) in groups {
                    let entry = left_by_id.entry(*id).or_default();
                    entry.0.push(e);
                    entry.1.extend_from_slice(vec);
                }
            }
            for (id, (rows, data)) in left_by_id {
                let Some((cols, rmat)) = right_by_id.get(&id) else {
                    continue;
                };
                let lmat = Array2::from_shape_vec((rows.len(), dim), data).expect("stacked rows");
                let prod = lmat.dot(&rmat.t());
                for (a, &r) in rows.iter().enumerate() {
                    for (b, &c) in cols.iter().enumerate() {
                        out[[r, c]] += prod[[a, b]];
                    }
                }
            }
            out
        })
        .collect();

    let mut data = Array2::zeros((n, n2));
    for (&start, block) in starts.iter().zip(blocks) {
        data.slice_mut(ndarray::s![start..start + block.nrows(), ..]).assign(&block);
    }
    Ok(SimilarityMatrix::new(data, View::AttributeView))
}

/// Masked attribute similarity `S^A` with the default block size.
pub fn entity_similarity_attr(
    v: &ValueEmbeddingMatrix,
    v2: &ValueEmbeddingMatrix,
    ids: &AttributeSlotMatrix,
    ids2: &AttributeSlotMatrix,
) -> Result<SimilarityMatrix> {
    entity_similarity_attr_blocked(v, v2, ids, ids2, DEFAULT_BLOCK_ROWS)
}

/// The literal definition: the einsum `NMD, N'MD -> NN'MM` of values times
/// the same einsum over one-hot identifications, summed over both slot axes.
///
/// Costs `O(N·N'·M²·(D + K))`; meant for checking the fast path.
pub fn entity_similarity_attr_definitional(
    v: &ValueEmbeddingMatrix,
    v2: &ValueEmbeddingMatrix,
    ids: &AttributeSlotMatrix,
    ids2: &AttributeSlotMatrix,
) -> Result<SimilarityMatrix> {
    check_shapes(v, v2, ids, ids2)?;
    if ids.k != ids2.k {
        return Err(Error::Shape(format!("K differs: {} vs {}", ids.k, ids2.k)));
    }
    let a = ids.one_hot();
    let a2 = ids2.one_hot();
    let (n, m, _) = v.data.dim();
    let (n2, m2, _) = v2.data.dim();
    let mut s = Array2::zeros((n, n2));
    for e in 0..n {
        for f in 0..n2 {
            let mut total = 0.0;
            for i in 0..m {
                for j in 0..m2 {
                    let value_sim = v.slot(e, i).dot(&v2.slot(f, j));
                    let mask = a.slice(ndarray::s![e, i, ..]).dot(&a2.slice(ndarray::s![f, j, ..]));
                    total += value_sim * mask;
                }
            }
            s[[e, f]] = total;
        }
    }
    Ok(SimilarityMatrix::new(s, View::AttributeView))
}

/// Alignments inferred by the attribute view.
#[derive(Debug, Clone, Default)]
pub struct AttributeInference {
    pub entities: RankedAlignmentList,
    pub attributes: Vec<(AttributeId, AttributeId)>,
    pub values: BTreeSet<(String, String)>,
}

/// Attribute pairs supported by near-identical values on aligned entities.
///
/// Every slot pair of an aligned entity pair whose value similarity exceeds
/// `tau_v` votes for its (still unaligned) attribute pair; the votes are
/// reduced one-to-one, most-supported first.
pub fn infer_attribute_pairs(
    v: &ValueEmbeddingMatrix,
    v2: &ValueEmbeddingMatrix,
    entity_pairs: &[(EntityId, EntityId)],
    store: &AlignmentStore,
    tau_v: f64,
) -> Vec<(AttributeId, AttributeId)> {
    let mut votes: BTreeMap<(AttributeId, AttributeId), usize> = BTreeMap::new();
    for &(l, r) in entity_pairs {
        let (m, n) = (l.index(), r.index());
        for (i, &a) in v.slot_attributes[m].iter().enumerate() {
            for (j, &a2) in v2.slot_attributes[n].iter().enumerate() {
                if !store.can_align_attributes(a, a2) {
                    continue;
                }
                if v.slot(m, i).dot(&v2.slot(n, j)) > tau_v {
                    *votes.entry((a, a2)).or_default() += 1;
                }
            }
        }
    }
    let mut ranked: Vec<_> = votes.into_iter().collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut used_l = BTreeSet::new();
    let mut used_r = BTreeSet::new();
    ranked
        .into_iter()
        .filter(|((a, a2), _)| used_l.insert(*a) && used_r.insert(*a2))
        .map(|(p, _)| p)
        .collect()
}

/// Value pairs of triples whose entities are in `entity_pairs` and whose
/// attributes are aligned in `store` or in `extra_attributes`, excluding
/// value pairs already in the store.
pub fn infer_value_pairs(
    g: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    entity_pairs: &[(EntityId, EntityId)],
    store: &AlignmentStore,
    extra_attributes: &[(AttributeId, AttributeId)],
) -> BTreeSet<(String, String)> {
    let extra: HashMap<AttributeId, AttributeId> = extra_attributes.iter().copied().collect();
    let mut out = BTreeSet::new();
    for &(m, n) in entity_pairs {
        let right: Vec<_> = g2.entity_attrs(n).collect();
        for t in g.entity_attrs(m) {
            let Some(a2) = store
                .attribute_right_of(t.attribute)
                .or_else(|| extra.get(&t.attribute).copied())
            else {
                continue;
            };
            for t2 in right.iter().filter(|t2| t2.attribute == a2) {
                if !store.contains_value_pair(t.value.raw(), t2.value.raw()) {
                    out.insert((t.value.raw().to_owned(), t2.value.raw().to_owned()));
                }
            }
        }
    }
    out
}

/// Entity, attribute and value alignments from the attribute view.
///
/// Entity pairs: candidates with `S^A > tau_e`, one-to-one. Attribute pairs
/// are voted over the store's entity pairs plus the new ones; value pairs
/// follow from aligned entities and aligned attributes.
#[allow(clippy::too_many_arguments)]
pub fn infer_from_attribute_view(
    g: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    s: &SimilarityMatrix,
    v: &ValueEmbeddingMatrix,
    v2: &ValueEmbeddingMatrix,
    store: &AlignmentStore,
    candidates: &CandidateSet,
    tau_e: f64,
    tau_v: f64,
) -> AttributeInference {
    let entities = select_above_threshold(s, candidates, tau_e);
    let mut aligned: Vec<(EntityId, EntityId)> = store.entity_pairs().map(|(l, r, _)| (l, r)).collect();
    aligned.extend(entities.iter().map(|p| (p.left, p.right)));
    let attributes = infer_attribute_pairs(v, v2, &aligned, store, tau_v);
    let values = infer_value_pairs(g, g2, &aligned, store, &attributes);
    AttributeInference {
        entities,
        attributes,
        values,
    }
}
