//! TransE structure embeddings shared by both graphs.
//!
//! Left entities occupy rows `0..N` of the entity table and right entities
//! rows `N..N+N'`; relations follow the same layout. Seed alignments are
//! injected by swapping aligned ids into existing triples, which pulls
//! counterparts towards each other in the shared space.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayViewMut1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{AlignmentStore, CandidateSet, EntityId, KnowledgeGraph, RelationId};
use crate::similarity::{by_score_desc, greedy_one_to_one, select_above_threshold, RankedAlignmentList, ScoredPair, SimilarityMatrix, View};

const NEGATIVE_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 75,
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 200,
            negatives_per_positive: 1,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.negatives_per_positive == 0 {
            return Err(Error::Invalid("dim and negatives_per_positive must be at least 1".into()));
        }
        if !(self.margin > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Invalid("margin and learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// A triple over joint ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// Sizes of the joint id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointLayout {
    pub n_left: usize,
    pub n_right: usize,
    pub l_left: usize,
    pub l_right: usize,
}

impl JointLayout {
    pub fn of(g: &KnowledgeGraph, g2: &KnowledgeGraph) -> Self {
        JointLayout {
            n_left: g.num_entities(),
            n_right: g2.num_entities(),
            l_left: g.num_relations(),
            l_right: g2.num_relations(),
        }
    }

    pub fn n_entities(&self) -> usize {
        self.n_left + self.n_right
    }

    pub fn n_relations(&self) -> usize {
        self.l_left + self.l_right
    }

    /// Joint id range of the graph owning entity `e`.
    fn entity_range(&self, e: usize) -> std::ops::Range<usize> {
        if e < self.n_left {
            0..self.n_left
        } else {
            self.n_left..self.n_entities()
        }
    }
}

/// `T ∪ T'` plus every single-position swap of an aligned entity or relation.
pub fn swap_triplets(g: &KnowledgeGraph, g2: &KnowledgeGraph, store: &AlignmentStore) -> Vec<JointTriple> {
    let lay = JointLayout::of(g, g2);
    let mut out = BTreeSet::new();
    for t in g.rel_triples() {
        let base = JointTriple {
            head: t.head.index(),
            relation: t.relation.index(),
            tail: t.tail.index(),
        };
        out.insert(base);
        if let Some(h2) = store.entity_right_of(t.head) {
            out.insert(JointTriple { head: lay.n_left + h2.index(), ..base });
        }
        if let Some(t2) = store.entity_right_of(t.tail) {
            out.insert(JointTriple { tail: lay.n_left + t2.index(), ..base });
        }
        if let Some(r2) = store.relation_right_of(t.relation) {
            out.insert(JointTriple { relation: lay.l_left + r2.index(), ..base });
        }
    }
    for t in g2.rel_triples() {
        let base = JointTriple {
            head: lay.n_left + t.head.index(),
            relation: lay.l_left + t.relation.index(),
            tail: lay.n_left + t.tail.index(),
        };
        out.insert(base);
        if let Some(h) = store.entity_left_of(t.head) {
            out.insert(JointTriple { head: h.index(), ..base });
        }
        if let Some(tl) = store.entity_left_of(t.tail) {
            out.insert(JointTriple { tail: tl.index(), ..base });
        }
        if let Some(r) = store.relation_left_of(t.relation) {
            out.insert(JointTriple { relation: r.index(), ..base });
        }
    }
    out.into_iter().collect()
}

/// Entity and relation embeddings over the joint id space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ent: Array2<f64>,
    pub rel: Array2<f64>,
    pub layout: JointLayout,
}

impl EmbeddingTable {
    /// Uniform in `±6/√dim` per coordinate, entity rows normalized.
    pub fn init(layout: JointLayout, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 6.0 / (dim as f64).sqrt();
        let mut draw = |rows: usize| Array2::from_shape_fn((rows, dim), |_| rng.random_range(-bound..bound));
        let mut ent = draw(layout.n_entities());
        let rel = draw(layout.n_relations());
        for mut row in ent.rows_mut() {
            normalize(&mut row);
        }
        EmbeddingTable { ent, rel, layout }
    }

    pub fn dim(&self) -> usize {
        self.ent.ncols()
    }

    /// Writes `label<TAB>v1,v2,...`: left entities, right entities, left
    /// relations, right relations.
    pub fn export(&self, path: impl AsRef<Path>, g: &KnowledgeGraph, g2: &KnowledgeGraph) -> Result<()> {
        let path = path.as_ref();
        let err = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(err)?);
        let labels = g
            .entities()
            .labels()
            .iter()
            .chain(g2.entities().labels())
            .zip(self.ent.rows())
            .chain(g.relations().labels().iter().chain(g2.relations().labels()).zip(self.rel.rows()));
        for (label, row) in labels {
            let nums: Vec<String> = row.iter().map(|x| format!("{x:.8e}")).collect();
            writeln!(w, "{label}\t{}", nums.join(",")).map_err(err)?;
        }
        w.flush().map_err(err)
    }
}

fn normalize(v: &mut ArrayViewMut1<'_, f64>) {
    let n = v.dot(v).sqrt();
    if n > 0.0 {
        *v /= n;
    }
}

fn residual(emb: &EmbeddingTable, t: &JointTriple) -> Vec<f64> {
    let (h, r, tl) = (emb.ent.row(t.head), emb.rel.row(t.relation), emb.ent.row(t.tail));
    (0..emb.dim()).map(|i| h[i] + r[i] - tl[i]).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖h + r − t‖₂` for joint ids.
pub fn transe_energy(emb: &EmbeddingTable, t: &JointTriple) -> Result<f64> {
    if t.head >= emb.ent.nrows() || t.tail >= emb.ent.nrows() {
        return Err(Error::UnknownId(t.head.max(t.tail)));
    }
    if t.relation >= emb.rel.nrows() {
        return Err(Error::UnknownId(t.relation));
    }
    Ok(norm(&residual(emb, t)))
}

/// Dense gradient of a batch loss with respect to every table entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub ent: Array2<f64>,
    pub rel: Array2<f64>,
}

/// `Σ max(0, γ + E(pos) − E(neg))` over `(positive, negative)` pairs.
pub fn batch_loss(emb: &EmbeddingTable, batch: &[(JointTriple, JointTriple)], margin: f64) -> f64 {
    batch
        .iter()
        .map(|(p, n)| (margin + norm(&residual(emb, p)) - norm(&residual(emb, n))).max(0.0))
        .sum()
}

/// Adds `sign · ∂E/∂θ` of triple `t` into `(ent, rel)` rows.
fn accumulate(t: &JointTriple, res: &[f64], sign: f64, ent: &mut Array2<f64>, rel: &mut Array2<f64>) {
    let e = norm(res);
    if e == 0.0 {
        return;
    }
    for (i, x) in res.iter().enumerate() {
        let g = sign * x / e;
        ent[[t.head, i]] += g;
        rel[[t.relation, i]] += g;
        ent[[t.tail, i]] -= g;
    }
}

/// Analytic gradient of [`batch_loss`].
pub fn batch_gradient(emb: &EmbeddingTable, batch: &[(JointTriple, JointTriple)], margin: f64) -> Gradient {
    let mut ent = Array2::zeros(emb.ent.raw_dim());
    let mut rel = Array2::zeros(emb.rel.raw_dim());
    for (p, n) in batch {
        let (rp, rn) = (residual(emb, p), residual(emb, n));
        if margin + norm(&rp) - norm(&rn) > 0.0 {
            accumulate(p, &rp, 1.0, &mut ent, &mut rel);
            accumulate(n, &rn, -1.0, &mut ent, &mut rel);
        }
    }
    Gradient { ent, rel }
}

/// Draws a corrupted copy of `t`, replacing head or tail with an entity of
/// the replaced entity's graph. Known positives are rejected up to a fixed
/// number of attempts.
fn corrupt(t: &JointTriple, layout: &JointLayout, known: &HashSet<JointTriple>, rng: &mut ChaCha8Rng) -> JointTriple {
    let mut candidate = *t;
    for _ in 0..NEGATIVE_ATTEMPTS {
        candidate = *t;
        if rng.random_bool(0.5) {
            candidate.head = rng.random_range(layout.entity_range(t.head));
        } else {
            candidate.tail = rng.random_range(layout.entity_range(t.tail));
        }
        if !known.contains(&candidate) {
            break;
        }
    }
    candidate
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: EmbeddingTable,
    /// Mean hinge loss per positive/negative pair, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains TransE by plain SGD, one positive/negative pair at a time.
///
/// Entity rows touched by an update are renormalized immediately. The run is
/// single-threaded and fully determined by `cfg.rng_seed`.
pub fn train_transe(triples: &[JointTriple], layout: JointLayout, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if triples.is_empty() {
        return Err(Error::Invalid("no relationship triples to train on".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut table = EmbeddingTable::init(layout, cfg.dim, &mut rng);
    let known: HashSet<JointTriple> = triples.iter().copied().collect();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let lr = cfg.learning_rate;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let p = triples[i];
            for _ in 0..cfg.negatives_per_positive {
                let n = corrupt(&p, &layout, &known, &mut rng);
                let (rp, rn) = (residual(&table, &p), residual(&table, &n));
                let (ep, en) = (norm(&rp), norm(&rn));
                let loss = cfg.margin + ep - en;
                if loss <= 0.0 {
                    continue;
                }
                total += loss;
                for (t, res, e, sign) in [(&p, &rp, ep, 1.0), (&n, &rn, en, -1.0)] {
                    if e == 0.0 {
                        continue;
                    }
                    for (k, x) in res.iter().enumerate() {
                        let step = lr * sign * x / e;
                        table.ent[[t.head, k]] -= step;
                        table.rel[[t.relation, k]] -= step;
                        table.ent[[t.tail, k]] += step;
                    }
                }
                for e in [p.head, p.tail, n.head, n.tail] {
                    normalize(&mut table.ent.row_mut(e));
                }
            }
        }
        epoch_losses.push(total / (triples.len() * cfg.negatives_per_positive) as f64);
    }
    Ok(TrainOutcome { table, epoch_losses })
}

/// `S^R[m][n] = ⟨ent[m], ent'[n]⟩`.
pub fn entity_similarity_rel(emb: &EmbeddingTable) -> SimilarityMatrix {
    let n = emb.layout.n_left;
    let left = emb.ent.slice(ndarray::s![..n, ..]);
    let right = emb.ent.slice(ndarray::s![n.., ..]);
    SimilarityMatrix::new(left.dot(&right.t()), View::RelationshipView)
}

fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let d = a.dot(&a).sqrt() * b.dot(&b).sqrt();
    if d == 0.0 {
        0.0
    } else {
        a.dot(&b) / d
    }
}

/// Alignments inferred by the relationship view.
#[derive(Debug, Clone, Default)]
pub struct RelationInference {
    pub entities: RankedAlignmentList,
    pub relations: Vec<(RelationId, RelationId)>,
}

/// Relation pairs, both unaligned, whose embeddings have cosine above `tau_r`,
/// reduced one-to-one. Scored pairs reuse the entity id type as plain indices.
pub fn infer_relation_pairs(emb: &EmbeddingTable, store: &AlignmentStore, tau_r: f64) -> Vec<(RelationId, RelationId)> {
    let lay = emb.layout;
    let mut above = Vec::new();
    for a in 0..lay.l_left {
        for b in 0..lay.l_right {
            let (ra, rb) = (RelationId::from(a), RelationId::from(b));
            if !store.can_align_relations(ra, rb) {
                continue;
            }
            let score = cosine(emb.rel.row(a), emb.rel.row(lay.l_left + b));
            if score > tau_r {
                above.push(ScoredPair {
                    left: EntityId::from(a),
                    right: EntityId::from(b),
                    score,
                });
            }
        }
    }
    above.sort_by(by_score_desc);
    greedy_one_to_one(above)
        .into_iter()
        .map(|p| (RelationId(p.left.0), RelationId(p.right.0)))
        .collect()
}

/// Entity pairs over `tau_e` from `S^R` and relation pairs over `tau_r`.
pub fn infer_from_relationship_view(
    s: &SimilarityMatrix,
    candidates: &CandidateSet,
    tau_e: f64,
    emb: &EmbeddingTable,
    store: &AlignmentStore,
    tau_r: f64,
) -> RelationInference {
    RelationInference {
        entities: select_above_threshold(s, candidates, tau_e),
        relations: infer_relation_pairs(emb, store, tau_r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Provenance;

    fn table(ent: Vec<Vec<f64>>, rel: Vec<Vec<f64>>, n_left: usize, l_left: usize) -> EmbeddingTable {
        let d = ent[0].len();
        let layout = JointLayout {
            n_left,
            n_right: ent.len() - n_left,
            l_left,
            l_right: rel.len() - l_left,
        };
        EmbeddingTable {
            ent: Array2::from_shape_vec((ent.len(), d), ent.concat()).unwrap(),
            rel: Array2::from_shape_vec((rel.len(), d), rel.concat()).unwrap(),
            layout,
        }
    }

    #[test]
    fn energy_cases() {
        let t = JointTriple { head: 0, relation: 0, tail: 1 };
        let emb = table(vec![vec![1.0, 2.0, 3.0], vec![1.5, 1.0, 3.0]], vec![vec![0.5, -1.0, 0.0]], 1, 1);
        assert_eq!(transe_energy(&emb, &t).unwrap(), 0.0);
        let emb = table(vec![vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], vec![vec![0.0; 3]], 1, 1);
        assert_eq!(transe_energy(&emb, &t).unwrap(), 1.0);
        // (0.3 + 0.1 - 0.9, -1.2 + 0.4 - 0.2, 2.0 - 0.5 - 1.0) = (-0.5, -1.0, 0.5)
        let emb = table(vec![vec![0.3, -1.2, 2.0], vec![0.9, 0.2, 1.0]], vec![vec![0.1, 0.4, -0.5]], 1, 1);
        assert!((transe_energy(&emb, &t).unwrap() - 1.5f64.sqrt()).abs() < 1e-9);
        let bad = JointTriple { head: 5, relation: 0, tail: 0 };
        assert!(matches!(transe_energy(&emb, &bad), Err(Error::UnknownId(5))));
    }

    fn swap_fixture() -> (KnowledgeGraph, KnowledgeGraph) {
        let g = KnowledgeGraph::from_triples([("a", "p", "b"), ("b", "q", "c")], []);
        let g2 = KnowledgeGraph::from_triples([("x", "s", "y")], []);
        (g, g2)
    }

    #[test]
    fn swap_without_seeds_is_union() {
        let (g, g2) = swap_fixture();
        let out = swap_triplets(&g, &g2, &AlignmentStore::new());
        let want = vec![
            JointTriple { head: 0, relation: 0, tail: 1 },
            JointTriple { head: 1, relation: 1, tail: 2 },
            JointTriple { head: 3, relation: 2, tail: 4 },
        ];
        assert_eq!(out, want);
    }

    #[test]
    fn swap_single_entity() {
        let (g, g2) = swap_fixture();
        let mut store = AlignmentStore::new();
        // b ~ y
        store.insert_entity(EntityId(1), EntityId(1), Provenance::Seed).unwrap();
        let out: BTreeSet<_> = swap_triplets(&g, &g2, &store).into_iter().collect();
        assert!(out.contains(&JointTriple { head: 0, relation: 0, tail: 4 }));
        assert!(out.contains(&JointTriple { head: 4, relation: 1, tail: 2 }));
        assert!(out.contains(&JointTriple { head: 3, relation: 2, tail: 1 }));
        assert_eq!(out.len(), 6);
    }

    #[test]
    fn swap_closure_two_entities_one_relation() {
        let (g, g2) = swap_fixture();
        let mut store = AlignmentStore::new();
        // a ~ x, b ~ y, p ~ s; joint: a0 b1 c2 x3 y4, p0 q1 s2
        store.insert_entity(EntityId(0), EntityId(0), Provenance::Seed).unwrap();
        store.insert_entity(EntityId(1), EntityId(1), Provenance::Seed).unwrap();
        store.insert_relation(RelationId(0), RelationId(0), Provenance::Seed).unwrap();
        let out: BTreeSet<_> = swap_triplets(&g, &g2, &store).into_iter().collect();
        let tr = |h, r, t| JointTriple { head: h, relation: r, tail: t };
        let want: BTreeSet<_> = [
            // T, T'
            tr(0, 0, 1),
            tr(1, 1, 2),
            tr(3, 2, 4),
            // (a,p,b): a->x, b->y, p->s
            tr(3, 0, 1),
            tr(0, 0, 4),
            tr(0, 2, 1),
            // (b,q,c): b->y
            tr(4, 1, 2),
            // (x,s,y): x->a, y->b, s->p
            tr(0, 2, 4),
            tr(3, 2, 1),
            tr(3, 0, 4),
        ]
        .into_iter()
        .collect();
        assert_eq!(out, want);
    }

    fn tiny_layout() -> JointLayout {
        JointLayout { n_left: 3, n_right: 3, l_left: 1, l_right: 1 }
    }

    #[test]
    fn zero_epochs_is_init() {
        let cfg = TrainConfig { epochs: 0, dim: 8, rng_seed: 3, ..Default::default() };
        let t = [JointTriple { head: 0, relation: 0, tail: 1 }];
        let out = train_transe(&t, tiny_layout(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(out.table, EmbeddingTable::init(tiny_layout(), 8, &mut rng));
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn single_triple_satisfies_margin() {
        let cfg = TrainConfig { epochs: 500, dim: 16, learning_rate: 0.05, ..Default::default() };
        let p = JointTriple { head: 0, relation: 0, tail: 1 };
        let out = train_transe(&[p], tiny_layout(), &cfg).unwrap();
        let ep = transe_energy(&out.table, &p).unwrap();
        for h in 0..3 {
            for t in 0..3 {
                let n = JointTriple { head: h, relation: 0, tail: t };
                if n != p && (h == 0 || t == 1) {
                    assert!(ep + cfg.margin <= transe_energy(&out.table, &n).unwrap() + 1e-9, "{n:?}");
                }
            }
        }
    }

    #[test]
    fn similarity_is_dot_product() {
        let emb = table(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 0.0]],
            2,
            1,
        );
        let s = entity_similarity_rel(&emb);
        assert_eq!(s.data, ndarray::array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(s.source, View::RelationshipView);
    }

    #[test]
    fn relation_pairs_use_cosine() {
        let emb = table(
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![vec![2.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.1], vec![0.0, 3.0]],
            1,
            2,
        );
        let mut store = AlignmentStore::new();
        assert_eq!(
            infer_relation_pairs(&emb, &store, 0.9),
            vec![(RelationId(1), RelationId(1)), (RelationId(0), RelationId(0))]
        );
        store.insert_relation(RelationId(1), RelationId(1), Provenance::Seed).unwrap();
        assert_eq!(infer_relation_pairs(&emb, &store, 0.9), vec![(RelationId(0), RelationId(0))]);
    }

    #[test]
    fn invalid_config() {
        let cfg = TrainConfig { margin: 0.0, ..Default::default() };
        assert!(train_transe(&[JointTriple { head: 0, relation: 0, tail: 1 }], tiny_layout(), &cfg).is_err());
        assert!(train_transe(&[], tiny_layout(), &TrainConfig::default()).is_err());
    }
}
