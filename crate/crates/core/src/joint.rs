//! The iterative joint framework.
//!
//! Each iteration retrains the translator on the aligned values, rebuilds
//! the attribute view, retrains TransE on swapped triples, lets both views
//! propose entity pairs from the remaining candidates, merges the proposals
//! and adds everything new to the alignment store. The loop stops when an
//! iteration adds nothing or the iteration cap is reached.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attribute::{
    build_attr_slot_matrix, build_value_matrix, entity_similarity_attr_blocked, infer_attribute_pairs,
    AttributeIdentification, Side, DEFAULT_BLOCK_ROWS,
};
use crate::error::{Error, Result};
use crate::kg::{
    frequent_attributes, implied_value_pairs, AlignmentStore, CandidateSet, EntityId, KnowledgeGraph, Provenance,
    ValueText,
};
use crate::relation::{
    entity_similarity_rel, infer_relation_pairs, swap_triplets, train_transe, EmbeddingTable, JointLayout, TrainConfig,
};
use crate::similarity::{greedy_one_to_one, select_above_threshold, RankedAlignmentList, ScoredPair, SimilarityMatrix, View};
use crate::translator::{train_translation, TranslationTable, WordVectorProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MergeMode {
    /// Attribute view first; the relationship view only sees what is left.
    M1,
    /// Conflicts go to the larger `S^A + S^R`.
    M2,
    /// Conflicts go to the smaller normalized rank.
    M3,
}

impl std::str::FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(MergeMode::M1),
            "M2" => Ok(MergeMode::M2),
            "M3" => Ok(MergeMode::M3),
            other => Err(Error::Invalid(format!("unknown merge mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdTuning {
    Fixed,
    ValidationSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub tau_e_attr: f64,
    pub tau_e_rel: f64,
    pub tau_v: f64,
    pub tau_r: f64,
    pub tuning: ThresholdTuning,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau_e_attr: 1.0,
            tau_e_rel: 0.8,
            tau_v: 0.8,
            tau_r: 0.9,
            tuning: ThresholdTuning::ValidationSweep,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("tau_v", self.tau_v), ("tau_r", self.tau_r)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Invalid(format!("{name} = {x} outside [0, 1]")));
            }
        }
        if self.tau_e_attr.is_nan() || self.tau_e_rel.is_nan() {
            return Err(Error::Invalid("entity thresholds must be numbers".into()));
        }
        Ok(())
    }
}

/// Which views take part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Views {
    Both,
    AttributeOnly,
    RelationshipOnly,
}

impl Views {
    fn attribute(self) -> bool {
        self != Views::RelationshipOnly
    }

    fn relationship(self) -> bool {
        self != Views::AttributeOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointConfig {
    pub value_dim: usize,
    pub max_slots: usize,
    pub min_count: usize,
    pub em_iterations: usize,
    /// Retrain the translator every iteration; otherwise train it once.
    pub retrain_translator: bool,
    pub transe: TrainConfig,
    pub thresholds: Thresholds,
    pub merge: MergeMode,
    pub views: Views,
    pub max_iterations: usize,
    pub block_rows: usize,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            value_dim: 100,
            max_slots: 20,
            min_count: 50,
            em_iterations: 10,
            retrain_translator: true,
            transe: TrainConfig::default(),
            thresholds: Thresholds::default(),
            merge: MergeMode::M3,
            views: Views::Both,
            max_iterations: 10,
            block_rows: DEFAULT_BLOCK_ROWS,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.value_dim == 0 || self.max_slots == 0 || self.em_iterations == 0 || self.max_iterations == 0 {
            return Err(Error::Invalid(
                "value_dim, max_slots, em_iterations and max_iterations must be at least 1".into(),
            ));
        }
        self.transe.validate()?;
        self.thresholds.validate()
    }
}

/// Total order on proposals: higher `S^A`, then higher `S^R`, then smaller
/// `(m, n)`.
fn tie_order(a: &ScoredPair, b: &ScoredPair, sa: &SimilarityMatrix, sr: &SimilarityMatrix) -> Ordering {
    score_cmp(b, a, sa)
        .then_with(|| score_cmp(b, a, sr))
        .then(a.left.cmp(&b.left))
        .then(a.right.cmp(&b.right))
}

fn score_cmp(a: &ScoredPair, b: &ScoredPair, s: &SimilarityMatrix) -> Ordering {
    s.get(a.left, a.right).total_cmp(&s.get(b.left, b.right))
}

/// A merged entity pair and the view(s) proposing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergedPair {
    pub left: EntityId,
    pub right: EntityId,
    pub provenance: Provenance,
}

fn provenance_of(p: &ScoredPair, attr: &RankedAlignmentList, rel: &RankedAlignmentList) -> Provenance {
    match (attr.contains(p.left, p.right), rel.contains(p.left, p.right)) {
        (true, true) => Provenance::Merged,
        (true, false) => Provenance::AttributeView,
        _ => Provenance::RelationshipView,
    }
}

fn union(attr: &RankedAlignmentList, rel: &RankedAlignmentList) -> Vec<ScoredPair> {
    let mut seen = BTreeSet::new();
    attr.iter()
        .chain(rel.iter())
        .filter(|p| seen.insert((p.left, p.right)))
        .copied()
        .collect()
}

/// Attribute proposals are accepted as they are; `infer_rel` then runs on
/// the candidates left after removing their endpoints.
pub fn merge_standard(
    attr: &RankedAlignmentList,
    candidates: &CandidateSet,
    infer_rel: impl FnOnce(&CandidateSet) -> RankedAlignmentList,
) -> (Vec<MergedPair>, RankedAlignmentList) {
    let mut remaining = candidates.clone();
    remaining.remove_pairs(attr.iter().map(|p| (p.left, p.right)));
    let rel = infer_rel(&remaining);
    let merged = attr
        .iter()
        .map(|p| MergedPair { left: p.left, right: p.right, provenance: Provenance::AttributeView })
        .chain(rel.iter().map(|p| MergedPair {
            left: p.left,
            right: p.right,
            provenance: Provenance::RelationshipView,
        }))
        .collect();
    (merged, rel)
}

/// Union of both proposals, greedily reduced by `S^A + S^R`.
pub fn merge_score(
    attr: &RankedAlignmentList,
    rel: &RankedAlignmentList,
    sa: &SimilarityMatrix,
    sr: &SimilarityMatrix,
) -> Vec<MergedPair> {
    let mut all = union(attr, rel);
    let total = |p: &ScoredPair| sa.get(p.left, p.right) + sr.get(p.left, p.right);
    all.sort_by(|a, b| total(b).total_cmp(&total(a)).then_with(|| tie_order(a, b, sa, sr)));
    greedy_one_to_one(all)
        .into_iter()
        .map(|p| MergedPair { left: p.left, right: p.right, provenance: provenance_of(&p, attr, rel) })
        .collect()
}

/// Normalized rank `r / |I|` of a pair, the smaller of both views.
fn rank_ratio(p: &ScoredPair, attr: &RankedAlignmentList, rel: &RankedAlignmentList) -> f64 {
    let ratio = |list: &RankedAlignmentList| list.rank_of(p.left, p.right).map(|r| r as f64 / list.len() as f64);
    match (ratio(attr), ratio(rel)) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => f64::INFINITY,
    }
}

/// Union of both proposals, greedily reduced by the smallest rank ratio.
pub fn merge_rank(
    attr: &RankedAlignmentList,
    rel: &RankedAlignmentList,
    sa: &SimilarityMatrix,
    sr: &SimilarityMatrix,
) -> Vec<MergedPair> {
    let mut all: Vec<(f64, ScoredPair)> = union(attr, rel).into_iter().map(|p| (rank_ratio(&p, attr, rel), p)).collect();
    all.sort_by(|(ra, a), (rb, b)| ra.total_cmp(rb).then_with(|| tie_order(a, b, sa, sr)));
    greedy_one_to_one(all.into_iter().map(|(_, p)| p))
        .into_iter()
        .map(|p| MergedPair { left: p.left, right: p.right, provenance: provenance_of(&p, attr, rel) })
        .collect()
}

fn top1(row: ndarray::ArrayView1<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, &x) in row.iter().enumerate() {
        if x > best.1 {
            best = (j, x);
        }
    }
    best
}

/// F1 of the validation top-1 predictions that score at least `tau`.
pub fn threshold_f1(s: &SimilarityMatrix, valid: &[(EntityId, EntityId)], tau: f64) -> f64 {
    let (mut predicted, mut correct) = (0usize, 0usize);
    for &(l, r) in valid {
        let (j, score) = top1(s.data.row(l.index()));
        if score >= tau {
            predicted += 1;
            correct += (j == r.index()) as usize;
        }
    }
    if correct == 0 {
        return 0.0;
    }
    let precision = correct as f64 / predicted as f64;
    let recall = correct as f64 / valid.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Sweeps thresholds on a 0.01 grid spanning the validation top-1 scores and
/// returns the largest one with maximal [`threshold_f1`].
pub fn tune_threshold(s: &SimilarityMatrix, valid: &[(EntityId, EntityId)]) -> Result<f64> {
    if valid.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let scores: Vec<f64> = valid.iter().map(|(l, _)| top1(s.data.row(l.index())).1).collect();
    let lo = (scores.iter().copied().fold(f64::INFINITY, f64::min) * 100.0).floor() as i64;
    let hi = (scores.iter().copied().fold(f64::NEG_INFINITY, f64::max) * 100.0).ceil() as i64;
    let mut best = (f64::NEG_INFINITY, lo as f64 / 100.0);
    for k in lo..=hi {
        let tau = k as f64 / 100.0;
        let f1 = threshold_f1(s, valid, tau);
        if f1 >= best.0 {
            best = (f1, tau);
        }
    }
    Ok(best.1)
}

/// One line of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub new_ent_attr: usize,
    pub new_ent_rel: usize,
    pub merged: usize,
    pub new_attr: usize,
    pub new_rel: usize,
    pub new_val: usize,
    pub entity_pairs: usize,
    pub store_size: usize,
    pub tau_e_attr: Option<f64>,
    pub tau_e_rel: Option<f64>,
    pub candidates_disjoint: bool,
    pub phase_ms: BTreeMap<String, f64>,
}

impl IterationRecord {
    pub fn delta(&self) -> usize {
        self.merged + self.new_attr + self.new_rel + self.new_val
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub store: AlignmentStore,
    pub candidates: CandidateSet,
    pub records: Vec<IterationRecord>,
    /// The cap was hit before an iteration came back empty.
    pub truncated: bool,
    pub attr_similarity: Option<SimilarityMatrix>,
    pub rel_similarity: Option<SimilarityMatrix>,
    pub translation: Option<TranslationTable>,
    pub embeddings: Option<EmbeddingTable>,
}

impl PipelineResult {
    /// The matrix used for final evaluation: `S^A + S^R` with both views,
    /// otherwise the single view's matrix. Every aligned pair is lifted above
    /// the rest of its row so the alignment itself ranks first.
    pub fn evaluation_matrix(&self) -> SimilarityMatrix {
        let mut s = match (&self.attr_similarity, &self.rel_similarity) {
            (Some(a), Some(r)) => SimilarityMatrix::new(&a.data + &r.data, View::Merged),
            (Some(a), None) => a.clone(),
            (None, Some(r)) => r.clone(),
            (None, None) => unreachable!("at least one view runs"),
        };
        for (l, r, _) in self.store.entity_pairs() {
            let row_max = s.data.row(l.index()).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            s.data[[l.index(), r.index()]] = row_max + 1.0;
        }
        s
    }
}

fn value_corpus(store: &AlignmentStore) -> Vec<(ValueText, ValueText)> {
    store.value_pairs().map(|(a, b, _)| (ValueText::new(a), ValueText::new(b))).collect()
}

struct AttributeViewState {
    s: SimilarityMatrix,
    v: crate::attribute::ValueEmbeddingMatrix,
    v2: crate::attribute::ValueEmbeddingMatrix,
}

fn attribute_view(
    g: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    store: &AlignmentStore,
    table: Option<&TranslationTable>,
    provider: &WordVectorProvider,
    cfg: &JointConfig,
) -> Result<AttributeViewState> {
    let frequent = frequent_attributes(g, g2, cfg.min_count);
    let unified = frequent.unified(store);
    let ident = AttributeIdentification::new(&frequent, store);
    let v = build_value_matrix(g, table, provider, cfg.max_slots, &unified.left);
    let v2 = build_value_matrix(g2, None, provider, cfg.max_slots, &unified.right);
    let ids = build_attr_slot_matrix(g, Side::Left, cfg.max_slots, &unified.left, &ident);
    let ids2 = build_attr_slot_matrix(g2, Side::Right, cfg.max_slots, &unified.right, &ident);
    let s = entity_similarity_attr_blocked(&v, &v2, &ids, &ids2, cfg.block_rows)?;
    Ok(AttributeViewState { s, v, v2 })
}

fn relationship_view(
    g: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    store: &AlignmentStore,
    cfg: &JointConfig,
    iteration: usize,
) -> Result<(SimilarityMatrix, EmbeddingTable)> {
    let triples = swap_triplets(g, g2, store);
    let train_cfg = TrainConfig {
        rng_seed: cfg.transe.rng_seed.wrapping_add(iteration as u64),
        ..cfg.transe.clone()
    };
    let out = train_transe(&triples, JointLayout::of(g, g2), &train_cfg)?;
    Ok((entity_similarity_rel(&out.table), out.table))
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs the bootstrap loop from `seeds` until an iteration adds nothing or
/// `cfg.max_iterations` is reached. `valid` drives threshold tuning in sweep
/// mode and may be empty with fixed thresholds.
pub fn run_pipeline(
    g: &KnowledgeGraph,
    g2: &KnowledgeGraph,
    seeds: AlignmentStore,
    valid: &[(EntityId, EntityId)],
    cfg: &JointConfig,
) -> Result<PipelineResult> {
    cfg.validate()?;
    let sweep = cfg.thresholds.tuning == ThresholdTuning::ValidationSweep;
    if sweep && valid.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let provider = WordVectorProvider::new(cfg.value_dim);
    let mut store = seeds;
    let mut candidates = CandidateSet::new(g.num_entities(), g2.num_entities(), &store);
    let mut result = PipelineResult {
        store: AlignmentStore::new(),
        candidates: candidates.clone(),
        records: Vec::new(),
        truncated: false,
        attr_similarity: None,
        rel_similarity: None,
        translation: None,
        embeddings: None,
    };
    let mut table: Option<TranslationTable> = None;

    for iteration in 1..=cfg.max_iterations {
        let mut phase_ms = BTreeMap::new();

        if cfg.views.attribute() && (table.is_none() || cfg.retrain_translator) {
            let t = Instant::now();
            let corpus = value_corpus(&store);
            table = match train_translation(&corpus, cfg.em_iterations) {
                Ok(tt) => Some(tt),
                Err(Error::NoTrainableTokens) => {
                    log::warn!("no aligned values to train the translator on; left values stay untranslated");
                    None
                }
                Err(e) => return Err(e),
            };
            phase_ms.insert("translator".to_owned(), ms(t));
        }

        let (attr_state, rel_state) = rayon::join(
            || -> Result<Option<(AttributeViewState, f64)>> {
                if !cfg.views.attribute() {
                    return Ok(None);
                }
                let t = Instant::now();
                let st = attribute_view(g, g2, &store, table.as_ref(), &provider, cfg)?;
                Ok(Some((st, ms(t))))
            },
            || -> Result<Option<(SimilarityMatrix, EmbeddingTable, f64)>> {
                if !cfg.views.relationship() {
                    return Ok(None);
                }
                let t = Instant::now();
                let (s, emb) = relationship_view(g, g2, &store, cfg, iteration)?;
                Ok(Some((s, emb, ms(t))))
            },
        );
        let attr_state = attr_state?;
        let rel_state = rel_state?;

        let tune = |s: &SimilarityMatrix, fixed: f64| if sweep { tune_threshold(s, valid) } else { Ok(fixed) };
        let tau_attr = match &attr_state {
            Some((st, t)) => {
                phase_ms.insert("attribute_view".to_owned(), *t);
                Some(tune(&st.s, cfg.thresholds.tau_e_attr)?)
            }
            None => None,
        };
        let tau_rel = match &rel_state {
            Some((s, _, t)) => {
                phase_ms.insert("relationship_view".to_owned(), *t);
                Some(tune(s, cfg.thresholds.tau_e_rel)?)
            }
            None => None,
        };

        let t = Instant::now();
        let attr_list = match (&attr_state, tau_attr) {
            (Some((st, _)), Some(tau)) => select_above_threshold(&st.s, &candidates, tau),
            _ => RankedAlignmentList::default(),
        };
        let infer_rel = |c: &CandidateSet| match (&rel_state, tau_rel) {
            (Some((s, _, _)), Some(tau)) => select_above_threshold(s, c, tau),
            _ => RankedAlignmentList::default(),
        };
        let zeros = || SimilarityMatrix::zeros(g.num_entities(), g2.num_entities(), View::Merged);
        let (merged, rel_list) = match cfg.merge {
            MergeMode::M1 => merge_standard(&attr_list, &candidates, infer_rel),
            mode => {
                let rel_list = infer_rel(&candidates);
                let zero_a;
                let zero_r;
                let sa = match &attr_state {
                    Some((st, _)) => &st.s,
                    None => {
                        zero_a = zeros();
                        &zero_a
                    }
                };
                let sr = match &rel_state {
                    Some((s, _, _)) => s,
                    None => {
                        zero_r = zeros();
                        &zero_r
                    }
                };
                let m = if mode == MergeMode::M2 {
                    merge_score(&attr_list, &rel_list, sa, sr)
                } else {
                    merge_rank(&attr_list, &rel_list, sa, sr)
                };
                (m, rel_list)
            }
        };

        let mut merged_count = 0;
        for p in &merged {
            if store.insert_entity(p.left, p.right, p.provenance)? {
                merged_count += 1;
            }
        }
        candidates.remove_pairs(merged.iter().map(|p| (p.left, p.right)));

        let mut new_attr = 0;
        if let Some((st, _)) = &attr_state {
            let aligned: Vec<(EntityId, EntityId)> = store.entity_pairs().map(|(l, r, _)| (l, r)).collect();
            for (a, b) in infer_attribute_pairs(&st.v, &st.v2, &aligned, &store, cfg.thresholds.tau_v) {
                new_attr += store.insert_attribute(a, b, Provenance::AttributeView)? as usize;
            }
        }
        let mut new_rel = 0;
        if let Some((_, emb, _)) = &rel_state {
            for (a, b) in infer_relation_pairs(emb, &store, cfg.thresholds.tau_r) {
                new_rel += store.insert_relation(a, b, Provenance::RelationshipView)? as usize;
            }
        }
        let mut new_val = 0;
        for (a, b) in implied_value_pairs(g, g2, &store) {
            new_val += store.insert_value(a, b, Provenance::AttributeView) as usize;
        }
        phase_ms.insert("merge".to_owned(), ms(t));

        let record = IterationRecord {
            iteration,
            new_ent_attr: attr_list.len(),
            new_ent_rel: rel_list.len(),
            merged: merged_count,
            new_attr,
            new_rel,
            new_val,
            entity_pairs: store.num_entity_pairs(),
            store_size: store.len(),
            tau_e_attr: tau_attr,
            tau_e_rel: tau_rel,
            candidates_disjoint: candidates.is_disjoint_from(&store),
            phase_ms,
        };
        log::info!(
            "iteration {iteration}: +{} entities (attr {}, rel {}), +{new_attr} attributes, +{new_rel} relations, +{new_val} values",
            merged_count,
            record.new_ent_attr,
            record.new_ent_rel
        );
        let delta = record.delta();
        result.records.push(record);
        result.attr_similarity = attr_state.map(|(st, _)| st.s);
        if let Some((s, emb, _)) = rel_state {
            result.rel_similarity = Some(s);
            result.embeddings = Some(emb);
        }
        if delta == 0 {
            break;
        }
        if iteration == cfg.max_iterations {
            result.truncated = true;
        }
    }
    result.translation = table;
    result.store = store;
    result.candidates = candidates;
    Ok(result)
}

/// Writes `type<TAB>left<TAB>right<TAB>provenance` for every alignment.
pub fn write_alignments(path: impl AsRef<Path>, store: &AlignmentStore, g: &KnowledgeGraph, g2: &KnowledgeGraph) -> Result<()> {
    let path = path.as_ref();
    let err = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(err)?);
    for (l, r, p) in store.entity_pairs() {
        writeln!(w, "ent\t{}\t{}\t{p}", g.entity_label(l), g2.entity_label(r)).map_err(err)?;
    }
    for (l, r, p) in store.relation_pairs() {
        writeln!(w, "rel\t{}\t{}\t{p}", g.relation_label(l), g2.relation_label(r)).map_err(err)?;
    }
    for (l, r, p) in store.attribute_pairs() {
        writeln!(w, "attr\t{}\t{}\t{p}", g.attribute_label(l), g2.attribute_label(r)).map_err(err)?;
    }
    for (l, r, p) in store.value_pairs() {
        writeln!(w, "val\t{l}\t{r}\t{p}").map_err(err)?;
    }
    w.flush().map_err(err)
}

/// Writes the iteration log as JSON lines.
pub fn write_iteration_log(path: impl AsRef<Path>, records: &[IterationRecord]) -> Result<()> {
    let path = path.as_ref();
    let err = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(err)?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(err)?;
    }
    w.flush().map_err(err)
}

/// Sets `S[m][n]` for the listed pairs in an otherwise zero matrix.
pub fn sparse_matrix(n: usize, n2: usize, entries: &[(u32, u32, f64)], source: View) -> SimilarityMatrix {
    let mut data = Array2::zeros((n, n2));
    for &(m, k, x) in entries {
        data[[m as usize, k as usize]] = x;
    }
    SimilarityMatrix::new(data, source)
}
