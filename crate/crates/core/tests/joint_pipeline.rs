use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;
use xkalign::eval::split_by_seed_fraction;
use xkalign::joint::{
    merge_rank, merge_score, merge_standard, run_pipeline, threshold_f1, tune_threshold, JointConfig, MergeMode,
    MergedPair, ThresholdTuning, Thresholds, Views,
};
use xkalign::kg::{build_initial_seeds, resolve_ills, AlignmentStore, CandidateSet, EntityId, KnowledgeGraph};
use xkalign::similarity::{RankedAlignmentList, ScoredPair, SimilarityMatrix, View};
use xkalign::synth::{generate_synth, SynthSpec};

type Snapshot = (Vec<(u32, u32)>, Vec<(u32, u32)>, Vec<(u32, u32)>, Vec<(String, String)>);

fn snapshot(s: &AlignmentStore) -> Snapshot {
    (
        s.entity_pairs().map(|(l, r, _)| (l.0, r.0)).collect(),
        s.relation_pairs().map(|(l, r, _)| (l.0, r.0)).collect(),
        s.attribute_pairs().map(|(l, r, _)| (l.0, r.0)).collect(),
        s.value_pairs().map(|(l, r, _)| (l.to_owned(), r.to_owned())).collect(),
    )
}

fn fixed(tau_e: f64, tau_v: f64, tau_r: f64) -> Thresholds {
    Thresholds { tau_e_attr: tau_e, tau_e_rel: tau_e, tau_v, tau_r, tuning: ThresholdTuning::Fixed }
}

/// One graph per side with identical values, attribute and relation names,
/// but different entity names.
fn twin_graphs(n: usize) -> (KnowledgeGraph, KnowledgeGraph) {
    let build = |prefix: &str| {
        let ents: Vec<String> = (0..n).map(|i| format!("http://{prefix}.example/e{i}")).collect();
        let rel: Vec<(String, String, String)> = (0..n)
            .map(|i| (ents[i].clone(), "http://x.example/next".to_owned(), ents[(i + 1) % n].clone()))
            .collect();
        let attr: Vec<(String, String, String)> = (0..n)
            .map(|i| (ents[i].clone(), "http://x.example/name".to_owned(), format!("alpha{i} beta{i}")))
            .collect();
        KnowledgeGraph::from_triples(
            rel.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())),
            attr.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())),
        )
    };
    (build("left"), build("right"))
}

#[test]
fn self_alignment_reaches_fixpoint_in_two_iterations() {
    let (g, g2) = twin_graphs(12);
    let seeds = build_initial_seeds(&g, &g2, &[]).unwrap();
    assert_eq!(seeds.num_entity_pairs(), 0);
    assert_eq!(seeds.num_attribute_pairs(), 1);
    let cfg = JointConfig {
        min_count: 0,
        views: Views::AttributeOnly,
        thresholds: fixed(0.5, 0.8, 0.9),
        ..Default::default()
    };
    let out = run_pipeline(&g, &g2, seeds, &[], &cfg).unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.records[0].merged, 12);
    assert_eq!(out.records[1].delta(), 0);
    assert!(!out.truncated);
    for (l, r, _) in out.store.entity_pairs() {
        assert_eq!(l, r, "{} ~ {}", g.entity_label(l), g2.entity_label(r));
    }
    assert!(out.candidates.is_empty());
}

fn synth_setup(spec: &SynthSpec) -> (KnowledgeGraph, KnowledgeGraph, AlignmentStore, Vec<(EntityId, EntityId)>, AlignmentStore) {
    let data = generate_synth(spec).unwrap();
    let (g, g2) = data.graphs();
    let (train, valid, _) = split_by_seed_fraction(&data.entity_pairs, spec.seed_fraction, 0).unwrap();
    let seeds = build_initial_seeds(&g, &g2, &train).unwrap();
    let valid = resolve_ills(&g, &g2, &valid).unwrap();
    let truth = data.ground_truth(&g, &g2).unwrap();
    (g, g2, seeds, valid, truth)
}

#[test]
fn unreachable_thresholds_stop_after_one_iteration() {
    let (g, g2, seeds, valid, _) = synth_setup(&SynthSpec { n_entities: 80, ..Default::default() });
    let before = snapshot(&seeds);
    let cfg = JointConfig {
        thresholds: fixed(1e9, 1.0, 1.0),
        transe: xkalign::relation::TrainConfig { epochs: 20, ..Default::default() },
        ..Default::default()
    };
    let out = run_pipeline(&g, &g2, seeds, &valid, &cfg).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].delta(), 0);
    assert_eq!(snapshot(&out.store), before);
}

#[test]
fn synthetic_bootstrap_grows_and_respects_invariants() {
    let spec = SynthSpec { n_entities: 200, drop_prob: 0.3, ..Default::default() };
    let (g, g2, seeds, valid, truth) = synth_setup(&spec);
    let seed_snapshot = snapshot(&seeds);
    let n_seeds = seeds.num_entity_pairs();
    let cfg = JointConfig::default();
    let out = run_pipeline(&g, &g2, seeds, &valid, &cfg).unwrap();

    let sizes: Vec<usize> = out.records.iter().map(|r| r.entity_pairs).collect();
    assert!(sizes.len() >= 2 && sizes[0] > n_seeds && sizes[1] > sizes[0], "sizes {sizes:?} from {n_seeds}");
    let mut prev = (n_seeds, 0);
    for r in &out.records {
        assert!(r.entity_pairs >= prev.0 && r.store_size >= prev.1);
        assert!(r.candidates_disjoint);
        prev = (r.entity_pairs, r.store_size);
    }
    assert!(out.truncated || out.records.last().unwrap().delta() == 0);
    assert!(out.records.len() <= cfg.max_iterations);

    // Seeds stay.
    let after = snapshot(&out.store);
    for p in &seed_snapshot.0 {
        assert!(after.0.contains(p));
    }
    for p in &seed_snapshot.3 {
        assert!(after.3.contains(p));
    }
    // Grown pairs agree with the generator.
    let correct = out
        .store
        .entity_pairs()
        .filter(|(l, r, _)| truth.contains_entity_pair(*l, *r))
        .count();
    let precision = correct as f64 / out.store.num_entity_pairs() as f64;
    assert!(precision > 0.9, "precision {precision}");
}

fn matrix(rows: &[&[f64]]) -> SimilarityMatrix {
    let n2 = rows[0].len();
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    SimilarityMatrix::new(Array2::from_shape_vec((rows.len(), n2), flat).unwrap(), View::AttributeView)
}

/// Scores every distinct top-1 score as a threshold and returns the best F1.
fn exhaustive_best_f1(s: &SimilarityMatrix, valid: &[(EntityId, EntityId)]) -> f64 {
    let top: Vec<(usize, f64)> = valid
        .iter()
        .map(|(l, _)| {
            let row = s.data.row(l.index());
            let mut best = (0, f64::NEG_INFINITY);
            for (j, &x) in row.iter().enumerate() {
                if x > best.1 {
                    best = (j, x);
                }
            }
            best
        })
        .collect();
    let mut best = 0.0f64;
    for &(_, cut) in &top {
        let accepted: Vec<usize> = (0..valid.len()).filter(|&i| top[i].1 >= cut).collect();
        let tp = accepted.iter().filter(|&&i| top[i].0 == valid[i].1.index()).count() as f64;
        if tp > 0.0 {
            let p = tp / accepted.len() as f64;
            let r = tp / valid.len() as f64;
            best = best.max(2.0 * p * r / (p + r));
        }
    }
    best
}

#[test]
fn ten_pair_sweep_matches_exhaustive_oracle() {
    // Diagonal is the truth; rows 2, 5 and 8 put a wrong column on top.
    let s = matrix(&[
        &[0.93, 0.10, 0.05],
        &[0.20, 0.88, 0.11],
        &[0.71, 0.02, 0.30],
        &[0.10, 0.84, 0.66],
        &[0.40, 0.15, 0.79],
        &[0.12, 0.74, 0.05],
        &[0.61, 0.30, 0.20],
        &[0.08, 0.45, 0.57],
        &[0.90, 0.52, 0.35],
        &[0.09, 0.06, 0.97],
    ]);
    let truth_cols = [0, 1, 2, 1, 2, 0, 0, 2, 1, 2];
    let valid: Vec<(EntityId, EntityId)> =
        truth_cols.iter().enumerate().map(|(i, &c)| (EntityId::from(i), EntityId::from(c))).collect();
    let tau = tune_threshold(&s, &valid).unwrap();
    let oracle = exhaustive_best_f1(&s, &valid);
    assert!((threshold_f1(&s, &valid, tau) - oracle).abs() < 1e-12);
    // Largest maximizer on the grid.
    assert!(threshold_f1(&s, &valid, tau + 0.01) < oracle - 1e-12);
    assert!((tau - 0.57).abs() < 1e-12, "tau {tau}");
}

fn pair(l: usize, r: usize, score: f64) -> ScoredPair {
    ScoredPair { left: EntityId::from(l), right: EntityId::from(r), score }
}

fn one_to_one(raw: Vec<(usize, usize, f64)>) -> RankedAlignmentList {
    let (mut ls, mut rs) = (BTreeSet::new(), BTreeSet::new());
    RankedAlignmentList::new(
        raw.into_iter()
            .filter(|&(l, r, _)| ls.insert(l) && rs.insert(r))
            .map(|(l, r, s)| pair(l, r, s))
            .collect(),
    )
}

fn keys(m: &[MergedPair]) -> BTreeSet<(u32, u32)> {
    m.iter().map(|p| (p.left.0, p.right.0)).collect()
}

fn assert_one_to_one(m: &[MergedPair]) -> Result<(), TestCaseError> {
    let ls: BTreeSet<_> = m.iter().map(|p| p.left).collect();
    let rs: BTreeSet<_> = m.iter().map(|p| p.right).collect();
    prop_assert_eq!(ls.len(), m.len());
    prop_assert_eq!(rs.len(), m.len());
    Ok(())
}

const N: usize = 8;

fn merge_inputs() -> impl Strategy<Value = (RankedAlignmentList, RankedAlignmentList, SimilarityMatrix, SimilarityMatrix)> {
    let list = prop::collection::vec((0..N, 0..N, 0.0f64..1.0), 0..8).prop_map(one_to_one);
    let mat = prop::collection::vec(0.0f64..1.0, N * N)
        .prop_map(|v| SimilarityMatrix::new(Array2::from_shape_vec((N, N), v).unwrap(), View::Merged));
    (list.clone(), list, mat.clone(), mat)
}

fn run_m1(attr: &RankedAlignmentList, rel: &RankedAlignmentList) -> Vec<MergedPair> {
    let cands = CandidateSet::new(N, N, &AlignmentStore::new());
    merge_standard(attr, &cands, |c| {
        RankedAlignmentList::new(
            rel.iter()
                .filter(|p| c.contains(p.left, p.right))
                .copied()
                .collect(),
        )
    })
    .0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn merges_stay_within_union_and_one_to_one((attr, rel, sa, sr) in merge_inputs()) {
        let union: BTreeSet<(u32, u32)> =
            attr.iter().chain(rel.iter()).map(|p| (p.left.0, p.right.0)).collect();
        for m in [merge_score(&attr, &rel, &sa, &sr), merge_rank(&attr, &rel, &sa, &sr), run_m1(&attr, &rel)] {
            prop_assert!(keys(&m).is_subset(&union));
            assert_one_to_one(&m)?;
        }
    }

    #[test]
    fn merges_agree_without_conflicts((attr, rel, sa, sr) in merge_inputs()) {
        let union: BTreeSet<(u32, u32)> =
            attr.iter().chain(rel.iter()).map(|p| (p.left.0, p.right.0)).collect();
        let ls: BTreeSet<u32> = union.iter().map(|p| p.0).collect();
        let rs: BTreeSet<u32> = union.iter().map(|p| p.1).collect();
        prop_assume!(ls.len() == union.len() && rs.len() == union.len());
        prop_assert_eq!(keys(&merge_score(&attr, &rel, &sa, &sr)), union.clone());
        prop_assert_eq!(keys(&merge_rank(&attr, &rel, &sa, &sr)), union.clone());
        prop_assert_eq!(keys(&run_m1(&attr, &rel)), union);
    }
}

#[test]
fn merge_modes_parse() {
    assert_eq!("m3".parse::<MergeMode>().unwrap(), MergeMode::M3);
    assert_eq!("M1".parse::<MergeMode>().unwrap(), MergeMode::M1);
    assert!("M4".parse::<MergeMode>().is_err());
}
