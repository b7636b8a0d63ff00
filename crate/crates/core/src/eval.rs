//! Ranking metrics and ILL splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::similarity::{SimilarityMatrix, View};

pub const DEFAULT_KS: [usize; 3] = [1, 10, 50];
pub const SPLIT_RATIO: [f64; 3] = [4.0, 1.0, 10.0];
pub const MIN_SPLIT_PAIRS: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hr: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub n_test: usize,
    pub source: View,
}

impl EvalReport {
    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.hr.get(&k).copied()
    }
}

/// 1-based rank of column `truth` in `row`: higher scores first, ties to the
/// smaller column.
pub fn rank_in_row(row: ndarray::ArrayView1<'_, f64>, truth: usize) -> usize {
    let s = row[truth];
    1 + row
        .iter()
        .enumerate()
        .filter(|&(j, &x)| x > s || (x == s && j < truth))
        .count()
}

/// HR@K for every `k` and MRR of `test_pairs`, ranking every right entity for
/// each left test entity.
pub fn evaluate(s: &SimilarityMatrix, test_pairs: &[(EntityId, EntityId)], ks: &[usize]) -> Result<EvalReport> {
    if test_pairs.is_empty() {
        return Err(Error::Invalid("no test pairs to evaluate".into()));
    }
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let mut rr = 0.0;
    for &(l, r) in test_pairs {
        if l.index() >= s.n_left() {
            return Err(Error::UnknownEntity(format!("left entity #{} outside {} rows", l.0, s.n_left())));
        }
        if r.index() >= s.n_right() {
            return Err(Error::UnknownEntity(format!("right entity #{} outside {} columns", r.0, s.n_right())));
        }
        let rank = rank_in_row(s.data.row(l.index()), r.index());
        for (&k, h) in hits.iter_mut() {
            if rank <= k {
                *h += 1;
            }
        }
        rr += 1.0 / rank as f64;
    }
    let n = test_pairs.len();
    Ok(EvalReport {
        hr: hits.into_iter().map(|(k, h)| (k, h as f64 / n as f64)).collect(),
        mrr: rr / n as f64,
        n_test: n,
        source: s.source,
    })
}

/// Shuffles `pairs` with `rng_seed` and cuts them by `weights` (train, valid,
/// test). Train and valid sizes are rounded; test takes the remainder.
pub fn split_weighted<T: Clone>(pairs: &[T], weights: [f64; 3], rng_seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = pairs.len();
    if n < MIN_SPLIT_PAIRS {
        return Err(Error::Invalid(format!("need at least {MIN_SPLIT_PAIRS} ILL pairs to split, got {n}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Invalid("split weights must be non-negative with a positive sum".into()));
    }
    let total: f64 = weights.iter().sum();
    let n_train = (n as f64 * weights[0] / total).round() as usize;
    let n_valid = ((n as f64 * weights[1] / total).round() as usize).min(n - n_train);
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let test = shuffled.split_off(n_train + n_valid);
    let valid = shuffled.split_off(n_train);
    Ok((shuffled, valid, test))
}

/// The standard 4:1:10 train/valid/test split.
pub fn split_ills<T: Clone>(pairs: &[T], rng_seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    split_weighted(pairs, SPLIT_RATIO, rng_seed)
}

/// `seed_fraction` of the pairs for training; the rest split 1:10 into
/// validation and test.
pub fn split_by_seed_fraction<T: Clone>(pairs: &[T], seed_fraction: f64, rng_seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if !(seed_fraction > 0.0 && seed_fraction < 1.0) {
        return Err(Error::Invalid(format!("seed fraction {seed_fraction} outside (0, 1)")));
    }
    let rest = 1.0 - seed_fraction;
    split_weighted(pairs, [seed_fraction, rest / 11.0, rest * 10.0 / 11.0], rng_seed)
}
