//! Dense entity similarity matrices and thresholded one-to-one selection.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{CandidateSet, EntityId};

/// Which model produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum View {
    AttributeView,
    RelationshipView,
    Merged,
}

/// `N × N'` similarity scores between left and right entities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub data: Array2<f64>,
    pub source: View,
}

impl SimilarityMatrix {
    pub fn new(data: Array2<f64>, source: View) -> Self {
        debug_assert!(data.iter().all(|x| x.is_finite()), "similarities must be finite");
        SimilarityMatrix { data, source }
    }

    pub fn zeros(n_left: usize, n_right: usize, source: View) -> Self {
        SimilarityMatrix::new(Array2::zeros((n_left, n_right)), source)
    }

    pub fn n_left(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_right(&self) -> usize {
        self.data.ncols()
    }

    pub fn get(&self, l: EntityId, r: EntityId) -> f64 {
        self.data[[l.index(), r.index()]]
    }

    /// Binary dump: `N`, `N'` as little-endian u32, then row-major f32.
    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(err)?);
        w.write_all(&(self.n_left() as u32).to_le_bytes()).map_err(err)?;
        w.write_all(&(self.n_right() as u32).to_le_bytes()).map_err(err)?;
        for x in self.data.iter() {
            w.write_all(&(*x as f32).to_le_bytes()).map_err(err)?;
        }
        w.flush().map_err(err)
    }

    pub fn read_dump(path: impl AsRef<Path>, source: View) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 {
            return Err(Error::Shape(format!("{}: missing 8-byte header", path.display())));
        }
        let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let n2 = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != 4 * n * n2 {
            return Err(Error::Shape(format!(
                "{}: header says {n}x{n2} but body holds {} bytes",
                path.display(),
                body.len()
            )));
        }
        let data: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let data = Array2::from_shape_vec((n, n2), data).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(SimilarityMatrix::new(data, source))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub left: EntityId,
    pub right: EntityId,
    pub score: f64,
}

/// Descending by score, then ascending by `(left, right)`.
pub(crate) fn by_score_desc(a: &ScoredPair, b: &ScoredPair) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.left.cmp(&b.left))
        .then(a.right.cmp(&b.right))
}

/// A view's inferred entity alignments, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedAlignmentList {
    pairs: Vec<ScoredPair>,
}

impl RankedAlignmentList {
    pub fn new(mut pairs: Vec<ScoredPair>) -> Self {
        pairs.sort_by(by_score_desc);
        RankedAlignmentList { pairs }
    }

    pub fn pairs(&self) -> &[ScoredPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// 1-based rank of a pair in this list.
    pub fn rank_of(&self, l: EntityId, r: EntityId) -> Option<usize> {
        self.pairs.iter().position(|p| p.left == l && p.right == r).map(|i| i + 1)
    }

    pub fn contains(&self, l: EntityId, r: EntityId) -> bool {
        self.pairs.iter().any(|p| p.left == l && p.right == r)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ScoredPair> {
        self.pairs.iter()
    }
}

/// Greedy one-to-one reduction: walk pairs in the given order and accept a
/// pair iff neither endpoint has been accepted before.
pub(crate) fn greedy_one_to_one(sorted: impl IntoIterator<Item = ScoredPair>) -> Vec<ScoredPair> {
    let mut left = std::collections::HashSet::new();
    let mut right = std::collections::HashSet::new();
    sorted
        .into_iter()
        .filter(|p| {
            if left.contains(&p.left) || right.contains(&p.right) {
                return false;
            }
            left.insert(p.left);
            right.insert(p.right);
            true
        })
        .collect()
}

/// Candidate pairs scoring strictly above `tau`, reduced to one-to-one.
pub fn select_above_threshold(s: &SimilarityMatrix, candidates: &CandidateSet, tau: f64) -> RankedAlignmentList {
    let mut above = Vec::new();
    for ((m, n), &score) in s.data.indexed_iter() {
        let (l, r) = (EntityId::from(m), EntityId::from(n));
        if score > tau && candidates.contains(l, r) {
            above.push(ScoredPair { left: l, right: r, score });
        }
    }
    above.sort_by(by_score_desc);
    RankedAlignmentList::new(greedy_one_to_one(above))
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::kg::AlignmentStore;

    #[test]
    fn dump_round_trip_and_header_check() {
        let s = SimilarityMatrix::new(array![[1.0, 0.5, -0.25], [0.0, 2.0, 3.5]], View::Merged);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        s.write_dump(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 8 + 6 * 4);
        assert_eq!(&bytes[..8], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(SimilarityMatrix::read_dump(&p, View::Merged).unwrap(), s);

        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(SimilarityMatrix::read_dump(&p, View::Merged), Err(Error::Shape(_))));
    }

    #[test]
    fn threshold_rule() {
        let s = SimilarityMatrix::new(array![[0.9]], View::AttributeView);
        let c = CandidateSet::new(1, 1, &AlignmentStore::new());
        assert_eq!(select_above_threshold(&s, &c, 0.8).len(), 1);
        assert!(select_above_threshold(&s, &c, 0.9).is_empty());
    }

    #[test]
    fn greedy_keeps_best_of_conflict() {
        // e0 -> {e0': 0.95, e1': 0.93}
        let s = SimilarityMatrix::new(array![[0.95, 0.93], [0.1, 0.2]], View::RelationshipView);
        let c = CandidateSet::new(2, 2, &AlignmentStore::new());
        let out = select_above_threshold(&s, &c, 0.9);
        assert_eq!(out.pairs().len(), 1);
        assert_eq!((out.pairs()[0].left, out.pairs()[0].right), (EntityId(0), EntityId(0)));
        assert!(select_above_threshold(&s, &c, 0.99).is_empty());
    }
}
