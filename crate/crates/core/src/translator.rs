//! Value translation and value embedding.
//!
//! Values of the left graph are translated token by token with a word
//! translation table `P(target | source)` learned by expectation maximisation
//! over aligned value pairs (IBM Model 1 without a null word). Each value is
//! then embedded as the normalised mean of deterministic per-token unit
//! vectors, so identical token lists map to identical embeddings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kg::{read_tsv, ValueText};

/// Word translation probabilities from left-graph tokens to right-graph tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationTable {
    /// Per source token, `(target, probability)` sorted by target.
    probs: BTreeMap<String, Vec<(String, f64)>>,
    best: BTreeMap<String, String>,
    target_vocab: BTreeSet<String>,
    em_iterations: usize,
}

impl TranslationTable {
    fn from_probs(probs: BTreeMap<String, Vec<(String, f64)>>, em_iterations: usize) -> Self {
        let mut best = BTreeMap::new();
        let mut target_vocab = BTreeSet::new();
        for (s, row) in &probs {
            let mut arg: Option<&(String, f64)> = None;
            for entry in row {
                target_vocab.insert(entry.0.clone());
                // Rows are sorted by target; strict `>` keeps the smallest target on ties.
                if arg.is_none_or(|a| entry.1 > a.1) {
                    arg = Some(entry);
                }
            }
            if let Some((t, _)) = arg {
                best.insert(s.clone(), t.clone());
            }
        }
        TranslationTable {
            probs,
            best,
            target_vocab,
            em_iterations,
        }
    }

    pub fn prob(&self, source: &str, target: &str) -> f64 {
        self.probs
            .get(source)
            .and_then(|row| {
                row.binary_search_by(|(t, _)| t.as_str().cmp(target))
                    .ok()
                    .map(|i| row[i].1)
            })
            .unwrap_or(0.0)
    }

    pub fn entries(&self, source: &str) -> &[(String, f64)] {
        self.probs.get(source).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Most probable translation of a single token, if the token is known.
    pub fn best(&self, source: &str) -> Option<&str> {
        self.best.get(source).map(String::as_str)
    }

    pub fn source_vocab(&self) -> impl Iterator<Item = &str> + '_ {
        self.probs.keys().map(String::as_str)
    }

    pub fn target_vocab(&self) -> &BTreeSet<String> {
        &self.target_vocab
    }

    pub fn em_iterations(&self) -> usize {
        self.em_iterations
    }

    /// Writes `source<TAB>target<TAB>probability` lines.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for (s, row) in &self.probs {
            for (t, p) in row {
                writeln!(w, "{s}\t{t}\t{p:.16e}").map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut probs: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (i, row) in read_tsv(path, 3)?.into_iter().enumerate() {
            let p: f64 = row[2].parse().map_err(|_| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!("bad probability `{}`", row[2]),
            })?;
            let mut it = row.into_iter();
            let s = it.next().unwrap();
            let t = it.next().unwrap();
            probs.entry(s).or_default().push((t, p));
        }
        for row in probs.values_mut() {
            row.sort_by(|a, b| a.0.cmp(&b.0));
        }
        Ok(TranslationTable::from_probs(probs, 0))
    }
}

/// Incremental EM over a deduplicated value-pair corpus.
///
/// Exposed so callers can observe the log-likelihood per iteration.
pub struct EmTrainer {
    source: Vec<String>,
    target: Vec<String>,
    corpus: Vec<(Vec<u32>, Vec<u32>)>,
    /// Per source id, `(target id, p)` sorted by target id.
    params: Vec<Vec<(u32, f64)>>,
    iterations: usize,
}

impl EmTrainer {
    pub fn new(pairs: &[(ValueText, ValueText)]) -> Result<Self> {
        let unique: BTreeSet<(&[String], &[String])> = pairs
            .iter()
            .filter(|(s, t)| !s.is_empty() && !t.is_empty())
            .map(|(s, t)| (s.tokens(), t.tokens()))
            .collect();
        if unique.is_empty() {
            return Err(Error::NoTrainableTokens);
        }
        let mut src_ids: BTreeMap<&str, u32> = BTreeMap::new();
        let mut tgt_ids: BTreeMap<&str, u32> = BTreeMap::new();
        for (s, t) in &unique {
            for w in s.iter() {
                src_ids.entry(w).or_insert(0);
            }
            for w in t.iter() {
                tgt_ids.entry(w).or_insert(0);
            }
        }
        // Ids in lexicographic order so that id order equals string order.
        for (i, v) in src_ids.values_mut().enumerate() {
            *v = i as u32;
        }
        for (i, v) in tgt_ids.values_mut().enumerate() {
            *v = i as u32;
        }
        let corpus: Vec<(Vec<u32>, Vec<u32>)> = unique
            .iter()
            .map(|(s, t)| {
                (
                    s.iter().map(|w| src_ids[w.as_str()]).collect(),
                    t.iter().map(|w| tgt_ids[w.as_str()]).collect(),
                )
            })
            .collect();

        // Uniform over co-occurring targets.
        let mut cooc: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); src_ids.len()];
        for (s, t) in &corpus {
            for &si in s {
                cooc[si as usize].extend(t.iter().copied());
            }
        }
        let params = cooc
            .into_iter()
            .map(|ts| {
                let p = 1.0 / ts.len() as f64;
                ts.into_iter().map(|t| (t, p)).collect()
            })
            .collect();

        Ok(EmTrainer {
            source: src_ids.keys().map(|s| s.to_string()).collect(),
            target: tgt_ids.keys().map(|s| s.to_string()).collect(),
            corpus,
            params,
            iterations: 0,
        })
    }

    fn p(&self, s: u32, t: u32) -> f64 {
        let row = &self.params[s as usize];
        row.binary_search_by_key(&t, |e| e.0).map(|i| row[i].1).unwrap_or(0.0)
    }

    /// Log-likelihood of the corpus under the current parameters.
    pub fn log_likelihood(&self) -> f64 {
        self.corpus
            .iter()
            .map(|(s, t)| {
                let norm = (s.len() as f64).ln();
                t.iter()
                    .map(|&tj| s.iter().map(|&si| self.p(si, tj)).sum::<f64>().ln() - norm)
                    .sum::<f64>()
            })
            .sum()
    }

    /// One E+M step.
    pub fn step(&mut self) {
        let mut counts: Vec<Vec<(u32, f64)>> = self.params.iter().map(|row| row.iter().map(|&(t, _)| (t, 0.0)).collect()).collect();
        let mut totals = vec![0.0f64; self.params.len()];
        for (s, t) in &self.corpus {
            for &tj in t {
                let z: f64 = s.iter().map(|&si| self.p(si, tj)).sum();
                for &si in s {
                    let c = self.p(si, tj) / z;
                    let row = &mut counts[si as usize];
                    let k = row.binary_search_by_key(&tj, |e| e.0).expect("co-occurring target");
                    row[k].1 += c;
                    totals[si as usize] += c;
                }
            }
        }
        for (row, total) in counts.iter_mut().zip(&totals) {
            for e in row.iter_mut() {
                e.1 /= total;
            }
        }
        self.params = counts;
        self.iterations += 1;
    }

    pub fn table(&self) -> TranslationTable {
        let probs = self
            .params
            .iter()
            .enumerate()
            .map(|(si, row)| {
                let entries = row
                    .iter()
                    .map(|&(t, p)| (self.target[t as usize].clone(), p))
                    .collect();
                (self.source[si].clone(), entries)
            })
            .collect();
        TranslationTable::from_probs(probs, self.iterations)
    }
}

/// Trains a translation table on value pairs. Duplicate pairs count once.
pub fn train_translation(pairs: &[(ValueText, ValueText)], iterations: usize) -> Result<TranslationTable> {
    if iterations == 0 {
        return Err(Error::Invalid("EM needs at least one iteration".into()));
    }
    let mut em = EmTrainer::new(pairs)?;
    for _ in 0..iterations {
        em.step();
    }
    Ok(em.table())
}

/// Retrains from scratch on the augmented corpus with the same iteration count.
pub fn update_translation(old: &TranslationTable, all_pairs: &[(ValueText, ValueText)]) -> Result<TranslationTable> {
    train_translation(all_pairs, old.em_iterations.max(1))
}

/// Token-wise argmax translation; unknown tokens pass through.
pub fn translate_value(table: &TranslationTable, v: &ValueText) -> ValueText {
    let out: Vec<&str> = v
        .tokens()
        .iter()
        .map(|w| table.best(w).unwrap_or(w.as_str()))
        .collect();
    ValueText::from_tokens(&out)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic unit word vectors seeded by a hash of the token.
#[derive(Debug)]
pub struct WordVectorProvider {
    dimension: usize,
    cache: Mutex<HashMap<String, Arc<[f64]>>>,
}

impl Clone for WordVectorProvider {
    fn clone(&self) -> Self {
        WordVectorProvider::new(self.dimension)
    }
}

impl WordVectorProvider {
    pub const DEFAULT_DIMENSION: usize = 100;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "word vectors need a positive dimension");
        WordVectorProvider {
            dimension,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vector(&self, token: &str) -> Arc<[f64]> {
        if let Some(v) = self.cache.lock().unwrap().get(token) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()));
        let mut v: Vec<f64> = (0..self.dimension).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let v: Arc<[f64]> = v.into();
        self.cache.lock().unwrap().insert(token.to_owned(), v.clone());
        v
    }
}

impl Default for WordVectorProvider {
    fn default() -> Self {
        WordVectorProvider::new(Self::DEFAULT_DIMENSION)
    }
}

/// Normalised mean of token vectors; the zero vector for a token-less value.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueEmbedding(pub Vec<f64>);

impl ValueEmbedding {
    pub fn dot(&self, other: &ValueEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

pub fn embed_value(provider: &WordVectorProvider, v: &ValueText) -> ValueEmbedding {
    let mut acc = vec![0.0; provider.dimension()];
    for w in v.tokens() {
        for (a, x) in acc.iter_mut().zip(provider.vector(w).iter()) {
            *a += x;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|x| *x /= norm);
    }
    ValueEmbedding(acc)
}
