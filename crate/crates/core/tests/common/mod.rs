#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use xkalign::kg::ValueText;

/// A corpus generated from a random bijective token dictionary.
pub struct PlantedCorpus {
    pub dictionary: Vec<(String, String)>,
    pub pairs: Vec<(ValueText, ValueText)>,
}

/// `pairs` values of 1..=4 Zipf-distributed tokens over a vocabulary of
/// `vocab` words; each target token is the dictionary image of its source.
pub fn planted_corpus(vocab: usize, pairs: usize, seed: u64) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..vocab).collect();
    perm.shuffle(&mut rng);
    let dictionary: Vec<(String, String)> = (0..vocab).map(|i| (format!("s{i}"), format!("t{}", perm[i]))).collect();
    let zipf = Zipf::new(vocab as f64, 1.0).unwrap();
    let pairs = (0..pairs)
        .map(|_| {
            let len = rng.random_range(1..=4);
            let idx: Vec<usize> = (0..len).map(|_| zipf.sample(&mut rng) as usize - 1).collect();
            let src: Vec<&str> = idx.iter().map(|&i| dictionary[i].0.as_str()).collect();
            let tgt: Vec<&str> = idx.iter().map(|&i| dictionary[i].1.as_str()).collect();
            (ValueText::from_tokens(&src), ValueText::from_tokens(&tgt))
        })
        .collect();
    PlantedCorpus { dictionary, pairs }
}
