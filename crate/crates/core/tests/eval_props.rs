use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xkalign::eval::evaluate;
use xkalign::kg::EntityId;
use xkalign::similarity::{SimilarityMatrix, View};

/// Sorts the row's column ids by (score desc, id asc) and reads the position.
fn oracle(s: &Array2<f64>, pairs: &[(usize, usize)], ks: &[usize]) -> (Vec<f64>, f64) {
    let mut hits = vec![0usize; ks.len()];
    let mut rr = 0.0;
    for &(l, r) in pairs {
        let mut cols: Vec<usize> = (0..s.ncols()).collect();
        cols.sort_by(|&a, &b| s[[l, b]].partial_cmp(&s[[l, a]]).unwrap().then(a.cmp(&b)));
        let rank = cols.iter().position(|&c| c == r).unwrap() + 1;
        for (h, &k) in hits.iter_mut().zip(ks) {
            if rank <= k {
                *h += 1;
            }
        }
        rr += 1.0 / rank as f64;
    }
    let n = pairs.len() as f64;
    (hits.iter().map(|&h| h as f64 / n).collect(), rr / n)
}

fn random_case(seed: u64) -> (Array2<f64>, Vec<(usize, usize)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Coarse values on half the cases so ties occur.
    let coarse = seed % 2 == 0;
    let s = Array2::from_shape_fn((20, 20), |_| {
        let x: f64 = rng.random();
        if coarse {
            (x * 5.0).floor()
        } else {
            x
        }
    });
    let pairs = (0..20).map(|l| (l, rng.random_range(0..20))).collect();
    (s, pairs)
}

fn ids(pairs: &[(usize, usize)]) -> Vec<(EntityId, EntityId)> {
    pairs.iter().map(|&(l, r)| (EntityId::from(l), EntityId::from(r))).collect()
}

#[test]
fn matches_sort_oracle_on_random_matrices() {
    let ks = [1, 5, 10];
    for seed in 0..100 {
        let (s, pairs) = random_case(seed);
        let report = evaluate(&SimilarityMatrix::new(s.clone(), View::Merged), &ids(&pairs), &ks).unwrap();
        let (hr, mrr) = oracle(&s, &pairs, &ks);
        for (k, want) in ks.iter().zip(hr) {
            assert!((report.hr_at(*k).unwrap() - want).abs() < 1e-12, "seed {seed} k {k}");
        }
        assert!((report.mrr - mrr).abs() < 1e-12, "seed {seed}");
        assert_eq!(report.n_test, pairs.len());
    }
}

fn matrix() -> impl Strategy<Value = (Array2<f64>, Vec<(usize, usize)>)> {
    (1usize..12, 1usize..12).prop_flat_map(|(n, n2)| {
        (
            prop::collection::vec(-3i32..4, n * n2),
            prop::collection::vec((0..n, 0..n2), 1..10),
        )
            .prop_map(move |(v, pairs)| {
                let s = Array2::from_shape_vec((n, n2), v.into_iter().map(f64::from).collect()).unwrap();
                (s, pairs)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hr_is_monotone_in_k_and_bounded_by_mrr((s, pairs) in matrix()) {
        let ks: Vec<usize> = (1..=12).collect();
        let r = evaluate(&SimilarityMatrix::new(s, View::Merged), &ids(&pairs), &ks).unwrap();
        for w in ks.windows(2) {
            prop_assert!(r.hr_at(w[0]).unwrap() <= r.hr_at(w[1]).unwrap());
        }
        prop_assert!(r.hr_at(12).unwrap() <= 1.0);
        prop_assert!(r.mrr >= r.hr_at(1).unwrap() - 1e-15);
        prop_assert!(r.mrr > 0.0 && r.mrr <= 1.0);
    }

    #[test]
    fn strictly_monotone_transform_changes_nothing((s, pairs) in matrix(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let ks = [1, 3, 10];
        let before = evaluate(&SimilarityMatrix::new(s.clone(), View::Merged), &ids(&pairs), &ks).unwrap();
        let t = s.mapv(|x| (a * x + b).exp());
        let after = evaluate(&SimilarityMatrix::new(t, View::Merged), &ids(&pairs), &ks).unwrap();
        prop_assert_eq!(before, after);
    }
}
