mod common;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surprise_core::clustering::{cluster, DEFAULT_MAX_ITER, DEFAULT_TOL};
use surprise_core::synthetic::{blobs, BlobSpec};
use surprise_core::*;

fn random_labels<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

#[test]
fn metrics_match_oracles_and_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let (kg, kp) = (rng.random_range(1..6), rng.random_range(1..6));
        let gold = random_labels(&mut rng, n, kg);
        let pred = random_labels(&mut rng, n, kp);
        let v = v_measure(&gold, &pred).unwrap();
        let a = adjusted_rand(&gold, &pred).unwrap();
        assert!((v - common::v_measure_oracle(&gold, &pred)).abs() < 1e-9);
        assert!((a - common::ari_oracle(&gold, &pred)).abs() < 1e-9);

        let mut rename: Vec<usize> = (0..6).collect();
        rename.shuffle(&mut rng);
        let renamed: Vec<String> = pred.iter().map(|&p| format!("c{}", rename[p])).collect();
        assert!((v_measure(&gold, &renamed).unwrap() - v).abs() < 1e-12);
        assert!((adjusted_rand(&gold, &renamed).unwrap() - a).abs() < 1e-12);

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let g2: Vec<usize> = order.iter().map(|&i| gold[i]).collect();
        let p2: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
        assert!((v_measure(&g2, &p2).unwrap() - v).abs() < 1e-12);
        assert!((adjusted_rand(&g2, &p2).unwrap() - a).abs() < 1e-12);
    }
}

#[test]
fn adjusted_rand_of_independent_labelings_is_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let gold = random_labels(&mut rng, 10_000, 5);
    let pred = random_labels(&mut rng, 10_000, 5);
    assert!(adjusted_rand(&gold, &pred).unwrap().abs() < 0.02);
}

#[test]
fn contrast_fixture_flips_one_assignment() {
    let (elements, centroids) = common::contrast_fixture();
    let cos = common::cosine_assign(&elements, &centroids);
    let sur = surprise_assign(&elements, &centroids, StatsEstimator::GaussianMoments).unwrap();
    assert_eq!(cos, vec![0, 0, 0, 0, 1]);
    assert_eq!(sur, vec![0, 0, 0, 1, 1]);
}

#[test]
fn symmetric_centroids_make_surprise_agree_with_cosine() {
    let elements = common::at_angles(&[-30.0, 10.0, 30.0, 60.0, 80.0, 120.0]);
    let centroids = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    // reflection about 45° swaps the centroids and maps the element set onto itself
    let cos = common::cosine_assign(&elements, &centroids);
    assert_eq!(surprise_assign(&elements, &centroids, StatsEstimator::GaussianMoments).unwrap(), cos);
}

#[test]
fn separated_blobs_recovered_exactly() {
    let spec = BlobSpec { dimension: 8, per_label: 40, doc_shared: 0.0, doc_signal: 1.0, noise: 0.05, query_shared: vec![0.0; 4], seed: 3 };
    let data = blobs(&spec, "e").unwrap();
    let gold: Vec<&str> = data.docs.iter().map(|r| data.gold[&r.id].as_str()).collect();
    let result = cluster(&data.docs, 4, 11, StatsEstimator::GaussianMoments).unwrap();
    assert_eq!(adjusted_rand(&gold, &result.assignments_cosine).unwrap(), 1.0);
    assert_eq!(adjusted_rand(&gold, &result.assignments_surprise).unwrap(), 1.0);
    assert!((v_measure(&gold, &result.assignments_cosine).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn kmeans_objective_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let vectors: Vec<Vec<f64>> = (0..120).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let set = EmbeddingSet::from_vectors(vectors).unwrap();
        let fit = kmeans(&set, 6, seed, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        for w in fit.objective_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", fit.objective_history);
        }
        let again = kmeans(&set, 6, seed, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert_eq!(fit, again);
    }
}
