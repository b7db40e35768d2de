mod common;

use asac_core::crf::{log_partition, nll, path_score, viterbi, CrfParameters};
use asac_core::data::TagSequence;
use asac_core::emission::EmissionMatrix;
use asac_core::tensor::Matrix;
use common::{brute_force_crf, random_matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_LEN: usize = 8;

/// `(emissions, crf)` with `n` positions and `k` real tags.
fn instance(n: usize, k: usize, rng: &mut ChaCha8Rng) -> (EmissionMatrix, CrfParameters) {
    let h = random_matrix(n, k + 1, 2.0, rng);
    (EmissionMatrix::new(h, MAX_LEN), CrfParameters::random(k + 1, 1.0, rng))
}

#[test]
fn partition_and_viterbi_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let n = rng.gen_range(1..=6);
        let k = rng.gen_range(1..=5);
        let (e, crf) = instance(n, k, &mut rng);
        let (log_z, best, best_score) = brute_force_crf(e.scores(), &crf);
        assert!((log_partition(&e, &crf) - log_z).abs() <= 1e-6);
        let path = viterbi(&e, &crf, 0);
        assert_eq!(path.valid(), best.as_slice());
        assert!((path_score(&e, &crf, &path).unwrap() - best_score).abs() < 1e-9);
    }
}

#[test]
fn probabilities_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (e, crf) = instance(3, 3, &mut rng);
    let mut total = 0.0;
    for code in 0..27 {
        let y = [code / 9, (code / 3) % 3, code % 3];
        let seq = TagSequence::new(0, &y, MAX_LEN, 3);
        total += nll(&e, &crf, &seq).map(|o| (-o.loss).exp()).unwrap();
    }
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn saturated_emissions_give_near_zero_loss() {
    let gold = [0usize, 1, 1, 2, 0];
    let mut h = Matrix::zeros(5, 4);
    for (p, &t) in gold.iter().enumerate() {
        h[(p, t)] = 30.0;
    }
    let e = EmissionMatrix::new(h, MAX_LEN);
    let out = nll(&e, &CrfParameters::zeros(4), &TagSequence::new(0, &gold, MAX_LEN, 3)).unwrap();
    assert!(out.loss >= 0.0 && out.loss <= 1e-3);
}

#[test]
fn padding_tag_never_decoded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut h = random_matrix(4, 3, 1.0, &mut rng);
    for p in 0..4 {
        h[(p, 2)] = 1e6;
    }
    let e = EmissionMatrix::new(h, MAX_LEN);
    let path = viterbi(&e, &CrfParameters::zeros(3), 0);
    assert!(path.valid().iter().all(|&t| t < 2));
    assert!(path.ids()[4..].iter().all(|&t| t == 2));
}

#[test]
fn length_and_width_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (e, crf) = instance(3, 2, &mut rng);
    assert!(path_score(&e, &crf, &TagSequence::new(0, &[0, 1], MAX_LEN, 2)).is_err());
    assert!(path_score(&e, &CrfParameters::zeros(4), &TagSequence::new(0, &[0, 1, 0], MAX_LEN, 3)).is_err());
}
