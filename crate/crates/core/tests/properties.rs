mod common;

use std::collections::BTreeSet;

use asac_core::crf::{log_partition, viterbi, CrfParameters};
use asac_core::data::{
    extract_spans, extract_spans_with_repairs, project_to_class_tags, CategoryClassPartition, EntityCategory,
    EntitySpan, LabeledExample, Sentence, TagScheme, TagSequence,
};
use asac_core::emission::EmissionMatrix;
use asac_core::eval::score;
use asac_core::tensor::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Non-overlapping spans of class `class` over `n` positions, drawn from `seed`.
fn in_class_spans(n: usize, class: usize, seed: u64) -> Vec<EntitySpan> {
    let partition = CategoryClassPartition::default();
    let cats = partition.class(class);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spans = Vec::new();
    let mut p = 0;
    while p < n {
        if rng.gen_bool(0.4) {
            let len = rng.gen_range(1..=(n - p).min(4));
            spans.push(EntitySpan::new(p, p + len - 1, cats[rng.gen_range(0..cats.len())]));
            p += len;
        } else {
            p += 1;
        }
    }
    spans
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn projection_then_extraction_is_identity(n in 1usize..=12, class in 0usize..2, seed in any::<u64>()) {
        let spans = in_class_spans(n, class, seed);
        let ex = LabeledExample::new(Sentence::from_chars(vec!['x'; n]), spans.iter().copied()).unwrap();
        let scheme = &TagScheme::for_partition(&CategoryClassPartition::default())[class];
        let tags = project_to_class_tags(&ex, scheme, 16);
        prop_assert!(tags.is_well_formed(scheme));
        let back = extract_spans(&tags, scheme);
        prop_assert_eq!(back, spans.into_iter().collect::<BTreeSet<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn repaired_decodes_project_back_well_formed(raw in proptest::collection::vec(0usize..18, 1..=12)) {
        let partition = CategoryClassPartition::default();
        let scheme = &TagScheme::for_partition(&partition)[1];
        let tags = TagSequence::new(1, &raw[..], 16, scheme.pad_id());
        let extracted = extract_spans_with_repairs(&tags, scheme);
        let ex = LabeledExample::new(Sentence::from_chars(vec!['x'; raw.len()]), extracted.spans.iter().copied()).unwrap();
        let again = project_to_class_tags(&ex, scheme, 16);
        prop_assert!(again.is_well_formed(scheme));
        prop_assert_eq!(extract_spans(&again, scheme), extracted.spans);
        if tags.is_well_formed(scheme) {
            prop_assert_eq!(extracted.repairs, 0);
        }
    }

    #[test]
    fn per_position_shift_keeps_decode_and_shifts_partition(
        seed in any::<u64>(), n in 1usize..=8, k in 1usize..=5, shift in -50.0f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = common::random_matrix(n, k + 1, 2.0, &mut rng);
        let crf = CrfParameters::random(k + 1, 1.0, &mut rng);
        let p = rng.gen_range(0..n);
        let mut shifted = h.clone();
        for t in 0..k {
            shifted[(p, t)] += shift;
        }
        let (a, b) = (EmissionMatrix::new(h, 10), EmissionMatrix::new(shifted, 10));
        prop_assert_eq!(viterbi(&a, &crf, 0), viterbi(&b, &crf, 0));
        prop_assert!((log_partition(&b, &crf) - log_partition(&a, &crf) - shift).abs() < 1e-8);
    }

    #[test]
    fn scoring_ignores_order_and_duplicates(seed in any::<u64>(), examples in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let random_set = |rng: &mut ChaCha8Rng| -> Vec<EntitySpan> {
            (0..rng.gen_range(0..5))
                .map(|_| {
                    let s = rng.gen_range(0..6);
                    EntitySpan::new(s, s + rng.gen_range(0..3), EntityCategory::ALL[rng.gen_range(0..3)])
                })
                .collect()
        };
        let gold: Vec<Vec<EntitySpan>> = (0..examples).map(|_| random_set(&mut rng)).collect();
        let pred: Vec<Vec<EntitySpan>> = (0..examples).map(|_| random_set(&mut rng)).collect();
        let sets = |v: &[Vec<EntitySpan>]| v.iter().map(|s| s.iter().copied().collect::<BTreeSet<_>>()).collect::<Vec<_>>();
        let base = score(&sets(&pred), &sets(&gold)).unwrap();

        // same examples in reverse order, with every prediction duplicated
        let mut rev_pred: Vec<Vec<EntitySpan>> = pred.iter().rev().map(|s| s.iter().chain(s).copied().collect()).collect();
        rev_pred.iter_mut().for_each(|s| s.reverse());
        let rev_gold: Vec<Vec<EntitySpan>> = gold.iter().rev().cloned().collect();
        prop_assert_eq!(&score(&sets(&rev_pred), &sets(&rev_gold)).unwrap(), &base);

        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for s in base.per_category.values() {
            tp += s.true_positives;
            fp += s.false_positives;
            fn_ += s.false_negatives;
            prop_assert!((0.0..=1.0).contains(&s.f1));
        }
        prop_assert_eq!((tp, fp, fn_), (base.overall.true_positives, base.overall.false_positives, base.overall.false_negatives));
    }
}

#[test]
fn one_hot_weights_copy_a_layer_bit_for_bit() {
    use asac_core::adaptive::combine;
    use asac_core::encoder::LayerStates;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let layers: Vec<Matrix> = (0..5).map(|_| common::random_matrix(7, 4, 3.0, &mut rng)).collect();
    let states = LayerStates::new(layers.clone(), 10).unwrap();
    for k in 0..5 {
        let mut w = vec![0.0; 5];
        w[k] = 1.0;
        let e = combine(&states, &w, 0).unwrap();
        for p in 0..5 {
            assert_eq!(e.values().row(p), layers[k].row(p + 1));
        }
    }
}
