//! Deterministic synthetic corpus with nested `sym ⊃ bod` entities.
//!
//! Sentences are strings of filler characters with entity mentions dropped
//! in. Each category draws its characters from its own pool, and mentions
//! are always separated by at least one filler character, so every label
//! is recoverable from context. A `sym` mention is, with probability one
//! half, a body word directly followed by a symptom word, in which case the
//! body word is also a `bod` entity nested inside the `sym` entity.

use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EntityCategory, EntitySpan, LabeledExample, Sentence};

pub const FILLER: &str = "的了在是有和与及或也都就但而且其中因为所以如果对于进行出现可能需要患者近日自诉伴随无明显后前";
pub const BODY: &str = "头胸腹背腰腿手足眼耳鼻口肝肺胃肾颈肩膝喉";
pub const SYMPTOM: &str = "痛痒肿胀麻酸热咳晕闷吐泻喘烧";
pub const DISEASE: &str = "炎癌瘤疹毒寒疟痨梗塞瘫痪";
pub const DRUG: &str = "素霉胺片丸剂膏汤注射液";
pub const PROCEDURE: &str = "术检测查造影穿刺镜";

pub const MIN_LEN: usize = 5;
pub const MAX_LEN: usize = 30;
pub const NEST_PROBABILITY: f64 = 0.5;

struct Pools {
    filler: Vec<char>,
    body: Vec<char>,
    symptom: Vec<char>,
    disease: Vec<char>,
    drug: Vec<char>,
    procedure: Vec<char>,
}

impl Pools {
    fn new() -> Self {
        Self {
            filler: FILLER.chars().collect(),
            body: BODY.chars().collect(),
            symptom: SYMPTOM.chars().collect(),
            disease: DISEASE.chars().collect(),
            drug: DRUG.chars().collect(),
            procedure: PROCEDURE.chars().collect(),
        }
    }
}

fn word(rng: &mut ChaCha8Rng, pool: &[char], min: usize, max: usize, out: &mut Vec<char>) {
    let n = rng.gen_range(min..=max);
    for _ in 0..n {
        out.push(pool[rng.gen_range(0..pool.len())]);
    }
}

/// Appends one mention and returns its spans.
fn mention(rng: &mut ChaCha8Rng, pools: &Pools, out: &mut Vec<char>, spans: &mut Vec<EntitySpan>) {
    use EntityCategory::*;
    let start = out.len();
    let roll: f64 = rng.gen();
    if roll < 0.35 {
        if rng.gen_bool(NEST_PROBABILITY) {
            word(rng, &pools.body, 1, 2, out);
            spans.push(EntitySpan::new(start, out.len() - 1, Bod));
        }
        word(rng, &pools.symptom, 1, 2, out);
        spans.push(EntitySpan::new(start, out.len() - 1, Sym));
    } else {
        let (pool, category, min, max) = if roll < 0.55 {
            (&pools.body, Bod, 1, 2)
        } else if roll < 0.75 {
            (&pools.disease, Dis, 2, 3)
        } else if roll < 0.9 {
            (&pools.drug, Dru, 2, 3)
        } else {
            (&pools.procedure, Pro, 2, 2)
        };
        word(rng, pool, min, max, out);
        spans.push(EntitySpan::new(start, out.len() - 1, category));
    }
}

fn sentence(rng: &mut ChaCha8Rng, pools: &Pools) -> LabeledExample {
    loop {
        let mut chars = Vec::new();
        let mut spans = Vec::new();
        word(rng, &pools.filler, 0, 3, &mut chars);
        let mentions = rng.gen_range(1..=4);
        for k in 0..mentions {
            if k > 0 {
                word(rng, &pools.filler, 1, 3, &mut chars);
            }
            mention(rng, pools, &mut chars, &mut spans);
        }
        word(rng, &pools.filler, 1, 3, &mut chars);
        while chars.len() < MIN_LEN {
            chars.push(pools.filler[rng.gen_range(0..pools.filler.len())]);
        }
        if chars.len() <= MAX_LEN {
            return LabeledExample::new(Sentence::from_chars(chars), spans)
                .expect("generator emits valid examples");
        }
    }
}

/// Generates `size` examples; the same seed always yields the same corpus.
pub fn generate_synthetic_corpus(seed: u64, size: usize) -> Vec<LabeledExample> {
    let pools = Pools::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size).map(|_| sentence(&mut rng, &pools)).collect()
}

/// Fraction of `sym` entities that contain a nested entity.
pub fn nesting_frequency(examples: &[LabeledExample]) -> f64 {
    let mut sym = 0usize;
    let mut nested = 0usize;
    for ex in examples {
        for outer in ex.spans().iter().filter(|s| s.category == EntityCategory::Sym) {
            sym += 1;
            if ex
                .spans()
                .iter()
                .any(|inner| inner != outer && outer.contains(inner))
            {
                nested += 1;
            }
        }
    }
    if sym == 0 {
        0.0
    } else {
        nested as f64 / sym as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    #[test]
    fn pools_are_disjoint_and_small() {
        let all = [FILLER, BODY, SYMPTOM, DISEASE, DRUG, PROCEDURE];
        let total: usize = all.iter().map(|p| p.chars().count()).sum();
        let distinct: BTreeSet<char> = all.iter().flat_map(|p| p.chars()).collect();
        assert_eq!(total, distinct.len());
        assert!(distinct.len() <= 200);
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_synthetic_corpus(7, 1), generate_synthetic_corpus(7, 1));
        assert_ne!(generate_synthetic_corpus(7, 5), generate_synthetic_corpus(8, 5));
    }

    #[test]
    fn lengths_and_categories() {
        let corpus = generate_synthetic_corpus(7, 1000);
        let mut cats = BTreeSet::new();
        for ex in &corpus {
            assert!((MIN_LEN..=MAX_LEN).contains(&ex.len()));
            cats.extend(ex.spans().iter().map(|s| s.category));
        }
        assert!(cats.len() >= 4);
    }

    #[test]
    fn nested_pairs_have_sym_outer() {
        let corpus = generate_synthetic_corpus(7, 1000);
        let partition = crate::data::CategoryClassPartition::default();
        for ex in &corpus {
            for a in ex.spans() {
                for b in ex.spans() {
                    if a != b && a.contains(b) {
                        assert_eq!(partition.class_of(a.category), 0);
                    }
                }
            }
        }
    }

    #[test]
    fn nesting_frequency_near_half() {
        let f = nesting_frequency(&generate_synthetic_corpus(7, 1000));
        assert!((f - 0.5).abs() <= 0.05, "nesting frequency {f}");
    }
}
