//! Finite-difference gradient checks. Each returns the worst relative
//! error and the number of coordinates checked.

use asac_core::adaptive::{combine, combine_backward, AdaptiveWeights, ClassEncoding};
use asac_core::attentive::{attend, attend_backward, build_query, build_query_backward, corrected_emissions, QueryParameters};
use asac_core::crf::{nll, CrfParameters};
use asac_core::data::{CategoryClassPartition, EntityCategory, EntitySpan, LabeledExample, Sentence, TagSequence, Vocab};
use asac_core::emission::{emit_backward, emit_with_cache, EmissionMatrix, HeadParameters};
use asac_core::encoder::{EncoderParams, LayerStates, ToyEncoder, ToyEncoderConfig};
use asac_core::model::{AsacModel, LayerMix, LossMode, ModelConfig};
use asac_core::params::Parameters;
use asac_core::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finite_difference_error, probe_weights, random_matrix, weighted_sum};

const MAX_LEN: usize = 12;

fn with_flat<P: Parameters + Clone>(base: &P, flat: &[f64]) -> P {
    let mut p = base.clone();
    p.assign_flat(flat);
    p
}

fn random_gold(n: usize, k: usize, class: usize, rng: &mut ChaCha8Rng) -> TagSequence {
    let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    TagSequence::new(class, &y, MAX_LEN, k)
}

/// CRF negative log-likelihood against emissions and CRF parameters.
pub fn crf_nll(seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d_t) = (5, 6);
    let h = random_matrix(n, d_t, 2.0, &mut rng);
    let crf = CrfParameters::random(d_t, 1.0, &mut rng);
    let gold = random_gold(n, d_t - 1, 0, &mut rng);
    let out = nll(&EmissionMatrix::new(h.clone(), MAX_LEN), &crf, &gold).unwrap();

    let e1 = finite_difference_error(h.as_slice(), out.d_emissions.as_slice(), None, |x| {
        let e = EmissionMatrix::new(Matrix::from_vec(n, d_t, x.to_vec()), MAX_LEN);
        nll(&e, &crf, &gold).unwrap().loss
    });
    let e = EmissionMatrix::new(h.clone(), MAX_LEN);
    // padding entries are pinned constants, not free parameters
    let free: Vec<usize> = {
        let mut mask = CrfParameters::zeros(d_t);
        mask.visit_mut("", &mut |_, t| t.iter_mut().for_each(|x| *x = 1.0));
        mask.enforce_padding();
        mask.flatten().iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect()
    };
    let e2 = finite_difference_error(&crf.flatten(), &out.d_crf.flatten(), Some(&free), |x| {
        nll(&e, &with_flat(&crf, x), &gold).unwrap().loss
    });
    (e1.max(e2), n * d_t + free.len())
}

fn random_states(n_states: usize, n: usize, d: usize, rng: &mut ChaCha8Rng) -> LayerStates {
    let states = (0..n_states).map(|_| random_matrix(n + 2, d, 1.0, rng)).collect();
    LayerStates::new(states, MAX_LEN).unwrap()
}

/// Adaptive mixing: raw logits through the softmax and the weighted sum,
/// and the layer states themselves.
pub fn adaptive_combine(seed: u64, include_embedding: bool) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_states, n, d) = (4, 5, 3);
    let states = random_states(n_states, n, d, &mut rng);
    let mut weights = AdaptiveWeights::new(2, n_states, include_embedding);
    weights.raw = random_matrix(2, n_states, 1.5, &mut rng);
    let probe = probe_weights(n * d, &mut rng);
    let class = 1;
    let loss = |w: &AdaptiveWeights, s: &LayerStates| {
        let enc = combine(s, &w.normalized(class).unwrap(), class).unwrap();
        weighted_sum(enc.values().as_slice(), &probe)
    };

    let alpha = weights.normalized(class).unwrap();
    let d_enc = Matrix::from_vec(n, d, probe.clone());
    let mut d_states: Vec<Matrix> = (0..n_states).map(|_| Matrix::zeros(n + 2, d)).collect();
    let d_alpha = combine_backward(&states, &alpha, &d_enc, &mut d_states);
    let mut grads = AdaptiveWeights::new(2, n_states, include_embedding);
    weights.backward(class, &alpha, &d_alpha, &mut grads);

    let e1 = finite_difference_error(weights.raw.as_slice(), grads.raw.as_slice(), None, |x| {
        let mut w = weights.clone();
        w.raw = Matrix::from_vec(2, n_states, x.to_vec());
        loss(&w, &states)
    });
    let flat_states: Vec<f64> = states.states().iter().flat_map(|m| m.as_slice().to_vec()).collect();
    let flat_grads: Vec<f64> = d_states.iter().flat_map(|m| m.as_slice().to_vec()).collect();
    let e2 = finite_difference_error(&flat_states, &flat_grads, None, |x| {
        let per = (n + 2) * d;
        let s = (0..n_states).map(|j| Matrix::from_vec(n + 2, d, x[j * per..(j + 1) * per].to_vec())).collect();
        loss(&weights, &LayerStates::new(s, MAX_LEN).unwrap())
    });
    (e1.max(e2), 2 * n_states + flat_states.len())
}

/// Attention residual and query construction, through the second-pass
/// CRF loss: gradients to the query maps and biases and to the emissions.
pub fn attentive(seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag_counts = [4usize, 5, 3];
    let target = 1;
    let n = 5;
    let query = QueryParameters::random(&tag_counts, 1.0, &mut rng);
    let sib0 = random_gold(n, tag_counts[0] - 1, 0, &mut rng);
    let sib2 = random_gold(n, tag_counts[2] - 1, 2, &mut rng);
    let siblings = [&sib0, &sib2];
    let d_t = tag_counts[target];
    let h = random_matrix(n, d_t, 2.0, &mut rng);
    let crf = CrfParameters::random(d_t, 1.0, &mut rng);
    let gold = random_gold(n, d_t - 1, target, &mut rng);

    let loss = |qp: &QueryParameters, h: &Matrix| {
        let e = EmissionMatrix::new(h.clone(), MAX_LEN);
        let q = build_query(&siblings, qp, target).unwrap();
        let r = attend(&q, &e).unwrap();
        nll(&corrected_emissions(&e, &r), &crf, &gold).unwrap().loss
    };

    let e = EmissionMatrix::new(h.clone(), MAX_LEN);
    let q = build_query(&siblings, &query, target).unwrap();
    let r = attend(&q, &e).unwrap();
    let out = nll(&corrected_emissions(&e, &r), &crf, &gold).unwrap();
    let (d_q, mut d_h) = attend_backward(&q, &e, &r, &out.d_emissions);
    d_h.add_assign(&out.d_emissions);
    let mut grads = QueryParameters::zeros(&tag_counts);
    build_query_backward(&siblings, target, &d_q, &mut grads);

    let e1 = finite_difference_error(&query.flatten(), &grads.flatten(), None, |x| loss(&with_flat(&query, x), &h));
    let e2 = finite_difference_error(h.as_slice(), d_h.as_slice(), None, |x| {
        loss(&query, &Matrix::from_vec(n, d_t, x.to_vec()))
    });
    (e1.max(e2), query.num_params() + n * d_t)
}

/// Emission head with or without the recurrent layer: gradients to the
/// head parameters and to the class encoding.
pub fn emission_head(seed: u64, recurrent: bool) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d_in) = (4, 3);
    let tag_counts = [4usize, 5];
    let class = 1;
    let mut head = HeadParameters::new(d_in, recurrent.then_some(3), &tag_counts, &mut rng);
    head.visit_mut("", &mut |_, t| t.iter_mut().for_each(|x| *x += rng.gen_range(-0.3..=0.3)));
    let x = random_matrix(n, d_in, 1.0, &mut rng);
    let probe = probe_weights(n * tag_counts[class], &mut rng);
    // the padding column is a constant mask; leave it out of the probe
    let real = |m: &Matrix| -> f64 {
        (0..n)
            .map(|p| weighted_sum(&m.row(p)[..tag_counts[class] - 1], &probe[p * tag_counts[class]..]))
            .sum()
    };
    let loss = |hp: &HeadParameters, x: &Matrix| {
        let (e, _) = emit_with_cache(&ClassEncoding::new(x.clone(), class, MAX_LEN), hp).unwrap();
        real(e.scores())
    };
    let (_, cache) = emit_with_cache(&ClassEncoding::new(x.clone(), class, MAX_LEN), &head).unwrap();
    let mut d_e = Matrix::zeros(n, tag_counts[class]);
    for p in 0..n {
        for t in 0..tag_counts[class] - 1 {
            d_e[(p, t)] = probe[p * tag_counts[class] + t];
        }
    }
    let mut grads = head.clone();
    grads.zero();
    let d_x = emit_backward(&head, &cache, class, &d_e, &mut grads);
    let e1 = finite_difference_error(&head.flatten(), &grads.flatten(), None, |f| loss(&with_flat(&head, f), &x));
    let e2 = finite_difference_error(x.as_slice(), d_x.as_slice(), None, |f| {
        loss(&head, &Matrix::from_vec(n, d_in, f.to_vec()))
    });
    (e1.max(e2), head.num_params() + n * d_in)
}

fn tiny_encoder_config(vocab_size: usize) -> ToyEncoderConfig {
    encoder_config(vocab_size, 4)
}

fn encoder_config(vocab_size: usize, d_model: usize) -> ToyEncoderConfig {
    ToyEncoderConfig {
        n_layers: 2,
        d_model,
        n_heads: 2,
        d_ff: d_model + 1,
        vocab_size,
        max_len: MAX_LEN,
        dropout: 0.2,
    }
}

/// Two-layer toy encoder of width `d_model`: parameters against a random
/// projection of all layer states, on at most `budget` randomly chosen
/// coordinates. With `dropout` the same mask is replayed for every
/// evaluation.
pub fn toy_encoder(seed: u64, d_model: usize, dropout: bool, budget: usize) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = encoder_config(7, d_model);
    let mut params = EncoderParams::new(&cfg, &mut rng);
    // move the layer-norm parameters away from their trivial init
    params.visit_mut("", &mut |_, t| t.iter_mut().for_each(|x| *x += rng.gen_range(-0.2..=0.2)));
    let ids = [4u32, 6, 5, 4];
    let n_pos = ids.len() + 2;
    let probe = probe_weights(cfg.n_states() * n_pos * cfg.d_model, &mut rng);
    let mask_seed = rng.gen::<u64>();
    let run = |p: &EncoderParams| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        ToyEncoder::new(&cfg, p).forward(&ids, dropout.then_some(&mut mask_rng)).unwrap()
    };
    let loss = |p: &EncoderParams| {
        let flat: Vec<f64> = run(p).0.states().iter().flat_map(|m| m.as_slice().to_vec()).collect();
        weighted_sum(&flat, &probe)
    };
    let (_, cache) = run(&params);
    let per = n_pos * cfg.d_model;
    let d_states: Vec<Matrix> =
        (0..cfg.n_states()).map(|j| Matrix::from_vec(n_pos, cfg.d_model, probe[j * per..(j + 1) * per].to_vec())).collect();
    let mut grads = EncoderParams::zeros(&cfg);
    ToyEncoder::new(&cfg, &params).backward(&cache, &d_states, &mut grads);
    // embedding rows of absent tokens are included and must come out zero
    let mut coords: Vec<usize> = (0..params.num_params()).collect();
    if coords.len() > budget {
        coords.shuffle(&mut rng);
        coords.truncate(budget);
    }
    let e = finite_difference_error(&params.flatten(), &grads.flatten(), Some(&coords), |f| loss(&with_flat(&params, f)));
    (e, coords.len())
}

fn tiny_example() -> LabeledExample {
    use EntityCategory::*;
    LabeledExample::new(
        Sentence::new("头痛发热咳"),
        [
            EntitySpan::new(0, 1, Sym),
            EntitySpan::new(0, 0, Bod),
            EntitySpan::new(2, 3, Sym),
            EntitySpan::new(4, 4, Dis),
        ],
    )
    .unwrap()
}

/// Full model in joint mode, random subset of coordinates when the model
/// is larger than `budget`.
pub fn full_model(seed: u64, layer_mix: LayerMix, recurrent: bool, dropout: bool, budget: usize) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ex = tiny_example();
    let vocab = Vocab::build([&ex]);
    use EntityCategory::*;
    let partition = CategoryClassPartition::new(vec![vec![Sym], vec![Dis, Bod], vec![Pro, Equ, Dru, Ite, Dep, Mic]]).unwrap();
    let config = ModelConfig {
        encoder: tiny_encoder_config(vocab.len()),
        partition,
        layer_mix,
        lstm_hidden: recurrent.then_some(2),
        acrf: true,
        precomputed: false,
    };
    let mut model = AsacModel::new(config, vocab, seed).unwrap();
    let tag_counts: Vec<usize> = model.params.crfs.iter().map(|c| c.num_tags()).collect();
    for crf in &mut model.params.crfs {
        *crf = CrfParameters::random(crf.num_tags(), 0.5, &mut rng);
    }
    model.params.query = QueryParameters::random(&tag_counts, 0.5, &mut rng);
    let rows = model.params.adaptive.raw.rows();
    let cols = model.params.adaptive.raw.cols();
    model.params.adaptive.raw = random_matrix(rows, cols, 1.0, &mut rng);

    let mask_seed = rng.gen::<u64>();
    let eval = |m: &AsacModel, grads: &mut asac_core::model::AsacParams| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        m.loss_and_grad(&ex, None, LossMode::Joint, dropout.then_some(&mut mask_rng), grads).unwrap().total()
    };
    let mut grads = model.zero_grads();
    eval(&model, &mut grads);

    let mut free = model.params.clone();
    free.visit_mut("", &mut |_, t| t.iter_mut().for_each(|x| *x = 1.0));
    free.enforce_constraints();
    let mut coords: Vec<usize> =
        free.flatten().iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
    if coords.len() > budget {
        coords.shuffle(&mut rng);
        coords.truncate(budget);
    }
    let base = model.params.clone();
    let mut scratch = model.zero_grads();
    let e = finite_difference_error(&base.flatten(), &grads.flatten(), Some(&coords), |f| {
        model.params.assign_flat(f);
        let l = eval(&model, &mut scratch);
        model.params = base.clone();
        l
    });
    (e, coords.len())
}
