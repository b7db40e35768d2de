use std::path::Path;

use asac::checkpoint::{checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint};
use asac::report::epoch_line;
use asac_core::data::{CategoryClassPartition, Vocab};
use asac_core::encoder::{LayerStates, ToyEncoderConfig};
use asac_core::params::Parameters;
use asac_core::synth::generate_synthetic_corpus;
use asac_core::train::{train, Dataset, ExperimentConfig, TrainConfig};

fn experiment(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        encoder: ToyEncoderConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            ..ToyEncoderConfig::default()
        },
        partition: CategoryClassPartition::default(),
        lstm_hidden: 4,
        mix_embedding: true,
        precomputed: false,
        train: TrainConfig {
            batch_size: 8,
            max_seq_len: 40,
            encoder_lr: 1e-3,
            acrf_lr: 1e-2,
            epochs: 2,
            seed,
            ..TrainConfig::default()
        },
    }
}

fn run(seed: u64) -> (String, String) {
    let data = generate_synthetic_corpus(3, 60);
    let (tr, dev) = data.split_at(48);
    let cfg = experiment(seed);
    let model = cfg.build_model(Vocab::build(tr)).unwrap();
    let mut log = String::new();
    let (model, _) = train(model, &cfg.train, &Dataset::new(tr), &Dataset::new(dev), &mut |r| {
        log.push_str(&epoch_line(r))
    })
    .unwrap();
    (checkpoint_to_string(&model, seed), log)
}

fn bits<P: Parameters>(p: &P) -> Vec<u64> {
    p.flatten().iter().map(|x| x.to_bits()).collect()
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (ck_a, log_a) = run(11);
    let (ck_b, log_b) = run(11);
    assert_eq!(ck_a, ck_b);
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.lines().count(), 2);
    let (ck_c, _) = run(12);
    assert_ne!(ck_a, ck_c);
}

#[test]
fn reload_restores_every_bit() {
    let (text, _) = run(5);
    let (model, seed) = checkpoint_from_str(&text, Path::new("mem.json")).unwrap();
    assert_eq!(seed, 5);
    assert_eq!(checkpoint_to_string(&model, seed), text);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ck.json");
    save_checkpoint(&p, &model, seed).unwrap();
    let (again, _) = load_checkpoint(&p).unwrap();
    assert_eq!(bits(&again.params), bits(&model.params));
    assert_eq!(again.config, model.config);
    assert_eq!(again.vocab, model.vocab);
    for ex in generate_synthetic_corpus(9, 10) {
        assert_eq!(again.predict(ex.sentence()).unwrap(), model.predict(ex.sentence()).unwrap());
    }
}

#[test]
fn mismatched_tensors_are_rejected() {
    let (text, _) = run(5);
    let renamed = text.replacen("\"crf0.transitions\"", "\"crf0.trans\"", 1);
    assert_ne!(renamed, text);
    assert!(checkpoint_from_str(&renamed, Path::new("x")).is_err());
    let wider = text.replacen("\"d_model\":8", "\"d_model\":12", 1);
    assert!(checkpoint_from_str(&wider, Path::new("x")).is_err());
    assert!(checkpoint_from_str("{", Path::new("x")).is_err());
}

#[test]
fn precomputed_models_round_trip_without_encoder() {
    let data = generate_synthetic_corpus(4, 24);
    let mut cfg = experiment(2);
    let vocab = Vocab::build(&data);
    let encoder_model = cfg.build_model(vocab.clone()).unwrap();
    let states: Vec<LayerStates> = data.iter().map(|e| encoder_model.encode(e.sentence()).unwrap()).collect();
    cfg.precomputed = true;
    let model = cfg.build_model(vocab).unwrap();
    assert!(model.params.encoder.layers.is_empty());
    let set = Dataset::with_states(&data, &states).unwrap();
    let (model, log) = train(model, &cfg.train, &set, &set, &mut |_| {}).unwrap();
    assert!(log.iter().all(|r| r.train_loss.is_finite()));
    let text = checkpoint_to_string(&model, 2);
    let (back, _) = checkpoint_from_str(&text, Path::new("x")).unwrap();
    assert!(back.config.precomputed);
    assert_eq!(bits(&back.params), bits(&model.params));
    assert_eq!(back.decode_states(&states[0]).unwrap(), model.decode_states(&states[0]).unwrap());
}
