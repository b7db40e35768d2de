//! The full network: encoder, per-class layer mixing, emission heads,
//! parallel CRFs and the attentive second pass.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adaptive::{combine, combine_backward, AdaptiveWeights};
use crate::attentive::{
    attend, attend_backward, build_query, build_query_backward, corrected_emissions, two_pass_decode,
    ClassDecode, QueryParameters,
};
use crate::crf::{nll, viterbi, CrfParameters};
use crate::data::{
    extract_spans, project_to_class_tags, CategoryClassPartition, EntitySpan, LabeledExample, Sentence,
    TagScheme, TagSequence, Vocab,
};
use crate::emission::{emit_backward, emit_with_cache, EmissionMatrix, HeadParameters};
use crate::encoder::{EncoderParams, LayerStates, ToyEncoder, ToyEncoderConfig};
use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::tensor::Matrix;

/// How a class reads the encoder stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LayerMix {
    /// Learned softmax weights per class over the states.
    Adaptive { include_embedding: bool },
    /// Last encoder layer only.
    FinalLayer,
}

/// Which losses drive training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossMode {
    /// First-pass CRF losses only; the query parameters never train.
    Pass1Only,
    /// First- and second-pass CRF losses.
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: ToyEncoderConfig,
    pub partition: CategoryClassPartition,
    pub layer_mix: LayerMix,
    /// Hidden size per direction of the shared BiLSTM; `None` disables it.
    pub lstm_hidden: Option<usize>,
    /// Attentive second pass.
    pub acrf: bool,
    /// Encoder states are supplied from outside; the toy encoder is not
    /// allocated and `encoder` only describes the state shapes.
    pub precomputed: bool,
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AsacParams {
    pub encoder: EncoderParams,
    pub adaptive: AdaptiveWeights,
    pub head: HeadParameters,
    pub crfs: Vec<CrfParameters>,
    pub query: QueryParameters,
}

/// Prefix of every encoder tensor name; used for learning-rate groups.
pub const ENCODER_PREFIX: &str = "encoder";

impl Parameters for AsacParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.encoder.visit(&join(prefix, ENCODER_PREFIX), f);
        self.adaptive.visit(&join(prefix, "adaptive"), f);
        self.head.visit(&join(prefix, "head"), f);
        for (i, c) in self.crfs.iter().enumerate() {
            c.visit(&join(prefix, &alloc::format!("crf{i}")), f);
        }
        self.query.visit(&join(prefix, "query"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, ENCODER_PREFIX), f);
        self.adaptive.visit_mut(&join(prefix, "adaptive"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
        for (i, c) in self.crfs.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &alloc::format!("crf{i}")), f);
        }
        self.query.visit_mut(&join(prefix, "query"), f);
    }
}

impl AsacParams {
    /// Re-pins constrained entries after an update.
    pub fn enforce_constraints(&mut self) {
        self.crfs.iter_mut().for_each(CrfParameters::enforce_padding);
    }
}

/// Decodes and spans of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub decodes: Vec<ClassDecode>,
    pub pass1_spans: BTreeSet<EntitySpan>,
    pub pass2_spans: BTreeSet<EntitySpan>,
}

/// Per-sentence forward/backward result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentenceLoss {
    pub pass1: f64,
    pub pass2: f64,
}

impl SentenceLoss {
    pub fn total(&self) -> f64 {
        self.pass1 + self.pass2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsacModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub schemes: Vec<TagScheme>,
    pub params: AsacParams,
}

impl AsacModel {
    /// Random initialization from `seed`. Mixing logits, CRF scores and
    /// query parameters start at zero.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::check_config(&config, &vocab)?;
        let schemes = TagScheme::for_partition(&config.partition);
        let tag_counts: Vec<usize> = schemes.iter().map(TagScheme::num_tags).collect();
        let params = AsacParams {
            encoder: if config.precomputed {
                EncoderParams::empty()
            } else {
                EncoderParams::new(&config.encoder, &mut rng)
            },
            adaptive: Self::initial_adaptive(&config),
            head: HeadParameters::new(config.encoder.d_model, config.lstm_hidden, &tag_counts, &mut rng),
            crfs: tag_counts.iter().map(|&d| CrfParameters::zeros(d)).collect(),
            query: QueryParameters::zeros(&tag_counts),
        };
        Ok(Self {
            config,
            vocab,
            schemes,
            params,
        })
    }

    /// Wraps existing parameters, checking that their shapes fit `config`.
    pub fn from_parts(config: ModelConfig, vocab: Vocab, params: AsacParams) -> Result<Self> {
        Self::check_config(&config, &vocab)?;
        let schemes = TagScheme::for_partition(&config.partition);
        let expected = Self::zeros_params(&config, &schemes);
        let mut shapes = Vec::new();
        expected.visit("", &mut |n, t| shapes.push((alloc::string::String::from(n), t.len())));
        let mut i = 0;
        let mut bad = None;
        params.visit("", &mut |n, t| {
            match shapes.get(i) {
                Some((en, el)) if en == n && *el == t.len() => {}
                _ if bad.is_none() => bad = Some(alloc::string::String::from(n)),
                _ => {}
            }
            i += 1;
        });
        if let Some(name) = bad.or_else(|| (i != shapes.len()).then(|| "<tensor count>".into())) {
            return Err(Error::InvalidData(alloc::format!(
                "parameter tensor {name} does not match the model configuration"
            )));
        }
        Ok(Self {
            config,
            vocab,
            schemes,
            params,
        })
    }

    fn check_config(config: &ModelConfig, vocab: &Vocab) -> Result<()> {
        config.encoder.validate()?;
        if config.encoder.vocab_size != vocab.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "encoder vocab_size {} does not match vocabulary of {}",
                config.encoder.vocab_size,
                vocab.len()
            )));
        }
        Ok(())
    }

    fn initial_adaptive(config: &ModelConfig) -> AdaptiveWeights {
        let include = match config.layer_mix {
            LayerMix::Adaptive { include_embedding } => include_embedding,
            LayerMix::FinalLayer => true,
        };
        AdaptiveWeights::new(config.partition.num_classes(), config.encoder.n_states(), include)
    }

    fn zeros_params(config: &ModelConfig, schemes: &[TagScheme]) -> AsacParams {
        let tag_counts: Vec<usize> = schemes.iter().map(TagScheme::num_tags).collect();
        AsacParams {
            encoder: if config.precomputed {
                EncoderParams::empty()
            } else {
                EncoderParams::zeros(&config.encoder)
            },
            adaptive: Self::initial_adaptive(config),
            head: HeadParameters::zeros(config.encoder.d_model, config.lstm_hidden, &tag_counts),
            crfs: tag_counts.iter().map(|&d| CrfParameters::zeros(d)).collect(),
            query: QueryParameters::zeros(&tag_counts),
        }
    }

    /// A zero-valued parameter set of the right shapes, for gradients.
    pub fn zero_grads(&self) -> AsacParams {
        let mut g = self.params.clone();
        g.zero();
        g
    }

    pub fn num_classes(&self) -> usize {
        self.schemes.len()
    }

    pub fn max_len(&self) -> usize {
        self.config.encoder.max_len
    }

    fn encoder(&self) -> Result<ToyEncoder<'_>> {
        if self.config.precomputed {
            return Err(Error::InvalidConfig(
                "this model reads precomputed encoder states and has no encoder".into(),
            ));
        }
        Ok(ToyEncoder::new(&self.config.encoder, &self.params.encoder))
    }

    /// Gold tag layers of `example`, one per class.
    pub fn gold_tags(&self, example: &LabeledExample) -> Vec<TagSequence> {
        self.schemes
            .iter()
            .map(|s| project_to_class_tags(example, s, self.max_len()))
            .collect()
    }

    /// Mixing weights of `class` over all states.
    pub fn class_weights(&self, class: usize) -> Result<Vec<f64>> {
        match self.config.layer_mix {
            LayerMix::Adaptive { .. } => self.params.adaptive.normalized(class),
            LayerMix::FinalLayer => {
                let mut w = vec![0.0; self.config.encoder.n_states()];
                *w.last_mut().unwrap() = 1.0;
                Ok(w)
            }
        }
    }

    /// Evaluation-mode encoder states of a sentence.
    pub fn encode(&self, sentence: &Sentence) -> Result<LayerStates> {
        self.encoder()?.forward(&self.vocab.encode(sentence), None).map(|(s, _)| s)
    }

    fn check_states(&self, states: &LayerStates) -> Result<()> {
        if states.n_states() != self.config.encoder.n_states() {
            return Err(Error::DimensionMismatch {
                what: "encoder state count",
                expected: self.config.encoder.n_states(),
                found: states.n_states(),
            });
        }
        if states.d_model() != self.config.encoder.d_model {
            return Err(Error::DimensionMismatch {
                what: "encoder hidden width",
                expected: self.config.encoder.d_model,
                found: states.d_model(),
            });
        }
        Ok(())
    }

    /// Emission matrices of every class.
    pub fn emissions(&self, states: &LayerStates) -> Result<Vec<EmissionMatrix>> {
        self.check_states(states)?;
        (0..self.num_classes())
            .map(|i| {
                let enc = combine(states, &self.class_weights(i)?, i)?;
                emit_with_cache(&enc, &self.params.head).map(|(e, _)| e)
            })
            .collect()
    }

    pub fn decode_states(&self, states: &LayerStates) -> Result<Prediction> {
        let emissions = self.emissions(states)?;
        let decodes = two_pass_decode(&emissions, &self.params.crfs, &self.params.query, self.config.acrf)?;
        let mut pass1_spans = BTreeSet::new();
        let mut pass2_spans = BTreeSet::new();
        for (d, scheme) in decodes.iter().zip(&self.schemes) {
            pass1_spans.extend(extract_spans(&d.pass1, scheme));
            pass2_spans.extend(extract_spans(&d.pass2, scheme));
        }
        Ok(Prediction {
            decodes,
            pass1_spans,
            pass2_spans,
        })
    }

    pub fn predict(&self, sentence: &Sentence) -> Result<Prediction> {
        self.decode_states(&self.encode(sentence)?)
    }

    /// Loss of one example with gradients accumulated into `grads`.
    ///
    /// `states` replaces the toy encoder with precomputed features (no
    /// encoder gradient). `dropout_rng` switches on encoder dropout.
    pub fn loss_and_grad(
        &self,
        example: &LabeledExample,
        states: Option<&LayerStates>,
        loss_mode: LossMode,
        dropout_rng: Option<&mut ChaCha8Rng>,
        grads: &mut AsacParams,
    ) -> Result<SentenceLoss> {
        let gold = self.gold_tags(example);
        let (states_owned, enc_cache);
        let states = match states {
            Some(s) => {
                if s.valid_len() != example.len() {
                    return Err(Error::LengthMismatch {
                        expected: example.len(),
                        found: s.valid_len(),
                    });
                }
                enc_cache = None;
                s
            }
            None => {
                let ids = self.vocab.encode(example.sentence());
                let (s, c) = self.encoder()?.forward(&ids, dropout_rng)?;
                states_owned = s;
                enc_cache = Some(c);
                &states_owned
            }
        };
        self.check_states(states)?;
        let m = self.num_classes();
        let adaptive = matches!(self.config.layer_mix, LayerMix::Adaptive { .. });

        let mut weights = Vec::with_capacity(m);
        let mut emissions = Vec::with_capacity(m);
        let mut head_caches = Vec::with_capacity(m);
        for i in 0..m {
            let w = self.class_weights(i)?;
            let enc = combine(states, &w, i)?;
            let (e, c) = emit_with_cache(&enc, &self.params.head)?;
            weights.push(w);
            emissions.push(e);
            head_caches.push(c);
        }

        let mut loss = SentenceLoss {
            pass1: 0.0,
            pass2: 0.0,
        };
        let mut d_emissions = Vec::with_capacity(m);
        for i in 0..m {
            let out = nll(&emissions[i], &self.params.crfs[i], &gold[i])?;
            loss.pass1 += out.loss;
            grads.crfs[i].accumulate(&out.d_crf);
            d_emissions.push(out.d_emissions);
        }

        if self.config.acrf && loss_mode == LossMode::Joint {
            let pass1: Vec<TagSequence> = (0..m)
                .map(|i| viterbi(&emissions[i], &self.params.crfs[i], i))
                .collect();
            for i in 0..m {
                let siblings: Vec<&TagSequence> = pass1.iter().filter(|s| s.class_id() != i).collect();
                let q = build_query(&siblings, &self.params.query, i)?;
                let residual = attend(&q, &emissions[i])?;
                let corrected = corrected_emissions(&emissions[i], &residual);
                let out = nll(&corrected, &self.params.crfs[i], &gold[i])?;
                loss.pass2 += out.loss;
                grads.crfs[i].accumulate(&out.d_crf);
                let (d_q, d_h) = attend_backward(&q, &emissions[i], &residual, &out.d_emissions);
                d_emissions[i].add_assign(&out.d_emissions);
                d_emissions[i].add_assign(&d_h);
                build_query_backward(&siblings, i, &d_q, &mut grads.query);
            }
        }

        let d = states.d_model();
        let mut d_states: Vec<Matrix> = (0..states.n_states())
            .map(|_| Matrix::zeros(states.n_positions(), d))
            .collect();
        for i in 0..m {
            let d_enc = emit_backward(&self.params.head, &head_caches[i], i, &d_emissions[i], &mut grads.head);
            let d_w = combine_backward(states, &weights[i], &d_enc, &mut d_states);
            if adaptive {
                self.params.adaptive.backward(i, &weights[i], &d_w, &mut grads.adaptive);
            }
        }
        if let Some(cache) = enc_cache {
            self.encoder()?.backward(&cache, &d_states, &mut grads.encoder);
        }
        Ok(loss)
    }
}
