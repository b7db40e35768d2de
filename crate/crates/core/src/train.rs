//! Mini-batch training of the full model.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{CategoryClassPartition, LabeledExample, Vocab};
use crate::encoder::{LayerStates, ToyEncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{class_f1, evaluate};
use crate::model::{AsacModel, AsacParams, LayerMix, LossMode, ModelConfig, SentenceLoss, ENCODER_PREFIX};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::Parameters;

/// Component switches toggled by the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Switches {
    /// Per-class adaptive mixing of all encoder states; off reads the last layer.
    pub adaptive_shared: bool,
    /// Attentive second pass.
    pub acrf: bool,
    /// Shared BiLSTM between the mixed encoding and the projections.
    pub recurrent_head: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Self {
            adaptive_shared: true,
            acrf: true,
            recurrent_head: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Maximum encoder positions, markers included.
    pub max_seq_len: usize,
    pub dropout: f64,
    pub encoder_lr: f64,
    /// Learning rate of everything downstream of the encoder.
    pub acrf_lr: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub switches: Switches,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            max_seq_len: 128,
            dropout: 0.1,
            encoder_lr: 4e-5,
            acrf_lr: 2e-4,
            weight_decay: 1e-5,
            grad_clip: Some(5.0),
            epochs: 30,
            seed: 0,
            loss_mode: LossMode::Joint,
            switches: Switches::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.encoder_lr >= 0.0 && self.acrf_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            group_lr: self.encoder_lr,
            lr: self.acrf_lr,
            weight_decay: self.weight_decay,
            clip_norm: self.grad_clip,
            ..AdamWConfig::default()
        }
    }
}

/// Everything needed to build and train one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Encoder shape; `max_len` and `dropout` are taken from `train`.
    pub encoder: ToyEncoderConfig,
    pub partition: CategoryClassPartition,
    /// Hidden size per direction of the recurrent head when it is on.
    pub lstm_hidden: usize,
    /// Whether the adaptive mixture also weighs the embedding output.
    pub mix_embedding: bool,
    /// Train on supplied encoder states instead of the toy encoder.
    pub precomputed: bool,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Model configuration for a vocabulary of `vocab_size` ids.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let s = self.train.switches;
        ModelConfig {
            encoder: ToyEncoderConfig {
                max_len: self.train.max_seq_len,
                dropout: self.train.dropout,
                vocab_size,
                ..self.encoder.clone()
            },
            partition: self.partition.clone(),
            layer_mix: if s.adaptive_shared {
                LayerMix::Adaptive {
                    include_embedding: self.mix_embedding,
                }
            } else {
                LayerMix::FinalLayer
            },
            lstm_hidden: s.recurrent_head.then_some(self.lstm_hidden),
            acrf: s.acrf,
            precomputed: self.precomputed,
        }
    }

    /// Freshly initialized model, seeded with the training seed.
    pub fn build_model(&self, vocab: Vocab) -> Result<AsacModel> {
        AsacModel::new(self.model_config(vocab.len()), vocab, self.train.seed)
    }
}

/// Examples with optional precomputed encoder states (same order). With
/// states present the encoder is frozen and skipped.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub examples: &'a [LabeledExample],
    pub states: Option<&'a [LayerStates]>,
}

impl<'a> Dataset<'a> {
    pub fn new(examples: &'a [LabeledExample]) -> Self {
        Self { examples, states: None }
    }

    pub fn with_states(examples: &'a [LabeledExample], states: &'a [LayerStates]) -> Result<Self> {
        if states.len() != examples.len() {
            return Err(Error::LengthMismatch {
                expected: examples.len(),
                found: states.len(),
            });
        }
        Ok(Self {
            examples,
            states: Some(states),
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn states(&self, i: usize) -> Option<&'a LayerStates> {
        self.states.map(|s| &s[i])
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean over batches of the mean per-sentence loss.
    pub train_loss: f64,
    /// Overall second-pass F1 on the dev set; `None` without a dev set.
    pub dev_f1: Option<f64>,
    /// Dev F1 restricted to each class's categories, by class id.
    pub per_class_f1: Vec<f64>,
}

/// Mean loss of `batch` with mean gradients written into `grads`
/// (overwritten, not accumulated).
pub fn loss_for_batch(
    model: &AsacModel,
    data: &Dataset<'_>,
    batch: &[usize],
    loss_mode: LossMode,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    grads: &mut AsacParams,
) -> Result<SentenceLoss> {
    grads.zero();
    let mut total = SentenceLoss { pass1: 0.0, pass2: 0.0 };
    if batch.is_empty() {
        return Ok(total);
    }
    for &i in batch {
        let l = model.loss_and_grad(
            &data.examples[i],
            data.states(i),
            loss_mode,
            dropout_rng.as_deref_mut(),
            grads,
        )?;
        total.pass1 += l.pass1;
        total.pass2 += l.pass2;
    }
    let k = 1.0 / batch.len() as f64;
    grads.scale(k);
    total.pass1 *= k;
    total.pass2 *= k;
    Ok(total)
}

/// Model and optimizer state carried across epochs.
#[derive(Debug)]
pub struct Trainer {
    pub model: AsacModel,
    config: TrainConfig,
    optimizer: AdamW,
    order_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    grads: AsacParams,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: AsacModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model.config.encoder.max_len != config.max_seq_len {
            return Err(Error::InvalidConfig(alloc::format!(
                "model max_len {} differs from max_seq_len {}",
                model.config.encoder.max_len,
                config.max_seq_len
            )));
        }
        let optimizer = AdamW::new(config.optimizer(), model.params.num_params(), ENCODER_PREFIX);
        let grads = model.zero_grads();
        let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
        order_rng.set_stream(1);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
        dropout_rng.set_stream(2);
        Ok(Self {
            model,
            config,
            optimizer,
            order_rng,
            dropout_rng,
            grads,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One optimizer step on the examples `batch` of `data`; returns the
    /// mean loss. A non-finite loss or gradient aborts before the update.
    pub fn train_batch(&mut self, data: &Dataset<'_>, batch: &[usize]) -> Result<f64> {
        // precomputed states carry no encoder and hence no dropout
        let rng = (data.states.is_none() && self.config.dropout > 0.0).then_some(&mut self.dropout_rng);
        let total = loss_for_batch(&self.model, data, batch, self.config.loss_mode, rng, &mut self.grads)?.total();
        if !total.is_finite() || !self.grads.flatten().iter().all(|g| g.is_finite()) {
            return Err(Error::Diverged {
                epoch: self.epoch,
                batch: 0,
            });
        }
        self.optimizer.step(&mut self.model.params, &self.grads);
        self.model.params.enforce_constraints();
        Ok(total)
    }

    /// One pass over `train` in a freshly shuffled order, then a dev
    /// evaluation when `dev` is non-empty.
    pub fn run_epoch(&mut self, train: &Dataset<'_>, dev: &Dataset<'_>) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::InvalidData("training set is empty".into()));
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            loss_sum += self.train_batch(train, batch).map_err(|e| match e {
                Error::Diverged { epoch, .. } => Error::Diverged { epoch, batch: b },
                e => e,
            })?;
            batches += 1;
        }
        let (dev_f1, per_class_f1) = if dev.is_empty() {
            (None, Vec::new())
        } else {
            let e = evaluate(&self.model, dev)?;
            let per_class = (0..self.model.num_classes())
                .map(|i| class_f1(&e.pass2, self.model.config.partition.class(i)))
                .collect();
            (Some(e.pass2.overall.f1), per_class)
        };
        Ok(EpochRecord {
            epoch: self.epoch,
            train_loss: loss_sum / batches as f64,
            dev_f1,
            per_class_f1,
        })
    }
}

/// Trains for `config.epochs` epochs, calling `on_epoch` after each.
pub fn train(
    model: AsacModel,
    config: &TrainConfig,
    train: &Dataset<'_>,
    dev: &Dataset<'_>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(AsacModel, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let record = trainer.run_epoch(train, dev)?;
        on_epoch(&record);
        log.push(record);
    }
    Ok((trainer.model, log))
}
