//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys are errors. Command-line flags are applied after
//! the file and win.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use asac_core::data::CategoryClassPartition;
use asac_core::encoder::ToyEncoderConfig;
use asac_core::model::LossMode;
use asac_core::train::{ExperimentConfig, Switches, TrainConfig};

use crate::corpus::CorpusFormat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Single corpus split 14:3:3 with `split_seed` when `train` is unset.
    pub corpus: Option<PathBuf>,
    pub split_seed: u64,
    /// Corpus format; inferred from the extension when unset.
    pub format: Option<CorpusFormat>,
    pub train_embeddings: Option<PathBuf>,
    pub dev_embeddings: Option<PathBuf>,
    pub test_embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    /// Desk scale: a 2-layer, 32-wide toy encoder with learning rates large
    /// enough for it to converge in a few dozen epochs. Batch size, sequence
    /// length, dropout, weight decay and clipping keep the usual values.
    fn default() -> Self {
        Self {
            train: None,
            dev: None,
            test: None,
            corpus: None,
            split_seed: 0,
            format: None,
            train_embeddings: None,
            dev_embeddings: None,
            test_embeddings: None,
            out_dir: PathBuf::from("run"),
            experiment: ExperimentConfig {
                encoder: ToyEncoderConfig {
                    n_layers: 2,
                    d_model: 32,
                    n_heads: 2,
                    d_ff: 64,
                    ..ToyEncoderConfig::default()
                },
                partition: CategoryClassPartition::default(),
                lstm_hidden: 32,
                mix_embedding: true,
                precomputed: false,
                train: TrainConfig {
                    encoder_lr: 1e-3,
                    acrf_lr: 1e-2,
                    ..TrainConfig::default()
                },
            },
        }
    }
}

pub const KEYS: &[&str] = &[
    "train",
    "dev",
    "test",
    "corpus",
    "split_seed",
    "format",
    "train_embeddings",
    "dev_embeddings",
    "test_embeddings",
    "out_dir",
    "n_layers",
    "d_model",
    "n_heads",
    "d_ff",
    "lstm_hidden",
    "mix_embedding",
    "precomputed",
    "partition",
    "batch_size",
    "max_seq_len",
    "dropout",
    "encoder_lr",
    "acrf_lr",
    "weight_decay",
    "grad_clip",
    "epochs",
    "seed",
    "loss_mode",
    "adaptive_shared",
    "acrf",
    "recurrent_head",
];

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    /// `key=value` as given on the command line.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        let e = &mut self.experiment;
        let t = &mut e.train;
        match key {
            "train" => self.train = path(),
            "dev" => self.dev = path(),
            "test" => self.test = path(),
            "corpus" => self.corpus = path(),
            "split_seed" => self.split_seed = num(key, value)?,
            "format" => self.format = Some(value.parse()?),
            "train_embeddings" => self.train_embeddings = path(),
            "dev_embeddings" => self.dev_embeddings = path(),
            "test_embeddings" => self.test_embeddings = path(),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "n_layers" => e.encoder.n_layers = num(key, value)?,
            "d_model" => e.encoder.d_model = num(key, value)?,
            "n_heads" => e.encoder.n_heads = num(key, value)?,
            "d_ff" => e.encoder.d_ff = num(key, value)?,
            "lstm_hidden" => e.lstm_hidden = num(key, value)?,
            "mix_embedding" => e.mix_embedding = flag(key, value)?,
            "precomputed" => e.precomputed = flag(key, value)?,
            "partition" => {
                e.partition = CategoryClassPartition::parse(value).map_err(|err| Error::Config(format!("partition: {err}")))?
            }
            "batch_size" => t.batch_size = num(key, value)?,
            "max_seq_len" => t.max_seq_len = num(key, value)?,
            "dropout" => t.dropout = num(key, value)?,
            "encoder_lr" => t.encoder_lr = num(key, value)?,
            "acrf_lr" => t.acrf_lr = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "grad_clip" => t.grad_clip = if value == "none" { None } else { Some(num(key, value)?) },
            "epochs" => t.epochs = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "loss_mode" => {
                t.loss_mode = match value {
                    "joint" => LossMode::Joint,
                    "pass1_only" => LossMode::Pass1Only,
                    _ => return Err(Error::Config(format!("loss_mode: expected joint or pass1_only, got {value:?}"))),
                }
            }
            "adaptive_shared" => t.switches.adaptive_shared = flag(key, value)?,
            "acrf" => t.switches.acrf = flag(key, value)?,
            "recurrent_head" => t.switches.recurrent_head = flag(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Checks value ranges without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|e| match e {
            Error::Core(c) => Error::Config(c.to_string()),
            e => e,
        })
    }

    fn check(&self) -> Result<()> {
        let e = &self.experiment;
        e.train.validate()?;
        ToyEncoderConfig {
            vocab_size: asac_core::data::Vocab::RESERVED + 1,
            max_len: e.train.max_seq_len,
            dropout: e.train.dropout,
            ..e.encoder.clone()
        }
        .validate()?;
        if e.train.switches.recurrent_head && e.lstm_hidden == 0 {
            return Err(Error::Config("lstm_hidden must be positive with the recurrent head on".into()));
        }
        Ok(())
    }

    /// Every key with its current value, in `KEYS` order; loading the text
    /// back gives the same configuration.
    pub fn to_text(&self) -> String {
        let e = &self.experiment;
        let t = &e.train;
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut out = String::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                let _ = writeln!(out, "{k} = {v}");
            }
        };
        put("train", p(&self.train));
        put("dev", p(&self.dev));
        put("test", p(&self.test));
        put("corpus", p(&self.corpus));
        put("split_seed", Some(self.split_seed.to_string()));
        put(
            "format",
            self.format.map(|f| match f {
                CorpusFormat::Json => "json".into(),
                CorpusFormat::JsonLines => "jsonl".into(),
            }),
        );
        put("train_embeddings", p(&self.train_embeddings));
        put("dev_embeddings", p(&self.dev_embeddings));
        put("test_embeddings", p(&self.test_embeddings));
        put("out_dir", Some(self.out_dir.display().to_string()));
        put("n_layers", Some(e.encoder.n_layers.to_string()));
        put("d_model", Some(e.encoder.d_model.to_string()));
        put("n_heads", Some(e.encoder.n_heads.to_string()));
        put("d_ff", Some(e.encoder.d_ff.to_string()));
        put("lstm_hidden", Some(e.lstm_hidden.to_string()));
        put("mix_embedding", Some(e.mix_embedding.to_string()));
        put("precomputed", Some(e.precomputed.to_string()));
        put("partition", Some(e.partition.to_string()));
        put("batch_size", Some(t.batch_size.to_string()));
        put("max_seq_len", Some(t.max_seq_len.to_string()));
        put("dropout", Some(t.dropout.to_string()));
        put("encoder_lr", Some(t.encoder_lr.to_string()));
        put("acrf_lr", Some(t.acrf_lr.to_string()));
        put("weight_decay", Some(t.weight_decay.to_string()));
        put("grad_clip", Some(t.grad_clip.map_or("none".into(), |c| c.to_string())));
        put("epochs", Some(t.epochs.to_string()));
        put("seed", Some(t.seed.to_string()));
        put(
            "loss_mode",
            Some(match t.loss_mode {
                LossMode::Joint => "joint".into(),
                LossMode::Pass1Only => "pass1_only".into(),
            }),
        );
        let Switches {
            adaptive_shared,
            acrf,
            recurrent_head,
        } = t.switches;
        put("adaptive_shared", Some(adaptive_shared.to_string()));
        put("acrf", Some(acrf.to_string()));
        put("recurrent_head", Some(recurrent_head.to_string()));
        out
    }
}

impl Error {
    fn message(&self) -> String {
        match self {
            Error::Config(m) => m.clone(),
            other => other.to_string(),
        }
    }
}
