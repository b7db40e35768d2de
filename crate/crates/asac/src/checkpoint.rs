//! Model checkpoints as JSON: configuration, vocabulary, seed and every
//! parameter tensor by name. Floats are written in shortest round-trip form,
//! so saving the same model twice gives the same bytes and loading restores
//! every bit.

use std::fs;
use std::path::Path;

use asac_core::data::{CategoryClassPartition, Vocab};
use asac_core::encoder::ToyEncoderConfig;
use asac_core::model::{AsacModel, LayerMix, ModelConfig};
use asac_core::params::Parameters;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT: &str = "asac-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConfigRecord {
    encoder: ToyEncoderConfig,
    partition: String,
    layer_mix: LayerMix,
    lstm_hidden: Option<usize>,
    acrf: bool,
    precomputed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tensor {
    name: String,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    seed: u64,
    config: ConfigRecord,
    vocab: Vec<char>,
    tensors: Vec<Tensor>,
}

pub fn checkpoint_to_string(model: &AsacModel, seed: u64) -> String {
    let c = &model.config;
    let mut tensors = Vec::new();
    model.params.visit("", &mut |name, t| {
        tensors.push(Tensor {
            name: name.to_string(),
            values: t.to_vec(),
        })
    });
    let file = CheckpointFile {
        format: FORMAT.into(),
        seed,
        config: ConfigRecord {
            encoder: c.encoder.clone(),
            partition: c.partition.to_string(),
            layer_mix: c.layer_mix,
            lstm_hidden: c.lstm_hidden,
            acrf: c.acrf,
            precomputed: c.precomputed,
        },
        vocab: model.vocab.chars().to_vec(),
        tensors,
    };
    serde_json::to_string(&file).expect("plain data serializes") + "\n"
}

/// The model and the seed it was trained with.
pub fn checkpoint_from_str(text: &str, path: &Path) -> Result<(AsacModel, u64)> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if file.format != FORMAT {
        return Err(Error::format(path, format!("unsupported checkpoint format {:?}", file.format)));
    }
    let c = file.config;
    let config = ModelConfig {
        encoder: c.encoder,
        partition: CategoryClassPartition::parse(&c.partition)?,
        layer_mix: c.layer_mix,
        lstm_hidden: c.lstm_hidden,
        acrf: c.acrf,
        precomputed: c.precomputed,
    };
    let mut model = AsacModel::new(config, Vocab::from_chars(file.vocab), 0)?;
    let mut tensors = file.tensors.into_iter();
    let mut bad = None;
    model.params.visit_mut("", &mut |name, t| {
        if bad.is_some() {
            return;
        }
        match tensors.next() {
            Some(s) if s.name == name && s.values.len() == t.len() => t.copy_from_slice(&s.values),
            Some(s) => {
                bad = Some(format!(
                    "tensor {:?} with {} values does not fit {name:?} with {}",
                    s.name,
                    s.values.len(),
                    t.len()
                ))
            }
            None => bad = Some(format!("tensor {name:?} is missing")),
        }
    });
    if let Some(extra) = tensors.next() {
        bad.get_or_insert(format!("unexpected tensor {:?}", extra.name));
    }
    if let Some(msg) = bad {
        return Err(Error::format(path, msg));
    }
    Ok((model, file.seed))
}

pub fn save_checkpoint(path: &Path, model: &AsacModel, seed: u64) -> Result<()> {
    fs::write(path, checkpoint_to_string(model, seed)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(AsacModel, u64)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text, path)
}
