//! CMeEE-style corpus files.
//!
//! A corpus is either a JSON array or JSON lines of
//! `{"text": ..., "entities": [{"start_idx", "end_idx", "type", "entity"}]}`
//! with character offsets and an inclusive `end_idx`.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use asac_core::data::{EntityCategory, EntitySpan, LabeledExample, Sentence};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One JSON array.
    Json,
    /// One object per line.
    JsonLines,
}

impl CorpusFormat {
    /// `.jsonl` means lines, anything else an array.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => CorpusFormat::JsonLines,
            _ => CorpusFormat::Json,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(CorpusFormat::Json),
            "jsonl" => Ok(CorpusFormat::JsonLines),
            other => Err(Error::Config(format!("unknown corpus format {other:?} (json or jsonl)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEntity {
    pub start_idx: usize,
    /// Inclusive.
    pub end_idx: usize,
    #[serde(rename = "type")]
    pub category: String,
    #[serde(default)]
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub text: String,
    #[serde(default)]
    pub entities: Vec<RawEntity>,
}

/// An example left out of a loaded corpus, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCorpus {
    pub examples: Vec<LabeledExample>,
    pub rejected: Vec<Rejection>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LoadedCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, format, path)
}

/// Parses corpus text; `path` only labels errors.
///
/// Malformed JSON, unknown categories and out-of-range offsets are errors.
/// Examples that break the nesting rule, have empty text or whose
/// `entity` string disagrees with the offsets are skipped and reported.
pub fn parse_corpus(text: &str, format: CorpusFormat, path: &Path) -> Result<LoadedCorpus> {
    let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    };
    let raw: Vec<RawExample> = match format {
        CorpusFormat::Json => serde_json::from_str(text).map_err(|e| parse_err(e.line(), e))?,
        CorpusFormat::JsonLines => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e)))
            .collect::<Result<_>>()?,
    };
    let mut corpus = LoadedCorpus {
        examples: Vec::with_capacity(raw.len()),
        rejected: Vec::new(),
    };
    for (index, ex) in raw.iter().enumerate() {
        match convert(ex).map_err(|message| Error::Example {
            path: path.to_path_buf(),
            index,
            message,
        })? {
            Ok(e) => corpus.examples.push(e),
            Err(reason) => corpus.rejected.push(Rejection { index, reason }),
        }
    }
    Ok(corpus)
}

/// Outer error: the file is wrong. Inner error: the example is skipped.
fn convert(raw: &RawExample) -> std::result::Result<std::result::Result<LabeledExample, String>, String> {
    let sentence = Sentence::new(&raw.text);
    let n = sentence.len();
    let mut spans = Vec::with_capacity(raw.entities.len());
    for e in &raw.entities {
        let category: EntityCategory = e.category.parse().map_err(|err: asac_core::Error| err.to_string())?;
        if e.start_idx > e.end_idx || e.end_idx >= n {
            return Err(format!(
                "entity [{}, {}] of type {} is out of bounds for text of {n} characters",
                e.start_idx, e.end_idx, e.category
            ));
        }
        let surface: String = sentence.chars()[e.start_idx..=e.end_idx].iter().collect();
        if !e.entity.is_empty() && e.entity != surface {
            return Ok(Err(format!(
                "entity {:?} does not match text {surface:?} at [{}, {}]",
                e.entity, e.start_idx, e.end_idx
            )));
        }
        spans.push(EntitySpan::new(e.start_idx, e.end_idx, category));
    }
    Ok(LabeledExample::new(sentence, spans).map_err(|e| e.to_string()))
}

pub fn to_raw(example: &LabeledExample) -> RawExample {
    let chars = example.sentence().chars();
    RawExample {
        text: example.sentence().text(),
        entities: example
            .spans()
            .iter()
            .map(|s| RawEntity {
                start_idx: s.start,
                end_idx: s.end,
                category: s.category.name().to_string(),
                entity: chars[s.start..=s.end].iter().collect(),
            })
            .collect(),
    }
}

/// JSON array text with one example per line.
pub fn corpus_to_json(examples: &[LabeledExample]) -> String {
    let mut out = String::from("[\n");
    for (i, ex) in examples.iter().enumerate() {
        out.push_str(&serde_json::to_string(&to_raw(ex)).expect("plain data serializes"));
        out.push_str(if i + 1 < examples.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    out
}

pub fn corpus_to_jsonl(examples: &[LabeledExample]) -> String {
    examples
        .iter()
        .map(|ex| serde_json::to_string(&to_raw(ex)).expect("plain data serializes") + "\n")
        .collect()
}

pub fn save_corpus(path: &Path, examples: &[LabeledExample], format: CorpusFormat) -> Result<()> {
    let text = match format {
        CorpusFormat::Json => corpus_to_json(examples),
        CorpusFormat::JsonLines => corpus_to_jsonl(examples),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
