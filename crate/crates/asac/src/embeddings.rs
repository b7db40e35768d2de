//! Precomputed encoder states in the `ASACEMB1` binary layout.
//!
//! ```text
//! "ASACEMB1"  u32 n_states  u32 d_model  u32 n_sentences
//! per sentence: u32 n_positions, then n_states * n_positions * d_model f32
//! ```
//!
//! All integers and floats are little-endian; values run layer-major, then
//! position, then feature. `n_positions` counts the two marker positions.
//! A sibling JSON-lines file maps each sentence to its source text.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use asac_core::data::LabeledExample;
use asac_core::encoder::LayerStates;
use asac_core::tensor::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ASACEMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub n_states: usize,
    pub d_model: usize,
    pub n_sentences: usize,
}

/// One sentence exactly as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSentence {
    pub n_positions: usize,
    pub values: Vec<f32>,
}

impl RawSentence {
    pub fn from_states(states: &LayerStates) -> Self {
        let values = states
            .states()
            .iter()
            .flat_map(|m| m.as_slice().iter().map(|&x| x as f32))
            .collect();
        Self {
            n_positions: states.n_positions(),
            values,
        }
    }

    pub fn to_states(&self, header: &EmbeddingHeader, max_len: usize) -> asac_core::Result<LayerStates> {
        let per_layer = self.n_positions * header.d_model;
        let layers = self
            .values
            .chunks_exact(per_layer)
            .take(header.n_states)
            .map(|c| Matrix::from_vec(self.n_positions, header.d_model, c.iter().map(|&x| f64::from(x)).collect()))
            .collect();
        LayerStates::new(layers, max_len)
    }
}

/// Streams sentences out of an embeddings file.
pub struct EmbeddingReader<R> {
    inner: R,
    path: PathBuf,
    header: EmbeddingHeader,
    read: usize,
}

impl EmbeddingReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(file), path)
    }
}

impl<R: Read> EmbeddingReader<R> {
    /// Reads and checks the header; `path` only labels errors.
    pub fn new(mut inner: R, path: &Path) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut inner, &mut magic, path, "magic")?;
        if &magic != MAGIC {
            return Err(Error::format(path, format!("bad magic {magic:?}, expected ASACEMB1")));
        }
        let n_states = read_u32(&mut inner, path, "header")? as usize;
        let d_model = read_u32(&mut inner, path, "header")? as usize;
        let n_sentences = read_u32(&mut inner, path, "header")? as usize;
        if n_states == 0 || d_model == 0 {
            return Err(Error::format(path, "header declares zero states or zero width"));
        }
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            header: EmbeddingHeader {
                n_states,
                d_model,
                n_sentences,
            },
            read: 0,
        })
    }

    pub fn header(&self) -> EmbeddingHeader {
        self.header
    }

    /// The next sentence, or `None` after the last one. Bytes after the
    /// declared last sentence are an error.
    pub fn next_sentence(&mut self) -> Result<Option<RawSentence>> {
        if self.read == self.header.n_sentences {
            let mut probe = [0u8; 1];
            return match self.inner.read(&mut probe) {
                Ok(0) => Ok(None),
                Ok(_) => Err(Error::format(&self.path, "trailing bytes after the last sentence")),
                Err(e) => Err(Error::io(&self.path, e)),
            };
        }
        let what = format!("sentence {}", self.read);
        let n_positions = read_u32(&mut self.inner, &self.path, &what)? as usize;
        if n_positions < 2 {
            return Err(Error::format(
                &self.path,
                format!("{what} has {n_positions} positions; both markers are required"),
            ));
        }
        let count = self.header.n_states * n_positions * self.header.d_model;
        let mut bytes = vec![0u8; count * 4];
        read_exact(&mut self.inner, &mut bytes, &self.path, &what)?;
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        self.read += 1;
        Ok(Some(RawSentence { n_positions, values }))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::format(path, format!("file truncated inside {what}")),
        _ => Error::io(path, e),
    })
}

fn read_u32(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Every sentence of `path`, checked against the expected state shape.
pub fn read_embeddings(path: &Path, n_states: usize, d_model: usize) -> Result<(EmbeddingHeader, Vec<RawSentence>)> {
    let mut reader = EmbeddingReader::open(path)?;
    let h = reader.header();
    if h.n_states != n_states || h.d_model != d_model {
        return Err(Error::format(
            path,
            format!(
                "dimension mismatch: file holds {} states of width {}, the model expects {n_states} of width {d_model}",
                h.n_states, h.d_model
            ),
        ));
    }
    let mut out = Vec::with_capacity(h.n_sentences);
    while let Some(s) = reader.next_sentence()? {
        out.push(s);
    }
    Ok((h, out))
}

pub fn write_embeddings<W: Write>(mut w: W, header: &EmbeddingHeader, sentences: &[RawSentence]) -> io::Result<()> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidInput, msg);
    if sentences.len() != header.n_sentences {
        return Err(bad(format!(
            "header declares {} sentences, got {}",
            header.n_sentences,
            sentences.len()
        )));
    }
    let u32_of = |x: usize| u32::try_from(x).map_err(|_| bad(format!("{x} does not fit in u32")));
    w.write_all(MAGIC)?;
    for x in [header.n_states, header.d_model, header.n_sentences] {
        w.write_all(&u32_of(x)?.to_le_bytes())?;
    }
    for (i, s) in sentences.iter().enumerate() {
        let expected = header.n_states * s.n_positions * header.d_model;
        if s.values.len() != expected {
            return Err(bad(format!("sentence {i} holds {} values, expected {expected}", s.values.len())));
        }
        w.write_all(&u32_of(s.n_positions)?.to_le_bytes())?;
        for v in &s.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save_embeddings(path: &Path, header: &EmbeddingHeader, sentences: &[RawSentence]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings(BufWriter::new(file), header, sentences).map_err(|e| Error::io(path, e))
}

/// Sentence `id` of the binary file came from `text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub id: usize,
    pub text: String,
    pub n_positions: usize,
    /// The text was cut to fit the encoder.
    pub truncated: bool,
}

/// `states.bin` pairs with `states.alignment.jsonl`.
pub fn alignment_path(embeddings: &Path) -> PathBuf {
    embeddings.with_extension("alignment.jsonl")
}

pub fn read_alignment(path: &Path) -> Result<Vec<AlignmentRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_alignment(path: &Path, records: &[AlignmentRecord]) -> Result<()> {
    let text: String = records
        .iter()
        .map(|r| serde_json::to_string(r).expect("plain data serializes") + "\n")
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pairs corpus examples with their stored states, in order.
///
/// Each alignment record must carry the example's text and the sentence's
/// position count; truncated sentences cut the example to match.
pub fn attach_states(
    examples: &[LabeledExample],
    alignment: &[AlignmentRecord],
    header: &EmbeddingHeader,
    sentences: &[RawSentence],
    max_len: usize,
    path: &Path,
) -> Result<(Vec<LabeledExample>, Vec<LayerStates>)> {
    if examples.len() != alignment.len() || alignment.len() != sentences.len() {
        return Err(Error::format(
            path,
            format!(
                "{} examples, {} alignment records and {} stored sentences do not line up",
                examples.len(),
                alignment.len(),
                sentences.len()
            ),
        ));
    }
    let mut out_examples = Vec::with_capacity(examples.len());
    let mut out_states = Vec::with_capacity(examples.len());
    for (i, ((ex, rec), s)) in examples.iter().zip(alignment).zip(sentences).enumerate() {
        let mismatch = |what: &str| Error::format(path, format!("sentence {i}: {what}"));
        if rec.id != i {
            return Err(mismatch(&format!("alignment id {} out of order", rec.id)));
        }
        if rec.text != ex.sentence().text() {
            return Err(mismatch("alignment text differs from the corpus"));
        }
        if rec.n_positions != s.n_positions {
            return Err(mismatch("alignment position count differs from the stored sentence"));
        }
        let ex = if rec.truncated {
            ex.truncated(s.n_positions - 2)
        } else {
            ex.clone()
        };
        if ex.len() + 2 != s.n_positions {
            return Err(mismatch(&format!(
                "{} characters need {} positions, file stores {}",
                ex.len(),
                ex.len() + 2,
                s.n_positions
            )));
        }
        out_states.push(s.to_states(header, max_len)?);
        out_examples.push(ex);
    }
    Ok((out_examples, out_states))
}
