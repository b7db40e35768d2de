//! Small trainable transformer encoder that keeps every layer's output.
//!
//! Input is `[CLS] c_0 … c_{N-1} [SEP]`; `h_0` is token embedding plus a
//! sinusoidal position code, and each `h_{j+1}` is a pre-norm block
//! (self-attention then a GELU feed-forward, both residual) applied to
//! `h_j`. Only the `N + 2` real positions are computed; padding positions
//! are zero at every layer and never attended to.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Vocab;
use crate::emission::xavier;
use crate::error::{Error, Result};
use crate::math::{gelu, gelu_grad, log, sqrt, exp, softmax_backward, softmax_in_place};
use crate::params::{join, Parameters};
use crate::tensor::{axpy, dot, gemm_acc, gemm_tn_acc, Matrix};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToyEncoderConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    /// Maximum positions including the two markers.
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            vocab_size: 256,
            max_len: 128,
            dropout: 0.1,
        }
    }
}

impl ToyEncoderConfig {
    /// Shape of the 12-layer, 768-wide pretrained encoder.
    pub fn base_scale(vocab_size: usize) -> Self {
        Self {
            n_layers: 12,
            d_model: 768,
            n_heads: 12,
            d_ff: 3072,
            vocab_size,
            max_len: 128,
            dropout: 0.1,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_layers + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(alloc::format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model,
                self.n_heads
            )));
        }
        if self.max_len < 3 {
            return Err(Error::InvalidConfig("max_len must leave room for markers".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        if self.vocab_size < Vocab::RESERVED {
            return Err(Error::InvalidConfig("vocab_size below reserved ids".into()));
        }
        Ok(())
    }
}

/// Hidden states of every layer, `h_0` first. Each state holds the `N + 2`
/// computed positions (`[CLS]`, characters, `[SEP]`); the remaining
/// positions up to `max_len` are zero and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStates {
    states: Vec<Matrix>,
    max_len: usize,
}

impl LayerStates {
    pub fn new(states: Vec<Matrix>, max_len: usize) -> Result<Self> {
        let first = states.first().ok_or(Error::EmptySequence)?;
        let (rows, cols) = (first.rows(), first.cols());
        if rows < 2 {
            return Err(Error::InvalidData("layer states need both marker positions".into()));
        }
        if rows > max_len {
            return Err(Error::SentenceTooLong {
                len: rows - 2,
                max_len,
            });
        }
        for s in &states {
            if s.rows() != rows {
                return Err(Error::DimensionMismatch {
                    what: "positions per layer",
                    expected: rows,
                    found: s.rows(),
                });
            }
            if s.cols() != cols {
                return Err(Error::DimensionMismatch {
                    what: "hidden width per layer",
                    expected: cols,
                    found: s.cols(),
                });
            }
        }
        Ok(Self { states, max_len })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_positions(&self) -> usize {
        self.states[0].rows()
    }

    /// Character count `N` (positions minus the two markers).
    pub fn valid_len(&self) -> usize {
        self.n_positions() - 2
    }

    pub fn d_model(&self) -> usize {
        self.states[0].cols()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn state(&self, j: usize) -> &Matrix {
        &self.states[j]
    }

    pub fn states(&self) -> &[Matrix] {
        &self.states
    }

    /// Value at `(layer, position, feature)`; zero on padding positions.
    pub fn get(&self, layer: usize, position: usize, feature: usize) -> f64 {
        if position < self.n_positions() {
            self.states[layer][(position, feature)]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub w_query: Matrix,
    pub b_query: Vec<f64>,
    pub w_key: Matrix,
    pub b_key: Vec<f64>,
    pub w_value: Matrix,
    pub b_value: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w_ff1: Matrix,
    pub b_ff1: Vec<f64>,
    pub w_ff2: Matrix,
    pub b_ff2: Vec<f64>,
}

impl EncoderLayerParams {
    fn zeros(d: usize, d_ff: usize) -> Self {
        Self {
            ln1_gain: vec![0.0; d],
            ln1_bias: vec![0.0; d],
            w_query: Matrix::zeros(d, d),
            b_query: vec![0.0; d],
            w_key: Matrix::zeros(d, d),
            b_key: vec![0.0; d],
            w_value: Matrix::zeros(d, d),
            b_value: vec![0.0; d],
            w_out: Matrix::zeros(d, d),
            b_out: vec![0.0; d],
            ln2_gain: vec![0.0; d],
            ln2_bias: vec![0.0; d],
            w_ff1: Matrix::zeros(d, d_ff),
            b_ff1: vec![0.0; d_ff],
            w_ff2: Matrix::zeros(d_ff, d),
            b_ff2: vec![0.0; d],
        }
    }

    fn new<R: Rng>(d: usize, d_ff: usize, rng: &mut R) -> Self {
        Self {
            ln1_gain: vec![1.0; d],
            ln2_gain: vec![1.0; d],
            w_query: xavier(d, d, rng),
            w_key: xavier(d, d, rng),
            w_value: xavier(d, d, rng),
            w_out: xavier(d, d, rng),
            w_ff1: xavier(d, d_ff, rng),
            w_ff2: xavier(d_ff, d, rng),
            ..Self::zeros(d, d_ff)
        }
    }
}

impl Parameters for EncoderLayerParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "ln1_gain"), &self.ln1_gain);
        f(&join(prefix, "ln1_bias"), &self.ln1_bias);
        f(&join(prefix, "w_query"), self.w_query.as_slice());
        f(&join(prefix, "b_query"), &self.b_query);
        f(&join(prefix, "w_key"), self.w_key.as_slice());
        f(&join(prefix, "b_key"), &self.b_key);
        f(&join(prefix, "w_value"), self.w_value.as_slice());
        f(&join(prefix, "b_value"), &self.b_value);
        f(&join(prefix, "w_out"), self.w_out.as_slice());
        f(&join(prefix, "b_out"), &self.b_out);
        f(&join(prefix, "ln2_gain"), &self.ln2_gain);
        f(&join(prefix, "ln2_bias"), &self.ln2_bias);
        f(&join(prefix, "w_ff1"), self.w_ff1.as_slice());
        f(&join(prefix, "b_ff1"), &self.b_ff1);
        f(&join(prefix, "w_ff2"), self.w_ff2.as_slice());
        f(&join(prefix, "b_ff2"), &self.b_ff2);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "ln1_gain"), &mut self.ln1_gain);
        f(&join(prefix, "ln1_bias"), &mut self.ln1_bias);
        f(&join(prefix, "w_query"), self.w_query.as_mut_slice());
        f(&join(prefix, "b_query"), &mut self.b_query);
        f(&join(prefix, "w_key"), self.w_key.as_mut_slice());
        f(&join(prefix, "b_key"), &mut self.b_key);
        f(&join(prefix, "w_value"), self.w_value.as_mut_slice());
        f(&join(prefix, "b_value"), &mut self.b_value);
        f(&join(prefix, "w_out"), self.w_out.as_mut_slice());
        f(&join(prefix, "b_out"), &mut self.b_out);
        f(&join(prefix, "ln2_gain"), &mut self.ln2_gain);
        f(&join(prefix, "ln2_bias"), &mut self.ln2_bias);
        f(&join(prefix, "w_ff1"), self.w_ff1.as_mut_slice());
        f(&join(prefix, "b_ff1"), &mut self.b_ff1);
        f(&join(prefix, "w_ff2"), self.w_ff2.as_mut_slice());
        f(&join(prefix, "b_ff2"), &mut self.b_ff2);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_embedding: Matrix,
    pub layers: Vec<EncoderLayerParams>,
}

impl EncoderParams {
    pub fn new<R: Rng>(config: &ToyEncoderConfig, rng: &mut R) -> Self {
        let data = (0..config.vocab_size * config.d_model)
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect();
        Self {
            token_embedding: Matrix::from_vec(config.vocab_size, config.d_model, data),
            layers: (0..config.n_layers)
                .map(|_| EncoderLayerParams::new(config.d_model, config.d_ff, rng))
                .collect(),
        }
    }

    /// No tensors at all, for models that read precomputed states.
    pub fn empty() -> Self {
        Self {
            token_embedding: Matrix::zeros(0, 0),
            layers: Vec::new(),
        }
    }

    /// Every parameter zero, layer-norm gains included.
    pub fn zeros(config: &ToyEncoderConfig) -> Self {
        Self {
            token_embedding: Matrix::zeros(config.vocab_size, config.d_model),
            layers: (0..config.n_layers)
                .map(|_| EncoderLayerParams::zeros(config.d_model, config.d_ff))
                .collect(),
        }
    }
}

impl Parameters for EncoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "token_embedding"), self.token_embedding.as_slice());
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &alloc::format!("layer{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "token_embedding"), self.token_embedding.as_mut_slice());
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &alloc::format!("layer{i}")), f);
        }
    }
}

/// Sinusoidal position code for `rows` positions.
pub fn positional_encoding(rows: usize, d: usize) -> Matrix {
    let mut pe = Matrix::zeros(rows, d);
    for p in 0..rows {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = p as f64 / exp(exponent * log(10000.0));
            pe[(p, i)] = if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) };
        }
    }
    pe
}

#[derive(Debug, Clone)]
struct LayerNormTrace {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64]) -> (Matrix, LayerNormTrace) {
    let (n, d) = (x.rows(), x.cols());
    let mut normalized = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut inv_std = vec![0.0; n];
    for p in 0..n {
        let row = x.row(p);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / sqrt(var + LN_EPS);
        inv_std[p] = r;
        for i in 0..d {
            let z = (row[i] - mean) * r;
            normalized[(p, i)] = z;
            out[(p, i)] = gain[i] * z + bias[i];
        }
    }
    (out, LayerNormTrace { normalized, inv_std })
}

fn layer_norm_backward(
    trace: &LayerNormTrace,
    gain: &[f64],
    d_out: &Matrix,
    d_gain: &mut [f64],
    d_bias: &mut [f64],
    d_x: &mut Matrix,
) {
    let (n, d) = (d_out.rows(), d_out.cols());
    let mut dz = vec![0.0; d];
    for p in 0..n {
        let z = trace.normalized.row(p);
        let g = d_out.row(p);
        for i in 0..d {
            d_gain[i] += g[i] * z[i];
            d_bias[i] += g[i];
            dz[i] = g[i] * gain[i];
        }
        let mean_dz = dz.iter().sum::<f64>() / d as f64;
        let mean_dz_z = dot(&dz, z) / d as f64;
        let r = trace.inv_std[p];
        let dx = d_x.row_mut(p);
        for i in 0..d {
            dx[i] += r * (dz[i] - mean_dz - z[i] * mean_dz_z);
        }
    }
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), w.cols());
    out.add_row_vector(b);
    gemm_acc(x.as_slice(), w.as_slice(), out.as_mut_slice(), x.rows(), x.cols(), w.cols());
    out
}

/// Accumulates weight and bias gradients of `x · w + b`; returns `∂/∂x`.
fn affine_backward(x: &Matrix, w: &Matrix, d_out: &Matrix, d_w: &mut Matrix, d_b: &mut [f64]) -> Matrix {
    d_out.col_sums_into(d_b);
    gemm_tn_acc(x.as_slice(), d_out.as_slice(), d_w.as_mut_slice(), x.rows(), x.cols(), w.cols());
    d_out.matmul_t(w)
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

#[derive(Debug, Clone)]
struct LayerTrace {
    ln1: LayerNormTrace,
    attn_in: Matrix,
    query: Matrix,
    key: Matrix,
    value: Matrix,
    /// One `L × L` row-stochastic map per head.
    probs: Vec<Matrix>,
    context: Matrix,
    attn_mask: Option<Vec<f64>>,
    ln2: LayerNormTrace,
    ff_in: Matrix,
    ff_pre: Matrix,
    ff_act: Matrix,
    ff_mask: Option<Vec<f64>>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    tokens: Vec<u32>,
    layers: Vec<LayerTrace>,
}

impl EncoderCache {
    /// Attention maps of `layer`, one `(N+2) × (N+2)` matrix per head.
    pub fn attention_maps(&self, layer: usize) -> &[Matrix] {
        &self.layers[layer].probs
    }
}

/// Borrowed view pairing an encoder configuration with its parameters.
#[derive(Debug, Clone, Copy)]
pub struct ToyEncoder<'a> {
    pub config: &'a ToyEncoderConfig,
    pub params: &'a EncoderParams,
}

impl<'a> ToyEncoder<'a> {
    pub fn new(config: &'a ToyEncoderConfig, params: &'a EncoderParams) -> Self {
        Self { config, params }
    }

    /// Evaluation-mode forward pass over character ids (markers are added
    /// here).
    pub fn encode(&self, char_ids: &[u32]) -> Result<LayerStates> {
        self.forward(char_ids, None).map(|(s, _)| s)
    }

    /// Forward pass keeping the activations for [`ToyEncoder::backward`].
    /// Dropout is applied only when `dropout_rng` is given.
    pub fn forward(&self, char_ids: &[u32], mut dropout_rng: Option<&mut ChaCha8Rng>) -> Result<(LayerStates, EncoderCache)> {
        let cfg = self.config;
        if char_ids.len() + 2 > cfg.max_len {
            return Err(Error::SentenceTooLong {
                len: char_ids.len(),
                max_len: cfg.max_len,
            });
        }
        let mut tokens = Vec::with_capacity(char_ids.len() + 2);
        tokens.push(Vocab::CLS);
        tokens.extend_from_slice(char_ids);
        tokens.push(Vocab::SEP);
        let l = tokens.len();
        let d = cfg.d_model;
        let mut h = positional_encoding(l, d);
        for (p, &t) in tokens.iter().enumerate() {
            let t = t as usize;
            if t >= cfg.vocab_size {
                return Err(Error::DimensionMismatch {
                    what: "token id vs vocabulary size",
                    expected: cfg.vocab_size,
                    found: t + 1,
                });
            }
            axpy(1.0, self.params.token_embedding.row(t), h.row_mut(p));
        }
        let rate = if dropout_rng.is_some() { cfg.dropout } else { 0.0 };
        let mut states = Vec::with_capacity(cfg.n_layers + 1);
        let mut traces = Vec::with_capacity(cfg.n_layers);
        states.push(h);
        for lp in &self.params.layers {
            let rng = dropout_rng.as_deref_mut().filter(|_| rate > 0.0);
            let (out, trace) = self.layer_forward(lp, states.last().unwrap(), rate, rng);
            states.push(out);
            traces.push(trace);
        }
        Ok((
            LayerStates::new(states, cfg.max_len)?,
            EncoderCache {
                tokens,
                layers: traces,
            },
        ))
    }

    fn layer_forward(
        &self,
        lp: &EncoderLayerParams,
        x: &Matrix,
        rate: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Matrix, LayerTrace) {
        let l = x.rows();
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = d / heads;
        let scale = 1.0 / sqrt(dh as f64);

        let (attn_in, ln1) = layer_norm(x, &lp.ln1_gain, &lp.ln1_bias);
        let query = affine(&attn_in, &lp.w_query, &lp.b_query);
        let key = affine(&attn_in, &lp.w_key, &lp.b_key);
        let value = affine(&attn_in, &lp.w_value, &lp.b_value);
        let mut context = Matrix::zeros(l, d);
        let mut probs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let cols = hd * dh..(hd + 1) * dh;
            let mut p = Matrix::zeros(l, l);
            for i in 0..l {
                let qi = &query.row(i)[cols.clone()];
                let row = p.row_mut(i);
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qi, &key.row(j)[cols.clone()]) * scale;
                }
                softmax_in_place(row);
            }
            for i in 0..l {
                for j in 0..l {
                    let w = p[(i, j)];
                    let (vrow, crow) = (&value.row(j)[cols.clone()], &mut context.row_mut(i)[cols.clone()]);
                    axpy(w, vrow, crow);
                }
            }
            probs.push(p);
        }
        let mut attn_out = affine(&context, &lp.w_out, &lp.b_out);
        let attn_mask = rng.as_deref_mut().map(|r| dropout_mask(r, l * d, rate));
        if let Some(m) = &attn_mask {
            attn_out.as_mut_slice().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        let mut mid = x.clone();
        mid.add_assign(&attn_out);

        let (ff_in, ln2) = layer_norm(&mid, &lp.ln2_gain, &lp.ln2_bias);
        let ff_pre = affine(&ff_in, &lp.w_ff1, &lp.b_ff1);
        let mut ff_act = ff_pre.clone();
        ff_act.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
        let mut ff_out = affine(&ff_act, &lp.w_ff2, &lp.b_ff2);
        let ff_mask = rng.map(|r| dropout_mask(r, l * d, rate));
        if let Some(m) = &ff_mask {
            ff_out.as_mut_slice().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        let mut out = mid.clone();
        out.add_assign(&ff_out);
        (
            out,
            LayerTrace {
                ln1,
                attn_in,
                query,
                key,
                value,
                probs,
                context,
                attn_mask,
                ln2,
                ff_in,
                ff_pre,
                ff_act,
                ff_mask,
            },
        )
    }

    fn layer_backward(&self, lp: &EncoderLayerParams, t: &LayerTrace, d_out: &Matrix, g: &mut EncoderLayerParams) -> Matrix {
        let l = d_out.rows();
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = d / heads;
        let scale = 1.0 / sqrt(dh as f64);

        // feed-forward branch
        let mut d_ff_out = d_out.clone();
        if let Some(m) = &t.ff_mask {
            d_ff_out.as_mut_slice().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        let mut d_act = affine_backward(&t.ff_act, &lp.w_ff2, &d_ff_out, &mut g.w_ff2, &mut g.b_ff2);
        for (dv, &pre) in d_act.as_mut_slice().iter_mut().zip(t.ff_pre.as_slice()) {
            *dv *= gelu_grad(pre);
        }
        let d_ff_in = affine_backward(&t.ff_in, &lp.w_ff1, &d_act, &mut g.w_ff1, &mut g.b_ff1);
        let mut d_mid = d_out.clone();
        layer_norm_backward(&t.ln2, &lp.ln2_gain, &d_ff_in, &mut g.ln2_gain, &mut g.ln2_bias, &mut d_mid);

        // attention branch
        let mut d_attn_out = d_mid.clone();
        if let Some(m) = &t.attn_mask {
            d_attn_out.as_mut_slice().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        let d_context = affine_backward(&t.context, &lp.w_out, &d_attn_out, &mut g.w_out, &mut g.b_out);
        let mut d_query = Matrix::zeros(l, d);
        let mut d_key = Matrix::zeros(l, d);
        let mut d_value = Matrix::zeros(l, d);
        let mut d_p = vec![0.0; l];
        let mut d_s = vec![0.0; l];
        for hd in 0..heads {
            let cols = hd * dh..(hd + 1) * dh;
            let p = &t.probs[hd];
            for i in 0..l {
                let dc = &d_context.row(i)[cols.clone()];
                for j in 0..l {
                    d_p[j] = dot(dc, &t.value.row(j)[cols.clone()]);
                    axpy(p[(i, j)], dc, &mut d_value.row_mut(j)[cols.clone()]);
                }
                softmax_backward(p.row(i), &d_p, &mut d_s);
                for j in 0..l {
                    let s = d_s[j] * scale;
                    if s != 0.0 {
                        axpy(s, &t.key.row(j)[cols.clone()], &mut d_query.row_mut(i)[cols.clone()]);
                        axpy(s, &t.query.row(i)[cols.clone()], &mut d_key.row_mut(j)[cols.clone()]);
                    }
                }
            }
        }
        let mut d_attn_in = affine_backward(&t.attn_in, &lp.w_query, &d_query, &mut g.w_query, &mut g.b_query);
        d_attn_in.add_assign(&affine_backward(&t.attn_in, &lp.w_key, &d_key, &mut g.w_key, &mut g.b_key));
        d_attn_in.add_assign(&affine_backward(&t.attn_in, &lp.w_value, &d_value, &mut g.w_value, &mut g.b_value));
        let mut d_x = d_mid;
        layer_norm_backward(&t.ln1, &lp.ln1_gain, &d_attn_in, &mut g.ln1_gain, &mut g.ln1_bias, &mut d_x);
        d_x
    }

    /// Backward pass given `∂loss/∂h_j` for every state `j` (each
    /// `(N+2) × d_model`). Accumulates into `grads`.
    pub fn backward(&self, cache: &EncoderCache, d_states: &[Matrix], grads: &mut EncoderParams) {
        assert_eq!(d_states.len(), self.config.n_layers + 1, "one gradient per state");
        let mut carry = d_states[self.config.n_layers].clone();
        for (li, (lp, trace)) in self.params.layers.iter().zip(&cache.layers).enumerate().rev() {
            let mut d_in = self.layer_backward(lp, trace, &carry, &mut grads.layers[li]);
            d_in.add_assign(&d_states[li]);
            carry = d_in;
        }
        for (p, &tok) in cache.tokens.iter().enumerate() {
            axpy(1.0, carry.row(p), grads.token_embedding.row_mut(tok as usize));
        }
    }
}
