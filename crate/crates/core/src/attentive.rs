//! Attentive second decoding pass.
//!
//! Every class's first-pass Viterbi decode is rendered one-hot and mapped
//! into each other class's tag space; the sum plus a bias is that class's
//! attention query. Attending over the class's own emission rows
//! (keys = values = `H_i`) yields a residual `R_i`, and the class is decoded
//! again on `H_i + R_i` with the same transition scores.
//!
//! The padding tag column is a decoding mask, not a feature: attention
//! scores and values use only the real-tag columns, the residual's padding
//! column is zero, and the mask is re-applied to `H_i + R_i`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::AddAssign;

use rand::Rng;

use crate::crf::{viterbi, CrfParameters};
use crate::data::TagSequence;
use crate::emission::EmissionMatrix;
use crate::error::{Error, Result};
use crate::math::{softmax_backward, softmax_in_place, sqrt};
use crate::params::{join, Parameters};
use crate::tensor::{axpy, dot, Matrix};

/// Map from a source class's tags to a target class's tags.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMap {
    pub source: usize,
    pub target: usize,
    /// `d_t(source) × d_t(target)`
    pub weight: Matrix,
}

/// One map per ordered class pair plus one bias per target class.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryParameters {
    tag_counts: Vec<usize>,
    maps: Vec<QueryMap>,
    pub biases: Vec<Vec<f64>>,
}

impl QueryParameters {
    /// All-zero maps and biases; `tag_counts[i]` is `d_t` of class `i`.
    pub fn zeros(tag_counts: &[usize]) -> Self {
        let m = tag_counts.len();
        let mut maps = Vec::with_capacity(m * m.saturating_sub(1));
        for target in 0..m {
            for source in (0..m).filter(|&k| k != target) {
                maps.push(QueryMap {
                    source,
                    target,
                    weight: Matrix::zeros(tag_counts[source], tag_counts[target]),
                });
            }
        }
        Self {
            tag_counts: tag_counts.to_vec(),
            maps,
            biases: tag_counts.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    pub fn random<R: Rng>(tag_counts: &[usize], scale: f64, rng: &mut R) -> Self {
        let mut q = Self::zeros(tag_counts);
        q.visit_mut("", &mut |_, t| {
            t.iter_mut().for_each(|x| *x = rng.gen_range(-scale..=scale))
        });
        q
    }

    pub fn num_classes(&self) -> usize {
        self.tag_counts.len()
    }

    pub fn tag_counts(&self) -> &[usize] {
        &self.tag_counts
    }

    pub fn maps(&self) -> &[QueryMap] {
        &self.maps
    }

    fn map_index(&self, source: usize, target: usize) -> usize {
        assert_ne!(source, target, "no self map");
        let m = self.num_classes();
        target * (m - 1) + if source < target { source } else { source - 1 }
    }

    pub fn map(&self, source: usize, target: usize) -> &Matrix {
        &self.maps[self.map_index(source, target)].weight
    }

    pub fn map_mut(&mut self, source: usize, target: usize) -> &mut Matrix {
        let i = self.map_index(source, target);
        &mut self.maps[i].weight
    }
}

impl Parameters for QueryParameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for m in &self.maps {
            f(
                &join(prefix, &alloc::format!("map{}to{}", m.source, m.target)),
                m.weight.as_slice(),
            );
        }
        for (i, b) in self.biases.iter().enumerate() {
            f(&join(prefix, &alloc::format!("bias{i}")), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for m in &mut self.maps {
            f(
                &join(prefix, &alloc::format!("map{}to{}", m.source, m.target)),
                m.weight.as_mut_slice(),
            );
        }
        for (i, b) in self.biases.iter_mut().enumerate() {
            f(&join(prefix, &alloc::format!("bias{i}")), b);
        }
    }
}

/// `O_k · W(k→target)` for one sibling decode, valid rows only. Row `p`
/// is simply the map row of the sibling's tag at `p`.
pub fn sibling_term(decode: &TagSequence, params: &QueryParameters, target: usize) -> Matrix {
    let w = params.map(decode.class_id(), target);
    let n = decode.valid_len();
    let mut out = Matrix::zeros(n, w.cols());
    for (p, &tag) in decode.valid().iter().enumerate() {
        out.row_mut(p).copy_from_slice(w.row(tag));
    }
    out
}

fn check_siblings(siblings: &[&TagSequence], m: usize, target: usize) -> Result<usize> {
    let n = siblings.first().map(|s| s.valid_len());
    for k in (0..m).filter(|&k| k != target) {
        if !siblings.iter().any(|s| s.class_id() == k) {
            return Err(Error::MissingSibling { class: k });
        }
    }
    for s in siblings {
        if s.class_id() == target || s.class_id() >= m {
            return Err(Error::InvalidData(alloc::format!(
                "decode of class {} is not a sibling of class {target}",
                s.class_id()
            )));
        }
        if Some(s.valid_len()) != n {
            return Err(Error::LengthMismatch {
                expected: n.unwrap_or(0),
                found: s.valid_len(),
            });
        }
    }
    Ok(n.unwrap_or(0))
}

/// Attention query of `target` from the first-pass decodes of every other
/// class: `Σ_k O_k · W(k→target) + b(target)`, `N × d_t(target)`.
///
/// Positions at or past `N` would hold only the bias (the one-hot rows
/// are zero there); they never reach the residual, so they are not
/// materialized.
pub fn build_query(siblings: &[&TagSequence], params: &QueryParameters, target: usize) -> Result<Matrix> {
    let n = check_siblings(siblings, params.num_classes(), target)?;
    let d_t = params.tag_counts[target];
    let mut q = Matrix::zeros(n, d_t);
    q.add_row_vector(&params.biases[target]);
    for s in siblings {
        let w = params.map(s.class_id(), target);
        for (p, &tag) in s.valid().iter().enumerate() {
            axpy(1.0, w.row(tag), q.row_mut(p));
        }
    }
    Ok(q)
}

/// Gradient of [`build_query`] with respect to the maps and the target bias.
pub fn build_query_backward(
    siblings: &[&TagSequence],
    target: usize,
    d_query: &Matrix,
    grads: &mut QueryParameters,
) {
    d_query.col_sums_into(&mut grads.biases[target]);
    for s in siblings {
        let w = grads.map_mut(s.class_id(), target);
        for (p, &tag) in s.valid().iter().enumerate() {
            axpy(1.0, d_query.row(p), w.row_mut(tag));
        }
    }
}

/// Residual and attention map of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResidual {
    /// `N × d_t`; padding column zero. Rows past `N` are zero.
    pub values: Matrix,
    /// `N × N`, row-stochastic; columns past `N` carry no weight.
    pub attention: Matrix,
    pub max_len: usize,
}

impl AttentionResidual {
    pub fn to_padded(&self) -> Matrix {
        let mut out = Matrix::zeros(self.max_len, self.values.cols());
        out.as_mut_slice()[..self.values.as_slice().len()].copy_from_slice(self.values.as_slice());
        out
    }
}

/// `R = softmax(Q·Hᵀ / √d_t) · H` over the first `N` positions.
pub fn attend(query: &Matrix, emissions: &EmissionMatrix) -> Result<AttentionResidual> {
    let n = emissions.valid_len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let d_t = emissions.num_tags();
    if query.cols() != d_t {
        return Err(Error::DimensionMismatch {
            what: "query width vs tag count",
            expected: d_t,
            found: query.cols(),
        });
    }
    if query.rows() < n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: query.rows(),
        });
    }
    let h = emissions.scores();
    let k = d_t - 1;
    let scale = 1.0 / sqrt(d_t as f64);
    let mut attention = Matrix::zeros(n, n);
    for p in 0..n {
        let qp = &query.row(p)[..k];
        let row = attention.row_mut(p);
        for (r, s) in row.iter_mut().enumerate() {
            *s = dot(qp, &h.row(r)[..k]) * scale;
        }
        softmax_in_place(row);
    }
    let mut values = Matrix::zeros(n, d_t);
    for p in 0..n {
        for r in 0..n {
            let a = attention[(p, r)];
            axpy(a, &h.row(r)[..k], &mut values.row_mut(p)[..k]);
        }
    }
    Ok(AttentionResidual {
        values,
        attention,
        max_len: emissions.max_len(),
    })
}

/// Gradients of [`attend`] with respect to the query and the emissions,
/// given `∂loss/∂R`. Padding columns of both results are zero.
pub fn attend_backward(
    query: &Matrix,
    emissions: &EmissionMatrix,
    residual: &AttentionResidual,
    d_residual: &Matrix,
) -> (Matrix, Matrix) {
    let n = emissions.valid_len();
    let d_t = emissions.num_tags();
    let k = d_t - 1;
    let scale = 1.0 / sqrt(d_t as f64);
    let h = emissions.scores();
    let a = &residual.attention;
    let mut d_query = Matrix::zeros(query.rows(), d_t);
    let mut d_h = Matrix::zeros(n, d_t);
    let mut d_a = vec![0.0; n];
    let mut d_s = vec![0.0; n];
    for p in 0..n {
        let dr = &d_residual.row(p)[..k];
        for r in 0..n {
            d_a[r] = dot(dr, &h.row(r)[..k]);
            axpy(a[(p, r)], dr, &mut d_h.row_mut(r)[..k]);
        }
        softmax_backward(a.row(p), &d_a, &mut d_s);
        for r in 0..n {
            let s = d_s[r] * scale;
            axpy(s, &h.row(r)[..k], &mut d_query.row_mut(p)[..k]);
            axpy(s, &query.row(p)[..k], &mut d_h.row_mut(r)[..k]);
        }
    }
    (d_query, d_h)
}

/// `H + R` with the padding column masked again.
pub fn corrected_emissions(emissions: &EmissionMatrix, residual: &AttentionResidual) -> EmissionMatrix {
    let mut sum = emissions.scores().clone();
    sum.add_assign(&residual.values);
    EmissionMatrix::new(sum, emissions.max_len())
}

/// Both decodes of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDecode {
    pub pass1: TagSequence,
    pub pass2: TagSequence,
    /// `None` when the second pass is switched off.
    pub residual: Option<AttentionResidual>,
}

/// First pass for every class, then (when `residual_on`) queries from the
/// sibling first-pass decodes and a second pass on the corrected
/// emissions. With `residual_on = false` the second pass is the first.
pub fn two_pass_decode(
    emissions: &[EmissionMatrix],
    crfs: &[CrfParameters],
    query: &QueryParameters,
    residual_on: bool,
) -> Result<Vec<ClassDecode>> {
    if emissions.len() != crfs.len() {
        return Err(Error::DimensionMismatch {
            what: "emission matrices vs CRFs",
            expected: crfs.len(),
            found: emissions.len(),
        });
    }
    let pass1: Vec<TagSequence> = emissions
        .iter()
        .zip(crfs)
        .enumerate()
        .map(|(i, (h, crf))| viterbi(h, crf, i))
        .collect();
    let mut out = Vec::with_capacity(emissions.len());
    for (i, (h, crf)) in emissions.iter().zip(crfs).enumerate() {
        if !residual_on {
            out.push(ClassDecode {
                pass1: pass1[i].clone(),
                pass2: pass1[i].clone(),
                residual: None,
            });
            continue;
        }
        let siblings: Vec<&TagSequence> = pass1.iter().filter(|s| s.class_id() != i).collect();
        let q = build_query(&siblings, query, i)?;
        let residual = attend(&q, h)?;
        let pass2 = viterbi(&corrected_emissions(h, &residual), crf, i);
        out.push(ClassDecode {
            pass1: pass1[i].clone(),
            pass2,
            residual: Some(residual),
        });
    }
    Ok(out)
}

/// Label changes between the passes and how many of them fixed an error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChangeStats {
    pub changed: usize,
    /// Changed positions that were wrong after pass 1 and gold after pass 2.
    pub positive: usize,
}

impl ChangeStats {
    pub fn ratio(&self) -> Option<f64> {
        (self.changed > 0).then(|| self.positive as f64 / self.changed as f64)
    }
}

impl AddAssign for ChangeStats {
    fn add_assign(&mut self, rhs: Self) {
        self.changed += rhs.changed;
        self.positive += rhs.positive;
    }
}

pub fn change_stats(pass1: &TagSequence, pass2: &TagSequence, gold: &TagSequence) -> Result<ChangeStats> {
    let n = gold.valid_len();
    for s in [pass1, pass2] {
        if s.valid_len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: s.valid_len(),
            });
        }
    }
    let mut stats = ChangeStats::default();
    for ((&a, &b), &g) in pass1.valid().iter().zip(pass2.valid()).zip(gold.valid()) {
        if a != b {
            stats.changed += 1;
            if b == g && a != g {
                stats.positive += 1;
            }
        }
    }
    Ok(stats)
}
