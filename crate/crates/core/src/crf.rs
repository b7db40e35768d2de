//! Exact linear-chain CRF over the real tags of one category-class.
//!
//! A path `y` over `N` positions scores
//! `start[y_0] + Σ T[y_p][y_{p+1}] + Σ H[p][y_p] + stop[y_{N-1}]`.
//! The padding tag never takes part in a path; its transition entries are
//! pinned at [`MASK_SCORE`].

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::TagSequence;
use crate::emission::EmissionMatrix;
use crate::error::{Error, Result};
use crate::math::{exp, LogSumExp, MASK_SCORE};
use crate::params::{join, Parameters};
use crate::tensor::Matrix;

/// Transition table plus start and stop scores for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParameters {
    /// `transitions[(a, b)]` scores moving from tag `a` to tag `b`.
    pub transitions: Matrix,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl CrfParameters {
    /// All-zero scores over `num_tags` tags, the last of which is padding.
    pub fn zeros(num_tags: usize) -> Self {
        assert!(num_tags >= 2, "need at least one real tag and the padding slot");
        let mut crf = Self {
            transitions: Matrix::zeros(num_tags, num_tags),
            start: vec![0.0; num_tags],
            stop: vec![0.0; num_tags],
        };
        crf.enforce_padding();
        crf
    }

    /// Uniform random scores in `[-scale, scale]`.
    pub fn random<R: Rng>(num_tags: usize, scale: f64, rng: &mut R) -> Self {
        let mut crf = Self::zeros(num_tags);
        crf.visit_mut("", &mut |_, t| {
            t.iter_mut().for_each(|x| *x = rng.gen_range(-scale..=scale))
        });
        crf.enforce_padding();
        crf
    }

    pub fn num_tags(&self) -> usize {
        self.start.len()
    }

    pub fn num_real_tags(&self) -> usize {
        self.num_tags() - 1
    }

    /// Pins every score touching the padding tag back to [`MASK_SCORE`].
    pub fn enforce_padding(&mut self) {
        let pad = self.num_tags() - 1;
        for k in 0..=pad {
            self.transitions[(pad, k)] = MASK_SCORE;
            self.transitions[(k, pad)] = MASK_SCORE;
        }
        self.start[pad] = MASK_SCORE;
        self.stop[pad] = MASK_SCORE;
    }

    /// Zeroes the padding entries; used on gradients.
    fn clear_padding(&mut self) {
        let pad = self.num_tags() - 1;
        for k in 0..=pad {
            self.transitions[(pad, k)] = 0.0;
            self.transitions[(k, pad)] = 0.0;
        }
        self.start[pad] = 0.0;
        self.stop[pad] = 0.0;
    }

    pub fn is_finite(&self) -> bool {
        self.transitions.is_finite() && self.start.iter().chain(&self.stop).all(|x| x.is_finite())
    }
}

impl Parameters for CrfParameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "transitions"), self.transitions.as_slice());
        f(&join(prefix, "start"), &self.start);
        f(&join(prefix, "stop"), &self.stop);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "transitions"), self.transitions.as_mut_slice());
        f(&join(prefix, "start"), &mut self.start);
        f(&join(prefix, "stop"), &mut self.stop);
    }
}

fn check_tags(emissions: &EmissionMatrix, crf: &CrfParameters) -> Result<()> {
    if emissions.num_tags() != crf.num_tags() {
        return Err(Error::DimensionMismatch {
            what: "emission tag count vs CRF tag count",
            expected: crf.num_tags(),
            found: emissions.num_tags(),
        });
    }
    Ok(())
}

/// Score of the valid part of `tags` under `emissions` and `crf`.
pub fn path_score(emissions: &EmissionMatrix, crf: &CrfParameters, tags: &TagSequence) -> Result<f64> {
    check_tags(emissions, crf)?;
    let n = emissions.valid_len();
    if tags.valid_len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: tags.valid_len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    Ok(path_score_slice(emissions.scores(), crf, tags.valid()))
}

pub(crate) fn path_score_slice(h: &Matrix, crf: &CrfParameters, y: &[usize]) -> f64 {
    let n = y.len();
    let mut s = crf.start[y[0]] + crf.stop[y[n - 1]];
    for (p, &t) in y.iter().enumerate() {
        s += h[(p, t)];
    }
    for w in y.windows(2) {
        s += crf.transitions[(w[0], w[1])];
    }
    s
}

/// Forward log-scores `alpha[p][t]`: log-sum over all prefixes ending in
/// tag `t` at position `p`.
fn forward(h: &Matrix, crf: &CrfParameters) -> Matrix {
    let n = h.rows();
    let k = crf.num_real_tags();
    let mut alpha = Matrix::zeros(n, k);
    for t in 0..k {
        alpha[(0, t)] = crf.start[t] + h[(0, t)];
    }
    for p in 1..n {
        for t in 0..k {
            let mut acc = LogSumExp::default();
            for s in 0..k {
                acc.push(alpha[(p - 1, s)] + crf.transitions[(s, t)]);
            }
            alpha[(p, t)] = acc.value() + h[(p, t)];
        }
    }
    alpha
}

/// Backward log-scores `beta[p][t]`: log-sum over all suffixes after
/// position `p` given tag `t` at `p`, stop score included.
fn backward(h: &Matrix, crf: &CrfParameters) -> Matrix {
    let n = h.rows();
    let k = crf.num_real_tags();
    let mut beta = Matrix::zeros(n, k);
    for t in 0..k {
        beta[(n - 1, t)] = crf.stop[t];
    }
    for p in (0..n - 1).rev() {
        for s in 0..k {
            let mut acc = LogSumExp::default();
            for t in 0..k {
                acc.push(crf.transitions[(s, t)] + h[(p + 1, t)] + beta[(p + 1, t)]);
            }
            beta[(p, s)] = acc.value();
        }
    }
    beta
}

fn log_partition_from_alpha(alpha: &Matrix, crf: &CrfParameters) -> f64 {
    let n = alpha.rows();
    let mut acc = LogSumExp::default();
    for t in 0..alpha.cols() {
        acc.push(alpha[(n - 1, t)] + crf.stop[t]);
    }
    acc.value()
}

/// `log Σ_y exp(score(y))` over every path of real tags. Zero for an empty
/// sequence (a single empty path).
pub fn log_partition(emissions: &EmissionMatrix, crf: &CrfParameters) -> f64 {
    assert_eq!(emissions.num_tags(), crf.num_tags(), "tag count");
    if emissions.valid_len() == 0 {
        return 0.0;
    }
    log_partition_from_alpha(&forward(emissions.scores(), crf), crf)
}

/// Negative log-likelihood of a gold path together with its gradients.
#[derive(Debug, Clone)]
pub struct NllOutput {
    pub loss: f64,
    /// `∂loss/∂H`, `N × d_t`; the padding column is always zero.
    pub d_emissions: Matrix,
    pub d_crf: CrfParameters,
}

/// `log_partition − path_score(gold)` with analytic gradients from
/// forward-backward marginals.
pub fn nll(emissions: &EmissionMatrix, crf: &CrfParameters, gold: &TagSequence) -> Result<NllOutput> {
    let score = path_score(emissions, crf, gold)?;
    let h = emissions.scores();
    let n = h.rows();
    let k = crf.num_real_tags();
    let d_t = crf.num_tags();
    let alpha = forward(h, crf);
    let beta = backward(h, crf);
    let log_z = log_partition_from_alpha(&alpha, crf);

    let mut d_h = Matrix::zeros(n, d_t);
    let mut d_crf = CrfParameters {
        transitions: Matrix::zeros(d_t, d_t),
        start: vec![0.0; d_t],
        stop: vec![0.0; d_t],
    };
    for p in 0..n {
        for t in 0..k {
            d_h[(p, t)] = exp(alpha[(p, t)] + beta[(p, t)] - log_z);
        }
    }
    for t in 0..k {
        d_crf.start[t] = d_h[(0, t)];
        d_crf.stop[t] = d_h[(n - 1, t)];
    }
    for p in 0..n.saturating_sub(1) {
        for s in 0..k {
            let a = alpha[(p, s)] - log_z;
            for t in 0..k {
                d_crf.transitions[(s, t)] +=
                    exp(a + crf.transitions[(s, t)] + h[(p + 1, t)] + beta[(p + 1, t)]);
            }
        }
    }
    let y = gold.valid();
    for (p, &t) in y.iter().enumerate() {
        d_h[(p, t)] -= 1.0;
    }
    d_crf.start[y[0]] -= 1.0;
    d_crf.stop[y[n - 1]] -= 1.0;
    for w in y.windows(2) {
        d_crf.transitions[(w[0], w[1])] -= 1.0;
    }
    d_crf.clear_padding();
    Ok(NllOutput {
        loss: log_z - score,
        d_emissions: d_h,
        d_crf,
    })
}

/// Highest-scoring path. Ties go to the smallest tag id, both for the final
/// tag and for every back-pointer.
pub fn viterbi(emissions: &EmissionMatrix, crf: &CrfParameters, class_id: usize) -> TagSequence {
    assert_eq!(emissions.num_tags(), crf.num_tags(), "tag count");
    let pad = crf.num_tags() - 1;
    let path = viterbi_path(emissions.scores(), crf);
    TagSequence::new(class_id, &path, emissions.max_len(), pad)
}

pub(crate) fn viterbi_path(h: &Matrix, crf: &CrfParameters) -> Vec<usize> {
    let n = h.rows();
    if n == 0 {
        return Vec::new();
    }
    let k = crf.num_real_tags();
    let mut delta: Vec<f64> = (0..k).map(|t| crf.start[t] + h[(0, t)]).collect();
    let mut next = vec![0.0; k];
    let mut back = vec![0usize; n * k];
    for p in 1..n {
        for t in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (s, &d) in delta.iter().enumerate() {
                let v = d + crf.transitions[(s, t)];
                if v > best {
                    best = v;
                    arg = s;
                }
            }
            next[t] = best + h[(p, t)];
            back[p * k + t] = arg;
        }
        core::mem::swap(&mut delta, &mut next);
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (t, &d) in delta.iter().enumerate() {
        let v = d + crf.stop[t];
        if v > best {
            best = v;
            last = t;
        }
    }
    let mut path = vec![0usize; n];
    path[n - 1] = last;
    for p in (1..n).rev() {
        path[p - 1] = back[p * k + path[p]];
    }
    path
}
