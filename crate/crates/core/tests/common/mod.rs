//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use asac_core::crf::CrfParameters;
use asac_core::tensor::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Log-partition, best path and best score by enumerating every path over
/// the real tags (the last column of `h` is padding and never used).
pub fn brute_force_crf(h: &Matrix, crf: &CrfParameters) -> (f64, Vec<usize>, f64) {
    let n = h.rows();
    let k = h.cols() - 1;
    let total = k.pow(n as u32);
    let mut scores = Vec::with_capacity(total);
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut y = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        // most significant digit first, so enumeration is lexicographic
        for p in (0..n).rev() {
            y[p] = c % k;
            c /= k;
        }
        let mut s = crf.start[y[0]] + crf.stop[y[n - 1]];
        for p in 0..n {
            s += h[(p, y[p])];
            if p + 1 < n {
                s += crf.transitions[(y[p], y[p + 1])];
            }
        }
        if s > best.0 {
            best = (s, y.clone());
        }
        scores.push(s);
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    (log_z, best.1, best.0)
}

/// Uniform matrix in `[-scale, scale]`.
pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..=scale)).collect())
}

/// Relative error with a floor of 1e-5 on the denominator, so gradients
/// that are exactly zero are compared against the roundoff of the central
/// difference (about 1e-10) rather than against zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Largest relative error between `analytic` and central finite
/// differences of `f` at `x`, over the coordinates in `coords` (all when
/// `None`).
pub fn finite_difference_error(
    x: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let all: Vec<usize> = (0..x.len()).collect();
    let coords = coords.unwrap_or(&all);
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let h = 1e-5 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let num = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], num));
    }
    worst
}

/// Fixed pseudo-random weights used to reduce a tensor output to a scalar.
pub fn probe_weights(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

pub fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(a, b)| a * b).sum()
}
pub mod checks;

use asac_core::data::CategoryClassPartition;
use asac_core::encoder::ToyEncoderConfig;
use asac_core::train::{ExperimentConfig, TrainConfig};

/// Desk-scale experiment: 2-layer, 32-wide toy encoder with learning rates
/// suited to training it from scratch.
pub fn desk_experiment(seed: u64, epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        encoder: ToyEncoderConfig {
            n_layers: 2,
            d_model: 32,
            n_heads: 2,
            d_ff: 64,
            vocab_size: 0,
            max_len: 128,
            dropout: 0.1,
        },
        partition: CategoryClassPartition::default(),
        lstm_hidden: 32,
        mix_embedding: true,
        precomputed: false,
        train: TrainConfig {
            encoder_lr: 1e-3,
            acrf_lr: 1e-2,
            epochs,
            seed,
            ..TrainConfig::default()
        },
    }
}

/// A much smaller variant for tests that only need training to run.
pub fn tiny_experiment(seed: u64, epochs: usize) -> ExperimentConfig {
    let mut cfg = desk_experiment(seed, epochs);
    cfg.encoder.n_layers = 1;
    cfg.encoder.d_model = 8;
    cfg.encoder.d_ff = 16;
    cfg.lstm_hidden = 4;
    cfg
}
