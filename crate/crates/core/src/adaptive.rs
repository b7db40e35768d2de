//! Adaptive layer mixing: each category-class owns a softmax-normalized
//! weight per encoder state and reads the weighted sum of the stack.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::LayerStates;
use crate::error::{Error, Result};
use crate::math::{checked_softmax, softmax_backward};
use crate::params::{join, Parameters};
use crate::tensor::{axpy, dot, Matrix};

/// Character-position encoding of one class (`N × d_model`); the start and
/// end markers are dropped. Rows past `N` are implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEncoding {
    values: Matrix,
    class_id: usize,
    max_len: usize,
}

impl ClassEncoding {
    pub fn new(values: Matrix, class_id: usize, max_len: usize) -> Self {
        Self {
            values,
            class_id,
            max_len,
        }
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn valid_len(&self) -> usize {
        self.values.rows()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }
}

/// Raw mixing logits, one row per class and one column per encoder state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveWeights {
    pub raw: Matrix,
    /// When false the embedding output `h_0` is left out of the mixture
    /// and only transformer layer outputs are weighted.
    pub include_embedding: bool,
}

impl AdaptiveWeights {
    /// All-zero logits: uniform weights over the mixed states.
    pub fn new(num_classes: usize, n_states: usize, include_embedding: bool) -> Self {
        Self {
            raw: Matrix::zeros(num_classes, n_states),
            include_embedding,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.raw.rows()
    }

    pub fn n_states(&self) -> usize {
        self.raw.cols()
    }

    fn first_state(&self) -> usize {
        usize::from(!self.include_embedding)
    }

    /// Normalized weights of `class` over all `n_states` states; a state
    /// left out of the mixture gets weight zero.
    pub fn normalized(&self, class: usize) -> Result<Vec<f64>> {
        let first = self.first_state();
        let mut out = vec![0.0; self.n_states()];
        out[first..].copy_from_slice(&normalize(&self.raw.row(class)[first..])?);
        Ok(out)
    }

    /// Turns `∂loss/∂α*` of `class` into a gradient on the raw logits.
    pub fn backward(&self, class: usize, normalized: &[f64], d_normalized: &[f64], grads: &mut AdaptiveWeights) {
        let first = self.first_state();
        let mut d_raw = vec![0.0; self.n_states() - first];
        softmax_backward(&normalized[first..], &d_normalized[first..], &mut d_raw);
        axpy(1.0, &d_raw, &mut grads.raw.row_mut(class)[first..]);
    }
}

impl Parameters for AdaptiveWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "raw"), self.raw.as_slice());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "raw"), self.raw.as_mut_slice());
    }
}

/// Softmax of one row of logits, max-shifted.
pub fn normalize(raw_row: &[f64]) -> Result<Vec<f64>> {
    let mut out = raw_row.to_vec();
    checked_softmax(&mut out)?;
    Ok(out)
}

/// `E = Σ_j w_j h_j` over character positions. States with weight exactly
/// zero are skipped, so one-hot weights copy a layer bit-for-bit.
pub fn combine(states: &LayerStates, weights: &[f64], class_id: usize) -> Result<ClassEncoding> {
    if weights.len() != states.n_states() {
        return Err(Error::DimensionMismatch {
            what: "mixing weights vs encoder states",
            expected: states.n_states(),
            found: weights.len(),
        });
    }
    let n = states.valid_len();
    let d = states.d_model();
    let mut values = Matrix::zeros(n, d);
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let chars = &states.state(j).as_slice()[d..(n + 1) * d];
        axpy(w, chars, values.as_mut_slice());
    }
    Ok(ClassEncoding::new(values, class_id, states.max_len()))
}

/// Backward pass of [`combine`]: returns `∂loss/∂w` and accumulates
/// `∂loss/∂h_j` into `d_states` (same layout as `states`).
pub fn combine_backward(
    states: &LayerStates,
    weights: &[f64],
    d_encoding: &Matrix,
    d_states: &mut [Matrix],
) -> Vec<f64> {
    let n = states.valid_len();
    let d = states.d_model();
    let mut d_weights = vec![0.0; weights.len()];
    for (j, &w) in weights.iter().enumerate() {
        let chars = &states.state(j).as_slice()[d..(n + 1) * d];
        d_weights[j] = dot(chars, d_encoding.as_slice());
        if w != 0.0 {
            axpy(w, d_encoding.as_slice(), &mut d_states[j].as_mut_slice()[d..(n + 1) * d]);
        }
    }
    d_weights
}

/// One line of the weight dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRow {
    pub class: usize,
    pub layer: usize,
    pub weight: f64,
}

/// Normalized weight of every (class, layer) pair, class-major.
pub fn dump_weights(weights: &AdaptiveWeights) -> Result<Vec<WeightRow>> {
    let mut rows = Vec::with_capacity(weights.num_classes() * weights.n_states());
    for class in 0..weights.num_classes() {
        for (layer, weight) in weights.normalized(class)?.into_iter().enumerate() {
            rows.push(WeightRow {
                class,
                layer,
                weight,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::exp;

    fn stack(layers: usize, n: usize, d: usize) -> LayerStates {
        let states = (0..layers)
            .map(|j| {
                let data = (0..(n + 2) * d)
                    .map(|i| libm::sin((i * 7 + j * 13) as f64))
                    .collect();
                Matrix::from_vec(n + 2, d, data)
            })
            .collect();
        LayerStates::new(states, 16).unwrap()
    }

    #[test]
    fn uniform_and_shift_invariant() {
        let w = normalize(&[0.0; 13]).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 13.0).abs() < 1e-15));
        let a = normalize(&[0.3, -1.2, 2.0]).unwrap();
        let b = normalize(&[100.3, 98.8, 102.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(normalize(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn matches_scripted_softmax() {
        let w = normalize(&[2.0, 1.0, 0.0, 0.0]).unwrap();
        let z = exp(2.0) + exp(1.0) + 2.0;
        let expect = [exp(2.0) / z, exp(1.0) / z, 1.0 / z, 1.0 / z];
        for (x, y) in w.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn one_hot_selects_layer_exactly() {
        let s = stack(3, 4, 5);
        let e = combine(&s, &[0.0, 1.0, 0.0], 0).unwrap();
        for p in 0..4 {
            assert_eq!(e.values().row(p), s.state(1).row(p + 1));
        }
    }

    #[test]
    fn excluded_embedding_gets_zero_weight() {
        let mut w = AdaptiveWeights::new(2, 5, false);
        w.raw[(0, 0)] = 50.0;
        let row = w.normalized(0).unwrap();
        assert_eq!(row[0], 0.0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dump_has_one_row_per_pair() {
        let mut w = AdaptiveWeights::new(2, 13, true);
        w.raw[(1, 4)] = 1.5;
        let rows = dump_weights(&w).unwrap();
        assert_eq!(rows.len(), 26);
        for class in 0..2 {
            let s: f64 = rows.iter().filter(|r| r.class == class).map(|r| r.weight).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let s = stack(3, 2, 2);
        assert!(combine(&s, &[0.5, 0.5], 0).is_err());
    }
}
