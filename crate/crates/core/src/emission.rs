//! Emission scores: a bidirectional LSTM shared by all classes followed by a
//! per-class affine projection onto the class's tags.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::adaptive::ClassEncoding;
use crate::error::{Error, Result};
use crate::math::{sigmoid, tanh, MASK_SCORE};
use crate::params::{join, Parameters};
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Matrix};

/// Per-position tag scores of one class. Only the `valid_len` real rows are
/// stored; rows past them are zero. The last column is the padding tag and
/// holds [`MASK_SCORE`] on every stored row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    scores: Matrix,
    max_len: usize,
}

impl EmissionMatrix {
    /// Wraps `scores` (`N × d_t`) and masks its padding column.
    pub fn new(mut scores: Matrix, max_len: usize) -> Self {
        assert!(scores.rows() <= max_len, "more rows than max_len");
        assert!(scores.cols() >= 2, "need a real tag and the padding slot");
        let pad = scores.cols() - 1;
        for p in 0..scores.rows() {
            scores[(p, pad)] = MASK_SCORE;
        }
        Self { scores, max_len }
    }

    pub fn valid_len(&self) -> usize {
        self.scores.rows()
    }

    pub fn num_tags(&self) -> usize {
        self.scores.cols()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// The `valid_len × d_t` block.
    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    /// Full `max_len × d_t` view with zero padding rows.
    pub fn to_padded(&self) -> Matrix {
        let mut out = Matrix::zeros(self.max_len, self.num_tags());
        out.as_mut_slice()[..self.scores.as_slice().len()].copy_from_slice(self.scores.as_slice());
        out
    }
}

pub(crate) fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = crate::math::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// One direction of an LSTM. Gate blocks are ordered input, forget, cell,
/// output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParameters {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Vec<f64>,
}

impl LstmParameters {
    fn new<R: Rng>(d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            w_input: xavier(d_in, 4 * hidden, rng),
            w_hidden: xavier(hidden, 4 * hidden, rng),
            bias,
        }
    }

    fn zeros(d_in: usize, hidden: usize) -> Self {
        Self {
            w_input: Matrix::zeros(d_in, 4 * hidden),
            w_hidden: Matrix::zeros(hidden, 4 * hidden),
            bias: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.rows()
    }
}

impl Parameters for LstmParameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "w_input"), self.w_input.as_slice());
        f(&join(prefix, "w_hidden"), self.w_hidden.as_slice());
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "w_input"), self.w_input.as_mut_slice());
        f(&join(prefix, "w_hidden"), self.w_hidden.as_mut_slice());
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Shared recurrent context layer (optional) and one projection per class.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParameters {
    pub forward: Option<LstmParameters>,
    pub backward: Option<LstmParameters>,
    pub projections: Vec<Projection>,
}

impl HeadParameters {
    /// `lstm_hidden = None` disables the recurrent layer; the projection then
    /// reads the class encoding directly.
    pub fn new<R: Rng>(d_in: usize, lstm_hidden: Option<usize>, tag_counts: &[usize], rng: &mut R) -> Self {
        let (forward, backward, d_context) = match lstm_hidden {
            Some(h) => (
                Some(LstmParameters::new(d_in, h, rng)),
                Some(LstmParameters::new(d_in, h, rng)),
                2 * h,
            ),
            None => (None, None, d_in),
        };
        let projections = tag_counts
            .iter()
            .map(|&d_t| Projection {
                weight: xavier(d_context, d_t, rng),
                bias: vec![0.0; d_t],
            })
            .collect();
        Self {
            forward,
            backward,
            projections,
        }
    }

    pub fn zeros(d_in: usize, lstm_hidden: Option<usize>, tag_counts: &[usize]) -> Self {
        let (forward, backward, d_context) = match lstm_hidden {
            Some(h) => (
                Some(LstmParameters::zeros(d_in, h)),
                Some(LstmParameters::zeros(d_in, h)),
                2 * h,
            ),
            None => (None, None, d_in),
        };
        Self {
            forward,
            backward,
            projections: tag_counts
                .iter()
                .map(|&d_t| Projection {
                    weight: Matrix::zeros(d_context, d_t),
                    bias: vec![0.0; d_t],
                })
                .collect(),
        }
    }

    pub fn has_recurrent(&self) -> bool {
        self.forward.is_some()
    }

    pub fn input_width(&self) -> usize {
        match &self.forward {
            Some(l) => l.w_input.rows(),
            None => self.projections[0].weight.rows(),
        }
    }
}

impl Parameters for HeadParameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        if let (Some(fw), Some(bw)) = (&self.forward, &self.backward) {
            fw.visit(&join(prefix, "lstm_forward"), f);
            bw.visit(&join(prefix, "lstm_backward"), f);
        }
        for (i, p) in self.projections.iter().enumerate() {
            let base = join(prefix, &alloc::format!("projection{i}"));
            f(&join(&base, "weight"), p.weight.as_slice());
            f(&join(&base, "bias"), &p.bias);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        if let (Some(fw), Some(bw)) = (&mut self.forward, &mut self.backward) {
            fw.visit_mut(&join(prefix, "lstm_forward"), f);
            bw.visit_mut(&join(prefix, "lstm_backward"), f);
        }
        for (i, p) in self.projections.iter_mut().enumerate() {
            let base = join(prefix, &alloc::format!("projection{i}"));
            f(&join(&base, "weight"), p.weight.as_mut_slice());
            f(&join(&base, "bias"), &mut p.bias);
        }
    }
}

/// Activations of one LSTM direction, in processing order.
#[derive(Debug, Clone)]
struct LstmTrace {
    /// Post-activation gates, `N × 4h`.
    gates: Matrix,
    cells: Matrix,
    cell_tanh: Matrix,
    hidden: Matrix,
}

fn lstm_forward(params: &LstmParameters, x: &Matrix, reverse: bool) -> LstmTrace {
    let n = x.rows();
    let h = params.hidden();
    let mut pre = Matrix::zeros(n, 4 * h);
    pre.add_row_vector(&params.bias);
    gemm_acc(x.as_slice(), params.w_input.as_slice(), pre.as_mut_slice(), n, x.cols(), 4 * h);
    let mut trace = LstmTrace {
        gates: Matrix::zeros(n, 4 * h),
        cells: Matrix::zeros(n, h),
        cell_tanh: Matrix::zeros(n, h),
        hidden: Matrix::zeros(n, h),
    };
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut z = vec![0.0; 4 * h];
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        z.copy_from_slice(pre.row(t));
        gemm_acc(&h_prev, params.w_hidden.as_slice(), &mut z, 1, h, 4 * h);
        let gates = trace.gates.row_mut(t);
        for k in 0..h {
            gates[k] = sigmoid(z[k]);
            gates[h + k] = sigmoid(z[h + k]);
            gates[2 * h + k] = tanh(z[2 * h + k]);
            gates[3 * h + k] = sigmoid(z[3 * h + k]);
        }
        for k in 0..h {
            let c = gates[h + k] * c_prev[k] + gates[k] * gates[2 * h + k];
            let tc = tanh(c);
            trace.cells[(t, k)] = c;
            trace.cell_tanh[(t, k)] = tc;
            trace.hidden[(t, k)] = gates[3 * h + k] * tc;
            c_prev[k] = c;
            h_prev[k] = gates[3 * h + k] * tc;
        }
    }
    trace
}

/// Backpropagates `d_hidden` (`N × h`) through one direction, accumulating
/// parameter gradients into `grads` and the input gradient into `d_x`.
fn lstm_backward(
    params: &LstmParameters,
    x: &Matrix,
    trace: &LstmTrace,
    d_hidden: &Matrix,
    reverse: bool,
    grads: &mut LstmParameters,
    d_x: &mut Matrix,
) {
    let n = x.rows();
    let h = params.hidden();
    let mut d_pre = Matrix::zeros(n, 4 * h);
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let zeros = vec![0.0; h];
    for step in (0..n).rev() {
        let t = if reverse { n - 1 - step } else { step };
        let prev_t = if step == 0 {
            None
        } else if reverse {
            Some(t + 1)
        } else {
            Some(t - 1)
        };
        let c_prev = prev_t.map_or(&zeros[..], |p| trace.cells.row(p));
        let gates = trace.gates.row(t);
        let dz = d_pre.row_mut(t);
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let tc = trace.cell_tanh[(t, k)];
            let dh = d_hidden[(t, k)] + dh_next[k];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            dz[k] = dc * g * i * (1.0 - i);
            dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * h + k] = dc * i * (1.0 - g * g);
            dz[3 * h + k] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        gemm_nt_acc(dz, params.w_hidden.as_slice(), &mut dh_next, 1, 4 * h, h);
        if let Some(p) = prev_t {
            gemm_tn_acc(trace.hidden.row(p), dz, grads.w_hidden.as_mut_slice(), 1, h, 4 * h);
        }
    }
    d_pre.col_sums_into(&mut grads.bias);
    gemm_tn_acc(x.as_slice(), d_pre.as_slice(), grads.w_input.as_mut_slice(), n, x.cols(), 4 * h);
    gemm_nt_acc(d_pre.as_slice(), params.w_input.as_slice(), d_x.as_mut_slice(), n, 4 * h, x.cols());
}

/// Intermediate values of [`emit_with_cache`], needed for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Matrix,
    traces: Option<(LstmTrace, LstmTrace)>,
    context: Matrix,
}

/// Emission scores for one class.
pub fn emit(encoding: &ClassEncoding, params: &HeadParameters) -> Result<EmissionMatrix> {
    emit_with_cache(encoding, params).map(|(e, _)| e)
}

pub fn emit_with_cache(encoding: &ClassEncoding, params: &HeadParameters) -> Result<(EmissionMatrix, HeadCache)> {
    let x = encoding.values();
    if x.cols() != params.input_width() {
        return Err(Error::DimensionMismatch {
            what: "class encoding width vs head input",
            expected: params.input_width(),
            found: x.cols(),
        });
    }
    let class = encoding.class_id();
    let proj = params.projections.get(class).ok_or(Error::DimensionMismatch {
        what: "class id vs projection count",
        expected: params.projections.len(),
        found: class + 1,
    })?;
    let n = x.rows();
    let (traces, context) = match (&params.forward, &params.backward) {
        (Some(fw), Some(bw)) => {
            let tf = lstm_forward(fw, x, false);
            let tb = lstm_forward(bw, x, true);
            let h = fw.hidden();
            let mut context = Matrix::zeros(n, 2 * h);
            for t in 0..n {
                let row = context.row_mut(t);
                row[..h].copy_from_slice(tf.hidden.row(t));
                row[h..].copy_from_slice(tb.hidden.row(t));
            }
            (Some((tf, tb)), context)
        }
        _ => (None, x.clone()),
    };
    let mut scores = context.matmul(&proj.weight);
    scores.add_row_vector(&proj.bias);
    let emissions = EmissionMatrix::new(scores, encoding.max_len());
    Ok((
        emissions,
        HeadCache {
            input: x.clone(),
            traces,
            context,
        },
    ))
}

/// Backward pass of [`emit_with_cache`]. Accumulates into `grads` and
/// returns `∂loss/∂E` (`N × d_model`). The padding column of
/// `d_emissions` is ignored.
pub fn emit_backward(
    params: &HeadParameters,
    cache: &HeadCache,
    class_id: usize,
    d_emissions: &Matrix,
    grads: &mut HeadParameters,
) -> Matrix {
    let n = cache.input.rows();
    let proj = &params.projections[class_id];
    let d_t = proj.bias.len();
    let mut d_scores = d_emissions.clone();
    for p in 0..n {
        d_scores[(p, d_t - 1)] = 0.0;
    }
    {
        let g = &mut grads.projections[class_id];
        d_scores.col_sums_into(&mut g.bias);
        gemm_tn_acc(
            cache.context.as_slice(),
            d_scores.as_slice(),
            g.weight.as_mut_slice(),
            n,
            cache.context.cols(),
            d_t,
        );
    }
    let d_context = d_scores.matmul_t(&proj.weight);
    match (&params.forward, &params.backward, &cache.traces) {
        (Some(fw), Some(bw), Some((tf, tb))) => {
            let h = fw.hidden();
            let mut d_hf = Matrix::zeros(n, h);
            let mut d_hb = Matrix::zeros(n, h);
            for t in 0..n {
                d_hf.row_mut(t).copy_from_slice(&d_context.row(t)[..h]);
                d_hb.row_mut(t).copy_from_slice(&d_context.row(t)[h..]);
            }
            let mut d_x = Matrix::zeros(n, cache.input.cols());
            lstm_backward(fw, &cache.input, tf, &d_hf, false, grads.forward.as_mut().unwrap(), &mut d_x);
            lstm_backward(bw, &cache.input, tb, &d_hb, true, grads.backward.as_mut().unwrap(), &mut d_x);
            d_x
        }
        _ => d_context,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoding(values: Matrix) -> ClassEncoding {
        ClassEncoding::new(values, 0, 16)
    }

    #[test]
    fn zero_everything_gives_zero_scores() {
        let params = HeadParameters::zeros(6, Some(3), &[4, 6]);
        let e = emit(&encoding(Matrix::zeros(5, 6)), &params).unwrap();
        for p in 0..5 {
            assert!(e.scores().row(p)[..3].iter().all(|&x| x == 0.0));
            assert_eq!(e.scores()[(p, 3)], MASK_SCORE);
        }
        assert_eq!(e.to_padded().rows(), 16);
    }

    #[test]
    fn bypass_is_affine_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = HeadParameters::new(5, None, &[4], &mut rng);
        let x = xavier(3, 5, &mut rng);
        let e = emit(&encoding(x.clone()), &params).unwrap();
        let mut expect = x.matmul(&params.projections[0].weight);
        expect.add_row_vector(&params.projections[0].bias);
        for p in 0..3 {
            assert_eq!(&e.scores().row(p)[..3], &expect.row(p)[..3]);
        }
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = HeadParameters::new(3, Some(2), &[4], &mut rng);
        let x = xavier(1, 3, &mut rng);
        let e = emit(&encoding(x.clone()), &params).unwrap();
        // one step from zero state: c = i*g, h = o*tanh(c)
        let step = |l: &LstmParameters| -> Vec<f64> {
            let hdim = l.hidden();
            let mut z = l.bias.clone();
            for (k, zk) in z.iter_mut().enumerate() {
                for j in 0..3 {
                    *zk += x[(0, j)] * l.w_input[(j, k)];
                }
            }
            (0..hdim)
                .map(|k| {
                    let i = sigmoid(z[k]);
                    let g = libm::tanh(z[2 * hdim + k]);
                    let o = sigmoid(z[3 * hdim + k]);
                    o * libm::tanh(i * g)
                })
                .collect()
        };
        let mut ctx = step(params.forward.as_ref().unwrap());
        ctx.extend(step(params.backward.as_ref().unwrap()));
        let proj = &params.projections[0];
        for t in 0..3 {
            let mut s = proj.bias[t];
            for (k, c) in ctx.iter().enumerate() {
                s += c * proj.weight[(k, t)];
            }
            assert!((s - e.scores()[(0, t)]).abs() < 1e-6);
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let params = HeadParameters::zeros(6, None, &[4]);
        assert!(emit(&encoding(Matrix::zeros(2, 5)), &params).is_err());
    }
}
