//! Scalar numerics shared by the layers. Everything routes through `libm` so
//! the crate builds without `std`.

use crate::error::{Error, Result};

pub use libm::{exp, log, sqrt, tanh};

/// Stands in for −∞ on disallowed tags and transitions. Finite so that
/// arithmetic on it stays well-defined.
pub const MASK_SCORE: f64 = -1.0e4;

/// Streaming log-sum-exp accumulator.
///
/// Keeps a running maximum so no intermediate `exp` overflows.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    #[inline]
    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += exp(x - self.max);
        } else {
            self.sum = self.sum * exp(self.max - x) + 1.0;
            self.max = x;
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + log(self.sum)
        }
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = xs.iter().map(|&x| exp(x - max)).sum();
    max + log(s)
}

/// Max-shifted softmax in place.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in xs.iter_mut() {
        *x = exp(*x - max);
        s += *x;
    }
    let inv = 1.0 / s;
    for x in xs.iter_mut() {
        *x *= inv;
    }
}

/// Softmax that rejects non-finite logits.
pub fn checked_softmax(xs: &mut [f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    softmax_in_place(xs);
    Ok(())
}

/// Backward pass of a softmax given its output `p` and upstream gradient
/// `dp`; writes the logit gradient into `dx`.
#[inline]
pub fn softmax_backward(p: &[f64], dp: &[f64], dx: &mut [f64]) {
    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    for ((d, &pi), &dpi) in dx.iter_mut().zip(p).zip(dp) {
        *d = pi * (dpi - inner);
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

const INV_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
// 1/sqrt(2π)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
    let pdf = INV_SQRT_2PI * exp(-0.5 * x * x);
    cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streaming_matches_batch() {
        let xs = [1234.0, 1232.0, -5.0, 0.5];
        let mut acc = LogSumExp::default();
        xs.iter().for_each(|&x| acc.push(x));
        assert!((acc.value() - logsumexp(&xs)).abs() < 1e-12);
        assert!((logsumexp(&[1234.0, 1232.0]) - 1234.126928011043).abs() < 1e-9);
    }

    #[test]
    fn empty_logsumexp_is_neg_infinity() {
        assert_eq!(LogSumExp::default().value(), f64::NEG_INFINITY);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut v = [0.0, f64::NAN];
        assert!(checked_softmax(&mut v).is_err());
    }
}
