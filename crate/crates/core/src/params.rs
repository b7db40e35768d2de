//! Uniform access to named parameter tensors.
//!
//! Every trainable component implements [`Parameters`]; gradients are stored
//! in a value of the same type, so the optimizer, the gradient checker and
//! checkpointing can walk parameters and gradients in lockstep.

use alloc::string::String;
use alloc::vec::Vec;

pub trait Parameters {
    /// Visits every tensor in a fixed order. `prefix` is prepended to the
    /// tensor names.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64]));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));

    fn zero(&mut self) {
        self.visit_mut("", &mut |_, t| t.iter_mut().for_each(|x| *x = 0.0));
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    /// Copies all values into one flat vector, in visit order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.extend_from_slice(t));
        out
    }

    /// Inverse of [`Parameters::flatten`].
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.visit_mut("", &mut |_, t| {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        });
        assert_eq!(at, flat.len(), "flat parameter length");
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut at = 0;
        self.visit_mut("", &mut |_, t| {
            for x in t.iter_mut() {
                *x += flat[at];
                at += 1;
            }
        });
    }

    fn scale(&mut self, factor: f64) {
        self.visit_mut("", &mut |_, t| t.iter_mut().for_each(|x| *x *= factor));
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit("", &mut |n, _| out.push(String::from(n)));
        out
    }
}

/// Joins a prefix and a field name with a dot.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        let mut s = String::with_capacity(prefix.len() + name.len() + 1);
        s.push_str(prefix);
        s.push('.');
        s.push_str(name);
        s
    }
}
