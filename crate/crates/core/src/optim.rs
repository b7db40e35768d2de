//! AdamW with decoupled weight decay, two learning-rate groups and global
//! gradient-norm clipping.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;
use crate::params::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    /// Learning rate of tensors whose name starts with the group prefix.
    pub group_lr: f64,
    /// Learning rate of every other tensor.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Gradients are rescaled to this global L2 norm when they exceed it.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            group_lr: 4e-5,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    config: AdamWConfig,
    group_prefix: &'static str,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    /// `group_prefix` selects the tensors trained at `config.group_lr`; a
    /// tensor belongs to the group when its name is the prefix itself or
    /// starts with `prefix.`.
    pub fn new(config: AdamWConfig, num_params: usize, group_prefix: &'static str) -> Self {
        Self {
            config,
            group_prefix,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Whether `name` trains at the group learning rate.
    pub fn in_group(&self, name: &str) -> bool {
        in_group(self.group_prefix, name)
    }

    /// Global L2 norm of `grads`.
    pub fn grad_norm<P: Parameters>(grads: &P) -> f64 {
        let mut sq = 0.0;
        grads.visit("", &mut |_, t| sq += t.iter().map(|g| g * g).sum::<f64>());
        sqrt(sq)
    }

    /// One update. Returns the gradient norm before clipping.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> f64 {
        let flat = grads.flatten();
        assert_eq!(flat.len(), self.m.len(), "optimizer state does not match parameter count");
        let norm = Self::grad_norm(grads);
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - libm::pow(c.beta1, f64::from(t));
        let bias2 = 1.0 - libm::pow(c.beta2, f64::from(t));
        let mut at = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        let prefix = self.group_prefix;
        params.visit_mut("", &mut |name, tensor| {
            let lr = if in_group(prefix, name) { c.group_lr } else { c.lr };
            for x in tensor.iter_mut() {
                let g = flat[at] * scale;
                m[at] = c.beta1 * m[at] + (1.0 - c.beta1) * g;
                v[at] = c.beta2 * v[at] + (1.0 - c.beta2) * g * g;
                if lr != 0.0 {
                    let m_hat = m[at] / bias1;
                    let v_hat = v[at] / bias2;
                    *x -= lr * c.weight_decay * *x;
                    *x -= lr * m_hat / (sqrt(v_hat) + c.eps);
                }
                at += 1;
            }
        });
        norm
    }
}

fn in_group(prefix: &str, name: &str) -> bool {
    !prefix.is_empty()
        && name.starts_with(prefix)
        && (name.len() == prefix.len() || name.as_bytes()[prefix.len()] == b'.')
}
