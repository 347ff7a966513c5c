//! Adam over named parameter tensors plus the visitor traits that expose a
//! network's parameters (for optimization) and full state (for checkpoints).

use std::collections::BTreeMap;

/// Trainable parameters with accumulated gradients.
pub trait HasParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64]));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, _, g| g.fill(0.0));
    }

    fn grad_norm(&mut self) -> f64 {
        let mut sq = 0.0;
        self.visit_params(&mut |_, _, g| sq += g.iter().map(|v| v * v).sum::<f64>());
        sq.sqrt()
    }

    /// Scale gradients so their global norm is at most `max_norm`.
    fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            self.visit_params(&mut |_, _, g| {
                for v in g.iter_mut() {
                    *v *= s;
                }
            });
        }
        norm
    }
}

/// Every tensor that belongs in a checkpoint: parameters plus buffers
/// (e.g. batch-norm running statistics).
pub trait HasState {
    fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));
}

#[derive(Debug, Clone)]
struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Adam with per-tensor state keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            state: BTreeMap::new(),
        }
    }

    /// One update over every parameter of `net`; `lr_scale` multiplies the
    /// base learning rate (fine-tuned groups use 0.1).
    pub fn step(&mut self, net: &mut dyn HasParams, lr_scale: f64) {
        let lr = self.lr * lr_scale;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let state = &mut self.state;
        net.visit_params(&mut |name, w, g| {
            let slot = state.entry(name.to_string()).or_insert_with(|| AdamSlot {
                m: vec![0.0; w.len()],
                v: vec![0.0; w.len()],
                t: 0,
            });
            slot.t += 1;
            let bc1 = 1.0 - b1.powi(slot.t as i32);
            let bc2 = 1.0 - b2.powi(slot.t as i32);
            for i in 0..w.len() {
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g[i];
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }
}
