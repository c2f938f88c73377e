use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Applied to matrix-shaped parameters only.
    pub weight_decay: f64,
    /// Global gradient-norm bound; non-positive disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            grad_clip: 1.0,
        }
    }
}

/// Adam with decoupled weight decay. Moments and the bias-correction step
/// are kept per parameter, so a group that unfreezes late starts from
/// fresh moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: Vec<u64>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        let sizes: Vec<usize> = store.ids().map(|id| store.get(id).len()).collect();
        Self {
            cfg,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: vec![0; sizes.len()],
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn steps(&self, id: ParamId) -> u64 {
        self.steps[id.index()]
    }

    pub fn moments(&self, id: ParamId) -> (&[f64], &[f64]) {
        (&self.m[id.index()], &self.v[id.index()])
    }

    pub(crate) fn restore(&mut self, id: ParamId, steps: u64, m: Vec<f64>, v: Vec<f64>) {
        let i = id.index();
        assert_eq!(m.len(), self.m[i].len());
        assert_eq!(v.len(), self.v[i].len());
        self.steps[i] = steps;
        self.m[i] = m;
        self.v[i] = v;
    }

    /// Scales `grads` in place so their joint L2 norm is at most the
    /// configured bound; returns the norm before scaling.
    pub fn clip(&self, grads: &mut [(ParamId, Tensor)]) -> f64 {
        let norm = grads
            .iter()
            .map(|(_, g)| g.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if self.cfg.grad_clip > 0.0 && norm > self.cfg.grad_clip {
            let s = self.cfg.grad_clip / norm;
            for (_, g) in grads.iter_mut() {
                for x in g.data_mut() {
                    *x *= s;
                }
            }
        }
        norm
    }

    /// Applies one update to every parameter that has a gradient. Masked
    /// entries stay exactly zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.cfg;
        for (id, g) in grads {
            let i = id.index();
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
            let decay = if store.info(*id).decay { weight_decay } else { 0.0 };
            let mask = store.mask(*id).map(<[bool]>::to_vec);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = store.get_mut(*id).data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                if mask.as_ref().is_some_and(|mk| !mk[j]) {
                    continue;
                }
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                w[j] -= lr * (update + decay * w[j]);
            }
        }
    }
}
