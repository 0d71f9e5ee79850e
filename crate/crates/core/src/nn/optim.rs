use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam with per-parameter first and second moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: ModelParams<T>,
    v: ModelParams<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ModelParams<T>) -> Self {
        Adam {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every tensor whose name passes `trainable`.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, trainable: impl Fn(&str) -> bool) {
        self.step += 1;
        let c = &self.config;
        let scale = match c.clip_norm {
            Some(max) => {
                let norm = grads
                    .named()
                    .iter()
                    .filter(|(n, _)| trainable(n))
                    .map(|(_, g)| g.sum_sq().to_f64().unwrap_or(f64::INFINITY))
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64c(c.beta1), T::from_f64c(c.beta2));
        let (one_b1, one_b2) = (T::from_f64c(1.0 - c.beta1), T::from_f64c(1.0 - c.beta2));
        let step_size = T::from_f64c(c.lr / bc1);
        let inv_bc2 = T::from_f64c(1.0 / bc2);
        let eps = T::from_f64c(c.eps);
        let scale = T::from_f64c(scale);

        let g_all = grads.named();
        let m_all = self.m.named_mut();
        let v_all = self.v.named_mut();
        for ((((name, p), (_, g)), (_, m)), (_, v)) in params.named_mut().into_iter().zip(g_all).zip(m_all).zip(v_all) {
            if !trainable(&name) {
                continue;
            }
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut());
            for (((pv, &gv), mv), vv) in iter {
                let gv = gv * scale;
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                *pv -= step_size * *mv / ((*vv * inv_bc2).sqrt() + eps);
            }
        }
    }
}

/// Trainable-tensor filter that leaves the encoder untouched.
pub fn heads_only(name: &str) -> bool {
    !name.starts_with("encoder.")
}

pub fn everything(_: &str) -> bool {
    true
}
