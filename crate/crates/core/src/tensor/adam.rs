use serde::{Deserialize, Serialize};

use super::params::{ParamKind, ParamStore};
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state for one [`ParamStore`]: first and second moments per
/// trainable entry and the step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected update to every trainable entry. Entries
    /// without a gradient buffer are treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let n = store.len();
        self.m.resize(n, Vec::new());
        self.v.resize(n, Vec::new());
        self.t += 1;
        let t = self.t as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, p) in store.iter_mut().enumerate() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let len = p.value.len();
            if self.m[i].len() != len {
                self.m[i] = vec![0.0; len];
                self.v[i] = vec![0.0; len];
            }
            if let Some(g) = &p.grad {
                if g.shape() != p.value.shape() {
                    return Err(shape_err(format!(
                        "gradient of `{}` has shape {:?}, parameter {:?}",
                        p.name,
                        g.shape(),
                        p.value.shape()
                    )));
                }
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grad = p.grad.as_ref().map(|g| g.data());
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad.map_or(0.0, |g| g[k]);
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *w -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
