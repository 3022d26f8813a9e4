//! Adam with coupled L2 weight decay, and global-norm gradient clipping.

use crate::error::TensorError;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay * param` before the moments.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update; parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        let c = self.config;
        self.step += 1;
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (id, g) in grads {
            let i = id.index();
            let p = store.get_mut(*id);
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gd = gv + c.weight_decay * *pv;
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gd;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gd * gd;
                let mh = *mv / bc1;
                let vh = *vv / bc2;
                *pv -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }

    /// Moment tensors keyed `m/<param>` and `v/<param>`, plus the step count.
    pub fn state(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = vec![("step".to_string(), Tensor::scalar(self.step as f64))];
        for id in store.ids() {
            let i = id.index();
            if let (Some(Some(m)), Some(Some(v))) = (self.m.get(i), self.v.get(i)) {
                out.push((format!("m/{}", store.name(id)), m.clone()));
                out.push((format!("v/{}", store.name(id)), v.clone()));
            }
        }
        out
    }

    pub fn load_state(&mut self, store: &ParamStore, entries: Vec<(String, Tensor)>) -> Result<(), TensorError> {
        self.m = vec![None; store.len()];
        self.v = vec![None; store.len()];
        self.step = 0;
        for (name, t) in entries {
            if name == "step" {
                self.step = t.item() as u64;
                continue;
            }
            let (slot, pname) = match name.split_once('/') {
                Some(("m", p)) => (&mut self.m, p),
                Some(("v", p)) => (&mut self.v, p),
                _ => return Err(TensorError::Unexpected(name)),
            };
            let id = store.find(pname).ok_or_else(|| TensorError::Unexpected(name.clone()))?;
            if t.shape() != store.get(id).shape() {
                return Err(TensorError::Shape {
                    name,
                    expected: store.get(id).shape().to_vec(),
                    got: t.shape().to_vec(),
                });
            }
            slot[id.index()] = Some(t);
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [(ParamId, Tensor)], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / (norm + 1e-6);
        for (_, g) in grads.iter_mut() {
            g.map_inplace(|x| x * s);
        }
    }
    norm
}
