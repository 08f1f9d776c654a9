use indexmap::IndexMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a trainable parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// Named trainable tensors, non-trainable buffers (batch-norm running
/// statistics) and optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
    buffers: IndexMap<String, Tensor>,
    optimizer: Option<AdamState>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter name '{name}'")));
        }
        if self.optimizer.is_some() {
            return Err(Error::Usage(
                "cannot add parameters after optimizer state exists".into(),
            ));
        }
        let (idx, _) = self.params.insert_full(name, value);
        Ok(ParamId(idx))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.buffers.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate buffer name '{name}'")));
        }
        self.buffers.insert(name, value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params
            .get_index(id.0)
            .map(|(k, _)| k.as_str())
            .unwrap_or("")
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, (k, v))| (ParamId(i), k.as_str(), v))
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.buffers.get_mut(name)
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn optimizer(&self) -> Option<&AdamState> {
        self.optimizer.as_ref()
    }

    pub fn set_optimizer(&mut self, state: Option<AdamState>) -> Result<()> {
        if let Some(s) = &state {
            let ok = s.m.len() == self.params.len()
                && s.v.len() == self.params.len()
                && self
                    .params
                    .values()
                    .zip(s.m.iter().zip(&s.v))
                    .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
            if !ok {
                return Err(Error::shape(
                    "optimizer state",
                    "moment shapes do not mirror parameter shapes",
                ));
            }
        }
        self.optimizer = state;
        Ok(())
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// One bias-corrected Adam update. `grads` must align with parameter order.
    pub fn adam_step(&mut self, grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} gradients for {} parameters",
                    grads.len(),
                    self.params.len()
                ),
            ));
        }
        let state = self.optimizer.get_or_insert_with(|| AdamState {
            step: 0,
            m: self
                .params
                .values()
                .map(|p| Tensor::zeros(p.shape()))
                .collect(),
            v: self
                .params
                .values()
                .map(|p| Tensor::zeros(p.shape()))
                .collect(),
        });
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (i, (p, g)) in self.params.values_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.add("w", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // with bias correction the first step is lr * sign(g)
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![1.0, -1.0])).unwrap();
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        s.adam_step(&[Tensor::vector(vec![2.0, -0.5])], &cfg)
            .unwrap();
        let w = s.by_name("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
        let st = s.optimizer().unwrap();
        assert_eq!(st.step, 1);
        assert_eq!(st.m[0].shape(), &[2]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::vector(vec![5.0])).unwrap();
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        for _ in 0..2000 {
            let x = s.get(id).data()[0];
            s.adam_step(&[Tensor::vector(vec![2.0 * (x - 1.0)])], &cfg)
                .unwrap();
        }
        assert!((s.get(id).data()[0] - 1.0).abs() < 1e-2);
    }
}
