use std::collections::BTreeMap;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `w ← w − lr·v`.
///
/// Parameters are addressed by an ordered key so updates always run in the
/// same order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<K: Ord + Clone, T: Element = f32> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: BTreeMap<K, Vec<T>>,
}

impl<K: Ord + Clone + std::fmt::Debug, T: Element> OptimizerState<K, T> {
    /// One zeroed velocity buffer per `(key, length)` pair.
    pub fn new(
        learning_rate: f64,
        momentum: f64,
        params: impl IntoIterator<Item = (K, usize)>,
    ) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {learning_rate} must be positive"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        let velocity = params
            .into_iter()
            .map(|(k, n)| (k, vec![T::zero(); n]))
            .collect();
        Ok(Self {
            learning_rate,
            momentum,
            velocity,
        })
    }

    pub fn velocity(&self, key: &K) -> Option<&[T]> {
        self.velocity.get(key).map(Vec::as_slice)
    }

    pub fn velocity_mut(&mut self, key: &K) -> Option<&mut [T]> {
        self.velocity.get_mut(key).map(Vec::as_mut_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &K> {
        self.velocity.keys()
    }

    pub fn reset(&mut self) {
        for v in self.velocity.values_mut() {
            v.fill(T::zero());
        }
    }

    /// Applies one update to every tracked parameter, in key order.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<K, Tensor<T>>,
        grads: &BTreeMap<K, Vec<T>>,
    ) -> Result<()> {
        let lr = T::from_f64(self.learning_rate);
        let mu = T::from_f64(self.momentum);
        for (key, vel) in self.velocity.iter_mut() {
            let param = params.get_mut(key).ok_or_else(|| {
                Error::Usage(format!("optimizer tracks unknown parameter {key:?}"))
            })?;
            let grad = grads
                .get(key)
                .ok_or_else(|| Error::Usage(format!("missing gradient for {key:?}")))?;
            if grad.len() != param.len() || vel.len() != param.len() {
                return Err(Error::Dimension(format!(
                    "{key:?}: param {} / grad {} / velocity {}",
                    param.len(),
                    grad.len(),
                    vel.len()
                )));
            }
            for ((w, v), &g) in param.data_mut().iter_mut().zip(vel.iter_mut()).zip(grad) {
                *v = mu * *v + g;
                *w = *w - lr * *v;
            }
        }
        Ok(())
    }
}
