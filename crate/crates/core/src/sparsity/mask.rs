use std::collections::BTreeMap;

use super::{select_magnitude_mask, Position, Scope};
use crate::error::{Error, Result};
use crate::model::{Model, ParamId};
use crate::tensor::Element;

/// Keep-masks for every prunable slot, plus the values weights held at the
/// moment they were pruned.
///
/// Invariant: a position has a graveyard entry iff its mask bit is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    masks: BTreeMap<ParamId, Vec<bool>>,
    graveyard: BTreeMap<ParamId, BTreeMap<usize, f64>>,
}

impl MaskSet {
    /// All-active masks aligned with `model`'s prunable slots.
    pub fn dense<T: Element>(model: &Model<T>) -> Self {
        let masks = model
            .prunable_slots()
            .into_iter()
            .map(|(id, n)| (id, vec![true; n]))
            .collect();
        Self {
            masks,
            graveyard: BTreeMap::new(),
        }
    }

    /// Rebuilds a mask set from explicit bits and graveyard values.
    pub fn from_parts(
        masks: BTreeMap<ParamId, Vec<bool>>,
        graveyard: BTreeMap<ParamId, BTreeMap<usize, f64>>,
    ) -> Result<Self> {
        let ms = Self { masks, graveyard };
        ms.check_invariants()?;
        Ok(ms)
    }

    pub fn masks(&self) -> &BTreeMap<ParamId, Vec<bool>> {
        &self.masks
    }

    pub fn mask(&self, id: ParamId) -> Option<&[bool]> {
        self.masks.get(&id).map(Vec::as_slice)
    }

    pub fn graveyard(&self) -> &BTreeMap<ParamId, BTreeMap<usize, f64>> {
        &self.graveyard
    }

    pub fn graveyard_value(&self, id: ParamId, i: usize) -> Option<f64> {
        self.graveyard.get(&id)?.get(&i).copied()
    }

    pub fn graveyard_len(&self) -> usize {
        self.graveyard.values().map(BTreeMap::len).sum()
    }

    /// Total prunable positions `N`.
    pub fn total(&self) -> usize {
        self.masks.values().map(Vec::len).sum()
    }

    pub fn active_count(&self) -> usize {
        self.masks
            .values()
            .map(|m| m.iter().filter(|&&b| b).count())
            .sum()
    }

    pub fn pruned_count(&self) -> usize {
        self.total() - self.active_count()
    }

    /// `1 − active/N`; zero for a model without prunable weights.
    pub fn sparsity(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        1.0 - self.active_count() as f64 / n as f64
    }

    pub fn is_active(&self, id: ParamId, i: usize) -> Result<bool> {
        self.masks
            .get(&id)
            .and_then(|m| m.get(i))
            .copied()
            .ok_or_else(|| Error::Usage(format!("no prunable position {id}[{i}]")))
    }

    /// Pruned positions in (layer, index) order.
    pub fn pruned_positions(&self) -> Vec<Position> {
        self.masks
            .iter()
            .flat_map(|(id, m)| {
                m.iter()
                    .enumerate()
                    .filter(|(_, &on)| !on)
                    .map(move |(i, _)| (*id, i))
            })
            .collect()
    }

    pub fn check_aligned<T: Element>(&self, model: &Model<T>) -> Result<()> {
        let slots = model.prunable_slots();
        let aligned = slots.len() == self.masks.len()
            && slots
                .iter()
                .all(|(id, n)| self.masks.get(id).is_some_and(|m| m.len() == *n));
        if aligned {
            Ok(())
        } else {
            Err(Error::Usage(
                "mask set is not aligned with the model's prunable slots".into(),
            ))
        }
    }

    /// Graveyard keys must equal the set of zero mask bits.
    pub fn check_invariants(&self) -> Result<()> {
        for id in self.graveyard.keys() {
            if !self.masks.contains_key(id) {
                return Err(Error::Format(format!(
                    "graveyard entry for unknown slot {id}"
                )));
            }
        }
        for (id, mask) in &self.masks {
            let empty = BTreeMap::new();
            let grave = self.graveyard.get(id).unwrap_or(&empty);
            let zeros = mask.iter().filter(|&&b| !b).count();
            if grave.len() != zeros || grave.keys().any(|&i| mask.get(i) != Some(&false)) {
                return Err(Error::Format(format!(
                    "{id}: graveyard does not match pruned positions"
                )));
            }
            if self.graveyard.get(id).is_some_and(BTreeMap::is_empty) {
                return Err(Error::Format(format!("{id}: empty graveyard map")));
            }
        }
        Ok(())
    }

    /// Prunes further, to sparsity `s`. Already-pruned positions stay
    /// pruned and keep their original graveyard values; newly pruned weights
    /// are recorded then zeroed in `model`.
    pub fn prune_to<T: Element>(
        &mut self,
        model: &mut Model<T>,
        s: f64,
        scope: Scope,
    ) -> Result<()> {
        self.check_aligned(model)?;
        let ids: Vec<ParamId> = self.masks.keys().copied().collect();
        let keep = {
            let weights: Vec<&[T]> = ids
                .iter()
                .map(|id| model.param(*id).expect("aligned").data())
                .collect();
            let current: Vec<&[bool]> = ids.iter().map(|id| self.masks[id].as_slice()).collect();
            select_magnitude_mask(&weights, Some(&current), s, scope)?
        };
        for (id, keep) in ids.into_iter().zip(keep) {
            let w = model.param_mut(id).expect("aligned").data_mut();
            let mask = self.masks.get_mut(&id).expect("aligned");
            for (i, (&k, on)) in keep.iter().zip(mask.iter_mut()).enumerate() {
                if !k && *on {
                    self.graveyard
                        .entry(id)
                        .or_default()
                        .insert(i, w[i].as_f64());
                    w[i] = T::zero();
                    *on = false;
                }
            }
        }
        Ok(())
    }

    /// Flips one pruned position back on, returning its graveyard value.
    pub(crate) fn revive(&mut self, id: ParamId, i: usize) -> Result<f64> {
        if self.is_active(id, i)? {
            return Err(Error::Usage(format!("{id}[{i}] is already active")));
        }
        let grave = self
            .graveyard
            .get_mut(&id)
            .expect("pruned position has a graveyard slot");
        let value = grave.remove(&i).expect("graveyard bijection");
        if grave.is_empty() {
            self.graveyard.remove(&id);
        }
        self.masks.get_mut(&id).expect("checked")[i] = true;
        Ok(value)
    }
}
