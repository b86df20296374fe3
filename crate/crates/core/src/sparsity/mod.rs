//! Binary masks over prunable weights, magnitude pruning and regrowth.
//!
//! Sparsity is always counted over the weights returned by
//! [`Model::prunable_slots`]; biases are never masked. All rankings break
//! ties by (layer, flat index) ascending.

mod mask;
mod schedule;

pub use mask::MaskSet;
pub use schedule::{
    regrow_sparsity_at, schedule_sparsity_at, Interpolation, PruneSchedule, RegrowSchedule,
    ScheduleMode,
};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::RngState;
use crate::error::{Error, Result};
use crate::model::{Grads, Model, ParamId};
use crate::tensor::{Element, OptimizerState, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    Global,
    Layerwise,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegrowCriterion {
    /// Largest dense-gradient magnitude among pruned positions.
    #[default]
    Gradient,
    Random,
    /// Largest magnitude at the moment of pruning.
    #[serde(alias = "rewind")]
    RewindMagnitude,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    #[default]
    Zero,
    Rewind,
}

/// A single weight position: slot and flat index within it.
pub type Position = (ParamId, usize);

/// Per-slot `|∂L/∂w|` for every position, pruned ones included.
pub type Saliency = BTreeMap<ParamId, Vec<f64>>;

/// `n − ⌊s·n⌋`: active weights left at target sparsity `s`.
pub fn keep_count(n: usize, s: f64) -> usize {
    let s = s.clamp(0.0, 1.0);
    let pruned = ((s * n as f64).floor() as usize).min(n);
    n - pruned
}

/// Magnitude selection over a list of weight slots. Returns one keep-mask
/// per slot. Positions flagged in `already_pruned` are ranked ahead of every
/// active position so incremental pruning never revives them.
pub fn select_magnitude_mask<T: Element>(
    weights: &[&[T]],
    already_pruned: Option<&[&[bool]]>,
    s: f64,
    scope: Scope,
) -> Result<Vec<Vec<bool>>> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Usage(format!("target sparsity {s} outside [0, 1]")));
    }
    let mut keep: Vec<Vec<bool>> = weights.iter().map(|w| vec![true; w.len()]).collect();
    let forced = |slot: usize, i: usize| already_pruned.is_some_and(|p| !p[slot][i]);

    let groups: Vec<Vec<usize>> = match scope {
        Scope::Global => vec![(0..weights.len()).collect()],
        Scope::Layerwise => (0..weights.len()).map(|i| vec![i]).collect(),
    };
    for group in groups {
        let mut order: Vec<(bool, f64, usize, usize)> = group
            .iter()
            .flat_map(|&slot| {
                weights[slot]
                    .iter()
                    .enumerate()
                    .map(move |(i, w)| (slot, i, w.as_f64().abs()))
            })
            .map(|(slot, i, mag)| (!forced(slot, i), mag, slot, i))
            .collect();
        let n = order.len();
        let prune = n - keep_count(n, s);
        let already = order.iter().filter(|e| !e.0).count();
        if prune < already {
            return Err(Error::Usage(format!(
                "target sparsity {s} keeps more weights than are active ({already} already pruned, {prune} requested)"
            )));
        }
        order.sort_unstable_by(|a, b| {
            a.0.cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        for &(_, _, slot, i) in &order[..prune] {
            keep[slot][i] = false;
        }
    }
    Ok(keep)
}

/// Fresh magnitude mask at sparsity `s`. Pruned weights are moved to the
/// graveyard and zeroed in `model`.
pub fn global_magnitude_mask<T: Element>(
    model: &mut Model<T>,
    s: f64,
    scope: Scope,
) -> Result<MaskSet> {
    let mut ms = MaskSet::dense(model);
    ms.prune_to(model, s, scope)?;
    Ok(ms)
}

/// Writes exact zeros at every masked weight.
pub fn apply_masks<T: Element>(model: &mut Model<T>, ms: &MaskSet) -> Result<()> {
    ms.check_aligned(model)?;
    for (id, mask) in ms.masks() {
        let w = model.param_mut(*id).expect("aligned");
        for (v, &on) in w.data_mut().iter_mut().zip(mask) {
            if !on {
                *v = T::zero();
            }
        }
    }
    Ok(())
}

/// SGD step under a fixed mask: masked gradients and velocities are zeroed
/// first, so masked weights stay exactly zero.
pub fn masked_step<T: Element>(
    model: &mut Model<T>,
    grads: &mut Grads<T>,
    ms: &MaskSet,
    opt: &mut OptimizerState<ParamId, T>,
) -> Result<()> {
    ms.check_aligned(model)?;
    for (id, mask) in ms.masks() {
        let g = grads
            .get_mut(id)
            .ok_or_else(|| Error::Usage(format!("missing gradient for {id}")))?;
        let v = opt
            .velocity_mut(id)
            .ok_or_else(|| Error::Usage(format!("optimizer does not track {id}")))?;
        for ((gv, vv), &on) in g.iter_mut().zip(v.iter_mut()).zip(mask) {
            if !on {
                *gv = T::zero();
                *vv = T::zero();
            }
        }
    }
    opt.step(model.params_mut(), grads)
}

/// Gradient magnitude at every prunable position. The forward pass sees
/// the masked weights; the gradient itself is left unmasked.
pub fn dense_saliency<T: Element>(
    model: &Model<T>,
    ms: &MaskSet,
    batch: &Tensor<T>,
    labels: &[usize],
) -> Result<Saliency> {
    if labels.is_empty() {
        return Err(Error::Usage(
            "saliency needs a non-empty scoring batch".into(),
        ));
    }
    let mut masked = model.clone();
    apply_masks(&mut masked, ms)?;
    let (_, grads) = masked.loss_and_grads(batch, labels)?;
    Ok(ms
        .masks()
        .keys()
        .map(|id| (*id, grads[id].iter().map(|g| g.as_f64().abs()).collect()))
        .collect())
}

fn rank_desc(a: (f64, Position), b: (f64, Position)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Picks `k` currently pruned positions to revive, returned in
/// (layer, index) order.
pub fn regrow_candidates(
    ms: &MaskSet,
    criterion: RegrowCriterion,
    k: usize,
    saliency: Option<&Saliency>,
    rng: &mut RngState,
) -> Result<Vec<Position>> {
    let mut pruned = ms.pruned_positions();
    if k > pruned.len() {
        return Err(Error::Usage(format!(
            "cannot regrow {k} of {} pruned positions",
            pruned.len()
        )));
    }
    let mut chosen: Vec<Position> = match criterion {
        RegrowCriterion::Random => {
            for i in 0..k {
                let j = i + rng.next_below(pruned.len() - i);
                pruned.swap(i, j);
            }
            pruned.truncate(k);
            pruned
        }
        RegrowCriterion::Gradient => {
            let sal =
                saliency.ok_or_else(|| Error::Usage("gradient criterion needs saliency".into()))?;
            let mut scored = pruned
                .into_iter()
                .map(|p| {
                    let v = sal.get(&p.0).and_then(|s| s.get(p.1)).copied();
                    v.map(|v| (v, p))
                        .ok_or_else(|| Error::Usage(format!("no saliency for {}[{}]", p.0, p.1)))
                })
                .collect::<Result<Vec<_>>>()?;
            scored.sort_unstable_by(|a, b| rank_desc(*a, *b));
            scored.into_iter().take(k).map(|(_, p)| p).collect()
        }
        RegrowCriterion::RewindMagnitude => {
            let mut scored: Vec<(f64, Position)> = pruned
                .into_iter()
                .map(|p| (ms.graveyard_value(p.0, p.1).unwrap_or(0.0).abs(), p))
                .collect();
            scored.sort_unstable_by(|a, b| rank_desc(*a, *b));
            scored.into_iter().take(k).map(|(_, p)| p).collect()
        }
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// Revives `candidates`: mask bit set, weight set to zero or to its
/// graveyard value, graveyard entry dropped. Validates everything before
/// mutating.
pub fn regrow_apply<T: Element>(
    ms: &mut MaskSet,
    candidates: &[Position],
    init: InitRule,
    model: &mut Model<T>,
) -> Result<()> {
    ms.check_aligned(model)?;
    let mut seen = BTreeSet::new();
    for &(id, i) in candidates {
        if !seen.insert((id, i)) || ms.is_active(id, i)? {
            return Err(Error::Usage(format!("{id}[{i}] is already active")));
        }
    }
    for &(id, i) in candidates {
        let stored = ms.revive(id, i)?;
        let value = match init {
            InitRule::Zero => T::zero(),
            InitRule::Rewind => T::from_f64(stored),
        };
        model.param_mut(id).expect("aligned").data_mut()[i] = value;
    }
    Ok(())
}
