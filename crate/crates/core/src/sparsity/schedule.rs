use serde::{Deserialize, Serialize};

use super::{InitRule, RegrowCriterion, Scope};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    #[default]
    #[serde(alias = "one_shot", alias = "oneshot")]
    OneShot,
    Iterative,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Cubic,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneSchedule {
    pub mode: ScheduleMode,
    pub s_init: f64,
    pub s_final: f64,
    pub steps: usize,
    pub interpolation: Interpolation,
    pub finetune_epochs_per_step: usize,
    pub scope: Scope,
}

impl PruneSchedule {
    pub fn one_shot(s_final: f64, finetune_epochs_per_step: usize) -> Self {
        Self {
            mode: ScheduleMode::OneShot,
            s_init: 0.0,
            s_final,
            steps: 1,
            interpolation: Interpolation::Cubic,
            finetune_epochs_per_step,
            scope: Scope::Global,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.s_init) {
            return Err(Error::Config(format!(
                "prune.s_init {} outside [0, 1)",
                self.s_init
            )));
        }
        if !(self.s_final > 0.0 && self.s_final < 1.0) {
            return Err(Error::Config(format!(
                "prune.s_final {} outside (0, 1)",
                self.s_final
            )));
        }
        if self.s_init >= self.s_final {
            return Err(Error::Config(format!(
                "prune.s_init {} must be below prune.s_final {}",
                self.s_init, self.s_final
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("prune.steps must be positive".into()));
        }
        if self.mode == ScheduleMode::OneShot && self.steps != 1 {
            return Err(Error::Config(format!(
                "prune.steps is {} but one-shot needs 1",
                self.steps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegrowSchedule {
    pub mode: ScheduleMode,
    pub s_start: f64,
    pub s_end: f64,
    pub steps: usize,
    pub criterion: RegrowCriterion,
    pub init_rule: InitRule,
    pub finetune_epochs_per_step: usize,
    pub scoring_batch_size: usize,
}

impl RegrowSchedule {
    pub fn one_shot(
        s_start: f64,
        s_end: f64,
        criterion: RegrowCriterion,
        finetune_epochs_per_step: usize,
    ) -> Self {
        Self {
            mode: ScheduleMode::OneShot,
            s_start,
            s_end,
            steps: 1,
            criterion,
            init_rule: InitRule::Zero,
            finetune_epochs_per_step,
            scoring_batch_size: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("regrow.s_start", self.s_start),
            ("regrow.s_end", self.s_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{key} {v} outside [0, 1]")));
            }
        }
        if self.s_end >= self.s_start {
            return Err(Error::Config(format!(
                "regrow.s_end {} must be below regrow.s_start {}",
                self.s_end, self.s_start
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("regrow.steps must be positive".into()));
        }
        if self.mode == ScheduleMode::OneShot && self.steps != 1 {
            return Err(Error::Config(format!(
                "regrow.steps is {} but one-shot needs 1",
                self.steps
            )));
        }
        if self.scoring_batch_size == 0 {
            return Err(Error::Config(
                "regrow.scoring_batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Target sparsity after prune step `t` of `1..=T`. Cubic:
/// `s_final + (s_init − s_final)·(1 − t/T)³`; linear: straight line. Step
/// `T` always lands on `s_final` exactly.
pub fn schedule_sparsity_at(sched: &PruneSchedule, t: usize) -> Result<f64> {
    let steps = sched.steps;
    if t == 0 || t > steps {
        return Err(Error::Usage(format!("prune step {t} outside 1..={steps}")));
    }
    if t == steps {
        return Ok(sched.s_final);
    }
    let frac = t as f64 / steps as f64;
    Ok(match sched.interpolation {
        Interpolation::Cubic => {
            sched.s_final + (sched.s_init - sched.s_final) * (1.0 - frac).powi(3)
        }
        Interpolation::Linear => sched.s_init + (sched.s_final - sched.s_init) * frac,
    })
}

/// Target sparsity after regrow step `r` of `1..=R`, linear from `s_start`
/// to `s_end`.
pub fn regrow_sparsity_at(sched: &RegrowSchedule, r: usize) -> Result<f64> {
    let steps = sched.steps;
    if r == 0 || r > steps {
        return Err(Error::Usage(format!("regrow step {r} outside 1..={steps}")));
    }
    if r == steps {
        return Ok(sched.s_end);
    }
    Ok(sched.s_start + (sched.s_end - sched.s_start) * (r as f64 / steps as f64))
}
