//! Pretrain → prune → regrow orchestration and the accuracy-vs-sparsity
//! record stream.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::config::ExperimentConfig;
use crate::data::{minibatches, Dataset, RngState};
use crate::error::{Error, Result};
use crate::model::{build_model, Model, ParamId};
use crate::sparsity::{
    dense_saliency, keep_count, masked_step, regrow_apply, regrow_candidates, regrow_sparsity_at,
    schedule_sparsity_at, MaskSet, PruneSchedule, RegrowCriterion, RegrowSchedule,
};
use crate::tensor::{kernels, OptimizerState};

/// Batch size for loss and accuracy evaluation. Evaluation never feeds back
/// into training, so this only affects speed.
const EVAL_BATCH: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Pretrain,
    Prune,
    Regrow,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Prune => "prune",
            Phase::Regrow => "regrow",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "prune" => Ok(Phase::Prune),
            "regrow" => Ok(Phase::Regrow),
            _ => Err(Error::Format(format!("unknown phase {s:?}"))),
        }
    }
}

/// One point of an accuracy-vs-sparsity curve.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub phase: Phase,
    pub step: usize,
    pub sparsity: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub active_params: usize,
    pub elapsed_ms: u64,
}

/// Append-only record sink.
#[derive(Clone, Debug)]
pub struct Recorder {
    records: Vec<TrajectoryRecord>,
    started: Option<Instant>,
}

impl Recorder {
    /// With `timing` off every record carries `elapsed_ms = 0`.
    pub fn new(timing: bool) -> Self {
        Self {
            records: Vec::new(),
            started: timing.then(Instant::now),
        }
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TrajectoryRecord> {
        self.records
    }

    pub fn push(
        &mut self,
        phase: Phase,
        step: usize,
        active: usize,
        total: usize,
        train_loss: f64,
        test_accuracy: f64,
    ) {
        let sparsity = if total == 0 {
            0.0
        } else {
            1.0 - active as f64 / total as f64
        };
        let elapsed_ms = self.started.map_or(0, |t| t.elapsed().as_millis() as u64);
        self.records.push(TrajectoryRecord {
            phase,
            step,
            sparsity,
            train_loss,
            test_accuracy,
            active_params: active,
            elapsed_ms,
        });
    }
}

pub fn new_optimizer(model: &Model, lr: f64, momentum: f64) -> Result<OptimizerState<ParamId>> {
    OptimizerState::new(
        lr,
        momentum,
        model.params().iter().map(|(k, v)| (*k, v.len())),
    )
}

/// Mean cross-entropy over the whole dataset.
pub fn dataset_loss(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let mut total = 0.0;
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(data.len())).collect();
        let (x, y) = data.batch(&idx);
        total += model.loss(&x, &y)? * idx.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Minibatch SGD for `epochs` passes, masked when `masks` is given.
/// Returns the full-dataset training loss afterwards; `epochs = 0` only
/// measures it.
pub fn train_epochs(
    model: &mut Model,
    masks: Option<&MaskSet>,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    opt: &mut OptimizerState<ParamId>,
    rng: &mut RngState,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    for _ in 0..epochs {
        for idx in minibatches(data.len(), batch_size, rng) {
            let (x, y) = data.batch(&idx);
            let (_, mut grads) = model.loss_and_grads(&x, &y)?;
            match masks {
                Some(ms) => masked_step(model, &mut grads, ms, opt)?,
                None => opt.step(model.params_mut(), &grads)?,
            }
        }
    }
    dataset_loss(model, data)
}

/// Top-1 accuracy with lowest-index argmax tie-break. With `masks`, the
/// masked weights are treated as zero; `model` itself is never modified.
pub fn evaluate_accuracy(model: &Model, masks: Option<&MaskSet>, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let masked;
    let model = match masks {
        Some(ms) => {
            let mut m = model.clone();
            crate::sparsity::apply_masks(&mut m, ms)?;
            masked = m;
            &masked
        }
        None => model,
    };
    let mut correct = 0usize;
    for start in (0..test.len()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(test.len())).collect();
        let (x, y) = test.batch(&idx);
        let logits = model.forward(&x)?;
        let c = logits.shape()[1];
        correct += logits
            .data()
            .chunks(c)
            .zip(&y)
            .filter(|(row, &label)| kernels::argmax(row) == label)
            .count();
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Data, randomness and the record sink shared by every phase of a run.
/// Cloning a session forks an identical copy, which is how comparison arms
/// start from the same state.
#[derive(Clone, Debug)]
pub struct Session<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub batch_size: usize,
    pub shuffle_rng: RngState,
    pub regrow_rng: RngState,
    pub recorder: Recorder,
}

impl<'a> Session<'a> {
    pub fn new(
        train: &'a Dataset,
        test: &'a Dataset,
        batch_size: usize,
        rng: &mut RngState,
        timing: bool,
    ) -> Self {
        Self {
            train,
            test,
            batch_size,
            shuffle_rng: rng.fork(),
            regrow_rng: rng.fork(),
            recorder: Recorder::new(timing),
        }
    }

    fn evaluate_and_record(
        &mut self,
        phase: Phase,
        step: usize,
        model: &Model,
        masks: Option<&MaskSet>,
        loss: f64,
    ) -> Result<()> {
        let acc = evaluate_accuracy(model, None, self.test)?;
        let (active, total) = match masks {
            Some(ms) => (ms.active_count(), ms.total()),
            None => (model.prunable_count(), model.prunable_count()),
        };
        self.recorder.push(phase, step, active, total, loss, acc);
        Ok(())
    }

    /// Dense training. With `record_every > 0` a pretrain record is emitted
    /// every that many epochs; the step-0 baseline record always follows.
    pub fn pretrain(
        &mut self,
        model: &mut Model,
        epochs: usize,
        opt: &mut OptimizerState<ParamId>,
        record_every: usize,
    ) -> Result<()> {
        for epoch in 1..=epochs {
            let loss = train_epochs(
                model,
                None,
                self.train,
                1,
                self.batch_size,
                opt,
                &mut self.shuffle_rng,
            )?;
            if record_every > 0 && epoch % record_every == 0 {
                self.evaluate_and_record(Phase::Pretrain, epoch, model, None, loss)?;
            }
        }
        let loss = dataset_loss(model, self.train)?;
        self.evaluate_and_record(Phase::Pretrain, 0, model, None, loss)
    }

    /// Prunes along `sched`, fine-tuning under the mask after every step.
    /// Momentum is reset at the start of each fine-tune segment.
    pub fn run_prune_phase(
        &mut self,
        model: &mut Model,
        sched: &PruneSchedule,
        opt: &mut OptimizerState<ParamId>,
    ) -> Result<MaskSet> {
        let ms = MaskSet::dense(model);
        self.continue_prune_phase(model, ms, sched, opt)
    }

    /// Like [`Session::run_prune_phase`] but starting from existing masks,
    /// which stay pruned.
    pub fn continue_prune_phase(
        &mut self,
        model: &mut Model,
        mut ms: MaskSet,
        sched: &PruneSchedule,
        opt: &mut OptimizerState<ParamId>,
    ) -> Result<MaskSet> {
        sched.validate()?;
        ms.check_aligned(model)?;
        for t in 1..=sched.steps {
            let s = schedule_sparsity_at(sched, t)?;
            ms.prune_to(model, s, sched.scope)?;
            opt.reset();
            let loss = train_epochs(
                model,
                Some(&ms),
                self.train,
                sched.finetune_epochs_per_step,
                self.batch_size,
                opt,
                &mut self.shuffle_rng,
            )?;
            self.evaluate_and_record(Phase::Prune, t, model, Some(&ms), loss)?;
        }
        Ok(ms)
    }

    /// Regrows from `sched.s_start` down to `sched.s_end`, fine-tuning after
    /// every step. Each step revives exactly enough positions to reach the
    /// keep count of its target sparsity.
    pub fn run_regrow_phase(
        &mut self,
        model: &mut Model,
        mut ms: MaskSet,
        sched: &RegrowSchedule,
        opt: &mut OptimizerState<ParamId>,
    ) -> Result<MaskSet> {
        sched.validate()?;
        ms.check_aligned(model)?;
        let total = ms.total();
        let slack = ms.masks().len() as f64 / total.max(1) as f64;
        if (ms.sparsity() - sched.s_start).abs() > slack + 1e-12 {
            return Err(Error::Config(format!(
                "regrow.s_start {} does not match mask sparsity {}",
                sched.s_start,
                ms.sparsity()
            )));
        }
        let scoring = self.train.head(sched.scoring_batch_size);
        let scoring_idx: Vec<usize> = (0..scoring.len()).collect();
        let (score_x, score_y) = scoring.batch(&scoring_idx);

        for r in 1..=sched.steps {
            let target = keep_count(total, regrow_sparsity_at(sched, r)?);
            let active = ms.active_count();
            if target <= active {
                return Err(Error::Config(format!(
                    "regrow step {r} targets {target} active weights but {active} are already active"
                )));
            }
            let k = target - active;
            let saliency = match sched.criterion {
                RegrowCriterion::Gradient => Some(dense_saliency(model, &ms, &score_x, &score_y)?),
                _ => None,
            };
            let cands = regrow_candidates(
                &ms,
                sched.criterion,
                k,
                saliency.as_ref(),
                &mut self.regrow_rng,
            )?;
            regrow_apply(&mut ms, &cands, sched.init_rule, model)?;
            opt.reset();
            let loss = train_epochs(
                model,
                Some(&ms),
                self.train,
                sched.finetune_epochs_per_step,
                self.batch_size,
                opt,
                &mut self.shuffle_rng,
            )?;
            self.evaluate_and_record(Phase::Regrow, r, model, Some(&ms), loss)?;
        }
        Ok(ms)
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    pub model: Model,
    pub masks: MaskSet,
}

/// Loads both splits and initialises the model. The returned generator has
/// already given up the data and init streams and is ready for
/// [`Session::new`].
pub fn prepare_run(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, Model, RngState)> {
    cfg.validate()?;
    let mut master = RngState::new(cfg.seed);
    let mut data_rng = master.fork();
    let mut init_rng = master.fork();
    let (train, test) = cfg.load_data(&mut data_rng)?;
    let model = build_model(&cfg.model.layers, train.sample_shape(), &mut init_rng)?;
    Ok((train, test, model, master))
}

/// Seed-derived streams, in fork order: data, init, then the session's
/// shuffle and regrow streams.
pub fn run_bidirectional(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (train, test, mut model, mut master) = prepare_run(cfg)?;
    let mut session = Session::new(
        &train,
        &test,
        cfg.optimizer.batch_size,
        &mut master,
        cfg.eval.record_timing,
    );

    let o = &cfg.optimizer;
    let mut opt = new_optimizer(&model, o.lr, o.momentum)?;
    session.pretrain(
        &mut model,
        cfg.pretrain_epochs,
        &mut opt,
        cfg.eval.pretrain_every,
    )?;

    let mut ft = new_optimizer(&model, o.lr * o.finetune_lr_scale, o.momentum)?;
    let ms = session.run_prune_phase(&mut model, &cfg.prune, &mut ft)?;
    let masks = session.run_regrow_phase(&mut model, ms, &cfg.regrow, &mut ft)?;
    Ok(RunOutput {
        records: session.recorder.into_records(),
        model,
        masks,
    })
}
