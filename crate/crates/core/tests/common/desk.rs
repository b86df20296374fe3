//! The desk-scale pruning/regrowth experiment shared by the trend criteria.
//! MNIST (784-128-10 on a 10k training subset) when `BPRG_DATA_DIR` is set,
//! otherwise 16-d synthetic blobs with a 16-128-10 MLP.

use bprg::config::{parse_config_str, ExperimentConfig};
use bprg::data::mnist_dir_from_env;
use bprg::sparsity::{PruneSchedule, RegrowCriterion, RegrowSchedule};
use bprg::trajectory::{new_optimizer, prepare_run, Session};

pub const PRUNE_LEVELS: [f64; 4] = [0.50, 0.90, 0.95, 0.99];
pub const FINETUNE_EPOCHS: usize = 3;

pub struct Desk {
    pub source: &'static str,
    pub pretrain_floor: f64,
    pub cfg: ExperimentConfig,
}

pub fn desk(seed: u64) -> Desk {
    let mnist = mnist_dir_from_env().is_some();
    let (source, data, input, floor) = if mnist {
        (
            "MNIST",
            r#"{"source": "idx", "train_size": 10000}"#,
            784,
            0.95,
        )
    } else {
        (
            "synthetic blobs",
            r#"{"source": "blobs", "train_size": 10000, "test_size": 2000, "dim": 16, "classes": 10, "spread": 0.45}"#,
            16,
            0.99,
        )
    };
    let text = format!(
        r#"{{
            "data": {data},
            "model": {{"layers": [
                {{"kind": "dense", "in": {input}, "out": 128}},
                {{"kind": "relu"}},
                {{"kind": "dense", "in": 128, "out": 10}}
            ]}},
            "optimizer": {{"lr": 0.05, "momentum": 0.9, "batch_size": 64, "finetune_lr_scale": 0.1}},
            "pretrain_epochs": 10,
            "prune": {{"s_final": 0.99, "finetune_epochs_per_step": {FINETUNE_EPOCHS}}},
            "regrow": {{"s_end": 0.95, "finetune_epochs_per_step": {FINETUNE_EPOCHS}, "scoring_batch_size": 512}},
            "seed": {seed}
        }}"#
    );
    Desk {
        source,
        pretrain_floor: floor,
        cfg: parse_config_str(&text).expect("desk config"),
    }
}

/// Test accuracies from one seed of the desk experiment.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub pretrained: f64,
    /// One-shot prune plus fine-tune, one entry per [`PRUNE_LEVELS`].
    pub pruned: [f64; 4],
    /// Regrown from the 0.99 model to 0.95 with the gradient criterion.
    pub regrown_gradient: f64,
    /// Same budget, random criterion.
    pub regrown_random: f64,
}

impl SeedRun {
    pub fn at(&self, s: f64) -> f64 {
        self.pruned[PRUNE_LEVELS
            .iter()
            .position(|&l| l == s)
            .expect("prune level")]
    }
}

pub fn run_seed(seed: u64) -> bprg::Result<(SeedRun, &'static str, f64)> {
    let desk = desk(seed);
    let cfg = &desk.cfg;
    let (train, test, mut model, mut rng) = prepare_run(cfg)?;
    let o = &cfg.optimizer;
    let mut session = Session::new(&train, &test, o.batch_size, &mut rng, false);
    let mut opt = new_optimizer(&model, o.lr, o.momentum)?;
    session.pretrain(&mut model, cfg.pretrain_epochs, &mut opt, 0)?;
    let pretrained = session.recorder.records().last().unwrap().test_accuracy;

    let ft_lr = o.lr * o.finetune_lr_scale;
    let mut pruned = [0.0; 4];
    let mut at_99 = None;
    for (i, &s) in PRUNE_LEVELS.iter().enumerate() {
        let (mut m, mut arm) = (model.clone(), session.clone());
        let mut ft = new_optimizer(&m, ft_lr, o.momentum)?;
        let ms = arm.run_prune_phase(
            &mut m,
            &PruneSchedule::one_shot(s, FINETUNE_EPOCHS),
            &mut ft,
        )?;
        pruned[i] = arm.recorder.records().last().unwrap().test_accuracy;
        if s == 0.99 {
            at_99 = Some((m, ms, arm));
        }
    }

    let (m99, ms99, arm99) = at_99.unwrap();
    let regrow = |criterion| -> bprg::Result<f64> {
        let (mut m, mut arm) = (m99.clone(), arm99.clone());
        let mut ft = new_optimizer(&m, ft_lr, o.momentum)?;
        let mut sched = RegrowSchedule::one_shot(0.99, 0.95, criterion, FINETUNE_EPOCHS);
        sched.scoring_batch_size = cfg.regrow.scoring_batch_size;
        arm.run_regrow_phase(&mut m, ms99.clone(), &sched, &mut ft)?;
        Ok(arm.recorder.records().last().unwrap().test_accuracy)
    };
    let regrown_gradient = regrow(RegrowCriterion::Gradient)?;
    let regrown_random = regrow(RegrowCriterion::Random)?;
    Ok((
        SeedRun {
            seed,
            pretrained,
            pruned,
            regrown_gradient,
            regrown_random,
        },
        desk.source,
        desk.pretrain_floor,
    ))
}
