//! JSON experiment configuration.
//!
//! Required: `data.source`, `model.layers`, `prune.s_final`, `regrow.s_end`
//! and `seed`. Everything else has a default. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{self, load_idx, mnist_paths, synth_blobs, Dataset, RngState};
use crate::error::{Error, Result};
use crate::model::{output_shape, LayerSpec};
use crate::sparsity::{
    InitRule, Interpolation, PruneSchedule, RegrowCriterion, RegrowSchedule, ScheduleMode, Scope,
};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Blobs {
        train_size: usize,
        test_size: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    /// MNIST-style IDX files; `dir` falls back to `$BPRG_DATA_DIR`.
    Idx {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default)]
        train_size: Option<usize>,
        #[serde(default)]
        test_size: Option<usize>,
    },
}

fn default_dim() -> usize {
    16
}
fn default_classes() -> usize {
    10
}
fn default_spread() -> f64 {
    0.45
}

impl DataConfig {
    /// Train and test splits. Blobs draw the train split first, then the
    /// test split, from the same stream.
    pub fn load(&self, rng: &mut RngState) -> Result<(Dataset, Dataset)> {
        match self {
            DataConfig::Blobs {
                train_size,
                test_size,
                dim,
                classes,
                spread,
            } => {
                let train = synth_blobs(*train_size, *dim, *classes, *spread, rng)?;
                let test = synth_blobs(*test_size, *dim, *classes, *spread, rng)?;
                Ok((train, test))
            }
            DataConfig::Idx {
                dir,
                train_size,
                test_size,
            } => {
                let dir = match dir {
                    Some(d) => d.clone(),
                    None => std::env::var_os(data::DATA_DIR_ENV)
                        .map(PathBuf::from)
                        .ok_or_else(|| {
                            Error::Config(format!(
                                "data.dir not set and ${} is empty",
                                data::DATA_DIR_ENV
                            ))
                        })?,
                };
                let [tri, trl, tei, tel] = mnist_paths(&dir);
                let mut train = load_idx(&tri, &trl)?;
                let mut test = load_idx(&tei, &tel)?;
                for (key, ds, n) in [
                    ("train_size", &mut train, train_size),
                    ("test_size", &mut test, test_size),
                ] {
                    if let Some(n) = *n {
                        if n > ds.len() {
                            return Err(Error::Config(format!(
                                "data.{key} {n} exceeds the {} samples in {}",
                                ds.len(),
                                dir.display()
                            )));
                        }
                        *ds = ds.head(n);
                    }
                }
                Ok((train, test))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Fine-tuning learning rate is `lr · finetune_lr_scale`.
    pub finetune_lr_scale: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            batch_size: 64,
            finetune_lr_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Extra pretrain record every this many epochs; 0 disables.
    pub pretrain_every: usize,
    /// Wall-clock `elapsed_ms` in records. Off by default so that
    /// trajectories are byte-reproducible.
    pub record_timing: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrune {
    #[serde(default)]
    mode: ScheduleMode,
    #[serde(default)]
    s_init: f64,
    s_final: f64,
    #[serde(default)]
    steps: Option<usize>,
    #[serde(default)]
    interpolation: Interpolation,
    #[serde(default = "default_finetune")]
    finetune_epochs_per_step: usize,
    #[serde(default)]
    scope: Scope,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegrow {
    #[serde(default)]
    mode: ScheduleMode,
    #[serde(default)]
    s_start: Option<f64>,
    s_end: f64,
    #[serde(default)]
    steps: Option<usize>,
    #[serde(default)]
    criterion: RegrowCriterion,
    #[serde(default)]
    init_rule: InitRule,
    #[serde(default = "default_finetune")]
    finetune_epochs_per_step: usize,
    #[serde(default = "default_scoring")]
    scoring_batch_size: usize,
}

fn default_finetune() -> usize {
    3
}
fn default_scoring() -> usize {
    512
}
fn default_pretrain() -> usize {
    10
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    data: DataConfig,
    model: ModelConfig,
    #[serde(default)]
    optimizer: OptimizerConfig,
    #[serde(default = "default_pretrain")]
    pretrain_epochs: usize,
    prune: RawPrune,
    regrow: RawRegrow,
    seed: u64,
    #[serde(default)]
    eval: EvalConfig,
}

/// A complete, validated experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub pretrain_epochs: usize,
    pub prune: PruneSchedule,
    pub regrow: RegrowSchedule,
    pub seed: u64,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.lr {} must be positive",
                o.lr
            )));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::Config(format!(
                "optimizer.momentum {} outside [0, 1)",
                o.momentum
            )));
        }
        if o.batch_size == 0 {
            return Err(Error::Config(
                "optimizer.batch_size must be positive".into(),
            ));
        }
        if !(o.finetune_lr_scale > 0.0 && o.finetune_lr_scale.is_finite()) {
            return Err(Error::Config(
                "optimizer.finetune_lr_scale must be positive".into(),
            ));
        }
        if self.model.layers.is_empty() {
            return Err(Error::Config("model.layers is empty".into()));
        }
        if let DataConfig::Blobs {
            train_size,
            test_size,
            dim,
            classes,
            spread,
        } = &self.data
        {
            if *train_size == 0 || *test_size == 0 {
                return Err(Error::Config(
                    "data.train_size and data.test_size must be positive".into(),
                ));
            }
            if !(spread.is_finite() && *spread >= 0.0) {
                return Err(Error::Config(format!(
                    "data.spread {spread} must be non-negative"
                )));
            }
            output_shape(&self.model.layers, &[*dim])
                .map_err(|e| Error::Config(format!("model.layers: {e}")))?;
            let fits = *dim >= usize::BITS as usize || *classes <= 1usize << dim;
            if *classes == 0 || !fits {
                return Err(Error::Config(format!(
                    "data.classes {classes} does not fit data.dim {dim}"
                )));
            }
        }
        self.prune.validate()?;
        self.regrow.validate()?;
        if self.regrow.s_start != self.prune.s_final {
            return Err(Error::Config(format!(
                "regrow.s_start ({}) must equal prune.s_final ({})",
                self.regrow.s_start, self.prune.s_final
            )));
        }
        Ok(())
    }

    /// Loads both splits and reshapes samples for a leading conv layer.
    pub fn load_data(&self, rng: &mut RngState) -> Result<(Dataset, Dataset)> {
        let (mut train, mut test) = self.data.load(rng)?;
        if let Some(LayerSpec::Conv3x3 { c_in, .. }) = self.model.layers.first() {
            if train.sample_shape().len() == 1 {
                let d = train.sample_shape()[0];
                let side = (d as f64 / *c_in as f64).sqrt().round() as usize;
                if c_in * side * side != d {
                    return Err(Error::Config(format!(
                        "cannot view {d} features as {c_in}×s×s images"
                    )));
                }
                train = train.reshape_samples(&[*c_in, side, side])?;
                test = test.reshape_samples(&[*c_in, side, side])?;
            }
        }
        let out = output_shape(&self.model.layers, train.sample_shape())
            .map_err(|e| Error::Config(format!("model.layers: {e}")))?;
        let classes = train.class_count().max(test.class_count());
        if out[0] < classes {
            return Err(Error::Config(format!(
                "model emits {} logits for {classes} classes",
                out[0]
            )));
        }
        Ok((train, test))
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(if path == "." {
            e.inner().to_string()
        } else {
            format!("{path}: {}", e.inner())
        })
    })?;

    let prune_steps = raw.prune.steps.unwrap_or(1);
    let regrow_steps = raw.regrow.steps.unwrap_or(1);
    let cfg = ExperimentConfig {
        data: raw.data,
        model: raw.model,
        optimizer: raw.optimizer,
        pretrain_epochs: raw.pretrain_epochs,
        prune: PruneSchedule {
            mode: raw.prune.mode,
            s_init: raw.prune.s_init,
            s_final: raw.prune.s_final,
            steps: prune_steps,
            interpolation: raw.prune.interpolation,
            finetune_epochs_per_step: raw.prune.finetune_epochs_per_step,
            scope: raw.prune.scope,
        },
        regrow: RegrowSchedule {
            mode: raw.regrow.mode,
            s_start: raw.regrow.s_start.unwrap_or(raw.prune.s_final),
            s_end: raw.regrow.s_end,
            steps: regrow_steps,
            criterion: raw.regrow.criterion,
            init_rule: raw.regrow.init_rule,
            finetune_epochs_per_step: raw.regrow.finetune_epochs_per_step,
            scoring_batch_size: raw.regrow.scoring_batch_size,
        },
        seed: raw.seed,
        eval: raw.eval,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}
