//! Command-line surface. Exit codes: 0 success, 1 usage error, 2 data,
//! format or config error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{parse_config, ExperimentConfig};
use crate::data::{Dataset, RngState};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::report::{emit_plot_svg, emit_trajectory_csv, read_trajectory_csv};
use crate::sparsity::{
    keep_count, regrow_apply, regrow_candidates, regrow_sparsity_at, schedule_sparsity_at,
    InitRule, Interpolation, MaskSet, PruneSchedule, RegrowCriterion, RegrowSchedule, ScheduleMode,
};
use crate::trajectory::{
    evaluate_accuracy, new_optimizer, prepare_run, run_bidirectional, Session,
};

#[derive(Parser, Debug)]
#[command(
    name = "bprg",
    version,
    about = "Prune networks to extreme sparsity, then regrow them"
)]
struct Cli {
    /// Override the seed from the config file
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    OneShot,
    Iterative,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CriterionArg {
    Gradient,
    Random,
    Rewind,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitArg {
    Zero,
    Rewind,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a dense model and save it as a checkpoint
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Magnitude-prune a checkpoint to a target sparsity
    Prune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sparsity: f64,
        #[arg(long, value_enum, default_value = "one-shot")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        /// Number of pruning steps in iterative mode
        #[arg(long)]
        steps: Option<usize>,
        /// Experiment config supplying data for fine-tuning and evaluation
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Regrow pruned connections of a checkpoint down to a lower sparsity
    Regrow {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        to_sparsity: f64,
        #[arg(long, value_enum)]
        criterion: CriterionArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "zero")]
        init: InitArg,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        /// Experiment config supplying data; required by the gradient criterion
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Full pretrain, prune and regrow run
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Plot an existing trajectory CSV
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        svg: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr, summaries to stdout.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = parse_config(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn check_sparsity(flag: &str, s: f64) -> Result<()> {
    if s.is_finite() && (0.0..1.0).contains(&s) {
        Ok(())
    } else {
        Err(Error::Usage(format!("{flag} {s} outside [0, 1)")))
    }
}

fn summary(ms: &MaskSet, acc: Option<f64>) {
    let acc = acc
        .map(|a| format!(" test_accuracy {a:.6}"))
        .unwrap_or_default();
    println!(
        "sparsity {:.6} active {}/{}{acc}",
        ms.sparsity(),
        ms.active_count(),
        ms.total()
    );
}

/// Data and seed streams from a config, for commands that fine-tune an
/// existing checkpoint.
struct Fixture {
    cfg: ExperimentConfig,
    train: Dataset,
    test: Dataset,
    rng: RngState,
}

impl Fixture {
    fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let cfg = load_config(path, seed)?;
        let (train, test, _, rng) = prepare_run(&cfg)?;
        Ok(Self {
            cfg,
            train,
            test,
            rng,
        })
    }

    fn session(&mut self) -> Session<'_> {
        let o = &self.cfg.optimizer;
        Session::new(&self.train, &self.test, o.batch_size, &mut self.rng, false)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load_config(&config, cli.seed)?;
            let (train, test, mut model, mut rng) = prepare_run(&cfg)?;
            let mut session =
                Session::new(&train, &test, cfg.optimizer.batch_size, &mut rng, false);
            let mut opt = new_optimizer(&model, cfg.optimizer.lr, cfg.optimizer.momentum)?;
            session.pretrain(&mut model, cfg.pretrain_epochs, &mut opt, 0)?;
            let ms = MaskSet::dense(&model);
            save_checkpoint(&out, &model, &ms)?;
            summary(&ms, Some(evaluate_accuracy(&model, None, &test)?));
        }
        Command::Prune {
            ckpt,
            sparsity,
            mode,
            out,
            steps,
            config,
        } => {
            check_sparsity("--sparsity", sparsity)?;
            let (mut model, ms) = load_checkpoint(&ckpt)?;
            let current = ms.sparsity();
            if sparsity <= current {
                return Err(Error::Usage(format!(
                    "--sparsity {sparsity} is not above current sparsity {current}"
                )));
            }
            let (mode, steps) = match (mode, steps) {
                (ModeArg::OneShot, None | Some(1)) => (ScheduleMode::OneShot, 1),
                (ModeArg::OneShot, Some(n)) => {
                    return Err(Error::Usage(format!(
                        "--steps {n} conflicts with one-shot mode"
                    )))
                }
                (ModeArg::Iterative, Some(0)) => {
                    return Err(Error::Usage("--steps must be positive".into()))
                }
                (ModeArg::Iterative, n) => (ScheduleMode::Iterative, n.unwrap_or(5)),
            };
            let fixture = config.map(|c| Fixture::load(&c, cli.seed)).transpose()?;
            let sched = PruneSchedule {
                mode,
                s_init: current,
                s_final: sparsity,
                steps,
                interpolation: fixture
                    .as_ref()
                    .map_or(Interpolation::Cubic, |f| f.cfg.prune.interpolation),
                finetune_epochs_per_step: fixture
                    .as_ref()
                    .map_or(0, |f| f.cfg.prune.finetune_epochs_per_step),
                scope: fixture
                    .as_ref()
                    .map_or(Default::default(), |f| f.cfg.prune.scope),
            };
            let (ms, acc) = match fixture {
                Some(mut f) => {
                    let o = f.cfg.optimizer.clone();
                    let mut opt = new_optimizer(&model, o.lr * o.finetune_lr_scale, o.momentum)?;
                    let mut session = f.session();
                    let ms = session.continue_prune_phase(&mut model, ms, &sched, &mut opt)?;
                    (ms, Some(evaluate_accuracy(&model, None, &f.test)?))
                }
                None => {
                    sched.validate()?;
                    let mut ms = ms;
                    for t in 1..=sched.steps {
                        ms.prune_to(&mut model, schedule_sparsity_at(&sched, t)?, sched.scope)?;
                    }
                    (ms, None)
                }
            };
            save_checkpoint(&out, &model, &ms)?;
            summary(&ms, acc);
        }
        Command::Regrow {
            ckpt,
            to_sparsity,
            criterion,
            out,
            init,
            steps,
            config,
        } => {
            check_sparsity("--to-sparsity", to_sparsity)?;
            let (mut model, ms) = load_checkpoint(&ckpt)?;
            let current = ms.sparsity();
            if keep_count(ms.total(), to_sparsity) <= ms.active_count() {
                return Err(Error::Usage(format!(
                    "--to-sparsity {to_sparsity} is not below current sparsity {current}"
                )));
            }
            if steps == 0 {
                return Err(Error::Usage("--steps must be positive".into()));
            }
            let criterion = match criterion {
                CriterionArg::Gradient => RegrowCriterion::Gradient,
                CriterionArg::Random => RegrowCriterion::Random,
                CriterionArg::Rewind => RegrowCriterion::RewindMagnitude,
            };
            let init_rule = match init {
                InitArg::Zero => InitRule::Zero,
                InitArg::Rewind => InitRule::Rewind,
            };
            if criterion == RegrowCriterion::Gradient && config.is_none() {
                return Err(Error::Usage(
                    "--criterion gradient needs --config for scoring data".into(),
                ));
            }
            let fixture = config.map(|c| Fixture::load(&c, cli.seed)).transpose()?;
            let sched = RegrowSchedule {
                mode: if steps == 1 {
                    ScheduleMode::OneShot
                } else {
                    ScheduleMode::Iterative
                },
                s_start: current,
                s_end: to_sparsity,
                steps,
                criterion,
                init_rule,
                finetune_epochs_per_step: fixture
                    .as_ref()
                    .map_or(0, |f| f.cfg.regrow.finetune_epochs_per_step),
                scoring_batch_size: fixture
                    .as_ref()
                    .map_or(512, |f| f.cfg.regrow.scoring_batch_size),
            };
            let (ms, acc) = match fixture {
                Some(mut f) => {
                    let o = f.cfg.optimizer.clone();
                    let mut opt = new_optimizer(&model, o.lr * o.finetune_lr_scale, o.momentum)?;
                    let mut session = f.session();
                    let ms = session.run_regrow_phase(&mut model, ms, &sched, &mut opt)?;
                    (ms, Some(evaluate_accuracy(&model, None, &f.test)?))
                }
                None => (
                    regrow_without_data(&mut model, ms, &sched, cli.seed.unwrap_or(0))?,
                    None,
                ),
            };
            save_checkpoint(&out, &model, &ms)?;
            summary(&ms, acc);
        }
        Command::Run { config, out_dir } => {
            let cfg = load_config(&config, cli.seed)?;
            let run = run_bidirectional(&cfg)?;
            std::fs::create_dir_all(&out_dir)?;
            emit_trajectory_csv(&run.records, &out_dir.join("trajectory.csv"))?;
            emit_plot_svg(&run.records, &out_dir.join("trajectory.svg"))?;
            save_checkpoint(&out_dir.join("final.bprg"), &run.model, &run.masks)?;
            if let Some(last) = run.records.last() {
                println!(
                    "{} records; final sparsity {:.6} test_accuracy {:.6}",
                    run.records.len(),
                    last.sparsity,
                    last.test_accuracy
                );
            }
        }
        Command::Report { csv, svg } => {
            let records = read_trajectory_csv(&csv)?;
            emit_plot_svg(&records, &svg)?;
            println!("{} records plotted", records.len());
        }
    }
    Ok(())
}

/// Data-free regrowth for the random and rewind criteria.
fn regrow_without_data(
    model: &mut Model,
    mut ms: MaskSet,
    sched: &RegrowSchedule,
    seed: u64,
) -> Result<MaskSet> {
    sched.validate()?;
    let mut rng = RngState::new(seed);
    for r in 1..=sched.steps {
        let target = keep_count(ms.total(), regrow_sparsity_at(sched, r)?);
        let k = target.saturating_sub(ms.active_count());
        let cands = regrow_candidates(&ms, sched.criterion, k, None, &mut rng)?;
        regrow_apply(&mut ms, &cands, sched.init_rule, model)?;
    }
    Ok(ms)
}
