use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rehearsal::checkpoint::Checkpoint;
use rehearsal::generative::GanBundle;
use rehearsal::harness::experiment::{
    combined_replay, fresh_stm, run_sequence, scratch_experiment, stm_seed, task_spec,
    train_task_gan, CheckpointSink,
};
use rehearsal::harness::{evaluate, metrics, ConfigFile, ExperimentConfig, Method, MetricsRow};
use rehearsal::long_term::{train_ltm, LtmWindow, Rehearsal, RehearsalSource};
use rehearsal::rng::derive_seed;
use rehearsal::short_term::{train_stm, QNetwork, ReplayBuffer};
use rehearsal::toyworld::TaskId;

#[derive(Parser)]
#[command(
    version,
    about = "Continual Q-learning with generative rehearsal on toy grid games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the short-term network on one task
    TrainStm(PhaseArgs),
    /// Train the generator of one task (needs its replay and, for grim, its long-term network)
    TrainGan(PhaseArgs),
    /// Train the long-term network on one task
    TrainLtm(PhaseArgs),
    /// Run every phase for every task and seed
    RunSequence(Common),
    /// Relearn the first task from generated states only
    Scratch(Common),
    /// Evaluate a stored network on every task
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// Config file with [section] key = value lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["repr", "grim", "reh"])]
    method: Option<String>,
    #[arg(long, value_enum)]
    normalize: Option<Switch>,
    /// Output directory
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Override a config value, e.g. --set long_term.alpha=0.3
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct PhaseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    task: TaskId,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint path without extension
    #[arg(long)]
    checkpoint: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut file = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                ConfigFile::parse(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ConfigFile::default(),
        };
        if let Some(m) = &self.method {
            file.set(&format!("experiment.method={m}"))?;
        }
        if let Some(n) = self.normalize {
            let v = match n {
                Switch::On => "on",
                Switch::Off => "off",
            };
            file.set(&format!("experiment.normalize={v}"))?;
        }
        if let Some(s) = self.seed {
            file.set(&format!("experiment.seeds={s}"))?;
        }
        for o in &self.overrides {
            file.set(o)?;
        }
        Ok(ExperimentConfig::from_file(&file)?)
    }

    fn seed(&self, config: &ExperimentConfig) -> u64 {
        config.seeds[0]
    }

    fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed_{seed}"))
    }
}

fn task_index(config: &ExperimentConfig, task: TaskId) -> Result<usize> {
    match config.tasks.iter().position(|&t| t == task) {
        Some(i) => Ok(i + 1),
        None => bail!("task {task} is not in experiment.tasks"),
    }
}

fn previous_task(config: &ExperimentConfig, index: usize) -> Option<TaskId> {
    (index >= 2).then(|| config.tasks[index - 2])
}

fn read(dir: &Path, stem: &str) -> Result<Checkpoint> {
    Checkpoint::read(dir, stem).with_context(|| format!("loading {stem} from {}", dir.display()))
}

fn write_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    metrics::write_new(path, rows).with_context(|| format!("writing {}", path.display()))
}

fn train_stm_cmd(args: &PhaseArgs) -> Result<()> {
    let config = args.common.load()?;
    let seed = args.common.seed(&config);
    let dir = args.common.seed_dir(seed);
    let sink = CheckpointSink::new(&dir)?;
    let task = task_spec(&config, args.task);
    let out = train_stm(&task, &config.stm, stm_seed(seed, args.task))
        .map_err(|e| anyhow::anyhow!("phase stm_{} (seed {seed}): {e}", args.task))?;
    sink.put(&format!("stm_{}", args.task), &out.network.to_checkpoint())?;
    sink.put(
        &format!("replay_{}", args.task),
        &out.replay.to_checkpoint()?,
    )?;
    let rows: Vec<MetricsRow> = out
        .history
        .iter()
        .map(|h| MetricsRow {
            seed,
            phase: format!("stm_{}", args.task),
            step: h.frame,
            task: args.task,
            mean_reward: h.score.mean,
            std_reward: h.score.std,
            loss_distill: None,
            loss_pr: None,
        })
        .collect();
    write_rows(&dir.join(format!("metrics_stm_{}.csv", args.task)), &rows)?;
    let best = &out.history[out.best_index];
    println!(
        "stm_{}: best {:.3} +- {:.3} at frame {}",
        args.task, best.score.mean, best.score.std, best.frame
    );
    Ok(())
}

fn load_replay(dir: &Path, task: TaskId, seed: u64) -> Result<ReplayBuffer> {
    Ok(ReplayBuffer::from_checkpoint(
        &read(dir, &format!("replay_{task}"))?,
        derive_seed(seed, "replay"),
    )?)
}

fn train_ltm_cmd(args: &PhaseArgs) -> Result<()> {
    let config = args.common.load()?;
    let seed = args.common.seed(&config);
    let dir = args.common.seed_dir(seed);
    let index = task_index(&config, args.task)?;
    let phase = format!("ltm_{}", args.task);
    let stm = QNetwork::from_checkpoint(&read(&dir, &format!("stm_{}", args.task))?)?;
    let replay = load_replay(&dir, args.task, seed)?;

    let prev = match previous_task(&config, index) {
        Some(p) => Some((
            p,
            QNetwork::from_checkpoint(&read(&dir, &format!("ltm_{p}"))?)?,
        )),
        None => None,
    };
    let (gan, stored);
    let rehearsal = match &prev {
        None => None,
        Some((p, net)) => {
            let source = if config.method == Method::Reh {
                let earlier = config.tasks[..index - 1]
                    .iter()
                    .map(|&t| load_replay(&dir, t, seed))
                    .collect::<Result<Vec<_>>>()?;
                stored = combined_replay(&earlier, derive_seed(seed, "reh"))?;
                RehearsalSource::Stored(&stored)
            } else {
                gan = GanBundle::from_checkpoint(&read(&dir, &format!("gan_{p}"))?)?;
                RehearsalSource::Generated(&gan)
            };
            Some(Rehearsal {
                previous: net,
                source,
            })
        }
    };
    let tasks: Vec<_> = config
        .tasks
        .iter()
        .map(|&t| task_spec(&config, t))
        .collect();
    let mut rows = Vec::new();
    let mut hook = |w: &LtmWindow, net: &QNetwork| -> rehearsal::Result<()> {
        let scores = evaluate(
            net,
            &tasks,
            config.eval_episodes,
            config.eval_epsilon,
            derive_seed(seed, "eval"),
        )?;
        for s in scores {
            eprintln!("{phase} step {}: task {} {:.3}", w.step, s.task, s.mean);
            rows.push(MetricsRow {
                seed,
                phase: phase.clone(),
                step: w.step,
                task: s.task,
                mean_reward: s.mean,
                std_reward: s.std,
                loss_distill: Some(w.loss_distill),
                loss_pr: w.loss_pr,
            });
        }
        Ok(())
    };
    let out = train_ltm(
        index,
        &stm,
        &replay,
        rehearsal,
        &config.ltm,
        derive_seed(seed, &phase),
        &mut hook,
    )
    .map_err(|e| anyhow::anyhow!("phase {phase} (seed {seed}): {e}"))?;
    CheckpointSink::new(&dir)?.put(&phase, &out.to_checkpoint())?;
    write_rows(&dir.join(format!("metrics_{phase}.csv")), &rows)?;
    Ok(())
}

fn train_gan_cmd(args: &PhaseArgs) -> Result<()> {
    let config = args.common.load()?;
    let seed = args.common.seed(&config);
    let dir = args.common.seed_dir(seed);
    let index = task_index(&config, args.task)?;
    let phase = format!("gan_{}", args.task);
    let Some(mode) = config.method.gan_mode() else {
        bail!("method reh does not use a generator");
    };
    let replay = load_replay(&dir, args.task, seed)?;
    let previous = match previous_task(&config, index) {
        Some(p) => Some(GanBundle::from_checkpoint(&read(
            &dir,
            &format!("gan_{p}"),
        )?)?),
        None => None,
    };
    let frozen = match mode {
        rehearsal::generative::GanMode::Grim => Some(QNetwork::from_checkpoint(&read(
            &dir,
            &format!("ltm_{}", args.task),
        )?)?),
        rehearsal::generative::GanMode::Repr => None,
    };
    let gan = train_task_gan(
        &config,
        mode,
        index,
        &replay,
        previous.as_ref(),
        frozen.as_ref(),
        derive_seed(seed, &phase),
    )
    .map_err(|e| anyhow::anyhow!("phase {phase} (seed {seed}): {e}"))?;
    CheckpointSink::new(&dir)?.put(&phase, &gan.to_checkpoint())?;
    Ok(())
}

fn save_config(out: &Path, config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let path = out.join("config.txt");
    std::fs::write(&path, config.to_file().render())
        .with_context(|| format!("writing {}", path.display()))
}

fn run_sequence_cmd(args: &Common) -> Result<()> {
    let config = args.load()?;
    save_config(&args.out, &config)?;
    let mut provider = fresh_stm(&config);
    for &seed in &config.seeds {
        let dir = args.seed_dir(seed);
        let sink = CheckpointSink::new(&dir)?;
        let out = run_sequence(&config, seed, &mut provider, Some(&sink))?;
        write_rows(&dir.join("metrics.csv"), &out.rows)?;
        let last = config.tasks[config.tasks.len() - 1];
        for &t in &config.tasks {
            if let Some(r) = out.ltm_curve(last, t).last() {
                println!(
                    "seed {seed}: task {t} after ltm_{last}: {:.3}",
                    r.mean_reward
                );
            }
        }
    }
    Ok(())
}

fn scratch_cmd(args: &Common) -> Result<()> {
    let config = args.load()?;
    save_config(&args.out, &config)?;
    let task = task_spec(&config, config.tasks[0]);
    for &seed in &config.seeds {
        let dir = args.seed_dir(seed);
        let sink = CheckpointSink::new(&dir)?;
        let teacher = train_stm(&task, &config.stm, stm_seed(seed, task.id))
            .map_err(|e| anyhow::anyhow!("phase stm_{} (seed {seed}): {e}", task.id))?;
        let other = train_stm(
            &task,
            &config.stm,
            derive_seed(stm_seed(seed, task.id), "other"),
        )
        .map_err(|e| anyhow::anyhow!("phase stm_{}_other (seed {seed}): {e}", task.id))?;
        let out = scratch_experiment(&config, seed, &teacher, &other, Some(&sink))?;
        write_rows(&dir.join("metrics_scratch.csv"), &out.rows)?;
        for (arm, score) in &out.final_scores {
            println!("seed {seed}: {} {score:.3}", arm.as_str());
        }
    }
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let config = args.common.load()?;
    let seed = args.common.seed(&config);
    let dir = args.checkpoint.parent().unwrap_or(Path::new("."));
    let stem = args
        .checkpoint
        .file_name()
        .and_then(|s| s.to_str())
        .context("checkpoint path has no file name")?;
    let net = QNetwork::from_checkpoint(&read(dir, stem)?)?;
    let tasks: Vec<_> = config
        .tasks
        .iter()
        .map(|&t| task_spec(&config, t))
        .collect();
    let scores = evaluate(
        &net,
        &tasks,
        config.eval_episodes,
        config.eval_epsilon,
        derive_seed(seed, "eval"),
    )?;
    let rows: Vec<MetricsRow> = scores
        .into_iter()
        .map(|s| MetricsRow {
            seed,
            phase: "eval".into(),
            step: 0,
            task: s.task,
            mean_reward: s.mean,
            std_reward: s.std,
            loss_distill: None,
            loss_pr: None,
        })
        .collect();
    print!("{}", metrics::render(&rows)?);
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::TrainStm(a) => train_stm_cmd(a),
        Command::TrainGan(a) => train_gan_cmd(a),
        Command::TrainLtm(a) => train_ltm_cmd(a),
        Command::RunSequence(a) => run_sequence_cmd(a),
        Command::Scratch(a) => scratch_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
