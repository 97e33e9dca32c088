//! End-to-end drivers: learning a task sequence and relearning a task from
//! generated states only.

use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::generative::{compose_gan_batch, train_gan, GanBundle, GanMode};
use crate::long_term::{
    distill, estimate_norm_stats, train_ltm, LtmOutcome, LtmWindow, NormStats, Rehearsal,
    RehearsalSource,
};
use crate::rng::{derive_seed, stream};
use crate::short_term::{train_stm, QNetwork, ReplayBuffer, StmOutcome};
use crate::toyworld::{TaskId, TaskSpec};

use super::config::{ExperimentConfig, Method};
use super::evaluate::evaluate;
use super::metrics::MetricsRow;

/// Supplies a trained short-term system for `(task, seed)`. Lets callers
/// share one training run between experiments.
pub type StmProvider<'a> = dyn FnMut(&TaskSpec, u64) -> Result<StmOutcome> + 'a;

pub fn task_spec(config: &ExperimentConfig, id: TaskId) -> TaskSpec {
    TaskSpec::new(id).with_frame_stack(config.frame_stack)
}

/// Seed of the short-term run for `task` within experiment seed `seed`.
pub fn stm_seed(seed: u64, task: TaskId) -> u64 {
    derive_seed(seed, &format!("stm-{task}"))
}

/// Trains the short-term system from scratch.
pub fn fresh_stm(
    config: &ExperimentConfig,
) -> impl FnMut(&TaskSpec, u64) -> Result<StmOutcome> + '_ {
    move |task, seed| train_stm(task, &config.stm, seed)
}

/// Writes checkpoints under one directory, refusing to replace any file.
#[derive(Clone, Debug)]
pub struct CheckpointSink {
    dir: PathBuf,
}

impl CheckpointSink {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn put(&self, stem: &str, c: &Checkpoint) -> Result<()> {
        c.write(&self.dir, stem)
    }
}

#[derive(Clone, Debug)]
pub struct SequenceOutcome {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub stms: Vec<QNetwork>,
    pub ltms: Vec<LtmOutcome>,
    pub gans: Vec<GanBundle>,
}

impl SequenceOutcome {
    /// Rows evaluating `task` during the long-term phase of `phase_task`.
    pub fn ltm_curve(&self, phase_task: TaskId, task: TaskId) -> Vec<&MetricsRow> {
        let phase = format!("ltm_{phase_task}");
        self.rows
            .iter()
            .filter(|r| r.phase == phase && r.task == task)
            .collect()
    }
}

fn eval_rows(
    config: &ExperimentConfig,
    seed: u64,
    phase: &str,
    step: usize,
    net: &QNetwork,
    window: Option<&LtmWindow>,
) -> Result<Vec<MetricsRow>> {
    let tasks: Vec<TaskSpec> = config.tasks.iter().map(|&t| task_spec(config, t)).collect();
    let scores = evaluate(
        net,
        &tasks,
        config.eval_episodes,
        config.eval_epsilon,
        derive_seed(seed, "eval"),
    )?;
    Ok(scores
        .into_iter()
        .map(|s| MetricsRow {
            seed,
            phase: phase.to_string(),
            step,
            task: s.task,
            mean_reward: s.mean,
            std_reward: s.std,
            loss_distill: window.map(|w| w.loss_distill),
            loss_pr: window.and_then(|w| w.loss_pr),
        })
        .collect())
}

pub fn combined_replay(buffers: &[ReplayBuffer], seed: u64) -> Result<ReplayBuffer> {
    let total: usize = buffers.iter().map(ReplayBuffer::len).sum();
    let mut out = ReplayBuffer::new(total.max(1), seed)?;
    for b in buffers {
        for t in b.items() {
            out.push(t.clone());
        }
    }
    Ok(out)
}

/// Trains a generator for task `task_index` from the current replay and the
/// previous generator; `frozen` supplies activations in `Grim` mode.
pub fn train_task_gan(
    config: &ExperimentConfig,
    mode: GanMode,
    task_index: usize,
    replay: &ReplayBuffer,
    previous: Option<&GanBundle>,
    frozen: Option<&QNetwork>,
    seed: u64,
) -> Result<GanBundle> {
    let state_dim = replay
        .items()
        .first()
        .map(|t| t.s.len())
        .ok_or_else(|| Error::invalid("empty replay"))?;
    let mut data_rng = stream(seed, "gan-data");
    let out = train_gan(
        &config.gan,
        mode,
        state_dim,
        |n| compose_gan_batch(replay, previous, task_index, n, &mut data_rng),
        frozen,
        seed,
    )?;
    Ok(out.bundle)
}

/// Learns `config.tasks` in order for one seed. Per task: short-term learning,
/// then long-term learning (rehearsing earlier tasks), then a generator for
/// the states seen so far, trained against the new long-term network.
pub fn run_sequence(
    config: &ExperimentConfig,
    seed: u64,
    stm_provider: &mut StmProvider<'_>,
    sink: Option<&CheckpointSink>,
) -> Result<SequenceOutcome> {
    config.validate()?;
    let mut out = SequenceOutcome {
        seed,
        rows: Vec::new(),
        stms: Vec::new(),
        ltms: Vec::new(),
        gans: Vec::new(),
    };
    let mut replays: Vec<ReplayBuffer> = Vec::new();

    for (k, &task_id) in config.tasks.iter().enumerate() {
        let task_index = k + 1;
        let task = task_spec(config, task_id);

        let stm = stm_provider(&task, stm_seed(seed, task_id))
            .map_err(|e| e.in_phase(format!("stm_{task_id}"), seed))?;
        for h in &stm.history {
            out.rows.push(MetricsRow {
                seed,
                phase: format!("stm_{task_id}"),
                step: h.frame,
                task: task_id,
                mean_reward: h.score.mean,
                std_reward: h.score.std,
                loss_distill: None,
                loss_pr: None,
            });
        }
        if let Some(s) = sink {
            s.put(&format!("stm_{task_id}"), &stm.network.to_checkpoint())?;
            s.put(&format!("replay_{task_id}"), &stm.replay.to_checkpoint()?)?;
        }

        let phase = format!("ltm_{task_id}");
        let stored;
        let rehearsal = match (out.ltms.last(), config.method) {
            (None, _) => None,
            (Some(prev), Method::Reh) => {
                stored = combined_replay(&replays, derive_seed(seed, "reh"))?;
                Some(Rehearsal {
                    previous: &prev.network,
                    source: RehearsalSource::Stored(&stored),
                })
            }
            (Some(prev), _) => Some(Rehearsal {
                previous: &prev.network,
                source: RehearsalSource::Generated(
                    out.gans
                        .last()
                        .ok_or_else(|| Error::invalid("no generator for earlier tasks"))?,
                ),
            }),
        };
        let mut rows = Vec::new();
        let mut hook = |w: &LtmWindow, net: &QNetwork| -> Result<()> {
            rows.extend(eval_rows(config, seed, &phase, w.step, net, Some(w))?);
            Ok(())
        };
        let ltm = train_ltm(
            task_index,
            &stm.network,
            &stm.replay,
            rehearsal,
            &config.ltm,
            derive_seed(seed, &phase),
            &mut hook,
        )
        .map_err(|e| e.in_phase(phase.clone(), seed))?;
        out.rows.extend(rows);
        if let Some(s) = sink {
            s.put(&phase, &ltm.to_checkpoint())?;
        }

        let last = task_index == config.tasks.len();
        if let Some(mode) = config.method.gan_mode() {
            if !last || config.final_gan {
                let phase = format!("gan_{task_id}");
                let frozen = (mode == GanMode::Grim).then_some(&ltm.network);
                let gan = train_task_gan(
                    config,
                    mode,
                    task_index,
                    &stm.replay,
                    out.gans.last(),
                    frozen,
                    derive_seed(seed, &phase),
                )
                .map_err(|e| e.in_phase(phase.clone(), seed))?;
                if let Some(s) = sink {
                    s.put(&phase, &gan.to_checkpoint())?;
                }
                out.gans.push(gan);
            }
        }
        out.stms.push(stm.network);
        out.ltms.push(ltm);
        replays.push(stm.replay);
    }
    Ok(out)
}

/// Teaches a freshly initialised network one task using only generated
/// states labelled by `teacher`, with targets normalised by `stats` when set.
#[allow(clippy::too_many_arguments)]
pub fn scratch_relearn(
    config: &ExperimentConfig,
    task: TaskId,
    teacher: &QNetwork,
    stats: Option<&NormStats>,
    generator: &GanBundle,
    phase: &str,
    seed: u64,
) -> Result<(LtmOutcome, Vec<MetricsRow>)> {
    if generator.state_dim() != teacher.input_dim() {
        return Err(Error::Shape(format!(
            "generator emits {} values, teacher takes {}",
            generator.state_dim(),
            teacher.input_dim()
        )));
    }
    let student = QNetwork::new(
        teacher.input_dim(),
        &config.scratch.hidden,
        crate::short_term::QFunction::action_count(teacher),
        &mut stream(seed, "scratch-init"),
    )?;
    let spec = task_spec(config, task);
    let mut rows = Vec::new();
    let mut hook = |w: &LtmWindow, net: &QNetwork| -> Result<()> {
        let score = evaluate(
            net,
            std::slice::from_ref(&spec),
            config.eval_episodes,
            config.eval_epsilon,
            derive_seed(seed, "eval"),
        )?
        .remove(0);
        rows.push(MetricsRow {
            seed,
            phase: phase.to_string(),
            step: w.step,
            task,
            mean_reward: score.mean,
            std_reward: score.std,
            loss_distill: Some(w.loss_distill),
            loss_pr: None,
        });
        Ok(())
    };
    let out = distill(
        student,
        teacher,
        RehearsalSource::Generated(generator),
        stats,
        &config.scratch,
        derive_seed(seed, phase),
        &mut hook,
    )
    .map_err(|e| e.in_phase(phase.to_string(), seed))?;
    Ok((out, rows))
}

/// Normalisation statistics of `teacher` on `replay`, or `None` when
/// normalisation is off.
pub fn teacher_stats(
    config: &ExperimentConfig,
    teacher: &QNetwork,
    replay: &ReplayBuffer,
    seed: u64,
) -> Result<Option<NormStats>> {
    if !config.normalize {
        return Ok(None);
    }
    Ok(Some(estimate_norm_stats(
        teacher,
        replay,
        config.scratch.norm_batches,
        config.scratch.batch_size,
        &mut stream(seed, "scratch-norm"),
    )?))
}

/// The three generators compared when relearning a task from scratch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScratchArm {
    /// Activations from the same network that labels the states.
    Match,
    /// Activations from an independently trained network.
    Mismatch,
    /// States only.
    Repr,
}

impl ScratchArm {
    pub const ALL: [ScratchArm; 3] = [ScratchArm::Match, ScratchArm::Mismatch, ScratchArm::Repr];

    pub fn as_str(self) -> &'static str {
        match self {
            ScratchArm::Match => "match",
            ScratchArm::Mismatch => "mismatch",
            ScratchArm::Repr => "repr",
        }
    }
}

/// Final scores of every arm for one seed, plus all evaluation rows.
#[derive(Clone, Debug)]
pub struct ScratchOutcome {
    pub seed: u64,
    pub final_scores: Vec<(ScratchArm, f64)>,
    pub rows: Vec<MetricsRow>,
}

/// Runs the three relearning arms on the first configured task. `teacher`
/// and `other` are short-term systems trained on that task from different
/// seeds; `teacher` labels every arm's states.
pub fn scratch_experiment(
    config: &ExperimentConfig,
    seed: u64,
    teacher: &StmOutcome,
    other: &StmOutcome,
    sink: Option<&CheckpointSink>,
) -> Result<ScratchOutcome> {
    config.validate()?;
    let task = config.tasks[0];
    if teacher.network.input_dim() != other.network.input_dim() {
        return Err(Error::Shape("teachers differ in input size".into()));
    }
    let stats = teacher_stats(config, &teacher.network, &teacher.replay, seed)?;
    let mut out = ScratchOutcome {
        seed,
        final_scores: Vec::new(),
        rows: Vec::new(),
    };
    for arm in ScratchArm::ALL {
        let (mode, frozen) = match arm {
            ScratchArm::Match => (GanMode::Grim, Some(&teacher.network)),
            ScratchArm::Mismatch => (GanMode::Grim, Some(&other.network)),
            ScratchArm::Repr => (GanMode::Repr, None),
        };
        let phase = format!("scratch_{}", arm.as_str());
        // Every arm's generator sees the same real states in the same order.
        let gan = train_task_gan(
            config,
            mode,
            1,
            &teacher.replay,
            None,
            frozen,
            derive_seed(seed, "scratch-gan"),
        )
        .map_err(|e| e.in_phase(format!("gan_{}", arm.as_str()), seed))?;
        let (ltm, rows) = scratch_relearn(
            config,
            task,
            &teacher.network,
            stats.as_ref(),
            &gan,
            &phase,
            derive_seed(seed, "scratch"),
        )?;
        if let Some(s) = sink {
            s.put(&format!("gan_{phase}"), &gan.to_checkpoint())?;
            s.put(&phase, &ltm.network.to_checkpoint())?;
        }
        let last = rows
            .last()
            .map(|r| r.mean_reward)
            .ok_or_else(|| Error::invalid("no evaluation rows"))?;
        out.final_scores.push((arm, last));
        out.rows.extend(rows);
    }
    Ok(out)
}
