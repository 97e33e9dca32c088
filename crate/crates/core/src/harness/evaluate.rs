use crate::error::{Error, Result};
use crate::rng::{derive_seed, splitmix, stream};
use crate::short_term::{select_action, QFunction};
use crate::toyworld::{self, EnvState, TaskId, TaskSpec};

/// Mean and population standard deviation of per-episode returns.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskScore {
    pub task: TaskId,
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

impl TaskScore {
    pub fn from_returns(task: TaskId, returns: Vec<f64>) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::invalid("no episodes"));
        }
        let (mean, std) = mean_std(&returns);
        Ok(Self {
            task,
            mean,
            std,
            returns,
        })
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Seed of the `k`-th evaluation episode. Identical across tasks and
/// policies, so every agent faces the same object sequences.
pub fn episode_seed(seed: u64, k: usize) -> u64 {
    splitmix(derive_seed(seed, "eval-episode").wrapping_add(k as u64))
}

/// Runs `episodes` epsilon-greedy episodes of `policy` on each task.
pub fn evaluate(
    policy: &dyn QFunction,
    tasks: &[TaskSpec],
    episodes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Vec<TaskScore>> {
    evaluate_with(tasks, episodes, seed, |task, _, obs, rng| {
        if policy.action_count() != task.action_count {
            return Err(Error::invalid(format!(
                "policy has {} actions, task {} has {}",
                policy.action_count(),
                task.id,
                task.action_count
            )));
        }
        select_action(&policy.q_values(obs)?, epsilon, rng)
    })
}

/// Evaluation for an arbitrary state-aware policy, e.g. a scripted one.
pub fn evaluate_with<F>(
    tasks: &[TaskSpec],
    episodes: usize,
    seed: u64,
    mut policy: F,
) -> Result<Vec<TaskScore>>
where
    F: FnMut(&TaskSpec, &EnvState, &[f64], &mut crate::rng::SeededRng) -> Result<usize>,
{
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    tasks
        .iter()
        .map(|task| {
            let mut rng = stream(seed, &format!("eval-actions-{}", task.id));
            let mut returns = Vec::with_capacity(episodes);
            for k in 0..episodes {
                let mut failure = None;
                let total =
                    toyworld::rollout(
                        task,
                        episode_seed(seed, k),
                        &mut rng,
                        |s, o, r| match policy(task, s, o, r) {
                            Ok(a) => a,
                            Err(e) => {
                                failure.get_or_insert(e);
                                usize::MAX
                            }
                        },
                    );
                if let Some(e) = failure {
                    return Err(e);
                }
                returns.push(total?);
            }
            TaskScore::from_returns(task.id, returns)
        })
        .collect()
}

/// Score of the scripted optimal policy, the per-task ceiling.
pub fn ceiling(task: &TaskSpec, episodes: usize, epsilon: f64, seed: u64) -> Result<TaskScore> {
    use rand::Rng;
    let mut out = evaluate_with(
        std::slice::from_ref(task),
        episodes,
        seed,
        |t, s, _, rng| {
            if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                Ok(rng.gen_range(0..t.action_count))
            } else {
                Ok(toyworld::optimal_action(t, s.current()))
            }
        },
    )?;
    Ok(out.remove(0))
}

/// Score of the uniformly random policy.
pub fn random_baseline(task: &TaskSpec, episodes: usize, seed: u64) -> Result<TaskScore> {
    use rand::Rng;
    let mut out = evaluate_with(
        std::slice::from_ref(task),
        episodes,
        seed,
        |t, _, _, rng| Ok(rng.gen_range(0..t.action_count)),
    )?;
    Ok(out.remove(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    MaxReward,
    MinLoss,
}

/// Index of the best entry; the earliest wins ties and NaN never wins.
pub fn select_best_checkpoint(values: &[f64], criterion: Criterion) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => match criterion {
                Criterion::MaxReward => v > values[b],
                Criterion::MinLoss => v < values[b],
            },
        };
        if better {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::invalid("no finite checkpoint score"))
}
