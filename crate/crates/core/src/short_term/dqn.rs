use rand::Rng;

use super::qnet::{QFunction, QNetwork};
use super::replay::{ReplayBuffer, Transition};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::harness::evaluate::{evaluate, select_best_checkpoint, Criterion, TaskScore};
use crate::nn::{clip_global_norm, BoundMlp, Optimizer, Sgd};
use crate::rng::{derive_seed, stream};
use crate::toyworld::{self, TaskSpec};

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("discount {gamma} outside [0, 1)")));
    }
    Ok(())
}

/// `r` for terminal transitions, `r + gamma * max_a Q(s_next, a)` otherwise.
pub fn td_target(
    r: f64,
    s_next: &[f64],
    terminal: bool,
    gamma: f64,
    target: &dyn QFunction,
) -> Result<f64> {
    check_gamma(gamma)?;
    if terminal {
        return Ok(r);
    }
    let q = target.q_values(s_next)?;
    Ok(r + gamma * max_of(&q))
}

fn max_of(q: &[f64]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Targets for a whole batch with one forward pass of the target network.
pub fn td_targets(batch: &[&Transition], gamma: f64, target: &QNetwork) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let next = stack(batch.iter().map(|t| t.s_next.as_slice()))?;
    let q = target.predict(&next)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.terminal {
                t.r
            } else {
                t.r + gamma * max_of(q.row(i))
            }
        })
        .collect())
}

pub(crate) fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<Tensor> {
    let rows: Vec<&[f64]> = rows.collect();
    Tensor::from_rows(&rows)
}

/// Mean squared error between the targets (held constant) and the
/// predictor's value of the action actually taken.
pub fn dqn_loss(
    g: &mut Graph,
    batch: &[&Transition],
    predictor: &QNetwork,
    bound: &BoundMlp,
    target: &QNetwork,
    gamma: f64,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let y = td_targets(batch, gamma, target)?;
    let states = stack(batch.iter().map(|t| t.s.as_slice()))?;
    let q = {
        let x = g.constant(states);
        predictor.forward(g, bound, x)?
    };
    taken_action_loss(g, q, batch.iter().map(|t| t.a), &y)
}

/// `mean_i (q[i, a_i] - y_i)^2` where only the taken action carries gradient.
pub fn taken_action_loss(
    g: &mut Graph,
    q: Var,
    actions: impl Iterator<Item = usize>,
    y: &[f64],
) -> Result<Var> {
    let (n, k) = (g.value(q).rows(), g.value(q).cols());
    let mut mask = Tensor::zeros(&[n, k]);
    for (i, a) in actions.enumerate() {
        if a >= k {
            return Err(Error::invalid(format!("action {a} with {k} outputs")));
        }
        mask.row_mut(i)[a] = 1.0;
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{} targets for {} rows", y.len(), n)));
    }
    let mask = g.constant(mask);
    let picked = g.mul(q, mask)?;
    let picked = g.sum_cols(picked)?;
    let y = g.constant(Tensor::vector(y.to_vec()));
    let diff = g.sub(picked, y)?;
    let sq = g.square(diff);
    g.mean(sq)
}

/// Greedy action with probability `1 - epsilon` (lowest index on ties),
/// otherwise uniform.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if q.is_empty() {
        return Err(Error::invalid("no action values"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..q.len()));
    }
    Ok(argmax(q))
}

pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Predictor/target pair with its optimizer.
#[derive(Clone, Debug)]
pub struct DqnLearner {
    pub predictor: QNetwork,
    pub target: QNetwork,
    pub gamma: f64,
    pub grad_clip: f64,
    optimizer: Sgd,
    updates: usize,
}

impl DqnLearner {
    pub fn new(
        predictor: QNetwork,
        gamma: f64,
        lr: f64,
        momentum: f64,
        grad_clip: f64,
    ) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            target: predictor.clone(),
            predictor,
            gamma,
            grad_clip,
            optimizer: Sgd::new(lr, momentum),
            updates: 0,
        })
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// One gradient step on `batch`; returns the loss before the step.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.predictor.bind(&mut g, true);
        let loss = dqn_loss(
            &mut g,
            batch,
            &self.predictor,
            &bound,
            &self.target,
            self.gamma,
        )?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                what: "TD loss".into(),
                step: self.updates,
            });
        }
        let grads = g.backward(loss)?;
        let mut grads = self.predictor.mlp().collect_gradients(&bound, &grads);
        clip_global_norm(&mut grads, self.grad_clip);
        self.optimizer
            .step(self.predictor.mlp_mut().parameters_mut(), &grads);
        self.updates += 1;
        Ok(value)
    }

    pub fn sync_target(&mut self) {
        self.target = self.predictor.clone();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StmConfig {
    pub frames: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub gamma: f64,
    pub grad_clip: f64,
    pub sync_interval: usize,
    pub train_every: usize,
    pub learning_starts: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of `frames` over which exploration anneals.
    pub eps_fraction: f64,
    pub replay_capacity: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_epsilon: f64,
}

impl Default for StmConfig {
    fn default() -> Self {
        Self {
            frames: 100_000,
            hidden: super::qnet::DEFAULT_HIDDEN.to_vec(),
            batch_size: 32,
            lr: 4e-3,
            momentum: 0.9,
            gamma: 0.99,
            grad_clip: 10.0,
            sync_interval: 1_000,
            train_every: 2,
            learning_starts: 1_000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.1,
            replay_capacity: 20_000,
            eval_interval: 5_000,
            eval_episodes: 30,
            eval_epsilon: 0.05,
        }
    }
}

impl StmConfig {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        let positive = [
            ("frames", self.frames),
            ("batch_size", self.batch_size),
            ("sync_interval", self.sync_interval),
            ("train_every", self.train_every),
            ("replay_capacity", self.replay_capacity),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!(
                    "short_term.{name} must be positive"
                )));
            }
        }
        for (name, v) in [
            ("eps_start", self.eps_start),
            ("eps_end", self.eps_end),
            ("eval_epsilon", self.eval_epsilon),
            ("eps_fraction", self.eps_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "short_term.{name} must be in [0, 1]"
                )));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("short_term.lr must be positive"));
        }
        Ok(())
    }

    /// Linearly annealed exploration rate at `frame` (0-based).
    pub fn epsilon_at(&self, frame: usize) -> f64 {
        let horizon = self.eps_fraction * self.frames as f64;
        if horizon <= 0.0 || frame as f64 >= horizon {
            return self.eps_end;
        }
        let t = frame as f64 / horizon;
        self.eps_start + t * (self.eps_end - self.eps_start)
    }
}

#[derive(Clone, Debug)]
pub struct StmEval {
    pub frame: usize,
    pub score: TaskScore,
    pub mean_loss: f64,
}

#[derive(Clone, Debug)]
pub struct StmOutcome {
    /// Best checkpoint by mean evaluation reward.
    pub network: QNetwork,
    pub best_index: usize,
    pub replay: ReplayBuffer,
    pub history: Vec<StmEval>,
}

/// Deep Q-learning on one task. Returns the best evaluated checkpoint and the
/// replay buffer as it stands at the end of training.
pub fn train_stm(task: &TaskSpec, config: &StmConfig, seed: u64) -> Result<StmOutcome> {
    config.validate()?;
    let mut init_rng = stream(seed, "stm-init");
    let mut act_rng = stream(seed, "stm-act");
    let net = QNetwork::new(
        task.observation_len(),
        &config.hidden,
        task.action_count,
        &mut init_rng,
    )?;
    let mut learner = DqnLearner::new(
        net,
        config.gamma,
        config.lr,
        config.momentum,
        config.grad_clip,
    )?;
    let mut replay = ReplayBuffer::new(config.replay_capacity, derive_seed(seed, "stm-replay"))?;
    let eval_seed = derive_seed(seed, "stm-eval");

    let mut episode: u64 = 0;
    let episode_seed = |k: u64| derive_seed(seed, &format!("stm-episode-{k}"));
    let (mut state, mut obs) = toyworld::reset(task, episode_seed(episode))?;

    let mut history = Vec::new();
    let mut snapshots = Vec::new();
    let mut window_loss = 0.0;
    let mut window_updates = 0usize;

    for frame in 0..config.frames {
        let eps = config.epsilon_at(frame);
        let q = learner.predictor.q_values(&obs)?;
        let action = select_action(&q, eps, &mut act_rng)?;
        let out = toyworld::step(task, &state, action)?;
        replay.push(Transition {
            s: obs,
            a: action,
            r: out.reward,
            s_next: out.observation.clone(),
            terminal: out.terminal,
        });
        if out.terminal {
            episode += 1;
            (state, obs) = toyworld::reset(task, episode_seed(episode))?;
        } else {
            state = out.state;
            obs = out.observation;
        }

        let done = frame + 1;
        if done >= config.learning_starts && done % config.train_every == 0 {
            let batch: Vec<Transition> = replay
                .sample(config.batch_size)?
                .into_iter()
                .cloned()
                .collect();
            let refs: Vec<&Transition> = batch.iter().collect();
            let loss = learner.update(&refs).map_err(|e| match e {
                Error::Diverged { what, .. } => Error::Diverged { what, step: done },
                other => other,
            })?;
            window_loss += loss;
            window_updates += 1;
        }
        if done % config.sync_interval == 0 {
            learner.sync_target();
        }
        if done % config.eval_interval == 0 || done == config.frames {
            let score = evaluate(
                &learner.predictor,
                std::slice::from_ref(task),
                config.eval_episodes,
                config.eval_epsilon,
                eval_seed,
            )?
            .remove(0);
            history.push(StmEval {
                frame: done,
                score,
                mean_loss: if window_updates > 0 {
                    window_loss / window_updates as f64
                } else {
                    f64::NAN
                },
            });
            snapshots.push(learner.predictor.clone());
            window_loss = 0.0;
            window_updates = 0;
        }
    }

    let rewards: Vec<f64> = history.iter().map(|h| h.score.mean).collect();
    let best_index = select_best_checkpoint(&rewards, Criterion::MaxReward)?;
    Ok(StmOutcome {
        network: snapshots.swap_remove(best_index),
        best_index,
        replay,
        history,
    })
}
