//! Long-term network that accumulates tasks: it distils each new task from
//! the short-term network while rehearsing earlier tasks on pseudo-states
//! labelled by its own previous version.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::generative::GanBundle;
use crate::harness::evaluate::{select_best_checkpoint, Criterion};
use crate::nn::{clip_global_norm, Optimizer, Sgd};
use crate::rng::stream;
use crate::short_term::{QFunction, QNetwork, ReplayBuffer};

pub const SIGMA_FLOOR: f64 = 1e-6;
pub const DEFAULT_NORM_BATCHES: usize = 1000;

/// Scalar mean and standard deviation of a teacher's Q-values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mu: f64,
    pub sigma: f64,
    pub n_batches_used: usize,
}

impl NormStats {
    /// Pooled moments of `values`, with sigma clamped to [`SIGMA_FLOOR`].
    pub fn from_values(values: &[f64], n_batches_used: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("no values to normalise"));
        }
        let n = values.len() as f64;
        let mu = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        Ok(Self {
            mu,
            sigma: var.sqrt().max(SIGMA_FLOOR),
            n_batches_used,
        })
    }

    pub fn record(&self, c: &mut Checkpoint, prefix: &str) {
        // Hex bit patterns keep the round trip exact.
        c.set_meta(
            format!("{prefix}mu_bits"),
            format!("{:016x}", self.mu.to_bits()),
        );
        c.set_meta(
            format!("{prefix}sigma_bits"),
            format!("{:016x}", self.sigma.to_bits()),
        );
        c.set_meta(format!("{prefix}batches"), self.n_batches_used);
    }

    pub fn recall(c: &Checkpoint, prefix: &str) -> Result<Option<Self>> {
        let Some(mu) = c.meta(&format!("{prefix}mu_bits")) else {
            return Ok(None);
        };
        let bits = |s: &str| {
            u64::from_str_radix(s, 16)
                .map(f64::from_bits)
                .map_err(|_| Error::Checkpoint(format!("bad float bits {s:?}")))
        };
        let sigma = c
            .meta(&format!("{prefix}sigma_bits"))
            .ok_or_else(|| Error::Checkpoint("sigma missing".into()))?;
        Ok(Some(Self {
            mu: bits(mu)?,
            sigma: bits(sigma)?,
            n_batches_used: c.require_meta(&format!("{prefix}batches"))?,
        }))
    }
}

/// Pools the teacher's Q-values over `n_batches` replay batches.
pub fn estimate_norm_stats<R: Rng + ?Sized>(
    teacher: &QNetwork,
    replay: &ReplayBuffer,
    n_batches: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<NormStats> {
    if n_batches == 0 || batch_size == 0 {
        return Err(Error::invalid("normalisation needs at least one state"));
    }
    let mut values = Vec::with_capacity(n_batches * batch_size * teacher.action_count());
    for _ in 0..n_batches {
        let states = replay.sample_states_with(batch_size, rng)?;
        values.extend_from_slice(teacher.predict(&states)?.data());
    }
    NormStats::from_values(&values, n_batches)
}

pub fn normalize_q(q: &[f64], stats: &NormStats) -> Vec<f64> {
    q.iter().map(|v| (v - stats.mu) / stats.sigma).collect()
}

fn normalize_tensor(q: Tensor, stats: Option<&NormStats>) -> Tensor {
    match stats {
        Some(s) => q.map(|v| (v - s.mu) / s.sigma),
        None => q,
    }
}

/// Generated states with the Q-vectors a frozen network assigns them.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoItems {
    pub states: Tensor,
    pub targets: Tensor,
}

impl PseudoItems {
    pub fn label(states: Tensor, teacher: &QNetwork) -> Result<Self> {
        let targets = teacher.predict(&states)?;
        Ok(Self { states, targets })
    }
}

/// `(1/n) sum_rows sum_actions (pred - target)^2`, with `target` held constant.
fn summed_square_error(g: &mut Graph, pred: Var, target: Tensor) -> Result<Var> {
    if g.shape(pred) != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            g.shape(pred),
            target.shape()
        )));
    }
    let rows = target.rows();
    if rows == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let target = g.constant(target);
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff);
    let total = g.sum(sq);
    Ok(g.scale(total, 1.0 / rows as f64))
}

/// Distillation error of `student` (bound in `g`) against `teacher` on
/// `states`. Teacher outputs are normalised when `stats` is given.
pub fn distill_loss(
    g: &mut Graph,
    states: &Tensor,
    student: &QNetwork,
    bound: &crate::nn::BoundMlp,
    teacher: &QNetwork,
    stats: Option<&NormStats>,
) -> Result<Var> {
    if student.action_count() != teacher.action_count() {
        return Err(Error::Shape(format!(
            "student has {} actions, teacher {}",
            student.action_count(),
            teacher.action_count()
        )));
    }
    let target = normalize_tensor(teacher.predict(states)?, stats);
    let x = g.constant(states.clone());
    let q = student.forward(g, bound, x)?;
    summed_square_error(g, q, target)
}

/// Rehearsal error of `student` against stored pseudo-item targets.
pub fn pr_loss(
    g: &mut Graph,
    items: &PseudoItems,
    student: &QNetwork,
    bound: &crate::nn::BoundMlp,
) -> Result<Var> {
    let x = g.constant(items.states.clone());
    let q = student.forward(g, bound, x)?;
    summed_square_error(g, q, items.targets.clone())
}

/// `alpha * distill + (1 - alpha) * pr`.
pub fn ltm_loss(g: &mut Graph, distill: Var, pr: Var, alpha: f64) -> Result<Var> {
    check_alpha(alpha)?;
    let a = g.scale(distill, alpha);
    let b = g.scale(pr, 1.0 - alpha);
    g.add(a, b)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Where rehearsal states for earlier tasks come from.
#[derive(Clone, Copy, Debug)]
pub enum RehearsalSource<'a> {
    /// States sampled from a trained generator.
    Generated(&'a GanBundle),
    /// Real states kept from earlier tasks.
    Stored(&'a ReplayBuffer),
}

impl RehearsalSource<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        match self {
            RehearsalSource::Generated(gan) => gan.sample(n, rng),
            RehearsalSource::Stored(replay) => replay.sample_states_with(n, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LtmConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub normalize: bool,
    pub lr: f64,
    pub momentum: f64,
    pub grad_clip: f64,
    pub norm_batches: usize,
    /// Steps per checkpoint window; the window's mean loss scores its checkpoint.
    pub window: usize,
    pub hidden: Vec<usize>,
}

impl Default for LtmConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            batch_size: 32,
            alpha: 0.5,
            normalize: true,
            lr: 1e-3,
            momentum: 0.9,
            grad_clip: 10.0,
            norm_batches: DEFAULT_NORM_BATCHES,
            window: 2_500,
            hidden: crate::short_term::DEFAULT_HIDDEN.to_vec(),
        }
    }
}

impl LtmConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        for (name, v) in [
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("norm_batches", self.norm_batches),
            ("window", self.window),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("long_term.{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("long_term.lr must be positive"));
        }
        Ok(())
    }
}

/// Mean losses over one checkpoint window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LtmWindow {
    pub step: usize,
    pub loss: f64,
    pub loss_distill: f64,
    /// `None` when the window had no rehearsal term.
    pub loss_pr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LtmOutcome {
    /// Checkpoint of the window with the lowest mean loss.
    pub network: QNetwork,
    pub best_index: usize,
    pub history: Vec<LtmWindow>,
    pub norm_stats: Option<NormStats>,
}

impl LtmOutcome {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = self.network.to_checkpoint();
        if let Some(s) = &self.norm_stats {
            s.record(&mut c, "norm_");
        }
        c
    }
}

/// Previous long-term network plus the states to rehearse it on.
#[derive(Clone, Copy, Debug)]
pub struct Rehearsal<'a> {
    pub previous: &'a QNetwork,
    pub source: RehearsalSource<'a>,
}

/// Called at every window end with the current (not necessarily best) network.
pub type WindowHook<'a> = dyn FnMut(&LtmWindow, &QNetwork) -> Result<()> + 'a;

/// Teaches task `task_index` (1-based) to the long-term network.
///
/// Task 1 is a copy of `stm` when normalisation is off and pure distillation
/// into a fresh network when it is on. Later tasks start from
/// `rehearsal.previous` and mix distillation with rehearsal.
pub fn train_ltm(
    task_index: usize,
    stm: &QNetwork,
    replay: &ReplayBuffer,
    rehearsal: Option<Rehearsal<'_>>,
    config: &LtmConfig,
    seed: u64,
    hook: &mut WindowHook<'_>,
) -> Result<LtmOutcome> {
    config.validate()?;
    if task_index == 0 {
        return Err(Error::invalid("task index is 1-based"));
    }
    if task_index >= 2 && rehearsal.is_none() {
        return Err(Error::invalid(format!(
            "task {task_index} needs the previous long-term network and a rehearsal source"
        )));
    }
    let stats = if config.normalize {
        let mut rng = stream(seed, "ltm-norm");
        Some(estimate_norm_stats(
            stm,
            replay,
            config.norm_batches,
            config.batch_size,
            &mut rng,
        )?)
    } else {
        None
    };

    if task_index == 1 && !config.normalize {
        let window = LtmWindow {
            step: 0,
            loss: 0.0,
            loss_distill: 0.0,
            loss_pr: None,
        };
        hook(&window, stm)?;
        return Ok(LtmOutcome {
            network: stm.clone(),
            best_index: 0,
            history: vec![window],
            norm_stats: None,
        });
    }

    let (student, rehearsal) = match (task_index, rehearsal) {
        (1, _) => {
            let mut rng = stream(seed, "ltm-init");
            let net = QNetwork::new(
                stm.input_dim(),
                &config.hidden,
                stm.action_count(),
                &mut rng,
            )?;
            (net, None)
        }
        (_, Some(r)) => (r.previous.clone(), Some(r)),
        (_, None) => unreachable!("checked above"),
    };
    let (network, best_index, history) = fit(
        student,
        stm,
        RehearsalSource::Stored(replay),
        stats.as_ref(),
        rehearsal,
        config,
        seed,
        hook,
    )?;
    Ok(LtmOutcome {
        network,
        best_index,
        history,
        norm_stats: stats,
    })
}

/// Pure distillation of `teacher` into `student` on states from `states`;
/// the `alpha = 1` case of [`train_ltm`] without any rehearsal.
pub fn distill(
    student: QNetwork,
    teacher: &QNetwork,
    states: RehearsalSource<'_>,
    stats: Option<&NormStats>,
    config: &LtmConfig,
    seed: u64,
    hook: &mut WindowHook<'_>,
) -> Result<LtmOutcome> {
    config.validate()?;
    let (network, best_index, history) =
        fit(student, teacher, states, stats, None, config, seed, hook)?;
    Ok(LtmOutcome {
        network,
        best_index,
        history,
        norm_stats: stats.copied(),
    })
}

#[allow(clippy::too_many_arguments)]
fn fit(
    mut student: QNetwork,
    teacher: &QNetwork,
    source: RehearsalSource<'_>,
    stats: Option<&NormStats>,
    rehearsal: Option<Rehearsal<'_>>,
    config: &LtmConfig,
    seed: u64,
    hook: &mut WindowHook<'_>,
) -> Result<(QNetwork, usize, Vec<LtmWindow>)> {
    if student.input_dim() != teacher.input_dim()
        || student.action_count() != teacher.action_count()
    {
        return Err(Error::Shape("student and teacher differ in shape".into()));
    }
    // Rehearsal is skipped outright when it carries no weight, so alpha = 1
    // reproduces plain distillation exactly.
    let rehearsal = rehearsal.filter(|_| config.alpha < 1.0);
    let mut state_rng = stream(seed, "ltm-states");
    let mut pseudo_rng = stream(seed, "ltm-pseudo");
    let mut opt = Sgd::new(config.lr, config.momentum);
    let n = config.batch_size;

    let mut history = Vec::new();
    let mut snapshots = Vec::new();
    let (mut sum_loss, mut sum_d, mut sum_pr, mut count) = (0.0, 0.0, 0.0, 0usize);

    for step in 1..=config.steps {
        let states = source.sample(n, &mut state_rng)?;
        let mut g = Graph::new();
        let bound = student.bind(&mut g, true);
        let ld = distill_loss(&mut g, &states, &student, &bound, teacher, stats)?;
        let (loss, lpr) = match &rehearsal {
            Some(r) => {
                let pseudo = r.source.sample(n, &mut pseudo_rng)?;
                let items = PseudoItems::label(pseudo, r.previous)?;
                let lpr = pr_loss(&mut g, &items, &student, &bound)?;
                (ltm_loss(&mut g, ld, lpr, config.alpha)?, Some(lpr))
            }
            None => (ld, None),
        };
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                what: "long-term loss".into(),
                step,
            });
        }
        sum_loss += value;
        sum_d += g.value(ld).item();
        if let Some(v) = lpr {
            sum_pr += g.value(v).item();
        }
        count += 1;

        let grads = g.backward(loss)?;
        let mut grads = student.mlp().collect_gradients(&bound, &grads);
        clip_global_norm(&mut grads, config.grad_clip);
        opt.step(student.mlp_mut().parameters_mut(), &grads);

        if step % config.window == 0 || step == config.steps {
            let c = count as f64;
            let window = LtmWindow {
                step,
                loss: sum_loss / c,
                loss_distill: sum_d / c,
                loss_pr: rehearsal.as_ref().map(|_| sum_pr / c),
            };
            hook(&window, &student)?;
            history.push(window);
            snapshots.push(student.clone());
            (sum_loss, sum_d, sum_pr, count) = (0.0, 0.0, 0.0, 0);
        }
    }
    let losses: Vec<f64> = history.iter().map(|w| w.loss).collect();
    let best = select_best_checkpoint(&losses, Criterion::MinLoss)?;
    Ok((snapshots.swap_remove(best), best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::BoundMlp;
    use crate::rng::seeded;
    use crate::short_term::Transition;

    fn no_hook() -> impl FnMut(&LtmWindow, &QNetwork) -> Result<()> {
        |_, _| Ok(())
    }

    fn replay_of(states: &[Vec<f64>]) -> ReplayBuffer {
        let mut r = ReplayBuffer::new(states.len(), 0).unwrap();
        for s in states {
            r.push(Transition {
                s: s.clone(),
                a: 0,
                r: 0.0,
                s_next: s.clone(),
                terminal: true,
            });
        }
        r
    }

    fn random_replay(n: usize, dim: usize, seed: u64) -> ReplayBuffer {
        let mut rng = seeded(seed);
        let states: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        replay_of(&states)
    }

    fn net(seed: u64) -> QNetwork {
        QNetwork::new(3, &[6, 5], 2, &mut seeded(seed)).unwrap()
    }

    fn bound(g: &mut Graph, n: &QNetwork) -> BoundMlp {
        n.bind(g, true)
    }

    #[test]
    fn stats_of_constant_teacher_hit_the_floor() {
        let s = NormStats::from_values(&[5.0; 12], 1).unwrap();
        assert_eq!((s.mu, s.sigma), (5.0, SIGMA_FLOOR));
        let s = NormStats::from_values(&[0.0, 2.0, 4.0, 6.0], 1).unwrap();
        assert_eq!(s.mu, 3.0);
        assert!((s.sigma - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn normalisation_basics() {
        let s = NormStats {
            mu: 2.0,
            sigma: 1.0,
            n_batches_used: 1,
        };
        assert_eq!(normalize_q(&[2.0, 2.0, 2.0], &s), vec![0.0; 3]);
    }

    #[test]
    fn stats_round_trip_through_checkpoint() {
        let s = NormStats {
            mu: 0.1 + 0.2,
            sigma: 1.0 / 3.0,
            n_batches_used: 1000,
        };
        let mut c = Checkpoint::new("x");
        s.record(&mut c, "norm_");
        assert_eq!(NormStats::recall(&c, "norm_").unwrap(), Some(s));
        assert_eq!(
            NormStats::recall(&Checkpoint::new("x"), "norm_").unwrap(),
            None
        );
    }

    #[test]
    fn distill_loss_fixtures() {
        let student = net(0);
        let mut g = Graph::new();
        let b = bound(&mut g, &student);
        let states = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.5, 0.0, 0.9]).unwrap();
        let l = distill_loss(&mut g, &states, &student, &b, &student, None).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let other = QNetwork::new(3, &[4], 3, &mut seeded(0)).unwrap();
        assert!(distill_loss(&mut g, &states, &student, &b, &other, None).is_err());
    }

    #[test]
    fn pr_loss_fixture() {
        // Zero network: outputs [0, 0]; target [-1, 0] gives 1.
        let mut student = net(1);
        for p in student.mlp_mut().parameters_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let items = PseudoItems {
            states: Tensor::matrix(1, 3, vec![0.5, 0.5, 0.5]).unwrap(),
            targets: Tensor::matrix(1, 2, vec![-1.0, 0.0]).unwrap(),
        };
        let mut g = Graph::new();
        let b = bound(&mut g, &student);
        let l = pr_loss(&mut g, &items, &student, &b).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let relabelled = PseudoItems::label(items.states.clone(), &student).unwrap();
        let l = pr_loss(&mut g, &relabelled, &student, &b).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn mixing_weights() {
        let mut g = Graph::new();
        let d = g.constant(Tensor::scalar(2.0));
        let p = g.constant(Tensor::scalar(4.0));
        for (alpha, want) in [(0.5, 3.0), (1.0, 2.0), (0.0, 4.0)] {
            let l = ltm_loss(&mut g, d, p, alpha).unwrap();
            assert_eq!(g.value(l).item(), want);
        }
        assert!(ltm_loss(&mut g, d, p, 1.5).is_err());
        assert!(ltm_loss(&mut g, d, p, -0.1).is_err());
    }

    fn small_config(normalize: bool) -> LtmConfig {
        LtmConfig {
            steps: 60,
            batch_size: 8,
            normalize,
            norm_batches: 10,
            window: 20,
            hidden: vec![6, 5],
            lr: 1e-2,
            ..LtmConfig::default()
        }
    }

    #[test]
    fn first_task_without_normalisation_copies_stm() {
        let stm = net(2);
        let out = train_ltm(
            1,
            &stm,
            &random_replay(20, 3, 0),
            None,
            &small_config(false),
            0,
            &mut no_hook(),
        )
        .unwrap();
        assert_eq!(out.network, stm);
        assert!(out.norm_stats.is_none());
    }

    #[test]
    fn later_tasks_need_rehearsal() {
        let stm = net(2);
        let r = train_ltm(
            2,
            &stm,
            &random_replay(20, 3, 0),
            None,
            &small_config(true),
            0,
            &mut no_hook(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn training_is_deterministic_and_leaves_teachers_alone() {
        let stm = net(3);
        let prev = net(4);
        let old_states = random_replay(30, 3, 1);
        let replay = random_replay(30, 3, 2);
        let (c_stm, c_prev) = (stm.checksum(), prev.checksum());
        let run = || {
            let r = Rehearsal {
                previous: &prev,
                source: RehearsalSource::Stored(&old_states),
            };
            train_ltm(
                2,
                &stm,
                &replay,
                Some(r),
                &small_config(true),
                5,
                &mut no_hook(),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.network, b.network);
        assert_eq!(a.history, b.history);
        assert_eq!((stm.checksum(), prev.checksum()), (c_stm, c_prev));
        assert!(a
            .history
            .iter()
            .all(|w| w.loss_pr.is_some_and(f64::is_finite)));
    }

    #[test]
    fn best_window_is_lowest_loss() {
        let stm = net(3);
        let mut seen = Vec::new();
        let out = train_ltm(
            1,
            &stm,
            &random_replay(30, 3, 2),
            None,
            &small_config(true),
            5,
            &mut |w, n| {
                seen.push((w.loss, n.clone()));
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(seen.len(), 3);
        let best = seen
            .iter()
            .enumerate()
            .fold(0, |b, (i, s)| if s.0 < seen[b].0 { i } else { b });
        assert_eq!(out.best_index, best);
        assert_eq!(out.network, seen[best].1);
    }

    #[test]
    fn full_alpha_equals_standalone_distillation() {
        let stm = net(6);
        let prev = net(7);
        let old = random_replay(30, 3, 1);
        let replay = random_replay(30, 3, 2);
        let config = LtmConfig {
            alpha: 1.0,
            ..small_config(true)
        };
        let r = Rehearsal {
            previous: &prev,
            source: RehearsalSource::Stored(&old),
        };
        let ltm = train_ltm(2, &stm, &replay, Some(r), &config, 9, &mut no_hook()).unwrap();
        let stats = estimate_norm_stats(
            &stm,
            &replay,
            config.norm_batches,
            config.batch_size,
            &mut stream(9, "ltm-norm"),
        )
        .unwrap();
        let alone = distill(
            prev.clone(),
            &stm,
            RehearsalSource::Stored(&replay),
            Some(&stats),
            &config,
            9,
            &mut no_hook(),
        )
        .unwrap();
        assert_eq!(ltm.network.checksum(), alone.network.checksum());
        assert_eq!(ltm.history, alone.history);
    }

    #[test]
    fn checkpoint_carries_stats() {
        let stm = net(3);
        let out = train_ltm(
            1,
            &stm,
            &random_replay(30, 3, 2),
            None,
            &small_config(true),
            5,
            &mut no_hook(),
        )
        .unwrap();
        let c = out.to_checkpoint();
        let back = Checkpoint::from_parts(&c.manifest().unwrap(), &c.blob()).unwrap();
        assert_eq!(NormStats::recall(&back, "norm_").unwrap(), out.norm_stats);
        assert_eq!(QNetwork::from_checkpoint(&back).unwrap(), out.network);
    }
}
