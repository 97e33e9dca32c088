//! Wasserstein GAN with gradient penalty that learns to produce pseudo-states
//! of earlier tasks. In `Grim` mode a second critic also judges the hidden
//! activations those states induce in a frozen Q-network.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{input_gradient_norm, Graph, PenaltyMode, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, BoundMlp, Mlp, Optimizer};
use crate::rng::stream;
use crate::short_term::qnet::{mlp_from_checkpoint, push_mlp};
use crate::short_term::{QNetwork, ReplayBuffer};

pub const DEFAULT_LATENT_DIM: usize = 32;
pub const DEFAULT_LAMBDA: f64 = 10.0;
pub const DEFAULT_EPS_DRIFT: f64 = 1e-6;
pub const DEFAULT_BETA: f64 = 1000.0;
pub const DEFAULT_ACTIVATION_LAYER: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanMode {
    /// Generator matches the state distribution only.
    Repr,
    /// Generator additionally matches the distribution of hidden activations.
    Grim,
}

impl GanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GanMode::Repr => "repr",
            GanMode::Grim => "grim",
        }
    }
}

impl fmt::Display for GanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repr" => Ok(GanMode::Repr),
            "grim" => Ok(GanMode::Grim),
            _ => Err(Error::invalid(format!("unknown generator mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub gen_output: Activation,
    pub disc_hidden: Vec<usize>,
    pub disc2_hidden: Vec<usize>,
    /// Generator learning rate.
    pub lr: f64,
    /// Learning rate of both critics.
    pub disc_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub eps_drift: f64,
    pub beta: f64,
    pub activation_layer: usize,
    pub penalty: PenaltyMode,
    pub log_interval: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 64,
            latent_dim: DEFAULT_LATENT_DIM,
            gen_hidden: vec![128, 128],
            gen_output: Activation::Tanh,
            disc_hidden: vec![128, 64],
            disc2_hidden: vec![64, 32],
            lr: 1e-4,
            disc_lr: 4e-4,
            beta1: 0.0,
            beta2: 0.9,
            lambda: DEFAULT_LAMBDA,
            eps_drift: DEFAULT_EPS_DRIFT,
            beta: DEFAULT_BETA,
            activation_layer: DEFAULT_ACTIVATION_LAYER,
            penalty: PenaltyMode::Exact,
            log_interval: 500,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("steps", self.steps),
            ("batch_size", self.batch_size),
            ("latent_dim", self.latent_dim),
            ("log_interval", self.log_interval),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!(
                    "generative.{name} must be positive"
                )));
            }
        }
        if !(self.lr > 0.0 && self.disc_lr > 0.0) {
            return Err(Error::invalid("generative learning rates must be positive"));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("eps_drift", self.eps_drift),
            ("beta", self.beta),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("generative.{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Generator plus the critics it was trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct GanBundle {
    pub mode: GanMode,
    pub latent_dim: usize,
    pub activation_layer: usize,
    pub generator: Mlp,
    pub disc1: Mlp,
    pub disc2: Option<Mlp>,
}

/// Latent draws uniform on `[-1, 1)^dim`, one row per sample.
pub fn sample_latent<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Tensor {
    let data = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![n, dim], data).expect("latent shape")
}

impl GanBundle {
    pub fn state_dim(&self) -> usize {
        self.generator.output_dim()
    }

    /// `n` generated states as a `[n, state_dim]` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        let z = sample_latent(n, self.latent_dim, rng);
        self.generator.predict(&z)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new("gan");
        c.set_meta("mode", self.mode);
        c.set_meta("latent_dim", self.latent_dim);
        c.set_meta("activation_layer", self.activation_layer);
        c.set_meta("has_disc2", self.disc2.is_some());
        push_mlp(&mut c, &self.generator, "gen", "gen_");
        push_mlp(&mut c, &self.disc1, "d1_", "d1_");
        if let Some(d2) = &self.disc2 {
            push_mlp(&mut c, d2, "d2_", "d2_");
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.kind != "gan" {
            return Err(Error::Checkpoint(format!("expected gan, found {}", c.kind)));
        }
        let mode: GanMode = c
            .meta("mode")
            .ok_or_else(|| Error::Checkpoint("missing mode".into()))?
            .parse()
            .map_err(|e: Error| Error::Checkpoint(e.to_string()))?;
        let has_disc2: bool = c.require_meta("has_disc2")?;
        let bundle = Self {
            mode,
            latent_dim: c.require_meta("latent_dim")?,
            activation_layer: c.require_meta("activation_layer")?,
            generator: mlp_from_checkpoint(c, "gen", "gen_")?,
            disc1: mlp_from_checkpoint(c, "d1_", "d1_")?,
            disc2: if has_disc2 {
                Some(mlp_from_checkpoint(c, "d2_", "d2_")?)
            } else {
                None
            },
        };
        if bundle.generator.input_dim() != bundle.latent_dim {
            return Err(Error::Checkpoint(
                "generator input differs from latent_dim".into(),
            ));
        }
        if (mode == GanMode::Grim) != has_disc2 {
            return Err(Error::Checkpoint(format!(
                "{mode} bundle with has_disc2={has_disc2}"
            )));
        }
        Ok(bundle)
    }
}

/// Penalty and drift weights of the critic objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticWeights {
    pub lambda: f64,
    pub eps_drift: f64,
    pub penalty: PenaltyMode,
}

/// Batch mean of
/// `D(fake) - D(real) + lambda (||grad D(x_hat)|| - 1)^2 + eps (D(real)^2 + D(fake)^2)`
/// where row `r` of `x_hat` is `mix[r] * real + (1 - mix[r]) * fake`.
/// `rng` is only used by the random-direction penalty.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    critic: &Mlp,
    bound: &BoundMlp,
    real: Var,
    fake: Var,
    mix: &[f64],
    weights: CriticWeights,
    rng: &mut R,
) -> Result<Var> {
    let (real_v, fake_v) = (g.value(real).clone(), g.value(fake).clone());
    if real_v.shape() != fake_v.shape() || real_v.rank() != 2 {
        return Err(Error::Shape(format!(
            "real {:?} and fake {:?} must be equal [rows, dim]",
            real_v.shape(),
            fake_v.shape()
        )));
    }
    if mix.len() != real_v.rows() {
        return Err(Error::Shape(format!(
            "{} mix weights for {} rows",
            mix.len(),
            real_v.rows()
        )));
    }
    if let Some(m) = mix.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::invalid(format!("mix weight {m} outside [0, 1]")));
    }
    let d_real = critic.forward(g, bound, real)?;
    let d_fake = critic.forward(g, bound, fake)?;

    let mut x_hat = real_v;
    for (r, &t) in mix.iter().enumerate() {
        for (x, f) in x_hat.row_mut(r).iter_mut().zip(fake_v.row(r)) {
            *x = t * *x + (1.0 - t) * f;
        }
    }
    let x_hat = g.constant(x_hat);
    let norms = input_gradient_norm(
        g,
        |g: &mut Graph, x: Var| critic.forward(g, bound, x),
        x_hat,
        weights.penalty,
        rng,
    )?;
    let gap = g.add_scalar(norms, -1.0);
    let gap2 = g.square(gap);
    let penalty = g.mean(gap2)?;

    let mean_fake = g.mean(d_fake)?;
    let mean_real = g.mean(d_real)?;
    let wasserstein = g.sub(mean_fake, mean_real)?;
    let real2 = g.square(d_real);
    let fake2 = g.square(d_fake);
    let drift = {
        let a = g.mean(real2)?;
        let b = g.mean(fake2)?;
        g.add(a, b)?
    };
    let penalty = g.scale(penalty, weights.lambda);
    let drift = g.scale(drift, weights.eps_drift);
    let total = g.add(wasserstein, penalty)?;
    g.add(total, drift)
}

/// `-mean D1(fake)`.
pub fn gen_loss_repr(g: &mut Graph, d1_fake: Var) -> Result<Var> {
    let m = g.mean(d1_fake)?;
    Ok(g.scale(m, -1.0))
}

/// `-mean D1(fake) - beta * mean D2(activations(fake))`.
pub fn gen_loss_grim(g: &mut Graph, d1_fake: Var, d2_fake: Var, beta: f64) -> Result<Var> {
    let states = gen_loss_repr(g, d1_fake)?;
    let m = g.mean(d2_fake)?;
    let acts = g.scale(m, -beta);
    g.add(states, acts)
}

/// Training batch for the generator of task `task_index` (1-based): a share
/// `(task_index - 1) / task_index` comes from the previous generator, the rest
/// from the current task's replay memory.
pub fn compose_gan_batch<R: Rng + ?Sized>(
    current: &ReplayBuffer,
    previous: Option<&GanBundle>,
    task_index: usize,
    n: usize,
    rng: &mut R,
) -> Result<Tensor> {
    if task_index == 0 {
        return Err(Error::invalid("task index is 1-based"));
    }
    let n_prev = n * (task_index - 1) / task_index;
    let real = current.sample_states_with(n - n_prev, rng)?;
    if n_prev == 0 {
        return Ok(real);
    }
    let prev = previous
        .ok_or_else(|| Error::invalid(format!("task {task_index} needs the previous generator")))?;
    if prev.state_dim() != real.cols() {
        return Err(Error::Shape(format!(
            "previous generator emits {} values, states have {}",
            prev.state_dim(),
            real.cols()
        )));
    }
    let old = prev.sample(n_prev, rng)?;
    let mut data = old.into_data();
    data.extend_from_slice(real.data());
    Tensor::matrix(n, real.cols(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanLog {
    pub step: usize,
    pub disc1_loss: f64,
    pub disc2_loss: f64,
    pub gen_loss: f64,
}

#[derive(Clone, Debug)]
pub struct GanOutcome {
    pub bundle: GanBundle,
    pub history: Vec<GanLog>,
    pub disc_updates: usize,
    pub gen_updates: usize,
}

fn finite(v: f64, what: &str, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged {
            what: what.into(),
            step,
        })
    }
}

fn critic_net<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Result<Mlp> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    Mlp::new(
        &sizes,
        Activation::LeakyRelu(0.2),
        Activation::Identity,
        rng,
    )
}

/// One critic update on constant real/fake batches; returns the loss.
fn critic_step<R: Rng + ?Sized>(
    critic: &mut Mlp,
    opt: &mut Adam,
    real: Tensor,
    fake: Tensor,
    weights: CriticWeights,
    rng: &mut R,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = critic.bind(&mut g, true);
    let mix: Vec<f64> = (0..real.rows()).map(|_| rng.gen()).collect();
    let real = g.constant(real);
    let fake = g.constant(fake);
    let loss = critic_loss(&mut g, critic, &bound, real, fake, &mix, weights, rng)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    let grads = critic.collect_gradients(&bound, &grads);
    opt.step(critic.parameters_mut(), &grads);
    Ok(value)
}

/// Trains a generator against `real_batch`. Steps alternate strictly between
/// updating every critic and updating the generator, critics first. `Grim`
/// mode needs `frozen`, the network whose hidden activations the second
/// critic judges; it is never modified.
pub fn train_gan<F>(
    config: &GanConfig,
    mode: GanMode,
    state_dim: usize,
    mut real_batch: F,
    frozen: Option<&QNetwork>,
    seed: u64,
) -> Result<GanOutcome>
where
    F: FnMut(usize) -> Result<Tensor>,
{
    config.validate()?;
    let frozen = match (mode, frozen) {
        (GanMode::Grim, None) => {
            return Err(Error::invalid("activation matching needs a frozen network"))
        }
        (GanMode::Grim, Some(net)) => {
            net.check_layer(config.activation_layer)?;
            if net.input_dim() != state_dim {
                return Err(Error::Shape(format!(
                    "frozen network takes {} inputs, states have {state_dim}",
                    net.input_dim()
                )));
            }
            Some(net)
        }
        (GanMode::Repr, _) => None,
    };

    let mut init = stream(seed, "gan-init");
    let mut gen_sizes = vec![config.latent_dim];
    gen_sizes.extend_from_slice(&config.gen_hidden);
    gen_sizes.push(state_dim);
    let mut generator = Mlp::new(
        &gen_sizes,
        Activation::LeakyRelu(0.2),
        config.gen_output,
        &mut init,
    )?;
    let mut disc1 = critic_net(state_dim, &config.disc_hidden, &mut init)?;
    let mut disc2 = match frozen {
        Some(net) => {
            let width = net.activation_width(config.activation_layer)?;
            Some(critic_net(
                width,
                &config.disc2_hidden,
                &mut stream(seed, "gan-init-d2"),
            )?)
        }
        None => None,
    };

    let adam = |lr| Adam::new(lr, config.beta1, config.beta2);
    let (mut gen_opt, mut d1_opt, mut d2_opt) =
        (adam(config.lr), adam(config.disc_lr), adam(config.disc_lr));
    let mut latent_rng = stream(seed, "gan-latent");
    let mut d1_rng = stream(seed, "gan-critic1");
    let mut d2_rng = stream(seed, "gan-critic2");
    let weights = CriticWeights {
        lambda: config.lambda,
        eps_drift: config.eps_drift,
        penalty: config.penalty,
    };
    let n = config.batch_size;
    let mut history = Vec::new();

    let (mut disc_updates, mut gen_updates) = (0, 0);
    let (mut d1_loss, mut d2_loss) = (f64::NAN, f64::NAN);

    // Even steps update the critics, odd steps the generator.
    for step in 0..config.steps {
        if step % 2 == 0 {
            let real = real_batch(n)?;
            if real.shape() != [n, state_dim] {
                return Err(Error::Shape(format!(
                    "real batch {:?}, expected [{n}, {state_dim}]",
                    real.shape()
                )));
            }
            let z = sample_latent(n, config.latent_dim, &mut latent_rng);
            let fake = generator.predict(&z)?;
            let d2_inputs = match frozen {
                Some(net) => Some((
                    net.activations(&real, config.activation_layer)?,
                    net.activations(&fake, config.activation_layer)?,
                )),
                None => None,
            };
            d1_loss = critic_step(&mut disc1, &mut d1_opt, real, fake, weights, &mut d1_rng)?;
            finite(d1_loss, "state critic loss", step)?;
            if let (Some(d2), Some((real_act, fake_act))) = (&mut disc2, d2_inputs) {
                d2_loss = critic_step(d2, &mut d2_opt, real_act, fake_act, weights, &mut d2_rng)?;
                finite(d2_loss, "activation critic loss", step)?;
            }
            disc_updates += 1;
            continue;
        }

        let mut g = Graph::new();
        let gen_bound = generator.bind(&mut g, true);
        let z = g.constant(sample_latent(n, config.latent_dim, &mut latent_rng));
        let fake = generator.forward(&mut g, &gen_bound, z)?;
        let d1_bound = disc1.bind(&mut g, false);
        let d1_fake = disc1.forward(&mut g, &d1_bound, fake)?;
        let loss = match (frozen, &disc2) {
            (Some(net), Some(d2)) if config.beta != 0.0 => {
                let acts = net.activations_frozen(&mut g, fake, config.activation_layer)?;
                let d2_bound = d2.bind(&mut g, false);
                let d2_fake = d2.forward(&mut g, &d2_bound, acts)?;
                gen_loss_grim(&mut g, d1_fake, d2_fake, config.beta)?
            }
            _ => gen_loss_repr(&mut g, d1_fake)?,
        };
        let gen_loss = finite(g.value(loss).item(), "generator loss", step)?;
        let grads = g.backward(loss)?;
        let grads = generator.collect_gradients(&gen_bound, &grads);
        gen_opt.step(generator.parameters_mut(), &grads);
        gen_updates += 1;

        if gen_updates % config.log_interval == 0 || step + 2 >= config.steps {
            history.push(GanLog {
                step: step + 1,
                disc1_loss: d1_loss,
                disc2_loss: if disc2.is_some() { d2_loss } else { 0.0 },
                gen_loss,
            });
        }
    }
    if !generator.all_finite() {
        return Err(Error::Diverged {
            what: "generator parameters".into(),
            step: config.steps,
        });
    }
    Ok(GanOutcome {
        bundle: GanBundle {
            mode,
            latent_dim: config.latent_dim,
            activation_layer: config.activation_layer,
            generator,
            disc1,
            disc2,
        },
        history,
        disc_updates,
        gen_updates,
    })
}
