#![allow(dead_code)]

use rand::Rng;
use rehearsal::autodiff::{Graph, PenaltyMode, Primitive, Tensor, Var};
use rehearsal::generative::{
    critic_loss, gen_loss_grim, gen_loss_repr, train_gan, CriticWeights, GanConfig, GanMode,
};
use rehearsal::long_term::{distill_loss, ltm_loss, pr_loss, NormStats, PseudoItems};
use rehearsal::nn::{Activation, BoundMlp, Mlp};
use rehearsal::rng::{seeded, standard_normal};
use rehearsal::short_term::{dqn_loss, QNetwork, Transition};
use rehearsal::Result;

pub const POINTS: usize = 100;
const STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Away from zero, for inputs of `recip` and the kink of `leaky_relu`.
fn signed_magnitudes<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    random_tensor(shape, rng).map(|x| if x < 0.0 { x - 0.3 } else { x + 0.3 })
}

/// Reduces `out` to a scalar with fixed random weights so every output
/// element sends a different upstream gradient.
fn weighted_sum(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `f` with respect to each input tensor.
pub fn check_leaves(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    let grads = g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            xs[i].data_mut()[j] = x0 + STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = x0 - STEP;
            let down = eval(&xs);
            xs[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Same as [`check_leaves`] for the parameters of every network in `nets`.
pub fn check_nets(
    nets: &mut [Mlp],
    f: &dyn Fn(&[Mlp], &mut Graph, &[BoundMlp]) -> Result<Var>,
) -> f64 {
    let eval = |nets: &[Mlp]| -> f64 {
        let mut g = Graph::new();
        let bound: Vec<BoundMlp> = nets.iter().map(|n| n.bind(&mut g, false)).collect();
        let out = f(nets, &mut g, &bound).unwrap();
        g.value(out).item()
    };
    let mut g = Graph::new();
    let bound: Vec<BoundMlp> = nets.iter().map(|n| n.bind(&mut g, true)).collect();
    let out = f(nets, &mut g, &bound).unwrap();
    let grads = g.backward(out).unwrap();
    let analytic: Vec<Vec<Tensor>> = nets
        .iter()
        .zip(&bound)
        .map(|(n, b)| n.collect_gradients(b, &grads))
        .collect();
    let mut worst: f64 = 0.0;
    for k in 0..nets.len() {
        for p in 0..analytic[k].len() {
            for j in 0..analytic[k][p].len() {
                let x0 = nets[k].parameters()[p].data()[j];
                nets[k].parameters_mut()[p].data_mut()[j] = x0 + STEP;
                let up = eval(nets);
                nets[k].parameters_mut()[p].data_mut()[j] = x0 - STEP;
                let down = eval(nets);
                nets[k].parameters_mut()[p].data_mut()[j] = x0;
                let numeric = (up - down) / (2.0 * STEP);
                worst = worst.max(rel_err(analytic[k][p].data()[j], numeric));
            }
        }
    }
    worst
}

struct PrimitiveCase {
    name: &'static str,
    primitive: Primitive,
    inputs: Vec<Vec<usize>>,
    output: Vec<usize>,
    away_from_zero: bool,
}

fn primitive_cases() -> Vec<PrimitiveCase> {
    let case = |name, primitive, inputs: &[&[usize]], output: &[usize]| PrimitiveCase {
        name,
        primitive,
        inputs: inputs.iter().map(|s| s.to_vec()).collect(),
        output: output.to_vec(),
        away_from_zero: false,
    };
    let mut cases = vec![
        case(
            "affine",
            Primitive::Affine,
            &[&[3, 4], &[4, 2], &[2]],
            &[3, 2],
        ),
        case(
            "matmul",
            Primitive::MatMul {
                trans_a: false,
                trans_b: false,
            },
            &[&[3, 4], &[4, 2]],
            &[3, 2],
        ),
        case(
            "matmul_ta",
            Primitive::MatMul {
                trans_a: true,
                trans_b: false,
            },
            &[&[4, 3], &[4, 2]],
            &[3, 2],
        ),
        case(
            "matmul_tb",
            Primitive::MatMul {
                trans_a: false,
                trans_b: true,
            },
            &[&[3, 4], &[2, 4]],
            &[3, 2],
        ),
        case(
            "matmul_tab",
            Primitive::MatMul {
                trans_a: true,
                trans_b: true,
            },
            &[&[4, 3], &[2, 4]],
            &[3, 2],
        ),
        case("tanh", Primitive::Tanh, &[&[3, 4]], &[3, 4]),
        case("add", Primitive::Add, &[&[3, 4], &[3, 4]], &[3, 4]),
        case("sub", Primitive::Sub, &[&[3, 4], &[3, 4]], &[3, 4]),
        case("mul", Primitive::Mul, &[&[3, 4], &[3, 4]], &[3, 4]),
        case("scale", Primitive::Scale(-1.7), &[&[3, 4]], &[3, 4]),
        case("add_scalar", Primitive::AddScalar(0.4), &[&[3, 4]], &[3, 4]),
        case("square", Primitive::Square, &[&[3, 4]], &[3, 4]),
        case("sum", Primitive::Sum, &[&[3, 4]], &[]),
        case("mean", Primitive::Mean, &[&[3, 4]], &[]),
        case("sum_rows", Primitive::SumRows, &[&[3, 4]], &[4]),
        case("sum_cols", Primitive::SumCols, &[&[3, 4]], &[3]),
        case(
            "broadcast_scalar",
            Primitive::BroadcastScalar(vec![3, 4]),
            &[&[]],
            &[3, 4],
        ),
        case(
            "broadcast_rows",
            Primitive::BroadcastRows(3),
            &[&[4]],
            &[3, 4],
        ),
        case(
            "broadcast_cols",
            Primitive::BroadcastCols(4),
            &[&[3]],
            &[3, 4],
        ),
        case("row_norm", Primitive::RowNorm, &[&[3, 4]], &[3]),
    ];
    for (name, primitive) in [
        ("leaky_relu", Primitive::LeakyRelu { slope: 0.2 }),
        ("recip", Primitive::Recip),
    ] {
        let mut c = case(name, primitive, &[&[3, 4]], &[3, 4]);
        c.away_from_zero = true;
        cases.push(c);
    }
    cases
}

/// First- and second-order checks of every primitive at [`POINTS`] random
/// inputs: `(name, worst relative error)`.
pub fn primitive_errors(seed: u64) -> (Vec<(String, f64)>, Vec<(String, f64)>) {
    let mut rng = seeded(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for case in primitive_cases() {
        let (mut w1, mut w2) = (0.0f64, 0.0f64);
        for _ in 0..POINTS {
            let inputs: Vec<Tensor> = case
                .inputs
                .iter()
                .map(|s| {
                    if case.away_from_zero {
                        signed_magnitudes(s, &mut rng)
                    } else {
                        random_tensor(s, &mut rng)
                    }
                })
                .collect();
            let weights = random_tensor(&case.output, &mut rng);
            let p = case.primitive.clone();
            let f = |g: &mut Graph, xs: &[Var]| -> Result<Var> {
                let out = g.apply(p.clone(), xs)?;
                weighted_sum(g, out, &weights)
            };
            w1 = w1.max(check_leaves(&inputs, &f));

            // Differentiate the weighted gradient once more.
            let outer: Vec<Tensor> = inputs
                .iter()
                .map(|x| random_tensor(x.shape(), &mut rng))
                .collect();
            let f2 = |g: &mut Graph, xs: &[Var]| -> Result<Var> {
                let out = g.apply(p.clone(), xs)?;
                let s = weighted_sum(g, out, &weights)?;
                let grads = g.grad(s, xs)?;
                let mut total = None;
                for (gr, o) in grads.into_iter().zip(&outer) {
                    let sq = g.square(gr);
                    let t = weighted_sum(g, sq, o)?;
                    total = Some(match total {
                        None => t,
                        Some(prev) => g.add(prev, t)?,
                    });
                }
                Ok(total.unwrap())
            };
            w2 = w2.max(check_leaves(&inputs, &f2));
        }
        first.push((case.name.to_string(), w1));
        second.push((case.name.to_string(), w2));
    }
    (first, second)
}

fn small_q<R: Rng>(input: usize, rng: &mut R) -> QNetwork {
    QNetwork::new(input, &[5, 4], 3, rng).unwrap()
}

fn states<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Tensor {
    random_tensor(&[n, dim], rng)
}

/// Parameter-gradient checks of every training loss at [`POINTS`] random
/// points. The critic loss, which differentiates through an input gradient,
/// is reported separately.
pub fn loss_errors(seed: u64) -> (Vec<(String, f64)>, Vec<(String, f64)>) {
    let mut rng = seeded(seed);
    let dim = 4;
    let mut w = [0.0f64; 7];
    let mut critic_worst = [0.0f64; 2];
    for _ in 0..POINTS {
        // TD loss, target network fixed.
        let target = small_q(dim, &mut rng);
        let batch: Vec<Transition> = (0..5)
            .map(|i| Transition {
                s: random_tensor(&[dim], &mut rng).into_data(),
                a: rng.gen_range(0..3),
                r: rng.gen_range(-1.0..1.0),
                s_next: random_tensor(&[dim], &mut rng).into_data(),
                terminal: i == 0,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let mut nets = [small_q(dim, &mut rng).mlp().clone()];
        w[0] = w[0].max(check_nets(&mut nets, &|n, g, b| {
            let q = QNetwork::from_mlp(n[0].clone());
            dqn_loss(g, &refs, &q, &b[0], &target, 0.9)
        }));

        // Distillation with and without normalised targets.
        let teacher = small_q(dim, &mut rng);
        let x = states(6, dim, &mut rng);
        let stats = NormStats::from_values(&random_tensor(&[40], &mut rng).into_data(), 1).unwrap();
        let mut nets = [small_q(dim, &mut rng).mlp().clone()];
        w[1] = w[1].max(check_nets(&mut nets, &|n, g, b| {
            let q = QNetwork::from_mlp(n[0].clone());
            distill_loss(g, &x, &q, &b[0], &teacher, None)
        }));
        w[2] = w[2].max(check_nets(&mut nets, &|n, g, b| {
            let q = QNetwork::from_mlp(n[0].clone());
            distill_loss(g, &x, &q, &b[0], &teacher, Some(&stats))
        }));

        // Rehearsal and the mixed objective.
        let items = PseudoItems::label(states(6, dim, &mut rng), &small_q(dim, &mut rng)).unwrap();
        let alpha = rng.gen_range(0.0..1.0);
        w[3] = w[3].max(check_nets(&mut nets, &|n, g, b| {
            let q = QNetwork::from_mlp(n[0].clone());
            pr_loss(g, &items, &q, &b[0])
        }));
        w[4] = w[4].max(check_nets(&mut nets, &|n, g, b| {
            let q = QNetwork::from_mlp(n[0].clone());
            let d = distill_loss(g, &x, &q, &b[0], &teacher, Some(&stats))?;
            let p = pr_loss(g, &items, &q, &b[0])?;
            ltm_loss(g, d, p, alpha)
        }));

        // Generator objectives: generator, critic on states, critic on the
        // frozen network's activations.
        let latent = 3;
        let z = random_tensor(&[5, latent], &mut rng);
        let frozen = QNetwork::new(dim, &[6, 5], 3, &mut rng).unwrap();
        let gen = Mlp::new(
            &[latent, 6, dim],
            Activation::LeakyRelu(0.2),
            Activation::Tanh,
            &mut rng,
        )
        .unwrap();
        let d1 = Mlp::new(
            &[dim, 5, 4, 1],
            Activation::LeakyRelu(0.2),
            Activation::Identity,
            &mut rng,
        )
        .unwrap();
        let d2 = Mlp::new(
            &[5, 4, 3, 1],
            Activation::LeakyRelu(0.2),
            Activation::Identity,
            &mut rng,
        )
        .unwrap();
        let beta = rng.gen_range(0.0..3.0);
        let mut gen_only = [gen.clone()];
        w[5] = w[5].max(check_nets(&mut gen_only, &|n, g, b| {
            let zv = g.constant(z.clone());
            let fake = n[0].forward(g, &b[0], zv)?;
            let d1b = d1.bind(g, false);
            let s = d1.forward(g, &d1b, fake)?;
            gen_loss_repr(g, s)
        }));
        w[6] = w[6].max(check_nets(&mut gen_only, &|n, g, b| {
            let zv = g.constant(z.clone());
            let fake = n[0].forward(g, &b[0], zv)?;
            let d1b = d1.bind(g, false);
            let s = d1.forward(g, &d1b, fake)?;
            let act = frozen.activations_frozen(g, fake, 2)?;
            let d2b = d2.bind(g, false);
            let a = d2.forward(g, &d2b, act)?;
            gen_loss_grim(g, s, a, beta)
        }));

        let weights = CriticWeights {
            lambda: 10.0,
            eps_drift: 1e-6,
            penalty: PenaltyMode::Exact,
        };
        let real = states(5, dim, &mut rng);
        let fake = states(5, dim, &mut rng);
        let mix: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut critic = [d1.clone()];
        critic_worst[0] = critic_worst[0].max(check_nets(&mut critic, &|n, g, b| {
            let r = g.constant(real.clone());
            let f = g.constant(fake.clone());
            critic_loss(g, &n[0], &b[0], r, f, &mix, weights, &mut seeded(0))
        }));
        let real_a = frozen.activations(&real, 2).unwrap();
        let fake_a = frozen.activations(&fake, 2).unwrap();
        let mut critic = [d2.clone()];
        critic_worst[1] = critic_worst[1].max(check_nets(&mut critic, &|n, g, b| {
            let r = g.constant(real_a.clone());
            let f = g.constant(fake_a.clone());
            critic_loss(g, &n[0], &b[0], r, f, &mix, weights, &mut seeded(0))
        }));
    }
    let names = [
        "td_loss",
        "distill_loss",
        "distill_loss_normalized",
        "rehearsal_loss",
        "mixed_ltm_loss",
        "gen_loss_states",
        "gen_loss_activations",
    ];
    (
        names.iter().map(|s| s.to_string()).zip(w).collect(),
        vec![
            ("critic_loss_states".to_string(), critic_worst[0]),
            ("critic_loss_activations".to_string(), critic_worst[1]),
        ],
    )
}

const WEIGHT: f64 = 0.7;
const MEANS: [[f64; 2]; 2] = [[2.0, 1.0], [0.5, -0.5]];
const SCALES: [f64; 2] = [0.15, 0.3];

fn mixture_batch<R: Rng>(n: usize, rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let k = usize::from(rng.gen::<f64>() >= WEIGHT);
        for d in 0..2 {
            data.push(MEANS[k][d] + SCALES[k] * standard_normal(rng));
        }
    }
    Tensor::matrix(n, 2, data).unwrap()
}

/// Closed-form first and second moments of the mixture.
fn exact_moments() -> ([f64; 2], [[f64; 2]; 2]) {
    let w = [WEIGHT, 1.0 - WEIGHT];
    let mut mean = [0.0; 2];
    for k in 0..2 {
        for d in 0..2 {
            mean[d] += w[k] * MEANS[k][d];
        }
    }
    let mut cov = [[0.0; 2]; 2];
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let within = if i == j { SCALES[k] * SCALES[k] } else { 0.0 };
                let between = (MEANS[k][i] - mean[i]) * (MEANS[k][j] - mean[j]);
                cov[i][j] += w[k] * (within + between);
            }
        }
    }
    (mean, cov)
}

fn sample_moments(x: &Tensor) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = x.rows() as f64;
    let mut mean = [0.0; 2];
    for r in 0..x.rows() {
        for d in 0..2 {
            mean[d] += x.row(r)[d] / n;
        }
    }
    let mut cov = [[0.0; 2]; 2];
    for r in 0..x.rows() {
        let row = x.row(r);
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Trains a generator on the mixture and returns the relative errors of the
/// sample mean and covariance against the closed form.
pub fn mixture_errors() -> (f64, f64) {
    let config = GanConfig {
        steps: 40_000,
        batch_size: 64,
        latent_dim: 4,
        gen_hidden: vec![32, 32],
        gen_output: Activation::Identity,
        disc_hidden: vec![32, 32],
        lr: 1e-4,
        disc_lr: 4e-4,
        ..GanConfig::default()
    };
    let mut data_rng = seeded(11);
    let out = train_gan(
        &config,
        GanMode::Repr,
        2,
        |n| Ok(mixture_batch(n, &mut data_rng)),
        None,
        5,
    )
    .unwrap();
    assert_eq!((out.disc_updates, out.gen_updates), (20_000, 20_000));
    let samples = out.bundle.sample(20_000, &mut seeded(99)).unwrap();
    let (m, c) = sample_moments(&samples);
    let (em, ec) = exact_moments();
    let mean_err = norm((0..2).map(|d| m[d] - em[d])) / norm(em);
    let cov_err = norm((0..4).map(|k| c[k / 2][k % 2] - ec[k / 2][k % 2]))
        / norm((0..4).map(|k| ec[k / 2][k % 2]));
    (mean_err, cov_err)
}

fn constant_critic(input: usize, value: f64) -> Mlp {
    use rehearsal::nn::Dense;
    let layer = Dense {
        weight: Tensor::zeros(&[input, 1]),
        bias: Tensor::vector(vec![value]),
    };
    Mlp::from_layers(
        vec![layer],
        Activation::LeakyRelu(0.2),
        Activation::Identity,
    )
    .unwrap()
}

/// Critic objective of a constant critic on identical real and fake batches,
/// and the activation-matching generator objective for fixed critic outputs.
pub fn loss_fixture_values() -> (f64, f64) {
    let mut g = Graph::new();
    let critic = constant_critic(3, 3.0);
    let bound = critic.bind(&mut g, true);
    let x = random_tensor(&[4, 3], &mut seeded(1));
    let real = g.constant(x.clone());
    let fake = g.constant(x);
    let weights = CriticWeights {
        lambda: 10.0,
        eps_drift: 1e-6,
        penalty: PenaltyMode::Exact,
    };
    let mix = [0.1, 0.5, 0.9, 0.3];
    let critic_value = critic_loss(
        &mut g,
        &critic,
        &bound,
        real,
        fake,
        &mix,
        weights,
        &mut seeded(2),
    )
    .map(|v| g.value(v).item())
    .unwrap();

    let mut g = Graph::new();
    let d1 = g.constant(Tensor::full(&[4, 1], 0.5));
    let d2 = g.constant(Tensor::full(&[4, 1], 0.2));
    let gen = gen_loss_grim(&mut g, d1, d2, 1000.0).unwrap();
    (critic_value, g.value(gen).item())
}

/// Pooled mean and std of a fixture after normalising with its own
/// statistics, and the number of argmax disagreements over `vectors`
/// random Q-vectors.
pub fn normalization_checks(vectors: usize) -> (f64, f64, usize) {
    use rehearsal::long_term::normalize_q;
    use rehearsal::short_term::argmax;
    let mut rng = seeded(21);
    let values: Vec<f64> = (0..4000)
        .map(|_| 40.0 + 25.0 * rng.gen_range(-1.0..1.0))
        .collect();
    let stats = NormStats::from_values(&values, 1).unwrap();
    let normed = normalize_q(&values, &stats);
    let n = normed.len() as f64;
    let mean = normed.iter().sum::<f64>() / n;
    let std = (normed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();

    let mut disagreements = 0;
    for _ in 0..vectors {
        let actions = rng.gen_range(1..8);
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let q: Vec<f64> = (0..actions)
            .map(|_| scale * rng.gen_range(-1.0..1.0))
            .collect();
        let stats = NormStats {
            mu: scale * rng.gen_range(-2.0..2.0),
            sigma: scale * rng.gen_range(0.01..5.0),
            n_batches_used: 1,
        };
        if argmax(&q) != argmax(&normalize_q(&q, &stats)) {
            disagreements += 1;
        }
    }
    (mean, std, disagreements)
}

/// Two states, two actions, deterministic:
/// state 0: action 0 pays 1 and moves to state 1, action 1 pays 0 and stays;
/// state 1: action 0 pays 0 and moves to state 0, action 1 pays 2 and ends.
pub fn two_state_mdp() -> Vec<Transition> {
    let s = |i: usize| {
        if i == 0 {
            vec![1.0, 0.0]
        } else {
            vec![0.0, 1.0]
        }
    };
    vec![
        Transition {
            s: s(0),
            a: 0,
            r: 1.0,
            s_next: s(1),
            terminal: false,
        },
        Transition {
            s: s(0),
            a: 1,
            r: 0.0,
            s_next: s(0),
            terminal: false,
        },
        Transition {
            s: s(1),
            a: 0,
            r: 0.0,
            s_next: s(0),
            terminal: false,
        },
        Transition {
            s: s(1),
            a: 1,
            r: 2.0,
            s_next: s(1),
            terminal: true,
        },
    ]
}

/// Optimal action values of [`two_state_mdp`] by value iteration, `[state][action]`.
pub fn value_iteration(gamma: f64) -> [[f64; 2]; 2] {
    let mdp = two_state_mdp();
    let mut q = [[0.0f64; 2]; 2];
    for _ in 0..10_000 {
        let v = [q[0][0].max(q[0][1]), q[1][0].max(q[1][1])];
        let mut next = [[0.0; 2]; 2];
        for t in &mdp {
            let from = usize::from(t.s[1] == 1.0);
            let to = usize::from(t.s_next[1] == 1.0);
            next[from][t.a] = t.r + if t.terminal { 0.0 } else { gamma * v[to] };
        }
        q = next;
    }
    q
}

/// Largest gap between learned and value-iteration Q-values after full-batch
/// deep Q-learning on [`two_state_mdp`].
pub fn mdp_q_error(gamma: f64) -> f64 {
    use rehearsal::short_term::{DqnLearner, QFunction};
    let mdp = two_state_mdp();
    let batch: Vec<&Transition> = mdp.iter().collect();
    let net = QNetwork::new(2, &[16, 16], 2, &mut seeded(3)).unwrap();
    let mut learner = DqnLearner::new(net, gamma, 0.02, 0.9, 10.0).unwrap();
    for k in 0..40_000 {
        learner.update(&batch).unwrap();
        if k % 100 == 99 {
            learner.sync_target();
        }
    }
    let exact = value_iteration(gamma);
    let mut worst: f64 = 0.0;
    for (i, obs) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
        let q = learner.predictor.q_values(obs).unwrap();
        for a in 0..2 {
            let d = (q[a] - exact[i][a]).abs();
            if d.is_nan() {
                return f64::INFINITY;
            }
            worst = worst.max(d);
        }
    }
    worst
}

/// Whether training an activation-matching generator leaves the frozen
/// network's parameters bit-for-bit unchanged.
pub fn frozen_network_untouched() -> bool {
    let frozen = QNetwork::new(3, &[8, 6], 2, &mut seeded(4)).unwrap();
    let before = frozen.checksum();
    let config = GanConfig {
        steps: 200,
        batch_size: 16,
        latent_dim: 4,
        gen_hidden: vec![8],
        disc_hidden: vec![8],
        disc2_hidden: vec![8],
        ..GanConfig::default()
    };
    let mut rng = seeded(5);
    train_gan(
        &config,
        GanMode::Grim,
        3,
        |n| Ok(random_tensor(&[n, 3], &mut rng)),
        Some(&frozen),
        6,
    )
    .unwrap();
    frozen.checksum() == before
}
