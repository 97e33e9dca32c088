//! Fully connected networks and first-order optimizers.

use rand::Rng;

use crate::autodiff::{Gradients, Graph, Primitive, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu(slope) => g.leaky_relu(x, slope),
            Activation::Tanh => g.tanh(x),
        }
    }

    fn apply_value(self, x: Tensor) -> Tensor {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu(slope) => Primitive::LeakyRelu { slope }
                .forward(&[&x])
                .expect("elementwise"),
            Activation::Tanh => Primitive::Tanh.forward(&[&x]).expect("elementwise"),
        }
    }

    /// Stable text form used in checkpoint manifests.
    pub fn encode(self) -> String {
        match self {
            Activation::Identity => "identity".into(),
            Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
            Activation::Tanh => "tanh".into(),
        }
    }

    pub fn decode(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            _ => match s.strip_prefix("leaky_relu:").map(str::parse::<f64>) {
                Some(Ok(slope)) if slope.is_finite() => Ok(Activation::LeakyRelu(slope)),
                _ => Err(Error::Checkpoint(format!("unknown activation {s:?}"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Dense {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let weight = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("sized");
        let bias = Tensor::vector(draw(fan_out));
        Self { weight, bias }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Parameter handles of an [`Mlp`] inserted into one graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
}

impl BoundMlp {
    /// Weight and bias handles in the same order as [`Mlp::parameters`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Stack of affine layers: hidden activation after every layer but the last,
/// output activation after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// `sizes` lists every width from input to output, so it needs at least two entries.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.len() != l.fan_out() {
                return Err(Error::Shape(format!(
                    "layer {i}: weight {:?} with bias {:?}",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
            if i > 0 && layers[i - 1].fan_out() != l.fan_in() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs, previous layer gives {}",
                    l.fan_in(),
                    layers[i - 1].fan_out()
                )));
            }
        }
        Ok(Self {
            layers,
            hidden,
            output,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Widths of every layer but the last.
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Dense::fan_out)
            .collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        g.leaf(l.weight.clone(), trainable),
                        g.leaf(l.bias.clone(), trainable),
                    )
                })
                .collect(),
        }
    }

    fn activation_after(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Output of the first `n_layers` layers, each followed by its activation.
    pub fn forward_prefix(
        &self,
        g: &mut Graph,
        bound: &BoundMlp,
        x: Var,
        n_layers: usize,
    ) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in bound.layers.iter().take(n_layers).enumerate() {
            let z = g.affine(h, w, b)?;
            h = self.activation_after(i).apply(g, z);
        }
        Ok(h)
    }

    pub fn forward(&self, g: &mut Graph, bound: &BoundMlp, x: Var) -> Result<Var> {
        self.forward_prefix(g, bound, x, self.layers.len())
    }

    /// Graph-free evaluation, bit-identical to [`Mlp::forward`].
    pub fn predict_prefix(&self, x: &Tensor, n_layers: usize) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().take(n_layers).enumerate() {
            let z = Primitive::Affine.forward(&[&h, &l.weight, &l.bias])?;
            h = self.activation_after(i).apply_value(z);
        }
        Ok(h)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.predict_prefix(x, self.layers.len())
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Gradients for this network's parameters, in parameter order.
    pub fn collect_gradients(&self, bound: &BoundMlp, grads: &Gradients) -> Vec<Tensor> {
        bound
            .vars()
            .into_iter()
            .zip(self.parameters())
            .map(|(v, p)| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect()
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.parameters() {
            for v in p.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn all_finite(&self) -> bool {
        self.parameters().iter().all(|p| p.all_finite())
    }

    /// Named tensors for checkpointing: `{prefix}{i}.weight`, `{prefix}{i}.bias`.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}{i}.weight"), l.weight.clone()),
                    (format!("{prefix}{i}.bias"), l.bias.clone()),
                ]
            })
            .collect()
    }
}

pub trait Optimizer {
    fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]);
}

/// Stochastic gradient descent with heavy-ball momentum:
/// `v <- momentum * v + g`, `p <- p - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= self.lr * *vi;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *pi -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` in place so their joint norm is at most `max_norm`.
/// Returns the norm before clipping. A non-positive `max_norm` disables clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn predict_matches_graph_forward_bitwise() {
        let mut rng = seeded(4);
        let net = Mlp::new(
            &[5, 7, 3],
            Activation::LeakyRelu(0.2),
            Activation::Tanh,
            &mut rng,
        )
        .unwrap();
        let x = Tensor::matrix(2, 5, (0..10).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let mut g = Graph::new();
        let bound = net.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let y = net.forward(&mut g, &bound, xv).unwrap();
        let direct = net.predict(&x).unwrap();
        assert!(g
            .value(y)
            .data()
            .iter()
            .zip(direct.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn mismatched_layers_rejected() {
        let a = Dense {
            weight: Tensor::zeros(&[2, 3]),
            bias: Tensor::zeros(&[3]),
        };
        let b = Dense {
            weight: Tensor::zeros(&[4, 1]),
            bias: Tensor::zeros(&[1]),
        };
        assert!(Mlp::from_layers(vec![a, b], Activation::Identity, Activation::Identity).is_err());
    }

    #[test]
    fn activation_codec() {
        for a in [
            Activation::Identity,
            Activation::Tanh,
            Activation::LeakyRelu(0.01),
        ] {
            assert_eq!(Activation::decode(&a.encode()).unwrap(), a);
        }
        assert!(Activation::decode("relu6").is_err());
        assert!(Activation::decode("leaky_relu:NaN").is_err());
    }

    #[test]
    fn sgd_momentum_update() {
        let mut p = Tensor::vector(vec![1.0]);
        let g = [Tensor::vector(vec![0.5])];
        let mut opt = Sgd::new(0.1, 0.9);
        opt.step(vec![&mut p], &g);
        assert!((p.item() - 0.95).abs() < 1e-15);
        opt.step(vec![&mut p], &g);
        // v = 0.9 * 0.5 + 0.5 = 0.95
        assert!((p.item() - (0.95 - 0.095)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::vector(vec![1.0, 1.0]);
        let g = [Tensor::vector(vec![3.0, -0.001])];
        let mut opt = Adam::new(0.01, 0.9, 0.999);
        opt.step(vec![&mut p], &g);
        assert!((p.data()[0] - 0.99).abs() < 1e-6);
        assert!((p.data()[1] - 1.01).abs() < 1e-4);
    }

    #[test]
    fn clipping_caps_joint_norm() {
        let mut g = vec![Tensor::vector(vec![3.0]), Tensor::vector(vec![4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].item() - 0.6).abs() < 1e-15 && (g[1].item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn checksum_tracks_any_change() {
        let mut rng = seeded(0);
        let mut net = Mlp::new(
            &[2, 2],
            Activation::Identity,
            Activation::Identity,
            &mut rng,
        )
        .unwrap();
        let before = net.checksum();
        net.layers_mut()[0].bias.data_mut()[1] += 1e-12;
        assert_ne!(before, net.checksum());
    }
}
