use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Activation, BoundMlp, Mlp};

pub const DEFAULT_HIDDEN: [usize; 3] = [128, 128, 64];
pub const HIDDEN_SLOPE: f64 = 0.01;

/// Anything that maps an observation to one value per action.
pub trait QFunction {
    fn action_count(&self) -> usize;
    fn q_values(&self, observation: &[f64]) -> Result<Vec<f64>>;
}

/// Action-value network: leaky-rectified hidden layers, linear output head.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    net: Mlp,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        action_count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_count);
        Ok(Self {
            net: Mlp::new(
                &sizes,
                Activation::LeakyRelu(HIDDEN_SLOPE),
                Activation::Identity,
                rng,
            )?,
        })
    }

    pub fn from_mlp(net: Mlp) -> Self {
        Self { net }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.net.hidden_sizes()
    }

    /// Q-values for a `[batch, input_dim]` matrix of states.
    pub fn predict(&self, states: &Tensor) -> Result<Tensor> {
        self.net.predict(states)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        self.net.bind(g, trainable)
    }

    pub fn forward(&self, g: &mut Graph, bound: &BoundMlp, states: Var) -> Result<Var> {
        self.net.forward(g, bound, states)
    }

    /// Hidden layers are numbered from 1; layer `k` is the post-nonlinearity
    /// output of the `k`-th affine map.
    pub fn check_layer(&self, layer: usize) -> Result<usize> {
        let hidden = self.net.depth() - 1;
        if layer == 0 || layer > hidden {
            return Err(Error::invalid(format!(
                "activation layer {layer} not in 1..={hidden}"
            )));
        }
        Ok(layer)
    }

    pub fn activation_width(&self, layer: usize) -> Result<usize> {
        self.check_layer(layer)?;
        Ok(self.net.layers()[layer - 1].fan_out())
    }

    pub fn activations(&self, states: &Tensor, layer: usize) -> Result<Tensor> {
        self.check_layer(layer)?;
        self.net.predict_prefix(states, layer)
    }

    /// Activations of hidden `layer` as graph nodes. The network's own
    /// parameters enter as constants, so no gradient reaches them.
    pub fn activations_frozen(&self, g: &mut Graph, states: Var, layer: usize) -> Result<Var> {
        self.check_layer(layer)?;
        let bound = self.net.bind(g, false);
        self.net.forward_prefix(g, &bound, states, layer)
    }

    pub fn checksum(&self) -> u64 {
        self.net.checksum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new("qnetwork");
        push_mlp(&mut c, &self.net, "layer", "");
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.kind != "qnetwork" {
            return Err(Error::Checkpoint(format!(
                "expected qnetwork, found {}",
                c.kind
            )));
        }
        Ok(Self {
            net: mlp_from_checkpoint(c, "layer", "")?,
        })
    }
}

/// Stores `net` so that [`mlp_from_checkpoint`] with the same prefixes
/// restores it.
pub(crate) fn push_mlp(c: &mut Checkpoint, net: &Mlp, prefix: &str, meta_prefix: &str) {
    c.set_meta(
        format!("{meta_prefix}hidden_activation"),
        net.hidden_activation().encode(),
    );
    c.set_meta(
        format!("{meta_prefix}output_activation"),
        net.output_activation().encode(),
    );
    c.set_meta(format!("{meta_prefix}layers"), net.depth());
    for (name, t) in net.named_tensors(prefix) {
        c.push_tensor(name, t);
    }
}

/// Rebuilds an [`Mlp`] stored under `{prefix}{i}.weight/bias` with its
/// activations and depth recorded in `{meta_prefix}*` meta keys.
pub(crate) fn mlp_from_checkpoint(c: &Checkpoint, prefix: &str, meta_prefix: &str) -> Result<Mlp> {
    let depth: usize = c.require_meta(&format!("{meta_prefix}layers"))?;
    if depth == 0 || depth > 64 {
        return Err(Error::Checkpoint(format!("implausible depth {depth}")));
    }
    let hidden = Activation::decode(
        c.meta(&format!("{meta_prefix}hidden_activation"))
            .ok_or_else(|| Error::Checkpoint("missing hidden activation".into()))?,
    )?;
    let output = Activation::decode(
        c.meta(&format!("{meta_prefix}output_activation"))
            .ok_or_else(|| Error::Checkpoint("missing output activation".into()))?,
    )?;
    let layers = (0..depth)
        .map(|i| {
            Ok(crate::nn::Dense {
                weight: c.tensor(&format!("{prefix}{i}.weight"))?.clone(),
                bias: c.tensor(&format!("{prefix}{i}.bias"))?.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::from_layers(layers, hidden, output)
}

impl QFunction for QNetwork {
    fn action_count(&self) -> usize {
        self.net.output_dim()
    }

    fn q_values(&self, observation: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::matrix(1, observation.len(), observation.to_vec())?;
        Ok(self.net.predict(&x)?.into_data())
    }
}
