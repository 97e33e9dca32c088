//! Norm of a critic's gradient with respect to its input, as a differentiable
//! graph node. This is the only second-order quantity the training losses need.

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::unit_direction;

/// How the input-gradient norm is obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PenaltyMode {
    /// Differentiate the critic, take the row norms, and keep the whole thing
    /// on the graph so parameter gradients are exact.
    Exact,
    /// Symmetric finite difference along one random unit direction `u` per
    /// row: `g = (D(x+eps*u) - D(x-eps*u)) / (2 eps)`. `sqrt(dim) * |g|` is
    /// returned, whose square is an unbiased estimate of the squared norm.
    RandomDirection { eps: f64 },
}

impl Default for PenaltyMode {
    fn default() -> Self {
        PenaltyMode::Exact
    }
}

impl PenaltyMode {
    pub const DEFAULT_EPS: f64 = 1e-3;
}

/// Per-row `||grad_x D(x)||_2` for a batch `x_hat: [n, d]`, shape `[n]`.
///
/// `critic` must map `[n, d]` to one scalar per row (`[n, 1]` or `[n]`).
pub fn input_gradient_norm<F, R>(
    graph: &mut Graph,
    mut critic: F,
    x_hat: Var,
    mode: PenaltyMode,
    rng: &mut R,
) -> Result<Var>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
    R: Rng + ?Sized,
{
    let (rows, dim) = {
        let x = graph.value(x_hat);
        if x.rank() != 2 {
            return Err(Error::Shape(format!(
                "critic input must be [rows, dim], got {:?}",
                x.shape()
            )));
        }
        (x.rows(), x.cols())
    };
    let check = |graph: &Graph, out: Var| -> Result<()> {
        let shape = graph.shape(out);
        let per_row_scalar = match shape {
            [n] => *n == rows,
            [n, 1] => *n == rows,
            _ => false,
        };
        if per_row_scalar {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "critic must output one scalar per row ({} rows), got {:?}",
                rows, shape
            )))
        }
    };

    match mode {
        PenaltyMode::Exact => {
            let out = critic(graph, x_hat)?;
            check(graph, out)?;
            let total = graph.sum(out);
            let grad = graph.grad(total, &[x_hat])?[0];
            graph.row_norm(grad)
        }
        PenaltyMode::RandomDirection { eps } => {
            if !(eps > 0.0) {
                return Err(Error::invalid(format!(
                    "direction step must be > 0, got {eps}"
                )));
            }
            let mut u = Tensor::zeros(&[rows, dim]);
            for r in 0..rows {
                unit_direction(rng, u.row_mut(r));
            }
            let step = graph.constant(u.map(|v| v * eps));
            let plus_in = graph.add(x_hat, step)?;
            let minus_in = graph.sub(x_hat, step)?;
            let plus = critic(graph, plus_in)?;
            check(graph, plus)?;
            let minus = critic(graph, minus_in)?;
            let diff = graph.sub(plus, minus)?;
            let diff = if graph.shape(diff).len() == 1 {
                // [n] -> [n, 1] so the row norm is the absolute value.
                graph.broadcast_cols(diff, 1)?
            } else {
                diff
            };
            let scaled = graph.scale(diff, (dim as f64).sqrt() / (2.0 * eps));
            graph.row_norm(scaled)
        }
    }
}
