use std::collections::HashMap;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable primitive set.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `x W + b` with `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    Affine,
    MatMul {
        trans_a: bool,
        trans_b: bool,
    },
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Square,
    /// `1/x`, defined as 0 where `x == 0`.
    Recip,
    Sum,
    Mean,
    /// `[r, c] -> [c]`
    SumRows,
    /// `[r, c] -> [r]`
    SumCols,
    BroadcastScalar(Vec<usize>),
    /// `[c] -> [r, c]`
    BroadcastRows(usize),
    /// `[r] -> [r, c]`
    BroadcastCols(usize),
    /// Euclidean norm of every row, `[r, c] -> [r]`.
    RowNorm,
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::Affine => "affine",
            Primitive::MatMul { .. } => "matmul",
            Primitive::LeakyRelu { .. } => "leaky_relu",
            Primitive::Tanh => "tanh",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::Square => "square",
            Primitive::Recip => "recip",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SumRows => "sum_rows",
            Primitive::SumCols => "sum_cols",
            Primitive::BroadcastScalar(_) => "broadcast_scalar",
            Primitive::BroadcastRows(_) => "broadcast_rows",
            Primitive::BroadcastCols(_) => "broadcast_cols",
            Primitive::RowNorm => "row_norm",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::Affine => 3,
            Primitive::MatMul { .. } | Primitive::Add | Primitive::Sub | Primitive::Mul => 2,
            _ => 1,
        }
    }

    fn shape_err(&self, inputs: &[&Tensor]) -> Error {
        let shapes: Vec<_> = inputs.iter().map(|t| t.shape().to_vec()).collect();
        Error::Shape(format!("{} got input shapes {:?}", self.name(), shapes))
    }

    /// Evaluates the primitive on concrete inputs.
    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs.len() != self.arity() {
            return Err(Error::invalid(format!(
                "{} takes {} inputs, got {}",
                self.name(),
                self.arity(),
                inputs.len()
            )));
        }
        let x = inputs[0];
        let out = match self {
            Primitive::Affine => {
                let (w, b) = (inputs[1], inputs[2]);
                if x.rank() != 2
                    || w.rank() != 2
                    || b.rank() != 1
                    || x.cols() != w.rows()
                    || w.cols() != b.len()
                {
                    return Err(self.shape_err(inputs));
                }
                let (n, k, m) = (x.rows(), x.cols(), w.cols());
                let mut out = vec![0.0; n * m];
                gemm(n, k, m, x.data(), false, w.data(), false, &mut out);
                for row in out.chunks_mut(m.max(1)) {
                    for (o, bias) in row.iter_mut().zip(b.data()) {
                        *o += bias;
                    }
                }
                Tensor::new(vec![n, m], out)?
            }
            Primitive::MatMul { trans_a, trans_b } => {
                let b = inputs[1];
                if x.rank() != 2 || b.rank() != 2 {
                    return Err(self.shape_err(inputs));
                }
                let (m, k) = if *trans_a {
                    (x.cols(), x.rows())
                } else {
                    (x.rows(), x.cols())
                };
                let (k2, n) = if *trans_b {
                    (b.cols(), b.rows())
                } else {
                    (b.rows(), b.cols())
                };
                if k != k2 {
                    return Err(self.shape_err(inputs));
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, x.data(), *trans_a, b.data(), *trans_b, &mut out);
                Tensor::new(vec![m, n], out)?
            }
            Primitive::LeakyRelu { slope } => x.map(|v| if v > 0.0 { v } else { slope * v }),
            Primitive::Tanh => x.map(f64::tanh),
            Primitive::Add | Primitive::Sub | Primitive::Mul => {
                let b = inputs[1];
                if x.shape() != b.shape() {
                    return Err(self.shape_err(inputs));
                }
                match self {
                    Primitive::Add => x.zip_map(b, |p, q| p + q),
                    Primitive::Sub => x.zip_map(b, |p, q| p - q),
                    _ => x.zip_map(b, |p, q| p * q),
                }
            }
            Primitive::Scale(c) => x.map(|v| c * v),
            Primitive::AddScalar(c) => x.map(|v| v + c),
            Primitive::Square => x.map(|v| v * v),
            Primitive::Recip => x.map(|v| if v == 0.0 { 0.0 } else { 1.0 / v }),
            Primitive::Sum => Tensor::scalar(x.sum()),
            Primitive::Mean => {
                if x.is_empty() {
                    return Err(self.shape_err(inputs));
                }
                Tensor::scalar(x.sum() / x.len() as f64)
            }
            Primitive::SumRows => {
                if x.rank() != 2 {
                    return Err(self.shape_err(inputs));
                }
                let mut out = vec![0.0; x.cols()];
                for r in 0..x.rows() {
                    for (o, v) in out.iter_mut().zip(x.row(r)) {
                        *o += v;
                    }
                }
                Tensor::vector(out)
            }
            Primitive::SumCols => {
                if x.rank() != 2 {
                    return Err(self.shape_err(inputs));
                }
                Tensor::vector((0..x.rows()).map(|r| x.row(r).iter().sum()).collect())
            }
            Primitive::BroadcastScalar(shape) => {
                if x.len() != 1 {
                    return Err(self.shape_err(inputs));
                }
                Tensor::full(shape, x.item())
            }
            Primitive::BroadcastRows(rows) => {
                if x.rank() != 1 {
                    return Err(self.shape_err(inputs));
                }
                let mut data = Vec::with_capacity(rows * x.len());
                for _ in 0..*rows {
                    data.extend_from_slice(x.data());
                }
                Tensor::new(vec![*rows, x.len()], data)?
            }
            Primitive::BroadcastCols(cols) => {
                if x.rank() != 1 {
                    return Err(self.shape_err(inputs));
                }
                let mut data = Vec::with_capacity(cols * x.len());
                for &v in x.data() {
                    data.extend(std::iter::repeat(v).take(*cols));
                }
                Tensor::new(vec![x.len(), *cols], data)?
            }
            Primitive::RowNorm => {
                if x.rank() != 2 {
                    return Err(self.shape_err(inputs));
                }
                Tensor::vector(
                    (0..x.rows())
                        .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
                        .collect(),
                )
            }
        };
        Ok(out)
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    primitive: Option<Primitive>,
    inputs: Vec<Var>,
    trainable: bool,
}

/// Append-only record of an eager computation.
///
/// Every node's inputs precede it, so the node order is a topological order.
/// Gradients are themselves built out of graph nodes, which is what makes
/// differentiating through an input gradient possible.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every trainable leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.by_leaf.get(&leaf)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            primitive: None,
            inputs: Vec::new(),
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient from [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Appends `primitive(inputs)` to the graph.
    pub fn apply(&mut self, primitive: Primitive, inputs: &[Var]) -> Result<Var> {
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            primitive.forward(&vals)?
        };
        self.nodes.push(Node {
            value,
            primitive: Some(primitive),
            inputs: inputs.to_vec(),
            trainable: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // The unary primitives below cannot fail on shape, so they unwrap.

    fn unary(&mut self, primitive: Primitive, x: Var) -> Var {
        self.apply(primitive, &[x])
            .expect("unary elementwise primitive accepts any shape")
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Affine, &[x, w, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        self.apply(Primitive::MatMul { trans_a, trans_b }, &[a, b])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(Primitive::LeakyRelu { slope }, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Primitive::Tanh, x)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(Primitive::Scale(c), x)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(Primitive::AddScalar(c), x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Primitive::Square, x)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(Primitive::Recip, x)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.unary(Primitive::Sum, x)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[x])
    }

    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::SumRows, &[x])
    }

    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::SumCols, &[x])
    }

    pub fn broadcast_scalar(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::BroadcastScalar(shape.to_vec()), &[x])
    }

    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        self.apply(Primitive::BroadcastRows(rows), &[x])
    }

    pub fn broadcast_cols(&mut self, x: Var, cols: usize) -> Result<Var> {
        self.apply(Primitive::BroadcastCols(cols), &[x])
    }

    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::RowNorm, &[x])
    }

    /// Differentiable gradients of the scalar `output` with respect to `wrt`.
    ///
    /// The returned nodes live in this graph and can be differentiated again.
    /// Inputs that `output` does not depend on get a zero constant.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let out_value = &self.nodes[output.0].value;
        if out_value.len() != 1 {
            return Err(Error::Shape(format!(
                "gradient needs a scalar output, got shape {:?}",
                out_value.shape()
            )));
        }
        let n = output.0 + 1;

        // Nodes through which some `wrt` entry is reachable.
        let mut needed = vec![false; n];
        for w in wrt {
            if w.0 < n {
                needed[w.0] = true;
            }
        }
        for i in 0..n {
            if !needed[i] {
                needed[i] = self.nodes[i].inputs.iter().any(|v| needed[v.0]);
            }
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; n];
        if needed[output.0] {
            let seed = Tensor::full(out_value.shape(), 1.0);
            adjoint[output.0] = Some(self.constant(seed));
        }

        for i in (0..n).rev() {
            let Some(upstream) = adjoint[i] else { continue };
            let Some(primitive) = self.nodes[i].primitive.clone() else {
                continue;
            };
            let inputs = self.nodes[i].inputs.clone();
            let wanted: Vec<bool> = inputs.iter().map(|v| needed[v.0]).collect();
            let contributions = self.vjp(&primitive, Var(i), &inputs, upstream, &wanted)?;
            for (input, contribution) in inputs.iter().zip(contributions) {
                if let Some(c) = contribution {
                    adjoint[input.0] = Some(match adjoint[input.0] {
                        Some(prev) => self.add(prev, c)?,
                        None => c,
                    });
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adjoint.get(w.0).copied().flatten() {
                Some(a) => a,
                None => {
                    let zeros = Tensor::zeros(self.nodes[w.0].value.shape());
                    self.constant(zeros)
                }
            })
            .collect())
    }

    /// Gradient values of the scalar `output` for every trainable leaf.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        let leaves: Vec<Var> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].trainable)
            .map(Var)
            .collect();
        let grads = self.grad(output, &leaves)?;
        Ok(Gradients {
            by_leaf: leaves
                .into_iter()
                .zip(grads)
                .map(|(leaf, g)| (leaf, self.nodes[g.0].value.clone()))
                .collect(),
        })
    }

    /// Vector-Jacobian product of one node, expressed as new graph nodes.
    fn vjp(
        &mut self,
        primitive: &Primitive,
        node: Var,
        inputs: &[Var],
        g: Var,
        wanted: &[bool],
    ) -> Result<Vec<Option<Var>>> {
        let x = inputs[0];
        let mut out = vec![None; inputs.len()];
        match primitive {
            Primitive::Affine => {
                let (w, _) = (inputs[1], inputs[2]);
                if wanted[0] {
                    out[0] = Some(self.matmul(g, w, false, true)?);
                }
                if wanted[1] {
                    out[1] = Some(self.matmul(x, g, true, false)?);
                }
                if wanted[2] {
                    out[2] = Some(self.sum_rows(g)?);
                }
            }
            Primitive::MatMul { trans_a, trans_b } => {
                let (ta, tb) = (*trans_a, *trans_b);
                let b = inputs[1];
                if wanted[0] {
                    out[0] = Some(if ta {
                        self.matmul(b, g, tb, true)?
                    } else {
                        self.matmul(g, b, false, !tb)?
                    });
                }
                if wanted[1] {
                    out[1] = Some(if tb {
                        self.matmul(g, x, true, ta)?
                    } else {
                        self.matmul(x, g, !ta, false)?
                    });
                }
            }
            Primitive::LeakyRelu { slope } => {
                // Second derivative is zero almost everywhere, so the mask is a constant.
                let mask = self.nodes[x.0]
                    .value
                    .map(|v| if v > 0.0 { 1.0 } else { *slope });
                let mask = self.constant(mask);
                out[0] = Some(self.mul(g, mask)?);
            }
            Primitive::Tanh => {
                let y2 = self.square(node);
                let one_minus = self.scale(y2, -1.0);
                let one_minus = self.add_scalar(one_minus, 1.0);
                out[0] = Some(self.mul(g, one_minus)?);
            }
            Primitive::Add => {
                out[0] = wanted[0].then_some(g);
                out[1] = wanted[1].then_some(g);
            }
            Primitive::Sub => {
                out[0] = wanted[0].then_some(g);
                if wanted[1] {
                    out[1] = Some(self.scale(g, -1.0));
                }
            }
            Primitive::Mul => {
                let b = inputs[1];
                if wanted[0] {
                    out[0] = Some(self.mul(g, b)?);
                }
                if wanted[1] {
                    out[1] = Some(self.mul(g, x)?);
                }
            }
            Primitive::Scale(c) => out[0] = Some(self.scale(g, *c)),
            Primitive::AddScalar(_) => out[0] = Some(g),
            Primitive::Square => {
                let two_x = self.scale(x, 2.0);
                out[0] = Some(self.mul(g, two_x)?);
            }
            Primitive::Recip => {
                let y2 = self.square(node);
                let d = self.scale(y2, -1.0);
                out[0] = Some(self.mul(g, d)?);
            }
            Primitive::Sum => {
                let shape = self.shape(x).to_vec();
                out[0] = Some(self.broadcast_scalar(g, &shape)?);
            }
            Primitive::Mean => {
                let shape = self.shape(x).to_vec();
                let n = self.nodes[x.0].value.len() as f64;
                let spread = self.broadcast_scalar(g, &shape)?;
                out[0] = Some(self.scale(spread, 1.0 / n));
            }
            Primitive::SumRows => {
                let rows = self.nodes[x.0].value.rows();
                out[0] = Some(self.broadcast_rows(g, rows)?);
            }
            Primitive::SumCols => {
                let cols = self.nodes[x.0].value.cols();
                out[0] = Some(self.broadcast_cols(g, cols)?);
            }
            Primitive::BroadcastScalar(_) => {
                let s = self.sum(g);
                out[0] = Some(if self.nodes[x.0].value.rank() == 0 {
                    s
                } else {
                    let shape = self.shape(x).to_vec();
                    self.broadcast_scalar(s, &shape)?
                });
            }
            Primitive::BroadcastRows(_) => out[0] = Some(self.sum_rows(g)?),
            Primitive::BroadcastCols(_) => out[0] = Some(self.sum_cols(g)?),
            Primitive::RowNorm => {
                // d|x|/dx = x / |x|, with zero rows getting a zero subgradient.
                let cols = self.nodes[x.0].value.cols();
                let inv = self.recip(node);
                let scaled = self.mul(g, inv)?;
                let spread = self.broadcast_cols(scaled, cols)?;
                out[0] = Some(self.mul(spread, x)?);
            }
        }
        Ok(out)
    }

    /// Recomputes every non-leaf node from its inputs and returns the
    /// resulting graph. Forward evaluation is deterministic, so the replay is
    /// bit-identical to the original.
    pub fn replay(&self) -> Result<Graph> {
        let mut nodes: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.primitive {
                None => node.value.clone(),
                Some(p) => {
                    let vals: Vec<&Tensor> =
                        node.inputs.iter().map(|v| &nodes[v.0].value).collect();
                    p.forward(&vals)?
                }
            };
            nodes.push(Node {
                value,
                primitive: node.primitive.clone(),
                inputs: node.inputs.clone(),
                trainable: node.trainable,
            });
        }
        Ok(Graph { nodes })
    }

    /// True when both graphs have the same structure and bit-identical values.
    pub fn bit_identical(&self, other: &Graph) -> bool {
        self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(&other.nodes).all(|(a, b)| {
                a.inputs == b.inputs
                    && a.primitive == b.primitive
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(p, q)| p.to_bits() == q.to_bits())
            })
    }
}
