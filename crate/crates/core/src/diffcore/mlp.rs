use rand::Rng;

use super::graph::{softplus, Graph, Var};
use super::params::{Bindings, ParamStore};
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Linear,
    /// `softplus(h) + floor`, strictly positive.
    Variance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSpec {
    pub name: String,
    pub dim: usize,
    pub kind: HeadKind,
}

impl HeadSpec {
    pub fn linear(name: &str, dim: usize) -> Self {
        Self { name: name.into(), dim, kind: HeadKind::Linear }
    }

    pub fn variance(name: &str, dim: usize) -> Self {
        Self { name: name.into(), dim, kind: HeadKind::Variance }
    }
}

/// Multilayer perceptron with a shared trunk and one affine layer per head.
///
/// Blocks are named `{prefix}.h{i}.w` / `{prefix}.h{i}.b` for hidden layer
/// `i` and `{prefix}.{head}.w` / `{prefix}.{head}.b` for heads. Weights are
/// stored `[fan_in, fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub heads: Vec<HeadSpec>,
    pub hidden_activation: Activation,
    pub variance_floor: f64,
}

impl MlpSpec {
    pub fn new(prefix: &str, input_dim: usize, hidden_widths: &[usize], heads: Vec<HeadSpec>) -> Self {
        Self {
            prefix: prefix.to_string(),
            input_dim,
            hidden_widths: hidden_widths.to_vec(),
            heads,
            hidden_activation: Activation::Tanh,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        }
    }

    pub fn with_variance_floor(mut self, floor: f64) -> Self {
        self.variance_floor = floor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_widths.contains(&0) || self.heads.iter().any(|h| h.dim == 0) {
            return Err(Error::Config(format!("{}: all layer widths must be >= 1", self.prefix)));
        }
        if self.heads.is_empty() {
            return Err(Error::Config(format!("{}: at least one output head", self.prefix)));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::Config(format!("{}: variance floor must be > 0", self.prefix)));
        }
        Ok(())
    }

    fn trunk_width(&self) -> usize {
        self.hidden_widths.last().copied().unwrap_or(self.input_dim)
    }

    /// `(name, [fan_in, fan_out])` for every weight, each followed by its bias.
    pub fn layer_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &w) in self.hidden_widths.iter().enumerate() {
            out.push((format!("{}.h{i}", self.prefix), fan_in, w));
            fan_in = w;
        }
        for h in &self.heads {
            out.push((format!("{}.{}", self.prefix, h.name), fan_in, h.dim));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(_, i, o)| i * o + o).sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(&self, rng: &mut impl Rng, store: &mut ParamStore) -> Result<()> {
        self.validate()?;
        for (name, fan_in, fan_out) in self.layer_shapes() {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect();
            store.insert(format!("{name}.w"), Tensor::matrix(fan_in, fan_out, w)?)?;
            store.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]))?;
        }
        Ok(())
    }

    /// Zero weights and biases.
    pub fn init_zeros(&self, store: &mut ParamStore) -> Result<()> {
        self.validate()?;
        for (name, fan_in, fan_out) in self.layer_shapes() {
            store.insert(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]))?;
            store.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]))?;
        }
        Ok(())
    }

    /// Record the forward pass; returns one node per head, in declaration order.
    pub fn forward(&self, g: &mut Graph, params: &Bindings, input: Var) -> Result<Vec<Var>> {
        let in_dim = g.value(input).cols();
        if in_dim != self.input_dim {
            return Err(dim_err(format!("{} input", self.prefix), self.input_dim, in_dim));
        }
        let mut h = input;
        for i in 0..self.hidden_widths.len() {
            let name = format!("{}.h{i}", self.prefix);
            g.set_scope(&name);
            let a = affine(g, params, &name, h)?;
            h = match self.hidden_activation {
                Activation::Tanh => g.tanh(a),
                Activation::Softplus => g.softplus(a),
            };
        }
        let floor = g.constant(Tensor::scalar(self.variance_floor));
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let name = format!("{}.{}", self.prefix, head.name);
            g.set_scope(&name);
            let a = affine(g, params, &name, h)?;
            outs.push(match head.kind {
                HeadKind::Linear => a,
                HeadKind::Variance => {
                    let s = g.softplus(a);
                    g.add(s, floor)?
                }
            });
        }
        g.set_scope("<root>");
        debug_assert_eq!(self.trunk_width(), g.value(h).cols());
        Ok(outs)
    }
}

fn affine(g: &mut Graph, params: &Bindings, name: &str, x: Var) -> Result<Var> {
    let w = params.var(&format!("{name}.w"))?;
    let b = params.var(&format!("{name}.b"))?;
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}

/// Evaluate an MLP outside of any training graph.
pub fn mlp_forward(spec: &MlpSpec, params: &ParamStore, input: &Tensor) -> Result<Vec<(String, Tensor)>> {
    let mut g = Graph::new();
    let mut sub = ParamStore::new();
    for (name, _, _) in spec.layer_shapes() {
        for suffix in ["w", "b"] {
            let key = format!("{name}.{suffix}");
            sub.insert(key.clone(), params.get(&key)?.clone())?;
        }
    }
    let bound = sub.bind(&mut g);
    let x = g.constant(input.clone());
    let outs = spec.forward(&mut g, &bound, x)?;
    g.check_finite()?;
    Ok(spec
        .heads
        .iter()
        .zip(outs)
        .map(|(h, v)| (h.name.clone(), g.value(v).clone()))
        .collect())
}

/// softplus(0) + floor, the variance a zero-initialized head reports.
pub fn zero_variance_output(floor: f64) -> f64 {
    softplus(0.0) + floor
}
