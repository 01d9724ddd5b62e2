use indexmap::IndexMap;

use super::graph::{Graph, Gradients, Var};
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

/// Named parameter blocks in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    blocks: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.blocks.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter block {name}")));
        }
        if !value.is_finite() {
            return Err(Error::Numeric(format!("parameter block {name}")));
        }
        self.blocks.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter block {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.blocks
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter block {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.blocks.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.blocks.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.blocks.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.blocks.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Same block names and shapes as `other`.
    pub fn check_aligned(&self, other: &ParamStore) -> Result<()> {
        if self.len() != other.len() {
            return Err(dim_err("parameter blocks", self.len(), other.len()));
        }
        for ((a, ta), (b, tb)) in self.iter().zip(other.iter()) {
            if a != b || ta.shape() != tb.shape() {
                return Err(dim_err(
                    format!("parameter block {a}"),
                    format!("{a} {:?}", ta.shape()),
                    format!("{b} {:?}", tb.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Flat view of coordinate `k` across all blocks in order.
    pub(crate) fn locate(&self, mut k: usize) -> Option<(usize, usize)> {
        for (b, t) in self.blocks.values().enumerate() {
            if k < t.len() {
                return Some((b, k));
            }
            k -= t.len();
        }
        None
    }

    pub(crate) fn block_at_mut(&mut self, b: usize) -> &mut Tensor {
        &mut self.blocks[b]
    }

    pub(crate) fn name_at(&self, b: usize) -> &str {
        self.blocks.get_index(b).map(|(k, _)| k.as_str()).unwrap_or("?")
    }

    /// Register every block as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bindings {
        Bindings {
            vars: self
                .blocks
                .iter()
                .map(|(k, v)| (k.clone(), g.param(v.clone())))
                .collect(),
        }
    }
}

/// Parameter-name to graph-leaf mapping produced by [`ParamStore::bind`].
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: IndexMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unbound parameter block {name}")))
    }
}

/// ∂loss/∂block for every block of `params`; blocks the loss never touched get zeros.
pub fn backprop_grads(g: &Graph, loss: Var, bindings: &Bindings, params: &ParamStore) -> Result<ParamStore> {
    let grads = g.backward(loss)?;
    collect_grads(&grads, bindings, params)
}

pub(crate) fn collect_grads(grads: &Gradients, bindings: &Bindings, params: &ParamStore) -> Result<ParamStore> {
    let mut out = ParamStore::new();
    for (name, t) in params.iter() {
        let v = bindings.var(name)?;
        let gt = match grads.get(v) {
            Some(gt) => Tensor::new(t.shape().to_vec(), gt.values().to_vec())?,
            None => Tensor::zeros(t.shape()),
        };
        out.blocks.insert(name.to_string(), gt);
    }
    Ok(out)
}
