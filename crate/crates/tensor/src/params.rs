use std::collections::{BTreeMap, HashMap};

use crate::{Result, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Option<Tensor<F>>,
    /// Frozen parameters are recorded as constants on the tape.
    pub requires_grad: bool,
}

/// Named parameter collection owned by a model.
///
/// Insertion order is stable and defines checkpoint order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: None,
            requires_grad: true,
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<F>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Sets `requires_grad` on every parameter whose name matches `pred`.
    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool, trainable: bool) {
        for p in &mut self.params {
            if pred(&p.name) {
                p.requires_grad = trainable;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the parameter gradients of a finished backward pass.
    pub fn accumulate(&mut self, grads: &Gradients<F>) {
        for (&id, g) in &grads.params {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => p.grad = Some(g.clone()),
            }
        }
    }

    /// Converts every value to another precision; gradients are dropped.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                    requires_grad: p.requires_grad,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Replaces values from `(name, tensor)` pairs; every stored parameter
    /// must be present with a matching shape. Extra entries are returned.
    pub fn load_values(&mut self, entries: Vec<(String, Tensor<F>)>) -> Result<Vec<(String, Tensor<F>)>> {
        let mut seen = vec![false; self.params.len()];
        let mut extra = Vec::new();
        for (name, t) in entries {
            match self.by_name.get(&name) {
                Some(&id) => {
                    let p = &mut self.params[id.0];
                    if p.value.shape() != t.shape() {
                        return Err(TensorError::ShapeMismatch {
                            op: "load_values",
                            lhs: p.value.shape().to_vec(),
                            rhs: t.shape().to_vec(),
                        });
                    }
                    p.value = t;
                    seen[id.0] = true;
                }
                None => extra.push((name, t)),
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(TensorError::Format(format!(
                "checkpoint is missing parameter `{}`",
                self.params[i].name
            )));
        }
        Ok(extra)
    }
}

/// Result of a backward pass: gradients of requires-grad leaves and of
/// parameters recorded on the tape.
#[derive(Clone, Debug, Default)]
pub struct Gradients<F> {
    pub(crate) leaves: HashMap<usize, Tensor<F>>,
    pub(crate) params: BTreeMap<ParamId, Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn leaf(&self, v: crate::Var) -> Option<&Tensor<F>> {
        self.leaves.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    /// Adds another gradient set (same tape layout not required).
    pub fn merge(&mut self, other: Gradients<F>) {
        for (id, g) in other.params {
            match self.params.get_mut(&id) {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.params.insert(id, g);
                }
            }
        }
    }
}
