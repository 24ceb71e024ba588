//! Computation tape and reverse-mode traversal.
//!
//! Every op appends a node holding its output value plus whatever it needs
//! for the backward pass. Inputs always precede outputs, so a single reverse
//! sweep over the node list visits each node once in topological order.

use std::collections::HashMap;
use std::sync::Arc;

use crate::ops::LinearMap;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<F: Scalar> {
    Constant,
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Glu(Var),
    Dropout(Var, Vec<F>),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Transpose(Var),
    Conv1d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        /// im2col buffer, `None` for pointwise kernels where it equals the input.
        cols: Option<Vec<F>>,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    GatherRows {
        x: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    PadCols {
        x: Var,
        left: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    L1 {
        a: Var,
        b: Var,
    },
    Linear {
        x: Var,
        map: Arc<dyn LinearMap<F>>,
    },
}

impl<F: Scalar> Op<F> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Constant | Leaf | Param(_) => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | AddCol(a, b) => vec![*a, *b],
            MatMul { a, b, .. } | L1 { a, b } => vec![*a, *b],
            Scale(x, _) | Relu(x) | Sigmoid(x) | Tanh(x) | Glu(x) | Dropout(x, _) | Transpose(x)
            | Softmax(x) | Reshape(x) | Sum(x) | Mean(x) => vec![*x],
            GatherRows { x, .. } | SliceRows { x, .. } | SliceCols { x, .. } | PadCols { x, .. } => {
                vec![*x]
            }
            Linear { x, .. } => vec![*x],
            Conv1d { x, w, bias, .. } | ConvTranspose1d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias.iter().copied());
                v
            }
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            ConcatRows(vs) | ConcatCols(vs) => vs.clone(),
        }
    }
}

pub(crate) struct Node<F: Scalar> {
    pub(crate) value: Tensor<F>,
    pub(crate) op: Op<F>,
    pub(crate) requires_grad: bool,
}

/// Records one forward pass. Consumed by [`Tape::backward`].
///
/// A tape is single-threaded; independent forward passes use independent
/// tapes.
pub struct Tape<F: Scalar> {
    pub(crate) nodes: Vec<Node<F>>,
    params: HashMap<ParamId, Var>,
    check_finite: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            check_finite: false,
        }
    }

    /// When enabled every op fails with [`TensorError::NonFinite`] as soon
    /// as it produces NaN or infinity.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A requires-grad leaf; its gradient is reported by [`Gradients::leaf`].
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter. Repeated calls for the same id share one node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(id),
            requires_grad: p.requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub(crate) fn push(&mut self, name: &'static str, value: Tensor<F>, op: Op<F>) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Consumes the tape. Parameter gradients are keyed by [`ParamId`] and
    /// are meant to be added into the store with
    /// [`ParamStore::accumulate`].
    pub fn backward(self, loss: Var) -> Result<Gradients<F>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads = GradBufs {
            bufs: (0..=loss.0).map(|_| None).collect(),
            nodes: &self.nodes,
        };
        let mut out = Gradients::default();
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        grads.bufs[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads.bufs[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Leaf => {
                    out.leaves
                        .insert(i, Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Op::Param(id) => {
                    out.params
                        .insert(*id, Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                op => crate::ops::backward(op, &self.nodes, i, &g, &mut grads),
            }
        }
        Ok(out)
    }
}

pub(crate) struct GradBufs<'a, F: Scalar> {
    bufs: Vec<Option<Vec<F>>>,
    nodes: &'a [Node<F>],
}

impl<F: Scalar> GradBufs<'_, F> {
    /// Mutable gradient buffer for `v`, or `None` when `v` needs no gradient.
    pub(crate) fn get(&mut self, v: Var) -> Option<&mut [F]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(self.bufs[v.0].get_or_insert_with(|| vec![F::zero(); n]))
    }

    pub(crate) fn add(&mut self, v: Var, g: &[F]) {
        if let Some(buf) = self.get(v) {
            for (a, &b) in buf.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}
