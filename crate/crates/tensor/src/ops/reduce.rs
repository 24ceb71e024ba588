use std::sync::Arc;

use super::LinearMap;
use crate::tape::{GradBufs, Op};
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

impl<F: Scalar> Tape<F> {
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.sum() / F::of(v.len() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean absolute difference. The subgradient at exact ties is zero.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(TensorError::ShapeMismatch {
                op: "l1_loss",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let n = F::of(self.value(a).len() as f64);
        let s: F = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        self.push("l1_loss", Tensor::scalar(s / n), Op::L1 { a, b })
    }

    /// Applies `map` to every row of `x`.
    pub fn linear_map(&mut self, x: Var, map: Arc<dyn LinearMap<F>>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = match xv.shape() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            s => {
                return Err(TensorError::InvalidShape {
                    op: "linear_map",
                    shape: s.to_vec(),
                    reason: "expected rank 1 or 2".into(),
                })
            }
        };
        let out_len = map.output_len(cols);
        if out_len == 0 {
            return Err(TensorError::InvalidShape {
                op: "linear_map",
                shape: xv.shape().to_vec(),
                reason: "operator produces an empty output".into(),
            });
        }
        let mut out = vec![F::zero(); rows * out_len];
        for (src, dst) in xv.data().chunks(cols).zip(out.chunks_mut(out_len)) {
            map.apply(src, dst);
        }
        let shape = if xv.rank() == 1 { vec![out_len] } else { vec![rows, out_len] };
        self.push("linear_map", Tensor::from_parts(shape, out), Op::Linear { x, map })
    }
}

pub(super) fn l1_backward<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, av: Var, bv: Var, g0: F, grads: &mut GradBufs<F>) {
    let n = F::of(a.len() as f64);
    let k = g0 / n;
    let sign = |x: F, y: F| {
        if x > y {
            k
        } else if x < y {
            -k
        } else {
            F::zero()
        }
    };
    if let Some(ga) = grads.get(av) {
        for ((g, &x), &y) in ga.iter_mut().zip(a.data()).zip(b.data()) {
            *g += sign(x, y);
        }
    }
    if let Some(gb) = grads.get(bv) {
        for ((g, &x), &y) in gb.iter_mut().zip(a.data()).zip(b.data()) {
            *g -= sign(x, y);
        }
    }
}
