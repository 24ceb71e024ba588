use rand::Rng;

use crate::tape::{GradBufs, Op};
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

fn same_shape<F: Scalar>(tape: &Tape<F>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        });
    }
    Ok(())
}

fn zip_map<F: Scalar>(x: &Tensor<F>, y: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

impl<F: Scalar> Tape<F> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = F::of(s);
        let v = self.value(a).map(|x| x * s);
        self.push("scale", v, Op::Scale(a, s))
    }

    /// Adds the vector `row` (length = column count) to every row of `x`.
    pub fn add_broadcast_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if self.value(row).len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_broadcast_row",
                lhs: vec![r, c],
                rhs: self.shape(row).to_vec(),
            });
        }
        let b = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(c) {
            chunk.iter_mut().zip(b).for_each(|(a, &v)| *a += v);
        }
        self.push("add_broadcast_row", Tensor::from_parts(vec![r, c], data), Op::AddRow(x, row))
    }

    /// Adds `col[i]` to every element of row `i` of `x` (channel bias in a
    /// channels×time layout).
    pub fn add_broadcast_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if self.value(col).len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "add_broadcast_col",
                lhs: vec![r, c],
                rhs: self.shape(col).to_vec(),
            });
        }
        let b = self.value(col).data();
        let mut data = self.value(x).data().to_vec();
        for (chunk, &v) in data.chunks_mut(c).zip(b) {
            chunk.iter_mut().for_each(|a| *a += v);
        }
        self.push("add_broadcast_col", Tensor::from_parts(vec![r, c], data), Op::AddCol(x, col))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| if a > F::zero() { a } else { F::zero() });
        self.push("relu", v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.tanh());
        self.push("tanh", v, Op::Tanh(x))
    }

    /// Gated linear unit over the leading axis: `x[0..C] ⊙ σ(x[C..2C])`.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let lead = *shape.first().unwrap_or(&0);
        if shape.is_empty() || !lead.is_multiple_of(2) {
            return Err(TensorError::InvalidShape {
                op: "glu",
                shape,
                reason: "leading dimension must be even".into(),
            });
        }
        let half = xv.len() / 2;
        let (a, b) = xv.data().split_at(half);
        let data = a.iter().zip(b).map(|(&v, &gt)| v * sigmoid(gt)).collect();
        let mut out_shape = shape;
        out_shape[0] = lead / 2;
        self.push("glu", Tensor::from_parts(out_shape, data), Op::Glu(x))
    }

    /// Inverted dropout; `p == 0` records nothing and returns `x`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(TensorError::Contract(format!("dropout probability {p} must be < 1")));
        }
        let keep = F::of(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
            .collect();
        let v = zip_map(self.value(x), &Tensor::from_parts(self.shape(x).to_vec(), mask.clone()), |a, m| a * m);
        self.push("dropout", v, Op::Dropout(x, mask))
    }
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(a: F) -> F {
    if a >= F::zero() {
        F::one() / (F::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (F::one() + e)
    }
}

pub(super) fn add_row_backward<F: Scalar>(x: &Tensor<F>, xv: Var, row: Var, g: &[F], grads: &mut GradBufs<F>) {
    grads.add(xv, g);
    let c = *x.shape().last().unwrap_or(&1);
    if let Some(gr) = grads.get(row) {
        for chunk in g.chunks(c) {
            gr.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
        }
    }
}

pub(super) fn add_col_backward<F: Scalar>(x: &Tensor<F>, xv: Var, col: Var, g: &[F], grads: &mut GradBufs<F>) {
    grads.add(xv, g);
    let c = *x.shape().last().unwrap_or(&1);
    if let Some(gc) = grads.get(col) {
        for (a, chunk) in gc.iter_mut().zip(g.chunks(c)) {
            *a += chunk.iter().copied().sum();
        }
    }
}

pub(super) fn glu_backward<F: Scalar>(x: &Tensor<F>, xv: Var, g: &[F], grads: &mut GradBufs<F>) {
    let half = x.len() / 2;
    let (a, b) = x.data().split_at(half);
    if let Some(gx) = grads.get(xv) {
        let (ga, gb) = gx.split_at_mut(half);
        for i in 0..half {
            let s = sigmoid(b[i]);
            ga[i] += g[i] * s;
            gb[i] += g[i] * a[i] * s * (F::one() - s);
        }
    }
}
