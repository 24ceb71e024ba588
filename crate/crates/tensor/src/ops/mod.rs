mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod shape;

pub use conv::{conv1d_output_len, conv_transpose1d_output_len};

use crate::tape::{GradBufs, Node, Op};
use crate::Scalar;

/// A fixed linear operator applied independently to every row of a tensor,
/// e.g. a resampling filter. The adjoint drives the backward pass.
pub trait LinearMap<F>: Send + Sync {
    fn output_len(&self, input_len: usize) -> usize;

    /// Writes `A x` into `out` (`out.len() == output_len(x.len())`).
    fn apply(&self, x: &[F], out: &mut [F]);

    /// Adds `Aᵀ g` into `out` (`out.len()` is the forward input length).
    fn apply_adjoint(&self, g: &[F], out: &mut [F]);
}

pub(crate) fn backward<F: Scalar>(op: &Op<F>, nodes: &[Node<F>], i: usize, g: &[F], grads: &mut GradBufs<F>) {
    let val = |v: crate::Var| &nodes[v.0].value;
    let out = &nodes[i].value;
    match op {
        Op::Constant | Op::Leaf | Op::Param(_) => {}
        Op::Add(a, b) => {
            grads.add(*a, g);
            grads.add(*b, g);
        }
        Op::Sub(a, b) => {
            grads.add(*a, g);
            if let Some(gb) = grads.get(*b) {
                gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y);
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            if let Some(ga) = grads.get(*a) {
                for ((x, &gy), &bv) in ga.iter_mut().zip(g).zip(vb) {
                    *x += gy * bv;
                }
            }
            if let Some(gb) = grads.get(*b) {
                for ((x, &gy), &av) in gb.iter_mut().zip(g).zip(va) {
                    *x += gy * av;
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(ga) = grads.get(*a) {
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *s);
            }
        }
        Op::AddRow(x, row) => elementwise::add_row_backward(val(*x), *x, *row, g, grads),
        Op::AddCol(x, col) => elementwise::add_col_backward(val(*x), *x, *col, g, grads),
        Op::Relu(x) => {
            if let Some(gx) = grads.get(*x) {
                for ((a, &gy), &y) in gx.iter_mut().zip(g).zip(out.data()) {
                    if y > F::zero() {
                        *a += gy;
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(gx) = grads.get(*x) {
                for ((a, &gy), &y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *a += gy * y * (F::one() - y);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(gx) = grads.get(*x) {
                for ((a, &gy), &y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *a += gy * (F::one() - y * y);
                }
            }
        }
        Op::Glu(x) => elementwise::glu_backward(val(*x), *x, g, grads),
        Op::Dropout(x, mask) => {
            if let Some(gx) = grads.get(*x) {
                for ((a, &gy), &m) in gx.iter_mut().zip(g).zip(mask) {
                    *a += gy * m;
                }
            }
        }
        Op::MatMul { a, b, trans_b } => linalg::matmul_backward(val(*a), val(*b), *a, *b, *trans_b, g, grads),
        Op::Transpose(x) => linalg::transpose_backward(out, *x, g, grads),
        Op::Conv1d {
            x,
            w,
            bias,
            stride,
            pad,
            cols,
        } => conv::conv1d_backward(val(*x), val(*w), out, (*x, *w, *bias), *stride, *pad, cols.as_deref(), g, grads),
        Op::ConvTranspose1d { x, w, bias, stride, pad } => {
            conv::conv_transpose1d_backward(val(*x), val(*w), out, (*x, *w, *bias), *stride, *pad, g, grads)
        }
        Op::Softmax(x) => norm::softmax_backward(out, *x, g, grads),
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => norm::layer_norm_backward(val(*gamma), (*x, *gamma, *beta), xhat, inv_std, g, grads),
        Op::GatherRows { x, ids } => shape::gather_rows_backward(val(*x), *x, ids, g, grads),
        Op::SliceRows { x, start } => shape::slice_rows_backward(val(*x), *x, *start, out, g, grads),
        Op::SliceCols { x, start } => shape::slice_cols_backward(val(*x), *x, *start, out, g, grads),
        Op::ConcatRows(vs) => shape::concat_rows_backward(nodes, vs, g, grads),
        Op::ConcatCols(vs) => shape::concat_cols_backward(nodes, vs, out, g, grads),
        Op::PadCols { x, left } => shape::pad_cols_backward(val(*x), *x, *left, out, g, grads),
        Op::Reshape(x) => grads.add(*x, g),
        Op::Sum(x) => {
            if let Some(gx) = grads.get(*x) {
                gx.iter_mut().for_each(|a| *a += g[0]);
            }
        }
        Op::Mean(x) => {
            let n = F::of(val(*x).len() as f64);
            if let Some(gx) = grads.get(*x) {
                gx.iter_mut().for_each(|a| *a += g[0] / n);
            }
        }
        Op::L1 { a, b } => reduce::l1_backward(val(*a), val(*b), *a, *b, g[0], grads),
        Op::Linear { x, map } => {
            let xv = val(*x);
            let cols_in = *xv.shape().last().unwrap_or(&1);
            let cols_out = *out.shape().last().unwrap_or(&1);
            if let Some(gx) = grads.get(*x) {
                for (gi, go) in gx.chunks_mut(cols_in).zip(g.chunks(cols_out)) {
                    map.apply_adjoint(go, gi);
                }
            }
        }
    }
}
