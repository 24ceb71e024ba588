use crate::gemm::gemm;
use crate::tape::{GradBufs, Op};
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

impl<F: Scalar> Tape<F> {
    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · b[n×k]ᵀ`, without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(TensorError::ShapeMismatch {
                op: if trans_b { "matmul_nt" } else { "matmul" },
                lhs: vec![m, k],
                rhs: vec![br, bc],
            });
        }
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), trans_b, &mut out, false);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, trans_b })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose2()?;
        self.push("transpose", t, Op::Transpose(x))
    }
}

pub(super) fn matmul_backward<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    av: Var,
    bv: Var,
    trans_b: bool,
    g: &[F],
    grads: &mut GradBufs<F>,
) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = g.len() / m;
    if let Some(ga) = grads.get(av) {
        // dA = G · Bᵀ, or G · B when B was supplied transposed.
        gemm(m, n, k, g, false, b.data(), !trans_b, ga, true);
    }
    if let Some(gb) = grads.get(bv) {
        if trans_b {
            // B is n×k: dB = Gᵀ · A
            gemm(n, m, k, g, true, a.data(), false, gb, true);
        } else {
            // B is k×n: dB = Aᵀ · G
            gemm(k, m, n, a.data(), true, g, false, gb, true);
        }
    }
}

pub(super) fn transpose_backward<F: Scalar>(out: &Tensor<F>, xv: Var, g: &[F], grads: &mut GradBufs<F>) {
    let (r, c) = (out.shape()[0], out.shape()[1]);
    if let Some(gx) = grads.get(xv) {
        // x is c×r
        for i in 0..r {
            for j in 0..c {
                gx[j * r + i] += g[i * c + j];
            }
        }
    }
}
