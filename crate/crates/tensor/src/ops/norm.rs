use crate::tape::{GradBufs, Op};
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

impl<F: Scalar> Tape<F> {
    /// Softmax over the last axis, stabilized by subtracting the row max.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = *xv.shape().last().unwrap_or(&1);
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut s = F::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let shape = xv.shape().to_vec();
        self.push("softmax", Tensor::from_parts(shape, data), Op::Softmax(x))
    }

    /// Per-row normalization of `x[R×C]` followed by `γ ⊙ x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(TensorError::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (r, c) = self.value(x).dims2()?;
        for p in [gamma, beta] {
            if self.value(p).len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: vec![r, c],
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let eps = F::of(eps);
        let n = F::of(c as f64);
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in self.value(x).data().chunks(c) {
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * gv[j] + bv[j]);
            }
        }
        self.push(
            "layer_norm",
            Tensor::from_parts(vec![r, c], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }
}

pub(super) fn softmax_backward<F: Scalar>(y: &Tensor<F>, xv: Var, g: &[F], grads: &mut GradBufs<F>) {
    let c = *y.shape().last().unwrap_or(&1);
    if let Some(gx) = grads.get(xv) {
        for ((gxr, yr), gr) in gx.chunks_mut(c).zip(y.data().chunks(c)).zip(g.chunks(c)) {
            let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            for j in 0..c {
                gxr[j] += yr[j] * (gr[j] - dot);
            }
        }
    }
}

pub(super) fn layer_norm_backward<F: Scalar>(
    gamma: &Tensor<F>,
    (xv, gv, bv): (Var, Var, Var),
    xhat: &[F],
    inv_std: &[F],
    g: &[F],
    grads: &mut GradBufs<F>,
) {
    let c = gamma.len();
    let n = F::of(c as f64);
    if let Some(gg) = grads.get(gv) {
        for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
            for j in 0..c {
                gg[j] += gr[j] * hr[j];
            }
        }
    }
    if let Some(gb) = grads.get(bv) {
        for gr in g.chunks(c) {
            gb.iter_mut().zip(gr).for_each(|(a, &b)| *a += b);
        }
    }
    if let Some(gx) = grads.get(xv) {
        let gam = gamma.data();
        let mut dh = vec![F::zero(); c];
        for (i, (gr, hr)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
            let mut s1 = F::zero();
            let mut s2 = F::zero();
            for j in 0..c {
                dh[j] = gr[j] * gam[j];
                s1 += dh[j];
                s2 += dh[j] * hr[j];
            }
            let k = inv_std[i] / n;
            let gxr = &mut gx[i * c..(i + 1) * c];
            for j in 0..c {
                gxr[j] += k * (n * dh[j] - s1 - hr[j] * s2);
            }
        }
    }
}
