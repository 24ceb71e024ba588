//! 1-D convolution and its adjoint over a channels×time layout.
//!
//! Both directions go through im2col: column `(c, k)` at time `t` holds the
//! input sample `c` at position `t·stride + k − pad` (zero outside).

use crate::gemm::gemm;
use crate::tape::{GradBufs, Op};
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

/// `floor((len + 2·pad − kernel) / stride) + 1`, or `None` when the padded
/// input is shorter than the kernel.
pub fn conv1d_output_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// `(len − 1)·stride − 2·pad + kernel`, or `None` when negative or zero.
pub fn conv_transpose1d_output_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let full = (len.checked_sub(1)? * stride + kernel) as isize - 2 * pad as isize;
    (full > 0).then_some(full as usize)
}

/// cols[(c·K + k)·t_cols + t] = x[c, t·s + k − p]
#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(x: &[F], channels: usize, len: usize, kernel: usize, stride: usize, pad: usize, t_cols: usize) -> Vec<F> {
    let mut cols = vec![F::zero(); channels * kernel * t_cols];
    for c in 0..channels {
        let xs = &x[c * len..(c + 1) * len];
        for k in 0..kernel {
            let row = &mut cols[(c * kernel + k) * t_cols..(c * kernel + k + 1) * t_cols];
            for (t, slot) in row.iter_mut().enumerate() {
                let pos = (t * stride + k) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    *slot = xs[pos as usize];
                }
            }
        }
    }
    cols
}

/// Scatter-add inverse of [`im2col`] into `out` (`channels × len`).
#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(cols: &[F], channels: usize, len: usize, kernel: usize, stride: usize, pad: usize, t_cols: usize, out: &mut [F]) {
    for c in 0..channels {
        let os = &mut out[c * len..(c + 1) * len];
        for k in 0..kernel {
            let row = &cols[(c * kernel + k) * t_cols..(c * kernel + k + 1) * t_cols];
            for (t, &v) in row.iter().enumerate() {
                let pos = (t * stride + k) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    os[pos as usize] += v;
                }
            }
        }
    }
}

fn is_pointwise(kernel: usize, stride: usize, pad: usize) -> bool {
    kernel == 1 && stride == 1 && pad == 0
}

impl<F: Scalar> Tape<F> {
    /// `x[C_in×T] ⊛ w[C_out×C_in×K] (+ bias[C_out])` with zero padding.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (cin, len) = self.value(x).dims2()?;
        let (cout, wcin, kernel) = self.value(w).dims3()?;
        if wcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: vec![cin, len],
                rhs: vec![cout, wcin, kernel],
            });
        }
        check_bias(self, "conv1d", bias, cout)?;
        let t_out = conv1d_output_len(len, kernel, stride, pad).ok_or(TensorError::InputTooShort {
            op: "conv1d",
            len,
            pad,
            kernel,
        })?;
        let cols = (!is_pointwise(kernel, stride, pad))
            .then(|| im2col(self.value(x).data(), cin, len, kernel, stride, pad, t_out));
        let mut out = vec![F::zero(); cout * t_out];
        {
            let src = cols.as_deref().unwrap_or(self.value(x).data());
            gemm(cout, cin * kernel, t_out, self.value(w).data(), false, src, false, &mut out, false);
        }
        add_bias(self, bias, &mut out, t_out);
        self.push(
            "conv1d",
            Tensor::from_parts(vec![cout, t_out], out),
            Op::Conv1d {
                x,
                w,
                bias,
                stride,
                pad,
                cols,
            },
        )
    }

    /// Adjoint of [`Tape::conv1d`]: `x[C_in×T]` with `w[C_in×C_out×K]`
    /// gives `C_out × ((T−1)·s − 2p + K)`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (cin, len) = self.value(x).dims2()?;
        let (wcin, cout, kernel) = self.value(w).dims3()?;
        if wcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose1d",
                lhs: vec![cin, len],
                rhs: vec![wcin, cout, kernel],
            });
        }
        check_bias(self, "conv_transpose1d", bias, cout)?;
        let t_out = conv_transpose1d_output_len(len, kernel, stride, pad).ok_or_else(|| TensorError::InvalidShape {
            op: "conv_transpose1d",
            shape: vec![cin, len],
            reason: format!("output length for kernel {kernel}, stride {stride}, padding {pad} is not positive"),
        })?;
        let mut out = vec![F::zero(); cout * t_out];
        if is_pointwise(kernel, stride, pad) {
            gemm(cout, cin, len, self.value(w).data(), true, self.value(x).data(), false, &mut out, false);
        } else {
            let mut cols = vec![F::zero(); cout * kernel * len];
            gemm(cout * kernel, cin, len, self.value(w).data(), true, self.value(x).data(), false, &mut cols, false);
            col2im(&cols, cout, t_out, kernel, stride, pad, len, &mut out);
        }
        add_bias(self, bias, &mut out, t_out);
        self.push(
            "conv_transpose1d",
            Tensor::from_parts(vec![cout, t_out], out),
            Op::ConvTranspose1d { x, w, bias, stride, pad },
        )
    }
}

fn check_bias<F: Scalar>(tape: &Tape<F>, op: &'static str, bias: Option<Var>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        if tape.value(b).len() != cout {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: vec![cout],
                rhs: tape.shape(b).to_vec(),
            });
        }
    }
    Ok(())
}

fn add_bias<F: Scalar>(tape: &Tape<F>, bias: Option<Var>, out: &mut [F], t_out: usize) {
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_mut(t_out).zip(tape.value(b).data()) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_backward<F: Scalar>(bias: Option<Var>, g: &[F], t_out: usize, grads: &mut GradBufs<F>) {
    if let Some(b) = bias {
        if let Some(gb) = grads.get(b) {
            for (a, row) in gb.iter_mut().zip(g.chunks(t_out)) {
                *a += row.iter().copied().sum();
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv1d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    out: &Tensor<F>,
    (xv, wv, bias): (Var, Var, Option<Var>),
    stride: usize,
    pad: usize,
    cols: Option<&[F]>,
    g: &[F],
    grads: &mut GradBufs<F>,
) {
    let (cin, len) = (x.shape()[0], x.shape()[1]);
    let (cout, _, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let t_out = out.shape()[1];
    bias_backward(bias, g, t_out, grads);
    if let Some(gw) = grads.get(wv) {
        let src = cols.unwrap_or(x.data());
        gemm(cout, t_out, cin * kernel, g, false, src, true, gw, true);
    }
    if let Some(gx) = grads.get(xv) {
        if cols.is_none() {
            gemm(cin, cout, len, w.data(), true, g, false, gx, true);
        } else {
            let mut dcols = vec![F::zero(); cin * kernel * t_out];
            gemm(cin * kernel, cout, t_out, w.data(), true, g, false, &mut dcols, false);
            col2im(&dcols, cin, len, kernel, stride, pad, t_out, gx);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv_transpose1d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    out: &Tensor<F>,
    (xv, wv, bias): (Var, Var, Option<Var>),
    stride: usize,
    pad: usize,
    g: &[F],
    grads: &mut GradBufs<F>,
) {
    let (cin, len) = (x.shape()[0], x.shape()[1]);
    let (cout, kernel) = (w.shape()[1], w.shape()[2]);
    let t_out = out.shape()[1];
    bias_backward(bias, g, t_out, grads);
    let pointwise = is_pointwise(kernel, stride, pad);
    let dcols_owned;
    let dcols: &[F] = if pointwise {
        g
    } else {
        dcols_owned = im2col(g, cout, t_out, kernel, stride, pad, len);
        &dcols_owned
    };
    if let Some(gw) = grads.get(wv) {
        gemm(cin, len, cout * kernel, x.data(), false, dcols, true, gw, true);
    }
    if let Some(gx) = grads.get(xv) {
        gemm(cin, cout * kernel, len, w.data(), false, dcols, false, gx, true);
    }
}
