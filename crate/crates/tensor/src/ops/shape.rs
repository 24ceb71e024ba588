use crate::tape::{GradBufs, Node, Op};
use crate::{Result, Scalar, Tape, Tensor, TensorError, Var};

impl<F: Scalar> Tape<F> {
    /// Row gather from `table[V×C]`; backward scatter-adds into the table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, c) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(TensorError::Contract("gather_rows with no indices".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                size: v,
            });
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        self.push(
            "gather_rows",
            Tensor::from_parts(vec![ids.len(), c], data),
            Op::GatherRows {
                x: table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Alias of [`Tape::gather_rows`] under its embedding name.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if len == 0 || start + len > r {
            return Err(TensorError::InvalidShape {
                op: "slice_rows",
                shape: vec![r, c],
                reason: format!("rows {start}..{} out of range", start + len),
            });
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        self.push("slice_rows", Tensor::from_parts(vec![len, c], data), Op::SliceRows { x, start })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if len == 0 || start + len > c {
            return Err(TensorError::InvalidShape {
                op: "slice_cols",
                shape: vec![r, c],
                reason: format!("columns {start}..{} out of range", start + len),
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for row in self.value(x).data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        self.push("slice_cols", Tensor::from_parts(vec![r, len], data), Op::SliceCols { x, start })
    }

    /// Stacks rank-2 tensors with equal column counts.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::Contract("concat_rows needs at least one input".into()))?;
        let (_, c) = self.value(*first).dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &v in xs {
            let (r, cv) = self.value(v).dims2()?;
            if cv != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(*first).to_vec(),
                    rhs: self.shape(v).to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(self.value(v).data());
        }
        self.push("concat_rows", Tensor::from_parts(vec![rows, c], data), Op::ConcatRows(xs.to_vec()))
    }

    /// Joins rank-2 tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::Contract("concat_cols needs at least one input".into()))?;
        let (r, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let (rv, c) = self.value(v).dims2()?;
            if rv != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(*first).to_vec(),
                    rhs: self.shape(v).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&v, &c) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(v).data()[i * c..(i + 1) * c]);
            }
        }
        self.push("concat_cols", Tensor::from_parts(vec![r, total], data), Op::ConcatCols(xs.to_vec()))
    }

    /// Zero-pads the column (time) axis.
    pub fn pad_cols(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if left == 0 && right == 0 {
            return Ok(x);
        }
        let w = c + left + right;
        let mut data = vec![F::zero(); r * w];
        for (dst, src) in data.chunks_mut(w).zip(self.value(x).data().chunks(c)) {
            dst[left..left + c].copy_from_slice(src);
        }
        self.push("pad_cols", Tensor::from_parts(vec![r, w], data), Op::PadCols { x, left })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", t, Op::Reshape(x))
    }
}

pub(super) fn gather_rows_backward<F: Scalar>(t: &Tensor<F>, tv: Var, ids: &[usize], g: &[F], grads: &mut GradBufs<F>) {
    let c = t.shape()[1];
    if let Some(gt) = grads.get(tv) {
        for (k, &i) in ids.iter().enumerate() {
            let src = &g[k * c..(k + 1) * c];
            gt[i * c..(i + 1) * c].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
        }
    }
}

pub(super) fn slice_rows_backward<F: Scalar>(x: &Tensor<F>, xv: Var, start: usize, out: &Tensor<F>, g: &[F], grads: &mut GradBufs<F>) {
    let c = x.shape()[1];
    let len = out.shape()[0];
    if let Some(gx) = grads.get(xv) {
        gx[start * c..(start + len) * c].iter_mut().zip(g).for_each(|(a, &b)| *a += b);
    }
}

pub(super) fn slice_cols_backward<F: Scalar>(x: &Tensor<F>, xv: Var, start: usize, out: &Tensor<F>, g: &[F], grads: &mut GradBufs<F>) {
    let c = x.shape()[1];
    let len = out.shape()[1];
    if let Some(gx) = grads.get(xv) {
        for (dst, src) in gx.chunks_mut(c).zip(g.chunks(len)) {
            dst[start..start + len].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
        }
    }
}

pub(super) fn concat_rows_backward<F: Scalar>(nodes: &[Node<F>], vs: &[Var], g: &[F], grads: &mut GradBufs<F>) {
    let mut off = 0;
    for &v in vs {
        let n = nodes[v.0].value.len();
        grads.add(v, &g[off..off + n]);
        off += n;
    }
}

pub(super) fn concat_cols_backward<F: Scalar>(nodes: &[Node<F>], vs: &[Var], out: &Tensor<F>, g: &[F], grads: &mut GradBufs<F>) {
    let (r, total) = (out.shape()[0], out.shape()[1]);
    let mut off = 0;
    for &v in vs {
        let c = nodes[v.0].value.shape()[1];
        if let Some(gv) = grads.get(v) {
            for i in 0..r {
                let src = &g[i * total + off..i * total + off + c];
                gv[i * c..(i + 1) * c].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
            }
        }
        off += c;
    }
}

pub(super) fn pad_cols_backward<F: Scalar>(x: &Tensor<F>, xv: Var, left: usize, out: &Tensor<F>, g: &[F], grads: &mut GradBufs<F>) {
    let c = x.shape()[1];
    let w = out.shape()[1];
    if let Some(gx) = grads.get(xv) {
        for (dst, src) in gx.chunks_mut(c).zip(g.chunks(w)) {
            dst.iter_mut().zip(&src[left..left + c]).for_each(|(a, &b)| *a += b);
        }
    }
}
