use rand::Rng;
use vf_tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, TensorError, Var};

use crate::nn::Linear;
use crate::{CoreError, Result};

#[derive(Debug, Clone)]
struct LstmDirection {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    hidden: usize,
}

impl LstmDirection {
    fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add(format!("{name}.w_ih"), Tensor::uniform(vec![input, 4 * hidden], bound, rng))?;
        let w_hh = store.add(format!("{name}.w_hh"), Tensor::uniform(vec![hidden, 4 * hidden], bound, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![4 * hidden]))?;
        Ok(LstmDirection { w_ih, w_hh, bias, hidden })
    }

    /// Runs over the rows of `x: [T × in]`, returning `[T × hidden]`.
    fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var, reverse: bool) -> Result<Var> {
        let t_len = tape.shape(x)[0];
        let h = self.hidden;
        let (w_ih, w_hh, b) = (tape.param(store, self.w_ih), tape.param(store, self.w_hh), tape.param(store, self.bias));
        let gates_in = tape.matmul(x, w_ih)?;
        let gates_in = tape.add_broadcast_row(gates_in, b)?;
        let mut outputs = vec![None; t_len];
        let mut state: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
        for t in order {
            let mut g = tape.slice_rows(gates_in, t, 1)?;
            if let Some((h_prev, _)) = state {
                let rec = tape.matmul(h_prev, w_hh)?;
                g = tape.add(g, rec)?;
            }
            let i = tape.slice_cols(g, 0, h)?;
            let i = tape.sigmoid(i)?;
            let f = tape.slice_cols(g, h, h)?;
            let f = tape.sigmoid(f)?;
            let c_in = tape.slice_cols(g, 2 * h, h)?;
            let c_in = tape.tanh(c_in)?;
            let o = tape.slice_cols(g, 3 * h, h)?;
            let o = tape.sigmoid(o)?;
            let mut c = tape.mul(i, c_in)?;
            if let Some((_, c_prev)) = state {
                let keep = tape.mul(f, c_prev)?;
                c = tape.add(c, keep)?;
            }
            let c_act = tape.tanh(c)?;
            let h_t = tape.mul(o, c_act)?;
            outputs[t] = Some(h_t);
            state = Some((h_t, c));
        }
        let rows: Vec<Var> = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
        Ok(tape.concat_rows(&rows)?)
    }
}

/// Two-layer bidirectional LSTM over channel-concatenated audio and
/// frame-aligned video tokens, projected back to width `c`.
#[derive(Debug, Clone)]
pub struct RecurrentBottleneck {
    layers: Vec<(LstmDirection, LstmDirection)>,
    proj: Linear,
    pub width: usize,
    pub uses_video: bool,
}

impl RecurrentBottleneck {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        prefix: &str,
        c: usize,
        uses_video: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut input = if uses_video { 2 * c } else { c };
        let mut layers = Vec::new();
        for l in 0..2 {
            let fwd = LstmDirection::new(store, &format!("{prefix}.layer{l}.fwd"), input, c, rng)?;
            let bwd = LstmDirection::new(store, &format!("{prefix}.layer{l}.bwd"), input, c, rng)?;
            layers.push((fwd, bwd));
            input = 2 * c;
        }
        let proj = Linear::new(store, &format!("{prefix}.proj"), 2 * c, c, rng)?;
        Ok(RecurrentBottleneck { layers, proj, width: c, uses_video })
    }

    /// `audio: [t_a × c]`, `video: [t_v × c]` → `[t_a × c]`.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, audio: Var, video: Option<Var>) -> Result<Var> {
        let t_a = tape.shape(audio)[0];
        let mut x = match (self.uses_video, video) {
            (true, Some(v)) => {
                let idx = nearest_frames(t_a, tape.shape(v)[0]);
                let v_res = tape.gather_rows(v, &idx)?;
                if tape.shape(v_res)[0] != t_a {
                    return Err(TensorError::ShapeMismatch { op: "recurrent_bottleneck", lhs: tape.shape(audio).to_vec(), rhs: tape.shape(v_res).to_vec() }.into());
                }
                tape.concat_cols(&[audio, v_res])?
            }
            (true, None) => return Err(CoreError::InvalidInput("recurrent bottleneck expects video features".into())),
            (false, _) => audio,
        };
        for (fwd, bwd) in &self.layers {
            let f = fwd.forward(tape, store, x, false)?;
            let b = bwd.forward(tape, store, x, true)?;
            x = tape.concat_cols(&[f, b])?;
        }
        self.proj.forward(tape, store, x)
    }
}

/// Index of the nearest source frame for each of `target` evenly spaced
/// positions spanning the same duration.
pub fn nearest_frames(target: usize, source: usize) -> Vec<usize> {
    (0..target)
        .map(|i| (((i as f64 + 0.5) * source as f64 / target as f64).floor() as usize).min(source.saturating_sub(1)))
        .collect()
}
