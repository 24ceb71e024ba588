//! Central finite-difference gradient checking (64-bit only).
//!
//! The numerical side only ever runs forward passes, so it stays independent
//! of the backward rules it validates.

use crate::{ParamId, ParamStore, Result, Tape, Tensor, Var};

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    fn record(&mut self, at: (usize, usize), analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(e);
            if e >= self.max_rel_err {
                self.worst = Some(at);
            }
        }
    }
}

fn eval_scalar<G>(inputs: &[Tensor<f64>], f: &G) -> Result<f64>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Checks `d f / d inputs` for every element of every input.
pub fn check_leaves<G>(inputs: &[Tensor<f64>], f: G, step: f64) -> Result<GradCheckReport>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .leaf(*v)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let up = eval_scalar(&work, &f)?;
            work[i].data_mut()[j] = orig - step;
            let down = eval_scalar(&work, &f)?;
            work[i].data_mut()[j] = orig;
            report.record((i, j), analytic[j], (up - down) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Checks selected `(parameter, element)` entries of a parameter store.
pub fn check_params<G>(store: &ParamStore<f64>, probes: &[(ParamId, usize)], f: G, step: f64) -> Result<GradCheckReport>
where
    G: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let o = f(&mut t, s)?;
        Ok(t.value(o).item())
    };
    for &(id, j) in probes {
        let analytic = grads.param(id).map_or(0.0, |g| g.data()[j]);
        let orig = work.value(id).data()[j];
        work.get_mut(id).value.data_mut()[j] = orig + step;
        let up = eval(&work)?;
        work.get_mut(id).value.data_mut()[j] = orig - step;
        let down = eval(&work)?;
        work.get_mut(id).value.data_mut()[j] = orig;
        report.record((id.index(), j), analytic, (up - down) / (2.0 * step));
    }
    Ok(report)
}
