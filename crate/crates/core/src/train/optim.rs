//! Adam with decoupled weight decay, a plateau learning-rate schedule and
//! the separation-then-denoising curriculum.

use serde::{Deserialize, Serialize};
use vf_tensor::{ParamStore, Scalar, Tensor};

use crate::data::Task;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub hp: AdamParams,
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(store: &ParamStore<F>, hp: AdamParams) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamW { hp, step: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update from the accumulated gradients divided by
    /// `grad_scale`. Frozen parameters and those without a gradient are left
    /// untouched; their moments do not advance.
    pub fn update(&mut self, store: &mut ParamStore<F>, lr: f64, grad_scale: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(CoreError::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamParams { beta1, beta2, eps, weight_decay } = self.hp;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, p) in store.iter_mut() {
            if !p.requires_grad {
                continue;
            }
            let Some(g) = &p.grad else { continue };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let g = g.as_f64() / grad_scale;
                let mi = beta1 * m.as_f64() + (1.0 - beta1) * g;
                let vi = beta2 * v.as_f64() + (1.0 - beta2) * g * g;
                *m = F::of(mi);
                *v = F::of(vi);
                let wf = w.as_f64();
                let upd = (mi / bc1) / ((vi / bc2).sqrt() + eps) + weight_decay * wf;
                *w = F::of(wf - lr * upd);
            }
        }
        Ok(())
    }
}

/// L2 norm of the accumulated gradients divided by `grad_scale`.
pub fn grad_norm<F: Scalar>(store: &ParamStore<F>, grad_scale: f64) -> f64 {
    store
        .iter()
        .filter_map(|(_, p)| p.grad.as_ref())
        .flat_map(|g| g.data().iter().map(|v| (v.as_f64() / grad_scale).powi(2)))
        .sum::<f64>()
        .sqrt()
}

/// Multiplies the learning rate by `factor` once validation loss has failed
/// to improve for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(CoreError::Config(format!("lr decay factor must lie in (0, 1), got {factor}")));
        }
        Ok(Plateau { factor, patience, best: None, bad_epochs: 0 })
    }

    /// Records one validation loss and returns the new learning rate.
    pub fn observe(&mut self, val_loss: f64, lr: f64) -> f64 {
        match self.best {
            Some(b) if val_loss >= b => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience.max(1) {
                    self.bad_epochs = 0;
                    return lr * self.factor;
                }
                lr
            }
            _ => {
                self.best = Some(val_loss);
                self.bad_epochs = 0;
                lr
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub task: Task,
    pub epochs: usize,
}

/// Per-epoch task list; separation stages must precede denoising stages.
pub fn curriculum(stages: &[Stage]) -> Result<Vec<Task>> {
    let schedule: Vec<Task> = stages.iter().flat_map(|s| std::iter::repeat_n(s.task, s.epochs)).collect();
    if schedule.is_empty() {
        return Err(CoreError::Config("curriculum has no epochs".into()));
    }
    if let Some(w) = schedule.windows(2).find(|w| w[0] == Task::Denoising && w[1] == Task::Separation) {
        return Err(CoreError::Config(format!(
            "curriculum runs {} after {}; separation must come first",
            w[1].as_str(),
            w[0].as_str()
        )));
    }
    Ok(schedule)
}

/// Epoch indices where the task changes (including epoch 0).
pub fn stage_boundaries(schedule: &[Task]) -> Vec<(usize, Task)> {
    schedule
        .iter()
        .enumerate()
        .filter(|(i, t)| *i == 0 || schedule[i - 1] != **t)
        .map(|(i, t)| (i, *t))
        .collect()
}
