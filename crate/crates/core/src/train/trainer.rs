//! Training configuration, the single-writer update loop and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vf_tensor::checkpoint::{load_checkpoint, save_checkpoint, Precision};
use vf_tensor::{Gradients, ParamStore, Scalar, Tape, Tensor};

use super::optim::{curriculum, grad_norm, stage_boundaries, AdamParams, AdamW, Plateau, Stage};
use crate::conditioning::Lexicon;
use crate::data::{inject_av_offset, length_bucket_batches, stream_rng, MixtureSample, Task};
use crate::error::{CoreError, Result};
use crate::model::{ForwardOptions, ModelConfig, ModelInput, SeparationModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainPrecision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub curriculum: Vec<Stage>,
    pub precision: TrainPrecision,
    /// Parameter-name prefixes excluded from updates.
    pub freeze: Vec<String>,
    /// Parameters loaded by name before training starts.
    pub init_checkpoint: Option<PathBuf>,
    /// Freezes every parameter taken from `init_checkpoint`.
    pub freeze_loaded: bool,
    /// Epochs of recurrent-bottleneck pretraining before the Transformer.
    pub pretrain_recurrent_epochs: usize,
    /// Training samples get a uniform random audio offset within +/- this.
    pub offset_augment_ms: f64,
    pub checkpoint_every: usize,
    /// Worker threads for per-sample gradients; `None` uses every core.
    pub workers: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            weight_decay: 1e-4,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau_patience: 1,
            lr_decay: 0.8,
            max_steps: None,
            seed: 0,
            curriculum: vec![Stage { task: Task::Separation, epochs: 3 }, Stage { task: Task::Denoising, epochs: 1 }],
            precision: TrainPrecision::F32,
            freeze: Vec::new(),
            init_checkpoint: None,
            freeze_loaded: false,
            pretrain_recurrent_epochs: 0,
            offset_augment_ms: 0.0,
            checkpoint_every: 1,
            workers: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(CoreError::Config("Adam needs 0 <= beta < 1 and eps > 0".into()));
        }
        if !(0.0..=crate::data::MAX_OFFSET_MS).contains(&self.offset_augment_ms) {
            return Err(CoreError::Config(format!("offset_augment_ms must lie in [0, 400], got {}", self.offset_augment_ms)));
        }
        Plateau::new(self.lr_decay, self.plateau_patience)?;
        curriculum(&self.curriculum)?;
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }
}

/// Everything besides parameters and moments needed to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub plateau: Plateau,
    pub best_val: Option<f64>,
}

/// Sidecar written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub state: TrainState,
    pub optimizer_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub task: Task,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task: Task,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// `(epoch, step, task)` at each curriculum stage start.
    pub stage_starts: Vec<(usize, u64, Task)>,
}

/// Mixtures available to each curriculum stage.
#[derive(Debug, Clone, Default)]
pub struct StageData {
    pub separation: Option<(Vec<MixtureSample>, Vec<MixtureSample>)>,
    pub denoising: Option<(Vec<MixtureSample>, Vec<MixtureSample>)>,
}

impl StageData {
    pub fn for_task(&self, task: Task) -> Result<&(Vec<MixtureSample>, Vec<MixtureSample>)> {
        let d = match task {
            Task::Separation => &self.separation,
            Task::Denoising => &self.denoising,
        };
        d.as_ref().ok_or_else(|| CoreError::Config(format!("curriculum needs {} data but none was provided", task.as_str())))
    }
}

pub struct Trainer<F: Scalar> {
    pub model: SeparationModel,
    pub store: ParamStore<F>,
    pub optimizer: AdamW<F>,
    pub cfg: TrainConfig,
    pub state: TrainState,
    pub lexicon: Lexicon,
}

/// Owned conditioning for one sample.
struct Prepared {
    phonemes: Option<crate::conditioning::PhonemeSequence>,
}

fn model_input<'a>(s: &'a MixtureSample, p: &'a Prepared) -> ModelInput<'a> {
    ModelInput { mixture: &s.mixture, video: s.features.as_ref(), phonemes: p.phonemes.as_ref() }
}

impl<F: Scalar> Trainer<F> {
    pub fn new(model: SeparationModel, mut store: ParamStore<F>, cfg: TrainConfig, lexicon: Lexicon) -> Result<Self> {
        cfg.validate()?;
        for prefix in &cfg.freeze {
            store.set_trainable(|n| n.starts_with(prefix.as_str()), false);
        }
        let optimizer = AdamW::new(&store, cfg.adam());
        let state = TrainState { step: 0, epoch: 0, lr: cfg.lr, plateau: Plateau::new(cfg.lr_decay, cfg.plateau_patience)?, best_val: None };
        Ok(Trainer { model, store, optimizer, cfg, state, lexicon })
    }

    /// Fresh model from `model_cfg`, seeded by the training seed.
    pub fn init(model_cfg: &ModelConfig, cfg: TrainConfig, lexicon: Lexicon) -> Result<Self> {
        let (model, store) = SeparationModel::init::<F>(model_cfg, cfg.seed)?;
        let mut t = Self::new(model, store, cfg, lexicon)?;
        if let Some(path) = t.cfg.init_checkpoint.clone() {
            let loaded = load_matching(&mut t.store, &path)?;
            if t.cfg.freeze_loaded {
                t.store.set_trainable(|n| loaded.iter().any(|l| l == n), false);
            }
        }
        Ok(t)
    }

    fn loss_and_grads(&self, sample: &MixtureSample, dropout_seed: Option<u64>) -> Result<(f64, Gradients<F>)> {
        let prepared = Prepared { phonemes: if self.model.cfg.modalities.text() { sample.phonemes(&self.lexicon) } else { None } };
        let mut rng = dropout_seed.map(|s| stream_rng(self.cfg.seed ^ 0x5eed, s));
        let mut tape = Tape::new().with_finite_checks(false);
        let out = self.model.forward(&mut tape, &self.store, &model_input(sample, &prepared), ForwardOptions { rng: rng.as_mut(), capture_attention: false })?;
        let target = Tensor::new(vec![1, sample.target.len()], sample.target.iter().map(|&v| F::of(v as f64)).collect())?;
        let target = tape.constant(target);
        let loss = tape.l1_loss(out.estimate, target)?;
        let value = tape.value(loss).item().as_f64();
        Ok((value, tape.backward(loss)?))
    }

    /// Mean L1 loss over `samples` without dropout.
    pub fn eval_loss(&self, samples: &[MixtureSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(CoreError::InvalidInput("no samples to evaluate".into()));
        }
        let mut total = 0.0;
        for s in samples {
            let prepared = Prepared { phonemes: if self.model.cfg.modalities.text() { s.phonemes(&self.lexicon) } else { None } };
            let est = self.model.separate(&self.store, &model_input(s, &prepared))?;
            total += est.iter().zip(&s.target).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / s.len() as f64;
        }
        Ok(total / samples.len() as f64)
    }

    /// One update on `batch`: per-sample gradients (possibly in parallel),
    /// summed in batch order, then a single AdamW step.
    pub fn train_step(&mut self, batch: &[MixtureSample]) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(CoreError::InvalidInput("empty batch".into()));
        }
        let base = self.state.step * batch.len() as u64;
        let run = |(i, s): (usize, &MixtureSample)| self.loss_and_grads(s, Some(base + i as u64));
        let results: Vec<Result<(f64, Gradients<F>)>> = match self.cfg.workers {
            Some(1) => batch.iter().enumerate().map(run).collect(),
            _ => batch.par_iter().enumerate().map(run).collect(),
        };
        self.store.zero_grad();
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            self.store.accumulate(&g);
        }
        let n = batch.len() as f64;
        loss /= n;
        let gn = grad_norm(&self.store, n);
        if !loss.is_finite() || !gn.is_finite() {
            return Err(CoreError::NumericalAbort { step: self.state.step, loss, lr: self.state.lr, grad_norm: gn });
        }
        self.optimizer.update(&mut self.store, self.state.lr, n)?;
        self.store.zero_grad();
        self.state.step += 1;
        Ok((loss, gn))
    }

    fn augment(&self, s: &MixtureSample, index: u64) -> Result<MixtureSample> {
        if self.cfg.offset_augment_ms <= 0.0 {
            return Ok(s.clone());
        }
        let mut rng = stream_rng(self.cfg.seed ^ 0x0ff5e7, index);
        let ms = rng.gen_range(-self.cfg.offset_augment_ms..=self.cfg.offset_augment_ms).round();
        inject_av_offset(s, ms)
    }

    /// Runs the curriculum from the current epoch. Checkpoints go to `out`
    /// when given: `epoch-NNNN.vfck` every `checkpoint_every` epochs,
    /// `best.vfck` on validation improvement and `last.vfck` on return.
    /// Stopping at `max_steps` mid-epoch keeps the epoch counter at the last
    /// completed epoch, so a resumed run repeats the partial one.
    pub fn fit(&mut self, data: &StageData, out: Option<&Path>, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainLog> {
        let schedule = curriculum(&self.cfg.curriculum)?;
        let mut log = TrainLog::default();
        let starts = stage_boundaries(&schedule);
        'epochs: for epoch in self.state.epoch..schedule.len() {
            let task = schedule[epoch];
            if starts.iter().any(|&(e, _)| e == epoch) {
                log.stage_starts.push((epoch, self.state.step, task));
            }
            let (train, val) = data.for_task(task)?;
            if train.is_empty() {
                return Err(CoreError::InvalidInput(format!("no {} training samples", task.as_str())));
            }
            let lengths: Vec<usize> = train.iter().map(MixtureSample::len).collect();
            let mut batches = length_bucket_batches(&lengths, self.cfg.batch_size);
            let mut order_rng = stream_rng(self.cfg.seed ^ 0xba7c4, epoch as u64);
            rand::seq::SliceRandom::shuffle(batches.as_mut_slice(), &mut order_rng);
            let (mut sum, mut count) = (0.0, 0usize);
            for idx in batches {
                if self.cfg.max_steps.is_some_and(|m| self.state.step >= m) {
                    break 'epochs;
                }
                let batch = idx
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| self.augment(&train[j], self.state.step * self.cfg.batch_size as u64 + i as u64))
                    .collect::<Result<Vec<_>>>()?;
                let (loss, gn) = self.train_step(&batch)?;
                log.steps.push(StepRecord { step: self.state.step, epoch, task, loss, lr: self.state.lr, grad_norm: gn });
                sum += loss;
                count += 1;
            }
            let val_loss = if val.is_empty() { None } else { Some(self.eval_loss(val)?) };
            if let Some(v) = val_loss {
                self.state.lr = self.state.plateau.observe(v, self.state.lr);
            }
            let improved = match (val_loss, self.state.best_val) {
                (Some(v), Some(b)) => v < b,
                (Some(_), None) => true,
                _ => false,
            };
            if improved {
                self.state.best_val = val_loss;
            }
            self.state.epoch = epoch + 1;
            let record = EpochRecord { epoch, task, train_loss: sum / count.max(1) as f64, val_loss, lr: self.state.lr };
            on_epoch(&record);
            log.epochs.push(record);
            if let Some(dir) = out {
                if self.cfg.checkpoint_every > 0 && (epoch + 1) % self.cfg.checkpoint_every == 0 || epoch + 1 == schedule.len() {
                    self.save(&dir.join(format!("epoch-{:04}.vfck", epoch + 1)))?;
                }
                if improved {
                    self.save(&dir.join("best.vfck"))?;
                }
            }
        }
        if let Some(dir) = out {
            self.save(&dir.join("last.vfck"))?;
        }
        Ok(log)
    }

    /// Writes parameters and optimizer moments, plus a JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut names: Vec<(String, &Tensor<F>)> = self.store.iter().map(|(_, p)| (p.name.clone(), &p.value)).collect();
        for (id, p) in self.store.iter() {
            names.push((format!("optim.m.{}", p.name), &self.optimizer.m[id.index()]));
            names.push((format!("optim.v.{}", p.name), &self.optimizer.v[id.index()]));
        }
        let entries: Vec<(&str, &Tensor<F>)> = names.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        save_checkpoint(path, &entries, Precision::lossless_for::<F>())?;
        let meta = CheckpointMeta { model: self.model.cfg.clone(), state: self.state.clone(), optimizer_step: self.optimizer.step };
        let json = serde_json::to_string_pretty(&meta).map_err(|e| CoreError::Format(e.to_string()))?;
        let side = meta_path(path);
        fs::write(&side, json).map_err(|e| CoreError::io(&side, e))
    }

    /// Restores parameters, moments and loop state written by [`save`].
    pub fn resume(&mut self, path: &Path) -> Result<()> {
        let meta = read_meta(path)?;
        if meta.model != self.model.cfg {
            return Err(CoreError::Config("checkpoint was written for a different model configuration".into()));
        }
        let extra = self.store.load_values(load_checkpoint::<F>(path)?)?;
        for (name, t) in extra {
            let (kind, pname) = match (name.strip_prefix("optim.m."), name.strip_prefix("optim.v.")) {
                (Some(p), _) => ("m", p),
                (_, Some(p)) => ("v", p),
                _ => return Err(CoreError::Format(format!("unexpected checkpoint entry `{name}`"))),
            };
            let id = self.store.id(pname).ok_or_else(|| CoreError::Format(format!("moment for unknown parameter `{pname}`")))?;
            if kind == "m" {
                self.optimizer.m[id.index()] = t;
            } else {
                self.optimizer.v[id.index()] = t;
            }
        }
        self.optimizer.step = meta.optimizer_step;
        self.state = meta.state;
        Ok(())
    }
}

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn read_meta(checkpoint: &Path) -> Result<CheckpointMeta> {
    let side = meta_path(checkpoint);
    let text = fs::read_to_string(&side).map_err(|e| CoreError::io(&side, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Format(format!("{}: {e}", side.display())))
}

/// Model and parameters for inference from a checkpoint and its sidecar.
pub fn load_model<F: Scalar>(checkpoint: &Path) -> Result<(SeparationModel, ParamStore<F>)> {
    let meta = read_meta(checkpoint)?;
    let (model, mut store) = SeparationModel::init::<F>(&meta.model, 0)?;
    let params: Vec<(String, Tensor<F>)> = load_checkpoint::<F>(checkpoint)?.into_iter().filter(|(n, _)| !n.starts_with("optim.")).collect();
    store.load_values(params)?;
    Ok((model, store))
}

/// Copies every checkpoint entry whose name and shape match a parameter of
/// `store`; returns the names that were loaded.
pub fn load_matching<F: Scalar>(store: &mut ParamStore<F>, checkpoint: &Path) -> Result<Vec<String>> {
    let mut loaded = Vec::new();
    for (name, t) in load_checkpoint::<F>(checkpoint)? {
        if let Some(id) = store.id(&name) {
            if store.value(id).shape() == t.shape() {
                store.get_mut(id).value = t;
                loaded.push(name);
            }
        }
    }
    Ok(loaded)
}

/// Copies same-named, same-shaped parameters from `from` into `to`.
pub fn transfer_shared<F: Scalar>(from: &ParamStore<F>, to: &mut ParamStore<F>) -> Vec<String> {
    let mut copied = Vec::new();
    for (_, p) in from.iter() {
        if let Some(id) = to.id(&p.name) {
            if to.value(id).shape() == p.value.shape() {
                to.get_mut(id).value = p.value.clone();
                copied.push(p.name.clone());
            }
        }
    }
    copied
}
