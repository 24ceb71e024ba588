//! Turning a corpus manifest into training and evaluation mixtures.

use std::path::Path;

use vf_core::audio::{resample, Waveform};
use vf_core::conditioning::Lexicon;
use vf_core::data::{build_mixtures, load_manifest, EntryKind, MixtureSample, Source, Task};
use vf_core::model::ModelConfig;
use vf_core::train::StageData;
use vf_core::{CoreError, Result};

use crate::config::RunConfig;

/// Speech and noise sources of one split.
#[derive(Debug, Clone, Default)]
pub struct Pool {
    pub speech: Vec<Source>,
    pub noise: Vec<Source>,
}

impl Pool {
    pub fn mixtures(&self, task: Task, count: usize, crop: Option<f64>, seed: u64) -> Result<Vec<MixtureSample>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let long_enough: Vec<Source> = match crop {
            Some(s) => self.speech.iter().filter(|x| x.audio.len() as f64 >= s * x.sample_rate as f64).cloned().collect(),
            None => self.speech.clone(),
        };
        if long_enough.is_empty() {
            return Err(CoreError::InvalidInput(format!("no speech source is at least {} s long", crop.unwrap_or_default())));
        }
        build_mixtures(&long_enough, &self.noise, task, count, crop, seed)
    }
}

/// Loads every entry of `split`, resampling audio to the model rate.
pub fn load_pool(manifest: &Path, split: &str, model: &ModelConfig) -> Result<Pool> {
    let mut pool = Pool::default();
    for entry in load_manifest(manifest)?.into_iter().filter(|e| e.split == split) {
        let mut src = entry.load(model.video_fps)?;
        if src.sample_rate != model.sample_rate {
            let w = Waveform::new(std::mem::take(&mut src.audio), src.sample_rate)?;
            src.audio = resample(&w, model.sample_rate as f64 / w.sample_rate as f64)?.samples;
            src.sample_rate = model.sample_rate;
        }
        match entry.kind {
            EntryKind::Speech => pool.speech.push(src),
            EntryKind::Noise => pool.noise.push(src),
        }
    }
    if pool.speech.is_empty() {
        return Err(CoreError::InvalidInput(format!("{}: no speech entries in split `{split}`", manifest.display())));
    }
    Ok(pool)
}

pub fn load_lexicon(path: Option<&Path>) -> Result<Lexicon> {
    match path {
        Some(p) => Lexicon::load(p),
        None => Ok(Lexicon::demo()),
    }
}

/// Train and validation mixtures for every task in the curriculum.
pub fn stage_data(cfg: &RunConfig) -> Result<StageData> {
    let train = load_pool(&cfg.data.manifest, "train", &cfg.model)?;
    let val = load_pool(&cfg.data.manifest, "val", &cfg.model)?;
    let seed = cfg.train.seed;
    let mut data = StageData::default();
    for stage in &cfg.train.curriculum {
        let pair = (
            train.mixtures(stage.task, cfg.data.train_mixtures, cfg.data.crop_seconds, seed)?,
            val.mixtures(stage.task, cfg.data.val_mixtures, cfg.data.crop_seconds, seed ^ 0x7a1)?,
        );
        match stage.task {
            Task::Separation => data.separation = Some(pair),
            Task::Denoising => data.denoising = Some(pair),
        }
    }
    Ok(data)
}
