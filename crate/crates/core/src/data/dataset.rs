//! Assembling training and evaluation mixtures from source pools.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::corpus::stream_rng;
use crate::data::mixture::{fit_interferer, make_mixture, normalize_track, random_crop, InterfererKind, MixtureSample};
use crate::data::Source;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Separation,
    Denoising,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Separation => "separation",
            Task::Denoising => "denoising",
        }
    }

    pub fn interferer_kind(&self) -> InterfererKind {
        match self {
            Task::Separation => InterfererKind::Speech,
            Task::Denoising => InterfererKind::Noise,
        }
    }
}

impl FromStr for Task {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separation" => Ok(Task::Separation),
            "denoising" => Ok(Task::Denoising),
            other => Err(CoreError::Config(format!("unknown task `{other}` (expected separation or denoising)"))),
        }
    }
}

fn same_speaker(a: &Source, b: &Source) -> bool {
    match (&a.speaker, &b.speaker) {
        (Some(x), Some(y)) => x == y,
        _ => a.id == b.id,
    }
}

/// Cuts a source to `seconds` at a random offset, cropping its conditioning
/// with it. `None` when the source is too short.
pub fn crop_source(source: &Source, seconds: f64, rng: &mut impl rand::Rng) -> Result<Option<Source>> {
    let silent = vec![0.0; source.audio.len()];
    let probe = make_mixture(source.id.clone(), source, &silent, InterfererKind::Noise)?;
    Ok(random_crop(&probe, seconds, rng)?.map(|c| Source {
        audio: c.target,
        features: c.features,
        text: c.text,
        word_times: c.word_times,
        ..source.clone()
    }))
}

/// Builds `count` 0 dB mixtures. Item `i` targets `speech[i % n]` and draws
/// its interferer from another speaker (separation) or the noise pool
/// (denoising) with a generator derived from `(seed, i)`.
pub fn build_mixtures(
    speech: &[Source],
    noise: &[Source],
    task: Task,
    count: usize,
    crop_seconds: Option<f64>,
    seed: u64,
) -> Result<Vec<MixtureSample>> {
    if speech.is_empty() {
        return Err(CoreError::InvalidInput("no speech sources to build mixtures from".into()));
    }
    if task == Task::Denoising && noise.is_empty() {
        return Err(CoreError::InvalidInput("denoising needs at least one noise source".into()));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = stream_rng(seed, i as u64);
        let target = &speech[i % speech.len()];
        let target = match crop_seconds {
            Some(s) => match crop_source(target, s, &mut rng)? {
                Some(t) => t,
                None => continue,
            },
            None => target.clone(),
        };
        let interferer = match task {
            Task::Separation => {
                let pool: Vec<&Source> = speech.iter().filter(|s| !same_speaker(s, &target)).collect();
                if pool.is_empty() {
                    return Err(CoreError::InvalidInput("separation needs sources from at least two speakers".into()));
                }
                pool[rng.gen_range(0..pool.len())]
            }
            Task::Denoising => &noise[rng.gen_range(0..noise.len())],
        };
        let target = Source { audio: normalize_track(&target.audio)?, ..target };
        let fitted = normalize_track(&fit_interferer(&interferer.audio, target.audio.len(), &mut rng)?)?;
        let id = format!("{}-{i:04}-{}-{}", task.as_str(), target.id, interferer.id);
        out.push(make_mixture(id, &target, &fitted, task.interferer_kind())?);
    }
    Ok(out)
}

/// Both conditioned views of one two-speaker mixture: the same waveform
/// `a + b`, once with `a` as target and once with `b`.
pub fn mixture_pair(id: &str, a: &Source, b: &Source) -> Result<[MixtureSample; 2]> {
    let a = Source { audio: normalize_track(&a.audio)?, ..a.clone() };
    let b = Source { audio: normalize_track(&b.audio)?, ..b.clone() };
    Ok([
        make_mixture(format!("{id}-a"), &a, &b.audio, InterfererKind::Speech)?,
        make_mixture(format!("{id}-b"), &b, &a.audio, InterfererKind::Speech)?,
    ])
}


