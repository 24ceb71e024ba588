//! Deterministic synthetic corpus: toy speakers, aligned lip-like feature
//! streams and background noise clips.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vf_tensor::Tensor;

use crate::audio::{write_wav, SampleFormat, Waveform};
use crate::conditioning::{save_features, FeatureSequence, Lexicon};
use crate::data::manifest::{write_manifest, EntryKind, ManifestEntry};
use crate::data::synth::{random_words, synthesize, synthesize_noise, Utterance, Voice, ARTICULATORY_DIMS};
use crate::data::Source;
use crate::error::{CoreError, Result};

/// Independent generator for work item `index` under `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub speakers: usize,
    pub seconds_per_speaker: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub sample_rate: u32,
    pub fps: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub noise_clips: usize,
    pub noise_seconds: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            speakers: 4,
            seconds_per_speaker: 60.0,
            min_words: 3,
            max_words: 7,
            sample_rate: 16_000,
            fps: 25.0,
            feature_dim: 64,
            feature_noise: 0.05,
            noise_clips: 6,
            noise_seconds: 3.0,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 || self.feature_dim == 0 || self.min_words == 0 || self.min_words > self.max_words {
            return Err(CoreError::Config("corpus needs speakers, features and 1 <= min_words <= max_words".into()));
        }
        if !(self.seconds_per_speaker > 0.0 && self.fps > 0.0 && self.noise_seconds > 0.0) || self.sample_rate == 0 {
            return Err(CoreError::Config("corpus durations and rates must be positive".into()));
        }
        Ok(())
    }

    pub fn utterances_per_speaker(&self) -> usize {
        let mean_words = 0.5 * (self.min_words + self.max_words) as f64;
        let est = 0.45 * mean_words + 0.2;
        ((self.seconds_per_speaker / est).ceil() as usize).max(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn for_index(i: usize) -> Split {
        match i % 10 {
            0 => Split::Test,
            1 => Split::Val,
            _ => Split::Train,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusUtterance {
    pub id: String,
    pub speaker: usize,
    pub split: Split,
    pub utterance: Utterance,
    pub features: FeatureSequence,
}

#[derive(Debug, Clone)]
pub struct NoiseClip {
    pub id: String,
    pub split: Split,
    pub samples: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub voices: Vec<Voice>,
    /// Fixed map from articulatory descriptors to feature space.
    pub projection: Tensor<f64>,
    pub utterances: Vec<CorpusUtterance>,
    pub noises: Vec<NoiseClip>,
}

/// Projects per-frame articulation to a `[T x c]` feature matrix.
pub fn lip_features<R: Rng + ?Sized>(
    utterance: &Utterance,
    projection: &Tensor<f64>,
    fps: f64,
    noise_std: f64,
    rng: &mut R,
) -> FeatureSequence {
    let (d, c) = projection.dims2().expect("projection is a matrix");
    let art = utterance.articulation(fps);
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("valid normal");
    let mut data = Vec::with_capacity(art.len() * c);
    for row in &art {
        for j in 0..c {
            let v: f64 = (0..d).map(|i| row[i] * projection.data()[i * c + j]).sum();
            data.push((v + noise.sample(rng)) as f32);
        }
    }
    Tensor::new(vec![art.len(), c], data).expect("consistent shape")
}

pub fn generate_corpus(config: &CorpusConfig, lexicon: &Lexicon) -> Result<Corpus> {
    config.validate()?;
    let mut voice_rng = stream_rng(config.seed, 0);
    let voices: Vec<Voice> = (0..config.speakers).map(|_| Voice::random(&mut voice_rng)).collect();
    let mut proj_rng = stream_rng(config.seed, 1);
    let projection = Tensor::normal(vec![ARTICULATORY_DIMS, config.feature_dim], 1.0 / (ARTICULATORY_DIMS as f64).sqrt(), &mut proj_rng);

    let per = config.utterances_per_speaker();
    let jobs: Vec<(usize, usize)> = (0..config.speakers).flat_map(|s| (0..per).map(move |i| (s, i))).collect();
    let utterances: Vec<CorpusUtterance> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(s, i))| {
            let mut rng = stream_rng(config.seed, 1000 + k as u64);
            let n = rng.gen_range(config.min_words..=config.max_words);
            let words = random_words(lexicon, n, &mut rng);
            let utterance = synthesize(&words, lexicon, &voices[s], config.sample_rate, &mut rng);
            let features = lip_features(&utterance, &projection, config.fps, config.feature_noise, &mut rng);
            CorpusUtterance { id: format!("spk{s:02}_utt{i:03}"), speaker: s, split: Split::for_index(i), utterance, features }
        })
        .collect();

    let noise_len = (config.noise_seconds * config.sample_rate as f64).round() as usize;
    let noises: Vec<NoiseClip> = (0..config.noise_clips)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(config.seed, 1_000_000 + j as u64);
            let split = [Split::Train, Split::Val, Split::Test][j % 3];
            NoiseClip { id: format!("noise_{j:03}"), split, samples: synthesize_noise(noise_len, config.sample_rate, &mut rng) }
        })
        .collect();
    Ok(Corpus { config: config.clone(), voices, projection, utterances, noises })
}

impl CorpusUtterance {
    pub fn source(&self, fps: f64) -> Source {
        Source {
            id: self.id.clone(),
            speaker: Some(format!("spk{:02}", self.speaker)),
            audio: self.utterance.samples.clone(),
            sample_rate: self.utterance.sample_rate,
            features: Some(self.features.clone()),
            fps,
            text: Some(self.utterance.text()),
            word_times: Some(self.utterance.word_times.clone()),
        }
    }
}

impl Corpus {
    pub fn sources(&self, split: Option<Split>) -> Vec<Source> {
        self.utterances
            .iter()
            .filter(|u| split.is_none_or(|s| u.split == s))
            .map(|u| u.source(self.config.fps))
            .collect()
    }

    pub fn noise_sources(&self, split: Option<Split>) -> Vec<Source> {
        self.noises
            .iter()
            .filter(|n| split.is_none_or(|s| n.split == s))
            .map(|n| Source {
                id: n.id.clone(),
                speaker: None,
                audio: n.samples.clone(),
                sample_rate: self.config.sample_rate,
                features: None,
                fps: self.config.fps,
                text: None,
                word_times: None,
            })
            .collect()
    }

    /// Writes WAV and feature files plus `manifest.jsonl` under `dir`.
    /// Refuses a non-empty directory unless `force` is set.
    pub fn write(&self, dir: &Path, force: bool) -> Result<PathBuf> {
        if dir.exists() {
            let non_empty = fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?.next().is_some();
            if non_empty && !force {
                return Err(CoreError::InvalidInput(format!(
                    "output directory {} is not empty; pass --force to overwrite",
                    dir.display()
                )));
            }
        }
        for sub in ["audio", "features"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| CoreError::io(&p, e))?;
        }
        let sr = self.config.sample_rate;
        let mut entries = Vec::new();
        for u in &self.utterances {
            let audio = PathBuf::from("audio").join(format!("{}.wav", u.id));
            let features = PathBuf::from("features").join(format!("{}.vffe", u.id));
            write_wav(dir.join(&audio), &Waveform::new(u.utterance.samples.clone(), sr)?, SampleFormat::Float32)?;
            save_features(dir.join(&features), &u.features)?;
            entries.push(ManifestEntry {
                audio,
                features: Some(features),
                text: u.utterance.text(),
                duration: u.utterance.duration(),
                split: u.split.as_str().into(),
                speaker: Some(format!("spk{:02}", u.speaker)),
                kind: EntryKind::Speech,
                word_times: Some(u.utterance.word_times.clone()),
            });
        }
        for n in &self.noises {
            let audio = PathBuf::from("audio").join(format!("{}.wav", n.id));
            write_wav(dir.join(&audio), &Waveform::new(n.samples.clone(), sr)?, SampleFormat::Float32)?;
            entries.push(ManifestEntry {
                audio,
                features: None,
                text: String::new(),
                duration: n.samples.len() as f64 / sr as f64,
                split: n.split.as_str().into(),
                speaker: None,
                kind: EntryKind::Noise,
                word_times: None,
            });
        }
        let manifest = dir.join("manifest.jsonl");
        write_manifest(&manifest, &entries)?;
        Ok(manifest)
    }
}
