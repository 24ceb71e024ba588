//! Mixture samples, normalization, cropping and length bucketing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::rms;
use crate::conditioning::phonemes::tokenize;
use crate::conditioning::{phonemize, FeatureSequence, Lexicon, PhonemeSequence};
use crate::error::{CoreError, Result};
use vf_tensor::Tensor;

/// One clean recording with whatever conditioning it carries.
#[derive(Debug, Clone)]
pub struct Source {
    pub id: String,
    pub speaker: Option<String>,
    pub audio: Vec<f32>,
    pub sample_rate: u32,
    pub features: Option<FeatureSequence>,
    pub fps: f64,
    pub text: Option<String>,
    pub word_times: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterfererKind {
    Speech,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwapKind {
    Video,
    Text,
}

/// How a sample deviates from the clean protocol.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub offset_ms: f64,
    pub mask_fraction: f64,
    pub masked_frames: Vec<usize>,
    pub words_removed: usize,
    pub swapped: Vec<SwapKind>,
}

impl Perturbation {
    /// `none`, `video`, `text` or `video+text`.
    pub fn swapped_label(&self) -> String {
        if self.swapped.is_empty() {
            return "none".into();
        }
        let mut s = self.swapped.clone();
        s.sort();
        s.dedup();
        s.iter()
            .map(|k| match k {
                SwapKind::Video => "video",
                SwapKind::Text => "text",
            })
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[derive(Debug, Clone)]
pub struct MixtureSample {
    pub id: String,
    /// Source entry of the target; donors must differ from it.
    pub source_id: String,
    pub sample_rate: u32,
    pub mixture: Vec<f32>,
    pub target: Vec<f32>,
    pub kind: InterfererKind,
    pub features: Option<FeatureSequence>,
    pub fps: f64,
    pub text: Option<String>,
    pub word_times: Option<Vec<(f64, f64)>>,
    pub perturbation: Perturbation,
}

impl MixtureSample {
    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn phonemes(&self, lexicon: &Lexicon) -> Option<PhonemeSequence> {
        self.text.as_deref().map(|t| phonemize(t, lexicon))
    }
}

/// Scales a track to unit RMS.
pub fn normalize_track(w: &[f32]) -> Result<Vec<f32>> {
    let r = rms(w);
    if r == 0.0 || !r.is_finite() {
        return Err(CoreError::Degenerate("cannot normalize a silent or non-finite track".into()));
    }
    Ok(w.iter().map(|&v| (v as f64 / r) as f32).collect())
}

/// Trims a longer interferer from a random start, or tiles a shorter one.
pub fn fit_interferer<R: Rng + ?Sized>(interferer: &[f32], len: usize, rng: &mut R) -> Result<Vec<f32>> {
    if interferer.is_empty() {
        return Err(CoreError::InvalidInput("empty interferer".into()));
    }
    if interferer.len() >= len {
        let start = rng.gen_range(0..=interferer.len() - len);
        Ok(interferer[start..start + len].to_vec())
    } else {
        Ok(interferer.iter().copied().cycle().take(len).collect())
    }
}

/// Sums a target and an equal-length interferer.
pub fn make_mixture(id: impl Into<String>, target: &Source, interferer: &[f32], kind: InterfererKind) -> Result<MixtureSample> {
    if target.audio.is_empty() {
        return Err(CoreError::InvalidInput("mixture needs at least one sample".into()));
    }
    if interferer.len() != target.audio.len() {
        return Err(CoreError::Contract(format!(
            "interferer has {} samples, target has {}",
            interferer.len(),
            target.audio.len()
        )));
    }
    Ok(MixtureSample {
        id: id.into(),
        source_id: target.id.clone(),
        sample_rate: target.sample_rate,
        mixture: target.audio.iter().zip(interferer).map(|(a, b)| a + b).collect(),
        target: target.audio.clone(),
        kind,
        features: target.features.clone(),
        fps: target.fps,
        text: target.text.clone(),
        word_times: target.word_times.clone(),
        perturbation: Perturbation::default(),
    })
}

/// Rows `start..start + count` of `x`, zero-padded past the end.
pub(crate) fn take_rows(x: &FeatureSequence, start: usize, count: usize) -> FeatureSequence {
    let (t, c) = x.dims2().expect("features are a matrix");
    let mut data = vec![0.0f32; count * c];
    for r in 0..count {
        if start + r < t {
            data[r * c..(r + 1) * c].copy_from_slice(x.row(start + r));
        }
    }
    Tensor::new(vec![count, c], data).expect("consistent shape")
}

/// Crops a random window of `seconds`; `None` when the sample is shorter.
pub fn random_crop<R: Rng + ?Sized>(sample: &MixtureSample, seconds: f64, rng: &mut R) -> Result<Option<MixtureSample>> {
    if !(seconds > 0.0) {
        return Err(CoreError::Range(format!("crop length must be positive, got {seconds}")));
    }
    let sr = sample.sample_rate as f64;
    let len = (seconds * sr).round() as usize;
    if sample.len() < len || len == 0 {
        return Ok(None);
    }
    let start = rng.gen_range(0..=sample.len() - len);
    let t0 = start as f64 / sr;
    let t1 = t0 + len as f64 / sr;
    let mut out = sample.clone();
    out.mixture = sample.mixture[start..start + len].to_vec();
    out.target = sample.target[start..start + len].to_vec();
    out.features = sample.features.as_ref().map(|f| {
        let first = (t0 * sample.fps).round() as usize;
        take_rows(f, first, (seconds * sample.fps).round() as usize)
    });
    if let (Some(text), Some(times)) = (&sample.text, &sample.word_times) {
        let words = tokenize(text);
        if words.len() == times.len() {
            let kept: Vec<(String, (f64, f64))> = words
                .into_iter()
                .zip(times.iter().copied())
                .filter(|(_, (a, b))| {
                    let mid = 0.5 * (a + b);
                    mid >= t0 && mid < t1
                })
                .map(|(w, (a, b))| (w, (a - t0, b - t0)))
                .collect();
            out.text = Some(kept.iter().map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" "));
            out.word_times = Some(kept.into_iter().map(|(_, t)| t).collect());
        }
    }
    Ok(Some(out))
}

/// Groups sample indices into batches of similar length: sorted by length,
/// a batch closes when full or when the next length exceeds 1.1 times the
/// shortest in the batch.
pub fn length_bucket_batches(lengths: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for i in order {
        let fits = current
            .first()
            .map(|&f| current.len() < batch_size && lengths[i] as f64 <= 1.1 * lengths[f] as f64)
            .unwrap_or(true);
        if !fits {
            batches.push(std::mem::take(&mut current));
        }
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}
