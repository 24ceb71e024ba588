//! Perturbation injectors for the robustness experiments.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::conditioning::phonemes::tokenize;
use crate::data::mixture::{MixtureSample, SwapKind};
use crate::error::{CoreError, Result};

/// Largest accepted audio-visual offset.
pub const MAX_OFFSET_MS: f64 = 400.0;

/// First `k` entries of a random permutation of `0..n`, so that for a fixed
/// generator state the chosen sets are nested as `k` grows.
fn nested_choice<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.truncate(k);
    order
}

fn shift(x: &[f32], n: i64) -> Vec<f32> {
    let len = x.len() as i64;
    (0..len)
        .map(|t| {
            let s = t - n;
            if (0..len).contains(&s) {
                x[s as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Delays the audio (mixture and target) by `offset_ms` relative to the
/// conditioning, with zero fill. Negative offsets advance it.
pub fn inject_av_offset(sample: &MixtureSample, offset_ms: f64) -> Result<MixtureSample> {
    if !(offset_ms.abs() <= MAX_OFFSET_MS) {
        return Err(CoreError::Range(format!("offset {offset_ms} ms exceeds the {MAX_OFFSET_MS} ms cap")));
    }
    let n = (offset_ms * sample.sample_rate as f64 / 1000.0).round() as i64;
    let mut out = sample.clone();
    out.mixture = shift(&sample.mixture, n);
    out.target = shift(&sample.target, n);
    out.perturbation.offset_ms = offset_ms;
    Ok(out)
}

/// Zeroes exactly `round(fraction * t_v)` uniformly chosen feature rows.
pub fn mask_video_frames<R: Rng + ?Sized>(sample: &MixtureSample, fraction: f64, rng: &mut R) -> Result<MixtureSample> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CoreError::Range(format!("mask fraction must lie in [0, 1], got {fraction}")));
    }
    let features = sample
        .features
        .as_ref()
        .ok_or_else(|| CoreError::Contract(format!("sample {} has no video features to mask", sample.id)))?;
    let (t_v, c) = features.dims2()?;
    let count = (fraction * t_v as f64).round() as usize;
    let mut rows = nested_choice(rng, t_v, count);
    rows.sort_unstable();
    let mut masked = features.clone();
    for &r in &rows {
        masked.data_mut()[r * c..(r + 1) * c].fill(0.0);
    }
    let mut out = sample.clone();
    out.features = Some(masked);
    out.perturbation.mask_fraction = fraction;
    out.perturbation.masked_frames = rows;
    Ok(out)
}

/// Deletes `k` uniformly chosen words from the transcript.
pub fn remove_words<R: Rng + ?Sized>(sample: &MixtureSample, k: usize, rng: &mut R) -> Result<MixtureSample> {
    let text = sample
        .text
        .as_deref()
        .ok_or_else(|| CoreError::Contract(format!("sample {} has no transcript", sample.id)))?;
    let words = tokenize(text);
    if k > words.len() {
        return Err(CoreError::Range(format!("cannot remove {k} words from a {}-word transcript", words.len())));
    }
    let mut drop = vec![false; words.len()];
    for i in nested_choice(rng, words.len(), k) {
        drop[i] = true;
    }
    let mut out = sample.clone();
    out.text = Some(words.iter().zip(&drop).filter(|(_, &d)| !d).map(|(w, _)| w.as_str()).collect::<Vec<_>>().join(" "));
    out.word_times = sample.word_times.as_ref().map(|times| {
        if times.len() == words.len() {
            times.iter().zip(&drop).filter(|(_, &d)| !d).map(|(t, _)| *t).collect()
        } else {
            times.clone()
        }
    });
    out.perturbation.words_removed += k;
    Ok(out)
}

/// Replaces one conditioning stream with the donor's.
pub fn swap_modality(sample: &MixtureSample, which: SwapKind, donor: &MixtureSample) -> Result<MixtureSample> {
    if donor.source_id == sample.source_id {
        return Err(CoreError::Contract(format!("donor {} is the sample's own source", donor.source_id)));
    }
    let mut out = sample.clone();
    match which {
        SwapKind::Video => {
            out.features = Some(
                donor
                    .features
                    .clone()
                    .ok_or_else(|| CoreError::Contract(format!("donor {} has no video features", donor.id)))?,
            );
        }
        SwapKind::Text => {
            out.text = Some(
                donor.text.clone().ok_or_else(|| CoreError::Contract(format!("donor {} has no transcript", donor.id)))?,
            );
            out.word_times = donor.word_times.clone();
        }
    }
    out.perturbation.swapped.push(which);
    Ok(out)
}
