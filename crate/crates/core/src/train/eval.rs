//! Metric reports over a test set, optionally under a perturbation sweep.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use vf_tensor::{ParamStore, Scalar};

use crate::conditioning::Lexicon;
use crate::data::{inject_av_offset, mask_video_frames, remove_words, stream_rng, swap_modality, MixtureSample, Perturbation, SwapKind};
use crate::error::{CoreError, Result};
use crate::metrics::{sdr_projected, si_sdr, stoi, DEFAULT_FILTER_TAPS};
use crate::model::{Modalities, ModelInput, SeparationModel};

/// Anything that maps a (possibly perturbed) sample to an estimate.
pub trait Separator: Sync {
    fn modalities(&self) -> Modalities;
    fn separate(&self, sample: &MixtureSample) -> Result<Vec<f32>>;
}

pub struct ModelSeparator<'a, F: Scalar> {
    pub model: &'a SeparationModel,
    pub store: &'a ParamStore<F>,
    pub lexicon: &'a Lexicon,
}

impl<F: Scalar> Separator for ModelSeparator<'_, F> {
    fn modalities(&self) -> Modalities {
        self.model.cfg.modalities
    }

    fn separate(&self, s: &MixtureSample) -> Result<Vec<f32>> {
        let phonemes = if self.model.cfg.modalities.text() { s.phonemes(self.lexicon) } else { None };
        let input = ModelInput { mixture: &s.mixture, video: s.features.as_ref(), phonemes: phonemes.as_ref() };
        self.model.separate(self.store, &input)
    }
}

/// Returns the clean target.
pub struct Oracle;

impl Separator for Oracle {
    fn modalities(&self) -> Modalities {
        Modalities::Avt
    }

    fn separate(&self, s: &MixtureSample) -> Result<Vec<f32>> {
        Ok(s.target.clone())
    }
}

/// Returns the mixture unchanged.
pub struct Identity;

impl Separator for Identity {
    fn modalities(&self) -> Modalities {
        Modalities::A
    }

    fn separate(&self, s: &MixtureSample) -> Result<Vec<f32>> {
        Ok(s.mixture.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Offset,
    Mask,
    Words,
    Swap,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Offset => "offset",
            SweepAxis::Mask => "mask",
            SweepAxis::Words => "words",
            SweepAxis::Swap => "swap",
        }
    }

    /// Errors when the axis perturbs a stream the model never reads.
    pub fn check(&self, m: Modalities) -> Result<()> {
        let ok = match self {
            SweepAxis::Offset | SweepAxis::Mask => m.video(),
            SweepAxis::Words => m.text(),
            SweepAxis::Swap => m.video() || m.text(),
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!("axis `{}` does not apply to a model conditioned on {}", self.as_str(), m.label())))
        }
    }

    /// Parses comma-separated points for this axis.
    pub fn parse_points(&self, text: &str) -> Result<Vec<SweepPoint>> {
        text.split(',').map(|p| SweepPoint::parse(*self, p.trim())).collect()
    }

    pub fn default_points(&self) -> Vec<SweepPoint> {
        match self {
            SweepAxis::Offset => [-200.0, -120.0, 0.0, 120.0, 200.0].into_iter().map(SweepPoint::Offset).collect(),
            SweepAxis::Mask => [0.0, 0.25, 0.5, 0.75, 1.0].into_iter().map(SweepPoint::Mask).collect(),
            SweepAxis::Words => (0..=4).map(SweepPoint::Words).collect(),
            SweepAxis::Swap => vec![
                SweepPoint::Swap(vec![]),
                SweepPoint::Swap(vec![SwapKind::Video]),
                SweepPoint::Swap(vec![SwapKind::Text]),
                SweepPoint::Swap(vec![SwapKind::Video, SwapKind::Text]),
            ],
        }
    }
}

impl FromStr for SweepAxis {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offset" => Ok(SweepAxis::Offset),
            "mask" => Ok(SweepAxis::Mask),
            "words" => Ok(SweepAxis::Words),
            "swap" => Ok(SweepAxis::Swap),
            _ => Err(CoreError::Config(format!("unknown sweep axis `{s}` (expected offset, mask, words or swap)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepPoint {
    Offset(f64),
    Mask(f64),
    /// Removes this many words, or all of them when fewer remain.
    Words(usize),
    /// Conditioning streams replaced by the donor's.
    Swap(Vec<SwapKind>),
}

impl SweepPoint {
    pub fn parse(axis: SweepAxis, text: &str) -> Result<Self> {
        let bad = || CoreError::Config(format!("invalid {} point `{text}`", axis.as_str()));
        Ok(match axis {
            SweepAxis::Offset => SweepPoint::Offset(text.parse().map_err(|_| bad())?),
            SweepAxis::Mask => SweepPoint::Mask(text.parse().map_err(|_| bad())?),
            SweepAxis::Words => SweepPoint::Words(text.parse().map_err(|_| bad())?),
            SweepAxis::Swap => SweepPoint::Swap(match text {
                "none" => vec![],
                "video" => vec![SwapKind::Video],
                "text" => vec![SwapKind::Text],
                "video+text" | "both" => vec![SwapKind::Video, SwapKind::Text],
                _ => return Err(bad()),
            }),
        })
    }

    fn apply(&self, s: &MixtureSample, donor: Option<&MixtureSample>, seed: u64, index: u64) -> Result<MixtureSample> {
        let mut rng = stream_rng(seed, index);
        match self {
            SweepPoint::Offset(ms) => inject_av_offset(s, *ms),
            SweepPoint::Mask(f) => mask_video_frames(s, *f, &mut rng),
            SweepPoint::Words(k) => {
                let n = s.text.as_deref().map_or(0, |t| t.split_whitespace().count());
                remove_words(s, (*k).min(n), &mut rng)
            }
            SweepPoint::Swap(kinds) => {
                let mut out = s.clone();
                for &k in kinds {
                    let donor = donor.ok_or_else(|| CoreError::InvalidInput("no sample from another source to swap with".into()))?;
                    out = swap_modality(&out, k, donor)?;
                }
                Ok(out)
            }
        }
    }
}

impl SweepPoint {
    /// The perturbation record this point asks for.
    fn intended(&self) -> Perturbation {
        let mut p = Perturbation::default();
        match self {
            SweepPoint::Offset(ms) => p.offset_ms = *ms,
            SweepPoint::Mask(f) => p.mask_fraction = *f,
            SweepPoint::Words(k) => p.words_removed = *k,
            SweepPoint::Swap(kinds) => p.swapped = kinds.clone(),
        }
        p
    }
}

impl fmt::Display for SweepPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepPoint::Offset(v) | SweepPoint::Mask(v) => write!(f, "{v}"),
            SweepPoint::Words(k) => write!(f, "{k}"),
            SweepPoint::Swap(kinds) if kinds.is_empty() => f.write_str("none"),
            SweepPoint::Swap(kinds) => {
                let names: Vec<&str> = kinds
                    .iter()
                    .map(|k| match k {
                        SwapKind::Video => "video",
                        SwapKind::Text => "text",
                    })
                    .collect();
                f.write_str(&names.join("+"))
            }
        }
    }
}

/// One sample under one perturbation. Metrics are `None` when the sample
/// failed; `error` then says why.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub sample_id: String,
    pub stage: String,
    pub offset_ms: f64,
    pub mask_fraction: f64,
    pub words_removed: usize,
    pub swapped: String,
    pub sdr_db: Option<f64>,
    pub si_sdr_db: Option<f64>,
    pub stoi: Option<f64>,
    pub mixture_si_sdr_db: Option<f64>,
    pub sdr_regularized: bool,
    pub error: Option<String>,
}

impl MetricReport {
    pub fn si_sdr_improvement(&self) -> Option<f64> {
        Some(self.si_sdr_db? - self.mixture_si_sdr_db?)
    }
}

fn score(sep: &dyn Separator, s: &MixtureSample, sample_rate_check: u32) -> Result<(f64, bool, f64, f64, f64)> {
    if s.sample_rate != sample_rate_check {
        return Err(CoreError::InvalidInput(format!("{}: metrics need {sample_rate_check} Hz audio, got {}", s.id, s.sample_rate)));
    }
    let est = sep.separate(s)?;
    let sdr = sdr_projected(&est, &s.target, DEFAULT_FILTER_TAPS)?;
    let si = si_sdr(&est, &s.target)?;
    let st = stoi(&est, &s.target, s.sample_rate)?;
    let mix = si_sdr(&s.mixture, &s.target)?;
    Ok((sdr.db, sdr.regularized, si, st, mix))
}

/// The next sample (cyclically) whose target comes from another source.
fn donor_for(samples: &[MixtureSample], i: usize) -> Option<&MixtureSample> {
    (1..samples.len()).map(|d| &samples[(i + d) % samples.len()]).find(|o| o.source_id != samples[i].source_id)
}

/// Scores every sample under every point, samples in parallel. Failures
/// are recorded in the report and do not stop the run. Rows are ordered by
/// sample, then point.
pub fn evaluate(sep: &dyn Separator, samples: &[MixtureSample], points: &[SweepPoint], stage: &str, seed: u64) -> Vec<MetricReport> {
    let points: Vec<SweepPoint> = if points.is_empty() { vec![SweepPoint::Swap(vec![])] } else { points.to_vec() };
    samples
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, s)| {
            let donor = donor_for(samples, i);
            points
                .iter()
                .map(|p| {
                    let perturbed = p.apply(s, donor, seed, i as u64);
                    let base = perturbed.as_ref().map_or_else(|_| p.intended(), |x| x.perturbation.clone());
                    let mut r = MetricReport {
                        sample_id: s.id.clone(),
                        stage: stage.to_string(),
                        offset_ms: base.offset_ms,
                        mask_fraction: base.mask_fraction,
                        words_removed: base.words_removed,
                        swapped: base.swapped_label(),
                        sdr_db: None,
                        si_sdr_db: None,
                        stoi: None,
                        mixture_si_sdr_db: None,
                        sdr_regularized: false,
                        error: None,
                    };
                    match perturbed.and_then(|x| score(sep, &x, 16_000)) {
                        Ok((sdr, reg, si, st, mix)) => {
                            r.sdr_db = Some(sdr);
                            r.sdr_regularized = reg;
                            r.si_sdr_db = Some(si);
                            r.stoi = Some(st);
                            r.mixture_si_sdr_db = Some(mix);
                        }
                        Err(e) => r.error = Some(e.to_string()),
                    }
                    r
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn write_reports(w: impl Write, reports: &[MetricReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(r).map_err(|e| CoreError::Format(e.to_string()))?;
    }
    out.flush().map_err(|e| CoreError::Format(e.to_string()))
}

/// Mean and population standard deviation; `None` for no values.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub point: String,
    pub samples: usize,
    pub failed: usize,
    pub sdr_db_mean: Option<f64>,
    pub sdr_db_std: Option<f64>,
    pub si_sdr_db_mean: Option<f64>,
    pub si_sdr_db_std: Option<f64>,
    pub stoi_mean: Option<f64>,
    pub stoi_std: Option<f64>,
    pub si_sdr_improvement_db_mean: Option<f64>,
    pub si_sdr_improvement_db_std: Option<f64>,
}

/// One aggregate row per point, for reports produced by [`evaluate`] with
/// the same `points`.
pub fn aggregate(axis: SweepAxis, points: &[SweepPoint], reports: &[MetricReport]) -> Vec<SweepRow> {
    let np = points.len().max(1);
    points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let rows: Vec<&MetricReport> = reports.iter().skip(j).step_by(np).collect();
            let col = |f: &dyn Fn(&MetricReport) -> Option<f64>| mean_std(&rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            let sdr = col(&|r| r.sdr_db);
            let si = col(&|r| r.si_sdr_db);
            let st = col(&|r| r.stoi);
            let imp = col(&|r| r.si_sdr_improvement());
            SweepRow {
                axis: axis.as_str().into(),
                point: p.to_string(),
                samples: rows.len(),
                failed: rows.iter().filter(|r| r.error.is_some()).count(),
                sdr_db_mean: sdr.map(|v| v.0),
                sdr_db_std: sdr.map(|v| v.1),
                si_sdr_db_mean: si.map(|v| v.0),
                si_sdr_db_std: si.map(|v| v.1),
                stoi_mean: st.map(|v| v.0),
                stoi_std: st.map(|v| v.1),
                si_sdr_improvement_db_mean: imp.map(|v| v.0),
                si_sdr_improvement_db_std: imp.map(|v| v.1),
            }
        })
        .collect()
}

pub fn write_sweep(w: impl Write, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| CoreError::Format(e.to_string()))?;
    }
    out.flush().map_err(|e| CoreError::Format(e.to_string()))
}
