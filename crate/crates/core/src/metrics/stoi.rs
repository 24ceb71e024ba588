use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::to_f64;
use crate::audio::Resampler;
use crate::{CoreError, Result};

const FS: f64 = 10_000.0;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;

/// Shortest input (at `sample_rate`) that yields one full analysis segment.
pub fn stoi_min_samples(sample_rate: u32) -> usize {
    let at_10k = (SEGMENT + 1) * HOP + FRAME;
    (at_10k as f64 * sample_rate as f64 / FS).ceil() as usize
}

/// Classic short-time objective intelligibility of `estimate` against the
/// clean `reference`, clamped to `[0, 1]`.
pub fn stoi<T: Copy + Into<f64>>(estimate: &[T], reference: &[T], sample_rate: u32) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(CoreError::InvalidInput(format!(
            "stoi: estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let min = stoi_min_samples(sample_rate);
    if reference.len() < min {
        return Err(CoreError::InvalidInput(format!(
            "stoi: {} samples is shorter than the required minimum of {min} at {sample_rate} Hz",
            reference.len()
        )));
    }
    let (mut x, mut y) = (to_f64(reference), to_f64(estimate));
    if sample_rate as f64 != FS {
        let r = Resampler::new(FS / sample_rate as f64)?;
        x = r.process(&x);
        y = r.process(&y);
    }
    let (x, y) = remove_silent_frames(&x, &y);
    let xs = third_octave_envelopes(&x);
    let ys = third_octave_envelopes(&y);
    let frames = xs.first().map_or(0, Vec::len);
    if frames < SEGMENT {
        return Err(CoreError::InvalidInput(format!(
            "stoi: only {frames} non-silent frames remain, {SEGMENT} are required"
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=frames {
        for band in 0..BANDS {
            let xseg = &xs[band][m - SEGMENT..m];
            let yseg = &ys[band][m - SEGMENT..m];
            let norm = l2(xseg) / (l2(yseg) + f64::EPSILON);
            let mut yp: Vec<f64> = yseg.iter().zip(xseg).map(|(&yv, &xv)| (yv * norm).min(xv * clip)).collect();
            let mut xc = xseg.to_vec();
            center_and_normalize(&mut yp);
            center_and_normalize(&mut xc);
            total += yp.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>();
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn center_and_normalize(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let n = l2(x) + f64::EPSILON;
    x.iter_mut().for_each(|v| *v /= n);
}

fn hann() -> Vec<f64> {
    // Symmetric Hann of length FRAME + 2 with the zero endpoints dropped.
    (1..=FRAME).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (FRAME + 1) as f64).cos()).collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drops frames more than `DYN_RANGE_DB` below the loudest reference frame
/// and overlap-adds the survivors.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann();
    let window = |s: &[f64], i: usize| -> Vec<f64> { s[i..i + FRAME].iter().zip(&w).map(|(a, b)| a * b).collect() };
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&i| 20.0 * (l2(&window(x, i)) + f64::EPSILON).log10())
        .collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&i, _)| i)
        .collect();
    let out_len = if keep.is_empty() { 0 } else { (keep.len() - 1) * HOP + FRAME };
    let (mut xo, mut yo) = (vec![0.0; out_len], vec![0.0; out_len]);
    for (k, &i) in keep.iter().enumerate() {
        let (xf, yf) = (window(x, i), window(y, i));
        for j in 0..FRAME {
            xo[k * HOP + j] += xf[j];
            yo[k * HOP + j] += yf[j];
        }
    }
    (xo, yo)
}

/// One-third-octave band magnitudes, `[band][frame]`.
fn third_octave_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let bands = band_edges();
    let mut out = vec![Vec::new(); BANDS];
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    for i in frame_starts(x.len()) {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for j in 0..FRAME {
            buf[j].re = x[i + j] * w[j];
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let e: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[b].push(e.sqrt());
        }
    }
    out
}

/// FFT bin ranges `[lo, hi)` of the one-third-octave bands.
fn band_edges() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|i| i as f64 * FS / NFFT as f64).collect();
    let nearest = |f: f64| {
        (0..bins)
            .min_by(|&a, &b| (freqs[a] - f).abs().total_cmp(&(freqs[b] - f).abs()))
            .unwrap_or(0)
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}
