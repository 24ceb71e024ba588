use std::f64::consts::PI;

use vf_tensor::{LinearMap, Scalar};

use super::Waveform;
use crate::{CoreError, Result};

const KAISER_BETA: f64 = 8.0;
const TAPS_PER_PHASE: usize = 64;
const ROLLOFF: f64 = 0.95;
const MAX_DENOMINATOR: usize = 1000;

/// Rational windowed-sinc polyphase resampler by `up / down`.
///
/// Each output sample is a dot product of `2 * half` input samples with one
/// of `up` precomputed Kaiser-windowed sinc phases. Samples outside the
/// signal are treated as zero.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    half: usize,
    taps: Vec<f64>,
}

impl Resampler {
    pub fn new(factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(CoreError::InvalidInput(format!("resample factor must be positive, got {factor}")));
        }
        let (up, down) = rational_approx(factor, MAX_DENOMINATOR);
        let ratio = up as f64 / down as f64;
        let stretch = ratio.min(1.0);
        let cutoff = stretch * ROLLOFF;
        let half = (TAPS_PER_PHASE as f64 / 2.0 / stretch).ceil() as usize;
        let width = 2 * half;
        let mut taps = vec![0.0; up * width];
        for p in 0..up {
            let frac = p as f64 / up as f64;
            let row = &mut taps[p * width..(p + 1) * width];
            for (k, t) in row.iter_mut().enumerate() {
                let d = (k as f64 - (half as f64 - 1.0)) - frac;
                *t = cutoff * sinc(cutoff * d) * kaiser(d / half as f64, KAISER_BETA);
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|t| *t /= s);
        }
        Ok(Resampler { up, down, half, taps })
    }

    pub fn ratio(&self) -> (usize, usize) {
        (self.up, self.down)
    }

    pub fn is_identity(&self) -> bool {
        self.up == self.down
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len * self.up) as f64 / self.down as f64).round() as usize
    }

    /// First input index and the taps covering it for output `n`, clipped
    /// to the signal.
    fn window(&self, n: usize, input_len: usize) -> (usize, &[f64]) {
        let width = 2 * self.half;
        let num = n * self.down;
        let phase = num % self.up;
        let start = (num / self.up) as isize - (self.half as isize - 1);
        let row = &self.taps[phase * width..(phase + 1) * width];
        let lo = (-start).max(0) as usize;
        let hi = ((input_len as isize - start).max(0) as usize).min(width);
        if lo >= hi {
            return (0, &[]);
        }
        ((start + lo as isize) as usize, &row[lo..hi])
    }

    pub fn process<F: Scalar>(&self, x: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.output_len(x.len())];
        LinearMap::apply(self, x, &mut out);
        out
    }
}

impl<F: Scalar> LinearMap<F> for Resampler {
    fn output_len(&self, input_len: usize) -> usize {
        Resampler::output_len(self, input_len)
    }

    fn apply(&self, x: &[F], out: &mut [F]) {
        if self.is_identity() {
            out.copy_from_slice(x);
            return;
        }
        let x: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
        for (n, o) in out.iter_mut().enumerate() {
            let (i0, taps) = self.window(n, x.len());
            *o = F::of(taps.iter().zip(&x[i0..]).fold(0.0, |a, (t, v)| a + t * v));
        }
    }

    fn apply_adjoint(&self, g: &[F], out: &mut [F]) {
        if self.is_identity() {
            out.iter_mut().zip(g).for_each(|(o, &v)| *o += v);
            return;
        }
        let mut acc = vec![0.0f64; out.len()];
        for (n, &gn) in g.iter().enumerate() {
            let (i0, taps) = self.window(n, acc.len());
            let gn = gn.as_f64();
            acc[i0..i0 + taps.len()].iter_mut().zip(taps).for_each(|(a, t)| *a += t * gn);
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o += F::of(a);
        }
    }
}

/// Resamples by `factor`; the new rate is the old rate times the factor.
pub fn resample(w: &Waveform, factor: f64) -> Result<Waveform> {
    let r = Resampler::new(factor)?;
    let (up, down) = r.ratio();
    let rate = (w.sample_rate as u64 * up as u64 + down as u64 / 2) / down as u64;
    Waveform::new(r.process(&w.samples), rate as u32)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn kaiser(t: f64, beta: f64) -> f64 {
    if t.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - t * t).sqrt()) / bessel_i0(beta)
}

fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Best rational approximation with a bounded denominator (continued fractions).
fn rational_approx(x: f64, max_den: usize) -> (usize, usize) {
    let (mut h0, mut h1, mut k0, mut k1) = (0u64, 1u64, 1u64, 0u64);
    let mut v = x;
    for _ in 0..64 {
        let a = v.floor() as u64;
        let (h2, k2) = (a * h1 + h0, a * k1 + k0);
        if k2 as usize > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let rem = v - a as f64;
        if rem.abs() < 1e-12 || (h1 as f64 / k1 as f64 - x).abs() < 1e-12 * x {
            break;
        }
        v = 1.0 / rem;
    }
    let g = gcd(h1, k1);
    ((h1 / g).max(1) as usize, (k1 / g).max(1) as usize)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}
