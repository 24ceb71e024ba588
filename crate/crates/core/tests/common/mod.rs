#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn white_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.gen_range(-1.0..1.0)).collect()
}

/// Sum of random sinusoids strictly below `max_hz`.
pub fn bandlimited_noise(len: usize, sr: f64, max_hz: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let comps: Vec<(f64, f64, f64)> = (0..60)
        .map(|_| (r.gen_range(20.0..max_hz), r.gen_range(0.0..2.0 * PI), r.gen_range(0.1..1.0)))
        .collect();
    (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            comps.iter().map(|(f, p, a)| a * (2.0 * PI * f * t + p).sin()).sum::<f64>() / 10.0
        })
        .collect()
}

/// Harmonic tone with a syllable-rate amplitude envelope.
pub fn speech_like(len: usize, sr: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let f0 = r.gen_range(100.0..200.0);
    let rate = r.gen_range(3.0..5.0);
    let phase = r.gen_range(0.0..PI);
    (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let env = 0.05 + (2.0 * PI * rate * t + phase).sin().powi(2);
            let formant = 1.0 + 0.5 * (2.0 * PI * 1.3 * t).sin();
            let tone: f64 = (1..20)
                .map(|k| {
                    let boost = if k == 3 || k == 4 { 2.0 * formant } else { 1.0 };
                    (2.0 * PI * k as f64 * f0 * t).sin() / k as f64 * boost
                })
                .sum();
            env * tone
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Component of `n` orthogonal to `s`, rescaled to the energy of `s`.
pub fn orthogonal_equal_energy(s: &[f64], n: &[f64]) -> Vec<f64> {
    let a = dot(n, s) / dot(s, s);
    let mut o: Vec<f64> = n.iter().zip(s).map(|(x, y)| x - a * y).collect();
    let k = (dot(s, s) / dot(&o, &o)).sqrt();
    o.iter_mut().for_each(|v| *v *= k);
    o
}
