//! Toy speech synthesizer: phoneme sequences rendered as formant-shaped
//! harmonic and band-pass noise sources, plus the articulatory timeline the
//! synthetic "lip" features are derived from.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::conditioning::phonemes::{symbol_name, Lexicon, ARPABET, WORD_BOUNDARY};

/// Per-speaker voice parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    pub f0: f64,
    pub formant_scale: f64,
    pub rate: f64,
    pub breathiness: f64,
}

impl Voice {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Voice {
            f0: rng.gen_range(85.0..250.0),
            formant_scale: rng.gen_range(0.85..1.25),
            rate: rng.gen_range(0.8..1.25),
            breathiness: rng.gen_range(0.02..0.12),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Vowel,
    Glide,
    Nasal,
    Fricative,
    Stop,
    Affricate,
    Pause,
}

/// Acoustic and articulatory targets of one phone.
#[derive(Debug, Clone, Copy)]
struct PhoneSpec {
    class: Class,
    formants: [f64; 3],
    end_formants: Option<[f64; 3]>,
    voiced: f64,
    noise: f64,
    noise_hz: f64,
    noise_bw: f64,
    // articulatory descriptors
    round: f64,
    spread: f64,
    closure: f64,
    labiodental: f64,
    dental: f64,
}

const NEUTRAL: [f64; 3] = [500.0, 1500.0, 2500.0];

fn spec(symbol: &str) -> PhoneSpec {
    let base = PhoneSpec {
        class: Class::Vowel,
        formants: NEUTRAL,
        end_formants: None,
        voiced: 1.0,
        noise: 0.0,
        noise_hz: 3000.0,
        noise_bw: 2000.0,
        round: 0.0,
        spread: 0.0,
        closure: 0.0,
        labiodental: 0.0,
        dental: 0.0,
    };
    let vowel = |f: [f64; 3], round: f64, spread: f64| PhoneSpec { formants: f, round, spread, ..base };
    let diph = |a: [f64; 3], b: [f64; 3], round: f64, spread: f64| PhoneSpec { formants: a, end_formants: Some(b), round, spread, ..base };
    let fric = |hz: f64, bw: f64, level: f64, voiced: f64| PhoneSpec {
        class: Class::Fricative,
        voiced,
        noise: level,
        noise_hz: hz,
        noise_bw: bw,
        ..base
    };
    let stop = |hz: f64, voiced: f64| PhoneSpec { class: Class::Stop, voiced, noise: 0.8, noise_hz: hz, noise_bw: 1500.0, ..base };
    match symbol {
        "AA" => vowel([730.0, 1090.0, 2440.0], 0.0, 0.0),
        "AE" => vowel([660.0, 1720.0, 2410.0], 0.0, 0.4),
        "AH" => vowel([520.0, 1190.0, 2390.0], 0.0, 0.0),
        "AO" => vowel([570.0, 840.0, 2410.0], 0.7, 0.0),
        "AW" => diph([700.0, 1200.0, 2400.0], [350.0, 800.0, 2300.0], 0.5, 0.0),
        "AY" => diph([700.0, 1200.0, 2500.0], [350.0, 2100.0, 2700.0], 0.0, 0.5),
        "EH" => vowel([530.0, 1840.0, 2480.0], 0.0, 0.5),
        "ER" => vowel([490.0, 1350.0, 1690.0], 0.3, 0.0),
        "EY" => diph([500.0, 1900.0, 2500.0], [330.0, 2300.0, 2900.0], 0.0, 0.7),
        "IH" => vowel([390.0, 1990.0, 2550.0], 0.0, 0.6),
        "IY" => vowel([270.0, 2290.0, 3010.0], 0.0, 1.0),
        "OW" => diph([480.0, 950.0, 2400.0], [330.0, 780.0, 2300.0], 0.9, 0.0),
        "OY" => diph([520.0, 900.0, 2400.0], [350.0, 2000.0, 2700.0], 0.7, 0.3),
        "UH" => vowel([440.0, 1020.0, 2240.0], 0.6, 0.0),
        "UW" => vowel([300.0, 870.0, 2240.0], 1.0, 0.0),
        "L" => PhoneSpec { class: Class::Glide, formants: [360.0, 1300.0, 2800.0], voiced: 0.6, ..base },
        "R" => PhoneSpec { class: Class::Glide, formants: [420.0, 1300.0, 1600.0], voiced: 0.6, round: 0.4, ..base },
        "W" => PhoneSpec { class: Class::Glide, formants: [300.0, 700.0, 2200.0], voiced: 0.6, round: 1.0, ..base },
        "Y" => PhoneSpec { class: Class::Glide, formants: [280.0, 2200.0, 2900.0], voiced: 0.6, spread: 0.8, ..base },
        "M" => PhoneSpec { class: Class::Nasal, formants: [280.0, 1000.0, 2300.0], voiced: 0.35, closure: 1.0, ..base },
        "N" => PhoneSpec { class: Class::Nasal, formants: [280.0, 1500.0, 2500.0], voiced: 0.35, ..base },
        "NG" => PhoneSpec { class: Class::Nasal, formants: [280.0, 2000.0, 2700.0], voiced: 0.35, ..base },
        "S" => fric(6000.0, 2000.0, 0.6, 0.0),
        "Z" => fric(6000.0, 2000.0, 0.4, 0.4),
        "SH" => PhoneSpec { round: 0.5, ..fric(3500.0, 1500.0, 0.6, 0.0) },
        "ZH" => PhoneSpec { round: 0.5, ..fric(3500.0, 1500.0, 0.4, 0.4) },
        "F" => PhoneSpec { labiodental: 1.0, ..fric(5000.0, 3000.0, 0.25, 0.0) },
        "V" => PhoneSpec { labiodental: 1.0, ..fric(5000.0, 3000.0, 0.2, 0.4) },
        "TH" => PhoneSpec { dental: 1.0, ..fric(5500.0, 3000.0, 0.2, 0.0) },
        "DH" => PhoneSpec { dental: 1.0, ..fric(5500.0, 3000.0, 0.15, 0.4) },
        "HH" => fric(1500.0, 2500.0, 0.25, 0.0),
        "P" => PhoneSpec { closure: 1.0, ..stop(1000.0, 0.0) },
        "B" => PhoneSpec { closure: 1.0, ..stop(1000.0, 0.3) },
        "T" => stop(4000.0, 0.0),
        "D" => stop(4000.0, 0.3),
        "K" => stop(2000.0, 0.0),
        "G" => stop(2000.0, 0.3),
        "CH" => PhoneSpec { class: Class::Affricate, round: 0.4, ..fric(3500.0, 1500.0, 0.7, 0.0) },
        "JH" => PhoneSpec { class: Class::Affricate, round: 0.4, ..fric(3500.0, 1500.0, 0.5, 0.4) },
        _ => PhoneSpec { class: Class::Pause, voiced: 0.0, ..base },
    }
}

fn spec_for_id(id: usize) -> PhoneSpec {
    if id < ARPABET.len() {
        spec(ARPABET[id])
    } else if id == WORD_BOUNDARY {
        spec("|")
    } else {
        // character fallback symbols are rendered as a neutral vowel
        spec("AH")
    }
}

fn base_duration_ms(class: Class) -> f64 {
    match class {
        Class::Vowel => 120.0,
        Class::Glide => 70.0,
        Class::Nasal => 75.0,
        Class::Fricative => 95.0,
        Class::Stop => 80.0,
        Class::Affricate => 110.0,
        Class::Pause => 60.0,
    }
}

/// Number of articulatory descriptors per video frame.
pub const ARTICULATORY_DIMS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct PhoneSegment {
    pub id: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub words: Vec<String>,
    /// `(start, end)` seconds of each word.
    pub word_times: Vec<(f64, f64)>,
    pub phones: Vec<PhoneSegment>,
}

impl Utterance {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }

    /// Per-frame articulatory descriptors at `fps`:
    /// openness, rounding, spreading, lip closure, labiodental, dental,
    /// log energy and its frame-to-frame change.
    pub fn articulation(&self, fps: f64) -> Vec<[f64; ARTICULATORY_DIMS]> {
        let frames = (self.duration() * fps).round().max(1.0) as usize;
        let hop = self.sample_rate as f64 / fps;
        let mut out = Vec::with_capacity(frames);
        let mut prev_energy = None;
        for f in 0..frames {
            let (t0, t1) = (f as f64 / fps, (f + 1) as f64 / fps);
            let mut acc = [0.0; 6];
            let mut covered = 0.0;
            for p in &self.phones {
                let overlap = (p.end.min(t1) - p.start.max(t0)).max(0.0);
                if overlap <= 0.0 {
                    continue;
                }
                let s = spec_for_id(p.id);
                let open = match s.class {
                    Class::Vowel => ((s.formants[0] - 250.0) / 500.0).clamp(0.1, 1.0),
                    Class::Glide => 0.3,
                    Class::Pause => 0.0,
                    _ => 0.15 * (1.0 - s.closure),
                };
                for (a, v) in acc.iter_mut().zip([open, s.round, s.spread, s.closure, s.labiodental, s.dental]) {
                    *a += overlap * v;
                }
                covered += overlap;
            }
            if covered > 0.0 {
                acc.iter_mut().for_each(|a| *a /= t1 - t0);
            }
            let s0 = (f as f64 * hop) as usize;
            let s1 = (((f + 1) as f64 * hop) as usize).min(self.samples.len());
            let energy = if s1 > s0 {
                let e = self.samples[s0..s1].iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / (s1 - s0) as f64;
                ((e + 1e-6).log10() / 3.0 + 2.0).clamp(0.0, 2.0)
            } else {
                0.0
            };
            let delta = energy - prev_energy.unwrap_or(energy);
            prev_energy = Some(energy);
            out.push([acc[0], acc[1], acc[2], acc[3], acc[4], acc[5], energy, delta]);
        }
        out
    }
}

/// Random words from the lexicon.
pub fn random_words<R: Rng + ?Sized>(lexicon: &Lexicon, count: usize, rng: &mut R) -> Vec<String> {
    let words = lexicon.words();
    (0..count).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
}

struct Track {
    formants: [f64; 3],
    voiced: f64,
    noise: f64,
    noise_hz: f64,
    noise_bw: f64,
}

/// Renders `words` with `voice`; unknown words are skipped.
pub fn synthesize<R: Rng + ?Sized>(words: &[String], lexicon: &Lexicon, voice: &Voice, sample_rate: u32, rng: &mut R) -> Utterance {
    let sr = sample_rate as f64;
    let lead = rng.gen_range(0.03..0.12);
    let mut t = lead;
    let mut phones = Vec::new();
    let mut kept_words = Vec::new();
    let mut word_times = Vec::new();
    for word in words {
        let Some(ids) = lexicon.get(word) else { continue };
        if !kept_words.is_empty() {
            let d = base_duration_ms(Class::Pause) / voice.rate * rng.gen_range(0.6..1.4) / 1000.0;
            phones.push(PhoneSegment { id: WORD_BOUNDARY, start: t, end: t + d });
            t += d;
        }
        let start = t;
        for &id in ids {
            let d = base_duration_ms(spec_for_id(id).class) / voice.rate * rng.gen_range(0.75..1.3) / 1000.0;
            phones.push(PhoneSegment { id, start: t, end: t + d });
            t += d;
        }
        kept_words.push(word.to_lowercase());
        word_times.push((start, t));
    }
    let total = t + rng.gen_range(0.03..0.12);
    let n = (total * sr).round() as usize;

    // control tracks at 1 ms resolution, smoothed into transitions
    let ms = (total * 1000.0).ceil() as usize + 1;
    let mut tracks: Vec<Track> = (0..ms)
        .map(|_| Track { formants: NEUTRAL, voiced: 0.0, noise: 0.0, noise_hz: 3000.0, noise_bw: 2000.0 })
        .collect();
    for p in &phones {
        let s = spec_for_id(p.id);
        let (a, b) = ((p.start * 1000.0) as usize, ((p.end * 1000.0) as usize).min(ms));
        for (k, tr) in tracks[a..b].iter_mut().enumerate() {
            let u = k as f64 / (b - a).max(1) as f64;
            let f = match s.end_formants {
                Some(e) => [0, 1, 2].map(|i| s.formants[i] + u * (e[i] - s.formants[i])),
                None => s.formants,
            };
            tr.formants = f.map(|v| v * voice.formant_scale);
            let (voiced, noise) = match s.class {
                // closure then release burst
                Class::Stop => {
                    if u < 0.7 {
                        (s.voiced * 0.3, 0.0)
                    } else {
                        (s.voiced, s.noise)
                    }
                }
                Class::Affricate => {
                    if u < 0.35 {
                        (0.0, 0.0)
                    } else {
                        (s.voiced, s.noise)
                    }
                }
                _ => (s.voiced, s.noise),
            };
            tr.voiced = voiced;
            tr.noise = noise;
            tr.noise_hz = s.noise_hz.min(0.45 * sr);
            tr.noise_bw = s.noise_bw;
        }
    }
    smooth(&mut tracks, |t| &mut t.formants[0], 0.25);
    smooth(&mut tracks, |t| &mut t.formants[1], 0.25);
    smooth(&mut tracks, |t| &mut t.formants[2], 0.25);
    smooth(&mut tracks, |t| &mut t.voiced, 0.4);
    smooth(&mut tracks, |t| &mut t.noise, 0.5);

    let jitter = Normal::new(0.0, 1.0).expect("valid normal");
    let intonation_phase = rng.gen_range(0.0..2.0 * PI);
    let max_harm = (0.45 * sr / voice.f0).floor() as usize;
    let mut phase = 0.0f64;
    let mut samples = vec![0.0f64; n];
    let mut biquad = Biquad::default();
    let mut drift = 0.0;
    for (i, out) in samples.iter_mut().enumerate() {
        let time = i as f64 / sr;
        let tr = &tracks[((time * 1000.0) as usize).min(ms - 1)];
        if i % 16 == 0 {
            drift = 0.98 * drift + 0.02 * jitter.sample(rng);
            biquad.set_bandpass(tr.noise_hz, tr.noise_bw, sr);
        }
        let f0 = voice.f0 * (1.0 + 0.08 * (2.0 * PI * 0.7 * time + intonation_phase).sin() - 0.1 * time / total + 0.01 * drift);
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
        let mut voiced = 0.0;
        if tr.voiced > 1e-3 {
            for k in 1..=max_harm {
                let f = k as f64 * f0;
                let env: f64 = tr
                    .formants
                    .iter()
                    .zip([1.0, 0.7, 0.35])
                    .zip([90.0, 110.0, 160.0])
                    .map(|((&fc, g), bw)| g / (1.0 + ((f - fc) / bw).powi(2)))
                    .sum();
                voiced += env * (k as f64 * phase).sin() / (k as f64).powf(0.3);
            }
        }
        let white: f64 = rng.gen_range(-1.0..1.0);
        let noise = biquad.process(white);
        *out = tr.voiced * voiced * 0.3 + (tr.noise + voice.breathiness * tr.voiced) * noise * 2.0;
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let samples = samples.iter().map(|v| (0.5 * v / peak) as f32).collect();
    Utterance { samples, sample_rate, words: kept_words, word_times, phones }
}

fn smooth(tracks: &mut [Track], field: impl Fn(&mut Track) -> &mut f64, alpha: f64) {
    let mut prev = None;
    for t in tracks.iter_mut() {
        let v = field(t);
        let s = match prev {
            Some(p) => p + alpha * (*v - p),
            None => *v,
        };
        *v = s;
        prev = Some(s);
    }
}

#[derive(Debug, Default, Clone)]
struct Biquad {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Biquad {
    /// Constant 0 dB peak-gain band-pass.
    fn set_bandpass(&mut self, center: f64, bw: f64, sr: f64) {
        let w0 = 2.0 * PI * center / sr;
        let q = (center / bw).max(0.3);
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        self.b0 = alpha / a0;
        self.b2 = -alpha / a0;
        self.a1 = -2.0 * w0.cos() / a0;
        self.a2 = (1.0 - alpha) / a0;
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Background noise: band-limited noise with slow level changes and an
/// optional mains-like hum.
pub fn synthesize_noise<R: Rng + ?Sized>(len: usize, sample_rate: u32, rng: &mut R) -> Vec<f32> {
    let sr = sample_rate as f64;
    let mut bq = Biquad::default();
    bq.set_bandpass(rng.gen_range(300.0..3000.0), rng.gen_range(500.0..4000.0), sr);
    let hum = if rng.gen_bool(0.5) { rng.gen_range(0.05..0.3) } else { 0.0 };
    let hum_hz = rng.gen_range(50.0..120.0);
    let mod_hz = rng.gen_range(0.2..2.0);
    let tilt = rng.gen_range(0.0..0.9);
    let mut low = 0.0;
    let out: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let w: f64 = rng.gen_range(-1.0..1.0);
            low = tilt * low + (1.0 - tilt) * w;
            let level = 1.0 + 0.5 * (2.0 * PI * mod_hz * t).sin();
            level * (bq.process(w) + 0.5 * low) + hum * (2.0 * PI * hum_hz * t).sin()
        })
        .collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    out.iter().map(|v| (0.5 * v / peak) as f32).collect()
}

/// Symbol names of a phone sequence, for debugging output.
pub fn phone_symbols(phones: &[PhoneSegment]) -> Vec<String> {
    phones.iter().map(|p| symbol_name(p.id)).collect()
}
