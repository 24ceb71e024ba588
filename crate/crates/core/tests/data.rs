mod common;

use common::*;
use proptest::prelude::*;
use vf_core::audio::rms;
use vf_core::conditioning::{decode_features, Lexicon};
use vf_core::data::*;
use vf_core::metrics::si_sdr;
use vf_core::CoreError;
use vf_tensor::Tensor;

fn f32s(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v as f32).collect()
}

fn source(id: &str, audio: Vec<f32>, fps: f64, frames: usize) -> Source {
    let features = Tensor::new(vec![frames, 4], (0..frames * 4).map(|i| 1.0 + i as f32).collect()).unwrap();
    Source {
        id: id.into(),
        speaker: Some(id.into()),
        audio,
        sample_rate: 16_000,
        features: Some(features),
        fps,
        text: Some("alpha beta gamma delta".into()),
        word_times: Some(vec![(0.1, 0.5), (0.6, 1.2), (2.0, 3.0), (6.0, 7.5)]),
    }
}

fn sample(len: usize, seed: u64) -> MixtureSample {
    let s = source("s", f32s(&speech_like(len, 16_000.0, seed)), 25.0, (len as f64 / 640.0).round() as usize);
    let zeros = vec![0.0; len];
    make_mixture("m", &s, &zeros, InterfererKind::Speech).unwrap()
}

#[test]
fn normalize_track_scales_to_unit_rms() {
    let x: Vec<f32> = (0..1000).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
    let y = normalize_track(&x).unwrap();
    assert!((y[0] - 1.0).abs() < 1e-6 && (rms(&y) - 1.0).abs() < 1e-6);
    let z = normalize_track(&y).unwrap();
    assert!(y.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-6));
    assert!(matches!(normalize_track(&[0.0; 8]), Err(CoreError::Degenerate(_))));
}

#[test]
fn orthogonal_unit_rms_mixture_is_zero_db() {
    for seed in 0..5 {
        let s = speech_like(16_000, 16_000.0, seed);
        let n = orthogonal_equal_energy(&s, &white_noise(16_000, seed + 10));
        let t = source("t", normalize_track(&f32s(&s)).unwrap(), 25.0, 25);
        let m = make_mixture("m", &t, &normalize_track(&f32s(&n)).unwrap(), InterfererKind::Speech).unwrap();
        assert!(si_sdr(&m.mixture, &m.target).unwrap().abs() < 0.1);
    }
}

#[test]
fn silent_interferer_leaves_target() {
    let t = source("t", f32s(&white_noise(500, 1)), 25.0, 1);
    let m = make_mixture("m", &t, &[0.0; 500], InterfererKind::Noise).unwrap();
    assert_eq!(m.mixture, m.target);
    assert_eq!(m.kind, InterfererKind::Noise);
    assert!(make_mixture("m", &source("e", vec![], 25.0, 1), &[], InterfererKind::Noise).is_err());
    assert!(matches!(make_mixture("m", &t, &[0.0; 10], InterfererKind::Noise), Err(CoreError::Contract(_))));
}

#[test]
fn mixture_energy_adds_for_uncorrelated_tracks() {
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for seed in 0..100 {
        let a = normalize_track(&f32s(&speech_like(4000, 16_000.0, seed))).unwrap();
        let b = normalize_track(&f32s(&white_noise(4000, seed + 1000))).unwrap();
        let t = source("t", a.clone(), 25.0, 1);
        let m = make_mixture("m", &t, &b, InterfererKind::Noise).unwrap();
        lhs += rms(&m.mixture).powi(2);
        rhs += rms(&a).powi(2) + rms(&b).powi(2);
    }
    assert!((lhs / rhs - 1.0).abs() < 0.05, "{}", lhs / rhs);
}

#[test]
fn interferer_is_cropped_or_tiled() {
    let long: Vec<f32> = (0..100).map(|i| i as f32).collect();
    let c = fit_interferer(&long, 10, &mut rng(1)).unwrap();
    assert_eq!(c.len(), 10);
    assert!(c.windows(2).all(|w| w[1] == w[0] + 1.0));
    let t = fit_interferer(&[1.0, 2.0, 3.0], 7, &mut rng(1)).unwrap();
    assert_eq!(t, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
}

#[test]
fn crop_lengths_and_determinism() {
    let s = sample(8 * 16_000, 3);
    let a = random_crop(&s, 4.0, &mut rng(5)).unwrap().unwrap();
    let b = random_crop(&s, 4.0, &mut rng(5)).unwrap().unwrap();
    assert_eq!(a.mixture.len(), 64_000);
    assert_eq!(a.mixture, b.mixture);
    assert_eq!(a.features.as_ref().unwrap().shape(), &[100, 4]);
    assert!(random_crop(&sample(16_000, 1), 4.0, &mut rng(5)).unwrap().is_none());
}

#[test]
fn crop_keeps_audio_features_and_words_on_one_window() {
    // feature row r encodes its own frame index, audio sample n encodes n
    let len = 8 * 16_000;
    let mut s = sample(len, 2);
    s.target = (0..len).map(|n| n as f32).collect();
    s.mixture = s.target.clone();
    for seed in 0..10 {
        let c = random_crop(&s, 2.0, &mut rng(seed)).unwrap().unwrap();
        let start_s = c.target[0] as f64 / 16_000.0;
        let first_row = c.features.as_ref().unwrap().row(0)[0];
        let frame = ((first_row - 1.0) / 4.0) as f64;
        assert!((frame / 25.0 - start_s).abs() <= 1.0 / 25.0, "seed {seed}");
        let words = c.text.as_deref().unwrap().split_whitespace().count();
        assert_eq!(words, c.word_times.as_ref().unwrap().len());
        for &(a, b) in c.word_times.as_ref().unwrap() {
            let mid = 0.5 * (a + b);
            assert!((0.0..2.0).contains(&mid));
        }
    }
}

#[test]
fn bucketing_examples() {
    let equal = length_bucket_batches(&[100; 10], 4);
    assert_eq!(equal.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    let lens: Vec<usize> = (0..128).map(|i| if i % 2 == 0 { 16_000 } else { 80_000 }).collect();
    for b in length_bucket_batches(&lens, 8) {
        assert!(b.iter().all(|&i| lens[i] == lens[b[0]]));
    }
}

proptest! {
    #[test]
    fn bucketing_preserves_samples_and_bounds_ratio(lens in prop::collection::vec(1000usize..100_000, 0..200), bs in 1usize..16) {
        let batches = length_bucket_batches(&lens, bs);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..lens.len()).collect::<Vec<_>>());
        for b in &batches {
            prop_assert!(!b.is_empty() && b.len() <= bs);
            let max = b.iter().map(|&i| lens[i]).max().unwrap() as f64;
            let min = b.iter().map(|&i| lens[i]).min().unwrap() as f64;
            prop_assert!(max / min <= 1.1);
        }
    }

    #[test]
    fn injectors_are_pure_functions_of_seed(seed in 0u64..1000, frac in 0.0f64..=1.0, k in 0usize..=4) {
        let s = sample(16_000, 1);
        let a = mask_video_frames(&s, frac, &mut rng(seed)).unwrap();
        let b = mask_video_frames(&s, frac, &mut rng(seed)).unwrap();
        prop_assert_eq!(a.features, b.features);
        let a = remove_words(&s, k, &mut rng(seed)).unwrap();
        let b = remove_words(&s, k, &mut rng(seed)).unwrap();
        prop_assert_eq!(a.text, b.text);
    }
}

#[test]
fn offset_shifts_audio_with_zero_fill() {
    let s = sample(16_000, 4);
    let same = inject_av_offset(&s, 0.0).unwrap();
    assert_eq!((same.mixture.clone(), same.target.clone()), (s.mixture.clone(), s.target.clone()));
    let d = inject_av_offset(&s, 200.0).unwrap();
    assert!(d.mixture[..3200].iter().all(|&v| v == 0.0));
    assert_eq!(&d.mixture[3200..], &s.mixture[..16_000 - 3200]);
    assert_eq!(&d.target[3200..], &s.target[..16_000 - 3200]);
    assert_eq!(d.features, s.features);
    assert_eq!(d.perturbation.offset_ms, 200.0);
    let a = inject_av_offset(&s, -200.0).unwrap();
    assert_eq!(&a.mixture[..16_000 - 3200], &s.mixture[3200..]);
    // five frames at 25 fps
    assert_eq!(inject_av_offset(&s, 5.0 * 1000.0 / 25.0).unwrap().mixture, d.mixture);
    assert!(matches!(inject_av_offset(&s, 401.0), Err(CoreError::Range(_))));
}

#[test]
fn masking_zeroes_exact_row_count() {
    let mut s = sample(16_000, 5);
    s.features = Some(Tensor::full(vec![10, 3], 1.0));
    let zero_rows = |m: &MixtureSample| {
        let f = m.features.as_ref().unwrap();
        (0..10).filter(|&r| f.row(r).iter().all(|&v| v == 0.0)).count()
    };
    assert_eq!(mask_video_frames(&s, 0.0, &mut rng(1)).unwrap().features, s.features);
    assert_eq!(zero_rows(&mask_video_frames(&s, 1.0, &mut rng(1)).unwrap()), 10);
    let half = mask_video_frames(&s, 0.5, &mut rng(1)).unwrap();
    assert_eq!(zero_rows(&half), 5);
    assert_eq!(half.perturbation.masked_frames.len(), 5);
    assert!(mask_video_frames(&s, 1.5, &mut rng(1)).is_err());
}

#[test]
fn word_removal_shrinks_phoneme_sequence() {
    let lex = Lexicon::demo();
    let mut s = sample(16_000, 6);
    s.text = Some("the blue ship sails over green water".into());
    s.word_times = None;
    assert_eq!(remove_words(&s, 0, &mut rng(3)).unwrap().text, s.text);
    for seed in 0..5 {
        let lens: Vec<usize> =
            (0..=7).map(|k| remove_words(&s, k, &mut rng(seed)).unwrap().phonemes(&lex).unwrap().len()).collect();
        assert!(lens.windows(2).all(|w| w[1] < w[0]), "seed {seed}: {lens:?}");
        assert_eq!(lens[7], 0);
    }
    assert!(matches!(remove_words(&s, 8, &mut rng(1)), Err(CoreError::Range(_))));
}

#[test]
fn swapping_replaces_one_stream() {
    let lex = Lexicon::demo();
    let a = sample(16_000, 7);
    let mut b = sample(16_000, 8);
    b.source_id = "other".into();
    b.text = Some("green water".into());
    b.features = Some(Tensor::full(vec![25, 4], -3.0));
    let t = swap_modality(&a, SwapKind::Text, &b).unwrap();
    assert_ne!(t.phonemes(&lex), a.phonemes(&lex));
    assert_eq!((t.target.clone(), t.features.clone()), (a.target.clone(), a.features.clone()));
    let v = swap_modality(&a, SwapKind::Video, &b).unwrap();
    assert_eq!(v.features, b.features);
    assert_eq!(v.text, a.text);
    let both = swap_modality(&v, SwapKind::Text, &b).unwrap();
    assert_eq!(both.perturbation.swapped_label(), "video+text");
    assert!(matches!(swap_modality(&a, SwapKind::Video, &a), Err(CoreError::Contract(_))));
}

fn small_corpus(seed: u64) -> CorpusConfig {
    CorpusConfig { speakers: 2, seconds_per_speaker: 8.0, noise_clips: 3, noise_seconds: 1.0, feature_dim: 16, seed, ..Default::default() }
}

#[test]
fn corpus_is_deterministic_and_valid() {
    let lex = Lexicon::demo();
    let a = generate_corpus(&small_corpus(1), &lex).unwrap();
    let b = generate_corpus(&small_corpus(1), &lex).unwrap();
    assert_eq!(a.utterances.len(), b.utterances.len());
    for (x, y) in a.utterances.iter().zip(&b.utterances) {
        assert_eq!(x.utterance.samples, y.utterance.samples);
        assert_eq!(x.features, y.features);
        let frames = (x.utterance.duration() * 25.0).round() as usize;
        assert_eq!(x.features.shape(), &[frames, 16]);
        assert!(x.utterance.samples.iter().all(|v| v.is_finite()));
    }
    let c = generate_corpus(&small_corpus(2), &lex).unwrap();
    assert_ne!(a.utterances[0].utterance.samples, c.utterances[0].utterance.samples);
}

#[test]
fn written_corpus_round_trips_through_manifest() {
    let lex = Lexicon::demo();
    let corpus = generate_corpus(&small_corpus(3), &lex).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let manifest = corpus.write(&out, false).unwrap();
    let entries = load_manifest(&manifest).unwrap();
    for split in ["train", "val", "test"] {
        assert!(entries.iter().filter(|e| e.split == split).count() >= 2, "{split}");
    }
    for e in entries.iter().filter(|e| e.kind == EntryKind::Speech) {
        let bytes = std::fs::read(e.features.as_ref().unwrap()).unwrap();
        decode_features(&bytes).unwrap();
        let src = e.load(25.0).unwrap();
        assert!((src.audio.len() as f64 / 16_000.0 - e.duration).abs() < 1e-3);
    }
    assert!(matches!(corpus.write(&out, false), Err(CoreError::InvalidInput(_))));
    corpus.write(&out, true).unwrap();

    std::fs::remove_file(&entries[0].audio).unwrap();
    assert!(load_manifest(&manifest).unwrap_err().to_string().contains("missing file"));
}

#[test]
fn built_mixtures_follow_the_task() {
    let lex = Lexicon::demo();
    let corpus = generate_corpus(&small_corpus(4), &lex).unwrap();
    let speech = corpus.sources(None);
    let noise = corpus.noise_sources(None);
    let sep = build_mixtures(&speech, &noise, Task::Separation, 6, Some(1.0), 9).unwrap();
    assert!(!sep.is_empty());
    for m in &sep {
        assert_eq!(m.kind, InterfererKind::Speech);
        assert_eq!(m.mixture.len(), 16_000);
        assert!((rms(&m.target) - 1.0).abs() < 1e-4);
        assert_eq!(m.features.as_ref().unwrap().shape()[0], 25);
    }
    let den = build_mixtures(&speech, &noise, Task::Denoising, 4, None, 9).unwrap();
    assert!(den.iter().all(|m| m.kind == InterfererKind::Noise && m.id.contains("noise_")));
    let again = build_mixtures(&speech, &noise, Task::Separation, 6, Some(1.0), 9).unwrap();
    assert_eq!(sep.iter().map(|m| m.mixture.clone()).collect::<Vec<_>>(), again.iter().map(|m| m.mixture.clone()).collect::<Vec<_>>());
    let a = crop_source(&speech[0], 1.0, &mut rng(1)).unwrap().unwrap();
    let b = crop_source(&speech[speech.len() - 1], 1.0, &mut rng(2)).unwrap().unwrap();
    let pair = mixture_pair("p", &a, &b).unwrap();
    assert_eq!((pair[0].source_id.as_str(), pair[1].source_id.as_str()), (a.id.as_str(), b.id.as_str()));
    assert_eq!(pair[0].mixture, pair[1].mixture);
    assert!(mixture_pair("p", &a, &speech[0]).is_err());
}
