mod common;

use common::*;
use vf_core::conditioning::{phonemize, EncodedStreams, Lexicon};
use vf_core::fusion::*;
use vf_core::model::{ForwardOptions, ModelConfig, ModelInput, SeparationModel};
use vf_tensor::gradcheck::check_params;
use vf_tensor::{ParamStore, Tape, Tensor, TensorError};

fn mat(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], white_noise(rows * cols, seed)).unwrap()
}

fn encoder(d: usize, heads: usize, layers: usize, seed: u64) -> (TransformerEncoder, ParamStore<f64>) {
    let cfg = TransformerConfig { layers, heads, d_model: d, ffn_width: 2 * d, dropout: 0.0 };
    let mut store = ParamStore::new();
    let enc = TransformerEncoder::new(&mut store, "fusion", &cfg, &mut rng(seed)).unwrap();
    (enc, store)
}

#[test]
fn concatenation_records_boundaries_and_round_trips() {
    let mut tape = Tape::<f64>::new();
    let (a, v, q) = (mat(3, 4, 1), mat(2, 4, 2), mat(4, 4, 3));
    let streams = EncodedStreams {
        audio: tape.constant(a.clone()),
        video: Some(tape.constant(v.clone())),
        text: Some(tape.constant(q.clone())),
    };
    let fused = concat_streams(&mut tape, &streams).unwrap();
    assert_eq!((fused.t_a, fused.t_v, fused.t_q, fused.len()), (3, 2, 4, 9));
    assert_eq!(fused.boundaries(), (3, 5));
    for (start, len, orig) in [(0, 3, &a), (3, 2, &v), (5, 4, &q)] {
        let part = tape.slice_rows(fused.z, start, len).unwrap();
        assert_eq!(tape.value(part), orig);
    }
}

#[test]
fn audio_only_sequence_is_the_audio_stream() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(mat(5, 4, 4));
    let fused = concat_streams(&mut tape, &EncodedStreams { audio: a, video: None, text: None }).unwrap();
    assert_eq!((fused.t_v, fused.t_q), (0, 0));
    assert_eq!(tape.value(fused.z), tape.value(a));
    assert_eq!(take_audio_output(&mut tape, &fused, fused.z).unwrap(), fused.z);
}

#[test]
fn single_token_attends_to_itself() {
    let (enc, store) = encoder(8, 2, 1, 5);
    let mut tape = Tape::new();
    let z = tape.constant(mat(1, 8, 6));
    let (_, map) = enc.forward(&mut tape, &store, z, None, true).unwrap();
    for h in &map.layers[0] {
        assert_eq!(h.data(), &[1.0]);
    }
}

#[test]
fn encoder_is_permutation_equivariant() {
    for seed in [1, 2, 3] {
        let (enc, store) = encoder(16, 4, 2, seed);
        let z = mat(7, 16, seed + 10);
        let perm = [4, 2, 6, 0, 1, 5, 3];
        let pz = Tensor::new(vec![7, 16], perm.iter().flat_map(|&p| z.row(p).to_vec()).collect()).unwrap();
        let mut tape = Tape::new();
        let (zv, pzv) = (tape.constant(z), tape.constant(pz));
        let (y, _) = enc.forward(&mut tape, &store, zv, None, false).unwrap();
        let (py, _) = enc.forward(&mut tape, &store, pzv, None, false).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            let diff = tape.value(py).row(i).iter().zip(tape.value(y).row(p)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-5, "seed {seed} row {i}: {diff}");
        }
    }
}

#[test]
fn attention_rows_are_dense_distributions() {
    let (enc, store) = encoder(16, 4, 2, 7);
    let mut tape = Tape::new();
    let z = tape.constant(mat(12, 16, 8));
    let (_, map) = enc.forward(&mut tape, &store, z, None, true).unwrap();
    assert_eq!(map.layers.len(), 2);
    for layer in &map.layers {
        assert_eq!(layer.len(), 4);
        for h in layer {
            for r in 0..12 {
                let row = h.row(r);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&p| p > 0.0));
            }
        }
    }
}

#[test]
fn discarded_rows_receive_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let fused = {
        let a = tape.constant(mat(3, 4, 9));
        let v = tape.constant(mat(2, 4, 10));
        concat_streams(&mut tape, &EncodedStreams { audio: a, video: Some(v), text: None }).unwrap()
    };
    let y = tape.leaf(mat(5, 4, 11));
    let out = take_audio_output(&mut tape, &fused, y).unwrap();
    assert_eq!(tape.shape(out), &[3, 4]);
    let loss = tape.sum(out).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.leaf(y).unwrap();
    assert!(g.data()[..12].iter().all(|&v| v == 1.0));
    assert!(g.data()[12..].iter().all(|&v| v == 0.0));
}

fn tiny_avt() -> ModelConfig {
    let mut cfg = ModelConfig::desk();
    cfg.unet.depth = 2;
    cfg.unet.base_channels = 8;
    cfg.transformer = TransformerConfig { layers: 1, heads: 2, d_model: 16, ffn_width: 32, dropout: 0.0 };
    cfg
}

#[test]
fn modality_encodings_distinguish_video_from_text() {
    let lex = Lexicon::demo();
    let cfg = tiny_avt();
    let (model, mut store) = SeparationModel::init::<f64>(&cfg, 3).unwrap();
    let mix: Vec<f32> = white_noise(512, 1).iter().map(|&v| v as f32).collect();
    let video = Tensor::new(vec![4, 16], white_noise(64, 2).iter().map(|&v| v as f32).collect()).unwrap();
    let text = phonemize("the ship", &lex);
    let input = ModelInput { mixture: &mix, video: Some(&video), phonemes: Some(&text) };
    let before = model.separate(&store, &input).unwrap();
    let (v, q) = (store.id("encodings.me_video").unwrap(), store.id("encodings.me_text").unwrap());
    let (vv, qv) = (store.value(v).clone(), store.value(q).clone());
    store.get_mut(v).value = qv;
    store.get_mut(q).value = vv;
    let after = model.separate(&store, &input).unwrap();
    assert!(before.iter().zip(&after).any(|(a, b)| a != b));
}

#[test]
fn cross_modal_attention_blocks_and_csv() {
    let lex = Lexicon::demo();
    let cfg = tiny_avt();
    let (model, store) = SeparationModel::init::<f64>(&cfg, 4).unwrap();
    let mix: Vec<f32> = white_noise(512, 3).iter().map(|&v| v as f32).collect();
    let video = Tensor::new(vec![3, 16], vec![0.5f32; 48]).unwrap();
    let text = phonemize("blue", &lex);
    let input = ModelInput { mixture: &mix, video: Some(&video), phonemes: Some(&text) };
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &store, &input, ForwardOptions { rng: None, capture_attention: true }).unwrap();
    let fused = out.fused.unwrap();
    let blocks = extract_attention_rows(&out.attention, &fused).unwrap();
    assert_eq!((blocks.audio_video.rows, blocks.audio_video.cols), (fused.t_a, 3));
    assert_eq!((blocks.audio_text.rows, blocks.audio_text.cols), (fused.t_a, text.len()));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("av.csv");
    blocks.audio_video.write_csv(&p, "audio_token", "video_frame").unwrap();
    let csv = std::fs::read_to_string(&p).unwrap();
    assert_eq!(csv.lines().count(), fused.t_a + 1);
    assert!(csv.starts_with("audio_token,video_frame_0,video_frame_1,video_frame_2\n"));
}

#[test]
fn lstm_bottleneck_properties() {
    let mut store = ParamStore::<f64>::new();
    let rb = RecurrentBottleneck::new(&mut store, "recurrent", 4, true, &mut rng(5)).unwrap();
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(vec![6, 4]));
    let v = tape.constant(Tensor::zeros(vec![3, 4]));
    let y = rb.forward(&mut tape, &store, a, Some(v)).unwrap();
    assert_eq!(tape.shape(y), &[6, 4]);
    assert!(tape.value(y).data().iter().all(|&x| x == 0.0));
    assert!(rb.forward(&mut tape, &store, a, None).is_err());

    let (x, vid) = (mat(5, 4, 6), mat(2, 4, 7));
    let probes: Vec<_> = store.ids().flat_map(|id| [(id, 0), (id, 3)]).collect();
    let report = check_params(
        &store,
        &probes,
        |tape, s| {
            let (a, v) = (tape.constant(x.clone()), tape.constant(vid.clone()));
            let y = rb.forward(tape, s, a, Some(v)).map_err(|e| TensorError::Contract(e.to_string()))?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        },
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn nearest_frame_mapping_spans_the_clip() {
    assert_eq!(nearest_frames(4, 2), vec![0, 0, 1, 1]);
    let m = nearest_frames(10, 4);
    assert_eq!((m[0], m[9]), (0, 3));
    assert!(m.windows(2).all(|w| w[0] <= w[1]));
}
