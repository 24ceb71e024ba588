mod common;

use common::*;
use rand::Rng;
use vf_core::unet::{UNet, UNetConfig};
use vf_tensor::gradcheck::check_params;
use vf_tensor::{ParamStore, Tape, Tensor, TensorError};

fn wave(len: usize, seed: u64) -> Tensor<f64> {
    Tensor::new(vec![1, len], white_noise(len, seed)).unwrap()
}

fn build(cfg: &UNetConfig, seed: u64) -> (UNet, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let net = UNet::new(&mut store, "unet", cfg, &mut rng(seed)).unwrap();
    (net, store)
}

fn run(net: &UNet, store: &ParamStore<f64>, x: &Tensor<f64>, zero_bottleneck: bool) -> Tensor<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(x.clone());
    let y = net
        .forward(&mut tape, store, x, |tape, t| {
            if zero_bottleneck {
                let s = tape.shape(t).to_vec();
                Ok(tape.constant(Tensor::zeros(s)))
            } else {
                Ok(t)
            }
        })
        .unwrap();
    tape.value(y).clone()
}

fn tiny() -> UNetConfig {
    UNetConfig { depth: 2, base_channels: 4, resample_factor: 1.0, ..UNetConfig::desk() }
}

#[test]
fn token_count_follows_stride_arithmetic() {
    let cfg = UNetConfig { resample_factor: 1.0, ..UNetConfig::desk() };
    let (net, store) = build(&cfg, 1);
    for k in 1..=5 {
        let mut tape = Tape::new();
        let x = tape.constant(wave(256 * k, k as u64));
        let acts = net.encode(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(acts.tokens()), &[64, k]);
    }
    let paper = UNetConfig { resample_factor: 1.0, ..UNetConfig::default() };
    for k in 1..=4 {
        assert_eq!(paper.token_len(1024 * k), k);
    }
}

#[test]
fn token_count_is_ceil_of_padded_length() {
    for cfg in [UNetConfig::desk(), UNetConfig { resample_factor: 3.2, ..UNetConfig::desk() }, UNetConfig::default()] {
        let m = cfg.total_stride();
        let mut r = rng(3);
        for _ in 0..50 {
            let len: usize = r.gen_range(1..200_000);
            let up = (len as f64 * cfg.resample_factor).round() as usize;
            assert_eq!(cfg.token_len(len), up.div_ceil(m));
            assert_eq!(cfg.padded_len(len) % m, 0);
        }
    }
}

#[test]
fn zero_input_gives_zero_tokens() {
    let (net, store) = build(&UNetConfig::desk(), 2);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(vec![1, 1024]));
    let acts = net.encode(&mut tape, &store, x).unwrap();
    assert!(tape.value(acts.tokens()).data().iter().all(|&v| v == 0.0));
}

#[test]
fn output_length_equals_input_length() {
    let (net, store) = build(&UNetConfig::desk(), 4);
    let mut r = rng(5);
    for i in 0..50 {
        let len = r.gen_range(1024..=65_536);
        let y = run(&net, &store, &wave(len, i), false);
        assert_eq!(y.shape(), &[1, len], "length {len}");
    }
    let (up_net, up_store) = build(&UNetConfig { resample_factor: 3.2, ..UNetConfig::desk() }, 6);
    for len in [1024, 5003, 16_000] {
        assert_eq!(run(&up_net, &up_store, &wave(len, 7), false).shape(), &[1, len]);
    }
    let (paper, paper_store) = build(&UNetConfig::default(), 8);
    for len in [1000, 4096] {
        assert_eq!(run(&paper, &paper_store, &wave(len, 9), false).shape(), &[1, len]);
    }
}

#[test]
fn output_can_be_negative() {
    let (net, store) = build(&UNetConfig::desk(), 10);
    let y = run(&net, &store, &wave(4096, 11), false);
    assert!(y.data().iter().any(|&v| v < 0.0));
    assert!(y.data().iter().any(|&v| v > 0.0));
}

#[test]
fn skips_carry_signal_past_a_zero_bottleneck() {
    let (net, store) = build(&UNetConfig::desk(), 12);
    let x = wave(4096, 13);
    let zero = run(&net, &store, &x, true);
    let ident = run(&net, &store, &x, false);
    assert!(zero.data().iter().any(|&v| v != 0.0));
    assert!(zero.max_abs_diff(&ident) > 0.0);
}

#[test]
fn every_skip_reaches_the_output() {
    let (net, store) = build(&UNetConfig::desk(), 14);
    let mut tape = Tape::new();
    let x = tape.constant(wave(2048, 15));
    let mut acts = net.encode(&mut tape, &store, x).unwrap();
    let mut probes = Vec::new();
    for skip in acts.skips.iter_mut() {
        let shape = tape.shape(*skip).to_vec();
        let probe = tape.leaf(Tensor::zeros(shape));
        *skip = tape.add(*skip, probe).unwrap();
        probes.push(probe);
    }
    let y = acts.tokens();
    let out = net.decode(&mut tape, &store, y, &acts).unwrap();
    let loss = tape.sum(out).unwrap();
    let grads = tape.backward(loss).unwrap();
    for (i, p) in probes.iter().enumerate() {
        let g = grads.leaf(*p).unwrap();
        assert!(g.data().iter().any(|&v| v != 0.0), "skip {i} does not influence the output");
    }
}

#[test]
fn first_conv_gradient_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let (net, store) = build(&tiny(), seed);
        let x = wave(64, seed + 10);
        let target = Tensor::new(vec![1, 64], white_noise(64, seed + 20)).unwrap();
        let w = store.id("unet.enc0.conv.weight").unwrap();
        let probes: Vec<_> = (0..store.value(w).len()).map(|j| (w, j)).collect();
        let report = check_params(
            &store,
            &probes,
            |tape, s| {
                let xv = tape.constant(x.clone());
                let y = net.forward(tape, s, xv, |_, t| Ok(t)).map_err(|e| TensorError::Contract(e.to_string()))?;
                let t = tape.constant(target.clone());
                tape.l1_loss(y, t)
            },
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "seed {seed}: {report:?}");
    }
}
