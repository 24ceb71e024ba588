//! Raw-waveform U-Net: strided-convolution encoder, transposed-convolution
//! decoder, additive skip connections, and optional internal resampling.
//!
//! Encoder block `i`: `conv(K, s, p) -> ReLU -> 1x1 conv to 2C -> GLU`.
//! Decoder block `i`: `+ skip_i -> 1x1 conv to 2C -> GLU -> convT(K, s, p)
//! -> ReLU`, without the final ReLU on the output block. Inputs are
//! right-padded with zeros to a multiple of `stride^depth` and trimmed after
//! decoding.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use vf_tensor::{LinearMap, ParamStore, Scalar, Tape, Var};

use crate::audio::Resampler;
use crate::nn::{Conv1d, ConvTranspose1d};
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub channel_growth: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub resample_factor: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { depth: 5, base_channels: 48, channel_growth: 2, kernel: 8, stride: 4, pad: 2, resample_factor: 3.2 }
    }
}

impl UNetConfig {
    pub fn desk() -> Self {
        UNetConfig { depth: 4, base_channels: 8, resample_factor: 2.0, ..Self::default() }
    }

    pub fn channels(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.base_channels * self.channel_growth.pow(i as u32)).collect()
    }

    /// Width `c` of the audio tokens.
    pub fn bottleneck_channels(&self) -> usize {
        self.channels().last().copied().unwrap_or(0)
    }

    pub fn total_stride(&self) -> usize {
        self.stride.pow(self.depth as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.depth == 0 || self.base_channels == 0 {
            return bad("unet depth and base_channels must be positive".into());
        }
        if self.channel_growth != 2 {
            return bad(format!("unet channel_growth must be 2, got {}", self.channel_growth));
        }
        if self.stride == 0 || self.kernel < self.stride {
            return bad(format!("unet kernel {} must be at least stride {}", self.kernel, self.stride));
        }
        if self.kernel != self.stride + 2 * self.pad {
            return bad(format!(
                "unet kernel {} must equal stride {} + 2 * pad {} for exact length inversion",
                self.kernel, self.stride, self.pad
            ));
        }
        if !(self.resample_factor >= 1.0 && self.resample_factor.is_finite()) {
            return bad(format!("unet resample_factor must be >= 1, got {}", self.resample_factor));
        }
        Ok(())
    }

    /// Length after internal resampling and padding for an input of `len`.
    pub fn padded_len(&self, len: usize) -> usize {
        let up = ((len as f64) * self.resample_factor).round() as usize;
        let m = self.total_stride();
        up.max(1).div_ceil(m) * m
    }

    pub fn token_len(&self, len: usize) -> usize {
        self.padded_len(len) / self.total_stride()
    }
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    conv: Conv1d,
    gate: Conv1d,
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    gate: Conv1d,
    up: ConvTranspose1d,
    relu: bool,
}

/// Per-block encoder outputs kept for the skip connections.
#[derive(Debug, Clone)]
pub struct EncoderActivations {
    /// Block outputs, shallowest first, each `[C_i × T_i]`.
    pub skips: Vec<Var>,
    pub original_len: usize,
    pub resampled_len: usize,
    pub padded_len: usize,
}

impl EncoderActivations {
    /// Audio tokens `[c × t_a]` (the deepest block output).
    pub fn tokens(&self) -> Var {
        *self.skips.last().expect("encoder has at least one block")
    }
}

#[derive(Clone)]
pub struct UNet {
    pub cfg: UNetConfig,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
    upsample: Option<(Arc<Resampler>, Arc<Resampler>)>,
}

impl std::fmt::Debug for UNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UNet").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl UNet {
    pub fn new<F: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<F>, prefix: &str, cfg: &UNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let chans = cfg.channels();
        let mut encoder = Vec::with_capacity(cfg.depth);
        let mut cin = 1;
        for (i, &c) in chans.iter().enumerate() {
            let conv = Conv1d::new(store, &format!("{prefix}.enc{i}.conv"), cin, c, cfg.kernel, cfg.stride, cfg.pad, rng)?;
            let gate = Conv1d::pointwise(store, &format!("{prefix}.enc{i}.gate"), c, 2 * c, rng)?;
            encoder.push(EncoderBlock { conv, gate });
            cin = c;
        }
        let mut decoder = Vec::with_capacity(cfg.depth);
        for i in (0..cfg.depth).rev() {
            let c = chans[i];
            let cout = if i == 0 { 1 } else { chans[i - 1] };
            let gate = Conv1d::pointwise(store, &format!("{prefix}.dec{i}.gate"), c, 2 * c, rng)?;
            let up = ConvTranspose1d::new(store, &format!("{prefix}.dec{i}.convt"), c, cout, cfg.kernel, cfg.stride, cfg.pad, rng)?;
            decoder.push(DecoderBlock { gate, up, relu: i != 0 });
        }
        let upsample = if cfg.resample_factor != 1.0 {
            Some((Arc::new(Resampler::new(cfg.resample_factor)?), Arc::new(Resampler::new(1.0 / cfg.resample_factor)?)))
        } else {
            None
        };
        Ok(UNet { cfg: cfg.clone(), encoder, decoder, upsample })
    }

    /// Encodes a `[1 × L]` waveform.
    pub fn encode<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<EncoderActivations> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != 1 {
            return Err(CoreError::InvalidInput(format!("unet expects a [1 × L] waveform, got {shape:?}")));
        }
        let original_len = shape[1];
        let mut h = x;
        if let Some((up, _)) = &self.upsample {
            let map: Arc<dyn LinearMap<F>> = up.clone();
            h = tape.linear_map(h, map)?;
        }
        let resampled_len = tape.shape(h)[1];
        let padded_len = self.cfg.padded_len(original_len);
        if padded_len > resampled_len {
            h = tape.pad_cols(h, 0, padded_len - resampled_len)?;
        }
        let mut skips = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            h = block.conv.forward(tape, store, h)?;
            h = tape.relu(h)?;
            h = block.gate.forward(tape, store, h)?;
            h = tape.glu(h)?;
            skips.push(h);
        }
        Ok(EncoderActivations { skips, original_len, resampled_len, padded_len })
    }

    /// Decodes refined tokens `[c × t_a]` back to a `[1 × L]` waveform.
    pub fn decode<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        y: Var,
        acts: &EncoderActivations,
    ) -> Result<Var> {
        if acts.skips.len() != self.decoder.len() {
            return Err(CoreError::Contract(format!(
                "decoder has {} blocks but {} activations were supplied",
                self.decoder.len(),
                acts.skips.len()
            )));
        }
        if tape.shape(y) != tape.shape(acts.tokens()) {
            return Err(CoreError::Contract(format!(
                "bottleneck output {:?} does not match encoder tokens {:?}",
                tape.shape(y),
                tape.shape(acts.tokens())
            )));
        }
        let mut h = y;
        for (block, &skip) in self.decoder.iter().zip(acts.skips.iter().rev()) {
            if tape.shape(h) != tape.shape(skip) {
                return Err(CoreError::Contract(format!(
                    "decoder input {:?} does not match skip {:?}",
                    tape.shape(h),
                    tape.shape(skip)
                )));
            }
            h = tape.add(h, skip)?;
            h = block.gate.forward(tape, store, h)?;
            h = tape.glu(h)?;
            h = block.up.forward(tape, store, h)?;
            if block.relu {
                h = tape.relu(h)?;
            }
        }
        h = tape.slice_cols(h, 0, acts.resampled_len)?;
        if let Some((_, down)) = &self.upsample {
            let map: Arc<dyn LinearMap<F>> = down.clone();
            h = tape.linear_map(h, map)?;
        }
        let len = tape.shape(h)[1];
        match len.cmp(&acts.original_len) {
            std::cmp::Ordering::Greater => h = tape.slice_cols(h, 0, acts.original_len)?,
            std::cmp::Ordering::Less => h = tape.pad_cols(h, 0, acts.original_len - len)?,
            std::cmp::Ordering::Equal => {}
        }
        Ok(h)
    }

    /// `decode(bottleneck(tokens), encode(x))`, with tokens in `[t_a × c]`
    /// layout at the bottleneck boundary.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
        bottleneck: impl FnOnce(&mut Tape<F>, Var) -> Result<Var>,
    ) -> Result<Var> {
        let acts = self.encode(tape, store, x)?;
        let tokens = tape.transpose(acts.tokens())?;
        let refined = bottleneck(tape, tokens)?;
        let refined = tape.transpose(refined)?;
        self.decode(tape, store, refined, &acts)
    }
}
