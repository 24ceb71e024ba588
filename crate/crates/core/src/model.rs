//! The conditioned separation network: U-Net encoder, fusion bottleneck
//! over audio, video and phoneme tokens, U-Net decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vf_tensor::{ParamStore, Scalar, Tape, Tensor, Var};

use crate::conditioning::{check_width, FeatureSequence, ModalityEncodings, PhonemeEmbedding, PhonemeSequence, TEXT_POSITIONS};
use crate::fusion::{concat_streams, take_audio_output, AttentionMap, FusedSequence, RecurrentBottleneck, TransformerConfig, TransformerEncoder};
use crate::unet::{UNet, UNetConfig};
use crate::{CoreError, Result};

/// Conditioning streams a model consumes besides the mixture audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modalities {
    A,
    Av,
    At,
    Avt,
}

impl Modalities {
    pub fn video(self) -> bool {
        matches!(self, Modalities::Av | Modalities::Avt)
    }

    pub fn text(self) -> bool {
        matches!(self, Modalities::At | Modalities::Avt)
    }

    pub fn label(self) -> &'static str {
        match self {
            Modalities::A => "audio only",
            Modalities::Av => "audio + video features",
            Modalities::At => "audio + text",
            Modalities::Avt => "audio + video features + text",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BottleneckKind {
    Transformer,
    Recurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub modalities: Modalities,
    pub bottleneck: BottleneckKind,
    pub unet: UNetConfig,
    pub transformer: TransformerConfig,
    pub text_positions: usize,
    pub video_fps: f64,
    pub sample_rate: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            modalities: Modalities::Avt,
            bottleneck: BottleneckKind::Transformer,
            unet: UNetConfig::default(),
            transformer: TransformerConfig::default(),
            text_positions: TEXT_POSITIONS,
            video_fps: 25.0,
            sample_rate: 16_000,
        }
    }
}

impl ModelConfig {
    /// Depth 4, base width 8, `c = 64`, two layers of four heads.
    pub fn desk() -> Self {
        ModelConfig { unet: UNetConfig::desk(), transformer: TransformerConfig::desk(), ..Self::default() }
    }

    /// Audio tokens per second of input.
    pub fn token_rate(&self) -> f64 {
        self.sample_rate as f64 * self.unet.resample_factor / self.unet.total_stride() as f64
    }

    /// Width `c` shared by every token stream.
    pub fn width(&self) -> usize {
        self.unet.bottleneck_channels()
    }

    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        self.transformer.validate()?;
        let c = self.width();
        if self.transformer.d_model != c {
            return Err(CoreError::Config(format!(
                "transformer d_model {} must equal the U-Net bottleneck width c = {c}",
                self.transformer.d_model
            )));
        }
        if self.bottleneck == BottleneckKind::Recurrent && self.modalities.text() {
            return Err(CoreError::Config("the recurrent bottleneck supports audio and video only".into()));
        }
        if !(self.video_fps > 0.0) {
            return Err(CoreError::Config(format!("video_fps must be positive, got {}", self.video_fps)));
        }
        if self.sample_rate == 0 {
            return Err(CoreError::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One example's inputs; `video` is `[t_v × c]`.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub mixture: &'a [f32],
    pub video: Option<&'a FeatureSequence>,
    pub phonemes: Option<&'a PhonemeSequence>,
}

#[derive(Debug, Default)]
pub struct ForwardOptions<'a> {
    /// Enables dropout when present.
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub capture_attention: bool,
}

#[derive(Debug)]
pub struct ModelOutput {
    /// Estimated clean waveform `[1 × L]`.
    pub estimate: Var,
    pub fused: Option<FusedSequence>,
    pub attention: AttentionMap,
}

#[derive(Debug, Clone)]
enum Bottleneck {
    Transformer {
        encodings: ModalityEncodings,
        phonemes: PhonemeEmbedding,
        encoder: TransformerEncoder,
    },
    Recurrent(RecurrentBottleneck),
}

#[derive(Debug, Clone)]
pub struct SeparationModel {
    pub cfg: ModelConfig,
    pub unet: UNet,
    bottleneck: Bottleneck,
}

impl SeparationModel {
    /// Builds the network and registers freshly initialized parameters.
    pub fn new<F: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<F>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unet = UNet::new(store, "unet", &cfg.unet, &mut rng)?;
        let c = cfg.width();
        let bottleneck = match cfg.bottleneck {
            BottleneckKind::Transformer => Bottleneck::Transformer {
                encodings: ModalityEncodings {
                    video_step: cfg.token_rate() / cfg.video_fps,
                    ..ModalityEncodings::new(store, "encodings", c, cfg.text_positions, &mut rng)?
                },
                phonemes: PhonemeEmbedding::new(store, "phonemes", c, &mut rng)?,
                encoder: TransformerEncoder::new(store, "fusion", &cfg.transformer, &mut rng)?,
            },
            BottleneckKind::Recurrent => {
                Bottleneck::Recurrent(RecurrentBottleneck::new(store, "recurrent", c, cfg.modalities.video(), &mut rng)?)
            }
        };
        Ok(SeparationModel { cfg: cfg.clone(), unet, bottleneck })
    }

    pub fn init<F: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<F>)> {
        let mut store = ParamStore::new();
        let model = Self::new(cfg, &mut store, seed)?;
        Ok((model, store))
    }

    /// Verifies that the supplied conditioning matches the configuration.
    pub fn check_input(&self, input: &ModelInput<'_>) -> Result<()> {
        let m = self.cfg.modalities;
        let mut missing = Vec::new();
        if m.video() && input.video.is_none() {
            missing.push("video features");
        }
        if m.text() && input.phonemes.is_none() {
            missing.push("text");
        }
        if !missing.is_empty() {
            return Err(CoreError::InvalidInput(format!(
                "model expects {} but {} missing",
                m.label(),
                missing.join(" and ")
            )));
        }
        if input.mixture.is_empty() {
            return Err(CoreError::InvalidInput("mixture waveform is empty".into()));
        }
        if let (true, Some(v)) = (m.video(), input.video) {
            check_width(v, self.cfg.width())?;
        }
        Ok(())
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        input: &ModelInput<'_>,
        opts: ForwardOptions<'_>,
    ) -> Result<ModelOutput> {
        self.check_input(input)?;
        let m = self.cfg.modalities;
        let x = Tensor::new(vec![1, input.mixture.len()], input.mixture.iter().map(|&v| F::of(v as f64)).collect())?;
        let x = tape.constant(x);
        let acts = self.unet.encode(tape, store, x)?;
        let tokens = tape.transpose(acts.tokens())?;
        let video = match (m.video(), input.video) {
            (true, Some(v)) => Some(tape.constant(v.cast::<F>())),
            _ => None,
        };
        let (refined, fused, attention) = match &self.bottleneck {
            Bottleneck::Transformer { encodings, phonemes, encoder } => {
                let text = match (m.text(), input.phonemes) {
                    (true, Some(seq)) => phonemes.embed(tape, store, seq)?,
                    _ => None,
                };
                let streams = encodings.apply(tape, store, tokens, video, text)?;
                let fused = concat_streams(tape, &streams)?;
                let (y, map) = encoder.forward(tape, store, fused.z, opts.rng, opts.capture_attention)?;
                (take_audio_output(tape, &fused, y)?, Some(fused), map)
            }
            Bottleneck::Recurrent(r) => (r.forward(tape, store, tokens, video)?, None, AttentionMap::default()),
        };
        let refined = tape.transpose(refined)?;
        let estimate = self.unet.decode(tape, store, refined, &acts)?;
        Ok(ModelOutput { estimate, fused, attention })
    }

    /// Inference without dropout; returns the estimated waveform.
    pub fn separate<F: Scalar>(&self, store: &ParamStore<F>, input: &ModelInput<'_>) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, input, ForwardOptions::default())?;
        Ok(tape.value(out.estimate).data().iter().map(|v| v.as_f64() as f32).collect())
    }
}
