//! Conditioning streams: per-frame visual features, phoneme tokens, and the
//! positional and modality encodings added to every stream before fusion.

mod encodings;
mod features;
pub mod phonemes;
mod visual;

pub use encodings::{
    learned_pe, sinusoidal_pe, sinusoidal_pe_at, EncodedStreams, Modality, ModalityEncodings, PhonemeEmbedding, TEXT_POSITIONS,
};
pub use features::{
    check_width, decode_features, encode_features, load_precomputed_features, save_features, FeatureSequence,
};
pub use phonemes::{phonemize, Lexicon, PhonemeSequence};
pub use visual::{VideoClip, VisualBackbone, VisualConfig};
