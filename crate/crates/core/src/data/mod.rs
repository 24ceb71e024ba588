//! Corpus manifests, synthetic data, mixture construction and the
//! perturbation injectors used by the robustness sweeps.

pub mod corpus;
mod dataset;
mod manifest;
mod mixture;
mod perturb;
pub mod synth;

pub use corpus::{generate_corpus, stream_rng, Corpus, CorpusConfig, Split};
pub use dataset::{build_mixtures, crop_source, mixture_pair, Task};
pub use manifest::{load_manifest, parse_manifest, write_manifest, EntryKind, ManifestEntry};
pub use mixture::{
    fit_interferer, length_bucket_batches, make_mixture, normalize_track, random_crop, InterfererKind, MixtureSample,
    Perturbation, Source, SwapKind,
};
pub use perturb::{inject_av_offset, mask_video_frames, remove_words, swap_modality, MAX_OFFSET_MS};
