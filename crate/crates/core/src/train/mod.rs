//! Training loop, optimizer and evaluation.

pub mod eval;
mod optim;
mod trainer;

pub use optim::{curriculum, grad_norm, stage_boundaries, AdamParams, AdamW, Plateau, Stage};
pub use trainer::{
    load_matching, load_model, meta_path, read_meta, transfer_shared, CheckpointMeta, EpochRecord, StageData, StepRecord,
    TrainConfig, TrainLog, TrainPrecision, TrainState, Trainer,
};
