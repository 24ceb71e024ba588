//! Batch experiment runner: training, separation, evaluation, robustness
//! sweeps and synthetic corpus generation.

pub mod app;
pub mod commands;
pub mod config;
pub mod data;
pub mod run;

use vf_core::CoreError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<CoreError>()) {
        Some(CoreError::Config(_)) => EXIT_USAGE,
        Some(CoreError::NumericalAbort { .. }) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}
