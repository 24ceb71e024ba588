//! Separation quality metrics: SI-SDR, filter-projected SDR and STOI.
//!
//! Log-ratio metrics are clamped to `[-DB_CAP, DB_CAP]` so reports never
//! contain infinities.

mod sdr;
mod stoi;

pub use sdr::{sdr_projected, si_sdr, ProjectedSdr, DEFAULT_FILTER_TAPS};
pub use stoi::{stoi, stoi_min_samples};

pub const DB_CAP: f64 = 60.0;

pub(crate) fn ratio_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        return -DB_CAP;
    }
    if den <= 0.0 {
        return DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

pub(crate) fn to_f64<T: Copy + Into<f64>>(x: &[T]) -> Vec<f64> {
    x.iter().map(|&v| v.into()).collect()
}

pub fn is_capped(db: f64) -> bool {
    db.abs() >= DB_CAP
}
