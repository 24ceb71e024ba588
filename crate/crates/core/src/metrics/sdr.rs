use super::{ratio_db, to_f64};
use crate::{CoreError, Result};

pub const DEFAULT_FILTER_TAPS: usize = 512;
const RIDGE: f64 = 1e-9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(op: &str, est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(CoreError::InvalidInput(format!(
            "{op}: estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    if dot(reference, reference) == 0.0 {
        return Err(CoreError::Degenerate(format!("{op}: reference is silent")));
    }
    Ok(())
}

/// Scale-invariant SDR in dB, without mean removal.
pub fn si_sdr<T: Copy + Into<f64>>(estimate: &[T], reference: &[T]) -> Result<f64> {
    let (e, r) = (to_f64(estimate), to_f64(reference));
    check_pair("si_sdr", &e, &r)?;
    let alpha = dot(&e, &r) / dot(&r, &r);
    let (mut target, mut noise) = (0.0, 0.0);
    for (&ev, &rv) in e.iter().zip(&r) {
        let s = alpha * rv;
        target += s * s;
        noise += (ev - s) * (ev - s);
    }
    Ok(ratio_db(target, noise))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSdr {
    pub db: f64,
    /// The normal equations were singular and a ridge term was added.
    pub regularized: bool,
}

/// SDR after projecting the estimate onto `taps` delayed copies of the
/// reference, i.e. allowing a time-invariant FIR distortion of the target.
pub fn sdr_projected<T: Copy + Into<f64>>(estimate: &[T], reference: &[T], taps: usize) -> Result<ProjectedSdr> {
    let (e, r) = (to_f64(estimate), to_f64(reference));
    check_pair("sdr_projected", &e, &r)?;
    let n = r.len();
    if taps == 0 || n <= taps {
        return Err(CoreError::InvalidInput(format!(
            "sdr_projected: {n} samples must exceed the {taps} filter taps"
        )));
    }
    let acf: Vec<f64> = (0..taps).map(|k| dot(&r[..n - k], &r[k..])).collect();
    let rhs: Vec<f64> = (0..taps).map(|j| dot(&e[j..], &r[..n - j])).collect();
    let toeplitz = |i: usize, j: usize| acf[i.abs_diff(j)];
    let (coef, regularized) = match cholesky_solve(taps, toeplitz, &rhs, 0.0) {
        Some(c) => (c, false),
        None => {
            let c = cholesky_solve(taps, toeplitz, &rhs, RIDGE * acf[0])
                .ok_or_else(|| CoreError::Degenerate("sdr_projected: normal equations unsolvable".into()))?;
            (c, true)
        }
    };
    let (mut target_energy, mut noise_energy) = (0.0, 0.0);
    for t in 0..n + taps - 1 {
        let lo = t.saturating_sub(n - 1);
        let hi = t.min(taps - 1);
        let s: f64 = (lo..=hi).map(|j| coef[j] * r[t - j]).sum();
        let ev = if t < n { e[t] } else { 0.0 };
        target_energy += s * s;
        noise_energy += (ev - s) * (ev - s);
    }
    Ok(ProjectedSdr { db: ratio_db(target_energy, noise_energy), regularized })
}

/// Solves `(A + ridge I) x = b` for symmetric positive definite `A`;
/// `None` when a pivot is not safely positive.
fn cholesky_solve(n: usize, a: impl Fn(usize, usize) -> f64, b: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let scale = a(0, 0).abs().max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a(i, j) + if i == j { ridge } else { 0.0 };
            s -= dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                if !(s > scale * 1e-13) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - dot(&l[i * n..i * n + i], &y[..i])) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}
