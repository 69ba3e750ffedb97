//! Central finite-difference verification of autograd gradients.

use alloc::vec::Vec;

use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, FD_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Compares `analytic` with central differences of `f` at every coordinate
/// of `x`.
pub fn finite_difference_check<F>(f: F, x: &[f64], analytic: &[f64], tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    finite_difference_check_at(f, x, analytic, &all, tolerance)
}

/// Like [`finite_difference_check`] over a subset of coordinates.
pub fn finite_difference_check_at<F>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut worst = (0.0f64, 0usize);
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let up = f(&probe)?;
        probe[i] = orig - FD_STEP;
        let down = f(&probe)?;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: indices.len(),
        tolerance,
        passed: worst.0 < tolerance,
    })
}
