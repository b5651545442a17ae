//! Goodness of fit.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient of determination, `1 - SS_res / SS_tot`, with `SS_tot` taken
/// about the mean of `actual`. `None` when `actual` has zero variance.
pub fn r_squared_column(actual: &[f64], predicted: &[f64]) -> Option<f64> {
    assert_eq!(actual.len(), predicted.len());
    if actual.is_empty() {
        return None;
    }
    let (lo, hi) = actual.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(*a), hi.max(*a)));
    // constant up to rounding
    if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
        return None;
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Some(1.0 - ss_res / ss_tot)
}

/// Per-output R² and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RSquared {
    pub per_output: Vec<f64>,
    pub mean: f64,
}

/// Row-major `actual`/`predicted`; errors on the first zero-variance output.
pub fn r_squared<const N: usize>(actual: &[[f64; N]], predicted: &[[f64; N]]) -> Result<RSquared> {
    if actual.is_empty() || actual.len() != predicted.len() {
        return Err(Error::InvalidDataset(
            "R² needs equally sized, non-empty actual and predicted sets".into(),
        ));
    }
    let mut per_output = Vec::with_capacity(N);
    for k in 0..N {
        let a: Vec<f64> = actual.iter().map(|r| r[k]).collect();
        let p: Vec<f64> = predicted.iter().map(|r| r[k]).collect();
        per_output.push(r_squared_column(&a, &p).ok_or(Error::UndefinedRSquared(k))?);
    }
    let mean = per_output.iter().sum::<f64>() / N as f64;
    Ok(RSquared { per_output, mean })
}
