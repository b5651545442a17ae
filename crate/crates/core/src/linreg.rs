//! Affine multi-output least squares with minimum-norm solutions.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::r_squared_column;

/// Singular values below `RCOND · σ_max` are treated as zero.
pub const RCOND: f64 = 1e-10;

/// `outcome_k = Σ_j coefficients[k][j] · predictor_j + coefficients[k][p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// outcomes × (predictors + 1); the intercept is the last column.
    pub coefficients: Vec<Vec<f64>>,
    pub diagnostics: FitDiagnostics,
    /// Data the model was fitted to, rows of predictors and outcomes.
    pub fit_predictors: Vec<Vec<f64>>,
    pub fit_outcomes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `None` for an outcome with zero variance.
    pub r_squared: Vec<Option<f64>>,
    /// `SS_res / (rows − rank)`, zero when the fit is saturated.
    pub residual_variance: Vec<f64>,
    /// Rank of the design matrix including the intercept column.
    pub rank: usize,
}

impl LinearModel {
    pub fn predictors(&self) -> usize {
        self.coefficients.first().map_or(0, |c| c.len() - 1)
    }

    pub fn outcomes(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.predictors());
        self.coefficients
            .iter()
            .map(|c| {
                let (slopes, intercept) = c.split_at(x.len());
                slopes.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + intercept[0]
            })
            .collect()
    }

    pub fn intercepts(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c[c.len() - 1]).collect()
    }

    /// Mean over outcomes whose R² is defined.
    pub fn mean_r_squared(&self) -> Option<f64> {
        let defined: Vec<f64> = self.diagnostics.r_squared.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }

    /// Diagnostics recomputed from the stored fit data.
    pub fn recompute_diagnostics(&self) -> FitDiagnostics {
        diagnostics(
            &self.coefficients,
            &self.fit_predictors,
            &self.fit_outcomes,
            self.diagnostics.rank,
        )
    }
}

fn diagnostics(
    coefficients: &[Vec<f64>],
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    rank: usize,
) -> FitDiagnostics {
    let rows = x.len();
    let mut r_squared = Vec::with_capacity(coefficients.len());
    let mut residual_variance = Vec::with_capacity(coefficients.len());
    for (k, c) in coefficients.iter().enumerate() {
        let (slopes, intercept) = c.split_at(c.len() - 1);
        let actual: Vec<f64> = y.iter().map(|r| r[k]).collect();
        let fitted: Vec<f64> = x
            .iter()
            .map(|r| slopes.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() + intercept[0])
            .collect();
        let ss_res: f64 = actual.iter().zip(&fitted).map(|(a, f)| (a - f) * (a - f)).sum();
        r_squared.push(r_squared_column(&actual, &fitted));
        residual_variance.push(if rows > rank { ss_res / (rows - rank) as f64 } else { 0.0 });
    }
    FitDiagnostics {
        r_squared,
        residual_variance,
        rank,
    }
}

/// Minimum-norm least-squares fit of every outcome on all predictors plus an
/// intercept. The slopes are the minimum-norm solution in centred, unit-norm
/// predictor units, through an SVD.
pub fn least_squares<X: AsRef<[f64]>, Y: AsRef<[f64]>>(x: &[X], y: &[Y]) -> Result<LinearModel> {
    if x.len() != y.len() {
        return Err(Error::InvalidDataset("predictor and outcome row counts differ".into()));
    }
    let rows = x.len();
    let p = x.first().map_or(0, |r| r.as_ref().len());
    let q = y.first().map_or(0, |r| r.as_ref().len());
    if rows < p + 1 {
        return Err(Error::Underdetermined {
            rows,
            parameters: p + 1,
        });
    }
    if x.iter().any(|r| r.as_ref().len() != p) || y.iter().any(|r| r.as_ref().len() != q) {
        return Err(Error::InvalidDataset("ragged rows".into()));
    }
    let fit_predictors: Vec<Vec<f64>> = x.iter().map(|r| r.as_ref().to_vec()).collect();
    let fit_outcomes: Vec<Vec<f64>> = y.iter().map(|r| r.as_ref().to_vec()).collect();
    if fit_predictors.iter().chain(&fit_outcomes).flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDataset("non-finite value in fit data".into()));
    }

    // Slopes come from centred, unit-norm predictor columns; the intercept
    // from the means. nalgebra's SVD loses accuracy on columns many orders of
    // magnitude smaller than the rest, and a constant column would otherwise
    // alias the intercept.
    let n = rows as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| fit_predictors.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let y_mean: Vec<f64> = (0..q).map(|k| fit_outcomes.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let mut centred = DMatrix::from_fn(rows, p, |i, j| fit_predictors[i][j] - x_mean[j]);
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let magnitude = fit_predictors.iter().fold(0.0f64, |m, r| m.max(r[j].abs()));
            let norm = centred.column(j).norm();
            // constant up to rounding
            if norm <= 4.0 * f64::EPSILON * magnitude * libm::sqrt(n) {
                centred.column_mut(j).fill(0.0);
                1.0
            } else {
                norm
            }
        })
        .collect();
    for (j, s) in scale.iter().enumerate() {
        centred.column_mut(j).unscale_mut(*s);
    }
    let targets = DMatrix::from_fn(rows, q, |i, k| fit_outcomes[i][k] - y_mean[k]);

    let (mut slopes, slope_rank) = if p == 0 {
        (DMatrix::zeros(0, q), 0)
    } else {
        let svd = centred.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => unreachable!("SVD requested with both factors"),
        };
        let sigma_max = svd.singular_values.max();
        let cutoff = RCOND * sigma_max;
        let rank = svd.singular_values.iter().filter(|s| **s > cutoff && sigma_max > 0.0).count();
        let inv_sigma = svd
            .singular_values
            .map(|s| if s > cutoff && sigma_max > 0.0 { 1.0 / s } else { 0.0 });
        // β = V Σ⁺ Uᵀ Y
        let ut_y = u.transpose() * targets;
        let weighted = DMatrix::from_fn(ut_y.nrows(), q, |i, k| inv_sigma[i] * ut_y[(i, k)]);
        (v_t.transpose() * weighted, rank)
    };
    for (j, s) in scale.iter().enumerate() {
        slopes.row_mut(j).unscale_mut(*s);
    }
    let rank = slope_rank + 1;
    let beta = DMatrix::from_fn(p + 1, q, |j, k| {
        if j < p {
            slopes[(j, k)]
        } else {
            y_mean[k] - (0..p).map(|i| slopes[(i, k)] * x_mean[i]).sum::<f64>()
        }
    });

    let coefficients: Vec<Vec<f64>> = (0..q)
        .map(|k| (0..=p).map(|j| beta[(j, k)]).collect())
        .collect();
    let diagnostics = diagnostics(&coefficients, &fit_predictors, &fit_outcomes, rank);
    Ok(LinearModel {
        coefficients,
        diagnostics,
        fit_predictors,
        fit_outcomes,
    })
}
