//! Two-step linear-regression alignment.
//!
//! Step 1 fits the aperture-1 forward model per axis and solves it for the
//! mirror-2 setting that keeps the beam centred on aperture 1. Step 2 samples
//! only along that constraint, so every reading reaches aperture 2, and fits
//! the reverse model whose intercepts are the alignment solution.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{collect_at, Dataset, SamplingBox};
use crate::error::{Error, Result};
use crate::linreg::{least_squares, LinearModel};
use crate::optics::{ControlAxis, Mirror, MirrorControls, Plane};
use crate::plant::Plant;
use crate::report::{AlignmentReport, Strategy};
use crate::rng::{stream_rng, Stream};

/// Mirror-2 coefficient, relative to mirror-1, below which aperture 1 is
/// treated as blind to mirror 2.
pub const DEGENERATE_RATIO: f64 = 0.01;

/// Registration step as a fraction of the sampling half-width.
pub const REGISTRATION_STEP: f64 = 0.25;

/// How one plane's mirror-2 control follows its mirror-1 control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AxisConstraint {
    /// `mirror2 = gain · mirror1 + offset` keeps aperture 1 centred.
    Coupled { gain: f64, offset: f64 },
    /// Aperture 1 does not see mirror 2; centring pins mirror 1 and leaves
    /// mirror 2 free.
    Mirror2Free { mirror1: f64 },
}

impl AxisConstraint {
    /// Solves `a·m1 + b·m2 + c = 0`.
    pub fn from_forward(a: f64, b: f64, c: f64) -> Result<Self> {
        if b.abs() > DEGENERATE_RATIO * a.abs() {
            return Ok(Self::Coupled {
                gain: -a / b,
                offset: -c / b,
            });
        }
        if a.abs() > 0.0 && a.is_finite() {
            return Ok(Self::Mirror2Free { mirror1: -c / a });
        }
        Err(Error::Degenerate("aperture 1 responds to neither mirror on this axis".into()))
    }

    /// Mirror pair on the constraint given a free `(mirror1, mirror2)` draw.
    pub fn apply(self, mirror1: f64, mirror2: f64) -> (f64, f64) {
        match self {
            Self::Coupled { gain, offset } => (mirror1, gain * mirror1 + offset),
            Self::Mirror2Free { mirror1 } => (mirror1, mirror2),
        }
    }
}

/// Mirror-1/mirror-2 relation that centres aperture 1, one entry per plane.
///
/// For coupled planes this is `m2 = D·m1 + e` with diagonal `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMap {
    pub horizontal: AxisConstraint,
    pub vertical: AxisConstraint,
}

impl ConstraintMap {
    pub fn plane(&self, plane: Plane) -> AxisConstraint {
        match plane {
            Plane::Horizontal => self.horizontal,
            Plane::Vertical => self.vertical,
        }
    }

    /// Projects a control setting onto the constraint.
    pub fn apply(&self, c: MirrorControls) -> MirrorControls {
        let mut out = c;
        for plane in Plane::BOTH {
            let m1 = ControlAxis::new(Mirror::M1, plane);
            let m2 = ControlAxis::new(Mirror::M2, plane);
            let (a, b) = self.plane(plane).apply(c.get(m1), c.get(m2));
            out.set(m1, a);
            out.set(m2, b);
        }
        out
    }

    /// `(D, e)` when both planes are coupled.
    pub fn matrix_form(&self) -> Option<([[f64; 2]; 2], [f64; 2])> {
        match (self.horizontal, self.vertical) {
            (
                AxisConstraint::Coupled { gain: gx, offset: ox },
                AxisConstraint::Coupled { gain: gy, offset: oy },
            ) => Some(([[gx, 0.0], [0.0, gy]], [ox, oy])),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub n_random: usize,
    pub n_registration: usize,
    pub n_step2: usize,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            n_random: 30,
            n_registration: 4,
            n_step2: 34,
            seed: 0,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_registration > 4 {
            return Err(Error::Config("at most one registration sample per control axis".into()));
        }
        // three coefficients per plane in step 1, five per control in step 2
        if self.n_random + self.n_registration < 3 || self.n_step2 < 5 {
            return Err(Error::Config("too few regression samples".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Fit {
    /// `δx1 ~ (cm1_yaw, cm2_yaw)`.
    pub horizontal: LinearModel,
    /// `δy1 ~ (cm1_pitch, cm2_pitch)`.
    pub vertical: LinearModel,
    pub constraint: ConstraintMap,
    pub samples: Dataset,
}

/// Base point plus one single-axis step per registration sample.
pub fn registration_settings(sampling: &SamplingBox, count: usize) -> Vec<MirrorControls> {
    let step = REGISTRATION_STEP * sampling.half_width;
    ControlAxis::ALL
        .iter()
        .take(count)
        .map(|&axis| MirrorControls::ZERO.with(axis, step))
        .collect()
}

fn plane_rows(d: &Dataset, plane: Plane) -> (Vec<[f64; 2]>, Vec<[f64; 1]>) {
    let m1 = ControlAxis::new(Mirror::M1, plane);
    let m2 = ControlAxis::new(Mirror::M2, plane);
    d.records
        .iter()
        .map(|r| {
            (
                [r.controls.get(m1), r.controls.get(m2)],
                [r.measurement.a1[plane.index()]],
            )
        })
        .unzip()
}

/// Random plus registration samples, per-plane aperture-1 fits, and the
/// centring constraint derived from them.
pub fn step1_fit<P: Plant + ?Sized>(plant: &mut P, cfg: &RegressionConfig) -> Result<Step1Fit> {
    cfg.validate()?;
    let sampling = SamplingBox::for_geometry(plant.geometry())?;
    let mut rng = stream_rng(cfg.seed, Stream::Collection);
    let mut settings: Vec<MirrorControls> = (0..cfg.n_random).map(|_| sampling.sample(&mut rng)).collect();
    settings.extend(registration_settings(&sampling, cfg.n_registration));
    let samples = collect_at(plant, &settings, cfg.seed)?;

    let fit_plane = |plane| -> Result<(LinearModel, AxisConstraint)> {
        let (x, y) = plane_rows(&samples, plane);
        let model = least_squares(&x, &y)?;
        let [a, b, c] = [0, 1, 2].map(|k| model.coefficients[0][k]);
        Ok((model, AxisConstraint::from_forward(a, b, c)?))
    };
    let (horizontal, ch) = fit_plane(Plane::Horizontal)?;
    let (vertical, cv) = fit_plane(Plane::Vertical)?;
    Ok(Step1Fit {
        horizontal,
        vertical,
        constraint: ConstraintMap {
            horizontal: ch,
            vertical: cv,
        },
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step2Fit {
    /// Controls as an affine function of `(δx1, δy1, δx2, δy2)`.
    pub reverse: LinearModel,
    pub samples: Dataset,
}

/// Samples along the constraint and fits controls on measurements.
///
/// `bases` supplies the free coordinates; they are cycled if shorter than
/// `cfg.n_step2`.
pub fn step2_fit<P: Plant + ?Sized>(
    plant: &mut P,
    constraint: &ConstraintMap,
    bases: &[MirrorControls],
    cfg: &RegressionConfig,
) -> Result<Step2Fit> {
    cfg.validate()?;
    if bases.is_empty() {
        return Err(Error::Config("step 2 needs at least one base setting".into()));
    }
    let settings: Vec<MirrorControls> = bases
        .iter()
        .cycle()
        .take(cfg.n_step2)
        .map(|c| constraint.apply(*c))
        .collect();
    let samples = collect_at(plant, &settings, cfg.seed)?;
    if let Some(index) = samples.records.iter().position(|r| !r.complete) {
        return Err(Error::Step2Blocked { index });
    }
    let (x, y) = samples.regression_pairs()?;
    let reverse = least_squares(&x, &y)?;
    Ok(Step2Fit { reverse, samples })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionAlignment {
    pub report: AlignmentReport,
    pub step1: Step1Fit,
    pub step2: Step2Fit,
}

/// Step 1, Step 2 on the Step-1 settings, then the reverse model's
/// intercepts applied and confirmed with one reading.
pub fn align<P: Plant + ?Sized>(plant: &mut P, cfg: &RegressionConfig) -> Result<RegressionAlignment> {
    let start = plant.readings_used();
    let step1 = step1_fit(plant, cfg)?;
    let bases: Vec<MirrorControls> = step1.samples.records.iter().map(|r| r.controls).collect();
    let step2 = step2_fit(plant, &step1.constraint, &bases, cfg)?;

    let limit = plant.geometry().control_limit;
    let intercepts = step2.reverse.intercepts();
    let solution = MirrorControls::from_array([intercepts[0], intercepts[1], intercepts[2], intercepts[3]]);
    plant.set_controls(solution.clamped(limit))?;
    let residuals = plant.measure()?;
    let report = AlignmentReport {
        strategy: Strategy::Regression,
        final_controls: plant.controls(),
        residuals,
        readings: plant.readings_used() - start,
        outer_iterations: 1,
        converged: residuals.is_complete(),
        transmitted: residuals.is_complete(),
    };
    Ok(RegressionAlignment { report, step1, step2 })
}

/// Joint aperture-1 fit on all four controls, `[δx1, δy1]` rows.
pub fn joint_forward_fit(samples: &Dataset) -> Result<LinearModel> {
    let x: Vec<[f64; 4]> = samples.records.iter().map(|r| r.controls.to_array()).collect();
    let y: Vec<[f64; 2]> = samples.records.iter().map(|r| r.measurement.a1).collect();
    least_squares(&x, &y)
}

/// Reverse-model R² per control; `None` where a control did not vary.
pub fn reverse_r_squared(fit: &Step2Fit) -> Vec<Option<f64>> {
    fit.reverse.diagnostics.r_squared.clone()
}
