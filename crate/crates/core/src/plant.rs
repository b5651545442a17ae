//! The measurement interface every aligner drives.
//!
//! Aligners only see [`Plant`]: they set mirror controls and take camera
//! readings. Each [`Plant::measure`] call is one synchronised frame pair from
//! both cameras and counts as one reading against the sampling budget.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::SamplingBox;
use crate::error::{Error, Result};
use crate::optics::{
    blocked_at_a1, sensitivity_matrix, MirrorControls, MisalignmentErrors, Plane,
    SensitivityMatrix, SystemGeometry,
};
use crate::rng::{stream_rng, Stream};

/// Default per-component camera noise, mm.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.01;

/// Misaligned builds must be recoverable with controls inside this fraction
/// of the sampling box.
pub const RECOVERABLE_FRACTION: f64 = 0.8;

const MAX_MISALIGN_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aperture {
    A1,
    A2,
}

/// One camera frame pair. `a2` is absent when aperture 1 blocks the beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub a1: [f64; 2],
    pub a2: Option<[f64; 2]>,
}

impl Measurement {
    pub fn is_complete(&self) -> bool {
        self.a2.is_some()
    }

    pub fn at(&self, aperture: Aperture) -> Option<[f64; 2]> {
        match aperture {
            Aperture::A1 => Some(self.a1),
            Aperture::A2 => self.a2,
        }
    }

    pub fn offset(&self, aperture: Aperture, plane: Plane) -> Option<f64> {
        self.at(aperture).map(|xy| xy[plane.index()])
    }

    pub fn radius(&self, aperture: Aperture) -> Option<f64> {
        self.at(aperture).map(|[x, y]| libm::hypot(x, y))
    }

    /// `(δx1, δy1, δx2, δy2)` when complete.
    pub fn to_vector(&self) -> Option<[f64; 4]> {
        self.a2.map(|[x2, y2]| [self.a1[0], self.a1[1], x2, y2])
    }
}

pub trait Plant {
    fn geometry(&self) -> &SystemGeometry;

    fn controls(&self) -> MirrorControls;

    /// Moves the mirrors. Does not take a reading.
    fn set_controls(&mut self, controls: MirrorControls) -> Result<()>;

    /// Takes one reading. The reading is counted even when it fails.
    fn measure(&mut self) -> Result<Measurement>;

    fn readings_used(&self) -> u64;
}

/// Bounds of the instance errors drawn by [`SimulatedPlant::misalign`] at
/// magnitude 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentBounds {
    /// mm
    pub lateral: f64,
    /// rad
    pub angular: f64,
}

impl Default for MisalignmentBounds {
    fn default() -> Self {
        Self {
            lateral: 4.0,
            angular: 8e-3,
        }
    }
}

/// Simulated bench: small-angle forward model plus Gaussian camera noise.
#[derive(Debug, Clone)]
pub struct SimulatedPlant {
    geometry: SystemGeometry,
    sensitivity: SensitivityMatrix,
    controls: MirrorControls,
    errors: MisalignmentErrors,
    noise_sigma: f64,
    reading_count: u64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl SimulatedPlant {
    pub fn new(geometry: SystemGeometry, noise_sigma: f64, seed: u64) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and non-negative".into()));
        }
        let sensitivity = sensitivity_matrix(&geometry)?;
        Ok(Self {
            geometry,
            sensitivity,
            controls: MirrorControls::ZERO,
            errors: MisalignmentErrors::default(),
            noise_sigma,
            reading_count: 0,
            seed,
            rng: stream_rng(seed, Stream::Noise),
        })
    }

    pub fn with_errors(mut self, errors: MisalignmentErrors) -> Result<Self> {
        errors.validate()?;
        self.errors = errors;
        Ok(self)
    }

    /// Draws fresh instance errors uniformly within `magnitude · bounds`,
    /// rejecting draws whose exact compensation would leave the recoverable
    /// part of the sampling box.
    pub fn misalign(&mut self, seed: u64, magnitude: f64) -> Result<()> {
        self.misalign_within(seed, magnitude, &MisalignmentBounds::default())
    }

    pub fn misalign_within(
        &mut self,
        seed: u64,
        magnitude: f64,
        bounds: &MisalignmentBounds,
    ) -> Result<()> {
        if !(0.0..=1.0).contains(&magnitude) {
            return Err(Error::Config("misalignment magnitude must lie in [0, 1]".into()));
        }
        let reach = RECOVERABLE_FRACTION * SamplingBox::for_geometry(&self.geometry)?.half_width;
        let mut rng = stream_rng(seed, Stream::Misalignment);
        let scale = [bounds.lateral, bounds.lateral, bounds.angular, bounds.angular];
        for _ in 0..MAX_MISALIGN_REJECTIONS {
            let draw: [f64; 4] =
                core::array::from_fn(|i| magnitude * scale[i] * rng.random_range(-1.0..=1.0));
            let errors = MisalignmentErrors::from_array(draw);
            let Some(fix) = self.sensitivity.compensating_controls(&errors) else {
                return Err(Error::Degenerate("sensitivity matrix is singular".into()));
            };
            if fix.to_array().iter().all(|v| v.abs() <= reach) {
                self.errors = errors;
                return Ok(());
            }
        }
        Err(Error::Config(alloc::format!(
            "no recoverable misalignment found in {MAX_MISALIGN_REJECTIONS} draws; reduce the bounds"
        )))
    }

    pub fn errors(&self) -> &MisalignmentErrors {
        &self.errors
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sensitivity(&self) -> &SensitivityMatrix {
        &self.sensitivity
    }

    /// Noise-free offsets at the current controls. Not a reading.
    pub fn true_offsets(&self) -> [f64; 4] {
        self.sensitivity.apply(&self.controls, &self.errors)
    }

    /// Controls that exactly align this build.
    pub fn ideal_controls(&self) -> Option<MirrorControls> {
        self.sensitivity.compensating_controls(&self.errors)
    }
}

impl Plant for SimulatedPlant {
    fn geometry(&self) -> &SystemGeometry {
        &self.geometry
    }

    fn controls(&self) -> MirrorControls {
        self.controls
    }

    fn set_controls(&mut self, controls: MirrorControls) -> Result<()> {
        controls.check_limits(self.geometry.control_limit)?;
        self.controls = controls;
        Ok(())
    }

    fn measure(&mut self) -> Result<Measurement> {
        self.reading_count += 1;
        let truth = self.true_offsets();
        let half = self.geometry.camera_half_field;
        if truth[0].abs() > half || truth[1].abs() > half {
            return Err(Error::FieldOfView {
                offset_mm: truth[0].abs().max(truth[1].abs()),
                half_field_mm: half,
            });
        }
        let blocked = blocked_at_a1([truth[0], truth[1]], &self.geometry);
        // always four draws so the stream position depends only on the call count
        let noise: [f64; 4] = core::array::from_fn(|_| {
            let z: f64 = self.rng.sample(StandardNormal);
            self.noise_sigma * z
        });
        let noisy: [f64; 4] = core::array::from_fn(|i| truth[i] + noise[i]);
        Ok(Measurement {
            a1: [noisy[0], noisy[1]],
            a2: (!blocked).then_some([noisy[2], noisy[3]]),
        })
    }

    fn readings_used(&self) -> u64 {
        self.reading_count
    }
}
