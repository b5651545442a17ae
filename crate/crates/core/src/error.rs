use alloc::string::String;

use crate::optics::ControlAxis;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Optical component a traced ray can fail to reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Mirror1,
    Mirror2,
    Aperture1,
    Aperture2,
}

impl core::fmt::Display for Component {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Component::Mirror1 => "mirror 1",
            Component::Mirror2 => "mirror 2",
            Component::Aperture1 => "aperture 1",
            Component::Aperture2 => "aperture 2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("control {axis} = {value:.6e} rad exceeds actuator limit ±{limit:.6e} rad")]
    LimitViolation {
        axis: ControlAxis,
        value: f64,
        limit: f64,
    },

    #[error("beam misses {0}")]
    BeamMiss(Component),

    #[error("aperture 1 offset {offset_mm:.3} mm is outside the camera field (±{half_field_mm:.3} mm)")]
    FieldOfView { offset_mm: f64, half_field_mm: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("R² undefined for output {0}: target has zero variance")]
    UndefinedRSquared(usize),

    #[error("underdetermined fit: {rows} rows for {parameters} parameters")]
    Underdetermined { rows: usize, parameters: usize },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("gain estimate on {axis} below floor: |Δ| = {delta_mm:.3e} mm after probe of {probe_rad:.3e} rad")]
    GainTooSmall {
        axis: ControlAxis,
        delta_mm: f64,
        probe_rad: f64,
    },

    #[error("step-2 sample {index} was blocked at aperture 1")]
    Step2Blocked { index: usize },
}
