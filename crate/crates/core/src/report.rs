use serde::{Deserialize, Serialize};

use crate::optics::MirrorControls;
use crate::plant::{Aperture, Measurement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ann,
    Beamwalk,
    Regression,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ann, Strategy::Beamwalk, Strategy::Regression];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Ann => "ann",
            Strategy::Beamwalk => "beamwalk",
            Strategy::Regression => "regression",
        }
    }
}

impl core::fmt::Display for Strategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.label())
    }
}

impl core::str::FromStr for Strategy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| crate::Error::Config(alloc::format!("unknown strategy `{s}`")))
    }
}

/// Outcome of one alignment run.
///
/// `readings` is the number of camera frame pairs the strategy consumed.
/// For the iterative beam walk `converged` means both apertures ended within
/// the walk threshold; for the one-shot strategies it means the applied
/// solution transmits through both apertures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub strategy: Strategy,
    pub final_controls: MirrorControls,
    pub residuals: Measurement,
    pub readings: u64,
    pub outer_iterations: u32,
    pub converged: bool,
    /// Beam passes aperture 1 and reaches aperture 2 at the end.
    pub transmitted: bool,
}

impl AlignmentReport {
    pub fn residual_radius(&self, aperture: Aperture) -> Option<f64> {
        self.residuals.radius(aperture)
    }
}
