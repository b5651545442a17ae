//! Iterative two-mirror beam walk.
//!
//! Mirror 1 centres the beam on aperture 1, then mirror 2 centres it on
//! aperture 2, and the pair repeats until both offsets are within the
//! threshold. Each axis visit measures a secant gain with one probe step and
//! then applies Newton corrections.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{ControlAxis, Mirror, Plane};
use crate::plant::{Aperture, Measurement, Plant};
use crate::report::{AlignmentReport, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    /// Radial convergence bound per aperture, mm.
    pub threshold: f64,
    pub max_iterations: u32,
    /// Initial probe per axis, rad.
    pub probe_step: f64,
    /// Safety budget of camera readings for one `align` call.
    pub max_readings: u64,
    /// Smallest usable probe response, mm.
    pub gain_floor: f64,
    /// Corrections per axis visit after the probe.
    pub max_corrections: u32,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            max_iterations: 20,
            probe_step: 1e-3,
            max_readings: 1000,
            gain_floor: 10.0 * crate::plant::DEFAULT_NOISE_SIGMA,
            max_corrections: 8,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self, control_limit: f64) -> Result<()> {
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return Err(Error::Config("walk threshold must be positive".into()));
        }
        // a doubled probe from the limit still has to stay in range
        if !(self.probe_step > 0.0 && 2.0 * self.probe_step < control_limit) {
            return Err(Error::Config("probe step must be positive and well inside the actuator limit".into()));
        }
        if self.max_iterations == 0 || self.max_readings == 0 || self.max_corrections == 0 {
            return Err(Error::Config("walk budgets must be at least 1".into()));
        }
        if self.gain_floor.is_nan() || self.gain_floor < 0.0 {
            return Err(Error::Config("gain floor must be non-negative".into()));
        }
        Ok(())
    }

    fn axis_tolerance(&self) -> f64 {
        self.threshold / core::f64::consts::SQRT_2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkStatus {
    Centered,
    /// Aperture 2 stopped being visible during a mirror-2 walk.
    Blocked,
    /// `max_readings` reached.
    OutOfBudget,
}

/// One camera reading taken during a walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// 1-based position among the readings of this walk.
    pub reading_index: u64,
    pub mirror: Mirror,
    /// Axis being adjusted, `None` for the entry reading of a walk.
    pub axis: Option<Plane>,
    /// Value of the adjusted axis (rad), or 0 for entry readings.
    pub control_value: f64,
    pub dx: Option<f64>,
    pub dy: Option<f64>,
    pub aperture: Aperture,
    pub blocked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterReport {
    pub status: WalkStatus,
    pub readings: u64,
    pub last: Option<Measurement>,
}

struct Walker<'a, P: Plant + ?Sized> {
    plant: &'a mut P,
    cfg: &'a WalkConfig,
    start: u64,
    trace: Option<&'a mut Vec<TraceEntry>>,
}

enum Reading {
    Seen(Measurement),
    /// Beam left the camera field; the plant still counted the reading.
    OffCamera,
}

impl<P: Plant + ?Sized> Walker<'_, P> {
    fn used(&self) -> u64 {
        self.plant.readings_used() - self.start
    }

    fn budget_left(&self) -> bool {
        self.used() < self.cfg.max_readings
    }

    fn read(&mut self, mirror: Mirror, axis: Option<Plane>, aperture: Aperture) -> Result<Reading> {
        let reading = match self.plant.measure() {
            Ok(m) => Reading::Seen(m),
            Err(Error::FieldOfView { .. }) => Reading::OffCamera,
            Err(e) => return Err(e),
        };
        if let Some(trace) = self.trace.as_deref_mut() {
            let control_value = axis.map_or(0.0, |p| self.plant.controls().get(ControlAxis::new(mirror, p)));
            let (xy, blocked) = match &reading {
                Reading::Seen(m) => (m.at(aperture), !m.is_complete()),
                Reading::OffCamera => (None, true),
            };
            trace.push(TraceEntry {
                reading_index: self.plant.readings_used() - self.start,
                mirror,
                axis,
                control_value,
                dx: xy.map(|v| v[0]),
                dy: xy.map(|v| v[1]),
                aperture,
                blocked,
            });
        }
        Ok(reading)
    }

    fn center(&mut self, mirror: Mirror, aperture: Aperture) -> Result<CenterReport> {
        let before = self.plant.readings_used();
        let finish = |s: &Self, status, last| CenterReport {
            status,
            readings: s.plant.readings_used() - before,
            last,
        };
        if !self.budget_left() {
            return Ok(finish(self, WalkStatus::OutOfBudget, None));
        }
        let mut last = match self.read(mirror, None, aperture)? {
            Reading::Seen(m) => m,
            Reading::OffCamera => return Err(off_camera(self.plant)),
        };
        match last.radius(aperture) {
            None => return Ok(finish(self, WalkStatus::Blocked, Some(last))),
            Some(r) if r <= self.cfg.threshold => return Ok(finish(self, WalkStatus::Centered, Some(last))),
            Some(_) => {}
        }
        for plane in Plane::BOTH {
            match self.walk_axis(ControlAxis::new(mirror, plane), aperture, &mut last)? {
                WalkStatus::Centered => {}
                status => return Ok(finish(self, status, Some(last))),
            }
        }
        Ok(finish(self, WalkStatus::Centered, Some(last)))
    }

    /// Moves one axis to `value` and reads. `Err(status)` ends the walk.
    fn step(
        &mut self,
        axis: ControlAxis,
        value: f64,
        aperture: Aperture,
    ) -> Result<core::result::Result<Measurement, WalkStatus>> {
        if !self.budget_left() {
            return Ok(Err(WalkStatus::OutOfBudget));
        }
        let previous = self.plant.controls();
        self.plant.set_controls(previous.with(axis, value))?;
        match self.read(axis.mirror, Some(axis.plane), aperture)? {
            Reading::Seen(m) if m.at(aperture).is_some() => Ok(Ok(m)),
            Reading::Seen(_) => Ok(Err(WalkStatus::Blocked)),
            Reading::OffCamera if aperture == Aperture::A2 => {
                self.plant.set_controls(previous)?;
                Ok(Err(WalkStatus::Blocked))
            }
            Reading::OffCamera => Err(off_camera(self.plant)),
        }
    }

    fn walk_axis(&mut self, axis: ControlAxis, aperture: Aperture, last: &mut Measurement) -> Result<WalkStatus> {
        let tolerance = self.cfg.axis_tolerance();
        let limit = self.plant.geometry().control_limit;
        let offset_of = |m: &Measurement| m.offset(aperture, axis.plane).expect("aperture visible");
        let mut error = offset_of(last);

        let origin = self.plant.controls().get(axis);
        // probe away from the limit it is closer to
        let direction = if origin > 0.0 { -1.0 } else { 1.0 };
        let mut probe = self.cfg.probe_step;
        let mut attempts = 0;
        let gain = loop {
            let m = match self.step(axis, origin + direction * probe, aperture)? {
                Ok(m) => m,
                Err(status) => return Ok(status),
            };
            *last = m;
            let delta = offset_of(&m) - error;
            if delta.abs() >= self.cfg.gain_floor && delta != 0.0 {
                break delta / (direction * probe);
            }
            attempts += 1;
            if attempts == 2 {
                return Err(Error::GainTooSmall {
                    axis,
                    delta_mm: delta,
                    probe_rad: probe,
                });
            }
            probe *= 2.0;
        };
        error = offset_of(last);

        for _ in 0..self.cfg.max_corrections {
            if error.abs() <= tolerance {
                break;
            }
            let current = self.plant.controls().get(axis);
            let target = (current - error / gain).clamp(-limit, limit);
            let m = match self.step(axis, target, aperture)? {
                Ok(m) => m,
                Err(status) => return Ok(status),
            };
            *last = m;
            error = offset_of(&m);
        }
        Ok(WalkStatus::Centered)
    }
}

fn off_camera<P: Plant + ?Sized>(plant: &P) -> Error {
    Error::FieldOfView {
        offset_mm: f64::NAN,
        half_field_mm: plant.geometry().camera_half_field,
    }
}

/// Centres the beam on one aperture with one mirror, horizontal axis first.
pub fn center_on_aperture<P: Plant + ?Sized>(
    plant: &mut P,
    mirror: Mirror,
    aperture: Aperture,
    cfg: &WalkConfig,
) -> Result<CenterReport> {
    cfg.validate(plant.geometry().control_limit)?;
    let start = plant.readings_used();
    Walker {
        plant,
        cfg,
        start,
        trace: None,
    }
    .center(mirror, aperture)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkOutcome {
    pub report: AlignmentReport,
    pub trace: Vec<TraceEntry>,
    /// Aperture-1 radius at the end of each outer iteration.
    pub a1_progress: Vec<Option<f64>>,
}

fn within(m: &Measurement, threshold: f64) -> bool {
    matches!(
        (m.radius(Aperture::A1), m.radius(Aperture::A2)),
        (Some(r1), Some(r2)) if r1 <= threshold && r2 <= threshold
    )
}

/// Alternating mirror-1/aperture-1 and mirror-2/aperture-2 walks until both
/// apertures are within the threshold or a budget runs out.
pub fn align<P: Plant + ?Sized>(plant: &mut P, cfg: &WalkConfig) -> Result<WalkOutcome> {
    cfg.validate(plant.geometry().control_limit)?;
    let start = plant.readings_used();
    let mut trace = Vec::new();
    let mut a1_progress = Vec::new();
    let mut last: Option<Measurement> = None;
    let mut converged = false;
    let mut iterations = 0;

    let mut walker = Walker {
        plant,
        cfg,
        start,
        trace: Some(&mut trace),
    };
    'outer: while iterations < cfg.max_iterations {
        iterations += 1;
        for (mirror, aperture) in [(Mirror::M1, Aperture::A1), (Mirror::M2, Aperture::A2)] {
            let sub = walker.center(mirror, aperture)?;
            if sub.last.is_some() {
                last = sub.last;
            }
            if last.is_some_and(|m| within(&m, cfg.threshold)) {
                converged = true;
                a1_progress.push(last.and_then(|m| m.radius(Aperture::A1)));
                break 'outer;
            }
            match sub.status {
                WalkStatus::OutOfBudget => break 'outer,
                // back to mirror 1 on the next pass
                WalkStatus::Blocked | WalkStatus::Centered => {}
            }
        }
        a1_progress.push(last.and_then(|m| m.radius(Aperture::A1)));
    }

    let plant = walker.plant;
    let residuals = match last {
        Some(m) => m,
        None => plant.measure()?,
    };
    let report = AlignmentReport {
        strategy: Strategy::Beamwalk,
        final_controls: plant.controls(),
        residuals,
        readings: plant.readings_used() - start,
        outer_iterations: iterations,
        converged,
        transmitted: residuals.is_complete(),
    };
    Ok(WalkOutcome {
        report,
        trace,
        a1_progress,
    })
}
