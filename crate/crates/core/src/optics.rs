//! Beam-path geometry for the two-mirror, two-aperture layout.
//!
//! Global frame: the laser emits along +z from the origin, `y` is vertical.
//! Mirror 1 sits at `z = dd0` and folds the beam by 90° onto +x; mirror 2
//! sits `dd1` further along x and folds it back onto +z. Aperture 1 is `dd2`
//! past mirror 2 and aperture 2 another `dd3` beyond. Aperture offsets are
//! reported in the aperture plane: `x` horizontal (global +x), `y` vertical.
//!
//! Two models are provided. [`trace_exact`] reflects a ray off rotated plane
//! mirrors with no approximation. [`sensitivity_matrix`] composes paraxial
//! ray-transfer matrices into the affine small-angle model that every aligner
//! and the simulated plant use. The exact tracer is the reference for signs.

use core::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Component, Error, Result};

/// Small-angle validity bound on any control or pointing angle.
pub const SMALL_ANGLE_LIMIT: f64 = 15.0 * core::f64::consts::PI / 180.0;

/// Actuator range of the motorised mounts: ±5.27° per axis.
pub const DEFAULT_CONTROL_LIMIT: f64 = 5.27 * core::f64::consts::PI / 180.0;

/// Aperture radius reproducing a 37.5 % blocked fraction under uniform
/// sampling of the default geometry (`twomirror calibrate`, 400k samples,
/// seed 0).
pub const DEFAULT_APERTURE_RADIUS_MM: f64 = 11.151_746_689_620_268;

const MM_PER_M: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mirror {
    M1,
    M2,
}

/// Transverse measurement/steering plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    /// Yaw controls, `x` offsets.
    Horizontal,
    /// Pitch controls, `y` offsets.
    Vertical,
}

impl Plane {
    pub const BOTH: [Plane; 2] = [Plane::Horizontal, Plane::Vertical];

    pub fn index(self) -> usize {
        match self {
            Plane::Horizontal => 0,
            Plane::Vertical => 1,
        }
    }
}

/// One of the four mirror adjustment axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlAxis {
    pub mirror: Mirror,
    pub plane: Plane,
}

impl ControlAxis {
    pub const ALL: [ControlAxis; 4] = [
        ControlAxis::new(Mirror::M1, Plane::Horizontal),
        ControlAxis::new(Mirror::M1, Plane::Vertical),
        ControlAxis::new(Mirror::M2, Plane::Horizontal),
        ControlAxis::new(Mirror::M2, Plane::Vertical),
    ];

    pub const fn new(mirror: Mirror, plane: Plane) -> Self {
        Self { mirror, plane }
    }

    /// Position in the `[cm1_yaw, cm1_pitch, cm2_yaw, cm2_pitch]` ordering.
    pub fn index(self) -> usize {
        let m = match self.mirror {
            Mirror::M1 => 0,
            Mirror::M2 => 2,
        };
        m + self.plane.index()
    }

    pub fn name(self) -> &'static str {
        match (self.mirror, self.plane) {
            (Mirror::M1, Plane::Horizontal) => "cm1_yaw",
            (Mirror::M1, Plane::Vertical) => "cm1_pitch",
            (Mirror::M2, Plane::Horizontal) => "cm2_yaw",
            (Mirror::M2, Plane::Vertical) => "cm2_pitch",
        }
    }
}

impl core::fmt::Display for ControlAxis {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Segment lengths, aperture sizes and actuator range of one system build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemGeometry {
    /// Laser to mirror 1, m.
    pub dd0: f64,
    /// Mirror 1 to mirror 2, m.
    pub dd1: f64,
    /// Mirror 2 to aperture 1, m. May be zero.
    pub dd2: f64,
    /// Aperture 1 to aperture 2, m.
    pub dd3: f64,
    /// mm
    pub aperture_radius_1: f64,
    /// mm
    pub aperture_radius_2: f64,
    /// Half-width of each camera's field of view, mm.
    pub camera_half_field: f64,
    /// Symmetric per-axis actuator bound, rad.
    pub control_limit: f64,
}

impl Default for SystemGeometry {
    fn default() -> Self {
        Self {
            dd0: 0.2,
            dd1: 0.3,
            dd2: 0.3,
            dd3: 0.9,
            aperture_radius_1: DEFAULT_APERTURE_RADIUS_MM,
            aperture_radius_2: DEFAULT_APERTURE_RADIUS_MM,
            camera_half_field: 50.0,
            control_limit: DEFAULT_CONTROL_LIMIT,
        }
    }
}

impl SystemGeometry {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidGeometry(msg.into()));
        let all = [
            self.dd0,
            self.dd1,
            self.dd2,
            self.dd3,
            self.aperture_radius_1,
            self.aperture_radius_2,
            self.camera_half_field,
            self.control_limit,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.dd0 <= 0.0 || self.dd1 <= 0.0 || self.dd3 <= 0.0 {
            return bad("dd0, dd1 and dd3 must be strictly positive");
        }
        if self.dd2 < 0.0 {
            return bad("dd2 must be non-negative");
        }
        if self.aperture_radius_1 <= 0.0 || self.aperture_radius_2 <= 0.0 {
            return bad("aperture radii must be strictly positive");
        }
        if self.camera_half_field <= self.aperture_radius_1
            || self.camera_half_field <= self.aperture_radius_2
        {
            return bad("camera_half_field must exceed both aperture radii");
        }
        if self.control_limit <= 0.0 || self.control_limit > SMALL_ANGLE_LIMIT {
            return bad("control_limit must lie in (0, 15°]");
        }
        Ok(())
    }

    /// Stable text identifier used to tag datasets.
    pub fn fingerprint(&self) -> alloc::string::String {
        alloc::format!(
            "dd={:?}/{:?}/{:?}/{:?};r={:?}/{:?};field={:?};limit={:?}",
            self.dd0,
            self.dd1,
            self.dd2,
            self.dd3,
            self.aperture_radius_1,
            self.aperture_radius_2,
            self.camera_half_field,
            self.control_limit
        )
    }
}

/// Mirror adjustment angles, rad, relative to the nominal 45° folds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MirrorControls {
    pub cm1_yaw: f64,
    pub cm1_pitch: f64,
    pub cm2_yaw: f64,
    pub cm2_pitch: f64,
}

impl MirrorControls {
    pub const ZERO: MirrorControls = MirrorControls::from_array([0.0; 4]);

    pub const fn from_array(a: [f64; 4]) -> Self {
        Self {
            cm1_yaw: a[0],
            cm1_pitch: a[1],
            cm2_yaw: a[2],
            cm2_pitch: a[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cm1_yaw, self.cm1_pitch, self.cm2_yaw, self.cm2_pitch]
    }

    pub fn get(&self, axis: ControlAxis) -> f64 {
        self.to_array()[axis.index()]
    }

    pub fn set(&mut self, axis: ControlAxis, value: f64) {
        let mut a = self.to_array();
        a[axis.index()] = value;
        *self = Self::from_array(a);
    }

    pub fn with(mut self, axis: ControlAxis, value: f64) -> Self {
        self.set(axis, value);
        self
    }

    /// Errors on the first axis outside `±limit` (or non-finite).
    pub fn check_limits(&self, limit: f64) -> Result<()> {
        for axis in ControlAxis::ALL {
            let value = self.get(axis);
            if !value.is_finite() || value.abs() > limit {
                return Err(Error::LimitViolation { axis, value, limit });
            }
        }
        Ok(())
    }

    pub fn clamped(self, limit: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v.clamp(-limit, limit)))
    }

    fn as_vector(self) -> Vector4<f64> {
        Vector4::from(self.to_array())
    }
}

/// Instance errors of one build: source lateral offset (mm) and pointing (rad).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentErrors {
    pub laser_dx: f64,
    pub laser_dy: f64,
    pub laser_dtheta: f64,
    pub laser_dphi: f64,
}

impl MisalignmentErrors {
    pub fn to_array(self) -> [f64; 4] {
        [self.laser_dx, self.laser_dy, self.laser_dtheta, self.laser_dphi]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            laser_dx: a[0],
            laser_dy: a[1],
            laser_dtheta: a[2],
            laser_dphi: a[3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite misalignment error".into()));
        }
        if self.laser_dtheta.abs() > SMALL_ANGLE_LIMIT || self.laser_dphi.abs() > SMALL_ANGLE_LIMIT {
            return Err(Error::Config(
                "laser pointing error outside the small-angle bound".into(),
            ));
        }
        Ok(())
    }
}

/// Where a traced beam crosses the two aperture planes, mm from centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamIntersections {
    pub at_a1: [f64; 2],
    pub at_a2: [f64; 2],
    pub blocked_at_a1: bool,
}

/// Blocking predicate shared by the oracle and the linear model.
pub fn blocked_at_a1(at_a1: [f64; 2], geometry: &SystemGeometry) -> bool {
    libm::hypot(at_a1[0], at_a1[1]) > geometry.aperture_radius_1
}

/// Unit normal of a mirror: tilt the nominal normal toward +y by `pitch`,
/// then rotate it about the vertical by `yaw`.
fn mirror_normal(nominal: Vector3<f64>, yaw: f64, pitch: f64) -> Vector3<f64> {
    let tilted = nominal * libm::cos(pitch) + Vector3::y() * libm::sin(pitch);
    let (s, c) = (libm::sin(yaw), libm::cos(yaw));
    Vector3::new(
        tilted.x * c + tilted.z * s,
        tilted.y,
        -tilted.x * s + tilted.z * c,
    )
}

fn intersect_plane(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    point: &Vector3<f64>,
    normal: &Vector3<f64>,
) -> Option<f64> {
    let denom = dir.dot(normal);
    if denom.abs() < 1e-12 {
        return None;
    }
    Some((point - origin).dot(normal) / denom)
}

fn reflect(dir: &Vector3<f64>, normal: &Vector3<f64>) -> Vector3<f64> {
    dir - normal * (2.0 * dir.dot(normal))
}

/// Exact plane-mirror ray trace, no small-angle simplification.
///
/// Aperture 2 is always computed geometrically; withholding it when the beam
/// is blocked is the plant's job.
pub fn trace_exact(
    controls: &MirrorControls,
    geometry: &SystemGeometry,
    errors: &MisalignmentErrors,
) -> Result<BeamIntersections> {
    geometry.validate()?;
    controls.check_limits(geometry.control_limit)?;

    let origin = Vector3::new(errors.laser_dx / MM_PER_M, errors.laser_dy / MM_PER_M, 0.0);
    let dir = Vector3::new(libm::tan(errors.laser_dtheta), libm::tan(errors.laser_dphi), 1.0)
        .normalize();

    let m1_center = Vector3::new(0.0, 0.0, geometry.dd0);
    let m1_normal = mirror_normal(
        Vector3::new(FRAC_1_SQRT_2, 0.0, -FRAC_1_SQRT_2),
        controls.cm1_yaw,
        controls.cm1_pitch,
    );
    let t1 = intersect_plane(&origin, &dir, &m1_center, &m1_normal)
        .filter(|t| *t > 0.0)
        .ok_or(Error::BeamMiss(Component::Mirror1))?;
    let hit1 = origin + dir * t1;
    let dir1 = reflect(&dir, &m1_normal);

    let m2_center = Vector3::new(geometry.dd1, 0.0, geometry.dd0);
    let m2_normal = mirror_normal(
        Vector3::new(-FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2),
        controls.cm2_yaw,
        controls.cm2_pitch,
    );
    let t2 = intersect_plane(&hit1, &dir1, &m2_center, &m2_normal)
        .filter(|t| *t > 0.0)
        .ok_or(Error::BeamMiss(Component::Mirror2))?;
    let hit2 = hit1 + dir1 * t2;
    let dir2 = reflect(&dir1, &m2_normal);

    // The aperture planes are z = const; a beam not heading downstream never
    // reaches them.
    if dir2.z < 1e-9 {
        return Err(Error::BeamMiss(Component::Aperture1));
    }
    let at_plane = |z: f64| {
        let t = (z - hit2.z) / dir2.z;
        let p = hit2 + dir2 * t;
        [(p.x - geometry.dd1) * MM_PER_M, p.y * MM_PER_M]
    };
    let z_a1 = geometry.dd0 + geometry.dd2;
    let at_a1 = at_plane(z_a1);
    let at_a2 = at_plane(z_a1 + geometry.dd3);
    Ok(BeamIntersections {
        at_a1,
        at_a2,
        blocked_at_a1: blocked_at_a1(at_a1, geometry),
    })
}

/// Augmented paraxial ray-transfer matrix acting on `(position mm, slope rad, 1)`.
type RayTransfer = Matrix3<f64>;

fn free_space(length_m: f64) -> RayTransfer {
    Matrix3::new(1.0, length_m * MM_PER_M, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
}

/// A mirror rotated by an angle adds a constant slope kick to the reflected ray.
fn steering(kick_rad: f64) -> RayTransfer {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, kick_rad, 0.0, 0.0, 1.0)
}

/// Reflected-ray deflection per unit mirror rotation.
///
/// Yaw rotates the mirror about the normal of the plane of incidence, so the
/// ray turns by exactly twice the angle; the two folds have opposite
/// orientation, hence opposite signs. Pitch tilts the mirror about an axis
/// inside the plane of incidence and the out-of-plane deflection is scaled by
/// the cosine of the 45° incidence angle.
fn steering_gain(mirror: Mirror, plane: Plane) -> f64 {
    match (mirror, plane) {
        (Mirror::M1, Plane::Horizontal) => -2.0,
        (Mirror::M2, Plane::Horizontal) => 2.0,
        (_, Plane::Vertical) => 2.0 * FRAC_1_SQRT_2,
    }
}

/// Propagates an augmented ray through one transverse plane of the system,
/// returning its position at aperture 1 and aperture 2.
fn propagate_plane(
    geometry: &SystemGeometry,
    source: (f64, f64),
    kick_m1: f64,
    kick_m2: f64,
) -> (f64, f64) {
    // Both 45° folds carry the transverse coordinate of the incoming ray onto
    // the outgoing one with unchanged sign in this layout, so they act as the
    // identity here; only the steering kicks appear.
    let to_a1 = free_space(geometry.dd2)
        * steering(kick_m2)
        * free_space(geometry.dd1)
        * steering(kick_m1)
        * free_space(geometry.dd0);
    let to_a2 = free_space(geometry.dd3) * to_a1;
    let ray = Vector3::new(source.0, source.1, 1.0);
    ((to_a1 * ray).x, (to_a2 * ray).x)
}

/// Affine small-angle model: `measurement = gain · controls + error_gain · errors`.
///
/// Rows are `(δx1, δy1, δx2, δy2)` in mm. `gain` columns follow
/// [`MirrorControls::to_array`] (rad); `error_gain` columns follow
/// [`MisalignmentErrors::to_array`] (mm, mm, rad, rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityMatrix {
    pub gain: Matrix4<f64>,
    pub error_gain: Matrix4<f64>,
}

impl SensitivityMatrix {
    /// Measurement offset induced by the instance errors at zero controls.
    pub fn offset(&self, errors: &MisalignmentErrors) -> Vector4<f64> {
        self.error_gain * Vector4::from(errors.to_array())
    }

    pub fn apply(&self, controls: &MirrorControls, errors: &MisalignmentErrors) -> [f64; 4] {
        let v = self.gain * controls.as_vector() + self.offset(errors);
        [v[0], v[1], v[2], v[3]]
    }

    /// Controls that bring every measurement to zero, if `gain` is invertible.
    pub fn compensating_controls(&self, errors: &MisalignmentErrors) -> Option<MirrorControls> {
        let inv = self.gain.try_inverse()?;
        let c = -(inv * self.offset(errors));
        Some(MirrorControls::from_array([c[0], c[1], c[2], c[3]]))
    }
}

pub fn sensitivity_matrix(geometry: &SystemGeometry) -> Result<SensitivityMatrix> {
    geometry.validate()?;
    let mut gain = Matrix4::zeros();
    let mut error_gain = Matrix4::zeros();
    for plane in Plane::BOTH {
        let p = plane.index();
        for mirror in [Mirror::M1, Mirror::M2] {
            let axis = ControlAxis::new(mirror, plane);
            let k = steering_gain(mirror, plane);
            let (k1, k2) = match mirror {
                Mirror::M1 => (k, 0.0),
                Mirror::M2 => (0.0, k),
            };
            let (a1, a2) = propagate_plane(geometry, (0.0, 0.0), k1, k2);
            gain[(p, axis.index())] = a1;
            gain[(2 + p, axis.index())] = a2;
        }
        // Source lateral offset (mm) then pointing (rad) for this plane.
        let (a1, a2) = propagate_plane(geometry, (1.0, 0.0), 0.0, 0.0);
        error_gain[(p, p)] = a1;
        error_gain[(2 + p, p)] = a2;
        let (a1, a2) = propagate_plane(geometry, (0.0, 1.0), 0.0, 0.0);
        error_gain[(p, 2 + p)] = a1;
        error_gain[(2 + p, 2 + p)] = a2;
    }
    Ok(SensitivityMatrix { gain, error_gain })
}

/// Small-angle forward model, `(δx1, δy1, δx2, δy2)` in mm.
pub fn forward_linear(
    controls: &MirrorControls,
    geometry: &SystemGeometry,
    errors: &MisalignmentErrors,
) -> Result<[f64; 4]> {
    controls.check_limits(geometry.control_limit)?;
    Ok(sensitivity_matrix(geometry)?.apply(controls, errors))
}
