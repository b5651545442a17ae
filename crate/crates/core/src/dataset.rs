//! Random sampling of the control space and the sample records built from it.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{sensitivity_matrix, MirrorControls, SystemGeometry};
use crate::plant::{Measurement, Plant};
use crate::rng::{stream_rng, Stream};

/// Measurement vectors and the control vectors that produced them.
pub type VectorPairs = (Vec<[f64; 4]>, Vec<[f64; 4]>);

/// Expected fraction of random samples blocked at aperture 1 (375 of 1000).
pub const TARGET_BLOCKED_FRACTION: f64 = 0.375;

/// Symmetric per-axis box random controls are drawn from.
///
/// The box is the actuator range shrunk until the largest aperture-1 offset
/// it can produce on a perfectly built system is half the camera field. The
/// other half is headroom for instance errors, so random sampling of any
/// recoverable build never loses the beam off camera 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    /// rad
    pub half_width: f64,
}

impl SamplingBox {
    pub fn for_geometry(geometry: &SystemGeometry) -> Result<Self> {
        let per_rad = max_a1_radius_per_rad(geometry)?;
        let half_width = (0.5 * geometry.camera_half_field / per_rad).min(geometry.control_limit);
        Ok(Self { half_width })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MirrorControls {
        let h = self.half_width;
        MirrorControls::from_array(core::array::from_fn(|_| rng.random_range(-h..=h)))
    }

    pub fn contains(&self, c: &MirrorControls) -> bool {
        c.to_array().iter().all(|v| v.abs() <= self.half_width)
    }

    /// Largest aperture-1 radial offset reachable inside the box, zero errors.
    pub fn max_a1_radius(&self, geometry: &SystemGeometry) -> Result<f64> {
        Ok(self.half_width * max_a1_radius_per_rad(geometry)?)
    }
}

fn max_a1_radius_per_rad(geometry: &SystemGeometry) -> Result<f64> {
    let g = sensitivity_matrix(geometry)?.gain;
    let row = |r: usize| (0..4).map(|c| g[(r, c)].abs()).sum::<f64>();
    Ok(libm::hypot(row(0), row(1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub controls: MirrorControls,
    pub measurement: Measurement,
    pub complete: bool,
}

impl SampleRecord {
    pub fn new(controls: MirrorControls, measurement: Measurement) -> Self {
        Self {
            controls,
            measurement,
            complete: measurement.is_complete(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub seed: u64,
    pub geometry_id: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn complete_count(&self) -> usize {
        self.records.iter().filter(|r| r.complete).count()
    }

    pub fn blocked_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        1.0 - self.complete_count() as f64 / self.records.len() as f64
    }

    /// `(measurement vectors, control vectors)` of an all-complete dataset.
    pub fn regression_pairs(&self) -> Result<VectorPairs> {
        let mut inputs = Vec::with_capacity(self.len());
        let mut targets = Vec::with_capacity(self.len());
        for (i, r) in self.records.iter().enumerate() {
            let m = r.measurement.to_vector().ok_or_else(|| {
                Error::InvalidDataset(alloc::format!("record {i} is incomplete"))
            })?;
            inputs.push(m);
            targets.push(r.controls.to_array());
        }
        Ok((inputs, targets))
    }
}

/// Applies each setting in turn and takes one reading per setting.
pub fn collect_at<P: Plant + ?Sized>(
    plant: &mut P,
    settings: &[MirrorControls],
    seed: u64,
) -> Result<Dataset> {
    let mut records = Vec::with_capacity(settings.len());
    for c in settings {
        plant.set_controls(*c)?;
        records.push(SampleRecord::new(*c, plant.measure()?));
    }
    Ok(Dataset {
        records,
        seed,
        geometry_id: plant.geometry().fingerprint(),
    })
}

/// Uniform random settings from the sampling box, one reading each.
/// Blocked samples are kept and marked incomplete.
pub fn collect_random<P: Plant + ?Sized>(plant: &mut P, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let sampling = SamplingBox::for_geometry(plant.geometry())?;
    let mut rng = stream_rng(seed, Stream::Collection);
    let settings: Vec<_> = (0..n).map(|_| sampling.sample(&mut rng)).collect();
    collect_at(plant, &settings, seed)
}

pub fn filter_complete(d: &Dataset) -> Dataset {
    Dataset {
        records: d.records.iter().filter(|r| r.complete).copied().collect(),
        seed: d.seed,
        geometry_id: d.geometry_id.clone(),
    }
}

/// Shuffles, then takes the first `floor(len · train_fraction)` records for
/// training and the rest for testing.
pub fn split_train_test(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
    }
    let mut records = d.records.clone();
    records.shuffle(&mut stream_rng(seed, Stream::Split));
    let n_train = libm::floor(records.len() as f64 * train_fraction) as usize;
    let test = records.split_off(n_train);
    let part = |records| Dataset {
        records,
        seed: d.seed,
        geometry_id: d.geometry_id.clone(),
    };
    Ok((part(records), part(test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureCalibration {
    pub aperture_radius: f64,
    /// Blocked fraction of the Monte-Carlo sample at `aperture_radius`.
    pub blocked_fraction: f64,
    pub target: f64,
    pub mc_samples: usize,
}

/// Finds the aperture-1 radius at which uniform sampling of the box blocks
/// `target_block_fraction` of the samples, by bisection over a fixed
/// Monte-Carlo sample of noise-free, error-free offsets.
pub fn calibrate_aperture(
    geometry: &SystemGeometry,
    target_block_fraction: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<ApertureCalibration> {
    if !(0.0..1.0).contains(&target_block_fraction) {
        return Err(Error::Config(
            "target blocked fraction must lie in [0, 1); a radius of zero is not a valid aperture"
                .into(),
        ));
    }
    if mc_samples == 0 {
        return Err(Error::Config("mc_samples must be at least 1".into()));
    }
    let sampling = SamplingBox::for_geometry(geometry)?;
    let r_max = sampling.max_a1_radius(geometry)?;
    if target_block_fraction == 0.0 {
        return Ok(ApertureCalibration {
            aperture_radius: r_max,
            blocked_fraction: 0.0,
            target: 0.0,
            mc_samples,
        });
    }

    let g = sensitivity_matrix(geometry)?.gain;
    let mut rng = stream_rng(seed, Stream::Calibration);
    let radii: Vec<f64> = (0..mc_samples)
        .map(|_| {
            let c = sampling.sample(&mut rng).to_array();
            let x: f64 = (0..4).map(|j| g[(0, j)] * c[j]).sum();
            let y: f64 = (0..4).map(|j| g[(1, j)] * c[j]).sum();
            libm::hypot(x, y)
        })
        .collect();
    let blocked_at = |r: f64| radii.iter().filter(|&&v| v > r).count() as f64 / mc_samples as f64;

    // blocked_at is non-increasing in r
    let (mut lo, mut hi) = (0.0, r_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if blocked_at(mid) > target_block_fraction {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * r_max {
            break;
        }
    }
    let blocked_fraction = blocked_at(hi);
    if (blocked_fraction - target_block_fraction).abs() > 0.01 {
        return Err(Error::Config(alloc::format!(
            "calibration reached {blocked_fraction:.4} blocked, target {target_block_fraction:.4}; \
             increase mc_samples"
        )));
    }
    Ok(ApertureCalibration {
        aperture_radius: hi,
        blocked_fraction,
        target: target_block_fraction,
        mc_samples,
    })
}
