use twomirror_core::ann::{self, AnnAlignConfig, TrainConfig};
use twomirror_core::beamwalk::{self, WalkConfig};
use twomirror_core::optics::SystemGeometry;
use twomirror_core::plant::{Aperture, Plant, SimulatedPlant};
use twomirror_core::regression::{self, RegressionConfig};

fn misaligned(noise: f64, seed: u64) -> SimulatedPlant {
    let mut p = SimulatedPlant::new(SystemGeometry::default(), noise, seed).unwrap();
    p.misalign(seed, 1.0).unwrap();
    p
}

#[test]
fn regression_recovers_ideal_controls() {
    let mut plant = misaligned(0.0, 4);
    let ideal = plant.ideal_controls().unwrap().to_array();
    let r = regression::align(&mut plant, &RegressionConfig::default()).unwrap();
    let got = r.report.final_controls.to_array();
    for k in 0..4 {
        assert!((got[k] - ideal[k]).abs() < 1e-9, "{got:?} vs {ideal:?}");
    }
    assert_eq!(plant.readings_used(), r.report.readings);
}

#[test]
fn beam_walk_and_regression_agree_on_the_solution() {
    let mut walk_plant = misaligned(0.0, 11);
    let mut fit_plant = misaligned(0.0, 11);
    let walk = beamwalk::align(&mut walk_plant, &WalkConfig::default()).unwrap();
    let fit = regression::align(&mut fit_plant, &RegressionConfig::default()).unwrap();
    assert!(walk.report.converged);
    let (a, b) = (walk.report.final_controls.to_array(), fit.report.final_controls.to_array());
    for k in 0..4 {
        assert!((a[k] - b[k]).abs() < 1e-4, "{a:?} vs {b:?}");
    }
}

#[test]
fn strategies_leave_the_plant_at_their_solution() {
    let mut plant = misaligned(0.01, 2);
    let cfg = AnnAlignConfig {
        samples: 150,
        train: TrainConfig { epochs: 50, ..Default::default() },
        ..Default::default()
    };
    let a = ann::align(&mut plant, &cfg).unwrap();
    assert_eq!(plant.controls(), a.report.final_controls);
    assert_eq!(a.report.readings, 151);
    assert!(a.report.residuals.radius(Aperture::A1).is_some());
}
