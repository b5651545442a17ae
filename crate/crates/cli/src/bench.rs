//! Seeded strategy runs and the side-by-side comparison report.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use twomirror_core::ann::{self, AnnAlignment};
use twomirror_core::beamwalk::{self, WalkOutcome};
use twomirror_core::optics::MirrorControls;
use twomirror_core::plant::{Aperture, Plant, SimulatedPlant};
use twomirror_core::regression::{self, RegressionAlignment};
use twomirror_core::report::{AlignmentReport, Strategy};

use crate::config::{ExperimentConfig, MisalignmentSettings};
use crate::error::{CliError, CliResult};
use crate::files;
use crate::numfmt::{opt_float, to_json};

/// What a reading is counted as in every report.
pub const READING_CONVENTION: &str = "frame-pair";

pub const STATUS_CONVERGED: u8 = 0;
pub const STATUS_NOT_CONVERGED: u8 = 1;
pub const STATUS_FAILED: u8 = 2;

/// Full output of one strategy run, kept for artifact writing.
#[derive(Debug, Clone)]
pub enum Artifacts {
    Ann(Box<AnnAlignment>),
    Beamwalk(WalkOutcome),
    Regression(Box<RegressionAlignment>),
}

impl Artifacts {
    pub fn report(&self) -> &AlignmentReport {
        match self {
            Artifacts::Ann(a) => &a.report,
            Artifacts::Beamwalk(w) => &w.report,
            Artifacts::Regression(r) => &r.report,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub outcome: Result<Artifacts, String>,
    pub plant_readings: u64,
    pub wall_time_s: f64,
}

/// Fresh plant carrying the configured build errors.
pub fn build_plant(cfg: &ExperimentConfig) -> CliResult<SimulatedPlant> {
    let mut plant = SimulatedPlant::new(cfg.geometry()?, cfg.noise_sigma, cfg.seed)?;
    let MisalignmentSettings { seed, magnitude } = cfg.misalignment;
    plant.misalign(seed, magnitude)?;
    Ok(plant)
}

pub fn run_strategy(cfg: &ExperimentConfig, strategy: Strategy) -> CliResult<StrategyRun> {
    let mut plant = build_plant(cfg)?;
    let start = Instant::now();
    let outcome = match strategy {
        Strategy::Ann => ann::align(&mut plant, &cfg.ann_config()).map(|a| Artifacts::Ann(Box::new(a))),
        Strategy::Beamwalk => beamwalk::align(&mut plant, &cfg.beamwalk).map(Artifacts::Beamwalk),
        Strategy::Regression => {
            regression::align(&mut plant, &cfg.regression_config()).map(|r| Artifacts::Regression(Box::new(r)))
        }
    };
    let wall_time_s = start.elapsed().as_secs_f64();
    if let Ok(a) = &outcome {
        if a.report().readings != plant.readings_used() {
            return Err(CliError::Internal(format!(
                "{strategy}: reported {} readings but the plant counted {}",
                a.report().readings,
                plant.readings_used()
            )));
        }
    }
    Ok(StrategyRun {
        strategy,
        outcome: outcome.map_err(|e| e.to_string()),
        plant_readings: plant.readings_used(),
        wall_time_s,
    })
}

/// Runs every selected strategy on its own plant, concurrently.
pub fn run_all(cfg: &ExperimentConfig, strategies: &[Strategy]) -> CliResult<Vec<StrategyRun>> {
    cfg.validate()?;
    std::thread::scope(|s| {
        let handles: Vec<_> = strategies.iter().map(|&k| s.spawn(move || run_strategy(cfg, k))).collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| CliError::Internal("strategy thread panicked".into()))?)
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    /// 0 converged, 1 ran but did not converge, 2 failed.
    pub status: u8,
    pub error: Option<String>,
    pub readings: u64,
    pub outer_iterations: Option<u32>,
    pub converged: bool,
    pub transmitted: bool,
    pub final_controls: Option<MirrorControls>,
    pub residual_a1_mm: Option<[f64; 2]>,
    pub residual_a2_mm: Option<[f64; 2]>,
    pub residual_radius_a1_mm: Option<f64>,
    pub residual_radius_a2_mm: Option<f64>,
    /// Excluded from the digest.
    pub wall_time_s: Option<f64>,
}

impl StrategyResult {
    pub fn from_run(run: &StrategyRun) -> Self {
        match &run.outcome {
            Ok(a) => {
                let r = a.report();
                Self {
                    strategy: run.strategy,
                    status: if r.converged { STATUS_CONVERGED } else { STATUS_NOT_CONVERGED },
                    error: None,
                    readings: r.readings,
                    outer_iterations: Some(r.outer_iterations),
                    converged: r.converged,
                    transmitted: r.transmitted,
                    final_controls: Some(r.final_controls),
                    residual_a1_mm: Some(r.residuals.a1),
                    residual_a2_mm: r.residuals.a2,
                    residual_radius_a1_mm: r.residual_radius(Aperture::A1),
                    residual_radius_a2_mm: r.residual_radius(Aperture::A2),
                    wall_time_s: Some(run.wall_time_s),
                }
            }
            Err(msg) => Self {
                strategy: run.strategy,
                status: STATUS_FAILED,
                error: Some(msg.clone()),
                readings: run.plant_readings,
                outer_iterations: None,
                converged: false,
                transmitted: false,
                final_controls: None,
                residual_a1_mm: None,
                residual_a2_mm: None,
                residual_radius_a1_mm: None,
                residual_radius_a2_mm: None,
                wall_time_s: Some(run.wall_time_s),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub reading_convention: String,
    pub seed: u64,
    pub noise_sigma: f64,
    pub misalignment: MisalignmentSettings,
    pub strategies: Vec<StrategyResult>,
    /// `readings(regression) < readings(beamwalk) < readings(ann)`, when all
    /// three completed.
    pub ordering_check: Option<bool>,
    /// SHA-256 of this report's JSON with wall times and the digest blanked.
    pub digest: String,
}

pub fn ordering_check(results: &[StrategyResult]) -> Option<bool> {
    let readings = |k: Strategy| {
        results
            .iter()
            .find(|r| r.strategy == k && r.status != STATUS_FAILED)
            .map(|r| r.readings)
    };
    let (r, b, a) = (
        readings(Strategy::Regression)?,
        readings(Strategy::Beamwalk)?,
        readings(Strategy::Ann)?,
    );
    Some(r < b && b < a)
}

impl ComparisonReport {
    pub fn new(cfg: &ExperimentConfig, runs: &[StrategyRun]) -> Self {
        let strategies: Vec<StrategyResult> = runs.iter().map(StrategyResult::from_run).collect();
        let mut report = Self {
            reading_convention: READING_CONVENTION.to_owned(),
            seed: cfg.seed,
            noise_sigma: cfg.noise_sigma,
            misalignment: cfg.misalignment,
            ordering_check: ordering_check(&strategies),
            strategies,
            digest: String::new(),
        };
        report.digest = report.compute_digest();
        report
    }

    pub fn without_wall_time(&self) -> Self {
        let mut c = self.clone();
        c.strategies.iter_mut().for_each(|s| s.wall_time_s = None);
        c
    }

    pub fn compute_digest(&self) -> String {
        let mut c = self.without_wall_time();
        c.digest.clear();
        let hash = Sha256::digest(to_json(&c).as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(CliError::Config(format!("unknown format `{other}` (json, csv)"))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

pub const REPORT_CSV_HEADER: [&str; 19] = [
    "strategy",
    "status",
    "error",
    "readings",
    "outer_iterations",
    "converged",
    "transmitted",
    "cm1_yaw_rad",
    "cm1_pitch_rad",
    "cm2_yaw_rad",
    "cm2_pitch_rad",
    "dx1_mm",
    "dy1_mm",
    "dx2_mm",
    "dy2_mm",
    "radius_a1_mm",
    "radius_a2_mm",
    "wall_time_s",
    "digest",
];

pub fn report_csv(report: &ComparisonReport) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(REPORT_CSV_HEADER).expect("in-memory CSV");
    for s in &report.strategies {
        let c = s.final_controls.map(|c| c.to_array());
        let control = |k: usize| opt_float(c.map(|c| c[k]));
        let a1 = s.residual_a1_mm;
        let a2 = s.residual_a2_mm;
        w.write_record([
            s.strategy.label().to_owned(),
            s.status.to_string(),
            s.error.clone().unwrap_or_default(),
            s.readings.to_string(),
            s.outer_iterations.map(|n| n.to_string()).unwrap_or_default(),
            s.converged.to_string(),
            s.transmitted.to_string(),
            control(0),
            control(1),
            control(2),
            control(3),
            opt_float(a1.map(|v| v[0])),
            opt_float(a1.map(|v| v[1])),
            opt_float(a2.map(|v| v[0])),
            opt_float(a2.map(|v| v[1])),
            opt_float(s.residual_radius_a1_mm),
            opt_float(s.residual_radius_a2_mm),
            opt_float(s.wall_time_s),
            report.digest.clone(),
        ])
        .expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV")
}

pub fn emit(report: &ComparisonReport, format: Format) -> String {
    match format {
        Format::Json => to_json(report),
        Format::Csv => report_csv(report),
    }
}

/// Per-strategy artifacts under `dir/<strategy>/`.
pub fn write_artifacts(dir: &Path, runs: &[StrategyRun]) -> CliResult<()> {
    for run in runs {
        let Ok(artifacts) = &run.outcome else { continue };
        let sub = dir.join(run.strategy.label());
        match artifacts {
            Artifacts::Ann(a) => {
                files::write_text(&sub.join("dataset.csv"), &files::dataset_csv(&a.collected))?;
                files::write_text(&sub.join("model.json"), &files::model_json(&a.model))?;
                files::write_text(&sub.join("loss.csv"), &files::loss_csv(&a.loss_trace))?;
            }
            Artifacts::Beamwalk(w) => {
                files::write_text(&sub.join("trace.csv"), &files::trace_csv(&w.trace))?;
            }
            Artifacts::Regression(r) => {
                files::write_text(&sub.join("step1.csv"), &files::dataset_csv(&r.step1.samples))?;
                files::write_text(&sub.join("step2.csv"), &files::dataset_csv(&r.step2.samples))?;
                let models = serde_json::json!({
                    "step1_horizontal": &r.step1.horizontal,
                    "step1_vertical": &r.step1.vertical,
                    "constraint": &r.step1.constraint,
                    "step2_reverse": &r.step2.reverse,
                });
                files::write_text(&sub.join("models.json"), &to_json(&models))?;
            }
        }
        let report = to_json(artifacts.report());
        files::write_text(&sub.join("report.json"), &report)?;
    }
    Ok(())
}
