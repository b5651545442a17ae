//! Experiment configuration document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twomirror_core::ann::{AnnAlignConfig, TrainConfig};
use twomirror_core::beamwalk::WalkConfig;
use twomirror_core::optics::SystemGeometry;
use twomirror_core::plant::DEFAULT_NOISE_SIGMA;
use twomirror_core::regression::RegressionConfig;
use twomirror_core::report::Strategy;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StrategySelector {
    Ann,
    Beamwalk,
    Regression,
    #[default]
    All,
}

impl StrategySelector {
    pub fn strategies(self) -> Vec<Strategy> {
        match self {
            StrategySelector::Ann => vec![Strategy::Ann],
            StrategySelector::Beamwalk => vec![Strategy::Beamwalk],
            StrategySelector::Regression => vec![Strategy::Regression],
            StrategySelector::All => Strategy::ALL.to_vec(),
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| CliError::Config(format!("unknown strategy `{s}` (ann, beamwalk, regression, all)")))
    }
}

/// Inline geometry or a path to a geometry JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometrySource {
    Inline(SystemGeometry),
    File(PathBuf),
}

impl Default for GeometrySource {
    fn default() -> Self {
        GeometrySource::Inline(SystemGeometry::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MisalignmentSettings {
    pub seed: u64,
    /// Fraction of the error bounds, in `[0, 1]`.
    pub magnitude: f64,
}

impl Default for MisalignmentSettings {
    fn default() -> Self {
        Self { seed: 1, magnitude: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnSection {
    pub samples: usize,
    pub train_fraction: f64,
    pub train: TrainConfig,
}

impl Default for AnnSection {
    fn default() -> Self {
        let d = AnnAlignConfig::default();
        Self {
            samples: d.samples,
            train_fraction: d.train_fraction,
            train: d.train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSection {
    pub n_random: usize,
    pub n_registration: usize,
    pub n_step2: usize,
}

impl Default for RegressionSection {
    fn default() -> Self {
        let d = RegressionConfig::default();
        Self {
            n_random: d.n_random,
            n_registration: d.n_registration,
            n_step2: d.n_step2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometrySource,
    pub noise_sigma: f64,
    /// Master seed: plant noise, sampling, splits, initialisation.
    pub seed: u64,
    pub misalignment: MisalignmentSettings,
    pub strategy: StrategySelector,
    pub ann: AnnSection,
    pub beamwalk: WalkConfig,
    pub regression: RegressionSection,
    /// Artifact directory; relative paths resolve against the config file.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: GeometrySource::default(),
            noise_sigma: DEFAULT_NOISE_SIGMA,
            seed: 0,
            misalignment: MisalignmentSettings::default(),
            strategy: StrategySelector::All,
            ann: AnnSection::default(),
            beamwalk: WalkConfig::default(),
            regression: RegressionSection::default(),
            out_dir: None,
        }
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))
}

impl ExperimentConfig {
    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        let mut cfg: Self = parse_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let GeometrySource::File(p) = &cfg.geometry {
            let full = base.join(p);
            let text = std::fs::read_to_string(&full).map_err(|e| CliError::read(&full, e))?;
            cfg.geometry = GeometrySource::Inline(parse_json(&text, &full)?);
        }
        if let Some(dir) = &cfg.out_dir {
            cfg.out_dir = Some(base.join(dir));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn geometry(&self) -> CliResult<SystemGeometry> {
        match &self.geometry {
            GeometrySource::Inline(g) => Ok(*g),
            GeometrySource::File(p) => Err(CliError::Config(format!(
                "geometry file {} was not resolved",
                p.display()
            ))),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let geometry = self.geometry()?;
        geometry.validate()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(CliError::Config("noise_sigma must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.misalignment.magnitude) {
            return Err(CliError::Config("misalignment.magnitude must lie in [0, 1]".into()));
        }
        self.ann_config().train.validate()?;
        if self.ann.samples == 0 || !(self.ann.train_fraction > 0.0 && self.ann.train_fraction < 1.0) {
            return Err(CliError::Config("ann.samples must be positive and ann.train_fraction in (0, 1)".into()));
        }
        self.beamwalk.validate(geometry.control_limit)?;
        self.regression_config().validate()?;
        Ok(())
    }

    pub fn ann_config(&self) -> AnnAlignConfig {
        AnnAlignConfig {
            samples: self.ann.samples,
            train_fraction: self.ann.train_fraction,
            train: self.ann.train,
            seed: self.seed,
        }
    }

    pub fn regression_config(&self) -> RegressionConfig {
        RegressionConfig {
            n_random: self.regression.n_random,
            n_registration: self.regression.n_registration,
            n_step2: self.regression.n_step2,
            seed: self.seed,
        }
    }
}
