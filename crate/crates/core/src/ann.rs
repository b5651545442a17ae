//! Reverse model as a small multilayer perceptron.
//!
//! The network maps aperture offsets `(δx1, δy1, δx2, δy2)` to mirror
//! controls. Hidden layers are rectified, the output layer is linear so the
//! model can predict negative controls. Inputs and targets are standardised
//! with statistics from the training set; the network itself only ever sees
//! standardised values.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{collect_random, filter_complete, split_train_test, Dataset};
use crate::error::{Error, Result};
use crate::optics::MirrorControls;
use crate::plant::Plant;
use crate::report::{AlignmentReport, Strategy};
use crate::rng::{stream_rng, Stream};
use crate::stats::{self, RSquared};

pub const INPUTS: usize = 4;
pub const OUTPUTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics per column. Constant columns get unit scale.
    pub fn fit<const N: usize>(rows: &[[f64; N]]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..N).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let std = (0..N)
            .map(|k| {
                let var = rows.iter().map(|r| (r[k] - mean[k]) * (r[k] - mean[k])).sum::<f64>() / n;
                let s = libm::sqrt(var);
                if s > 1e-300 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = (x[k] - self.mean[k]) / self.std[k];
        }
    }

    pub fn invert(&self, z: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = z[k] * self.std[k] + self.mean[k];
        }
    }
}

/// Dense feed-forward network with standardisation baked in.
///
/// `weights[l]` is row-major `layer_sizes[l + 1] × layer_sizes[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_norm: Standardizer,
    pub output_norm: Standardizer,
}

/// Gradients with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|v| v.fill(0.0));
    }
}

/// Per-layer activation buffers reused across samples.
struct Scratch {
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(sizes: &[usize]) -> Self {
        Self {
            activations: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

impl MlpModel {
    /// He-uniform weights (bound `√(6 / fan_in)`), zero biases.
    pub fn init(
        layer_sizes: &[usize],
        input_norm: Standardizer,
        output_norm: Standardizer,
        seed: u64,
    ) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output layers");
        let mut rng = stream_rng(seed, Stream::Initialization);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = libm::sqrt(6.0 / fan_in as f64);
            weights.push((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            input_norm,
            output_norm,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    fn layers(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass in standardised units; result in `scratch.activations[last]`.
    fn forward_into(&self, input: &[f64], scratch: &mut Scratch) {
        scratch.activations[0].copy_from_slice(input);
        let layers = self.layers();
        for l in 0..layers {
            let n_in = self.layer_sizes[l];
            let (done, rest) = scratch.activations.split_at_mut(l + 1);
            let x = &done[l][..n_in];
            let hidden = l + 1 < layers;
            let rows = self.weights[l].chunks_exact(n_in);
            for ((y, row), b) in rest[0].iter_mut().zip(rows).zip(&self.biases[l]) {
                let z = row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v);
                *y = if hidden { z.max(0.0) } else { z };
            }
        }
    }

    /// Standardised-space output for a standardised input.
    pub fn forward_standardized(&self, input: &[f64]) -> Vec<f64> {
        let mut scratch = Scratch::new(&self.layer_sizes);
        self.forward_into(input, &mut scratch);
        scratch.activations.pop().unwrap_or_default()
    }

    /// Mean squared error over the batch (averaged over samples and outputs)
    /// and its gradient, all in standardised units.
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, Gradients) {
        let mut grads = Gradients::zeros_like(self);
        let mut scratch = Scratch::new(&self.layer_sizes);
        let batch: Vec<usize> = (0..inputs.len()).collect();
        let loss = self.accumulate_batch(inputs, targets, &batch, &mut scratch, &mut grads);
        (loss, grads)
    }

    fn accumulate_batch(
        &self,
        xs: &[Vec<f64>],
        ys: &[Vec<f64>],
        batch: &[usize],
        scratch: &mut Scratch,
        grads: &mut Gradients,
    ) -> f64 {
        let n = batch.len();
        let last = self.layers();
        let out = self.layer_sizes[last];
        let scale = 2.0 / (n * out) as f64;
        let mut loss = 0.0;
        for &i in batch {
            self.forward_into(&xs[i], scratch);
            for ((d, y), t) in scratch.deltas[last].iter_mut().zip(&scratch.activations[last]).zip(&ys[i]) {
                let err = y - t;
                loss += err * err;
                *d = scale * err;
            }
            for l in (0..last).rev() {
                let n_in = self.layer_sizes[l];
                let (lower, upper) = scratch.deltas.split_at_mut(l + 1);
                let delta_out = &upper[0];
                let a_in = &scratch.activations[l][..n_in];
                for (gb, d) in grads.biases[l].iter_mut().zip(delta_out) {
                    *gb += d;
                }
                for (row, d) in grads.weights[l].chunks_exact_mut(n_in).zip(delta_out) {
                    for (g, a) in row.iter_mut().zip(a_in) {
                        *g += d * a;
                    }
                }
                if l > 0 {
                    let delta_in = &mut lower[l][..n_in];
                    delta_in.fill(0.0);
                    for (row, d) in self.weights[l].chunks_exact(n_in).zip(delta_out) {
                        for (acc, w) in delta_in.iter_mut().zip(row) {
                            *acc += w * d;
                        }
                    }
                    // ReLU derivative from the stored (post-activation) value
                    for (acc, a) in delta_in.iter_mut().zip(a_in) {
                        if *a <= 0.0 {
                            *acc = 0.0;
                        }
                    }
                }
            }
        }
        loss / (n * out) as f64
    }

    /// Controls predicted for a measurement, in physical units.
    pub fn predict(&self, measurement: [f64; INPUTS]) -> MirrorControls {
        let mut z = [0.0; INPUTS];
        self.input_norm.apply(&measurement, &mut z);
        let y = self.forward_standardized(&z);
        let mut c = [0.0; OUTPUTS];
        self.output_norm.invert(&y, &mut c);
        MirrorControls::from_array(c)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden: [usize; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10_000,
            batch_size: 10,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden: [10, 10],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers need at least one neuron".into()));
        }
        if !(self.learning_rate > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2))
        {
            return Err(Error::Config("invalid ADAM hyperparameters".into()));
        }
        Ok(())
    }
}

/// Adaptive moment estimation with bias correction.
struct Adam {
    cfg: TrainConfig,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(cfg: TrainConfig, params: usize) -> Self {
        Self {
            cfg,
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    fn update(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.step += 1;
        let c = &self.cfg;
        let bias1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bias2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        let params = model.weights.iter_mut().chain(model.biases.iter_mut());
        let grad_blocks = grads.weights.iter().chain(&grads.biases);
        let mut offset = 0;
        for (p_block, g_block) in params.zip(grad_blocks) {
            let len = p_block.len();
            let m_block = &mut self.m[offset..offset + len];
            let v_block = &mut self.v[offset..offset + len];
            offset += len;
            for (((p, g), m), v) in p_block.iter_mut().zip(g_block).zip(m_block).zip(v_block) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= c.learning_rate * m_hat / (libm::sqrt(v_hat) + c.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Training {
    pub model: MlpModel,
    /// Mean training MSE (standardised units) of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch ADAM on MSE, reshuffling every epoch. Returns the final-epoch
/// model.
pub fn train(train_set: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Training> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidDataset("training set is empty".into()));
    }
    let (inputs, targets) = train_set.regression_pairs()?;
    let input_norm = Standardizer::fit(&inputs);
    let output_norm = Standardizer::fit(&targets);
    let standardize = |rows: &[[f64; 4]], s: &Standardizer| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let mut z = vec![0.0; r.len()];
                s.apply(r, &mut z);
                z
            })
            .collect()
    };
    let xs = standardize(&inputs, &input_norm);
    let ys = standardize(&targets, &output_norm);

    let sizes = [INPUTS, cfg.hidden[0], cfg.hidden[1], OUTPUTS];
    let mut model = MlpModel::init(&sizes, input_norm, output_norm, seed);
    let mut adam = Adam::new(*cfg, model.parameter_count());
    let mut grads = Gradients::zeros_like(&model);
    let mut scratch = Scratch::new(&sizes);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = stream_rng(seed, Stream::Training);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            let loss = model.accumulate_batch(&xs, &ys, batch, &mut scratch, &mut grads);
            epoch_loss += loss * batch.len() as f64;
            adam.update(&mut model, &grads);
        }
        loss_trace.push(epoch_loss / xs.len() as f64);
    }
    if model.weights.iter().chain(&model.biases).flatten().any(|p| !p.is_finite()) {
        return Err(Error::InvalidDataset("training diverged to non-finite parameters".into()));
    }
    Ok(Training { model, loss_trace })
}

/// Per-control R² of the model's predictions on a complete dataset.
pub fn r_squared(model: &MlpModel, d: &Dataset) -> Result<RSquared> {
    if d.is_empty() {
        return Err(Error::InvalidDataset("R² needs at least one record".into()));
    }
    let (inputs, targets) = d.regression_pairs()?;
    let predicted: Vec<[f64; 4]> = inputs.iter().map(|m| model.predict(*m).to_array()).collect();
    stats::r_squared(&targets, &predicted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnAlignConfig {
    pub samples: usize,
    pub train_fraction: f64,
    pub train: TrainConfig,
    /// Drives collection, split, initialisation and batch order through
    /// separate streams.
    pub seed: u64,
}

impl Default for AnnAlignConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            train_fraction: 0.9,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnAlignment {
    pub report: AlignmentReport,
    pub model: MlpModel,
    pub collected: Dataset,
    pub train_size: usize,
    pub test_size: usize,
    pub train_r2: RSquared,
    /// `None` when the held-out split is too small to score.
    pub test_r2: Option<RSquared>,
    pub loss_trace: Vec<f64>,
}

/// Random sampling, reverse-model training, then one prediction at the goal
/// `(0, 0, 0, 0)` applied and confirmed with a single reading.
pub fn align<P: Plant + ?Sized>(plant: &mut P, cfg: &AnnAlignConfig) -> Result<AnnAlignment> {
    let start = plant.readings_used();
    let collected = collect_random(plant, cfg.samples, cfg.seed)?;
    let complete = filter_complete(&collected);
    let (train_set, test_set) = split_train_test(&complete, cfg.train_fraction, cfg.seed)?;
    let Training { model, loss_trace } = train(&train_set, &cfg.train, cfg.seed)?;
    let train_r2 = r_squared(&model, &train_set)?;
    let test_r2 = r_squared(&model, &test_set).ok();

    let limit = plant.geometry().control_limit;
    let solution = model.predict([0.0; 4]).clamped(limit);
    plant.set_controls(solution)?;
    let residuals = plant.measure()?;
    let report = AlignmentReport {
        strategy: Strategy::Ann,
        final_controls: solution,
        residuals,
        readings: plant.readings_used() - start,
        outer_iterations: 1,
        converged: residuals.is_complete(),
        transmitted: residuals.is_complete(),
    };
    Ok(AnnAlignment {
        report,
        model,
        collected,
        train_size: train_set.len(),
        test_size: test_set.len(),
        train_r2,
        test_r2,
        loss_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SampleRecord;
    use crate::optics::SystemGeometry;
    use crate::plant::{Measurement, SimulatedPlant};
    use alloc::string::String;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_record() -> Dataset {
        let controls = MirrorControls::from_array([1e-3, -2e-3, 5e-4, 3e-3]);
        let m = Measurement {
            a1: [1.0, -0.5],
            a2: Some([2.0, 0.25]),
        };
        Dataset {
            records: vec![SampleRecord::new(controls, m)],
            seed: 0,
            geometry_id: String::new(),
        }
    }

    #[test]
    fn memorises_single_point() {
        let d = single_record();
        let cfg = TrainConfig {
            epochs: 2000,
            ..Default::default()
        };
        let t = train(&d, &cfg, 1).unwrap();
        assert!(*t.loss_trace.last().unwrap() < 1e-10);
        let r = d.records[0];
        let p = t.model.predict(r.measurement.to_vector().unwrap());
        for (a, b) in p.to_array().iter().zip(r.controls.to_array()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn prediction_is_deterministic() {
        let t = train(&single_record(), &TrainConfig { epochs: 5, ..Default::default() }, 3).unwrap();
        let x = [0.3, 0.1, -2.0, 4.0];
        assert_eq!(t.model.predict(x), t.model.predict(x));
    }

    #[test]
    fn rejects_empty_and_incomplete() {
        let mut d = single_record();
        d.records.clear();
        assert!(train(&d, &TrainConfig::default(), 0).is_err());
        let mut d = single_record();
        d.records[0].measurement.a2 = None;
        d.records[0].complete = false;
        assert!(matches!(train(&d, &TrainConfig::default(), 0), Err(Error::InvalidDataset(_))));
        assert!(train(&single_record(), &TrainConfig { epochs: 0, ..Default::default() }, 0).is_err());
    }

    /// Relative error with an absolute floor for parameters whose gradient
    /// is (near) zero, e.g. behind an inactive ReLU.
    fn rel_err(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale < 1e-9 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    }

    fn gradient_check(sizes: &[usize], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_in, n_out) = (sizes[0], *sizes.last().unwrap());
        let id = |n: usize| Standardizer {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        };
        let mut model = MlpModel::init(sizes, id(n_in), id(n_out), seed);
        for b in model.biases.iter_mut().flatten() {
            *b = rng.random_range(-0.5..0.5);
        }
        let xs: Vec<Vec<f64>> = (0..7).map(|_| (0..n_in).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..7).map(|_| (0..n_out).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let (_, grads) = model.loss_and_gradient(&xs, &ys);
        let analytic: Vec<f64> = grads.weights.iter().chain(&grads.biases).flatten().copied().collect();
        let h = 1e-6;
        assert_eq!(analytic.len(), model.parameter_count());
        for (i, &expected) in analytic.iter().enumerate() {
            let original = *model.params_mut().nth(i).unwrap();
            *model.params_mut().nth(i).unwrap() = original + h;
            let plus = model.loss_and_gradient(&xs, &ys).0;
            *model.params_mut().nth(i).unwrap() = original - h;
            let minus = model.loss_and_gradient(&xs, &ys).0;
            *model.params_mut().nth(i).unwrap() = original;
            let numeric = (plus - minus) / (2.0 * h);
            assert!(
                rel_err(expected, numeric) <= 1e-5,
                "param {i}: analytic {expected} numeric {numeric}"
            );
        }
    }

    #[test]
    fn backprop_matches_central_differences() {
        gradient_check(&[4, 10, 10, 4], 1);
        gradient_check(&[4, 10, 10, 4], 2);
        gradient_check(&[3, 5, 2], 3);
        gradient_check(&[2, 1], 4);
    }

    #[test]
    fn prediction_ignores_record_order() {
        let mut plant = SimulatedPlant::new(SystemGeometry::default(), 0.0, 1).unwrap();
        let d = filter_complete(&collect_random(&mut plant, 60, 2).unwrap());
        let cfg = TrainConfig { epochs: 20, ..Default::default() };
        let model = train(&d, &cfg, 4).unwrap().model;
        let forward: Vec<_> = d.records.iter().map(|r| model.predict(r.measurement.to_vector().unwrap())).collect();
        let backward: Vec<_> = d.records.iter().rev().map(|r| model.predict(r.measurement.to_vector().unwrap())).collect();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn smoothed_loss_decreases() {
        let mut plant = SimulatedPlant::new(SystemGeometry::default(), 0.01, 5).unwrap();
        let d = filter_complete(&collect_random(&mut plant, 400, 6).unwrap());
        let cfg = TrainConfig { epochs: 2000, ..Default::default() };
        let t = train(&d, &cfg, 7).unwrap();
        let windows: Vec<f64> = t.loss_trace.chunks(100).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
        // strictly downhill until the noise floor, then jitter within a band
        let floor = windows.iter().copied().fold(f64::INFINITY, f64::min);
        for pair in windows.windows(2) {
            let descending = pair[0] > 2.0 * floor;
            if descending {
                assert!(pair[1] <= pair[0], "{windows:?}");
            } else {
                assert!(pair[1] <= 1.25 * floor, "{windows:?}");
            }
        }
    }

    #[test]
    fn default_pipeline_aligns_misaligned_plant() {
        let geometry = SystemGeometry::default();
        let mut plant = SimulatedPlant::new(geometry, 0.0, 11).unwrap();
        plant.misalign(12, 1.0).unwrap();
        let out = align(&mut plant, &AnnAlignConfig { seed: 13, ..Default::default() }).unwrap();
        assert_eq!(out.report.readings, 1001);
        assert_eq!(out.train_size + out.test_size, out.collected.complete_count());
        assert!(out.train_r2.mean >= 0.99, "{:?}", out.train_r2);
        assert!(out.test_r2.unwrap().mean >= 0.95);
        assert!(out.report.transmitted);
        let r1 = out.report.residual_radius(crate::plant::Aperture::A1).unwrap();
        let r2 = out.report.residual_radius(crate::plant::Aperture::A2).unwrap();
        std::println!("{} {} {r1} {r2} {:?}", out.train_size, out.test_size, out.train_r2);
        assert!(r1 <= 0.05 * geometry.aperture_radius_1 && r2 <= 0.05 * geometry.aperture_radius_2);
    }
}
