//! Adam training loop, finetuning onto a larger vocabulary, and sweeps.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{bound_constant, per_layer_grad_norms, LayerNorms, BOUND_TOLERANCE};
use crate::error::TrainError;
use crate::gradients::{Backprop, BatchStats, GradientSet, TrainMask};
use crate::model::{evaluate, fresh_token_rows, init_params, HyperParams, Layer, ModelParams};
use crate::numerics::{Matrix, NormVariant};
use crate::rng::{stream_rng, Stream};
use crate::snapshot::{record_snapshot, write_run_log, RunHeader, RunLog};
use crate::task::{build_probe_set, default_suffixes, sample_dataset, sample_from_stream, Dataset};

/// Which gradient the per-layer norms in the metrics come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradLog {
    /// The whole training set, all tensors, after the epoch's last update.
    #[default]
    FullBatchNorms,
    /// The last mini-batch gradient of the epoch (masked tensors read zero).
    MinibatchNorms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hyper: HyperParams,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier on `lr` for `W` and `U`.
    pub mlp_lr_discount: f64,
    pub betas: [f64; 2],
    pub adam_eps: f64,
    pub mask: TrainMask,
    pub seed: u64,
    /// Epochs between snapshots; 0 keeps only the first and last.
    pub snapshot_every: usize,
    pub grad_log: GradLog,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: HyperParams::default(),
            n_train: 2048,
            n_test: 2048,
            epochs: 1000,
            batch_size: 256,
            lr: 1e-2,
            mlp_lr_discount: 1.0,
            betas: [0.9, 0.999],
            adam_eps: 1e-8,
            mask: TrainMask::all(),
            seed: 0,
            snapshot_every: 10,
            grad_log: GradLog::FullBatchNorms,
        }
    }
}

impl TrainConfig {
    /// Embeddings frozen, full-batch norms, bound asserted every epoch.
    pub fn theory_mode(mut self) -> Self {
        self.mask = TrainMask::theory();
        self.grad_log = GradLog::FullBatchNorms;
        self
    }

    /// Whether [`train`] checks the gradient bound at every logged epoch.
    pub fn asserts_bound(&self) -> bool {
        self.mask == TrainMask::theory()
            && self.grad_log == GradLog::FullBatchNorms
            && self.hyper.norm == NormVariant::Standard
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.hyper.validate()?;
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive");
        }
        if self.batch_size > self.n_train {
            return bad("batch_size cannot exceed n_train");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.mlp_lr_discount >= 0.0 && self.mlp_lr_discount.is_finite()) {
            return bad("mlp_lr_discount must be non-negative");
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }

    fn lr_for(&self, layer: Layer) -> f64 {
        match layer {
            Layer::Receptors | Layer::Assemblers => self.lr * self.mlp_lr_discount,
            _ => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: ModelParams,
    pub second: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self { first: params.zeros_like(), second: params.zeros_like(), step: 0 }
    }
}

/// One bias-corrected Adam step on every tensor in `config.mask`.
pub fn adam_update(state: &mut AdamState, params: &mut ModelParams, grads: &GradientSet, config: &TrainConfig) {
    state.step += 1;
    let [b1, b2] = config.betas;
    let t = state.step as f64;
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    for layer in config.mask.layers() {
        let lr = config.lr_for(layer);
        let g = grads.tensor(layer);
        let m = state.first.tensor_mut(layer);
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = state.second.tensor_mut(layer);
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let (m, v) = (state.first.tensor(layer), state.second.tensor(layer));
        for ((p, mi), vi) in params.tensor_mut(layer).iter_mut().zip(m).zip(v) {
            *p -= lr * (mi / c1) / ((vi / c2).sqrt() + config.adam_eps);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    #[serde(rename = "grad_E")]
    pub grad_token_embedding: f64,
    #[serde(rename = "grad_P")]
    pub grad_position_embedding: f64,
    #[serde(rename = "grad_q")]
    pub grad_query: f64,
    #[serde(rename = "grad_V")]
    pub grad_value: f64,
    #[serde(rename = "grad_W")]
    pub grad_receptors: f64,
    #[serde(rename = "grad_U")]
    pub grad_assemblers: f64,
    /// Mean `1 − μ_y` on the training set.
    pub error_term: f64,
    /// `B̃ √𝓔`
    pub bound: f64,
}

impl MetricsRow {
    pub fn grad_norms(&self) -> LayerNorms {
        LayerNorms {
            token_embedding: self.grad_token_embedding,
            position_embedding: self.grad_position_embedding,
            query: self.grad_query,
            value: self.grad_value,
            receptors: self.grad_receptors,
            assemblers: self.grad_assemblers,
        }
    }

    fn set_grad_norms(&mut self, n: &LayerNorms) {
        self.grad_token_embedding = n.token_embedding;
        self.grad_position_embedding = n.position_embedding;
        self.grad_query = n.query;
        self.grad_value = n.value;
        self.grad_receptors = n.receptors;
        self.grad_assemblers = n.assemblers;
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], w: W) -> Result<(), TrainError> {
    let mut writer = csv::Writer::from_writer(w);
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<MetricsRow>, TrainError> {
    let mut reader = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub struct RunArtifacts {
    pub metrics: Vec<MetricsRow>,
    pub run_log: RunLog,
    pub params: ModelParams,
    pub config: TrainConfig,
}

impl RunArtifacts {
    pub fn final_metrics(&self) -> &MetricsRow {
        self.metrics.last().expect("a run logs at least epoch 0")
    }

    /// Writes `metrics.csv` and `run.jsonl` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        write_metrics_csv(&self.metrics, std::fs::File::create(dir.join(METRICS_FILE))?)?;
        write_run_log(&dir.join(RUN_LOG_FILE), &self.run_log)?;
        Ok(())
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_LOG_FILE: &str = "run.jsonl";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Trains from a seeded initialization.
pub fn train(config: &TrainConfig) -> Result<RunArtifacts, TrainError> {
    config.validate()?;
    let params = init_params(&config.hyper, config.seed)?;
    train_from(config, params)
}

/// Trains starting from `params`, whose shapes must match `config.hyper`.
pub fn train_from(config: &TrainConfig, params: ModelParams) -> Result<RunArtifacts, TrainError> {
    config.validate()?;
    params.check_shapes(&config.hyper)?;
    let (train, test) = datasets(config)?;
    Trainer::new(config, params, train, test)?.run()
}

/// The training and test sets a run with `config` uses.
pub fn datasets(config: &TrainConfig) -> Result<(Dataset, Dataset), TrainError> {
    let spec = config.hyper.task;
    let train = sample_dataset(config.n_train, &spec, config.seed)?;
    let test = sample_from_stream(config.n_test, &spec, config.seed, Stream::TestData)?;
    Ok((train, test))
}

/// Trains on caller-provided data.
pub fn train_on(
    config: &TrainConfig,
    params: ModelParams,
    train: Dataset,
    test: Dataset,
) -> Result<RunArtifacts, TrainError> {
    config.validate()?;
    params.check_shapes(&config.hyper)?;
    Trainer::new(config, params, train, test)?.run()
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    params: ModelParams,
    train: Dataset,
    test: Dataset,
    engine: Backprop,
    step_grads: GradientSet,
    full_grads: GradientSet,
    adam: AdamState,
    metrics: Vec<MetricsRow>,
    log: RunLog,
}

impl<'a> Trainer<'a> {
    fn new(config: &'a TrainConfig, params: ModelParams, train: Dataset, test: Dataset) -> Result<Self, TrainError> {
        if train.is_empty() || test.is_empty() {
            return Err(TrainError::InvalidConfig("training and test sets must be nonempty".into()));
        }
        let spec = config.hyper.task;
        let probes = build_probe_set(&spec, &default_suffixes(&spec))?;
        Ok(Self {
            engine: Backprop::new(&params, config.hyper.norm),
            step_grads: GradientSet::zeros(&params, config.mask),
            full_grads: GradientSet::zeros(&params, TrainMask::all()),
            adam: AdamState::new(&params),
            metrics: Vec::with_capacity(config.epochs + 1),
            log: RunLog::new(RunHeader::new(config.clone(), probes)),
            config,
            params,
            train,
            test,
        })
    }

    fn run(mut self) -> Result<RunArtifacts, TrainError> {
        let n = self.train.len();
        let batch = if self.config.batch_size == 0 { n } else { self.config.batch_size };
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle = stream_rng(self.config.seed, Stream::Shuffle);

        self.log_epoch(0, true)?;
        for epoch in 1..=self.config.epochs {
            order.shuffle(&mut shuffle);
            for (step, chunk) in order.chunks(batch).enumerate() {
                let stats =
                    self.engine.batch_gradient(&self.params, &self.train, chunk, self.config.mask, &mut self.step_grads);
                if !stats.loss.is_finite() {
                    return Err(TrainError::NonFinite { epoch, step });
                }
                adam_update(&mut self.adam, &mut self.params, &self.step_grads, self.config);
            }
            if !self.params.is_finite() {
                return Err(TrainError::NonFinite { epoch, step: n.div_ceil(batch) });
            }
            self.log_epoch(epoch, false)?;
        }
        Ok(RunArtifacts { metrics: self.metrics, run_log: self.log, params: self.params, config: self.config.clone() })
    }

    /// Appends the metrics row for `epoch`; the first row always uses the full batch.
    fn log_epoch(&mut self, epoch: usize, initial: bool) -> Result<(), TrainError> {
        let config = self.config;
        let norm = config.hyper.norm;
        let (stats, norms) = if initial || config.grad_log == GradLog::FullBatchNorms {
            let all: Vec<usize> = (0..self.train.len()).collect();
            let stats =
                self.engine.batch_gradient(&self.params, &self.train, &all, TrainMask::all(), &mut self.full_grads);
            (stats, per_layer_grad_norms(&self.full_grads))
        } else {
            let e = evaluate(&self.params, &self.train, norm)?;
            let stats = BatchStats { loss: e.loss, accuracy: e.accuracy, error_term: e.error_term };
            (stats, per_layer_grad_norms(&self.step_grads))
        };
        if !stats.loss.is_finite() {
            return Err(TrainError::NonFinite { epoch, step: 0 });
        }
        let test = evaluate(&self.params, &self.test, norm)?;
        let bound = bound_constant(&self.params)?.b_tilde * stats.error_term.sqrt();

        let mut row = MetricsRow {
            epoch,
            train_loss: stats.loss,
            test_loss: test.loss,
            train_acc: stats.accuracy,
            test_acc: test.accuracy,
            error_term: stats.error_term,
            bound,
            ..MetricsRow::default()
        };
        row.set_grad_norms(&norms);

        if config.asserts_bound() {
            let grad_norm = norms.combined(&Layer::ATTENTION_AND_MLP);
            if grad_norm > bound + BOUND_TOLERANCE {
                return Err(TrainError::BoundViolation { epoch, grad_norm, bound });
            }
        }

        let snapshot_due = epoch == 0
            || epoch == config.epochs
            || (config.snapshot_every > 0 && epoch % config.snapshot_every == 0);
        if snapshot_due {
            let snap = record_snapshot(epoch, &self.params, &self.log.header.probes, &row, norm);
            self.log.push(snap)?;
        }
        self.metrics.push(row);
        Ok(())
    }
}

/// Appends fresh token rows to a trained model and trains on the larger vocabulary.
///
/// `config.hyper` describes the new task; its vocabulary is set to `new_p`.
pub fn finetune(pretrained: &ModelParams, new_p: usize, config: &TrainConfig) -> Result<RunArtifacts, TrainError> {
    let old = pretrained.vocab();
    if new_p <= old {
        return Err(TrainError::InvalidExpansion { old, new: new_p });
    }
    let mut config = config.clone();
    config.hyper.task.vocab = new_p;
    config.validate()?;
    let params = expand_vocabulary(pretrained, new_p, config.seed);
    train_from(&config, params)
}

/// `pretrained` with `new_p − p` rows appended to `E`; other tensors are copied.
pub fn expand_vocabulary(pretrained: &ModelParams, new_p: usize, seed: u64) -> ModelParams {
    let d = pretrained.embed_dim();
    let extra = new_p.saturating_sub(pretrained.vocab());
    let fresh = fresh_token_rows(extra, d, seed);
    let mut rows = pretrained.token_embedding.to_rows();
    rows.extend(fresh.to_rows());
    let mut params = pretrained.clone();
    params.token_embedding = Matrix::from_rows(&rows).expect("rows share the embedding width");
    params
}

/// Values swept per axis; an empty axis keeps the base config's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub batch_size: Vec<usize>,
    pub h: Vec<usize>,
    pub lr: Vec<f64>,
    pub mlp_lr_discount: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub batch_size: usize,
    pub h: usize,
    pub lr: f64,
    pub mlp_lr_discount: f64,
}

impl SweepCell {
    pub fn apply(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut c = base.clone();
        c.batch_size = self.batch_size;
        c.hyper.hidden = self.h;
        c.lr = self.lr;
        c.mlp_lr_discount = self.mlp_lr_discount;
        c.seed = seed;
        c
    }
}

impl SweepGrid {
    /// Cartesian product in (batch_size, h, lr, mlp_lr_discount) order.
    pub fn cells(&self, base: &TrainConfig) -> Vec<SweepCell> {
        fn or<T: Copy>(axis: &[T], default: T) -> Vec<T> {
            if axis.is_empty() {
                vec![default]
            } else {
                axis.to_vec()
            }
        }
        let mut out = Vec::new();
        for &batch_size in &or(&self.batch_size, base.batch_size) {
            for &h in &or(&self.h, base.hyper.hidden) {
                for &lr in &or(&self.lr, base.lr) {
                    for &mlp_lr_discount in &or(&self.mlp_lr_discount, base.mlp_lr_discount) {
                        out.push(SweepCell { batch_size, h, lr, mlp_lr_discount });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    /// Final test accuracy per seed, `None` where the run failed.
    pub accuracies: Vec<Option<f64>>,
    pub errors: Vec<Option<String>>,
    pub mean: f64,
    /// Sample standard deviation over the successful seeds.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

/// One [`train`] per cell and seed, on `workers` threads (0 = rayon default).
/// Results are ordered by cell then seed regardless of scheduling.
pub fn hyper_sweep(base: &TrainConfig, grid: &SweepGrid, seeds: &[u64], workers: usize) -> Result<SweepTable, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::InvalidConfig("sweep needs at least one seed".into()));
    }
    let cells = grid.cells(base);
    let jobs: Vec<(usize, u64)> = cells.iter().enumerate().flat_map(|(c, _)| seeds.iter().map(move |&s| (c, s))).collect();
    let run_job = |&(c, seed): &(usize, u64)| -> Result<f64, String> {
        let config = cells[c].apply(base, seed);
        train(&config).map(|a| a.final_metrics().test_acc).map_err(|e| e.to_string())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    let results: Vec<Result<f64, String>> = pool.install(|| jobs.par_iter().map(run_job).collect());

    let rows = cells
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(cell, res)| {
            let accuracies: Vec<Option<f64>> = res.iter().map(|r| r.as_ref().ok().copied()).collect();
            let errors = res.iter().map(|r| r.as_ref().err().cloned()).collect();
            let ok: Vec<f64> = accuracies.iter().flatten().copied().collect();
            let (mean, std) = mean_std(&ok);
            SweepRow { cell: *cell, accuracies, errors, mean, std }
        })
        .collect();
    Ok(SweepTable { seeds: seeds.to_vec(), rows })
}

/// Mean and sample standard deviation; NaN mean for no values, zero spread for one.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `batch_size,h,lr,mlp_lr_discount,seed_<s>…,mean,std`; failed runs leave their cell empty.
pub fn write_sweep_csv<W: Write>(table: &SweepTable, w: W) -> Result<(), TrainError> {
    let mut writer = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["batch_size", "h", "lr", "mlp_lr_discount"].map(String::from).to_vec();
    header.extend(table.seeds.iter().map(|s| format!("seed_{s}")));
    header.extend(["mean", "std"].map(String::from));
    writer.write_record(&header)?;
    for row in &table.rows {
        let c = &row.cell;
        let mut rec = vec![c.batch_size.to_string(), c.h.to_string(), c.lr.to_string(), c.mlp_lr_discount.to_string()];
        rec.extend(row.accuracies.iter().map(|a| a.map(|x| x.to_string()).unwrap_or_default()));
        rec.push(row.mean.to_string());
        rec.push(row.std.to_string());
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(seed: u64) -> TrainConfig {
        TrainConfig { n_train: 64, n_test: 32, epochs: 3, batch_size: 16, seed, snapshot_every: 2, ..TrainConfig::default() }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 4096, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let config = TrainConfig::default();
        let mut params = init_params(&config.hyper, 0).unwrap();
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let zero = GradientSet::zeros(&params, TrainMask::all());
        adam_update(&mut state, &mut params, &zero, &config);
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_is_sign_like() {
        let config = TrainConfig::default();
        let mut params = init_params(&config.hyper, 0).unwrap();
        let before = params.clone();
        let mut g = GradientSet::zeros(&params, TrainMask::all());
        g.tensor_mut(Layer::Query).copy_from_slice(&[0.3, -2e-3]);
        let mut state = AdamState::new(&params);
        adam_update(&mut state, &mut params, &g, &config);
        // m̂ = g and v̂ = g², so the step is lr · g / (|g| + eps)
        for (i, gi) in [0.3f64, -2e-3].iter().enumerate() {
            let expected = before.query[i] - 1e-2 * gi / (gi.abs() + 1e-8);
            assert!((params.query[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_discount_scales_mlp_steps_only() {
        let config = TrainConfig { mlp_lr_discount: 0.5, ..TrainConfig::default() };
        let mut params = init_params(&config.hyper, 0).unwrap();
        let before = params.clone();
        let mut g = GradientSet::zeros(&params, TrainMask::all());
        g.tensor_mut(Layer::Receptors)[0] = 1.0;
        g.tensor_mut(Layer::Value)[0] = 1.0;
        let mut state = AdamState::new(&params);
        adam_update(&mut state, &mut params, &g, &config);
        let dw = before.receptors.as_slice()[0] - params.receptors.as_slice()[0];
        let dv = before.value.as_slice()[0] - params.value.as_slice()[0];
        assert!((dw - 0.5 * dv).abs() < 1e-15);
    }

    #[test]
    fn frozen_tensors_never_move() {
        let config = TrainConfig { epochs: 20, ..quick(1) }.theory_mode();
        let start = init_params(&config.hyper, 1).unwrap();
        let run = train(&config).unwrap();
        assert_eq!(run.params.token_embedding, start.token_embedding);
        assert_eq!(run.params.position_embedding, start.position_embedding);
        assert_ne!(run.params.query, start.query);
    }

    #[test]
    fn runs_are_deterministic() {
        let a = train(&quick(4)).unwrap();
        let b = train(&quick(4)).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.run_log, b.run_log);
        let epochs: Vec<usize> = a.run_log.snapshots().iter().map(|s| s.epoch).collect();
        assert_eq!(epochs, vec![0, 2, 3]);
        assert_eq!(a.metrics.len(), 4);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let run = train(&quick(2)).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&run.metrics, &mut buf).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with("epoch,train_loss,test_loss,train_acc,test_acc,grad_E,grad_P,grad_q,grad_V,grad_W,grad_U,error_term,bound\n"));
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), run.metrics);
    }

    #[test]
    fn minibatch_norms_follow_the_mask() {
        let config = TrainConfig { grad_log: GradLog::MinibatchNorms, mask: TrainMask::theory(), ..quick(3) };
        let run = train(&config).unwrap();
        assert!(run.metrics[1..].iter().all(|r| r.grad_token_embedding == 0.0 && r.grad_position_embedding == 0.0));
        assert!(run.metrics[0].grad_token_embedding > 0.0);
    }

    #[test]
    fn finetune_expands_vocabulary() {
        let base = train(&quick(5)).unwrap();
        let expanded = expand_vocabulary(&base.params, 3, 5);
        assert_eq!(expanded.vocab(), 3);
        assert_eq!(expanded.token_embedding.row(0), base.params.token_embedding.row(0));
        assert_eq!(expanded.token_embedding.row(1), base.params.token_embedding.row(1));
        assert_eq!(expanded.value, base.params.value);
        let run = finetune(&base.params, 3, &quick(5)).unwrap();
        assert_eq!(run.run_log.snapshots()[0].params, expanded);
        assert_eq!(run.config.hyper.task.vocab, 3);
        assert!(matches!(finetune(&base.params, 2, &quick(5)), Err(TrainError::InvalidExpansion { old: 2, new: 2 })));
    }

    #[test]
    fn sweep_cells_share_initialization() {
        let base = quick(0);
        let grid = SweepGrid { lr: vec![1e-2, 1e-3], ..SweepGrid::default() };
        let cells = grid.cells(&base);
        assert_eq!(cells.len(), 2);
        let a = init_params(&cells[0].apply(&base, 7).hyper, 7).unwrap();
        let b = init_params(&cells[1].apply(&base, 7).hyper, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_cell_sweep_matches_train() {
        let base = quick(0);
        let table = hyper_sweep(&base, &SweepGrid::default(), &[9], 1).unwrap();
        let direct = train(&TrainConfig { seed: 9, ..base.clone() }).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].accuracies, vec![Some(direct.final_metrics().test_acc)]);
        let parallel = hyper_sweep(&base, &SweepGrid { lr: vec![1e-2, 3e-3], ..SweepGrid::default() }, &[1, 2], 2).unwrap();
        let serial = hyper_sweep(&base, &SweepGrid { lr: vec![1e-2, 3e-3], ..SweepGrid::default() }, &[1, 2], 1).unwrap();
        assert_eq!(parallel, serial);
    }

    #[test]
    fn failing_cells_do_not_stop_the_sweep() {
        let base = quick(0);
        let grid = SweepGrid { batch_size: vec![16, 1000], ..SweepGrid::default() };
        let table = hyper_sweep(&base, &grid, &[0], 1).unwrap();
        assert!(table.rows[0].accuracies[0].is_some());
        assert!(table.rows[1].accuracies[0].is_none() && table.rows[1].errors[0].is_some());
        let mut buf = Vec::new();
        write_sweep_csv(&table, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("batch_size,h,lr,mlp_lr_discount,seed_0,mean,std\n"));
    }
}
