//! Quantities computed on a model or a finished run: gradient norms, the
//! error term and its gradient bound, activation sparsity, cluster structure
//! of the sequence embeddings and loss drops/spikes.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{DiagnosticsError, NumericsError};
use crate::gradients::{closed_form_loss_gradient, GradientSet};
use crate::model::{forward, forward_into, ForwardTrace, Layer, ModelParams};
use crate::numerics::{distance, operator_norm, tv_distance, NormVariant};
use crate::task::{Dataset, PrefixClass, ProbeSequence};
use crate::training::MetricsRow;

/// Flattened Euclidean norm per tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    #[serde(rename = "E")]
    pub token_embedding: f64,
    #[serde(rename = "P")]
    pub position_embedding: f64,
    #[serde(rename = "q")]
    pub query: f64,
    #[serde(rename = "V")]
    pub value: f64,
    #[serde(rename = "W")]
    pub receptors: f64,
    #[serde(rename = "U")]
    pub assemblers: f64,
}

impl LayerNorms {
    pub fn get(&self, layer: Layer) -> f64 {
        match layer {
            Layer::TokenEmbedding => self.token_embedding,
            Layer::PositionEmbedding => self.position_embedding,
            Layer::Query => self.query,
            Layer::Value => self.value,
            Layer::Receptors => self.receptors,
            Layer::Assemblers => self.assemblers,
        }
    }

    fn slot(&mut self, layer: Layer) -> &mut f64 {
        match layer {
            Layer::TokenEmbedding => &mut self.token_embedding,
            Layer::PositionEmbedding => &mut self.position_embedding,
            Layer::Query => &mut self.query,
            Layer::Value => &mut self.value,
            Layer::Receptors => &mut self.receptors,
            Layer::Assemblers => &mut self.assemblers,
        }
    }

    /// Norm of the concatenation over `layers`.
    pub fn combined(&self, layers: &[Layer]) -> f64 {
        layers.iter().map(|&l| self.get(l).powi(2)).sum::<f64>().sqrt()
    }
}

pub fn per_layer_grad_norms(grads: &GradientSet) -> LayerNorms {
    let mut out = LayerNorms::default();
    for layer in Layer::ALL {
        *out.slot(layer) = grads.layer_norm(layer);
    }
    out
}

/// Mean total-variation distance between `μ(x)` and the one-hot target.
pub fn classification_error(params: &ModelParams, data: &Dataset, norm: NormVariant) -> Result<f64, DiagnosticsError> {
    if data.is_empty() {
        return Err(DiagnosticsError::EmptyDataset);
    }
    let mut trace = ForwardTrace::for_params(params);
    let mut target = vec![0.0; params.vocab()];
    let mut total = 0.0;
    for (x, y) in data.iter() {
        forward_into(params, x, norm, &mut trace);
        target.iter_mut().for_each(|t| *t = 0.0);
        target[y] = 1.0;
        total += tv_distance(&trace.mu, &target)?;
    }
    Ok(total / data.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpNorms {
    #[serde(rename = "V")]
    pub value: f64,
    #[serde(rename = "W")]
    pub receptors: f64,
    #[serde(rename = "U")]
    pub assemblers: f64,
}

impl OpNorms {
    pub fn of(params: &ModelParams) -> Result<Self, NumericsError> {
        Ok(Self {
            value: operator_norm(&params.value)?,
            receptors: operator_norm(&params.receptors)?,
            assemblers: operator_norm(&params.assemblers)?,
        })
    }
}

/// `B̃` for embedding dimension `d`, sequence length `n`, token-embedding bound `b`.
///
/// `B̃² = 4dB²[(2n√d‖V‖(1 + √(2/π)‖W‖²‖U‖))² + d(1 + 2‖W‖‖U‖)² + 4‖U‖² + ‖W‖²]`
pub fn b_tilde_formula(d: usize, n: usize, b: f64, ops: &OpNorms) -> f64 {
    let (d, n) = (d as f64, n as f64);
    let (v, w, u) = (ops.value, ops.receptors, ops.assemblers);
    let attention = 2.0 * n * d.sqrt() * v * (1.0 + (2.0 / PI).sqrt() * w * w * u);
    let value = d * (1.0 + 2.0 * w * u).powi(2);
    (4.0 * d * b * b * (attention * attention + value + 4.0 * u * u + w * w)).sqrt()
}

/// The constant part of the bound for the current parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstant {
    /// Largest absolute entry of `E`.
    #[serde(rename = "B")]
    pub b: f64,
    pub op_norms: OpNorms,
    pub b_tilde: f64,
}

pub fn bound_constant(params: &ModelParams) -> Result<BoundConstant, NumericsError> {
    let b = params.token_embedding.max_abs();
    let op_norms = OpNorms::of(params)?;
    let b_tilde = b_tilde_formula(params.embed_dim(), params.seq_len(), b, &op_norms);
    Ok(BoundConstant { b, op_norms, b_tilde })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `‖∇ℒ‖` over `q, V, W, U`.
    pub grad_norm: f64,
    pub error_term: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub op_norms: OpNorms,
    pub b_tilde: f64,
    /// `B̃ √𝓔 − ‖∇ℒ‖`
    pub slack: f64,
}

/// Absolute slack allowed when asserting the bound.
pub const BOUND_TOLERANCE: f64 = 1e-9;

impl BoundReport {
    pub fn bound(&self) -> f64 {
        self.b_tilde * self.error_term.sqrt()
    }

    pub fn holds(&self) -> bool {
        self.grad_norm <= self.bound() + BOUND_TOLERANCE
    }
}

/// Gradient norm and bound on the same data, with the standard normalization.
pub fn gradient_bound(params: &ModelParams, data: &Dataset) -> Result<BoundReport, DiagnosticsError> {
    if data.is_empty() {
        return Err(DiagnosticsError::EmptyDataset);
    }
    let constant = bound_constant(params)?;
    let error_term = classification_error(params, data, NormVariant::Standard)?;
    let grad_norm = closed_form_loss_gradient(params, data)?.norm_over(&Layer::ATTENTION_AND_MLP);
    Ok(BoundReport {
        grad_norm,
        error_term,
        b: constant.b,
        op_norms: constant.op_norms,
        b_tilde: constant.b_tilde,
        slack: constant.b_tilde * error_term.sqrt() - grad_norm,
    })
}

/// Fraction of MLP activations `σ(W ξ̄)` with absolute value below `epsilon`.
pub fn activation_sparsity(
    params: &ModelParams,
    data: &Dataset,
    epsilon: f64,
    norm: NormVariant,
) -> Result<f64, DiagnosticsError> {
    Ok(sparsity_curve(params, data, &[epsilon], norm)?[0].1)
}

/// Sparsity at each threshold, from one pass over the data.
pub fn sparsity_curve(
    params: &ModelParams,
    data: &Dataset,
    epsilons: &[f64],
    norm: NormVariant,
) -> Result<Vec<(f64, f64)>, DiagnosticsError> {
    if data.is_empty() {
        return Err(DiagnosticsError::EmptyDataset);
    }
    let mut trace = ForwardTrace::for_params(params);
    let mut magnitudes = Vec::with_capacity(data.len() * params.hidden());
    for (x, _) in data.iter() {
        forward_into(params, x, norm, &mut trace);
        magnitudes.extend(trace.act.iter().map(|a| a.abs()));
    }
    magnitudes.sort_by(f64::total_cmp);
    let total = magnitudes.len() as f64;
    Ok(epsilons
        .iter()
        .map(|&eps| {
            let below = magnitudes.partition_point(|&m| m < eps);
            (eps, below as f64 / total)
        })
        .collect())
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

/// Thresholds 1e-5 … 1e2, three points per decade.
pub fn default_sparsity_grid() -> Vec<f64> {
    log_grid(1e-5, 1e2, 22)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCentroid {
    pub class: PrefixClass,
    pub centroid: Vec<f64>,
    pub members: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub centroids: Vec<ClassCentroid>,
    pub within_max: f64,
    pub within_mean: f64,
    pub between_min: f64,
    pub between_mean: f64,
    pub detected_clusters: usize,
    /// Single-linkage merge distance used for `detected_clusters`.
    pub threshold: f64,
}

/// Merge distance as a fraction of the largest pairwise distance.
pub const DEFAULT_LINKAGE_FRACTION: f64 = 0.1;

pub fn cluster_report(
    params: &ModelParams,
    probes: &[ProbeSequence],
    norm: NormVariant,
) -> Result<ClusterReport, DiagnosticsError> {
    cluster_report_with(params, probes, norm, DEFAULT_LINKAGE_FRACTION)
}

pub fn cluster_report_with(
    params: &ModelParams,
    probes: &[ProbeSequence],
    norm: NormVariant,
    linkage_fraction: f64,
) -> Result<ClusterReport, DiagnosticsError> {
    if probes.is_empty() {
        return Err(DiagnosticsError::EmptyProbeSet);
    }
    let points: Vec<Vec<f64>> = probes.iter().map(|p| forward(params, &p.tokens, norm).xi).collect();

    let mut groups: BTreeMap<&PrefixClass, Vec<usize>> = BTreeMap::new();
    for (i, p) in probes.iter().enumerate() {
        groups.entry(&p.class).or_default().push(i);
    }

    let (mut within_max, mut within_sum, mut within_pairs) = (0.0_f64, 0.0, 0usize);
    let mut centroids = Vec::with_capacity(groups.len());
    for (class, members) in &groups {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                let dist = distance(&points[i], &points[j]);
                within_max = within_max.max(dist);
                within_sum += dist;
                within_pairs += 1;
            }
        }
        let mut centroid = vec![0.0; params.embed_dim()];
        for &i in members {
            crate::numerics::axpy(1.0 / members.len() as f64, &points[i], &mut centroid);
        }
        centroids.push(ClassCentroid { class: (*class).clone(), centroid, members: members.len() });
    }

    let (mut between_min, mut between_sum, mut between_pairs) = (f64::INFINITY, 0.0, 0usize);
    for (a, ca) in centroids.iter().enumerate() {
        for cb in &centroids[a + 1..] {
            let dist = distance(&ca.centroid, &cb.centroid);
            between_min = between_min.min(dist);
            between_sum += dist;
            between_pairs += 1;
        }
    }
    if between_pairs == 0 {
        between_min = 0.0;
    }

    let max_pair = points
        .iter()
        .enumerate()
        .flat_map(|(i, a)| points[i + 1..].iter().map(move |b| distance(a, b)))
        .fold(0.0_f64, f64::max);
    let threshold = linkage_fraction * max_pair;
    let detected_clusters = single_linkage_count(&points, threshold);

    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    Ok(ClusterReport {
        centroids,
        within_max,
        within_mean: mean(within_sum, within_pairs),
        between_min,
        between_mean: mean(between_sum, between_pairs),
        detected_clusters,
        threshold,
    })
}

/// Connected components of the graph joining points at distance ≤ `threshold`.
pub fn single_linkage_count(points: &[Vec<f64>], threshold: f64) -> usize {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut components = n;
    for i in 0..n {
        for j in i + 1..n {
            if distance(&points[i], &points[j]) <= threshold {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[a] = b;
                    components -= 1;
                }
            }
        }
    }
    components
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventThresholds {
    /// Rows averaged on each side of a candidate drop.
    pub window: usize,
    /// Minimum drop, as a fraction of the loss range.
    pub drop_fraction: f64,
    /// Minimum rise above the running minimum, as a fraction of the loss range.
    pub spike_fraction: f64,
}

impl Default for EventThresholds {
    fn default() -> Self {
        Self { window: 5, drop_fraction: 0.25, spike_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossEvents {
    pub drops: Vec<usize>,
    pub spikes: Vec<usize>,
}

pub fn detect_loss_events(metrics: &[MetricsRow]) -> Result<LossEvents, DiagnosticsError> {
    detect_loss_events_with(metrics, &EventThresholds::default())
}

/// Drops and spikes in the training loss.
///
/// A drop at row `i` compares the mean loss over the `window` rows before `i`
/// with the mean over `i` and the `window − 1` rows after it (both truncated at
/// the ends). Row `i` is a drop when that decrease exceeds `drop_fraction` of
/// the loss range and is the largest within `window` rows either side (the
/// earliest one on ties).
///
/// A spike is a maximal run of rows whose loss exceeds the minimum over all
/// earlier rows by more than `spike_fraction` of the range; the run's peak
/// epoch is reported.
pub fn detect_loss_events_with(
    metrics: &[MetricsRow],
    thresholds: &EventThresholds,
) -> Result<LossEvents, DiagnosticsError> {
    if metrics.len() < 3 {
        return Err(DiagnosticsError::TooFewRows { needed: 3, found: metrics.len() });
    }
    let loss: Vec<f64> = metrics.iter().map(|r| r.train_loss).collect();
    let (lo, hi) = loss.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Ok(LossEvents::default());
    }
    let n = loss.len();
    let w = thresholds.window.max(1);

    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let mut decrease = vec![f64::NEG_INFINITY; n];
    for (i, slot) in decrease.iter_mut().enumerate().skip(1) {
        let before = &loss[i.saturating_sub(w)..i];
        let after = &loss[i..(i + w).min(n)];
        *slot = mean(before) - mean(after);
    }
    let mut drops = Vec::new();
    for i in 1..n {
        if decrease[i] <= thresholds.drop_fraction * range {
            continue;
        }
        let lo_i = i.saturating_sub(w);
        let hi_i = (i + w).min(n - 1);
        let earlier_ok = (lo_i..i).all(|j| decrease[j] < decrease[i]);
        let later_ok = (i + 1..=hi_i).all(|j| decrease[j] <= decrease[i]);
        if earlier_ok && later_ok {
            drops.push(metrics[i].epoch);
        }
    }

    let mut spikes = Vec::new();
    let mut running_min = loss[0];
    let mut run: Option<usize> = None;
    for i in 1..n {
        let above = loss[i] - running_min > thresholds.spike_fraction * range;
        match (above, run) {
            (true, None) => run = Some(i),
            (true, Some(peak)) if loss[i] > loss[peak] => run = Some(i),
            (false, Some(peak)) => {
                spikes.push(metrics[peak].epoch);
                run = None;
            }
            _ => {}
        }
        if !above {
            running_min = running_min.min(loss[i]);
        }
    }
    if let Some(peak) = run {
        spikes.push(metrics[peak].epoch);
    }
    Ok(LossEvents { drops, spikes })
}

/// One point of the bound-slack series of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackPoint {
    pub epoch: usize,
    pub grad_norm: f64,
    pub bound: f64,
    pub slack: f64,
}

pub fn slack_series(metrics: &[MetricsRow]) -> Vec<SlackPoint> {
    metrics
        .iter()
        .map(|r| {
            let grad_norm = r.grad_norms().combined(&Layer::ATTENTION_AND_MLP);
            SlackPoint { epoch: r.epoch, grad_norm, bound: r.bound, slack: r.bound - grad_norm }
        })
        .collect()
}

/// Everything `report` writes for a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub final_epoch: usize,
    pub final_test_accuracy: f64,
    pub success: bool,
    pub events: LossEvents,
    pub slack_series: Vec<SlackPoint>,
    pub bound: BoundReport,
    pub clusters: ClusterReport,
    pub sparsity: Vec<(f64, f64)>,
}

/// Test accuracy at or above which a run counts as successful.
pub const SUCCESS_ACCURACY: f64 = 0.9;

pub fn run_report(
    metrics: &[MetricsRow],
    params: &ModelParams,
    train: &Dataset,
    probes: &[ProbeSequence],
    norm: NormVariant,
) -> Result<RunReport, DiagnosticsError> {
    let last = metrics.last().ok_or(DiagnosticsError::TooFewRows { needed: 3, found: 0 })?;
    Ok(RunReport {
        final_epoch: last.epoch,
        final_test_accuracy: last.test_acc,
        success: last.test_acc >= SUCCESS_ACCURACY,
        events: detect_loss_events(metrics)?,
        slack_series: slack_series(metrics),
        bound: gradient_bound(params, train)?,
        clusters: cluster_report(params, probes, norm)?,
        sparsity: sparsity_curve(params, train, &default_sparsity_grid(), norm)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::TrainMask;
    use crate::model::{build_idealized_embedding, init_params, HyperParams};
    use crate::numerics::Matrix;
    use crate::task::{build_probe_set, default_suffixes, ideal_cluster_count, sample_dataset, TaskSpec};

    fn row(epoch: usize, loss: f64) -> MetricsRow {
        MetricsRow { epoch, train_loss: loss, ..MetricsRow::default() }
    }

    #[test]
    fn layer_norm_examples() {
        let hyper = HyperParams::default();
        let params = init_params(&hyper, 0).unwrap();
        let mut g = GradientSet::zeros(&params, TrainMask::all());
        assert_eq!(per_layer_grad_norms(&g), LayerNorms::default());
        g.tensor_mut(Layer::Query).copy_from_slice(&[3.0, 4.0]);
        let n = per_layer_grad_norms(&g);
        assert_eq!(n.query, 5.0);
        assert_eq!(n.combined(&Layer::ALL), 5.0);
    }

    #[test]
    fn squared_layer_norms_add_up() {
        let hyper = HyperParams::default();
        let params = init_params(&hyper, 3).unwrap();
        let data = sample_dataset(32, &hyper.task, 3).unwrap();
        let g = crate::gradients::backprop_loss_gradient(&params, &data, TrainMask::all(), NormVariant::Standard).unwrap();
        let n = per_layer_grad_norms(&g);
        let parts: f64 = Layer::ALL.iter().map(|&l| n.get(l).powi(2)).sum();
        assert!((parts - g.total_norm().powi(2)).abs() <= 1e-12);
    }

    #[test]
    fn classification_error_examples() {
        let hyper = HyperParams::default();
        let mut params = init_params(&hyper, 1).unwrap();
        let data = sample_dataset(200, &hyper.task, 1).unwrap();
        let direct: f64 = data
            .iter()
            .map(|(x, y)| 1.0 - forward(&params, x, NormVariant::Standard).mu[y])
            .sum::<f64>()
            / 200.0;
        let tv = classification_error(&params, &data, NormVariant::Standard).unwrap();
        assert!((tv - direct).abs() <= 1e-12);

        params.value = Matrix::zeros(2, 2);
        params.receptors = Matrix::zeros(32, 2);
        let uniform = classification_error(&params, &data, NormVariant::Standard).unwrap();
        assert!((uniform - 0.5).abs() <= 1e-15);

        let empty = Dataset { inputs: vec![], targets: vec![], spec: hyper.task, seed: 0 };
        assert!(matches!(classification_error(&params, &empty, NormVariant::Standard), Err(DiagnosticsError::EmptyDataset)));
    }

    #[test]
    fn bound_holds_at_initialization() {
        for seed in 0..5 {
            let hyper = HyperParams::default();
            let params = init_params(&hyper, seed).unwrap();
            let data = sample_dataset(256, &hyper.task, seed).unwrap();
            let report = gradient_bound(&params, &data).unwrap();
            assert!(report.slack >= 0.0 && report.holds(), "{report:?}");
        }
    }

    #[test]
    fn bound_grows_with_assemblers() {
        let params = init_params(&HyperParams::default(), 2).unwrap();
        let before = bound_constant(&params).unwrap().b_tilde;
        let mut scaled = params.clone();
        scaled.assemblers = scaled.assemblers.scale(10.0);
        assert!(bound_constant(&scaled).unwrap().b_tilde > before);
    }

    #[test]
    fn bound_formula_hand_value() {
        // d = 1, n = 1, B = 1, V = W = U = 1:
        // 4[(2(1 + √(2/π)))² + 9 + 4 + 1]
        let ops = OpNorms { value: 1.0, receptors: 1.0, assemblers: 1.0 };
        let expected = (4.0 * ((2.0 * (1.0 + (2.0 / PI).sqrt())).powi(2) + 14.0)).sqrt();
        assert!((b_tilde_formula(1, 1, 1.0, &ops) - expected).abs() < 1e-12);
        let halved = b_tilde_formula(1, 1, 0.5, &ops);
        assert!((halved - expected / 2.0).abs() < 1e-12);
    }

    #[test]
    fn sparsity_examples() {
        let hyper = HyperParams::default();
        let mut params = init_params(&hyper, 4).unwrap();
        let data = sample_dataset(64, &hyper.task, 4).unwrap();
        let grid = default_sparsity_grid();
        let curve = sparsity_curve(&params, &data, &grid, NormVariant::Standard).unwrap();
        assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(curve.last().unwrap().1, 1.0);
        assert!((grid[0] - 1e-5).abs() < 1e-18 && (grid[21] - 1e2).abs() < 1e-10);

        params.receptors = Matrix::zeros(32, 2);
        assert_eq!(activation_sparsity(&params, &data, 1e-12, NormVariant::Standard).unwrap(), 1.0);
    }

    #[test]
    fn idealized_clusters_are_counted() {
        let hyper = HyperParams::default();
        let params = build_idealized_embedding(&hyper).unwrap();
        let probes = build_probe_set(&hyper.task, &default_suffixes(&hyper.task)).unwrap();
        let r = cluster_report(&params, &probes, NormVariant::Standard).unwrap();
        assert_eq!(r.detected_clusters as u64, ideal_cluster_count(&hyper.task));
        assert!(r.within_max <= 1e-9);
        assert!(r.between_min > 1e3 * r.within_max.max(1e-12));
    }

    #[test]
    fn three_token_clusters_need_a_finer_linkage() {
        // The 21 class points sit on an almost straight, unevenly spaced line:
        // neighbouring gaps are 1/35 of the spread, so the default linkage
        // fraction merges them and a finer one separates them.
        let task = TaskSpec::new(12, 5, 3).unwrap();
        let hyper = HyperParams { task, ..HyperParams::default() };
        let params = build_idealized_embedding(&hyper).unwrap();
        let probes = build_probe_set(&task, &default_suffixes(&task)).unwrap();
        let coarse = cluster_report(&params, &probes, NormVariant::Standard).unwrap();
        assert!(coarse.detected_clusters < 21);
        let fine = cluster_report_with(&params, &probes, NormVariant::Standard, 0.01).unwrap();
        assert_eq!(fine.detected_clusters, 21);
        assert_eq!(fine.centroids.len(), 21);
    }

    #[test]
    fn single_probe_is_one_cluster() {
        let hyper = HyperParams::default();
        let params = init_params(&hyper, 0).unwrap();
        let probes = build_probe_set(&hyper.task, &default_suffixes(&hyper.task)).unwrap();
        let r = cluster_report(&params, &probes[..1], NormVariant::Standard).unwrap();
        assert_eq!(r.detected_clusters, 1);
        assert_eq!((r.within_max, r.between_min), (0.0, 0.0));
        assert!(matches!(cluster_report(&params, &[], NormVariant::Standard), Err(DiagnosticsError::EmptyProbeSet)));
    }

    #[test]
    fn random_init_is_unstructured() {
        let hyper = HyperParams::default();
        let params = init_params(&hyper, 5).unwrap();
        let probes = build_probe_set(&hyper.task, &default_suffixes(&hyper.task)).unwrap();
        let r = cluster_report(&params, &probes, NormVariant::Standard).unwrap();
        assert!(r.within_mean > 0.1 * r.between_mean);
    }

    #[test]
    fn flat_loss_has_no_events() {
        let rows: Vec<_> = (0..50).map(|e| row(e, 0.7)).collect();
        assert_eq!(detect_loss_events(&rows).unwrap(), LossEvents::default());
        assert!(matches!(detect_loss_events(&rows[..2]), Err(DiagnosticsError::TooFewRows { .. })));
    }

    #[test]
    fn staircase_has_two_drops() {
        let rows: Vec<_> = (0..150).map(|e| row(e, [1.0, 0.5, 0.0][e / 50])).collect();
        let ev = detect_loss_events(&rows).unwrap();
        assert_eq!(ev.drops, vec![50, 100]);
        assert!(ev.spikes.is_empty());
    }

    #[test]
    fn smooth_decay_has_no_drops() {
        let rows: Vec<_> = (0..200).map(|e| row(e, (-(e as f64) / 300.0).exp())).collect();
        assert!(detect_loss_events(&rows).unwrap().drops.is_empty());
    }

    #[test]
    fn spikes_report_their_peak() {
        let mut loss: Vec<f64> = (0..100).map(|e| 1.0 - e as f64 / 200.0).collect();
        loss[60] = 0.9;
        loss[61] = 1.2;
        loss[62] = 0.8;
        let rows: Vec<_> = loss.iter().enumerate().map(|(e, &l)| row(e, l)).collect();
        assert_eq!(detect_loss_events(&rows).unwrap().spikes, vec![61]);
    }
}
