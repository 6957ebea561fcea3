//! Three gradient engines over the mean cross-entropy, and a cross-check.
//!
//! * [`backprop_loss_gradient`]: reverse-mode chain rule through the forward
//!   pass, covering every tensor (token embeddings collect both their input
//!   and their tied read-out contributions).
//! * [`closed_form_loss_gradient`]: the block formulas for `q, V, W, U`
//!   written with `Δ_z`, `A_z`, `Σ_ξ̄`, `M` and `Q`, combined per sample as
//!   `Σ_j (μ_j − 𝟙{y=j}) ∇ζ_j`.
//! * [`finite_difference_gradient`]: central differences of the loss.

use serde::{Deserialize, Serialize};

use crate::error::GradientError;
use crate::model::{
    attend_into, forward, forward_into, head_into, ForwardTrace, Layer, ModelParams,
};
use crate::numerics::{axpy, dot, gelu, gelu_prime, log_sum_exp, Matrix, NormVariant};
use crate::task::Dataset;

/// Which tensors are trainable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainMask([bool; 6]);

impl Default for TrainMask {
    fn default() -> Self {
        Self::all()
    }
}

impl TrainMask {
    pub fn all() -> Self {
        Self([true; 6])
    }

    pub fn none() -> Self {
        Self([false; 6])
    }

    /// `q, V, W, U` trainable; embeddings frozen.
    pub fn theory() -> Self {
        Self::only(&Layer::ATTENTION_AND_MLP)
    }

    pub fn only(layers: &[Layer]) -> Self {
        let mut m = Self::none();
        for &l in layers {
            m.0[l.index()] = true;
        }
        m
    }

    pub fn contains(&self, layer: Layer) -> bool {
        self.0[layer.index()]
    }

    pub fn layers(&self) -> impl Iterator<Item = Layer> + '_ {
        Layer::ALL.into_iter().filter(|&l| self.contains(l))
    }

    pub fn symbols(&self) -> Vec<String> {
        self.layers().map(|l| l.symbol().to_string()).collect()
    }

    pub fn from_symbols<S: AsRef<str>>(symbols: &[S]) -> Result<Self, String> {
        let mut m = Self::none();
        for s in symbols {
            let layer = Layer::from_symbol(s.as_ref().trim())
                .ok_or_else(|| format!("unknown tensor {:?} (expected one of E, P, q, V, W, U)", s.as_ref()))?;
            m.0[layer.index()] = true;
        }
        Ok(m)
    }
}

impl Serialize for TrainMask {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.symbols().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TrainMask {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let symbols = Vec::<String>::deserialize(deserializer)?;
        TrainMask::from_symbols(&symbols).map_err(serde::de::Error::custom)
    }
}

/// Per-tensor gradients; masked-off tensors stay exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub grads: ModelParams,
    pub mask: TrainMask,
}

impl GradientSet {
    pub fn zeros(params: &ModelParams, mask: TrainMask) -> Self {
        Self { grads: params.zeros_like(), mask }
    }

    pub fn tensor(&self, layer: Layer) -> &[f64] {
        self.grads.tensor(layer)
    }

    pub fn tensor_mut(&mut self, layer: Layer) -> &mut [f64] {
        self.grads.tensor_mut(layer)
    }

    pub fn layer_norm(&self, layer: Layer) -> f64 {
        self.grads.norm_over(&[layer])
    }

    pub fn norm_over(&self, layers: &[Layer]) -> f64 {
        self.grads.norm_over(layers)
    }

    pub fn total_norm(&self) -> f64 {
        self.grads.norm_over(&Layer::ALL)
    }

    fn clear_masked(&mut self) {
        for l in Layer::ALL {
            if !self.mask.contains(l) {
                self.tensor_mut(l).iter_mut().for_each(|g| *g = 0.0);
            }
        }
    }
}

/// Mean loss, accuracy and `1 − μ_y` over the samples a gradient pass visited.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub accuracy: f64,
    pub error_term: f64,
}

/// Reusable buffers for [`Backprop`].
pub struct Backprop {
    trace: ForwardTrace,
    g_zeta: Vec<f64>,
    g_psi: Vec<f64>,
    g_act: Vec<f64>,
    g_xi_bar: Vec<f64>,
    g_xi: Vec<f64>,
    g_context: Vec<f64>,
    g_attn: Vec<f64>,
    g_z: Vec<f64>,
    g_raw: Vec<f64>,
    pub norm: NormVariant,
}

impl Backprop {
    pub fn new(params: &ModelParams, norm: NormVariant) -> Self {
        let (d, h, p, l) = (params.embed_dim(), params.hidden(), params.vocab(), params.seq_len());
        Self {
            trace: ForwardTrace::for_params(params),
            g_zeta: vec![0.0; p],
            g_psi: vec![0.0; d],
            g_act: vec![0.0; h],
            g_xi_bar: vec![0.0; d],
            g_xi: vec![0.0; d],
            g_context: vec![0.0; d],
            g_attn: vec![0.0; l],
            g_z: vec![0.0; d],
            g_raw: vec![0.0; d],
            norm,
        }
    }

    pub fn trace(&self) -> &ForwardTrace {
        &self.trace
    }

    /// Forward one sample and add `weight · ∇loss` into `out` for every
    /// tensor in `mask`. Returns `(loss, correct, 1 − μ_y)`.
    pub fn accumulate(
        &mut self,
        params: &ModelParams,
        tokens: &[usize],
        label: usize,
        weight: f64,
        mask: TrainMask,
        out: &mut ModelParams,
    ) -> (f64, bool, f64) {
        let norm = self.norm;
        forward_into(params, tokens, norm, &mut self.trace);
        let tr = &self.trace;
        let loss = log_sum_exp(&tr.zeta) - tr.zeta[label];
        let correct = tr.prediction() == label;
        let error = 1.0 - tr.mu[label];

        let d = params.embed_dim();
        let needs_xi = mask.contains(Layer::Query)
            || mask.contains(Layer::Value)
            || mask.contains(Layer::TokenEmbedding)
            || mask.contains(Layer::PositionEmbedding);
        let needs_z = mask.contains(Layer::Query)
            || mask.contains(Layer::TokenEmbedding)
            || mask.contains(Layer::PositionEmbedding);

        // logits: ζ_v = E_v · ψ
        for v in 0..params.vocab() {
            self.g_zeta[v] = weight * (tr.mu[v] - if v == label { 1.0 } else { 0.0 });
        }
        if mask.contains(Layer::TokenEmbedding) {
            for v in 0..params.vocab() {
                axpy(self.g_zeta[v], &tr.psi, out.token_embedding.row_mut(v));
            }
        }
        self.g_psi.iter_mut().for_each(|g| *g = 0.0);
        for v in 0..params.vocab() {
            axpy(self.g_zeta[v], params.token_embedding.row(v), &mut self.g_psi);
        }

        // MLP: ψ = ξ + U σ(W ξ̄)
        if mask.contains(Layer::Assemblers) {
            for r in 0..d {
                axpy(self.g_psi[r], &tr.act, out.assemblers.row_mut(r));
            }
        }
        let needs_act = needs_xi || mask.contains(Layer::Receptors);
        if !needs_act {
            return (loss, correct, error);
        }
        self.g_act.iter_mut().for_each(|g| *g = 0.0);
        for r in 0..d {
            axpy(self.g_psi[r], params.assemblers.row(r), &mut self.g_act);
        }
        for (g, &a) in self.g_act.iter_mut().zip(&tr.act_pre) {
            *g *= gelu_prime(a);
        }
        if mask.contains(Layer::Receptors) {
            for i in 0..params.hidden() {
                axpy(self.g_act[i], &tr.xi_bar, out.receptors.row_mut(i));
            }
        }
        if !needs_xi {
            return (loss, correct, error);
        }
        self.g_xi_bar.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..params.hidden() {
            axpy(self.g_act[i], params.receptors.row(i), &mut self.g_xi_bar);
        }
        self.g_xi.copy_from_slice(&self.g_psi);
        norm.backward_into(&tr.xi, tr.xi_norm, &self.g_xi_bar, &mut self.g_xi);

        // ξ = V c with c = Σ_t s_t z_t
        if mask.contains(Layer::Value) {
            for r in 0..d {
                axpy(self.g_xi[r], &tr.context, out.value.row_mut(r));
            }
        }
        if !needs_z {
            return (loss, correct, error);
        }
        self.g_context.iter_mut().for_each(|g| *g = 0.0);
        for r in 0..d {
            axpy(self.g_xi[r], params.value.row(r), &mut self.g_context);
        }
        // softmax over scores_t = z_t · q / √d
        for t in 0..tr.attn.len() {
            self.g_attn[t] = dot(&self.g_context, tr.z.row(t));
        }
        let mean = dot(&self.g_attn, &tr.attn);
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let embeds = mask.contains(Layer::TokenEmbedding) || mask.contains(Layer::PositionEmbedding);
        for t in 0..tr.attn.len() {
            let g_score = tr.attn[t] * (self.g_attn[t] - mean);
            if mask.contains(Layer::Query) {
                axpy(g_score * inv_sqrt_d, tr.z.row(t), &mut out.query);
            }
            if embeds {
                for (gz, (&c, &q)) in self.g_z.iter_mut().zip(self.g_context.iter().zip(&params.query)) {
                    *gz = tr.attn[t] * c + g_score * inv_sqrt_d * q;
                }
                self.g_raw.iter_mut().for_each(|g| *g = 0.0);
                norm.backward_into(tr.raw.row(t), tr.raw_norm[t], &self.g_z, &mut self.g_raw);
                if mask.contains(Layer::TokenEmbedding) {
                    axpy(1.0, &self.g_raw, out.token_embedding.row_mut(tokens[t]));
                }
                if mask.contains(Layer::PositionEmbedding) {
                    axpy(1.0, &self.g_raw, out.position_embedding.row_mut(t));
                }
            }
        }
        (loss, correct, error)
    }

    /// Mean gradient over `indices` of `data`, written into `out` (zeroed first).
    pub fn batch_gradient(
        &mut self,
        params: &ModelParams,
        data: &Dataset,
        indices: &[usize],
        mask: TrainMask,
        out: &mut GradientSet,
    ) -> BatchStats {
        out.mask = mask;
        for l in Layer::ALL {
            out.tensor_mut(l).iter_mut().for_each(|g| *g = 0.0);
        }
        let weight = 1.0 / indices.len() as f64;
        let mut stats = BatchStats::default();
        let mut correct = 0usize;
        for &i in indices {
            let (loss, ok, err) =
                self.accumulate(params, &data.inputs[i], data.targets[i], weight, mask, &mut out.grads);
            stats.loss += loss;
            stats.error_term += err;
            correct += usize::from(ok);
        }
        stats.loss *= weight;
        stats.error_term *= weight;
        stats.accuracy = correct as f64 * weight;
        stats
    }
}

/// Exact gradient of the mean cross-entropy over `batch`, for every tensor in `mask`.
pub fn backprop_loss_gradient(
    params: &ModelParams,
    batch: &Dataset,
    mask: TrainMask,
    norm: NormVariant,
) -> Result<GradientSet, GradientError> {
    if batch.is_empty() {
        return Err(GradientError::EmptyDataset);
    }
    let mut engine = Backprop::new(params, norm);
    let mut out = GradientSet::zeros(params, mask);
    let indices: Vec<usize> = (0..batch.len()).collect();
    engine.batch_gradient(params, batch, &indices, mask, &mut out);
    Ok(out)
}

/// Matrices shared by the closed-form logit gradients of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaBlocks {
    /// `Δ_z = (z/√d)(I − s𝟙ᵀ)`, `d × L`.
    pub delta_z: Matrix,
    /// `A_z = diag(s)`, `L × L`.
    pub a_z: Matrix,
    /// `Σ_ξ̄ = diag(σ′(W ξ̄))`, `h × h`.
    pub sigma_xibar: Matrix,
    /// `M = (I − ξ̄ξ̄ᵀ)/‖ξ‖`, `d × d`.
    pub m_proj: Matrix,
    /// `Q = U Σ_ξ̄ W M`, `d × d`.
    pub q_mat: Matrix,
    /// `𝓒_x = Σ_j (μ_j − 𝟙{y=j}) E(j)`.
    pub c_x: Vec<f64>,
}

/// Smallest `‖ξ‖` for which `M` is computed.
pub const DEGENERATE_XI: f64 = 1e-9;

/// `z` as a `d × L` matrix (columns are positions).
fn z_columns(trace: &ForwardTrace) -> Matrix {
    trace.z.transpose()
}

pub fn lemma_blocks(params: &ModelParams, trace: &ForwardTrace, label: usize) -> Result<LemmaBlocks, GradientError> {
    if trace.xi_norm <= DEGENERATE_XI {
        return Err(GradientError::DegenerateXi { sample: 0, norm: trace.xi_norm });
    }
    let d = params.embed_dim();
    let l = trace.attn.len();
    let z = z_columns(trace);
    let s = &trace.attn;

    let centering = Matrix::identity(l).sub(&Matrix::outer(s, &vec![1.0; l]));
    let delta_z = z.scale(1.0 / (d as f64).sqrt()).matmul(&centering);
    let a_z = Matrix::diag(s);
    let sigma_xibar = Matrix::diag(&trace.act_pre.iter().map(|&a| gelu_prime(a)).collect::<Vec<_>>());
    let m_proj = Matrix::identity(d)
        .sub(&Matrix::outer(&trace.xi_bar, &trace.xi_bar))
        .scale(1.0 / trace.xi_norm);
    let q_mat = params.assemblers.matmul(&sigma_xibar).matmul(&params.receptors).matmul(&m_proj);

    let mut c_x = vec![0.0; d];
    for j in 0..params.vocab() {
        let gamma = trace.mu[j] - if j == label { 1.0 } else { 0.0 };
        axpy(gamma, params.token_embedding.row(j), &mut c_x);
    }
    Ok(LemmaBlocks { delta_z, a_z, sigma_xibar, m_proj, q_mat, c_x })
}

/// `∇ζ_j` with respect to `q, V, W, U`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitGrads {
    pub query: Vec<f64>,
    pub value: Matrix,
    pub receptors: Matrix,
    pub assemblers: Matrix,
}

/// The four closed-form blocks for logit `j`, from precomputed [`LemmaBlocks`].
pub fn logit_grads_from_blocks(
    params: &ModelParams,
    trace: &ForwardTrace,
    blocks: &LemmaBlocks,
    class: usize,
) -> LogitGrads {
    let d = params.embed_dim();
    let e_j = params.token_embedding.row(class);
    let z = z_columns(trace);
    let vz = params.value.matmul(&z);

    // (I + Qᵀ) E(j)
    let perturbed = Matrix::identity(d).add(&blocks.q_mat.transpose()).matvec(e_j);
    let query = blocks.delta_z.matmul(&blocks.a_z).matmul(&vz.transpose()).matvec(&perturbed);
    let attended = z.matvec(&trace.attn);
    let value = Matrix::outer(&perturbed, &attended);
    let receptors = Matrix::outer(&blocks.sigma_xibar.matvec(&params.assemblers.matvec_t(e_j)), &trace.xi_bar);
    let activations: Vec<f64> = trace.act_pre.iter().map(|&a| gelu(a)).collect();
    let assemblers = Matrix::outer(e_j, &activations);
    LogitGrads { query, value, receptors, assemblers }
}

pub fn closed_form_logit_grads(
    params: &ModelParams,
    trace: &ForwardTrace,
    class: usize,
) -> Result<LogitGrads, GradientError> {
    let blocks = lemma_blocks(params, trace, class)?;
    Ok(logit_grads_from_blocks(params, trace, &blocks, class))
}

/// The query block in its transposed arrangement, `Δ_z A_z [(I + Q) V z]ᵀ E(j)`.
pub fn query_grad_transposed_form(
    params: &ModelParams,
    trace: &ForwardTrace,
    blocks: &LemmaBlocks,
    class: usize,
) -> Vec<f64> {
    let d = params.embed_dim();
    let vz = params.value.matmul(&z_columns(trace));
    let inner = Matrix::identity(d).add(&blocks.q_mat).matmul(&vz);
    blocks
        .delta_z
        .matmul(&blocks.a_z)
        .matmul(&inner.transpose())
        .matvec(params.token_embedding.row(class))
}

/// `mean_x Σ_j (μ_j − 𝟙{y=j}) ∇ζ_j` over `q, V, W, U`; embeddings get zero.
pub fn closed_form_loss_gradient(params: &ModelParams, batch: &Dataset) -> Result<GradientSet, GradientError> {
    if batch.is_empty() {
        return Err(GradientError::EmptyDataset);
    }
    let mut out = GradientSet::zeros(params, TrainMask::theory());
    let weight = 1.0 / batch.len() as f64;
    for (sample, (x, y)) in batch.iter().enumerate() {
        let trace = forward(params, x, NormVariant::Standard);
        let blocks = lemma_blocks(params, &trace, y).map_err(|e| match e {
            GradientError::DegenerateXi { norm, .. } => GradientError::DegenerateXi { sample, norm },
            other => other,
        })?;
        for j in 0..params.vocab() {
            let gamma = trace.mu[j] - if j == y { 1.0 } else { 0.0 };
            let g = logit_grads_from_blocks(params, &trace, &blocks, j);
            let w = weight * gamma;
            axpy(w, &g.query, &mut out.grads.query);
            out.grads.value.add_scaled(w, &g.value);
            out.grads.receptors.add_scaled(w, &g.receptors);
            out.grads.assemblers.add_scaled(w, &g.assemblers);
        }
    }
    Ok(out)
}

/// Central differences `(ℒ(θ + h eᵢ) − ℒ(θ − h eᵢ)) / 2h` for every unmasked coordinate.
///
/// Every perturbed loss is a forward re-evaluation. Stages that cannot see
/// the perturbed coordinate are reused from a cached base pass, and the
/// stages that can are recomputed only where the coordinate reaches: one
/// entry of `ξ` for `V`, one hidden unit for `W`, one entry of `ψ` for `U`.
pub fn finite_difference_gradient(
    params: &ModelParams,
    batch: &Dataset,
    step: f64,
    mask: TrainMask,
    norm: NormVariant,
) -> Result<GradientSet, GradientError> {
    if batch.is_empty() {
        return Err(GradientError::EmptyDataset);
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(GradientError::InvalidStep(step));
    }
    let n = batch.len() as f64;
    let cache = FdCache::new(params, batch, norm);
    let mut out = GradientSet::zeros(params, mask);
    let mut probe = params.clone();
    let mut scratch = FdScratch::new(params);

    for layer in mask.layers() {
        for idx in 0..params.tensor(layer).len() {
            let original = params.tensor(layer)[idx];
            let mut diff = 0.0;
            for (s, (x, y)) in batch.iter().enumerate() {
                probe.tensor_mut(layer)[idx] = original + step;
                let plus = cache.perturbed_loss(&probe, s, x, y, layer, idx, &mut scratch);
                probe.tensor_mut(layer)[idx] = original - step;
                let minus = cache.perturbed_loss(&probe, s, x, y, layer, idx, &mut scratch);
                probe.tensor_mut(layer)[idx] = original;
                diff += plus - minus;
            }
            out.tensor_mut(layer)[idx] = diff / (2.0 * step * n);
        }
    }
    out.clear_masked();
    Ok(out)
}

struct FdCache {
    norm: NormVariant,
    base: Vec<ForwardTrace>,
    /// `W ξ` before normalization, per sample.
    w_xi: Vec<Vec<f64>>,
    /// `E ξ`, per sample.
    e_xi: Vec<Vec<f64>>,
    /// `E U`, `p × h`.
    e_u: Matrix,
}

struct FdScratch {
    trace: ForwardTrace,
    zeta: Vec<f64>,
}

impl FdScratch {
    fn new(params: &ModelParams) -> Self {
        Self { trace: ForwardTrace::for_params(params), zeta: vec![0.0; params.vocab()] }
    }
}

fn cross_entropy(zeta: &[f64], label: usize) -> f64 {
    log_sum_exp(zeta) - zeta[label]
}

impl FdCache {
    fn new(params: &ModelParams, batch: &Dataset, norm: NormVariant) -> Self {
        let base: Vec<ForwardTrace> = batch.iter().map(|(x, _)| forward(params, x, norm)).collect();
        let w_xi = base.iter().map(|t| params.receptors.matvec(&t.xi)).collect();
        let e_xi = base.iter().map(|t| params.token_embedding.matvec(&t.xi)).collect();
        let e_u = params.token_embedding.matmul(&params.assemblers);
        Self { norm, base, w_xi, e_xi, e_u }
    }

    #[allow(clippy::too_many_arguments)]
    fn perturbed_loss(
        &self,
        probe: &ModelParams,
        sample: usize,
        tokens: &[usize],
        label: usize,
        layer: Layer,
        idx: usize,
        scratch: &mut FdScratch,
    ) -> f64 {
        let base = &self.base[sample];
        let (d, p) = (probe.embed_dim(), probe.vocab());
        match layer {
            Layer::TokenEmbedding | Layer::PositionEmbedding => {
                forward_into(probe, tokens, self.norm, &mut scratch.trace);
                cross_entropy(&scratch.trace.zeta, label)
            }
            Layer::Query => {
                scratch.trace.clone_from(base);
                attend_into(probe, &mut scratch.trace);
                head_into(probe, self.norm, &mut scratch.trace);
                cross_entropy(&scratch.trace.zeta, label)
            }
            Layer::Value => {
                // only ξ_a moves; W ξ, E ξ and ‖ξ‖ follow linearly from it
                let a = idx / d;
                let shift = dot(probe.value.row(a), &base.context) - base.xi[a];
                let r2 = base.xi_norm * base.xi_norm + 2.0 * shift * base.xi[a] + shift * shift;
                let r = r2.max(0.0).sqrt();
                let factor = self.norm.gain(r) / r.max(crate::numerics::NORM_GUARD);
                for v in 0..p {
                    scratch.zeta[v] = self.e_xi[sample][v] + probe.token_embedding[(v, a)] * shift;
                }
                for i in 0..probe.hidden() {
                    let act = gelu(factor * (self.w_xi[sample][i] + probe.receptors[(i, a)] * shift));
                    for v in 0..p {
                        scratch.zeta[v] += self.e_u[(v, i)] * act;
                    }
                }
                cross_entropy(&scratch.zeta, label)
            }
            Layer::Receptors => {
                let i = idx / d;
                let change = gelu(dot(probe.receptors.row(i), &base.xi_bar)) - base.act[i];
                for v in 0..p {
                    scratch.zeta[v] = base.zeta[v] + self.e_u[(v, i)] * change;
                }
                cross_entropy(&scratch.zeta, label)
            }
            Layer::Assemblers => {
                let r = idx / probe.hidden();
                let change = base.xi[r] + dot(probe.assemblers.row(r), &base.act) - base.psi[r];
                for v in 0..p {
                    scratch.zeta[v] = base.zeta[v] + probe.token_embedding[(v, r)] * change;
                }
                cross_entropy(&scratch.zeta, label)
            }
        }
    }
}

/// NaN anywhere in either input gives NaN, which fails every tolerance.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return f64::NAN;
    }
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = crate::numerics::max_abs(a).max(crate::numerics::max_abs(b)).max(1e-8);
    diff / scale
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckTolerances {
    /// Closed form vs backprop.
    pub engine_pair: f64,
    /// Either analytic engine vs finite differences.
    pub finite_difference: f64,
    pub fd_step: f64,
}

impl Default for CheckTolerances {
    fn default() -> Self {
        Self { engine_pair: 1e-10, finite_difference: 1e-6, fd_step: 1e-5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnginePair {
    ClosedFormVsBackprop,
    ClosedFormVsFiniteDifference,
    BackpropVsFiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub pair: EnginePair,
    pub tensor: Layer,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub checks: Vec<TensorCheck>,
    pub pass: bool,
}

impl CheckReport {
    pub fn failing(&self) -> impl Iterator<Item = &TensorCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn max_error(&self, pair: EnginePair) -> f64 {
        self.checks.iter().filter(|c| c.pair == pair).fold(0.0, |m, c| m.max(c.rel_error))
    }

    /// Folds another report in, keeping the worst error per (pair, tensor).
    pub fn merge(&mut self, other: &CheckReport) {
        for c in &other.checks {
            match self.checks.iter_mut().find(|m| m.pair == c.pair && m.tensor == c.tensor) {
                Some(m) if c.rel_error > m.rel_error || c.rel_error.is_nan() => *m = c.clone(),
                Some(_) => {}
                None => self.checks.push(c.clone()),
            }
        }
        self.pass = self.checks.iter().all(|c| c.pass);
    }
}

/// Compares already-computed gradients from the three engines.
///
/// The closed form only covers `q, V, W, U`; backprop and finite
/// differences are compared on every tensor in the backprop mask.
pub fn compare_engines(
    closed: &GradientSet,
    backprop: &GradientSet,
    finite: &GradientSet,
    tol: &CheckTolerances,
) -> CheckReport {
    let mut checks = Vec::new();
    let mut push = |pair, tensor, a: &[f64], b: &[f64], tolerance: f64| {
        let rel_error = relative_error(a, b);
        checks.push(TensorCheck { pair, tensor, rel_error, tolerance, pass: rel_error <= tolerance });
    };
    for layer in Layer::ATTENTION_AND_MLP {
        if backprop.mask.contains(layer) {
            push(EnginePair::ClosedFormVsBackprop, layer, closed.tensor(layer), backprop.tensor(layer), tol.engine_pair);
        }
        if finite.mask.contains(layer) {
            push(
                EnginePair::ClosedFormVsFiniteDifference,
                layer,
                closed.tensor(layer),
                finite.tensor(layer),
                tol.finite_difference,
            );
        }
    }
    for layer in backprop.mask.layers().filter(|&l| finite.mask.contains(l)) {
        push(
            EnginePair::BackpropVsFiniteDifference,
            layer,
            backprop.tensor(layer),
            finite.tensor(layer),
            tol.finite_difference,
        );
    }
    let pass = checks.iter().all(|c| c.pass);
    CheckReport { checks, pass }
}

/// Runs all three engines on `batch` and reports per-tensor errors.
/// Failures are reported, not raised; an engine error counts as a failure
/// of every comparison it takes part in.
pub fn gradient_check(params: &ModelParams, batch: &Dataset, mask: TrainMask, tol: &CheckTolerances) -> CheckReport {
    let closed = closed_form_loss_gradient(params, batch);
    let backprop = backprop_loss_gradient(params, batch, mask, NormVariant::Standard);
    let finite = finite_difference_gradient(params, batch, tol.fd_step, mask, NormVariant::Standard);
    match (closed, backprop, finite) {
        (Ok(c), Ok(b), Ok(f)) => compare_engines(&c, &b, &f, tol),
        (c, b, f) => {
            let nan = |m: TrainMask| {
                let mut g = GradientSet::zeros(params, m);
                for l in Layer::ALL {
                    g.tensor_mut(l).iter_mut().for_each(|x| *x = f64::NAN);
                }
                g
            };
            let c = c.unwrap_or_else(|_| nan(TrainMask::theory()));
            let b = b.unwrap_or_else(|_| nan(mask));
            let f = f.unwrap_or_else(|_| nan(mask));
            compare_engines(&c, &b, &f, tol)
        }
    }
}
