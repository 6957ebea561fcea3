//! One-layer transformer: normalized token+position embeddings, a single
//! query attending over the sequence, a pre-norm residual GELU MLP, and
//! logits read out against the (tied) token embeddings.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ModelError, TaskError};
use crate::numerics::{axpy, distance, dot, gelu, log_sum_exp, softmax_into, Matrix, NormVariant};
use crate::rng::{stream_rng, Stream};
use crate::task::{all_prefixes, prefix_class, Dataset, PrefixClass, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Embedding dimension `d`.
    #[serde(rename = "d")]
    pub embed_dim: usize,
    /// MLP width `h`.
    #[serde(rename = "h")]
    pub hidden: usize,
    pub task: TaskSpec,
    pub norm: NormVariant,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self { embed_dim: 2, hidden: 32, task: TaskSpec::default(), norm: NormVariant::Standard }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.task.validate()?;
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(ModelError::InvalidHyper("d and h must be positive".into()));
        }
        Ok(())
    }
}

/// The six parameter tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Layer {
    #[serde(rename = "E")]
    TokenEmbedding,
    #[serde(rename = "P")]
    PositionEmbedding,
    #[serde(rename = "q")]
    Query,
    #[serde(rename = "V")]
    Value,
    #[serde(rename = "W")]
    Receptors,
    #[serde(rename = "U")]
    Assemblers,
}

impl Layer {
    pub const ALL: [Layer; 6] = [
        Layer::TokenEmbedding,
        Layer::PositionEmbedding,
        Layer::Query,
        Layer::Value,
        Layer::Receptors,
        Layer::Assemblers,
    ];

    /// The tensors the closed-form gradient covers.
    pub const ATTENTION_AND_MLP: [Layer; 4] = [Layer::Query, Layer::Value, Layer::Receptors, Layer::Assemblers];

    pub fn symbol(self) -> &'static str {
        match self {
            Layer::TokenEmbedding => "E",
            Layer::PositionEmbedding => "P",
            Layer::Query => "q",
            Layer::Value => "V",
            Layer::Receptors => "W",
            Layer::Assemblers => "U",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Layer> {
        Layer::ALL.into_iter().find(|l| l.symbol() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `p × d`, row `v` is `E(v)`; also the unembedding.
    pub token_embedding: Matrix,
    /// `L × d`, row `t` is `P(t)`.
    pub position_embedding: Matrix,
    pub query: Vec<f64>,
    /// `d × d`
    pub value: Matrix,
    /// `h × d`, rows are the receptors `w_i`.
    pub receptors: Matrix,
    /// `d × h`, columns are the assemblers `u_i`.
    pub assemblers: Matrix,
}

impl ModelParams {
    pub fn zeros(hyper: &HyperParams) -> Self {
        let (d, h) = (hyper.embed_dim, hyper.hidden);
        Self {
            token_embedding: Matrix::zeros(hyper.task.vocab, d),
            position_embedding: Matrix::zeros(hyper.task.seq_len, d),
            query: vec![0.0; d],
            value: Matrix::zeros(d, d),
            receptors: Matrix::zeros(h, d),
            assemblers: Matrix::zeros(d, h),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            token_embedding: Matrix::zeros(self.vocab(), self.embed_dim()),
            position_embedding: Matrix::zeros(self.seq_len(), self.embed_dim()),
            query: vec![0.0; self.embed_dim()],
            value: Matrix::zeros(self.embed_dim(), self.embed_dim()),
            receptors: Matrix::zeros(self.hidden(), self.embed_dim()),
            assemblers: Matrix::zeros(self.embed_dim(), self.hidden()),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.query.len()
    }

    pub fn hidden(&self) -> usize {
        self.receptors.rows()
    }

    pub fn vocab(&self) -> usize {
        self.token_embedding.rows()
    }

    pub fn seq_len(&self) -> usize {
        self.position_embedding.rows()
    }

    pub fn tensor(&self, layer: Layer) -> &[f64] {
        match layer {
            Layer::TokenEmbedding => self.token_embedding.as_slice(),
            Layer::PositionEmbedding => self.position_embedding.as_slice(),
            Layer::Query => &self.query,
            Layer::Value => self.value.as_slice(),
            Layer::Receptors => self.receptors.as_slice(),
            Layer::Assemblers => self.assemblers.as_slice(),
        }
    }

    pub fn tensor_mut(&mut self, layer: Layer) -> &mut [f64] {
        match layer {
            Layer::TokenEmbedding => self.token_embedding.as_mut_slice(),
            Layer::PositionEmbedding => self.position_embedding.as_mut_slice(),
            Layer::Query => &mut self.query,
            Layer::Value => self.value.as_mut_slice(),
            Layer::Receptors => self.receptors.as_mut_slice(),
            Layer::Assemblers => self.assemblers.as_mut_slice(),
        }
    }

    /// Flattened Euclidean norm over the given tensors.
    pub fn norm_over(&self, layers: &[Layer]) -> f64 {
        layers.iter().map(|&l| self.tensor(l).iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        Layer::ALL.iter().all(|&l| self.tensor(l).iter().all(|x| x.is_finite()))
    }

    /// Checks tensor shapes against `hyper`.
    pub fn check_shapes(&self, hyper: &HyperParams) -> Result<(), ModelError> {
        let (d, h) = (hyper.embed_dim, hyper.hidden);
        let ok = self.token_embedding.shape() == (hyper.task.vocab, d)
            && self.position_embedding.shape() == (hyper.task.seq_len, d)
            && self.query.len() == d
            && self.value.shape() == (d, d)
            && self.receptors.shape() == (h, d)
            && self.assemblers.shape() == (d, h);
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidHyper("parameter shapes do not match the hyperparameters".into()))
        }
    }
}

/// Wire form: nested row arrays keyed by tensor symbol.
#[derive(Serialize, Deserialize)]
struct ParamsRecord {
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    q: Vec<f64>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
}

impl Serialize for ModelParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ParamsRecord {
            e: self.token_embedding.to_rows(),
            p: self.position_embedding.to_rows(),
            q: self.query.clone(),
            v: self.value.to_rows(),
            w: self.receptors.to_rows(),
            u: self.assemblers.to_rows(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let r = ParamsRecord::deserialize(deserializer)?;
        let m = |rows: &[Vec<f64>], name: &str| {
            Matrix::from_rows(rows).map_err(|e| D::Error::custom(format!("{name}: {e}")))
        };
        let params = ModelParams {
            token_embedding: m(&r.e, "E")?,
            position_embedding: m(&r.p, "P")?,
            query: r.q,
            value: m(&r.v, "V")?,
            receptors: m(&r.w, "W")?,
            assemblers: m(&r.u, "U")?,
        };
        let d = params.embed_dim();
        let h = params.hidden();
        let consistent = [params.token_embedding.cols(), params.position_embedding.cols(), params.receptors.cols()]
            .iter()
            .all(|&c| c == d)
            && params.value.shape() == (d, d)
            && params.assemblers.shape() == (d, h);
        if !consistent {
            return Err(D::Error::custom("inconsistent parameter shapes"));
        }
        Ok(params)
    }
}

/// Standard-normal embeddings; `U(−1/√fan_in, 1/√fan_in)` for q, V, W, U.
///
/// Each tensor draws from its own seed stream, so the embeddings and the
/// attention weights of a seed do not depend on `h`.
pub fn init_params(hyper: &HyperParams, seed: u64) -> Result<ModelParams, ModelError> {
    hyper.validate()?;
    let (d, h) = (hyper.embed_dim, hyper.hidden);
    let normal = |rows, cols, tensor| {
        let mut rng = stream_rng(seed, Stream::Init(tensor));
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    };
    let uniform = |rows, cols, fan_in: usize, tensor| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new(-bound, bound).expect("bound is positive");
        let mut rng = stream_rng(seed, Stream::Init(tensor));
        Matrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
    };
    Ok(ModelParams {
        token_embedding: normal(hyper.task.vocab, d, 0),
        position_embedding: normal(hyper.task.seq_len, d, 1),
        query: uniform(1, d, d, 2).into_vec(),
        value: uniform(d, d, d, 3),
        receptors: uniform(h, d, d, 4),
        assemblers: uniform(d, h, h, 5),
    })
}

/// Standard-normal rows for `extra` new tokens, from the expansion stream.
pub fn fresh_token_rows(extra: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = stream_rng(seed, Stream::Expansion);
    Matrix::from_fn(extra, d, |_, _| rng.sample(StandardNormal))
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `L × d` pre-normalization embeddings `E(x_t) + P(t)`.
    pub raw: Matrix,
    pub raw_norm: Vec<f64>,
    /// `L × d`, row `t` is `z_t`.
    pub z: Matrix,
    /// Attention logits `z_tᵀq/√d`.
    pub scores: Vec<f64>,
    pub attn: Vec<f64>,
    /// `z · attn`, the attended point before the value map.
    pub context: Vec<f64>,
    pub xi: Vec<f64>,
    pub xi_norm: f64,
    pub xi_bar: Vec<f64>,
    /// `W ξ̄`
    pub act_pre: Vec<f64>,
    /// `σ(W ξ̄)`
    pub act: Vec<f64>,
    pub psi: Vec<f64>,
    pub zeta: Vec<f64>,
    pub mu: Vec<f64>,
}

impl ForwardTrace {
    pub fn new(seq_len: usize, d: usize, h: usize, p: usize) -> Self {
        Self {
            raw: Matrix::zeros(seq_len, d),
            raw_norm: vec![0.0; seq_len],
            z: Matrix::zeros(seq_len, d),
            scores: vec![0.0; seq_len],
            attn: vec![0.0; seq_len],
            context: vec![0.0; d],
            xi: vec![0.0; d],
            xi_norm: 0.0,
            xi_bar: vec![0.0; d],
            act_pre: vec![0.0; h],
            act: vec![0.0; h],
            psi: vec![0.0; d],
            zeta: vec![0.0; p],
            mu: vec![0.0; p],
        }
    }

    pub fn for_params(params: &ModelParams) -> Self {
        Self::new(params.seq_len(), params.embed_dim(), params.hidden(), params.vocab())
    }

    /// Cross-entropy of this prediction against `label`.
    pub fn loss(&self, label: usize) -> f64 {
        log_sum_exp(&self.zeta) - self.zeta[label]
    }

    /// Arg-max class, ties toward the smallest index.
    pub fn prediction(&self) -> usize {
        argmax(&self.mu)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn forward(params: &ModelParams, tokens: &[usize], norm: NormVariant) -> ForwardTrace {
    let mut trace = ForwardTrace::for_params(params);
    forward_into(params, tokens, norm, &mut trace);
    trace
}

/// Stage 1: normalized embeddings. Depends only on `E`, `P`.
pub fn embed_into(params: &ModelParams, tokens: &[usize], norm: NormVariant, trace: &mut ForwardTrace) {
    for (t, &token) in tokens.iter().enumerate() {
        let raw = trace.raw.row_mut(t);
        for ((r, e), p) in raw.iter_mut().zip(params.token_embedding.row(token)).zip(params.position_embedding.row(t)) {
            *r = e + p;
        }
        trace.raw_norm[t] = norm.apply_into(trace.raw.row(t), trace.z.row_mut(t));
    }
}

/// Stage 2: attention and the sequence embedding `ξ`, from a trace whose `z` is filled.
pub fn attend_into(params: &ModelParams, trace: &mut ForwardTrace) {
    let d = params.embed_dim();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    for t in 0..trace.scores.len() {
        trace.scores[t] = dot(trace.z.row(t), &params.query) * inv_sqrt_d;
    }
    softmax_into(&trace.scores, &mut trace.attn);
    trace.context.iter_mut().for_each(|c| *c = 0.0);
    for t in 0..trace.attn.len() {
        axpy(trace.attn[t], trace.z.row(t), &mut trace.context);
    }
    for i in 0..d {
        trace.xi[i] = dot(params.value.row(i), &trace.context);
    }
}

/// Stage 3: MLP, logits and probabilities, from a trace whose `ξ` is filled.
pub fn head_into(params: &ModelParams, norm: NormVariant, trace: &mut ForwardTrace) {
    trace.xi_norm = norm.apply_into(&trace.xi, &mut trace.xi_bar);
    for i in 0..params.hidden() {
        let a = dot(params.receptors.row(i), &trace.xi_bar);
        trace.act_pre[i] = a;
        trace.act[i] = gelu(a);
    }
    for r in 0..params.embed_dim() {
        trace.psi[r] = trace.xi[r] + dot(params.assemblers.row(r), &trace.act);
    }
    for v in 0..params.vocab() {
        trace.zeta[v] = dot(params.token_embedding.row(v), &trace.psi);
    }
    softmax_into(&trace.zeta, &mut trace.mu);
}

/// Full forward pass into a reusable trace.
pub fn forward_into(params: &ModelParams, tokens: &[usize], norm: NormVariant, trace: &mut ForwardTrace) {
    embed_into(params, tokens, norm, trace);
    attend_into(params, trace);
    head_into(params, norm, trace);
}

/// Mean loss, accuracy and mean `1 − μ_y` over a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub error_term: f64,
}

pub fn evaluate(params: &ModelParams, data: &Dataset, norm: NormVariant) -> Result<Evaluation, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut trace = ForwardTrace::for_params(params);
    let (mut loss, mut correct, mut error) = (0.0, 0usize, 0.0);
    for (x, y) in data.iter() {
        forward_into(params, x, norm, &mut trace);
        loss += trace.loss(y);
        error += 1.0 - trace.mu[y];
        correct += usize::from(trace.prediction() == y);
    }
    let n = data.len() as f64;
    Ok(Evaluation { loss: loss / n, accuracy: correct as f64 / n, error_term: error / n })
}

/// `(mean cross-entropy, accuracy)`.
pub fn batch_eval(params: &ModelParams, data: &Dataset, norm: NormVariant) -> Result<(f64, f64), ModelError> {
    evaluate(params, data, norm).map(|e| (e.loss, e.accuracy))
}

/// Query magnitude used by the idealized construction.
pub const IDEAL_QUERY_SCALE: f64 = 50.0;

/// Hand-built clustering head for `d = 2`, with a zero MLP.
///
/// Prefix positions share `P = (0, 1)` and suffix positions share
/// `P = (0, −1)`, so the normalized embeddings only depend on the token and
/// on which side of `k` the position lies. The query points up with length
/// 50, which pushes all attention onto the prefix; `V = I`. Token `v` sits at
/// `(6^v / (1 + 6^p), 0)`, and the constructor verifies that distinct prefix
/// classes land on distinct sequence embeddings.
pub fn build_idealized_embedding(hyper: &HyperParams) -> Result<ModelParams, ModelError> {
    hyper.validate()?;
    if hyper.embed_dim != 2 {
        return Err(ModelError::InvalidHyper(format!(
            "the idealized construction needs d = 2, got {}",
            hyper.embed_dim
        )));
    }
    let spec = hyper.task;
    let p = spec.vocab;
    let scale = 1.0 + 6f64.powi(p as i32);
    let mut params = ModelParams::zeros(hyper);
    for v in 0..p {
        params.token_embedding[(v, 0)] = 6f64.powi(v as i32) / scale;
    }
    for t in 0..spec.seq_len {
        params.position_embedding[(t, 1)] = if t < spec.prefix_len { 1.0 } else { -1.0 };
    }
    params.query = vec![0.0, IDEAL_QUERY_SCALE];
    params.value = Matrix::identity(2);

    let reps = class_representatives(&spec)?;
    let embeddings: Vec<Vec<f64>> =
        reps.iter().map(|(_, x)| forward(&params, x, hyper.norm).xi).collect();
    for i in 0..reps.len() {
        for j in i + 1..reps.len() {
            let gap = distance(&embeddings[i], &embeddings[j]);
            if gap < 1e-6 {
                return Err(ModelError::ClusterCollision {
                    a: reps[i].0 .0.clone(),
                    b: reps[j].0 .0.clone(),
                    distance: gap,
                });
            }
        }
    }
    Ok(params)
}

/// One sequence per prefix class (first prefix found, zero suffix).
fn class_representatives(spec: &TaskSpec) -> Result<Vec<(PrefixClass, Vec<usize>)>, TaskError> {
    let mut seen = std::collections::BTreeMap::new();
    for prefix in all_prefixes(spec) {
        let mut x = prefix;
        x.resize(spec.seq_len, 0);
        let class = prefix_class(&x, spec)?;
        seen.entry(class).or_insert(x);
    }
    Ok(seen.into_iter().collect())
}
