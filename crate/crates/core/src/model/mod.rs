//! Spiking feature extractor and the two score-estimation heads.
//!
//! Coordinates enter once through a real-valued embedding layer whose output
//! is repeated over the `T` time steps; everything after it up to the score
//! head runs on spikes. Features are decoded as temporal firing rates.
//!
//! The hybrid head is a ReLU MLP on `[z, h_i]` where `z = x − x_i`. The pure
//! head replaces ReLU with spiking neurons, encodes the query through the
//! embedding spikes of both query and anchor, and reads out with a
//! non-spiking linear layer averaged over time.

mod calibrate;
mod checkpoint;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::energy::{InputKind, LayerTrace};
use crate::error::{Error, Result};
use crate::graph::{dense_block_forward, param, BlockConfig, KnnGraph, Pooling};
use crate::neuron::{spike_layer, Mode, NeuronConfig};
use crate::spatial::{norm, sub, Point3};

pub use calibrate::{calibrate_firing, firing_rates, spiking_layers};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};

/// Input positions may exceed the unit ball by this much.
pub const RADIUS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Pure,
    #[default]
    Hybrid,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure" => Ok(Variant::Pure),
            "hybrid" => Ok(Variant::Hybrid),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub variant: Variant,
    pub t_steps: usize,
    pub neuron: NeuronConfig,
    pub k: usize,
    pub num_blocks: usize,
    pub block_layers: usize,
    pub growth: usize,
    pub pooling: Pooling,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub score_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Hybrid,
            t_steps: 4,
            neuron: NeuronConfig::default(),
            k: 16,
            num_blocks: 3,
            block_layers: 3,
            growth: 12,
            pooling: Pooling::Mean,
            embed_dim: 24,
            feature_dim: 64,
            score_hidden: vec![128, 64],
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("t_steps", self.t_steps),
            ("k", self.k),
            ("block_layers", self.block_layers),
            ("growth", self.growth),
            ("embed_dim", self.embed_dim),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.score_hidden.is_empty() || self.score_hidden.contains(&0) {
            return Err(Error::Config("score_hidden needs at least one positive width".into()));
        }
        self.neuron.validate()
    }

    pub fn block(&self) -> BlockConfig {
        BlockConfig { layers: self.block_layers, growth: self.growth, pooling: self.pooling }
    }

    /// Channel count entering block `r` (and, for `r = num_blocks`, the head).
    pub fn block_channels(&self, r: usize) -> usize {
        self.embed_dim + r * self.block_layers * self.growth
    }

    /// Input width of the first score layer.
    pub fn score_input_dim(&self) -> usize {
        match self.variant {
            Variant::Hybrid => 3 + self.feature_dim,
            Variant::Pure => 2 * self.embed_dim + self.feature_dim,
        }
    }

    /// Every parameter name with its shape, in a fixed order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut fc = |name: String, fan_in: usize, fan_out: usize| {
            out.push((format!("{name}.weight"), vec![fan_in, fan_out]));
            out.push((format!("{name}.bias"), vec![fan_out]));
        };
        fc("embed".into(), 3, self.embed_dim);
        let block = self.block();
        for r in 0..self.num_blocks {
            for (l, s) in block.weight_shapes(self.block_channels(r)).into_iter().enumerate() {
                fc(format!("block{r}.fc{l}"), s[0], s[1]);
            }
        }
        fc("head".into(), self.block_channels(self.num_blocks), self.feature_dim);
        let mut widths = vec![self.score_input_dim()];
        widths.extend(&self.score_hidden);
        widths.push(3);
        for (m, w) in widths.windows(2).enumerate() {
            fc(format!("score.fc{m}"), w[0], w[1]);
        }
        out
    }
}

/// Learnable tensors together with the architecture that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ArchConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// He-uniform weights `U(±√(6/fan_in))` and zero biases.
    pub fn init(config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.parameter_shapes() {
            let t = if name.ends_with(".weight") {
                let bound = (6.0 / shape[0] as f64).sqrt();
                let n = shape[0] * shape[1];
                Tensor::from_parts(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect())
            } else {
                Tensor::zeros(&shape)
            };
            tensors.insert(name, t);
        }
        Ok(Self { config, tensors })
    }

    pub fn zeros(config: ArchConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config.parameter_shapes().into_iter().map(|(name, shape)| (name, Tensor::zeros(&shape))).collect();
        Ok(Self { config, tensors })
    }

    /// Validates names and shapes against the config.
    pub fn from_tensors(config: ArchConfig, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let mut ordered = BTreeMap::new();
        for (name, shape) in config.parameter_shapes() {
            let t = tensors.remove(&name).ok_or_else(|| crate::CheckpointError::MissingTensor(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(crate::CheckpointError::ShapeMismatch { name, found: t.shape().to_vec(), expected: shape }.into());
            }
            ordered.insert(name, t);
        }
        if let Some(name) = tensors.into_keys().next() {
            return Err(crate::CheckpointError::UnexpectedTensor(name).into());
        }
        Ok(Self { config, tensors: ordered })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Per-forward-pass state: neuron mode, the noise generator and optional
/// instrumentation.
pub struct ForwardCtx {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
    trace: Option<Vec<LayerTrace>>,
    activations: Option<Vec<(String, Tensor)>>,
}

impl ForwardCtx {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self::with_rng(mode, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(mode: Mode, rng: ChaCha8Rng) -> Self {
        Self { mode, rng, trace: None, activations: None }
    }

    /// Records per-layer operation counts for energy profiling.
    pub fn traced(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Keeps a copy of every neuron layer's output.
    pub fn keep_activations(mut self) -> Self {
        self.activations = Some(Vec::new());
        self
    }

    pub fn tracing(&self) -> bool {
        self.trace.is_some()
    }

    pub fn record(&mut self, layer: LayerTrace) {
        if let Some(t) = &mut self.trace {
            t.push(layer);
        }
    }

    pub fn take_trace(&mut self) -> Vec<LayerTrace> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn take_activations(&mut self) -> Vec<(String, Tensor)> {
        self.activations.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Neuron layer over time-major rows, logged under `name` when requested.
    pub fn spike(&mut self, tape: &mut Tape, pre: Var, t_steps: usize, neuron: &NeuronConfig, name: &str) -> Result<Var> {
        let cfg = neuron.with_mode(self.mode);
        let out = spike_layer(tape, pre, t_steps, &cfg, &mut self.rng)?;
        if let Some(a) = &mut self.activations {
            a.push((name.to_string(), tape.value(out).clone()));
        }
        Ok(out)
    }
}

fn nonzeros(t: &Tensor) -> f64 {
    t.data().iter().filter(|v| **v != 0.0).count() as f64
}

fn fc_params(tape: &mut Tape, params: &ModelParams, name: &str) -> Result<(Var, Var)> {
    let w = tape.param(&format!("{name}.weight"), param(&params.tensors, &format!("{name}.weight"))?);
    let b = tape.param(&format!("{name}.bias"), param(&params.tensors, &format!("{name}.bias"))?);
    Ok((w, b))
}

/// Tape handles produced by [`extract_features`].
#[derive(Clone, Copy, Debug)]
pub struct Features {
    /// Rate-decoded features, `N×D`.
    pub h: Var,
    /// Embedding-layer spikes, `(T·N)×C0`.
    pub embed_spikes: Var,
    /// Feature-head spikes, `(T·N)×D`.
    pub head_spikes: Var,
    pub n: usize,
}

/// Embedding spikes for positions given in a patch frame.
fn embed(tape: &mut Tape, params: &ModelParams, points: &[Point3], ctx: &mut ForwardCtx, name: &str) -> Result<Var> {
    let cfg = params.config();
    let coords: Vec<f64> = points.iter().flatten().copied().collect();
    let x = tape.input(Tensor::from_parts(vec![points.len(), 3], coords));
    let (w, b) = fc_params(tape, params, "embed")?;
    let pre = tape.linear(x, w, b)?;
    let pre = tape.tile(pre, cfg.t_steps)?;
    ctx.record(LayerTrace {
        name: name.to_string(),
        fan_in: 3,
        fan_out: cfg.embed_dim,
        rows: points.len(),
        t_steps: cfg.t_steps,
        input: InputKind::Real,
        nonzero: (3 * points.len() * cfg.t_steps) as f64,
    });
    ctx.spike(tape, pre, cfg.t_steps, &cfg.neuron, name)
}

/// Spiking feature extraction over one patch.
///
/// `points` must lie in the unit ball; `graph` is the kNN graph over them.
pub fn extract_features(
    tape: &mut Tape,
    params: &ModelParams,
    points: &[Point3],
    graph: &KnnGraph,
    ctx: &mut ForwardCtx,
) -> Result<Features> {
    let cfg = params.config().clone();
    if graph.len() != points.len() {
        return Err(Error::shape("extract_features", format!("{} points, graph over {}", points.len(), graph.len())));
    }
    if let Some(p) = points.iter().find(|p| !(norm(p) <= 1.0 + RADIUS_TOLERANCE)) {
        return Err(Error::Contract(format!("input point {p:?} lies outside the unit ball")));
    }
    let t = cfg.t_steps;
    let s0 = embed(tape, params, points, ctx, "embed")?;
    let block = cfg.block();
    let mut s = s0;
    for r in 0..cfg.num_blocks {
        s = dense_block_forward(tape, s, graph, t, params.tensors(), &format!("block{r}"), &block, &cfg.neuron, ctx)?;
        if let Some(a) = ctx.activations.as_mut() {
            a.push((format!("block{r}"), tape.value(s).clone()));
        }
    }
    let (w, b) = fc_params(tape, params, "head")?;
    ctx.record(LayerTrace {
        name: "head".into(),
        fan_in: cfg.block_channels(cfg.num_blocks),
        fan_out: cfg.feature_dim,
        rows: points.len(),
        t_steps: t,
        input: InputKind::Spike,
        nonzero: nonzeros(tape.value(s)),
    });
    let pre = tape.linear(s, w, b)?;
    let sh = ctx.spike(tape, pre, t, &cfg.neuron, "head")?;
    let h = tape.block_mean(sh, t)?;
    Ok(Features { h, embed_spikes: s0, head_spikes: sh, n: points.len() })
}

/// A score evaluation `Sc_anchor(pos)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Query {
    /// Patch-local index of the anchor point whose feature conditions the score.
    pub anchor: usize,
    /// Query position in the patch frame.
    pub pos: Point3,
    /// Patch-local index when the query is itself a patch point.
    pub point: Option<usize>,
}

impl Query {
    pub fn at_point(anchor: usize, point: usize, points: &[Point3]) -> Self {
        Self { anchor, pos: points[point], point: Some(point) }
    }
}

/// Predicted scores for a batch of queries, `Q×3`.
pub fn estimate_scores(
    tape: &mut Tape,
    params: &ModelParams,
    feats: &Features,
    points: &[Point3],
    queries: &[Query],
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    if queries.is_empty() {
        return Err(Error::shape("estimate_scores", "no queries"));
    }
    if let Some(q) = queries.iter().find(|q| q.anchor >= feats.n || q.point.is_some_and(|p| p >= feats.n)) {
        return Err(Error::shape("estimate_scores", format!("query {q:?} outside a patch of {}", feats.n)));
    }
    match params.config().variant {
        Variant::Hybrid => hybrid_head(tape, params, feats, points, queries, ctx),
        Variant::Pure => pure_head(tape, params, feats, queries, ctx),
    }
}

fn hybrid_head(
    tape: &mut Tape,
    params: &ModelParams,
    feats: &Features,
    points: &[Point3],
    queries: &[Query],
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let cfg = params.config();
    let d = cfg.feature_dim;
    let anchors: Vec<usize> = queries.iter().map(|q| q.anchor).collect();
    let z: Vec<f64> = queries.iter().flat_map(|q| sub(&q.pos, &points[q.anchor])).collect();
    let z = tape.input(Tensor::from_parts(vec![queries.len(), 3], z));

    let (w0, b0) = fc_params(tape, params, "score.fc0")?;
    let wz = tape.slice_rows(w0, 0, 3)?;
    let wh = tape.slice_rows(w0, 3, 3 + d)?;
    // The feature half of the first layer depends only on the anchor.
    let per_point = tape.matmul(feats.h, wh)?;
    let from_h = tape.gather_rows(per_point, &anchors)?;
    let from_z = tape.matmul(z, wz)?;
    let pre = tape.add(from_z, from_h)?;
    let mut x = tape.add_bias(pre, b0)?;
    let layers = cfg.score_hidden.len() + 1;
    let mut fan_in = 3 + d;
    for m in 0..layers {
        let fan_out = if m + 1 < layers { cfg.score_hidden[m] } else { 3 };
        ctx.record(LayerTrace {
            name: format!("score.fc{m}"),
            fan_in,
            fan_out,
            rows: queries.len(),
            t_steps: 1,
            input: InputKind::Dense,
            nonzero: (fan_in * queries.len()) as f64,
        });
        if m > 0 {
            let (w, b) = fc_params(tape, params, &format!("score.fc{m}"))?;
            x = tape.linear(x, w, b)?;
        }
        if m + 1 < layers {
            x = tape.relu(x);
        }
        fan_in = fan_out;
    }
    Ok(x)
}

fn pure_head(tape: &mut Tape, params: &ModelParams, feats: &Features, queries: &[Query], ctx: &mut ForwardCtx) -> Result<Var> {
    let cfg = params.config().clone();
    let (t, n, c0, d) = (cfg.t_steps, feats.n, cfg.embed_dim, cfg.feature_dim);
    let nq = queries.len();

    // Queries that are not patch points get their own embedding spikes,
    // stored after the patch rows.
    let free: Vec<Point3> = queries.iter().filter(|q| q.point.is_none()).map(|q| q.pos).collect();
    let s0 = if free.is_empty() {
        feats.embed_spikes
    } else {
        let extra = embed(tape, params, &free, ctx, "score.embed")?;
        tape.concat(&[feats.embed_spikes, extra], 0)?
    };
    let mut q_rows = Vec::with_capacity(t * nq);
    let mut a_rows = Vec::with_capacity(t * nq);
    for step in 0..t {
        let mut f = 0;
        for q in queries {
            q_rows.push(match q.point {
                Some(p) => step * n + p,
                None => {
                    f += 1;
                    t * n + step * free.len() + f - 1
                }
            });
            a_rows.push(step * n + q.anchor);
        }
    }

    let (w0, b0) = fc_params(tape, params, "score.fc0")?;
    let wq = tape.slice_rows(w0, 0, c0)?;
    let wa = tape.slice_rows(w0, c0, 2 * c0)?;
    let wh = tape.slice_rows(w0, 2 * c0, 2 * c0 + d)?;
    if ctx.tracing() {
        let s0v = tape.value(s0);
        let shv = tape.value(feats.head_spikes);
        let row_nnz = |m: &Tensor, r: usize| m.row(r).iter().filter(|v| **v != 0.0).count();
        let nnz: usize = q_rows.iter().zip(&a_rows).map(|(&qr, &ar)| row_nnz(s0v, qr) + row_nnz(s0v, ar) + row_nnz(shv, ar)).sum();
        ctx.record(LayerTrace {
            name: "score.fc0".into(),
            fan_in: 2 * c0 + d,
            fan_out: cfg.score_hidden[0],
            rows: nq,
            t_steps: t,
            input: InputKind::Spike,
            nonzero: nnz as f64,
        });
    }
    let pq = tape.matmul(s0, wq)?;
    let pq = tape.gather_rows(pq, &q_rows)?;
    let pa = tape.matmul(feats.embed_spikes, wa)?;
    let pa = tape.gather_rows(pa, &a_rows)?;
    let ph = tape.matmul(feats.head_spikes, wh)?;
    let ph = tape.gather_rows(ph, &a_rows)?;
    let pre = tape.add(pq, pa)?;
    let pre = tape.add(pre, ph)?;
    let pre = tape.add_bias(pre, b0)?;
    let mut x = ctx.spike(tape, pre, t, &cfg.neuron, "score.fc0")?;

    let layers = cfg.score_hidden.len() + 1;
    for m in 1..layers {
        let fan_in = cfg.score_hidden[m - 1];
        let fan_out = if m + 1 < layers { cfg.score_hidden[m] } else { 3 };
        ctx.record(LayerTrace {
            name: format!("score.fc{m}"),
            fan_in,
            fan_out,
            rows: nq,
            t_steps: t,
            input: InputKind::Spike,
            nonzero: nonzeros(tape.value(x)),
        });
        let (w, b) = fc_params(tape, params, &format!("score.fc{m}"))?;
        x = tape.linear(x, w, b)?;
        if m + 1 < layers {
            x = ctx.spike(tape, x, t, &cfg.neuron, &format!("score.fc{m}"))?;
        }
    }
    tape.block_mean(x, t)
}

/// Builds the patch graph, extracts features and evaluates the queries.
pub fn predict_patch(params: &ModelParams, points: &[Point3], queries: &[Query], ctx: &mut ForwardCtx) -> Result<Vec<Point3>> {
    let graph = KnnGraph::build(points, params.config().k)?;
    let mut tape = Tape::new();
    let feats = extract_features(&mut tape, params, points, &graph, ctx)?;
    let sc = estimate_scores(&mut tape, params, &feats, points, queries, ctx)?;
    Ok(tape.value(sc).data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Rate-decoded features `N×D` of one patch.
pub fn patch_features(params: &ModelParams, points: &[Point3], ctx: &mut ForwardCtx) -> Result<Tensor> {
    let graph = KnnGraph::build(points, params.config().k)?;
    let mut tape = Tape::new();
    let feats = extract_features(&mut tape, params, points, &graph, ctx)?;
    Ok(tape.value(feats.h).clone())
}
