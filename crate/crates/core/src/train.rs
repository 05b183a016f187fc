//! Ground-truth scores, the patch score-matching loss and the training loop.
//!
//! The score target for a point is its displacement to the nearest clean
//! point. Each anchor `x_i` of a noisy patch is compared against queries
//! `x_j` drawn uniformly from `N(i)`: `x_i` and its nearest noisy neighbours.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::KnnGraph;
use crate::io::{add_noise, unit_sphere_transform, NoiseSpec, PointCloud, Transform};
use crate::model::{calibrate_firing, estimate_scores, extract_features, ArchConfig, ForwardCtx, ModelParams, Query};
use crate::neuron::Mode;
use crate::patch::{clean_patch, extract_patch};
use crate::spatial::{dist2, sub, KdTree, Point3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Queries drawn per anchor from `N(i)`.
    pub loss_samples: usize,
    /// Noisy neighbours in `N(i)` besides the anchor itself.
    pub loss_neighbors: usize,
    pub patch_size: usize,
    /// Clean patch radius as a multiple of the noisy patch radius.
    pub clean_radius_factor: f64,
    /// Draw fresh Gaussian noise for every epoch after the first.
    pub resample_noise: bool,
    pub val_patches: usize,
    pub val_interval: usize,
    pub log_interval: usize,
    pub divergence_threshold: f64,
    /// Target firing rate for rescaling fresh weights before training; `None` skips it.
    pub calibration_rate: Option<f64>,
    pub calibration_patches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            iterations: 2000,
            seed: 0,
            loss_samples: 8,
            loss_neighbors: 8,
            patch_size: 512,
            clean_radius_factor: 1.2,
            resample_noise: true,
            val_patches: 4,
            val_interval: 100,
            log_interval: 10,
            divergence_threshold: 1e6,
            calibration_rate: Some(0.15),
            calibration_patches: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("loss_samples", self.loss_samples),
            ("patch_size", self.patch_size),
            ("val_interval", self.val_interval),
            ("log_interval", self.log_interval),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("train.{name} must be positive")));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("train.lr {} must be finite and >= 0", self.lr)));
        }
        if !(self.clean_radius_factor > 0.0) {
            return Err(Error::Config("train.clean_radius_factor must be positive".into()));
        }
        if let Some(r) = self.calibration_rate {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("train.calibration_rate {r} must lie in (0, 1)")));
            }
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Config("train.divergence_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// A clean cloud and one noisy observation of it.
#[derive(Clone, Debug)]
pub struct TrainingCloud {
    pub name: String,
    pub clean: Vec<Point3>,
    pub noisy: Vec<Point3>,
    /// Noise level of `noisy`, relative to the clean unit-sphere radius.
    pub noise_std: f64,
}

/// Noisy patch and its clean counterpart in the same frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub noisy: Vec<Point3>,
    pub clean: Vec<Point3>,
    /// Patch-local index of the seed point.
    pub center: usize,
    /// Normalization of the parent cloud.
    pub transform: Transform,
}

/// Displacement from `x` to its nearest clean point; ties go to the lower index.
pub fn ground_truth_score(x: &Point3, clean: &[Point3]) -> Result<Point3> {
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in clean.iter().enumerate() {
        let d = dist2(x, c);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    let (_, i) = best.ok_or_else(|| Error::Contract("ground truth needs a nonempty clean patch".into()))?;
    Ok(sub(&clean[i], x))
}

/// How queries are drawn around each anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeighborSampling {
    pub neighbors: usize,
    /// Queries per anchor; at least `neighbors + 1` means all of `N(i)`.
    pub count: usize,
}

/// `N(i)` for every patch point: the point itself, then its nearest neighbours.
pub fn neighborhoods(points: &[Point3], neighbors: usize) -> Vec<Vec<usize>> {
    let tree = KdTree::new(points);
    (0..points.len())
        .map(|i| {
            let mut n = vec![i];
            n.extend(tree.knn_filtered(&points[i], neighbors, |j| j == i).iter().map(|nb| nb.index));
            n
        })
        .collect()
}

/// Queries for one patch. Sampling is without replacement within `N(i)`.
pub fn sample_queries(pair: &PatchPair, sampling: NeighborSampling, rng: &mut impl Rng) -> Vec<Query> {
    let hoods = neighborhoods(&pair.noisy, sampling.neighbors);
    let mut queries = Vec::new();
    for (i, hood) in hoods.iter().enumerate() {
        if sampling.count >= hood.len() {
            queries.extend(hood.iter().map(|&j| Query::at_point(i, j, &pair.noisy)));
        } else {
            let picks = sample(rng, hood.len(), sampling.count);
            queries.extend(picks.iter().map(|s| Query::at_point(i, hood[s], &pair.noisy)));
        }
    }
    queries
}

/// Score targets for the queries of a patch.
pub fn query_targets(pair: &PatchPair, queries: &[Query]) -> Result<Vec<Point3>> {
    if pair.clean.is_empty() {
        return Err(Error::Contract("ground truth needs a nonempty clean patch".into()));
    }
    let tree = KdTree::new(&pair.clean);
    Ok(queries
        .iter()
        .map(|q| {
            let nn = tree.nearest(&q.pos).expect("nonempty clean patch");
            sub(&pair.clean[nn.index], &q.pos)
        })
        .collect())
}

/// `Σ ||pred − target||² / denom` on the tape.
pub fn score_loss(tape: &mut Tape, pred: Var, target: &[Point3], denom: f64) -> Result<Var> {
    let t: Vec<f64> = target.iter().flatten().copied().collect();
    let t = tape.input(Tensor::new(vec![target.len(), 3], t)?);
    let d = tape.sub(pred, t)?;
    let sq = tape.square(d);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / denom))
}

/// Loss value and (optionally) parameter gradients of one batch.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub loss: f64,
    /// Each patch's contribution to `loss`.
    pub per_patch: Vec<f64>,
    pub grads: BTreeMap<String, Tensor>,
}

/// Mean squared score error over every (anchor, query) pair of the batch.
/// Non-finite losses report the patch's position in `batch`.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[PatchPair],
    sampling: NeighborSampling,
    ctx: &mut ForwardCtx,
    rng: &mut impl Rng,
    with_grads: bool,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let k = params.config().k;
    let mut queries = Vec::with_capacity(batch.len());
    for pair in batch {
        if pair.noisy.len() <= k {
            return Err(Error::Config(format!("patch of {} points cannot support k = {k}", pair.noisy.len())));
        }
        queries.push(sample_queries(pair, sampling, rng));
    }
    let denom: usize = queries.iter().map(Vec::len).sum();
    let mut out = BatchLoss { loss: 0.0, per_patch: Vec::with_capacity(batch.len()), grads: BTreeMap::new() };
    for (p, (pair, qs)) in batch.iter().zip(&queries).enumerate() {
        let targets = query_targets(pair, qs)?;
        let graph = KnnGraph::build(&pair.noisy, k)?;
        let mut tape = Tape::new();
        let feats = extract_features(&mut tape, params, &pair.noisy, &graph, ctx)?;
        let pred = estimate_scores(&mut tape, params, &feats, &pair.noisy, qs, ctx)?;
        let loss = score_loss(&mut tape, pred, &targets, denom as f64)?;
        let value = tape.value(loss).item().expect("scalar loss");
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { patch: p });
        }
        out.loss += value;
        out.per_patch.push(value);
        if with_grads {
            for (name, g) in tape.backward(loss)?.into_params() {
                match out.grads.get_mut(&name) {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                    None => {
                        out.grads.insert(name, g);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Normalized clean/noisy clouds for one epoch.
struct EpochCloud {
    clean: Vec<Point3>,
    noisy: Vec<Point3>,
    transform: Transform,
}

impl EpochCloud {
    /// Both clouds in the noisy cloud's unit-sphere frame.
    fn new(clean: &[Point3], noisy: &[Point3]) -> Self {
        let t = unit_sphere_transform(noisy);
        Self { clean: clean.iter().map(|p| t.apply(p)).collect(), noisy: noisy.iter().map(|p| t.apply(p)).collect(), transform: t }
    }

    fn resampled(cloud: &TrainingCloud, seed: u64) -> Result<Self> {
        let ct = unit_sphere_transform(&cloud.clean);
        let clean = PointCloud::new(cloud.clean.iter().map(|p| ct.apply(p)).collect());
        let noisy = add_noise(&clean, &NoiseSpec { std: cloud.noise_std, seed })?;
        Ok(Self::new(&clean.points, &noisy.points))
    }

    fn patch(&self, seed: usize, cfg: &TrainConfig) -> PatchPair {
        let tree = KdTree::new(&self.noisy);
        let ctree = KdTree::new(&self.clean);
        let patch = extract_patch(&self.noisy, &tree, seed, cfg.patch_size);
        let clean = clean_patch(&self.clean, &ctree, &self.noisy[seed], &patch, cfg.clean_radius_factor);
        PatchPair { noisy: patch.points, clean, center: 0, transform: self.transform }
    }
}

/// Cut `n` patches at uniformly random seeds across all clouds.
fn draw_patches(clouds: &[EpochCloud], n: usize, cfg: &TrainConfig, rng: &mut impl Rng) -> Vec<PatchPair> {
    let total: usize = clouds.iter().map(|c| c.noisy.len()).sum();
    (0..n)
        .map(|_| {
            let mut g = rng.random_range(0..total);
            let c = clouds
                .iter()
                .find(|c| {
                    if g < c.noisy.len() {
                        true
                    } else {
                        g -= c.noisy.len();
                        false
                    }
                })
                .expect("index within total");
            c.patch(g, cfg)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    /// Parameters with the lowest validation loss (the final ones without validation).
    pub params: ModelParams,
    pub history: Vec<LossRecord>,
    /// `(iteration, validation loss)` pairs.
    pub validation: Vec<(usize, f64)>,
    pub best_iteration: usize,
}

pub fn write_loss_csv(path: impl AsRef<Path>, history: &[LossRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,loss,wall_seconds")?;
    for r in history {
        writeln!(f, "{},{},{:.3}", r.iteration, r.loss, r.wall_seconds)?;
    }
    f.flush()?;
    Ok(())
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fresh parameters, firing-rate calibrated on patches of the training data
/// when `cfg.calibration_rate` is set.
pub fn initial_params(data: &[TrainingCloud], cfg: &TrainConfig, arch: &ArchConfig) -> Result<ModelParams> {
    let mut params = ModelParams::init(arch.clone(), derive_seed(cfg.seed, 1))?;
    if let (Some(rate), false) = (cfg.calibration_rate, data.is_empty()) {
        let clouds: Vec<EpochCloud> = data.iter().map(|c| EpochCloud::new(&c.clean, &c.noisy)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 5));
        let patches: Vec<Vec<Point3>> =
            draw_patches(&clouds, cfg.calibration_patches.max(1), cfg, &mut rng).into_iter().map(|p| p.noisy).collect();
        calibrate_firing(&mut params, &patches, rate)?;
    }
    Ok(params)
}

/// Trains from scratch. Deterministic given `cfg.seed`.
pub fn train(data: &[TrainingCloud], cfg: &TrainConfig, arch: &ArchConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training needs at least one cloud".into()));
    }
    let params = initial_params(data, cfg, arch)?;
    train_from(data, cfg, params)
}

/// Continues training from given parameters.
pub fn train_from(data: &[TrainingCloud], cfg: &TrainConfig, mut params: ModelParams) -> Result<TrainOutput> {
    cfg.validate()?;
    params.config().validate()?;
    if data.is_empty() {
        return Err(Error::Config("training needs at least one cloud".into()));
    }
    let k = params.config().k;
    for c in data {
        if c.noisy.len() <= k || c.clean.is_empty() {
            return Err(Error::Config(format!("cloud `{}` has too few points for k = {k}", c.name)));
        }
    }
    let start = Instant::now();
    let sampling = NeighborSampling { neighbors: cfg.loss_neighbors, count: cfg.loss_samples };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut ctx = ForwardCtx::new(Mode::Train, derive_seed(cfg.seed, 3));
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() })?;

    let mut clouds: Vec<EpochCloud> = data.iter().map(|c| EpochCloud::new(&c.clean, &c.noisy)).collect();
    let val_set = {
        let mut vrng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4));
        draw_patches(&clouds, cfg.val_patches, cfg, &mut vrng)
    };
    let val_sampling = NeighborSampling { neighbors: cfg.loss_neighbors, count: cfg.loss_neighbors + 1 };
    let validate = |params: &ModelParams| -> Result<f64> {
        let mut vctx = ForwardCtx::new(Mode::Eval, 0);
        let mut vrng = ChaCha8Rng::seed_from_u64(0);
        Ok(batch_loss(params, &val_set, val_sampling, &mut vctx, &mut vrng, false)?.loss)
    };

    let total_points: usize = data.iter().map(|c| c.noisy.len()).sum();
    let epoch_len = total_points.div_ceil(cfg.patch_size * cfg.batch_size).max(1);
    let mut out = TrainOutput { params: params.clone(), history: Vec::new(), validation: Vec::new(), best_iteration: 0 };
    let mut best = f64::INFINITY;
    if !val_set.is_empty() {
        best = validate(&params)?;
        out.validation.push((0, best));
    }

    for it in 1..=cfg.iterations {
        let epoch = (it - 1) / epoch_len;
        if cfg.resample_noise && epoch > 0 && (it - 1) % epoch_len == 0 {
            clouds = data
                .iter()
                .enumerate()
                .map(|(ci, c)| EpochCloud::resampled(c, derive_seed(cfg.seed, 1000 + (epoch * data.len() + ci) as u64)))
                .collect::<Result<_>>()?;
        }
        let batch = draw_patches(&clouds, cfg.batch_size, cfg, &mut rng);
        let bl = batch_loss(&params, &batch, sampling, &mut ctx, &mut rng, true).map_err(|e| match e {
            Error::NonFiniteLoss { patch } => Error::NonFiniteLoss { patch: (it - 1) * cfg.batch_size + patch },
            e => e,
        })?;
        if bl.loss > cfg.divergence_threshold {
            let worst = (0..bl.per_patch.len()).max_by(|&a, &b| bl.per_patch[a].total_cmp(&bl.per_patch[b])).unwrap_or(0);
            return Err(Error::Diverged { iteration: it, loss: bl.loss, patch: (it - 1) * cfg.batch_size + worst });
        }
        adam.step(params.tensors_mut(), &bl.grads)?;
        if it % cfg.log_interval == 0 || it == cfg.iterations {
            let rec = LossRecord { iteration: it, loss: bl.loss, wall_seconds: start.elapsed().as_secs_f64() };
            log::info!("iter {it:>6}  loss {:.6e}  {:.1}s", rec.loss, rec.wall_seconds);
            out.history.push(rec);
        }
        if !val_set.is_empty() && (it % cfg.val_interval == 0 || it == cfg.iterations) {
            let v = validate(&params)?;
            log::info!("iter {it:>6}  validation {v:.6e}");
            out.validation.push((it, v));
            if v < best {
                best = v;
                out.params = params.clone();
                out.best_iteration = it;
            }
        }
    }
    if val_set.is_empty() {
        out.params = params;
        out.best_iteration = cfg.iterations;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn plane(n: usize, jitter: f64, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = (n as f64).sqrt().ceil() as usize;
        (0..n)
            .map(|i| {
                let x = (i % side) as f64 / side as f64 - 0.5;
                let y = (i / side) as f64 / side as f64 - 0.5;
                [x, y, jitter * (rng.random::<f64>() - 0.5)]
            })
            .collect()
    }

    fn tiny_arch(variant: Variant) -> ArchConfig {
        ArchConfig {
            variant,
            k: 4,
            num_blocks: 1,
            block_layers: 2,
            growth: 4,
            embed_dim: 6,
            feature_dim: 8,
            score_hidden: vec![8],
            ..ArchConfig::default()
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            batch_size: 2,
            iterations: 6,
            seed: 3,
            loss_samples: 3,
            patch_size: 32,
            val_patches: 1,
            val_interval: 3,
            log_interval: 1,
            ..TrainConfig::default()
        }
    }

    fn data() -> Vec<TrainingCloud> {
        vec![TrainingCloud { name: "plane".into(), clean: plane(100, 0.0, 0), noisy: plane(100, 0.05, 1), noise_std: 0.02 }]
    }

    #[test]
    fn ground_truth_examples() {
        assert_eq!(ground_truth_score(&[1.0, 2.0, 3.0], &[[0.0; 3], [1.0, 2.0, 3.0]]).unwrap(), [0.0; 3]);
        let s = ground_truth_score(&[0.0, 0.0, 0.1], &[[0.0; 3]]).unwrap();
        assert_eq!(s, [0.0, 0.0, -0.1]);
        let s = ground_truth_score(&[0.0; 3], &[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(s, [1.0, 0.0, 0.0]);
        assert!(ground_truth_score(&[0.0; 3], &[]).is_err());
    }

    #[test]
    fn neighborhoods_start_with_self() {
        let pts = plane(25, 0.0, 0);
        for (i, n) in neighborhoods(&pts, 4).iter().enumerate() {
            assert_eq!(n[0], i);
            assert_eq!(n.len(), 5);
        }
    }

    #[test]
    fn exhaustive_sampling_covers_every_neighbour() {
        let pts = plane(25, 0.0, 0);
        let pair = PatchPair { noisy: pts.clone(), clean: pts, center: 0, transform: Transform::identity() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = sample_queries(&pair, NeighborSampling { neighbors: 4, count: 9 }, &mut rng);
        assert_eq!(q.len(), 25 * 5);
        let q = sample_queries(&pair, NeighborSampling { neighbors: 4, count: 2 }, &mut rng);
        assert_eq!(q.len(), 25 * 2);
        assert!(q.chunks(2).all(|c| c[0].point != c[1].point));
    }

    #[test]
    fn zero_predictor_loss_is_mean_squared_target() {
        let params = ModelParams::zeros(tiny_arch(Variant::Hybrid)).unwrap();
        let noisy = plane(36, 0.1, 2);
        let clean = plane(36, 0.0, 0);
        let pair = PatchPair { noisy: noisy.clone(), clean: clean.clone(), center: 0, transform: Transform::identity() };
        let sampling = NeighborSampling { neighbors: 4, count: 5 };
        let mut ctx = ForwardCtx::new(Mode::Eval, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bl = batch_loss(&params, &[pair], sampling, &mut ctx, &mut rng, false).unwrap();
        let hoods = neighborhoods(&noisy, 4);
        let mut sum = 0.0;
        for hood in &hoods {
            for &j in hood {
                let s = ground_truth_score(&noisy[j], &clean).unwrap();
                sum += s.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let expect = sum / (36.0 * 5.0);
        assert!((bl.loss - expect).abs() <= 1e-12 * expect.max(1.0), "{} vs {expect}", bl.loss);
    }

    #[test]
    fn same_seed_same_history() {
        let a = train(&data(), &tiny_cfg(), &tiny_arch(Variant::Hybrid)).unwrap();
        let b = train(&data(), &tiny_cfg(), &tiny_arch(Variant::Hybrid)).unwrap();
        let la: Vec<f64> = a.history.iter().map(|r| r.loss).collect();
        let lb: Vec<f64> = b.history.iter().map(|r| r.loss).collect();
        assert_eq!(la, lb);
        assert_eq!(a.validation, b.validation);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let cfg = TrainConfig { lr: 0.0, val_patches: 0, ..tiny_cfg() };
        let arch = tiny_arch(Variant::Pure);
        let out = train(&data(), &cfg, &arch).unwrap();
        let init = initial_params(&data(), &cfg, &arch).unwrap();
        assert_eq!(out.params.tensors(), init.tensors());
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig { divergence_threshold: 1e-12, ..tiny_cfg() };
        match train(&data(), &cfg, &tiny_arch(Variant::Hybrid)) {
            Err(Error::Diverged { iteration: 1, .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(train(&[], &tiny_cfg(), &tiny_arch(Variant::Hybrid)), Err(Error::Config(_))));
    }
}
