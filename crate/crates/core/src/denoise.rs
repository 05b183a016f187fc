//! Score-based denoising by decaying gradient ascent.
//!
//! Each step re-patches the current cloud, evaluates every point's score
//! under its `k_d` nearest anchors and moves it by `α0·γ^t` times the mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{unit_sphere_transform, PointCloud, Transform};
use crate::model::{predict_patch, ForwardCtx, ModelParams, Query};
use crate::neuron::Mode;
use crate::patch::plan_patches;
use crate::spatial::{sub, KdTree, Point3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseConfig {
    pub steps: usize,
    /// Step size applied to the score in the unit-sphere frame.
    pub alpha0: f64,
    pub gamma: f64,
    /// Anchors averaged per query point.
    pub anchors: usize,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self { steps: 30, alpha0: 0.2, gamma: 0.95, anchors: 4, patch_size: 512, seed: 0 }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 || self.anchors < 1 || self.patch_size < 1 {
            return Err(Error::Config("denoise.steps, anchors and patch_size must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("denoise.gamma {} must lie in (0, 1]", self.gamma)));
        }
        if !(self.alpha0 > 0.0) || !self.alpha0.is_finite() {
            return Err(Error::Config(format!("denoise.alpha0 {} must be positive", self.alpha0)));
        }
        Ok(())
    }

    pub fn step_size(&self, t: usize) -> f64 {
        self.alpha0 * self.gamma.powi(t as i32)
    }
}

/// A source of per-point scores in the normalized frame.
pub trait ScoreField {
    /// Called once per cloud with its normalization.
    fn begin(&mut self, _transform: &Transform) -> Result<()> {
        Ok(())
    }

    fn scores(&mut self, points: &[Point3]) -> Result<Vec<Point3>>;
}

/// Scores predicted by a trained network.
pub struct ModelScores<'a> {
    params: &'a ModelParams,
    anchors: usize,
    patch_size: usize,
    seed: u64,
}

impl<'a> ModelScores<'a> {
    pub fn new(params: &'a ModelParams, cfg: &DenoiseConfig) -> Self {
        Self { params, anchors: cfg.anchors, patch_size: cfg.patch_size, seed: cfg.seed }
    }
}

impl ScoreField for ModelScores<'_> {
    fn scores(&mut self, points: &[Point3]) -> Result<Vec<Point3>> {
        let plan = plan_patches(points, self.patch_size)?;
        let tree = KdTree::new(points);
        let mut per_patch: Vec<Vec<(usize, Query)>> = vec![Vec::new(); plan.patches.len()];
        for (i, x) in points.iter().enumerate() {
            for nb in tree.knn(x, self.anchors) {
                let p = plan.owner[nb.index];
                let patch = &plan.patches[p];
                per_patch[p].push((i, Query { anchor: plan.local[nb.index], pos: patch.to_frame(x), point: plan.local_in(p, i) }));
            }
        }
        let mut sum = vec![[0.0; 3]; points.len()];
        let mut count = vec![0usize; points.len()];
        let mut ctx = ForwardCtx::new(Mode::Eval, self.seed);
        for (p, items) in per_patch.iter().enumerate() {
            if items.is_empty() {
                continue;
            }
            let queries: Vec<Query> = items.iter().map(|(_, q)| *q).collect();
            let sc = predict_patch(self.params, &plan.patches[p].points, &queries, &mut ctx)?;
            let scale = plan.patches[p].scale;
            for ((i, _), s) in items.iter().zip(sc) {
                for a in 0..3 {
                    sum[*i][a] += s[a] * scale;
                }
                count[*i] += 1;
            }
        }
        Ok(sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| {
                let c = c as f64;
                [s[0] / c, s[1] / c, s[2] / c]
            })
            .collect())
    }
}

/// Exact displacement to the nearest clean point.
pub struct OracleScores {
    clean: Vec<Point3>,
    frame: Vec<Point3>,
}

impl OracleScores {
    pub fn new(clean: Vec<Point3>) -> Self {
        Self { frame: clean.clone(), clean }
    }
}

impl ScoreField for OracleScores {
    fn begin(&mut self, transform: &Transform) -> Result<()> {
        if self.clean.is_empty() {
            return Err(Error::Contract("oracle needs a nonempty clean cloud".into()));
        }
        self.frame = self.clean.iter().map(|p| transform.apply(p)).collect();
        Ok(())
    }

    fn scores(&mut self, points: &[Point3]) -> Result<Vec<Point3>> {
        let tree = KdTree::new(&self.frame);
        Ok(points.iter().map(|x| sub(&self.frame[tree.nearest(x).expect("nonempty").index], x)).collect())
    }
}

/// Denoises `noisy` in its own unit-sphere frame and maps the result back.
pub fn denoise(noisy: &PointCloud, field: &mut dyn ScoreField, cfg: &DenoiseConfig) -> Result<PointCloud> {
    cfg.validate()?;
    if noisy.is_empty() {
        return Err(Error::Pipeline("cannot denoise an empty cloud".into()));
    }
    let t = unit_sphere_transform(&noisy.points);
    field.begin(&t)?;
    let mut x: Vec<Point3> = noisy.points.iter().map(|p| t.apply(p)).collect();
    let mut moved = vec![[0.0; 3]; x.len()];
    for step in 0..cfg.steps {
        let s = field.scores(&x)?;
        if s.len() != x.len() {
            return Err(Error::Pipeline(format!("score field returned {} scores for {} points", s.len(), x.len())));
        }
        let a = cfg.step_size(step);
        for ((p, d), s) in x.iter_mut().zip(moved.iter_mut()).zip(&s) {
            for k in 0..3 {
                p[k] += a * s[k];
                d[k] += a * s[k];
            }
        }
        if let Some(i) = x.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Pipeline(format!("point {i} became non-finite at step {step}")));
        }
        log::debug!("denoise step {step}: alpha {a:.4e}");
    }
    // Adding the accumulated displacement keeps unmoved points bit-exact.
    let points =
        noisy.points.iter().zip(&moved).map(|(p, d)| [p[0] + t.scale * d[0], p[1] + t.scale * d[1], p[2] + t.scale * d[2]]).collect();
    Ok(PointCloud { points, transform: noisy.transform })
}
