//! Local patches of a normalized cloud.
//!
//! A patch is a seed point and its nearest neighbours, translated so the
//! seed sits at the origin and scaled so the farthest member lies on the
//! unit sphere. Scores predicted in the patch frame are multiplied by
//! `scale` to return to cloud units.

use crate::error::{Error, Result};
use crate::spatial::{dist2, farthest_point_indices, sub, KdTree, Point3};

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// Cloud indices of the patch points, nearest to the seed first.
    pub indices: Vec<usize>,
    pub seed: usize,
    /// Offset subtracted from cloud coordinates to get patch coordinates.
    pub center: Point3,
    /// Cloud length of one patch unit.
    pub scale: f64,
    /// Largest seed-to-member distance, in cloud units.
    pub radius: f64,
    /// Patch-frame coordinates, aligned with `indices`.
    pub points: Vec<Point3>,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn to_frame(&self, p: &Point3) -> Point3 {
        let d = sub(p, &self.center);
        [d[0] / self.scale, d[1] / self.scale, d[2] / self.scale]
    }
}

/// The `m` points nearest to `points[seed]` (all points if fewer).
pub fn extract_patch(points: &[Point3], tree: &KdTree, seed: usize, m: usize) -> Patch {
    let s = points[seed];
    let nn = tree.knn(&s, m.min(points.len()));
    let radius = nn.last().map_or(0.0, |n| n.dist2.sqrt());
    let indices: Vec<usize> = nn.iter().map(|n| n.index).collect();
    let mut patch = Patch { indices, seed, center: s, scale: if radius > 0.0 { radius } else { 1.0 }, radius, points: Vec::new() };
    patch.points = patch.indices.iter().map(|&i| patch.to_frame(&points[i])).collect();
    patch
}

/// Clean points within `factor × radius` of the patch seed, in the patch frame.
/// Falls back to the single nearest clean point when the ball is empty.
pub fn clean_patch(clean: &[Point3], tree: &KdTree, noisy_seed: &Point3, patch: &Patch, factor: f64) -> Vec<Point3> {
    let r = factor * patch.radius;
    let mut idx = tree.within(noisy_seed, r * r);
    if idx.is_empty() {
        idx.extend(tree.nearest(noisy_seed).map(|n| n.index));
    }
    idx.iter().map(|&i| patch.to_frame(&clean[i])).collect()
}

/// A covering of a cloud by patches, with one owner patch per point.
#[derive(Clone, Debug)]
pub struct PatchPlan {
    pub patches: Vec<Patch>,
    /// Owning patch of each cloud point.
    pub owner: Vec<usize>,
    /// Index of each cloud point inside its owner patch.
    pub local: Vec<usize>,
    /// Per patch, cloud index to patch-local index for its members.
    members: Vec<std::collections::HashMap<usize, usize>>,
}

impl PatchPlan {
    /// Cloud indices owned by patch `p`, ascending.
    pub fn owned_by(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        self.owner.iter().enumerate().filter(move |(_, &o)| o == p).map(|(i, _)| i)
    }

    /// Patch-local index of cloud point `i` in patch `p`, if it is a member.
    pub fn local_in(&self, p: usize, i: usize) -> Option<usize> {
        self.members[p].get(&i).copied()
    }
}

/// Farthest-point seeds (`⌈N/M⌉` of them) plus extra seeds at any point no
/// patch covers. Each point is owned by the covering patch whose seed is nearest.
pub fn plan_patches(points: &[Point3], m: usize) -> Result<PatchPlan> {
    if points.is_empty() || m == 0 {
        return Err(Error::Config(format!("cannot patch {} points with patch size {m}", points.len())));
    }
    let tree = KdTree::new(points);
    let n = points.len();
    let mut patches: Vec<Patch> =
        farthest_point_indices(points, n.div_ceil(m)).into_iter().map(|s| extract_patch(points, &tree, s, m)).collect();
    let mut covered = vec![false; n];
    for p in &patches {
        p.indices.iter().for_each(|&i| covered[i] = true);
    }
    for i in 0..n {
        if !covered[i] {
            let p = extract_patch(points, &tree, i, m);
            p.indices.iter().for_each(|&j| covered[j] = true);
            patches.push(p);
        }
    }
    let members: Vec<std::collections::HashMap<usize, usize>> =
        patches.iter().map(|p| p.indices.iter().enumerate().map(|(l, &g)| (g, l)).collect()).collect();
    let mut owner = vec![usize::MAX; n];
    let mut best = vec![f64::INFINITY; n];
    for (pi, p) in patches.iter().enumerate() {
        let s = points[p.seed];
        for &i in &p.indices {
            let d = dist2(&points[i], &s);
            if d < best[i] {
                best[i] = d;
                owner[i] = pi;
            }
        }
    }
    let local = (0..n).map(|i| members[owner[i]][&i]).collect();
    Ok(PatchPlan { patches, owner, local, members })
}
