//! Exact nearest-neighbour search over 3D points.
//!
//! Results are ordered by `(squared distance, index)`, so ties always resolve
//! to the lower index and the output matches a brute-force scan exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point3, b: &Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const LEAF_SIZE: usize = 8;

enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static kd-tree over a point set.
pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut tree = Self { points, order: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            // All points coincide.
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = pts[self.order[mid]][axis];
        self.nodes.push(KdNode::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = KdNode::Split { axis, value, left, right };
        id
    }

    /// The `k` nearest points to `query`, nearest first. Points for which
    /// `skip` returns true are ignored.
    pub fn knn_filtered(&self, query: &Point3, k: usize, skip: impl Fn(usize) -> bool) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &skip, &mut heap);
        heap.into_sorted_vec()
    }

    pub fn knn(&self, query: &Point3, k: usize) -> Vec<Neighbor> {
        self.knn_filtered(query, k, |_| false)
    }

    pub fn nearest(&self, query: &Point3) -> Option<Neighbor> {
        self.knn(query, 1).into_iter().next()
    }

    /// Indices of all points within squared distance `r2` of `query`, ascending.
    pub fn within(&self, query: &Point3, r2: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.collect_within(0, query, r2, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn collect_within(&self, node: usize, q: &Point3, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                out.extend(self.order[start..end].iter().copied().filter(|&i| dist2(q, &self.points[i]) <= r2));
            }
            KdNode::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.collect_within(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.collect_within(right, q, r2, out);
                }
            }
        }
    }

    fn search(&self, node: usize, q: &Point3, k: usize, skip: &impl Fn(usize) -> bool, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if skip(i) {
                        continue;
                    }
                    let cand = Neighbor { index: i, dist2: dist2(q, &self.points[i]) };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, skip, heap);
                // `<=` keeps equal-distance subtrees in play so index tie-breaks stay exact.
                if heap.len() < k || diff * diff <= heap.peek().expect("heap is nonempty").dist2 {
                    self.search(far, q, k, skip, heap);
                }
            }
        }
    }
}

/// Farthest-point selection of `n` indices, starting from index 0.
/// Ties pick the lowest index.
pub fn farthest_point_indices(points: &[Point3], n: usize) -> Vec<usize> {
    let n = n.min(points.len());
    if n == 0 {
        return Vec::new();
    }
    let mut chosen = Vec::with_capacity(n);
    let mut best = vec![f64::INFINITY; points.len()];
    let mut current = 0;
    for _ in 0..n {
        chosen.push(current);
        let c = points[current];
        let mut far = 0;
        let mut far_d = f64::NEG_INFINITY;
        for (i, (p, b)) in points.iter().zip(best.iter_mut()).enumerate() {
            let d = dist2(p, &c);
            if d < *b {
                *b = d;
            }
            if *b > far_d {
                far_d = *b;
                far = i;
            }
        }
        current = far;
    }
    chosen
}
