//! Chamfer distance and point-to-mesh distance.
//!
//! Both are means of squared distances. Reports scale them by 10⁴.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{dist2, dot, sub, KdTree, Point3};

/// Metrics are reported in units of 10⁻⁴.
pub const REPORT_SCALE: f64 = 1e4;
pub const METRICS_VERSION: u32 = 1;

/// Triangle mesh with validated indices and no degenerate faces.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

/// Relative sine threshold below which a triangle counts as zero-area.
const DEGENERATE_EPS: f64 = 1e-12;

fn cross(a: &Point3, b: &Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Whether the triangle has (numerically) zero area.
pub fn is_degenerate(a: &Point3, b: &Point3, c: &Point3) -> bool {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let n = cross(&ab, &ac);
    let scale = dot(&ab, &ab) * dot(&ac, &ac);
    dot(&n, &n) <= DEGENERATE_EPS * DEGENERATE_EPS * scale || scale == 0.0
}

pub fn triangle_area(a: &Point3, b: &Point3, c: &Point3) -> f64 {
    let n = cross(&sub(b, a), &sub(c, a));
    0.5 * dot(&n, &n).sqrt()
}

impl Mesh {
    /// Validates indices and drops degenerate faces, returning how many were dropped.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<(Self, usize)> {
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::Format(format!("face {f:?} indexes past {} vertices", vertices.len())));
        }
        let before = faces.len();
        let faces: Vec<[usize; 3]> =
            faces.into_iter().filter(|f| !is_degenerate(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]])).collect();
        let dropped = before - faces.len();
        Ok((Self { vertices, faces }, dropped))
    }

    pub fn triangle(&self, f: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                triangle_area(&a, &b, &c)
            })
            .sum()
    }
}

fn nonempty(what: &str, pts: &[Point3]) -> Result<()> {
    if pts.is_empty() {
        return Err(Error::Metric(format!("{what} cloud is empty")));
    }
    Ok(())
}

fn one_sided(from: &[Point3], to: &[Point3]) -> f64 {
    let tree = KdTree::new(to);
    from.iter().map(|p| tree.nearest(p).expect("nonempty").dist2).sum::<f64>() / from.len() as f64
}

/// Two-sided mean of squared nearest-neighbour distances (raw units).
pub fn chamfer(pred: &[Point3], reference: &[Point3]) -> Result<f64> {
    nonempty("predicted", pred)?;
    nonempty("reference", reference)?;
    Ok(one_sided(pred, reference) + one_sided(reference, pred))
}

/// Closest point on triangle `abc` to `p` by Voronoi-region classification.
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(&ab, &ap);
    let d2 = dot(&ac, &ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = sub(p, b);
    let d3 = dot(&ab, &bp);
    let d4 = dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [a[0] + v * ab[0], a[1] + v * ab[1], a[2] + v * ab[2]];
    }
    let cp = sub(p, c);
    let d5 = dot(&ab, &cp);
    let d6 = dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [a[0] + w * ac[0], a[1] + w * ac[1], a[2] + w * ac[2]];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [b[0] + w * (c[0] - b[0]), b[1] + w * (c[1] - b[1]), b[2] + w * (c[2] - b[2])];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [a[0] + ab[0] * v + ac[0] * w, a[1] + ab[1] * v + ac[1] * w, a[2] + ab[2] * v + ac[2] * w]
}

/// Squared distance from `p` to the closed triangle.
pub fn point_to_triangle(p: &Point3, tri: &[Point3; 3]) -> Result<f64> {
    if is_degenerate(&tri[0], &tri[1], &tri[2]) {
        return Err(Error::DegenerateTriangle);
    }
    Ok(dist2(p, &closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2])))
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Point3,
    hi: Point3,
}

impl Aabb {
    fn empty() -> Self {
        Self { lo: [f64::INFINITY; 3], hi: [f64::NEG_INFINITY; 3] }
    }

    fn grow(&mut self, p: &Point3) {
        for ((lo, hi), &x) in self.lo.iter_mut().zip(&mut self.hi).zip(p) {
            *lo = lo.min(x);
            *hi = hi.max(x);
        }
    }

    fn dist2(&self, p: &Point3) -> f64 {
        let mut d = 0.0;
        for ((lo, hi), &x) in self.lo.iter().zip(&self.hi).zip(p) {
            let e = (lo - x).max(0.0).max(x - hi);
            d += e * e;
        }
        d
    }
}

enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Split { bounds: Aabb, left: usize, right: usize },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Split { bounds, .. } => bounds,
        }
    }
}

/// Bounding-volume hierarchy over mesh faces for nearest-triangle queries.
pub struct Bvh<'m> {
    mesh: &'m Mesh,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

const BVH_LEAF: usize = 4;

impl<'m> Bvh<'m> {
    pub fn new(mesh: &'m Mesh) -> Self {
        let mut bvh = Self { mesh, order: (0..mesh.faces.len()).collect(), nodes: Vec::new() };
        if !mesh.faces.is_empty() {
            let centroids: Vec<Point3> = (0..mesh.faces.len())
                .map(|f| {
                    let [a, b, c] = mesh.triangle(f);
                    [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0]
                })
                .collect();
            bvh.build(0, mesh.faces.len(), &centroids);
        }
        bvh
    }

    fn bounds_of(&self, start: usize, end: usize) -> Aabb {
        let mut b = Aabb::empty();
        for &f in &self.order[start..end] {
            for v in self.mesh.triangle(f) {
                b.grow(&v);
            }
        }
        b
    }

    fn build(&mut self, start: usize, end: usize, centroids: &[Point3]) -> usize {
        let id = self.nodes.len();
        let bounds = self.bounds_of(start, end);
        self.nodes.push(BvhNode::Leaf { bounds, start, end });
        if end - start <= BVH_LEAF {
            return id;
        }
        let axis = (0..3).max_by(|&a, &b| (bounds.hi[a] - bounds.lo[a]).total_cmp(&(bounds.hi[b] - bounds.lo[b]))).unwrap_or(0);
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]));
        let left = self.build(start, mid, centroids);
        let right = self.build(mid, end, centroids);
        self.nodes[id] = BvhNode::Split { bounds, left, right };
        id
    }

    /// Minimum squared distance from `p` to any face.
    pub fn nearest_dist2(&self, p: &Point3) -> f64 {
        let mut best = f64::INFINITY;
        if self.nodes.is_empty() {
            return best;
        }
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.bounds().dist2(p) >= best {
                continue;
            }
            match *node {
                BvhNode::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        let [a, b, c] = self.mesh.triangle(f);
                        best = best.min(dist2(p, &closest_point_on_triangle(p, &a, &b, &c)));
                    }
                }
                BvhNode::Split { left, right, .. } => {
                    let dl = self.nodes[left].bounds().dist2(p);
                    let dr = self.nodes[right].bounds().dist2(p);
                    // Visit the nearer child first.
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }
}

/// One-sided mean squared point-to-mesh distance (raw units).
pub fn point_to_mesh(points: &[Point3], mesh: &Mesh) -> Result<f64> {
    nonempty("predicted", points)?;
    if mesh.is_empty() {
        return Err(Error::Metric("mesh has no faces".into()));
    }
    let bvh = Bvh::new(mesh);
    Ok(points.iter().map(|p| bvh.nearest_dist2(p)).sum::<f64>() / points.len() as f64)
}

/// Exhaustive-scan variant of [`point_to_mesh`].
pub fn point_to_mesh_brute(points: &[Point3], mesh: &Mesh) -> Result<f64> {
    nonempty("predicted", points)?;
    if mesh.is_empty() {
        return Err(Error::Metric("mesh has no faces".into()));
    }
    let mut total = 0.0;
    for p in points {
        let mut best = f64::INFINITY;
        for f in 0..mesh.faces.len() {
            best = best.min(point_to_triangle(p, &mesh.triangle(f))?);
        }
        total += best;
    }
    Ok(total / points.len() as f64)
}

/// Versioned metric record. Values are in units of 10⁻⁴.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: u32,
    pub points: usize,
    pub cd: f64,
    pub p2m: Option<f64>,
}

impl MetricReport {
    pub fn compute(pred: &[Point3], clean: &[Point3], mesh: Option<&Mesh>) -> Result<Self> {
        let cd = chamfer(pred, clean)? * REPORT_SCALE;
        let p2m = mesh.map(|m| point_to_mesh(pred, m)).transpose()?.map(|v| v * REPORT_SCALE);
        Ok(Self { version: METRICS_VERSION, points: pred.len(), cd, p2m })
    }

    pub fn human(&self) -> String {
        let mut s = format!("CD  (1e-4): {:.4}\n", self.cd);
        if let Some(p) = self.p2m {
            s.push_str(&format!("P2M (1e-4): {p:.4}\n"));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
