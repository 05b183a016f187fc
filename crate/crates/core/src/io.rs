//! Point cloud and mesh files, surface sampling, normalization and noise.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{triangle_area, Mesh};
use crate::spatial::{farthest_point_indices, norm, Point3};

/// Maps cloud coordinates `p` to `(p − centroid) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub centroid: Point3,
    pub scale: f64,
}

impl Transform {
    pub fn identity() -> Self {
        Self { centroid: [0.0; 3], scale: 1.0 }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let s = self.scale;
        [(p[0] - self.centroid[0]) / s, (p[1] - self.centroid[1]) / s, (p[2] - self.centroid[2]) / s]
    }

    pub fn invert(&self, p: &Point3) -> Point3 {
        let s = self.scale;
        [p[0] * s + self.centroid[0], p[1] * s + self.centroid[1], p[2] * s + self.centroid[2]]
    }

    /// `other ∘ self`: first this transform, then `other`.
    pub fn then(&self, other: &Transform) -> Transform {
        let c = other.centroid;
        Transform {
            centroid: [self.centroid[0] + self.scale * c[0], self.centroid[1] + self.scale * c[1], self.centroid[2] + self.scale * c[2]],
            scale: self.scale * other.scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    /// Transform from the original frame to the current coordinates, if normalized.
    pub transform: Option<Transform>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points, transform: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(norm).fold(0.0, f64::max)
    }
}

/// Centroid and maximum-radius scale of a point set.
pub fn unit_sphere_transform(points: &[Point3]) -> Transform {
    let n = points.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    c.iter_mut().for_each(|v| *v /= n);
    let r = points.iter().map(|p| norm(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]])).fold(0.0, f64::max);
    Transform { centroid: c, scale: if r > 0.0 { r } else { 1.0 } }
}

/// Centers at the centroid and scales the farthest point to radius 1.
pub fn normalize(cloud: &PointCloud) -> PointCloud {
    let t = unit_sphere_transform(&cloud.points);
    let points = cloud.points.iter().map(|p| t.apply(p)).collect();
    let transform = match cloud.transform {
        Some(prev) => prev.then(&t),
        None => t,
    };
    PointCloud { points, transform: Some(transform) }
}

/// Applies an existing transform (e.g. a clean cloud's) to another cloud.
pub fn normalize_with(cloud: &PointCloud, t: &Transform) -> PointCloud {
    PointCloud { points: cloud.points.iter().map(|p| t.apply(p)).collect(), transform: Some(*t) }
}

/// Maps a normalized cloud back to its original frame.
pub fn denormalize(cloud: &PointCloud) -> PointCloud {
    match cloud.transform {
        Some(t) => PointCloud::new(cloud.points.iter().map(|p| t.invert(p)).collect()),
        None => cloud.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation as a fraction of the unit-sphere radius.
    pub std: f64,
    pub seed: u64,
}

/// Isotropic Gaussian corruption of every coordinate.
pub fn add_noise(cloud: &PointCloud, spec: &NoiseSpec) -> Result<PointCloud> {
    if !(spec.std >= 0.0) {
        return Err(Error::Config(format!("noise std {} must be >= 0", spec.std)));
    }
    if spec.std == 0.0 {
        return Ok(cloud.clone());
    }
    let dist = Normal::new(0.0, spec.std).expect("std checked");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points =
        cloud.points.iter().map(|p| [p[0] + dist.sample(&mut rng), p[1] + dist.sample(&mut rng), p[2] + dist.sample(&mut rng)]).collect();
    Ok(PointCloud { points, transform: cloud.transform })
}

/// Area-weighted sampling of `4n` candidates thinned to `n` by farthest-point selection.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 1 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    if mesh.is_empty() {
        return Err(Error::Config("cannot sample an empty mesh".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut acc = 0.0;
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(f);
        acc += triangle_area(&a, &b, &c);
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<Point3> = (0..4 * n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let s = rng.random::<f64>().sqrt();
            let r = rng.random::<f64>();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r), s * r);
            [wa * a[0] + wb * b[0] + wc * c[0], wa * a[1] + wb * b[1] + wc * c[1], wa * a[2] + wb * b[2] + wc * c[2]]
        })
        .collect();
    let picked = farthest_point_indices(&candidates, n);
    Ok(PointCloud::new(picked.into_iter().map(|i| candidates[i]).collect()))
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line, msg: msg.into() }
}

/// Parses `x y z` lines; blank lines are skipped.
pub fn parse_xyz(text: &str, path: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(path, no + 1, format!("expected 3 values, found {}", fields.len())));
        }
        let mut p = [0.0f64; 3];
        for (v, f) in p.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| parse_err(path, no + 1, format!("invalid number `{f}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, no + 1, format!("non-finite value `{f}`")));
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(parse_err(path, 0, "no points"));
    }
    Ok(PointCloud::new(points))
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    parse_xyz(&std::fs::read_to_string(path)?, &path.display().to_string())
}

/// Shortest round-trip decimal representation, one point per line.
pub fn format_xyz(points: &[Point3]) -> String {
    let mut s = String::with_capacity(points.len() * 48);
    for p in points {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    s
}

pub fn save_xyz(path: impl AsRef<Path>, points: &[Point3]) -> Result<()> {
    std::fs::write(path, format_xyz(points))?;
    Ok(())
}

/// Parses a triangular OFF mesh. Returns the mesh and the number of
/// degenerate faces dropped.
pub fn parse_off(text: &str) -> Result<(Mesh, usize)> {
    let mut lines = text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::Format("empty file".into()))?;
    let mut rest: Vec<&str> = match header.strip_prefix("OFF") {
        Some(r) => r.split_whitespace().collect(),
        None => return Err(Error::Format(format!("expected `OFF` header, found `{header}`"))),
    };
    if rest.is_empty() {
        rest = lines.next().ok_or_else(|| Error::Format("missing counts line".into()))?.split_whitespace().collect();
    }
    let count = |i: usize| -> Result<usize> {
        rest.get(i)
            .ok_or_else(|| Error::Format("counts line needs vertex, face and edge counts".into()))?
            .parse()
            .map_err(|_| Error::Format(format!("invalid count `{}`", rest[i])))
    };
    let (nv, nf) = (count(0)?, count(1)?);
    let mut vertices = Vec::with_capacity(nv);
    for v in 0..nv {
        let l = lines.next().ok_or_else(|| Error::Format(format!("missing vertex {v}")))?;
        let f: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|x| x.parse::<f64>().map_err(|_| Error::Format(format!("invalid coordinate `{x}` in vertex {v}"))))
            .collect::<Result<_>>()?;
        if f.len() != 3 {
            return Err(Error::Format(format!("vertex {v} needs 3 coordinates")));
        }
        vertices.push([f[0], f[1], f[2]]);
    }
    let mut faces = Vec::with_capacity(nf);
    for fi in 0..nf {
        let l = lines.next().ok_or_else(|| Error::Format(format!("missing face {fi}")))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|x| x.parse::<usize>().map_err(|_| Error::Format(format!("invalid index `{x}` in face {fi}"))))
            .collect::<Result<_>>()?;
        match idx.as_slice() {
            [3, a, b, c, ..] => faces.push([*a, *b, *c]),
            [k, ..] => return Err(Error::Format(format!("face {fi} has {k} vertices; only triangles are supported"))),
            [] => return Err(Error::Format(format!("face {fi} is empty"))),
        }
    }
    Mesh::new(vertices, faces)
}

pub fn load_off(path: impl AsRef<Path>) -> Result<(Mesh, usize)> {
    let (mesh, dropped) = parse_off(&std::fs::read_to_string(path.as_ref())?)?;
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} degenerate faces", path.as_ref().display());
    }
    Ok((mesh, dropped))
}

pub fn format_off(mesh: &Mesh) -> String {
    let mut s = format!("OFF\n{} {} 0\n", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn save_off(path: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
    std::fs::write(path, format_off(mesh))?;
    Ok(())
}

/// Regular tetrahedron with vertices on the unit sphere.
pub fn tetrahedron() -> Mesh {
    let s = 1.0 / 3f64.sqrt();
    let v = vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
    let f = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    Mesh::new(v, f).expect("valid tetrahedron").0
}

/// Unit icosphere after `subdivisions` rounds of 4-to-1 splitting.
pub fn icosphere(subdivisions: usize) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| {
        let n = norm(p);
        [p[0] / n, p[1] / n, p[2] / n]
    })
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache = std::collections::HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Point3>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                let m = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0];
                let n = norm(&m);
                verts.push([m[0] / n, m[1] / n, m[2] / n]);
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::new(verts, faces).expect("valid icosphere").0
}

/// Dataset file stem and noise level parsed from `name_noisy_<std>.xyz`.
pub fn parse_noisy_name(file_name: &str) -> Option<(String, f64)> {
    let stem = file_name.strip_suffix(".xyz")?;
    let (name, std) = stem.rsplit_once("_noisy_")?;
    Some((name.to_string(), std.parse().ok()?))
}

pub fn noisy_file_name(name: &str, std: f64) -> String {
    format!("{name}_noisy_{std}.xyz")
}

pub fn clean_file_name(name: &str) -> String {
    format!("{name}_clean.xyz")
}
