use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};

use super::Scene;
use crate::consts::SELF_INTERSECTION_EPS;

/// Nearest point on a silhouette edge close to a hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeContact {
    pub point: Vector3<f64>,
    /// Unit direction of the edge.
    pub direction: Vector3<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub point: Vector3<f64>,
    /// Unit geometric normal from the triangle winding.
    pub normal: Vector3<f64>,
    /// Index into `Scene::objects`.
    pub object: usize,
    pub triangle: usize,
    pub distance: f64,
    /// True when the hit lies within the diffraction margin of a silhouette edge.
    pub near_edge: bool,
    pub edge: Option<EdgeContact>,
}

#[derive(Debug, Clone)]
struct Triangle {
    v0: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    normal: Vector3<f64>,
    object: usize,
}

impl Triangle {
    /// Moller-Trumbore; returns the ray parameter of a hit beyond the
    /// self-intersection offset.
    #[inline]
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let p = dir.cross(&self.e2);
        let det = self.e1.dot(&p);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - self.v0;
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&self.e1);
        let v = dir.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = self.e2.dot(&q) * inv;
        (t > SELF_INTERSECTION_EPS).then_some(t)
    }
}

#[derive(Debug, Clone)]
struct ObjectGeometry {
    triangles: std::ops::Range<usize>,
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    edges: Vec<(Vector3<f64>, Vector3<f64>)>,
    closed: bool,
}

/// World-space geometry of a scene at one frame.
#[derive(Debug, Clone)]
pub struct FrameGeometry {
    triangles: Vec<Triangle>,
    objects: Vec<ObjectGeometry>,
    edge_margin: f64,
}

/// Slab test; returns the entry parameter when the ray meets the box.
pub(crate) fn ray_box_entry(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    lo: &Vector3<f64>,
    hi: &Vector3<f64>,
) -> Option<f64> {
    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-300 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut t0, mut t1) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_min = t_min.max(t0);
        t_max = t_max.min(t1);
        if t_max < t_min {
            return None;
        }
    }
    (t_max >= 0.0).then_some(t_min.max(0.0))
}

fn closest_on_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Silhouette edges of a mesh: boundary edges and creases between
/// non-coplanar faces. Vertices are merged by position first so meshes with
/// per-face vertex copies still classify coplanar diagonals as interior.
fn feature_edges(vertices: &[Vector3<f64>], indices: &[[usize; 3]]) -> (Vec<(usize, usize)>, bool) {
    let quant = |v: &Vector3<f64>| [v.x, v.y, v.z].map(|c| (c * 1e9).round() as i64);
    let mut canon: BTreeMap<[i64; 3], usize> = BTreeMap::new();
    let remap: Vec<usize> = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| *canon.entry(quant(v)).or_insert(i))
        .collect();

    let mut adjacency: BTreeMap<(usize, usize), Vec<Vector3<f64>>> = BTreeMap::new();
    for tri in indices {
        let [a, b, c] = tri.map(|i| remap[i]);
        let n = (vertices[b] - vertices[a])
            .cross(&(vertices[c] - vertices[a]))
            .normalize();
        for (i, j) in [(a, b), (b, c), (c, a)] {
            adjacency.entry((i.min(j), i.max(j))).or_default().push(n);
        }
    }
    let closed = adjacency.values().all(|n| n.len() == 2);
    let edges = adjacency
        .into_iter()
        .filter(|(_, normals)| normals.len() != 2 || normals[0].cross(&normals[1]).norm() > 1e-6)
        .map(|(e, _)| e)
        .collect();
    (edges, closed)
}

impl FrameGeometry {
    pub fn new(scene: &Scene, frame: u32, edge_margin: f64) -> Self {
        let mut triangles = Vec::new();
        let mut objects = Vec::with_capacity(scene.objects.len());
        for (oi, obj) in scene.objects.iter().enumerate() {
            let iso = obj.transform_at(frame);
            let local: Vec<Vector3<f64>> = obj
                .mesh
                .vertices
                .iter()
                .map(|v| Vector3::from(*v))
                .collect();
            let world: Vec<Vector3<f64>> = local
                .iter()
                .map(|v| (iso * Point3::from(*v)).coords)
                .collect();
            let start = triangles.len();
            for idx in &obj.mesh.indices {
                let [a, b, c] = idx.map(|i| world[i]);
                let e1 = b - a;
                let e2 = c - a;
                triangles.push(Triangle {
                    v0: a,
                    e1,
                    e2,
                    normal: e1.cross(&e2).normalize(),
                    object: oi,
                });
            }
            let mut lo = Vector3::repeat(f64::INFINITY);
            let mut hi = Vector3::repeat(f64::NEG_INFINITY);
            for v in &world {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
            let pad = Vector3::repeat(1e-9);
            let (edge_idx, closed) = feature_edges(&local, &obj.mesh.indices);
            let edges = edge_idx
                .into_iter()
                .map(|(a, b)| (world[a], world[b]))
                .collect();
            objects.push(ObjectGeometry {
                triangles: start..triangles.len(),
                lo: lo - pad,
                hi: hi + pad,
                edges,
                closed,
            });
        }
        FrameGeometry {
            triangles,
            objects,
            edge_margin,
        }
    }

    pub fn edge_margin(&self) -> f64 {
        self.edge_margin
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Nearest hit along `dir` (unit norm) beyond the self-intersection offset.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<(f64, usize)> = None;
        for obj in &self.objects {
            let Some(entry) = ray_box_entry(origin, dir, &obj.lo, &obj.hi) else {
                continue;
            };
            if best.is_some_and(|(t, _)| entry > t) {
                continue;
            }
            for ti in obj.triangles.clone() {
                if let Some(t) = self.triangles[ti].intersect(origin, dir) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, ti));
                    }
                }
            }
        }
        best.map(|(t, ti)| self.make_hit(origin, dir, t, ti))
    }

    /// Reference search without bounding-box culling.
    pub fn intersect_brute_force(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<(f64, usize)> = None;
        for (ti, tri) in self.triangles.iter().enumerate() {
            if let Some(t) = tri.intersect(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, ti));
                }
            }
        }
        best.map(|(t, ti)| self.make_hit(origin, dir, t, ti))
    }

    /// True when a surface lies strictly between `from` and `to`.
    pub fn occluded(&self, from: &Vector3<f64>, to: &Vector3<f64>) -> bool {
        let delta = to - from;
        let dist = delta.norm();
        if dist <= SELF_INTERSECTION_EPS {
            return false;
        }
        let dir = delta / dist;
        self.intersect(from, &dir)
            .is_some_and(|h| h.distance < dist - SELF_INTERSECTION_EPS)
    }

    fn make_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t: f64, ti: usize) -> Hit {
        let tri = &self.triangles[ti];
        let point = origin + dir * t;
        let edge = self.nearest_edge(tri.object, &point);
        let near_edge = edge.is_some_and(|e| e.distance <= self.edge_margin);
        Hit {
            point,
            normal: tri.normal,
            object: tri.object,
            triangle: ti - self.objects[tri.object].triangles.start,
            distance: t,
            near_edge,
            edge,
        }
    }

    fn nearest_edge(&self, object: usize, p: &Vector3<f64>) -> Option<EdgeContact> {
        let mut best: Option<EdgeContact> = None;
        for (a, b) in &self.objects[object].edges {
            let c = closest_on_segment(p, a, b);
            let d = (p - c).norm();
            if best.is_none_or(|e| d < e.distance) {
                best = Some(EdgeContact {
                    point: c,
                    direction: (b - a).normalize(),
                    distance: d,
                });
            }
        }
        best
    }

    /// Plane (point, unit normal) of a triangle of an object.
    pub fn triangle_plane(&self, object: usize, triangle: usize) -> (Vector3<f64>, Vector3<f64>) {
        let tri = &self.triangles[self.objects[object].triangles.start + triangle];
        (tri.v0, tri.normal)
    }

    /// Index of a closed mesh containing `p`, by ray parity.
    pub fn enclosing_object(&self, p: &Vector3<f64>) -> Option<usize> {
        let dir = Vector3::new(0.5773, 0.5774, 0.5775).normalize();
        self.objects.iter().position(|obj| {
            if !obj.closed {
                return false;
            }
            let inside_box = (0..3).all(|a| p[a] >= obj.lo[a] && p[a] <= obj.hi[a]);
            if !inside_box {
                return false;
            }
            let crossings = obj
                .triangles
                .clone()
                .filter(|&ti| self.triangles[ti].intersect(p, &dir).is_some())
                .count();
            crossings % 2 == 1
        })
    }

    /// Nearest point of an object's surface to `p`.
    pub fn closest_point_on_object(&self, object: usize, p: &Vector3<f64>) -> Vector3<f64> {
        let mut best = (f64::INFINITY, *p);
        for ti in self.objects[object].triangles.clone() {
            let tri = &self.triangles[ti];
            let c = closest_on_triangle(p, &tri.v0, &(tri.v0 + tri.e1), &(tri.v0 + tri.e2));
            let d = (p - c).norm_squared();
            if d < best.0 {
                best = (d, c);
            }
        }
        best.1
    }
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection 5.1.5).
fn closest_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}
