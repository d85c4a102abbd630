#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use isac_core::propagation::PathGain;
use isac_core::scene::{quad_mesh, Material, RadioEndpoint, Scene, SceneObject};
use isac_core::Vector3;
use ndarray::Array2;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

/// Print a verdict line that survives the test harness' output capture.
pub fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {criterion}: {verdict} {detail}\n");
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

pub fn metal() -> Material {
    Material {
        name: "metal".into(),
        permittivity_real: 1e6,
        permeability_real: 1.0,
        roughness_stddev: 0.0,
        scatter_exponent: 4.0,
        backscatter_coeff: 0.5,
        penetrable: false,
        refractive_index: None,
    }
}

/// Rectangle with full side vectors `u` and `v`.
#[derive(Debug, Clone)]
pub struct Plate {
    pub center: Vector3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Plate {
    pub fn new(center: [f64; 3], u: [f64; 3], v: [f64; 3]) -> Self {
        Plate {
            center: Vector3::from(center),
            u: Vector3::from(u),
            v: Vector3::from(v),
        }
    }

    fn normal(&self) -> Vector3<f64> {
        self.u.cross(&self.v).normalize()
    }

    fn mirror(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let n = self.normal();
        p - 2.0 * n * n.dot(&(p - self.center))
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        let d = p - self.center;
        let (lu, lv) = (self.u.norm(), self.v.norm());
        d.dot(&self.u).abs() / lu <= lu / 2.0 && d.dot(&self.v).abs() / lv <= lv / 2.0
    }

    /// Crossing of the open segment `a -> b` with the plate.
    fn crossing(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<Vector3<f64>> {
        let n = self.normal();
        let da = n.dot(&(a - self.center));
        let db = n.dot(&(b - self.center));
        if da * db >= 0.0 {
            return None;
        }
        let t = da / (da - db);
        if !(1e-9..1.0 - 1e-9).contains(&t) {
            return None;
        }
        let p = a + (b - a) * t;
        self.contains(&p).then_some(p)
    }
}

pub fn plate_scene(plates: &[Plate], tx: [f64; 3], rx: [f64; 3]) -> Scene {
    let objects = plates
        .iter()
        .enumerate()
        .map(|(i, p)| SceneObject {
            id: format!("plate{i}"),
            mesh: quad_mesh(
                [p.center.x, p.center.y, p.center.z],
                [p.u.x, p.u.y, p.u.z],
                [p.v.x, p.v.y, p.v.z],
            ),
            material: "metal".into(),
            keyframes: vec![],
        })
        .collect();
    Scene {
        materials: vec![metal()],
        objects,
        tx: RadioEndpoint::at(tx),
        rx: RadioEndpoint::at(rx),
        frame_rate: 10.0,
        num_frames: 1,
    }
}

/// Lengths of every valid specular path with 1 to `max_order` bounces,
/// keyed by the plate sequence.
pub fn image_source_paths(
    plates: &[Plate],
    tx: Vector3<f64>,
    rx: Vector3<f64>,
    max_order: usize,
) -> BTreeMap<Vec<usize>, f64> {
    let mut out = BTreeMap::new();
    let mut stack: Vec<Vec<usize>> = (0..plates.len()).map(|i| vec![i]).collect();
    while let Some(seq) = stack.pop() {
        if let Some(len) = specular_length(plates, &seq, tx, rx) {
            out.insert(seq.clone(), len);
        }
        if seq.len() < max_order {
            for j in 0..plates.len() {
                if Some(&j) != seq.last() {
                    let mut next = seq.clone();
                    next.push(j);
                    stack.push(next);
                }
            }
        }
    }
    out
}

fn specular_length(
    plates: &[Plate],
    seq: &[usize],
    tx: Vector3<f64>,
    rx: Vector3<f64>,
) -> Option<f64> {
    let mut images = vec![tx];
    for &s in seq {
        let last = *images.last().unwrap();
        images.push(plates[s].mirror(&last));
    }
    let mut points = vec![rx];
    let mut target = rx;
    for k in (0..seq.len()).rev() {
        let p = plates[seq[k]].crossing(&images[k + 1], &target)?;
        points.push(p);
        target = p;
    }
    points.push(tx);
    points.reverse();
    for (leg, w) in points.windows(2).enumerate() {
        for (i, plate) in plates.iter().enumerate() {
            let at_end = (leg > 0 && seq[leg - 1] == i) || (leg < seq.len() && seq[leg] == i);
            if !at_end && plate.crossing(&w[0], &w[1]).is_some() {
                return None;
            }
        }
    }
    Some((images[seq.len()] - rx).norm())
}

/// Cells not below any 8-neighbour, positive and at least `1.1 x` the mean.
pub fn brute_force_peaks(values: &Array2<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = values.dim();
    let mean = values.sum() / (rows * cols) as f64;
    let mut out = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let v = values[[i, j]];
            if v <= 0.0 || v < 1.1 * mean {
                continue;
            }
            let mut ok = true;
            for a in i.saturating_sub(1)..=(i + 1).min(rows - 1) {
                for b in j.saturating_sub(1)..=(j + 1).min(cols - 1) {
                    if (a, b) != (i, j) && values[[a, b]] > v {
                        ok = false;
                    }
                }
            }
            if ok {
                out.push((i, j));
            }
        }
    }
    out
}

/// Flood the grid from the top down with 8-connectivity and return the
/// level at which the component grown from `peak` first merges with
/// another one.
pub fn watershed_col(values: &Array2<f64>, peak: (usize, usize)) -> f64 {
    let (rows, cols) = values.dim();
    let mut order: Vec<(usize, usize)> = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .collect();
    order.sort_by(|a, b| values[[b.0, b.1]].total_cmp(&values[[a.0, a.1]]));
    let at = |i: usize, j: usize| i * cols + j;
    let mut parent: Vec<usize> = (0..rows * cols).collect();
    let mut seen = vec![false; rows * cols];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let target = at(peak.0, peak.1);
    for &(i, j) in &order {
        let here = at(i, j);
        let mut roots = BTreeSet::new();
        for a in i.saturating_sub(1)..=(i + 1).min(rows - 1) {
            for b in j.saturating_sub(1)..=(j + 1).min(cols - 1) {
                if seen[at(a, b)] {
                    roots.insert(find(&mut parent, at(a, b)));
                }
            }
        }
        seen[here] = true;
        if roots.len() >= 2 && seen[target] && roots.contains(&find(&mut parent, target)) {
            return values[[i, j]];
        }
        for r in roots {
            parent[r] = here;
        }
    }
    0.0
}

pub fn pairwise_min_sq(points: &[(f64, f64)], target: usize) -> f64 {
    let mut best = f64::INFINITY;
    for (k, p) in points.iter().enumerate() {
        if k != target {
            best = best.min((p.0 - points[target].0).powi(2) + (p.1 - points[target].1).powi(2));
        }
    }
    best
}

/// Gain record for a synthetic path arriving from azimuth `az` (radians,
/// measured toward +y) at a receiver whose array lies along +y.
pub fn synthetic_path(amplitude: f64, phase: f64, delay: f64, doppler: f64, az: f64) -> PathGain {
    let from = Vector3::new(az.cos(), az.sin(), 0.0);
    PathGain {
        amplitude,
        phase,
        delay,
        doppler_phase_per_symbol: doppler,
        printed_beta: 0.0,
        surface_speed: 0.0,
        loss_breakdown: BTreeMap::new(),
        path_factor: amplitude,
        beam_factor: 1.0,
        departure: from,
        arrival: -from,
        length: delay * isac_core::consts::SPEED_OF_LIGHT,
    }
}

pub fn ula_receiver(count: usize) -> RadioEndpoint {
    let mut rx = RadioEndpoint::at([0.0; 3]);
    rx.array.count = count;
    rx.array.axis = [0.0, 1.0, 0.0];
    rx
}
