//! Recursive probe tracing from TX to the RX capture cube.
//!
//! Probes leave the transmitter on a full-sphere grid. Each surface hit
//! spawns backscatter, reflection, scatter, penetration and diffraction
//! probes, up to `max_interactions` surface interactions per path. A probe
//! whose next segment enters the axis-aligned cube around the receiver ends
//! the path; the arrival point is snapped onto the receiver itself.
//!
//! Paths made only of reflections are refined onto their exact image-source
//! geometry. The collected list is sorted by event signature, then length,
//! and near-duplicates (same signature, length within `wavelength / 8`) are
//! merged keeping the shorter one.

mod dump;
mod probes;

pub use dump::{parse_dump, write_dump, DumpError, DumpedEvent, DumpedPath};
pub use probes::{initial_probes, new_probes, reflect, refract, ring_count, Probe, ProbeError};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scene::{ray_box_entry, FrameGeometry, Hit, Material, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    Emit,
    Reflect,
    Scatter,
    Penetrate,
    Diffract,
    Backscatter,
    Receive,
}

impl InteractionKind {
    pub const ALL: [InteractionKind; 7] = [
        InteractionKind::Emit,
        InteractionKind::Reflect,
        InteractionKind::Scatter,
        InteractionKind::Penetrate,
        InteractionKind::Diffract,
        InteractionKind::Backscatter,
        InteractionKind::Receive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InteractionKind::Emit => "emit",
            InteractionKind::Reflect => "reflect",
            InteractionKind::Scatter => "scatter",
            InteractionKind::Penetrate => "penetrate",
            InteractionKind::Diffract => "diffract",
            InteractionKind::Backscatter => "backscatter",
            InteractionKind::Receive => "receive",
        }
    }

    pub fn parse(s: &str) -> Option<InteractionKind> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// True for the kinds that happen on a surface.
    pub fn is_surface(self) -> bool {
        !matches!(self, InteractionKind::Emit | InteractionKind::Receive)
    }
}

impl std::fmt::Display for InteractionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionEvent {
    pub kind: InteractionKind,
    pub point: Vector3<f64>,
    pub object_id: Option<String>,
    /// Index into `Scene::objects`.
    pub object_index: Option<usize>,
    /// Triangle index within the object's mesh.
    pub triangle: Option<usize>,
    /// Angle between the incoming ray and the surface normal, radians.
    pub incident_angle: f64,
    /// Angle between the outgoing ray and the surface normal, radians.
    pub outgoing_angle: f64,
    /// Angular distance from the specular direction, radians.
    pub scatter_offset: f64,
    /// Diffraction bend angle, radians.
    pub deviation: f64,
    /// Surface velocity projected on the bisector `(out - in) / 2`, m/s.
    pub surface_speed: f64,
    /// Unit direction of travel arriving at the event (zero for `Emit`).
    pub incoming: Vector3<f64>,
    /// Unit direction of travel leaving the event (zero for `Receive`).
    pub outgoing: Vector3<f64>,
    /// Unit surface normal facing the incoming ray (zero for endpoints).
    pub normal: Vector3<f64>,
    pub material: Option<Material>,
}

impl InteractionEvent {
    fn endpoint(
        kind: InteractionKind,
        point: Vector3<f64>,
        incoming: Vector3<f64>,
        outgoing: Vector3<f64>,
    ) -> Self {
        InteractionEvent {
            kind,
            point,
            object_id: None,
            object_index: None,
            triangle: None,
            incident_angle: 0.0,
            outgoing_angle: 0.0,
            scatter_offset: 0.0,
            deviation: 0.0,
            surface_speed: 0.0,
            incoming,
            outgoing,
            normal: Vector3::zeros(),
            material: None,
        }
    }
}

/// A traced path from TX to RX.
#[derive(Debug, Clone, PartialEq)]
pub struct PropPath {
    pub events: Vec<InteractionEvent>,
    pub segment_lengths: Vec<f64>,
    pub total_length: f64,
}

/// Event kinds and object indices, the key used for sorting and merging.
pub type Signature = Vec<(InteractionKind, Option<usize>)>;

impl PropPath {
    fn from_events(events: Vec<InteractionEvent>) -> PropPath {
        let segment_lengths: Vec<f64> = events
            .windows(2)
            .map(|w| (w[1].point - w[0].point).norm())
            .collect();
        let total_length = segment_lengths.iter().sum();
        PropPath {
            events,
            segment_lengths,
            total_length,
        }
    }

    pub fn signature(&self) -> Signature {
        self.events
            .iter()
            .map(|e| (e.kind, e.object_index))
            .collect()
    }

    /// Number of surface interactions.
    pub fn interactions(&self) -> usize {
        self.events.len().saturating_sub(2)
    }

    pub fn is_line_of_sight(&self) -> bool {
        self.events.len() == 2
    }

    /// Unit direction leaving the transmitter.
    pub fn departure(&self) -> Vector3<f64> {
        self.events[0].outgoing
    }

    /// Unit direction of travel when reaching the receiver.
    pub fn arrival(&self) -> Vector3<f64> {
        self.events[self.events.len() - 1].incoming
    }

    /// Sum of the per-event surface speeds, m/s.
    pub fn surface_speed(&self) -> f64 {
        self.events.iter().map(|e| e.surface_speed).sum()
    }

    /// Check the structural invariants; returns a description of the first
    /// violation.
    pub fn check(&self) -> Result<(), String> {
        let n = self.events.len();
        if n < 2 {
            return Err(format!("{n} events"));
        }
        if self.events[0].kind != InteractionKind::Emit {
            return Err("first event is not emit".into());
        }
        if self.events[n - 1].kind != InteractionKind::Receive {
            return Err("last event is not receive".into());
        }
        if self.segment_lengths.len() != n - 1 {
            return Err("segment count mismatch".into());
        }
        if self.segment_lengths.iter().any(|&l| !(l > 0.0)) {
            return Err("non-positive segment".into());
        }
        let sum: f64 = self.segment_lengths.iter().sum();
        if (sum - self.total_length).abs() > 1e-9 * sum.max(1.0) {
            return Err("total length differs from segment sum".into());
        }
        for e in &self.events {
            if !(0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&e.incident_angle) {
                return Err(format!("incident angle {} out of range", e.incident_angle));
            }
            if e.scatter_offset < 0.0 {
                return Err("negative scatter offset".into());
            }
        }
        Ok(())
    }
}

/// Which interaction kinds spawn new probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionFlags {
    pub reflect: bool,
    pub scatter: bool,
    pub penetrate: bool,
    pub diffract: bool,
    pub backscatter: bool,
}

impl Default for InteractionFlags {
    fn default() -> Self {
        InteractionFlags {
            reflect: true,
            scatter: true,
            penetrate: true,
            diffract: true,
            backscatter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracerConfig {
    pub wavelength: f64,
    /// Launch grid step, degrees.
    pub probe_resolution: f64,
    pub max_interactions: usize,
    /// Half-angle of the scatter cone, degrees.
    pub scatter_spread: f64,
    /// Ring spacing inside the scatter cone, degrees.
    pub scatter_resolution: f64,
    /// Half side of the RX capture cube, meters.
    pub rx_cube_halfwidth: f64,
    /// Distance to a silhouette edge below which a hit diffracts, meters.
    pub edge_margin: f64,
    /// Diffraction fan step, degrees.
    pub diffraction_step: f64,
    /// Diffraction fan half-extent, degrees.
    pub diffraction_extent: f64,
    pub enable: InteractionFlags,
    /// Snap reflection-only paths onto their image-source geometry.
    pub refine_specular: bool,
}

impl TracerConfig {
    /// Defaults for a carrier wavelength: 1 degree probes, two interactions,
    /// a 10 degree scatter cone, a 4 wavelength RX cube and edge margin.
    pub fn new(wavelength: f64) -> Self {
        TracerConfig {
            wavelength,
            probe_resolution: 1.0,
            max_interactions: 2,
            scatter_spread: 10.0,
            scatter_resolution: 1.0,
            rx_cube_halfwidth: 2.0 * wavelength,
            edge_margin: 4.0 * wavelength,
            diffraction_step: 1.0,
            diffraction_extent: 90.0,
            enable: InteractionFlags::default(),
            refine_specular: true,
        }
    }

    /// Merge tolerance for near-duplicate paths.
    pub fn merge_tolerance(&self) -> f64 {
        self.wavelength / 8.0
    }
}

struct Node {
    kind: InteractionKind,
    point: Vector3<f64>,
    object: usize,
    triangle: usize,
    normal: Vector3<f64>,
    incoming: Vector3<f64>,
    outgoing: Vector3<f64>,
    scatter_offset: f64,
    deviation: f64,
}

struct Tracer<'a> {
    scene: &'a Scene,
    geom: FrameGeometry,
    config: &'a TracerConfig,
    frame: u32,
    tx: Vector3<f64>,
    rx: Vector3<f64>,
    cube_lo: Vector3<f64>,
    cube_hi: Vector3<f64>,
    tx_in_cube: bool,
}

fn angle_to_normal(dir: &Vector3<f64>, normal: &Vector3<f64>) -> f64 {
    dir.dot(normal).abs().min(1.0).acos()
}

impl Tracer<'_> {
    fn trace(
        &self,
        probes: &[Probe],
        depth: usize,
        parent: Option<(&Hit, &Vector3<f64>)>,
        stack: &mut Vec<Node>,
        out: &mut Vec<PropPath>,
    ) {
        for probe in probes {
            let origin = probe.origin;
            let dir = probe.direction;
            if let Some((hit, incident)) = parent {
                stack.push(Node {
                    kind: probe.kind,
                    point: origin,
                    object: hit.object,
                    triangle: hit.triangle,
                    normal: hit.normal,
                    incoming: *incident,
                    outgoing: dir,
                    scatter_offset: probe.scatter_offset,
                    deviation: probe.deviation,
                });
            }
            let hit = self.geom.intersect(&origin, &dir);
            let reaches_rx = !(depth == 0 && self.tx_in_cube)
                && ray_box_entry(&origin, &dir, &self.cube_lo, &self.cube_hi)
                    .is_some_and(|t| hit.as_ref().is_none_or(|h| t < h.distance));
            if reaches_rx {
                // direct TX-RX paths are added analytically
                if depth > 0 {
                    out.push(self.build_path(stack, &dir));
                }
            } else if let Some(hit) = hit {
                if depth < self.config.max_interactions {
                    let material = self.scene.object_material(hit.object);
                    let children = new_probes(&dir, &hit, material, self.config);
                    self.trace(&children, depth + 1, Some((&hit, &dir)), stack, out);
                }
            }
            if parent.is_some() {
                stack.pop();
            }
        }
    }

    fn build_path(&self, stack: &[Node], first_dir: &Vector3<f64>) -> PropPath {
        let mut events = Vec::with_capacity(stack.len() + 2);
        let departure = stack.first().map_or(*first_dir, |n| n.incoming);
        events.push(InteractionEvent::endpoint(
            InteractionKind::Emit,
            self.tx,
            Vector3::zeros(),
            departure,
        ));
        for node in stack {
            events.push(self.surface_event(node));
        }
        let last = stack.last().map_or(self.tx, |n| n.point);
        let arrival = (self.rx - last).normalize();
        events.push(InteractionEvent::endpoint(
            InteractionKind::Receive,
            self.rx,
            arrival,
            Vector3::zeros(),
        ));
        PropPath::from_events(events)
    }

    fn surface_event(&self, node: &Node) -> InteractionEvent {
        let facing = if node.incoming.dot(&node.normal) < 0.0 {
            node.normal
        } else {
            -node.normal
        };
        let velocity = self
            .scene
            .velocity_for_tracing(node.object, &node.point, self.frame);
        InteractionEvent {
            kind: node.kind,
            point: node.point,
            object_id: Some(self.scene.objects[node.object].id.clone()),
            object_index: Some(node.object),
            triangle: Some(node.triangle),
            incident_angle: angle_to_normal(&node.incoming, &facing),
            outgoing_angle: angle_to_normal(&node.outgoing, &facing),
            scatter_offset: node.scatter_offset,
            deviation: node.deviation,
            surface_speed: velocity.dot(&(node.outgoing - node.incoming)) / 2.0,
            incoming: node.incoming,
            outgoing: node.outgoing,
            normal: facing,
            material: Some(self.scene.object_material(node.object).clone()),
        }
    }

    fn line_of_sight(&self) -> Option<PropPath> {
        let delta = self.rx - self.tx;
        if delta.norm() <= 0.0 || self.geom.occluded(&self.tx, &self.rx) {
            return None;
        }
        let dir = delta.normalize();
        Some(PropPath::from_events(vec![
            InteractionEvent::endpoint(InteractionKind::Emit, self.tx, Vector3::zeros(), dir),
            InteractionEvent::endpoint(InteractionKind::Receive, self.rx, dir, Vector3::zeros()),
        ]))
    }

    /// Exact specular geometry for a reflection-only path, if it is valid.
    fn refine(&self, path: &PropPath) -> Option<PropPath> {
        let surfaces: Vec<&InteractionEvent> =
            path.events[1..path.events.len() - 1].iter().collect();
        let planes: Vec<(Vector3<f64>, Vector3<f64>)> = surfaces
            .iter()
            .map(|e| Some(self.geom.triangle_plane(e.object_index?, e.triangle?)))
            .collect::<Option<_>>()?;

        let mut images = Vec::with_capacity(planes.len());
        let mut source = self.tx;
        for (p, n) in &planes {
            source -= n * (2.0 * (source - p).dot(n));
            images.push(source);
        }
        let mut points = vec![Vector3::zeros(); planes.len()];
        let mut target = self.rx;
        for i in (0..planes.len()).rev() {
            let (p, n) = planes[i];
            let ray = images[i] - target;
            let denom = ray.dot(&n);
            if denom.abs() < 1e-15 {
                return None;
            }
            let s = (p - target).dot(&n) / denom;
            if !(s > 0.0 && s < 1.0) {
                return None;
            }
            points[i] = target + ray * s;
            target = points[i];
        }

        let mut prev = self.tx;
        for (i, point) in points.iter().enumerate() {
            let seg = point - prev;
            let len = seg.norm();
            let hit = self.geom.intersect(&prev, &(seg / len))?;
            let object = surfaces[i].object_index?;
            let (_, n) = planes[i];
            if hit.object != object
                || (hit.distance - len).abs() > 1e-6
                || hit.normal.cross(&n).norm() > 1e-9
            {
                return None;
            }
            prev = *point;
        }
        if self.geom.occluded(&prev, &self.rx) {
            return None;
        }

        let mut events = Vec::with_capacity(path.events.len());
        let dir_to = |a: &Vector3<f64>, b: &Vector3<f64>| (b - a).normalize();
        let first = points.first().copied().unwrap_or(self.rx);
        events.push(InteractionEvent::endpoint(
            InteractionKind::Emit,
            self.tx,
            Vector3::zeros(),
            dir_to(&self.tx, &first),
        ));
        for (i, point) in points.iter().enumerate() {
            let before = if i == 0 { self.tx } else { points[i - 1] };
            let after = points.get(i + 1).copied().unwrap_or(self.rx);
            let node = Node {
                kind: InteractionKind::Reflect,
                point: *point,
                object: surfaces[i].object_index?,
                triangle: surfaces[i].triangle?,
                normal: planes[i].1,
                incoming: dir_to(&before, point),
                outgoing: dir_to(point, &after),
                scatter_offset: 0.0,
                deviation: 0.0,
            };
            events.push(self.surface_event(&node));
        }
        let last = points.last().copied().unwrap_or(self.tx);
        events.push(InteractionEvent::endpoint(
            InteractionKind::Receive,
            self.rx,
            dir_to(&last, &self.rx),
            Vector3::zeros(),
        ));
        Some(PropPath::from_events(events))
    }
}

/// Trace every TX-to-RX path of a frame.
///
/// Output is sorted by signature then length and free of near-duplicates;
/// it does not depend on the number of worker threads.
pub fn trace_paths(
    scene: &Scene,
    config: &TracerConfig,
    frame: u32,
) -> Result<Vec<PropPath>, ProbeError> {
    let launch = initial_probes(config.probe_resolution)?;
    let tx = scene.tx.position();
    let rx = scene.rx.position();
    let half = Vector3::repeat(config.rx_cube_halfwidth);
    let cube_lo = rx - half;
    let cube_hi = rx + half;
    let tx_in_cube = (0..3).all(|a| tx[a] >= cube_lo[a] && tx[a] <= cube_hi[a]);
    let tracer = Tracer {
        scene,
        geom: scene.geometry(frame, config.edge_margin),
        config,
        frame,
        tx,
        rx,
        cube_lo,
        cube_hi,
        tx_in_cube,
    };

    let mut paths: Vec<PropPath> = launch
        .par_iter()
        .map(|dir| {
            let mut out = Vec::new();
            let probe = Probe {
                direction: *dir,
                kind: InteractionKind::Emit,
                scatter_offset: 0.0,
                deviation: 0.0,
                origin: tx,
            };
            tracer.trace(
                std::slice::from_ref(&probe),
                0,
                None,
                &mut Vec::new(),
                &mut out,
            );
            out
        })
        .flatten()
        .collect();

    if config.refine_specular {
        paths = paths
            .into_par_iter()
            .filter_map(|p| {
                let specular = p.events[1..p.events.len() - 1]
                    .iter()
                    .all(|e| e.kind == InteractionKind::Reflect);
                if specular {
                    tracer.refine(&p)
                } else {
                    Some(p)
                }
            })
            .collect();
    }
    paths.extend(tracer.line_of_sight());
    paths.retain(|p| p.segment_lengths.iter().all(|&l| l > 0.0));

    let mut keyed: Vec<(Signature, PropPath)> =
        paths.into_iter().map(|p| (p.signature(), p)).collect();
    keyed.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_length.total_cmp(&b.1.total_length))
    });
    Ok(merge_duplicates(keyed, config.merge_tolerance()))
}

fn merge_duplicates(sorted: Vec<(Signature, PropPath)>, tolerance: f64) -> Vec<PropPath> {
    let mut out: Vec<PropPath> = Vec::with_capacity(sorted.len());
    let mut last: Option<(Signature, f64)> = None;
    for (sig, path) in sorted {
        if let Some((ref s, len)) = last {
            if *s == sig && path.total_length - len < tolerance {
                continue;
            }
        }
        last = Some((sig, path.total_length));
        out.push(path);
    }
    out
}
