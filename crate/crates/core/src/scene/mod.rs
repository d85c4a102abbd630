//! Scene description: meshes, materials, radio endpoints and keyframed motion.
//!
//! A scene is read from a UTF-8 JSON document (schema in `docs/scene-format.md`)
//! and validated once. After parsing it is immutable; every query is a pure
//! function of the scene and can be shared across worker threads.

mod geometry;

pub(crate) use geometry::ray_box_entry;
pub use geometry::{EdgeContact, FrameGeometry, Hit};

use std::path::Path;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consts::MIN_TRIANGLE_AREA;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene document: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scene document: {0}")]
    Parse(String),
    #[error("invalid scene: {object}.{field}: {reason}")]
    Validation {
        object: String,
        field: String,
        reason: String,
    },
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("frame {frame} out of range for a scene with {num_frames} frames")]
    FrameOutOfRange { frame: u32, num_frames: u32 },
}

fn invalid(object: &str, field: &str, reason: impl Into<String>) -> SceneError {
    SceneError::Validation {
        object: object.to_string(),
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn one() -> f64 {
    1.0
}

fn default_scatter_exponent() -> f64 {
    4.0
}

/// Electromagnetic surface properties, taken at the simulation carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub name: String,
    /// Relative permittivity (real part).
    pub permittivity_real: f64,
    /// Relative permeability (real part).
    #[serde(default = "one")]
    pub permeability_real: f64,
    /// Standard deviation of the surface height, meters.
    #[serde(default)]
    pub roughness_stddev: f64,
    /// Exponent shaping the scattering lobe around the specular direction.
    #[serde(default = "default_scatter_exponent")]
    pub scatter_exponent: f64,
    /// Fraction of the incident amplitude returned toward the source.
    #[serde(default)]
    pub backscatter_coeff: f64,
    #[serde(default)]
    pub penetrable: bool,
    /// Refractive index of the material relative to air. Defaults to
    /// `sqrt(permittivity_real * permeability_real)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refractive_index: Option<f64>,
}

impl Material {
    pub fn refractive_index(&self) -> f64 {
        self.refractive_index
            .unwrap_or_else(|| (self.permittivity_real * self.permeability_real).sqrt())
    }

    fn validate(&self) -> Result<(), SceneError> {
        let name = format!("material:{}", self.name);
        if !(self.permittivity_real >= 1.0) {
            return Err(invalid(&name, "permittivity_real", "must be >= 1"));
        }
        if !(self.permeability_real > 0.0) {
            return Err(invalid(&name, "permeability_real", "must be > 0"));
        }
        if !(self.roughness_stddev >= 0.0) {
            return Err(invalid(&name, "roughness_stddev", "must be >= 0"));
        }
        if !(self.scatter_exponent > 0.0) {
            return Err(invalid(&name, "scatter_exponent", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.backscatter_coeff) {
            return Err(invalid(&name, "backscatter_coeff", "must lie in [0, 1]"));
        }
        if let Some(n) = self.refractive_index {
            if !(n > 0.0) {
                return Err(invalid(&name, "refractive_index", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Triangle mesh in object-local coordinates, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub indices: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn triangle(&self, i: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.indices[i];
        [
            Vector3::from(self.vertices[a]),
            Vector3::from(self.vertices[b]),
            Vector3::from(self.vertices[c]),
        ]
    }

    pub fn num_triangles(&self) -> usize {
        self.indices.len()
    }
}

/// Rigid pose of an object at a given frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub frame: u32,
    #[serde(default)]
    pub translation: [f64; 3],
    /// Roll, pitch, yaw in degrees (rotation about x, then y, then z).
    #[serde(default)]
    pub rotation_deg: [f64; 3],
}

impl Keyframe {
    fn rotation(&self) -> UnitQuaternion<f64> {
        let [r, p, y] = self.rotation_deg;
        UnitQuaternion::from_euler_angles(r.to_radians(), p.to_radians(), y.to_radians())
    }

    fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: String,
    pub mesh: Mesh,
    /// Name of an entry in the scene's material list.
    pub material: String,
    #[serde(default)]
    pub keyframes: Vec<Keyframe>,
}

impl SceneObject {
    /// Object-to-world transform at `frame`.
    ///
    /// Between keyframes the translation is interpolated linearly and the
    /// rotation by slerp; outside the keyframed range the nearest keyframe
    /// holds. Objects without keyframes sit at the identity.
    pub fn transform_at(&self, frame: u32) -> Isometry3<f64> {
        let kfs = &self.keyframes;
        let pose = |t: Vector3<f64>, r: UnitQuaternion<f64>| {
            Isometry3::from_parts(Translation3::from(t), r)
        };
        match kfs.len() {
            0 => Isometry3::identity(),
            _ if frame <= kfs[0].frame => pose(kfs[0].translation(), kfs[0].rotation()),
            _ if frame >= kfs[kfs.len() - 1].frame => {
                let k = &kfs[kfs.len() - 1];
                pose(k.translation(), k.rotation())
            }
            _ => {
                let i = kfs.partition_point(|k| k.frame <= frame) - 1;
                let (a, b) = (&kfs[i], &kfs[i + 1]);
                if a.frame == frame {
                    return pose(a.translation(), a.rotation());
                }
                let s = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
                let t = a.translation() * (1.0 - s) + b.translation() * s;
                let r = a.rotation().slerp(&b.rotation(), s);
                pose(t, r)
            }
        }
    }

    fn is_static(&self) -> bool {
        self.keyframes
            .windows(2)
            .all(|w| w[0].translation == w[1].translation && w[0].rotation_deg == w[1].rotation_deg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AntennaPattern {
    Isotropic,
    /// Short dipole along the local z axis.
    Dipole,
    /// Cosine patch with boresight along the local x axis.
    Patch,
}

impl Default for AntennaPattern {
    fn default() -> Self {
        AntennaPattern::Isotropic
    }
}

fn default_axis() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_count() -> usize {
    1
}

/// Uniform linear array in the endpoint's local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    #[serde(default = "default_count")]
    pub count: usize,
    /// Element spacing in meters; half a wavelength when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    /// Unit vector along which the elements are laid out.
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        ArrayGeometry {
            count: 1,
            spacing: None,
            axis: default_axis(),
        }
    }
}

impl ArrayGeometry {
    pub fn spacing_for(&self, wavelength: f64) -> f64 {
        self.spacing.unwrap_or(wavelength / 2.0)
    }

    /// Element offsets in the local frame; element 0 sits at the origin.
    pub fn offsets(&self, wavelength: f64) -> Vec<Vector3<f64>> {
        let d = self.spacing_for(wavelength);
        let axis = Vector3::from(self.axis);
        (0..self.count).map(|m| axis * (m as f64 * d)).collect()
    }
}

fn identity_orientation() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioEndpoint {
    pub position: [f64; 3],
    /// Unit quaternion `[w, x, y, z]` rotating local axes into the world.
    #[serde(default = "identity_orientation")]
    pub orientation: [f64; 4],
    #[serde(default)]
    pub array: ArrayGeometry,
    #[serde(default)]
    pub pattern: AntennaPattern,
}

impl RadioEndpoint {
    pub fn at(position: [f64; 3]) -> Self {
        RadioEndpoint {
            position,
            orientation: identity_orientation(),
            array: ArrayGeometry::default(),
            pattern: AntennaPattern::Isotropic,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.orientation;
        UnitQuaternion::new_normalize(nalgebra::Quaternion::new(w, x, y, z))
    }

    /// Express a world direction in the endpoint's local frame.
    pub fn to_local(&self, world_dir: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().inverse_transform_vector(world_dir)
    }

    /// Array axis in world coordinates.
    pub fn array_axis(&self) -> Vector3<f64> {
        self.rotation() * Vector3::from(self.array.axis)
    }

    /// Element positions in world coordinates.
    pub fn element_positions(&self, wavelength: f64) -> Vec<Vector3<f64>> {
        let rot = self.rotation();
        let p = self.position();
        self.array
            .offsets(wavelength)
            .into_iter()
            .map(|o| p + rot * o)
            .collect()
    }

    fn validate(&self, name: &str) -> Result<(), SceneError> {
        let q = self.orientation;
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(invalid(
                name,
                "orientation",
                format!("quaternion norm {norm} != 1"),
            ));
        }
        if self.array.count == 0 {
            return Err(invalid(name, "array.count", "must be >= 1"));
        }
        let axis_norm = Vector3::from(self.array.axis).norm();
        if (axis_norm - 1.0).abs() > 1e-6 {
            return Err(invalid(name, "array.axis", "must be a unit vector"));
        }
        if let Some(d) = self.array.spacing {
            if !(d > 0.0) {
                return Err(invalid(name, "array.spacing", "must be > 0"));
            }
        }
        if self.position.iter().any(|v| !v.is_finite()) {
            return Err(invalid(name, "position", "must be finite"));
        }
        Ok(())
    }
}

/// A validated scene. Field names match the top-level document keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub materials: Vec<Material>,
    pub objects: Vec<SceneObject>,
    pub tx: RadioEndpoint,
    pub rx: RadioEndpoint,
    /// Animation frames per second.
    pub frame_rate: f64,
    pub num_frames: u32,
}

/// Read and validate a scene document.
pub fn parse_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    let text = std::fs::read_to_string(path)?;
    Scene::from_json(&text)
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Scene, SceneError> {
        let scene: Scene =
            serde_json::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scene serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return Err(invalid("scene", "frame_rate", "must be > 0"));
        }
        if self.num_frames == 0 {
            return Err(invalid("scene", "num_frames", "must be >= 1"));
        }
        for (i, m) in self.materials.iter().enumerate() {
            m.validate()?;
            if self.materials[..i].iter().any(|o| o.name == m.name) {
                return Err(invalid(&m.name, "name", "duplicate material"));
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if self.objects[..i].iter().any(|o| o.id == obj.id) {
                return Err(invalid(&obj.id, "id", "duplicate object id"));
            }
            if self.material(&obj.material).is_none() {
                return Err(invalid(
                    &obj.id,
                    "material",
                    format!("unknown material `{}`", obj.material),
                ));
            }
            validate_mesh(obj)?;
            if obj.keyframes.windows(2).any(|w| w[1].frame <= w[0].frame) {
                return Err(invalid(
                    &obj.id,
                    "keyframes",
                    "frame indices must be strictly increasing",
                ));
            }
        }
        self.tx.validate("tx")?;
        self.rx.validate("rx")?;

        let mut check_frames: Vec<u32> = vec![0];
        for obj in &self.objects {
            check_frames.extend(
                obj.keyframes
                    .iter()
                    .map(|k| k.frame.min(self.num_frames - 1)),
            );
        }
        check_frames.sort_unstable();
        check_frames.dedup();
        for frame in check_frames {
            let geom = FrameGeometry::new(self, frame, 0.0);
            for (name, ep) in [("tx", &self.tx), ("rx", &self.rx)] {
                if let Some(obj) = geom.enclosing_object(&ep.position()) {
                    return Err(invalid(
                        name,
                        "position",
                        format!("inside object `{}` at frame {frame}", self.objects[obj].id),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn material(&self, name: &str) -> Option<&Material> {
        self.materials.iter().find(|m| m.name == name)
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn object_material(&self, index: usize) -> &Material {
        self.material(&self.objects[index].material)
            .expect("validated scene references known materials")
    }

    /// Copy of the scene without the given object, e.g. to build a clutter
    /// reference that lacks the target.
    pub fn without_object(&self, id: &str) -> Result<Scene, SceneError> {
        let idx = self
            .object_index(id)
            .ok_or_else(|| SceneError::UnknownObject(id.to_string()))?;
        let mut scene = self.clone();
        scene.objects.remove(idx);
        Ok(scene)
    }

    /// World geometry at a frame, ready for ray queries.
    pub fn geometry(&self, frame: u32, edge_margin: f64) -> FrameGeometry {
        FrameGeometry::new(self, frame, edge_margin)
    }

    /// Nearest intersection of a ray with the scene at `frame`.
    ///
    /// Builds the frame geometry on every call; hot loops should hold a
    /// [`FrameGeometry`] instead.
    pub fn intersect_ray(
        &self,
        origin: &Vector3<f64>,
        direction: &Vector3<f64>,
        frame: u32,
        edge_margin: f64,
    ) -> Option<Hit> {
        self.geometry(frame, edge_margin)
            .intersect(origin, direction)
    }

    /// Velocity of a surface point between `frame` and `frame + 1`, m/s.
    ///
    /// `point` is a world position on the object at `frame`.
    pub fn surface_velocity(
        &self,
        object_id: &str,
        point: &Vector3<f64>,
        frame: u32,
    ) -> Result<Vector3<f64>, SceneError> {
        let idx = self
            .object_index(object_id)
            .ok_or_else(|| SceneError::UnknownObject(object_id.to_string()))?;
        if frame + 1 >= self.num_frames {
            return Err(SceneError::FrameOutOfRange {
                frame,
                num_frames: self.num_frames,
            });
        }
        Ok(self.forward_difference(idx, point, frame))
    }

    fn forward_difference(&self, idx: usize, point: &Vector3<f64>, frame: u32) -> Vector3<f64> {
        let obj = &self.objects[idx];
        if obj.is_static() {
            return Vector3::zeros();
        }
        let t0 = obj.transform_at(frame);
        let t1 = obj.transform_at(frame + 1);
        let local = t0.inverse_transform_point(&Point3::from(*point));
        ((t1 * local) - (t0 * local)) * self.frame_rate
    }

    /// Velocity used while tracing: the forward difference where it exists,
    /// the backward difference on the final frame, zero for single-frame scenes.
    pub fn velocity_for_tracing(
        &self,
        idx: usize,
        point: &Vector3<f64>,
        frame: u32,
    ) -> Vector3<f64> {
        if self.num_frames < 2 {
            return Vector3::zeros();
        }
        if frame + 1 < self.num_frames {
            return self.forward_difference(idx, point, frame);
        }
        let obj = &self.objects[idx];
        let t_prev = obj.transform_at(frame - 1);
        let t_now = obj.transform_at(frame);
        let local = t_now.inverse_transform_point(&Point3::from(*point));
        ((t_now * local) - (t_prev * local)) * self.frame_rate
    }
}

fn validate_mesh(obj: &SceneObject) -> Result<(), SceneError> {
    let mesh = &obj.mesh;
    if mesh.indices.is_empty() || mesh.vertices.is_empty() {
        return Err(invalid(&obj.id, "mesh", "mesh is empty"));
    }
    if mesh.vertices.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(&obj.id, "mesh.vertices", "non-finite coordinate"));
    }
    for (t, idx) in mesh.indices.iter().enumerate() {
        if idx.iter().any(|&i| i >= mesh.vertices.len()) {
            return Err(invalid(
                &obj.id,
                "mesh.indices",
                format!("triangle {t} indexes past the vertex list"),
            ));
        }
        let [a, b, c] = mesh.triangle(t);
        let area = 0.5 * (b - a).cross(&(c - a)).norm();
        if !(area > MIN_TRIANGLE_AREA) {
            return Err(invalid(
                &obj.id,
                "mesh.indices",
                format!("triangle {t} is degenerate"),
            ));
        }
    }
    Ok(())
}

/// Axis-aligned box as a closed 12-triangle mesh centred on the origin.
pub fn box_mesh(size: [f64; 3]) -> Mesh {
    let [hx, hy, hz] = size.map(|s| s / 2.0);
    let vertices = vec![
        [-hx, -hy, -hz],
        [hx, -hy, -hz],
        [hx, hy, -hz],
        [-hx, hy, -hz],
        [-hx, -hy, hz],
        [hx, -hy, hz],
        [hx, hy, hz],
        [-hx, hy, hz],
    ];
    // outward winding
    let indices = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    Mesh { vertices, indices }
}

/// Rectangle spanned by `u` and `v` around `center`, as two triangles whose
/// normal is `u x v`.
pub fn quad_mesh(center: [f64; 3], u: [f64; 3], v: [f64; 3]) -> Mesh {
    let c = Vector3::from(center);
    let (u, v) = (Vector3::from(u) / 2.0, Vector3::from(v) / 2.0);
    let corners = [c - u - v, c + u - v, c + u + v, c - u + v];
    Mesh {
        vertices: corners.iter().map(|p| [p.x, p.y, p.z]).collect(),
        indices: vec![[0, 1, 2], [0, 2, 3]],
    }
}
