use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit, Vector3};
use thiserror::Error;

use super::{InteractionKind, TracerConfig};
use crate::scene::{Hit, Material};

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("probe resolution must lie in (0, 90] degrees, got {0}")]
    InvalidResolution(f64),
}

/// Full-sphere azimuth x elevation grid of launch directions.
///
/// Azimuth runs over `[0, 360)` and elevation over `[-90, 90]` in steps of
/// `resolution` degrees; the pole rows collapse to one direction each.
pub fn initial_probes(resolution: f64) -> Result<Vec<Vector3<f64>>, ProbeError> {
    if !(resolution > 0.0 && resolution <= 90.0) {
        return Err(ProbeError::InvalidResolution(resolution));
    }
    let n_az = (360.0 / resolution + 1e-9).floor() as usize;
    let n_el = (180.0 / resolution + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(n_az * (n_el + 1));
    for j in 0..=n_el {
        let el_deg = -90.0 + j as f64 * resolution;
        let at_pole = (el_deg.abs() - 90.0).abs() < 1e-9;
        if at_pole {
            out.push(Vector3::new(0.0, 0.0, el_deg.signum()));
            continue;
        }
        let el = el_deg.to_radians();
        for i in 0..n_az {
            let az = (i as f64 * resolution).to_radians();
            out.push(Vector3::new(
                el.cos() * az.cos(),
                el.cos() * az.sin(),
                el.sin(),
            ));
        }
    }
    Ok(out)
}

/// A direction spawned by a surface interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub direction: Vector3<f64>,
    pub kind: InteractionKind,
    /// Angular distance from the specular direction, radians (scatter only).
    pub scatter_offset: f64,
    /// Bend angle away from the incident direction, radians (diffraction only).
    pub deviation: f64,
    /// Launch point of the new ray.
    pub origin: Vector3<f64>,
}

pub fn reflect(incident: &Vector3<f64>, normal: &Vector3<f64>) -> Vector3<f64> {
    incident - normal * (2.0 * incident.dot(normal))
}

/// Refracted direction by Snell's law with index ratio `eta = n1 / n2`;
/// `None` on total internal reflection.
pub fn refract(
    incident: &Vector3<f64>,
    facing_normal: &Vector3<f64>,
    eta: f64,
) -> Option<Vector3<f64>> {
    let cos_i = -incident.dot(facing_normal);
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i);
    if sin2_t > 1.0 {
        return None;
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    Some((incident * eta + facing_normal * (eta * cos_i - cos_t)).normalize())
}

/// Unit vectors spanning the plane orthogonal to `axis`.
fn orthonormal_basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.x.abs() <= axis.y.abs() && axis.x.abs() <= axis.z.abs() {
        Vector3::x()
    } else if axis.y.abs() <= axis.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let u = axis.cross(&helper).normalize();
    let w = axis.cross(&u);
    (u, w)
}

/// Number of directions on the scatter ring at `offset`, for ring spacing `step`.
pub fn ring_count(offset: f64, step: f64) -> usize {
    ((2.0 * PI * offset.sin() / step).round() as usize).max(1)
}

/// Directions spawned at a hit, in the fixed order backscatter, reflection,
/// scatter cone, penetration, diffraction fan.
pub fn new_probes(
    incident: &Vector3<f64>,
    hit: &Hit,
    material: &Material,
    config: &TracerConfig,
) -> Vec<Probe> {
    let enable = &config.enable;
    let facing = if incident.dot(&hit.normal) < 0.0 {
        hit.normal
    } else {
        -hit.normal
    };
    let simple = |direction: Vector3<f64>, kind| Probe {
        direction,
        kind,
        scatter_offset: 0.0,
        deviation: 0.0,
        origin: hit.point,
    };
    let mut out = Vec::new();
    if enable.backscatter {
        out.push(simple(-incident, InteractionKind::Backscatter));
    }
    let specular = reflect(incident, &hit.normal).normalize();
    if enable.reflect {
        out.push(simple(specular, InteractionKind::Reflect));
    }
    if enable.scatter && config.scatter_spread > 0.0 {
        let step = config.scatter_resolution.to_radians();
        let rings = (config.scatter_spread / config.scatter_resolution + 1e-9).floor() as usize;
        let (u, w) = orthonormal_basis(&specular);
        for k in 1..=rings {
            let theta = k as f64 * step;
            let m = ring_count(theta, step);
            for j in 0..m {
                let psi = 2.0 * PI * j as f64 / m as f64;
                let dir = (specular * theta.cos() + (u * psi.cos() + w * psi.sin()) * theta.sin())
                    .normalize();
                if dir.dot(&facing) > 0.0 {
                    out.push(Probe {
                        direction: dir,
                        kind: InteractionKind::Scatter,
                        scatter_offset: theta,
                        deviation: 0.0,
                        origin: hit.point,
                    });
                }
            }
        }
    }
    if enable.penetrate && material.penetrable {
        let n = material.refractive_index();
        let entering = incident.dot(&hit.normal) < 0.0;
        let eta = if entering { 1.0 / n } else { n };
        if let Some(t) = refract(incident, &facing, eta) {
            out.push(simple(t, InteractionKind::Penetrate));
        }
    }
    if enable.diffract && hit.near_edge {
        if let Some(edge) = hit.edge {
            let mut axis = incident.cross(&hit.normal);
            if axis.norm() < 1e-9 {
                axis = edge.direction;
            }
            let axis = Unit::new_normalize(axis);
            let step = config.diffraction_step;
            let half = (config.diffraction_extent / step + 1e-9).floor() as i64;
            for s in -half..=half {
                let angle = (s as f64 * step).to_radians();
                let dir = (Rotation3::from_axis_angle(&axis, angle) * incident).normalize();
                out.push(Probe {
                    direction: dir,
                    kind: InteractionKind::Diffract,
                    scatter_offset: 0.0,
                    deviation: angle.abs(),
                    origin: edge.point,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn grid_oracle(res: f64) -> usize {
        // enumerate every (az, el) pair and keep distinct directions
        let mut seen = BTreeSet::new();
        let n_az = (360.0 / res) as i64;
        let n_el = (180.0 / res) as i64;
        for j in 0..=n_el {
            for i in 0..n_az {
                let (az, el) = (
                    (i as f64 * res).to_radians(),
                    (-90.0 + j as f64 * res).to_radians(),
                );
                let v = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
                seen.insert(v.map(|c| (c * 1e9).round() as i64));
            }
        }
        seen.len()
    }

    #[test]
    fn coarse_grid_has_six_directions() {
        let probes = initial_probes(90.0).unwrap();
        assert_eq!(probes.len(), 6);
        assert_eq!(grid_oracle(90.0), 6);
    }

    #[test]
    fn one_degree_grid_count() {
        let probes = initial_probes(1.0).unwrap();
        assert_eq!(probes.len(), 360 * 179 + 2);
        assert_eq!(probes.len(), 64_442);
        assert!(probes.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn grid_count_matches_enumeration() {
        for res in [5.0, 10.0, 30.0, 45.0] {
            assert_eq!(
                initial_probes(res).unwrap().len(),
                grid_oracle(res),
                "res {res}"
            );
        }
    }

    #[test]
    fn invalid_resolution() {
        assert_eq!(initial_probes(0.0), Err(ProbeError::InvalidResolution(0.0)));
        assert!(initial_probes(91.0).is_err());
        assert!(initial_probes(f64::NAN).is_err());
    }

    fn hit_on_floor(near_edge: bool) -> Hit {
        Hit {
            point: Vector3::zeros(),
            normal: Vector3::z(),
            object: 0,
            triangle: 0,
            distance: 1.0,
            near_edge,
            edge: near_edge.then(|| crate::scene::EdgeContact {
                point: Vector3::new(0.0, 0.01, 0.0),
                direction: Vector3::x(),
                distance: 0.01,
            }),
        }
    }

    fn material(penetrable: bool) -> Material {
        Material {
            name: "glass".into(),
            permittivity_real: 2.25,
            permeability_real: 1.0,
            roughness_stddev: 0.0,
            scatter_exponent: 4.0,
            backscatter_coeff: 0.1,
            penetrable,
            refractive_index: None,
        }
    }

    #[test]
    fn normal_incidence_reflection_equals_backscatter() {
        let cfg = TracerConfig::new(0.08);
        let d = -Vector3::z();
        let probes = new_probes(&d, &hit_on_floor(false), &material(false), &cfg);
        let back = probes
            .iter()
            .find(|p| p.kind == InteractionKind::Backscatter)
            .unwrap();
        let refl = probes
            .iter()
            .find(|p| p.kind == InteractionKind::Reflect)
            .unwrap();
        assert!((back.direction - Vector3::z()).norm() < 1e-15);
        assert!((refl.direction - back.direction).norm() < 1e-15);
    }

    #[test]
    fn oblique_mirror() {
        let cfg = TracerConfig::new(0.08);
        let d = Vector3::new(1.0, 0.0, -1.0).normalize();
        let probes = new_probes(&d, &hit_on_floor(false), &material(false), &cfg);
        let refl = probes
            .iter()
            .find(|p| p.kind == InteractionKind::Reflect)
            .unwrap();
        assert!((refl.direction - Vector3::new(1.0, 0.0, 1.0).normalize()).norm() < 1e-15);
        assert_eq!(refl.scatter_offset, 0.0);
    }

    #[test]
    fn scatter_cone_offsets_and_count() {
        let cfg = TracerConfig::new(0.08);
        let d = -Vector3::z();
        let probes = new_probes(&d, &hit_on_floor(false), &material(false), &cfg);
        let specular = Vector3::z();
        let scatter: Vec<_> = probes
            .iter()
            .filter(|p| p.kind == InteractionKind::Scatter)
            .collect();
        let expected: usize = (1..=10)
            .map(|k| ring_count((k as f64).to_radians(), 1f64.to_radians()))
            .sum();
        assert_eq!(scatter.len(), expected);
        let mut offsets = BTreeSet::new();
        for p in &scatter {
            let angle = p.direction.dot(&specular).clamp(-1.0, 1.0).acos();
            assert!((angle - p.scatter_offset).abs() < 1e-9);
            assert!(angle <= 10f64.to_radians() + 1e-12);
            offsets.insert((p.scatter_offset.to_degrees() * 1e6).round() as i64);
        }
        let degrees: Vec<i64> = offsets.into_iter().map(|o| o / 1_000_000).collect();
        assert_eq!(degrees, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn penetration_obeys_snell() {
        let cfg = TracerConfig::new(0.08);
        let d = Vector3::new(0.5f64.sin(), 0.0, -0.5f64.cos());
        let probes = new_probes(&d, &hit_on_floor(false), &material(true), &cfg);
        let t = probes
            .iter()
            .find(|p| p.kind == InteractionKind::Penetrate)
            .unwrap();
        let sin_t = t.direction.cross(&Vector3::z()).norm();
        assert!((sin_t - 0.5f64.sin() / 1.5).abs() < 1e-12);
        assert!(t.direction.z < 0.0);
        assert!(new_probes(&d, &hit_on_floor(false), &material(false), &cfg)
            .iter()
            .all(|p| p.kind != InteractionKind::Penetrate));
    }

    #[test]
    fn total_internal_reflection_has_no_transmission() {
        // leaving glass at a steep angle
        let d = Vector3::new(0.8f64.sin(), 0.0, 0.8f64.cos());
        assert!(refract(&d, &(-Vector3::z()), 1.5).is_none());
    }

    #[test]
    fn diffraction_fan_only_near_edges() {
        let cfg = TracerConfig::new(0.08);
        let d = Vector3::new(0.0, 1.0, -1.0).normalize();
        let far = new_probes(&d, &hit_on_floor(false), &material(false), &cfg);
        assert!(far.iter().all(|p| p.kind != InteractionKind::Diffract));
        let near = new_probes(&d, &hit_on_floor(true), &material(false), &cfg);
        let fan: Vec<_> = near
            .iter()
            .filter(|p| p.kind == InteractionKind::Diffract)
            .collect();
        assert_eq!(fan.len(), 181);
        for p in fan {
            assert!((p.origin - Vector3::new(0.0, 0.01, 0.0)).norm() < 1e-15);
            let angle = p.direction.dot(&d).clamp(-1.0, 1.0).acos();
            assert!((angle - p.deviation).abs() < 1e-9);
            // stays in the incidence plane (x = 0)
            assert!(p.direction.x.abs() < 1e-12);
        }
    }

    #[test]
    fn order_is_fixed() {
        let cfg = TracerConfig::new(0.08);
        let d = Vector3::new(0.0, 1.0, -1.0).normalize();
        let probes = new_probes(&d, &hit_on_floor(true), &material(true), &cfg);
        let kinds: Vec<_> = probes.iter().map(|p| p.kind).collect();
        let mut sorted = kinds.clone();
        let rank = |k: &InteractionKind| match k {
            InteractionKind::Backscatter => 0,
            InteractionKind::Reflect => 1,
            InteractionKind::Scatter => 2,
            InteractionKind::Penetrate => 3,
            InteractionKind::Diffract => 4,
            _ => 5,
        };
        sorted.sort_by_key(rank);
        assert_eq!(kinds, sorted);
    }
}
