//! Per-path complex gain: loss factors, carrier phase and Doppler.
//!
//! All factors are amplitude-domain; power is `|gain|^2`. A path's amplitude
//! is the product of the free-space factor, the antenna pattern factor and
//! one factor per surface interaction:
//!
//! | event       | factor                                              |
//! |-------------|-----------------------------------------------------|
//! | reflect     | `|reflection| * roughness`                          |
//! | scatter     | `|reflection| * roughness * scattering(offset)`     |
//! | penetrate   | `1 - |reflection|`                                  |
//! | diffract    | `diffraction(nu)`                                   |
//! | backscatter | `backscatter(incident)`                             |
//!
//! Negative reflection coefficients add `pi` to the path phase.

mod fresnel;

pub use fresnel::{fresnel_integrals, integrate};

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consts::SPEED_OF_LIGHT;
use crate::raytracer::{InteractionKind, PropPath};
use crate::scene::{AntennaPattern, Material, RadioEndpoint};

#[derive(Debug, Error, PartialEq)]
pub enum PropagationError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("evanescent regime: mu_r * eps_r = {product} < sin^2(phi) = {sin2}")]
    EvanescentRegime { product: f64, sin2: f64 },
    #[error("invalid radio configuration: {0}")]
    InvalidRadio(String),
    #[error("surface event without material")]
    MissingMaterial,
}

/// OFDM numerology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    /// Hz.
    pub carrier_freq: f64,
    /// Hz.
    pub bandwidth: f64,
    pub num_subcarriers: usize,
    /// Cyclic prefix length, samples.
    pub cyclic_prefix: usize,
    /// Hz.
    pub sampling_rate: f64,
    pub num_symbols: usize,
    /// Standard deviation of the complex noise per sample.
    #[serde(default)]
    pub noise_stddev: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            carrier_freq: 3.75e9,
            bandwidth: 100e6,
            num_subcarriers: 1024,
            cyclic_prefix: 72,
            sampling_rate: 100e6,
            num_symbols: 100,
            noise_stddev: 0.0,
        }
    }
}

impl RadioConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth / self.num_subcarriers as f64
    }

    /// OFDM symbol duration including the cyclic prefix, seconds.
    pub fn symbol_duration(&self) -> f64 {
        (self.num_subcarriers + self.cyclic_prefix) as f64 / self.sampling_rate
    }

    /// Largest delay representable without wrap-around, seconds.
    pub fn max_delay(&self) -> f64 {
        self.num_subcarriers as f64 / self.bandwidth
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        let bad = |m: &str| Err(PropagationError::InvalidRadio(m.to_string()));
        for (name, v) in [
            ("carrier_freq", self.carrier_freq),
            ("bandwidth", self.bandwidth),
            ("sampling_rate", self.sampling_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !self.num_subcarriers.is_power_of_two() || self.num_subcarriers < 2 {
            return bad("num_subcarriers must be a power of two >= 2");
        }
        if self.num_symbols == 0 {
            return bad("num_symbols must be >= 1");
        }
        if !(self.noise_stddev >= 0.0) {
            return bad("noise_stddev must be >= 0");
        }
        Ok(())
    }
}

/// `lambda / (4 pi d)`.
pub fn free_space_loss(wavelength: f64, distance: f64) -> Result<f64, PropagationError> {
    if !(distance > 0.0) {
        return Err(PropagationError::NonPositiveDistance(distance));
    }
    Ok(wavelength / (4.0 * PI * distance))
}

/// Signed reflection coefficient at incidence `phi` from the normal.
pub fn reflection_loss(incident_angle: f64, material: &Material) -> Result<f64, PropagationError> {
    let product = material.permeability_real * material.permittivity_real;
    let sin2 = incident_angle.sin().powi(2);
    if product < sin2 {
        return Err(PropagationError::EvanescentRegime { product, sin2 });
    }
    let root = (product - sin2).sqrt();
    let cos = incident_angle.cos();
    Ok((cos - root) / (cos + root))
}

/// Lobe factor for a ray `offset` radians away from the specular direction.
pub fn scattering_loss(scatter_offset: f64, alpha_r: f64) -> f64 {
    ((1.0 + scatter_offset.cos()) / 2.0)
        .max(0.0)
        .powf(alpha_r / 2.0)
}

pub fn roughness_loss(incident_angle: f64, roughness: f64, wavelength: f64) -> f64 {
    let g = PI * roughness * incident_angle.cos() / wavelength;
    (-8.0 * g * g).exp() * libm::j0(8.0 * g)
}

/// Knife-edge factor from the Fresnel integrals at `nu`.
pub fn diffraction_loss(nu: f64) -> f64 {
    let (c, s) = fresnel_integrals(nu);
    ((1.0 - c - s).powi(2) + (c + s).powi(2)).sqrt() / 2.0
}

/// Geometrical factor `sqrt(2 d / lambda * a1 * a2)` of an edge seen from
/// both ends of a path that bends by `deviation` radians at the edge, with
/// `d1` and `d2` the distances to the edge.
pub fn diffraction_nu(d1: f64, d2: f64, deviation: f64, wavelength: f64) -> f64 {
    let d = d1 + d2;
    if !(d > 0.0) {
        return 0.0;
    }
    let a1 = deviation * d2 / d;
    let a2 = deviation * d1 / d;
    (2.0 * d / wavelength * a1 * a2).max(0.0).sqrt()
}

pub fn backscatter_loss(incident_angle: f64, material: &Material) -> f64 {
    material.backscatter_coeff * scattering_loss(incident_angle, material.scatter_exponent)
}

/// Amplitude gain of a pattern toward a unit direction in the antenna's
/// local frame, normalized to a peak of 1.
pub fn pattern_gain(pattern: AntennaPattern, local_dir: &Vector3<f64>) -> f64 {
    match pattern {
        AntennaPattern::Isotropic => 1.0,
        AntennaPattern::Dipole => (1.0 - local_dir.z.powi(2)).max(0.0).sqrt(),
        AntennaPattern::Patch => local_dir.x.max(0.0),
    }
}

/// Product of the TX gain toward the departure direction and the RX gain
/// toward the direction the path arrives from, both in local frames.
pub fn beam_loss(
    direction_tx: &Vector3<f64>,
    direction_rx: &Vector3<f64>,
    tx_pattern: AntennaPattern,
    rx_pattern: AntennaPattern,
) -> f64 {
    pattern_gain(tx_pattern, direction_tx) * pattern_gain(rx_pattern, direction_rx)
}

/// Phase advance per OFDM symbol for a path whose length shrinks at
/// `2 * surface_speed`: `4 pi f_c v_s T0 / c0`.
pub fn doppler_phase_per_symbol(surface_speed: f64, radio: &RadioConfig) -> f64 {
    4.0 * PI * radio.carrier_freq * surface_speed * radio.symbol_duration() / SPEED_OF_LIGHT
}

/// `4 pi (N_sub + CP) f_s f_c v_s / c0`, kept as metadata.
pub fn printed_beta(surface_speed: f64, radio: &RadioConfig) -> f64 {
    4.0 * PI
        * (radio.num_subcarriers + radio.cyclic_prefix) as f64
        * radio.sampling_rate
        * radio.carrier_freq
        * surface_speed
        / SPEED_OF_LIGHT
}

/// Complex gain of one traced path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGain {
    /// Linear amplitude, `>= 0`.
    pub amplitude: f64,
    /// Static phase: carrier phase `-2 pi f_c tau` plus `pi` per negative
    /// reflection coefficient, radians.
    pub phase: f64,
    /// Seconds.
    pub delay: f64,
    pub doppler_phase_per_symbol: f64,
    pub printed_beta: f64,
    /// Summed surface speed along the path, m/s.
    pub surface_speed: f64,
    /// Product of the interaction factors of each kind.
    pub loss_breakdown: BTreeMap<InteractionKind, f64>,
    pub path_factor: f64,
    pub beam_factor: f64,
    /// Unit direction of travel leaving TX, world frame.
    pub departure: Vector3<f64>,
    /// Unit direction of travel reaching RX, world frame.
    pub arrival: Vector3<f64>,
    pub length: f64,
}

impl PathGain {
    /// Amplitude recomputed from the stored factors.
    pub fn factor_product(&self) -> f64 {
        self.loss_breakdown.values().product::<f64>() * self.path_factor * self.beam_factor
    }
}

/// Losses, delay and Doppler of a traced path.
pub fn path_gain(
    path: &PropPath,
    radio: &RadioConfig,
    wavelength: f64,
    tx: &RadioEndpoint,
    rx: &RadioEndpoint,
) -> Result<PathGain, PropagationError> {
    let path_factor = free_space_loss(wavelength, path.total_length)?;
    let departure = path.departure();
    let arrival = path.arrival();
    let beam_factor = beam_loss(
        &tx.to_local(&departure),
        &rx.to_local(&(-arrival)),
        tx.pattern,
        rx.pattern,
    );

    let mut breakdown: BTreeMap<InteractionKind, f64> = BTreeMap::new();
    let mut sign_flips = 0u32;
    let n = path.events.len();
    for (i, e) in path.events.iter().enumerate().take(n - 1).skip(1) {
        let material = e
            .material
            .as_ref()
            .ok_or(PropagationError::MissingMaterial)?;
        let factor = match e.kind {
            InteractionKind::Reflect | InteractionKind::Scatter => {
                let r = reflection_loss(e.incident_angle, material)?;
                if r < 0.0 {
                    sign_flips += 1;
                }
                let mut f = r.abs()
                    * roughness_loss(e.incident_angle, material.roughness_stddev, wavelength);
                if e.kind == InteractionKind::Scatter {
                    f *= scattering_loss(e.scatter_offset, material.scatter_exponent);
                }
                f
            }
            InteractionKind::Penetrate => 1.0 - reflection_loss(e.incident_angle, material)?.abs(),
            InteractionKind::Diffract => {
                let nu = diffraction_nu(
                    path.segment_lengths[i - 1],
                    path.segment_lengths[i],
                    e.deviation,
                    wavelength,
                );
                diffraction_loss(nu)
            }
            InteractionKind::Backscatter => backscatter_loss(e.incident_angle, material),
            InteractionKind::Emit | InteractionKind::Receive => 1.0,
        };
        *breakdown.entry(e.kind).or_insert(1.0) *= factor;
    }

    let amplitude = breakdown.values().product::<f64>() * path_factor * beam_factor;
    let delay = path.total_length / SPEED_OF_LIGHT;
    let carrier = -2.0 * PI * radio.carrier_freq * delay;
    let phase = (carrier + PI * sign_flips as f64).rem_euclid(2.0 * PI);
    let surface_speed = path.surface_speed();
    Ok(PathGain {
        amplitude,
        phase,
        delay,
        doppler_phase_per_symbol: doppler_phase_per_symbol(surface_speed, radio),
        printed_beta: printed_beta(surface_speed, radio),
        surface_speed,
        loss_breakdown: breakdown,
        path_factor,
        beam_factor,
        departure,
        arrival,
        length: path.total_length,
    })
}
