//! OFDM MIMO channel frames from a path ensemble.
//!
//! A path with amplitude `a`, static phase `p`, delay `tau` and per-symbol
//! Doppler phase `beta` contributes
//!
//! ```text
//! H[m][k][n] += a * exp(j (p + theta_m)) * exp(-j 2 pi k df tau) * exp(j n beta)
//! ```
//!
//! on antenna `m`, subcarrier `k`, symbol `n`, where `theta_m` is the
//! element's phase advance toward the arrival direction. [`SynthesisMode::Exact`]
//! evaluates this sum directly; [`SynthesisMode::BandLimited`] places each
//! path as a windowed-sinc tap cluster on the sample grid and transforms the
//! delay profile to subcarriers with an FFT.

use std::f64::consts::PI;

use nalgebra::Vector3;
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consts::SUBCARRIER_PHASE_SIGN;
use crate::propagation::{PathGain, RadioConfig};
use crate::scene::{RadioEndpoint, Scene};

/// One-sided support of the fractional-delay kernel, samples.
const KERNEL_HALF: i64 = 32;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pilot at subcarrier {subcarrier}, symbol {symbol} is zero")]
    ZeroPilot { subcarrier: usize, symbol: usize },
}

/// A path as seen by every receive element.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPath {
    pub gain: PathGain,
    /// Phase advance of each element relative to the array origin, radians.
    pub antenna_phases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathEnsemble {
    pub paths: Vec<ChannelPath>,
    pub antenna_count: usize,
}

impl PathEnsemble {
    /// Attach per-element phases `2 pi / lambda * offset . w`, with `w` the
    /// unit vector from the receiver toward where the path arrives from.
    pub fn new(gains: Vec<PathGain>, rx: &RadioEndpoint, wavelength: f64) -> Self {
        let rot = rx.rotation();
        let offsets: Vec<Vector3<f64>> = rx
            .array
            .offsets(wavelength)
            .into_iter()
            .map(|o| rot * o)
            .collect();
        let paths = gains
            .into_iter()
            .map(|gain| {
                let w = -gain.arrival;
                let antenna_phases = offsets
                    .iter()
                    .map(|o| 2.0 * PI / wavelength * o.dot(&w))
                    .collect();
                ChannelPath {
                    gain,
                    antenna_phases,
                }
            })
            .collect();
        PathEnsemble {
            paths,
            antenna_count: offsets.len(),
        }
    }

    pub fn empty(antenna_count: usize) -> Self {
        PathEnsemble {
            paths: Vec::new(),
            antenna_count,
        }
    }
}

/// Position of a sensed object relative to the receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub object_id: String,
    /// Distance from the receiver to the object's nearest surface point, m.
    pub range: f64,
    /// `asin` of the unit direction toward that point projected on the
    /// array axis, radians.
    pub azimuth: f64,
    /// Velocity of that point along the line of sight, positive receding, m/s.
    pub radial_speed: f64,
    /// TX to point to RX distance, m.
    pub path_length: f64,
    /// Time derivative of `path_length`, m/s.
    pub path_length_rate: f64,
}

/// Ground truth for the named objects at `frame`. Unknown ids are skipped.
pub fn ground_truth(scene: &Scene, frame: u32, object_ids: &[String]) -> Vec<GroundTruth> {
    let geom = scene.geometry(frame, 0.0);
    let rx = scene.rx.position();
    let tx = scene.tx.position();
    let axis = scene.rx.array_axis();
    object_ids
        .iter()
        .filter_map(|id| {
            let idx = scene.object_index(id)?;
            let p = geom.closest_point_on_object(idx, &rx);
            let range = (p - rx).norm();
            let w = (p - rx) / range;
            let v = scene.velocity_for_tracing(idx, &p, frame);
            let from_tx = (p - tx).try_normalize(0.0).unwrap_or_else(Vector3::zeros);
            Some(GroundTruth {
                object_id: id.clone(),
                range,
                azimuth: w.dot(&axis).clamp(-1.0, 1.0).asin(),
                radial_speed: v.dot(&w),
                path_length: (p - tx).norm() + range,
                path_length_rate: v.dot(&(from_tx + w)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    /// Direct evaluation of the per-subcarrier exponentials.
    Exact,
    /// Windowed-sinc taps on the sample grid, then an FFT.
    #[default]
    BandLimited,
}

/// Complex channel tensor `[antenna][subcarrier][symbol]` for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame {
    pub data: Array3<Complex64>,
    pub radio: RadioConfig,
    pub frame_index: u32,
    pub ground_truth: Vec<GroundTruth>,
    /// Paths dropped for exceeding the unambiguous delay.
    pub dropped_paths: usize,
}

impl ChannelFrame {
    pub fn num_antennas(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    /// Copy with new data of the same shape.
    pub fn with_data(&self, data: Array3<Complex64>) -> ChannelFrame {
        ChannelFrame {
            data,
            radio: self.radio.clone(),
            frame_index: self.frame_index,
            ground_truth: self.ground_truth.clone(),
            dropped_paths: self.dropped_paths,
        }
    }
}

/// Tap vector of a band-limited impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLimited {
    pub taps: Vec<Complex64>,
    /// Inputs at or beyond `N_sub / bandwidth`.
    pub dropped: usize,
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn hann(u: f64) -> f64 {
    if u.abs() >= KERNEL_HALF as f64 {
        0.0
    } else {
        0.5 * (1.0 + (PI * u / KERNEL_HALF as f64).cos())
    }
}

/// Add one path at fractional sample delay `x` to a circular tap buffer.
fn place_taps(taps: &mut [Complex64], x: f64, gain: Complex64) {
    let n = taps.len();
    let base = x.floor();
    let frac = x - base;
    let base = base as i64;
    if frac == 0.0 {
        taps[base.rem_euclid(n as i64) as usize] += gain;
        return;
    }
    // matches the spectrum exp(-j 2 pi k x / N) for k = 0..N-1
    let modulation = -SUBCARRIER_PHASE_SIGN * PI * (n as f64 - 1.0) / n as f64;
    for j in (1 - KERNEL_HALF)..=KERNEL_HALF {
        let t = base + j;
        let u = t as f64 - x;
        let w = hann(u) * sinc(u);
        taps[t.rem_euclid(n as i64) as usize] += gain * Complex64::from_polar(w, modulation * u);
    }
}

/// Sinc-interpolated impulse response on `N_sub` taps at the sampling
/// interval `1 / bandwidth`.
pub fn band_limit(delays_and_gains: &[(f64, Complex64)], radio: &RadioConfig) -> BandLimited {
    let n = radio.num_subcarriers;
    let mut taps = vec![Complex64::new(0.0, 0.0); n];
    let mut dropped = 0;
    for &(tau, g) in delays_and_gains {
        let x = tau * radio.bandwidth;
        if !(x >= 0.0 && x < n as f64) {
            dropped += 1;
            continue;
        }
        place_taps(&mut taps, x, g);
    }
    BandLimited { taps, dropped }
}

/// Seed for the noise stream of one (frame, antenna) pair.
fn stream_seed(seed: u64, frame: u32, antenna: usize) -> u64 {
    let mut z = seed
        ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (antenna as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Circular complex Gaussian samples with `E|n|^2 = stddev^2`, in
/// subcarrier-major order.
pub fn noise_block(
    stddev: f64,
    rows: usize,
    cols: usize,
    seed: u64,
    frame: u32,
    antenna: usize,
) -> Array2<Complex64> {
    if stddev == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, frame, antenna));
    let normal = Normal::new(0.0, stddev / 2f64.sqrt()).expect("finite stddev");
    Array2::from_shape_simple_fn((rows, cols), || {
        Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng))
    })
}

/// Spectrum of one path over the subcarriers, without Doppler.
fn path_spectrum(
    tau: f64,
    gain: Complex64,
    radio: &RadioConfig,
    mode: SynthesisMode,
    fft: &dyn rustfft::Fft<f64>,
) -> Option<Vec<Complex64>> {
    let n = radio.num_subcarriers;
    match mode {
        SynthesisMode::Exact => {
            let df = radio.subcarrier_spacing();
            Some(
                (0..n)
                    .map(|k| {
                        gain * Complex64::cis(
                            SUBCARRIER_PHASE_SIGN * 2.0 * PI * k as f64 * df * tau,
                        )
                    })
                    .collect(),
            )
        }
        SynthesisMode::BandLimited => {
            let x = tau * radio.bandwidth;
            if !(x >= 0.0 && x < n as f64) {
                return None;
            }
            let mut taps = vec![Complex64::new(0.0, 0.0); n];
            place_taps(&mut taps, x, gain);
            fft.process(&mut taps);
            Some(taps)
        }
    }
}

/// Channel tensor for one frame. Noise uses the stream of `(seed, frame, m)`
/// for antenna `m`, so the result does not depend on thread scheduling.
pub fn synthesize_frame(
    ensemble: &PathEnsemble,
    radio: &RadioConfig,
    frame: u32,
    seed: u64,
    mode: SynthesisMode,
) -> Result<ChannelFrame, ChannelError> {
    for (i, p) in ensemble.paths.iter().enumerate() {
        if p.antenna_phases.len() != ensemble.antenna_count {
            return Err(ChannelError::DimensionMismatch(format!(
                "path {i} has {} antenna phases, ensemble has {} antennas",
                p.antenna_phases.len(),
                ensemble.antenna_count
            )));
        }
    }
    let n_sub = radio.num_subcarriers;
    let n_sym = radio.num_symbols;
    let fft = FftPlanner::new().plan_fft_forward(n_sub);

    let dropped = match mode {
        SynthesisMode::Exact => 0,
        SynthesisMode::BandLimited => ensemble
            .paths
            .iter()
            .filter(|p| {
                let x = p.gain.delay * radio.bandwidth;
                !(x >= 0.0 && x < n_sub as f64)
            })
            .count(),
    };

    let per_antenna: Vec<Array2<Complex64>> = (0..ensemble.antenna_count)
        .into_par_iter()
        .map(|m| {
            let mut stat = vec![Complex64::new(0.0, 0.0); n_sub];
            let mut block = Array2::<Complex64>::zeros((n_sub, n_sym));
            for p in &ensemble.paths {
                let g = &p.gain;
                let c = Complex64::from_polar(g.amplitude, g.phase + p.antenna_phases[m]);
                let Some(spec) = path_spectrum(g.delay, c, radio, mode, fft.as_ref()) else {
                    continue;
                };
                if g.doppler_phase_per_symbol == 0.0 {
                    for (s, v) in stat.iter_mut().zip(&spec) {
                        *s += v;
                    }
                } else {
                    let rot: Vec<Complex64> = (0..n_sym)
                        .map(|n| Complex64::cis(n as f64 * g.doppler_phase_per_symbol))
                        .collect();
                    for (k, v) in spec.iter().enumerate() {
                        for (n, r) in rot.iter().enumerate() {
                            block[[k, n]] += v * r;
                        }
                    }
                }
            }
            for (k, s) in stat.iter().enumerate() {
                block.row_mut(k).mapv_inplace(|v| v + s);
            }
            block + noise_block(radio.noise_stddev, n_sub, n_sym, seed, frame, m)
        })
        .collect();

    let mut data = Array3::<Complex64>::zeros((ensemble.antenna_count, n_sub, n_sym));
    for (m, block) in per_antenna.into_iter().enumerate() {
        data.index_axis_mut(Axis(0), m).assign(&block);
    }
    Ok(ChannelFrame {
        data,
        radio: radio.clone(),
        frame_index: frame,
        ground_truth: Vec::new(),
        dropped_paths: dropped,
    })
}

/// Single-tap equalizer `Y / X`.
pub fn estimate_channel(
    tx_grid: &Array2<Complex64>,
    rx_grid: &Array2<Complex64>,
) -> Result<Array2<Complex64>, ChannelError> {
    if tx_grid.dim() != rx_grid.dim() {
        return Err(ChannelError::DimensionMismatch(format!(
            "pilot grid {:?} vs received grid {:?}",
            tx_grid.dim(),
            rx_grid.dim()
        )));
    }
    if let Some(((k, n), _)) = tx_grid.indexed_iter().find(|(_, x)| x.norm_sqr() == 0.0) {
        return Err(ChannelError::ZeroPilot {
            subcarrier: k,
            symbol: n,
        });
    }
    Ok(rx_grid / tx_grid)
}
