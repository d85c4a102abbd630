//! Radar processing of channel frames: range-Doppler periodogram and 2D
//! range-azimuth MUSIC.
//!
//! Subcarrier transforms follow [`SUBCARRIER_PHASE_SIGN`]: a path delayed by
//! `s` samples shows up at delay tap `s` and range bin `s`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consts::{SPEED_OF_LIGHT, SUBCARRIER_PHASE_SIGN};
use crate::propagation::RadioConfig;

#[derive(Debug, Error, PartialEq)]
pub enum SensingError {
    #[error("tensor too small: {0}")]
    DimensionTooSmall(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eigendecomposition did not converge")]
    EigendecompositionFailure,
    #[error("signal subspace dimension {q} outside [1, {dim})")]
    QOutOfRange { q: usize, dim: usize },
    #[error("empty grid: {0}")]
    EmptyGrid(&'static str),
    #[error("malformed image blob: {0}")]
    Decode(String),
}

/// How a delay maps to an image range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMapping {
    /// Range equals the total path length.
    #[default]
    OneWay,
    /// Range equals half the path length (co-located TX and RX).
    RoundTrip,
}

impl RangeMapping {
    /// Path length per unit of image range.
    pub fn factor(self) -> f64 {
        match self {
            RangeMapping::OneWay => 1.0,
            RangeMapping::RoundTrip => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondAxis {
    /// Bin centres in radians.
    Azimuth(Vec<f64>),
    /// Bin centres in Hz.
    Doppler(Vec<f64>),
}

impl SecondAxis {
    pub fn values(&self) -> &[f64] {
        match self {
            SecondAxis::Azimuth(v) | SecondAxis::Doppler(v) => v,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SecondAxis::Azimuth(_) => "azimuth_rad",
            SecondAxis::Doppler(_) => "doppler_hz",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Periodogram,
    Music,
}

/// Non-negative spectrum over `[range bin][second-axis bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarImage {
    pub values: Array2<f64>,
    /// Range of each row, meters.
    pub range_axis: Vec<f64>,
    pub second_axis: SecondAxis,
    pub source: ImageSource,
}

fn nearest_index(axis: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, v) in axis.iter().enumerate() {
        if (v - x).abs() < (axis[best] - x).abs() {
            best = i;
        }
    }
    best
}

fn axis_contains(axis: &[f64], x: f64) -> bool {
    let (lo, hi) = (
        axis[0].min(axis[axis.len() - 1]),
        axis[0].max(axis[axis.len() - 1]),
    );
    let pad = if axis.len() > 1 {
        (axis[1] - axis[0]).abs() / 2.0
    } else {
        0.0
    };
    x >= lo - pad && x <= hi + pad
}

const IMAGE_MAGIC: &[u8; 4] = b"RIMG";

impl RadarImage {
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Spacing of the range axis, meters.
    pub fn range_step(&self) -> f64 {
        if self.range_axis.len() > 1 {
            (self.range_axis[1] - self.range_axis[0]).abs()
        } else {
            0.0
        }
    }

    pub fn second_step(&self) -> f64 {
        let v = self.second_axis.values();
        if v.len() > 1 {
            (v[1] - v[0]).abs()
        } else {
            0.0
        }
    }

    /// Cell nearest to `(range, second)`, `None` outside the image.
    pub fn cell_of(&self, range: f64, second: f64) -> Option<(usize, usize)> {
        let sa = self.second_axis.values();
        if !axis_contains(&self.range_axis, range) || !axis_contains(sa, second) {
            return None;
        }
        Some((
            nearest_index(&self.range_axis, range),
            nearest_index(sa, second),
        ))
    }

    /// Cartesian position of a cell for azimuth images: `(range cos az, range sin az)`;
    /// `(range, second)` for Doppler images.
    pub fn cartesian(&self, row: usize, col: usize) -> (f64, f64) {
        let r = self.range_axis[row];
        match &self.second_axis {
            SecondAxis::Azimuth(az) => (r * az[col].cos(), r * az[col].sin()),
            SecondAxis::Doppler(d) => (r, d[col]),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.mean().unwrap_or(0.0)
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = ((0, 0), f64::NEG_INFINITY);
        for (idx, &v) in self.values.indexed_iter() {
            if v > best.1 {
                best = (idx, v);
            }
        }
        best.0
    }

    /// Little-endian blob: magic, source, axis kind, rows, cols, range
    /// axis, second axis, values row-major; all floats `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (rows, cols) = self.shape();
        let mut out = Vec::with_capacity(24 + 8 * (rows + cols + rows * cols));
        out.extend_from_slice(IMAGE_MAGIC);
        out.push(match self.source {
            ImageSource::Periodogram => 0,
            ImageSource::Music => 1,
        });
        out.push(match self.second_axis {
            SecondAxis::Azimuth(_) => 0,
            SecondAxis::Doppler(_) => 1,
        });
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(rows as u64).to_le_bytes());
        out.extend_from_slice(&(cols as u64).to_le_bytes());
        for v in self
            .range_axis
            .iter()
            .chain(self.second_axis.values())
            .chain(self.values.iter())
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<RadarImage, SensingError> {
        let bad = |m: &str| SensingError::Decode(m.to_string());
        if bytes.len() < 24 || &bytes[..4] != IMAGE_MAGIC {
            return Err(bad("missing header"));
        }
        let source = match bytes[4] {
            0 => ImageSource::Periodogram,
            1 => ImageSource::Music,
            _ => return Err(bad("unknown source")),
        };
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let count = rows
            .checked_mul(cols)
            .and_then(|rc| rc.checked_add(rows + cols))
            .ok_or_else(|| bad("size overflow"))?;
        if bytes.len() != 24 + 8 * count {
            return Err(bad("length does not match header"));
        }
        let floats: Vec<f64> = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let range_axis = floats[..rows].to_vec();
        let second = floats[rows..rows + cols].to_vec();
        let second_axis = match bytes[5] {
            0 => SecondAxis::Azimuth(second),
            1 => SecondAxis::Doppler(second),
            _ => return Err(bad("unknown axis kind")),
        };
        let values = Array2::from_shape_vec((rows, cols), floats[rows + cols..].to_vec())
            .map_err(|e| bad(&e.to_string()))?;
        Ok(RadarImage {
            values,
            range_axis,
            second_axis,
            source,
        })
    }

    /// ASCII PGM, one row per range bin, gray level `255 * (1 + dB / floor_db)`
    /// relative to the image maximum, clipped at `-floor_db`.
    pub fn write_pgm(&self, mut w: impl Write, floor_db: f64) -> std::io::Result<()> {
        let (rows, cols) = self.shape();
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        writeln!(w, "P2")?;
        writeln!(w, "{cols} {rows}")?;
        writeln!(w, "255")?;
        for row in self.values.rows() {
            let line: Vec<String> = row
                .iter()
                .map(|&v| {
                    let level = if max > 0.0 && v > 0.0 {
                        let db = 10.0 * (v / max).log10();
                        (255.0 * (1.0 + db / floor_db)).clamp(0.0, 255.0).round() as u8
                    } else {
                        0
                    };
                    level.to_string()
                })
                .collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Long-format CSV: `range_m,<second axis>,power`.
    pub fn write_csv(&self, w: impl Write) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["range_m", self.second_axis.label(), "power"])?;
        let second = self.second_axis.values();
        for ((i, j), v) in self.values.indexed_iter() {
            wr.write_record([
                self.range_axis[i].to_string(),
                second[j].to_string(),
                v.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Unnormalized inverse DFT over subcarriers: tap `t` holds
/// `sum_p H[p] exp(j 2 pi p t / N)`.
pub fn delay_profile(h: &[Complex64]) -> Result<Vec<Complex64>, SensingError> {
    if h.len() < 2 {
        return Err(SensingError::DimensionTooSmall(format!(
            "{} subcarriers",
            h.len()
        )));
    }
    let mut buf = h.to_vec();
    let mut planner = FftPlanner::new();
    let fft = if SUBCARRIER_PHASE_SIGN < 0.0 {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    fft.process(&mut buf);
    Ok(buf)
}

/// Range-Doppler periodogram of a `[subcarrier][symbol]` grid: DFT over
/// symbols, inverse DFT over subcarriers, magnitude squared.
pub fn periodogram(
    h: ArrayView2<Complex64>,
    radio: &RadioConfig,
    mapping: RangeMapping,
) -> Result<RadarImage, SensingError> {
    let (n_sub, n_sym) = h.dim();
    if n_sub < 2 || n_sym < 2 {
        return Err(SensingError::DimensionTooSmall(format!("{n_sub}x{n_sym}")));
    }
    let mut planner = FftPlanner::new();
    let over_symbols = planner.plan_fft_forward(n_sym);
    let over_subcarriers = if SUBCARRIER_PHASE_SIGN < 0.0 {
        planner.plan_fft_inverse(n_sub)
    } else {
        planner.plan_fft_forward(n_sub)
    };
    let mut grid = h.to_owned();
    for mut row in grid.rows_mut() {
        let mut buf = row.to_vec();
        over_symbols.process(&mut buf);
        row.assign(&ndarray::ArrayView1::from(&buf));
    }
    for mut col in grid.columns_mut() {
        let mut buf = col.to_vec();
        over_subcarriers.process(&mut buf);
        col.assign(&ndarray::ArrayView1::from(&buf));
    }
    let values = grid.mapv(|v| v.norm_sqr());
    let range_step = SPEED_OF_LIGHT / (radio.bandwidth * mapping.factor());
    let doppler_step = 1.0 / (n_sym as f64 * radio.symbol_duration());
    Ok(RadarImage {
        values,
        range_axis: (0..n_sub).map(|k| k as f64 * range_step).collect(),
        second_axis: SecondAxis::Doppler((0..n_sym).map(|n| n as f64 * doppler_step).collect()),
        source: ImageSource::Periodogram,
    })
}

/// Sample covariance of stacked `antenna (x) subcarrier` snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub matrix: DMatrix<Complex64>,
    pub num_antennas: usize,
    /// Subcarriers per snapshot after decimation and smoothing.
    pub subcarriers: usize,
    /// Subcarrier index step between adjacent snapshot entries.
    pub stride: usize,
    pub snapshots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceOptions {
    /// Keep every `decimation`-th subcarrier.
    pub decimation: usize,
    /// Forward smoothing subarray length over the kept subcarriers.
    pub smoothing: Option<usize>,
}

impl Default for CovarianceOptions {
    fn default() -> Self {
        CovarianceOptions {
            decimation: 16,
            smoothing: Some(32),
        }
    }
}

/// Covariance of a `[antenna][subcarrier][symbol]` tensor averaged over
/// symbols and, when smoothing, over shifted subcarrier subarrays. Entry
/// order is antenna-major, matching `a(phi) (x) b(d)`.
pub fn covariance(
    h: ArrayView3<Complex64>,
    options: &CovarianceOptions,
) -> Result<Covariance, SensingError> {
    let (n_ant, n_sub, n_sym) = h.dim();
    if options.decimation == 0 {
        return Err(SensingError::DimensionMismatch(
            "decimation must be >= 1".into(),
        ));
    }
    let kept: Vec<usize> = (0..n_sub).step_by(options.decimation).collect();
    let len = options.smoothing.unwrap_or(kept.len());
    if n_ant == 0 || n_sym == 0 || len == 0 || len > kept.len() {
        return Err(SensingError::DimensionMismatch(format!(
            "{n_ant} antennas, {} kept subcarriers, subarray {len}, {n_sym} symbols",
            kept.len()
        )));
    }
    let shifts = kept.len() - len + 1;
    let dim = n_ant * len;
    let snapshots = shifts * n_sym;
    let mut x = DMatrix::<Complex64>::zeros(dim, snapshots);
    for n in 0..n_sym {
        for s in 0..shifts {
            let col = n * shifts + s;
            for m in 0..n_ant {
                for k in 0..len {
                    x[(m * len + k, col)] = h[[m, kept[s + k], n]];
                }
            }
        }
    }
    let mut r = &x * x.adjoint();
    r /= Complex64::new(snapshots as f64, 0.0);
    for i in 0..dim {
        r[(i, i)] = Complex64::new(r[(i, i)].re, 0.0);
        for j in i + 1..dim {
            r[(j, i)] = r[(i, j)].conj();
        }
    }
    Ok(Covariance {
        matrix: r,
        num_antennas: n_ant,
        subcarriers: len,
        stride: options.decimation,
        snapshots,
    })
}

/// Receive array as seen by the steering vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlaDescriptor {
    pub count: usize,
    /// Element spacing in wavelengths.
    pub spacing_wavelengths: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MusicConfig {
    /// `None` selects the eigenvalues above ten times the median.
    pub signal_subspace_dim: Option<usize>,
    /// Meters.
    pub range_grid: Vec<f64>,
    /// Radians.
    pub azimuth_grid: Vec<f64>,
    pub covariance: CovarianceOptions,
    pub range_mapping: RangeMapping,
}

/// `start, start + step, ...` up to and including `end`.
pub fn linear_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

impl Default for MusicConfig {
    fn default() -> Self {
        MusicConfig {
            signal_subspace_dim: None,
            range_grid: linear_grid(0.0, 50.0, 0.25),
            azimuth_grid: linear_grid(-90.0, 90.0, 1.0)
                .into_iter()
                .map(f64::to_radians)
                .collect(),
            covariance: CovarianceOptions::default(),
            range_mapping: RangeMapping::OneWay,
        }
    }
}

/// Eigenpairs of a Hermitian matrix, eigenvalues descending.
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

pub fn hermitian_eigen(r: &DMatrix<Complex64>) -> Result<Eigen, SensingError> {
    let eig = r
        .clone()
        .try_symmetric_eigen(1e-14, 10_000)
        .ok_or(SensingError::EigendecompositionFailure)?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i))
            .collect::<Vec<_>>(),
    );
    Ok(Eigen { values, vectors })
}

/// Number of eigenvalues above ten times the median.
pub fn auto_subspace_dim(values: &[f64]) -> usize {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    values.iter().filter(|&&v| v > 10.0 * median).count()
}

/// Angular steering vector `exp(j 2 pi m (d / lambda) sin phi)`.
pub fn angular_steering(array: &UlaDescriptor, azimuth: f64) -> Vec<Complex64> {
    (0..array.count)
        .map(|m| Complex64::cis(2.0 * PI * m as f64 * array.spacing_wavelengths * azimuth.sin()))
        .collect()
}

/// Range steering vector over the snapshot subcarriers for a path length `d`.
pub fn range_steering(
    path_length: f64,
    subcarriers: usize,
    stride: usize,
    radio: &RadioConfig,
) -> Vec<Complex64> {
    let df = radio.subcarrier_spacing();
    (0..subcarriers)
        .map(|k| {
            Complex64::cis(
                SUBCARRIER_PHASE_SIGN * 2.0 * PI * (k * stride) as f64 * df * path_length
                    / SPEED_OF_LIGHT,
            )
        })
        .collect()
}

/// `1 / (v^H U_N U_N^H v)` with `v = a(phi) (x) b(d)` over the configured grid.
pub fn music_spectrum(
    r: &Covariance,
    config: &MusicConfig,
    radio: &RadioConfig,
    array: &UlaDescriptor,
) -> Result<RadarImage, SensingError> {
    if config.range_grid.is_empty() {
        return Err(SensingError::EmptyGrid("range"));
    }
    if config.azimuth_grid.is_empty() {
        return Err(SensingError::EmptyGrid("azimuth"));
    }
    let dim = r.matrix.nrows();
    if array.count != r.num_antennas || dim != r.num_antennas * r.subcarriers {
        return Err(SensingError::DimensionMismatch(format!(
            "covariance of dimension {dim} for {} antennas",
            array.count
        )));
    }
    let eig = hermitian_eigen(&r.matrix)?;
    let q = config
        .signal_subspace_dim
        .unwrap_or_else(|| auto_subspace_dim(&eig.values));
    if q == 0 || q >= dim {
        return Err(SensingError::QOutOfRange { q, dim });
    }
    let n_ant = r.num_antennas;
    let len = r.subcarriers;
    let norm = (n_ant * len) as f64;
    let floor = norm * 1e-12;
    let angular: Vec<Vec<Complex64>> = config
        .azimuth_grid
        .iter()
        .map(|&az| angular_steering(array, az))
        .collect();

    let rows: Vec<Vec<f64>> = config
        .range_grid
        .par_iter()
        .map(|&d| {
            let b = range_steering(d * config.range_mapping.factor(), len, r.stride, radio);
            // c[q][m] = sum_k conj(u_q[m len + k]) b_k
            let c: Vec<Vec<Complex64>> = (0..q)
                .map(|qi| {
                    let u = eig.vectors.column(qi);
                    (0..n_ant)
                        .map(|m| (0..len).map(|k| u[m * len + k].conj() * b[k]).sum())
                        .collect()
                })
                .collect();
            angular
                .iter()
                .map(|a| {
                    let captured: f64 = c
                        .iter()
                        .map(|cq| {
                            cq.iter()
                                .zip(a)
                                .map(|(x, y)| x * y)
                                .sum::<Complex64>()
                                .norm_sqr()
                        })
                        .sum();
                    1.0 / (norm - captured).max(floor)
                })
                .collect()
        })
        .collect();

    let values = Array2::from_shape_fn(
        (config.range_grid.len(), config.azimuth_grid.len()),
        |(i, j)| rows[i][j],
    );
    Ok(RadarImage {
        values,
        range_axis: config.range_grid.clone(),
        second_axis: SecondAxis::Azimuth(config.azimuth_grid.clone()),
        source: ImageSource::Music,
    })
}

/// Covariance and MUSIC spectrum of a `[antenna][subcarrier][symbol]` tensor.
pub fn music_image(
    h: ArrayView3<Complex64>,
    config: &MusicConfig,
    radio: &RadioConfig,
    array: &UlaDescriptor,
) -> Result<RadarImage, SensingError> {
    let r = covariance(h, &config.covariance)?;
    music_spectrum(&r, config, radio, array)
}

/// Periodogram of one antenna of a `[antenna][subcarrier][symbol]` tensor.
pub fn antenna_periodogram(
    h: ArrayView3<Complex64>,
    antenna: usize,
    radio: &RadioConfig,
    mapping: RangeMapping,
) -> Result<RadarImage, SensingError> {
    if antenna >= h.len_of(Axis(0)) {
        return Err(SensingError::DimensionMismatch(format!(
            "antenna {antenna}"
        )));
    }
    periodogram(h.index_axis(Axis(0), antenna), radio, mapping)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn radio(n_sub: usize, n_sym: usize) -> RadioConfig {
        RadioConfig {
            num_subcarriers: n_sub,
            num_symbols: n_sym,
            ..RadioConfig::default()
        }
    }

    #[test]
    fn delay_profile_pairs() {
        let flat = vec![Complex64::new(1.0, 0.0); 16];
        let p = delay_profile(&flat).unwrap();
        assert!((p[0].re - 16.0).abs() < 1e-12);
        assert!(p[1..].iter().all(|v| v.norm() < 1e-12));
        let slope: Vec<Complex64> = (0..16)
            .map(|k| Complex64::cis(-2.0 * PI * k as f64 * 5.0 / 16.0))
            .collect();
        let p = delay_profile(&slope).unwrap();
        let peak = (0..16)
            .max_by(|&a, &b| p[a].norm().total_cmp(&p[b].norm()))
            .unwrap();
        assert_eq!(peak, 5);
        assert!(delay_profile(&flat[..1]).is_err());
    }

    #[test]
    fn periodogram_peak_location() {
        let r = radio(64, 16);
        let (s, q) = (9usize, 3usize);
        let h = Array2::from_shape_fn((64, 16), |(k, n)| {
            Complex64::cis(-2.0 * PI * (k * s) as f64 / 64.0 + 2.0 * PI * (n * q) as f64 / 16.0)
        });
        let img = periodogram(h.view(), &r, RangeMapping::OneWay).unwrap();
        assert_eq!(img.argmax(), (s, q));
        let zero = Array2::<Complex64>::zeros((64, 16));
        assert!(periodogram(zero.view(), &r, RangeMapping::OneWay)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
        assert!(periodogram(Array2::zeros((1, 4)).view(), &r, RangeMapping::OneWay).is_err());
        assert!((img.range_axis[1] - SPEED_OF_LIGHT / r.bandwidth).abs() < 1e-9);
        let rt = periodogram(h.view(), &r, RangeMapping::RoundTrip).unwrap();
        assert!((rt.range_axis[1] * 2.0 - img.range_axis[1]).abs() < 1e-9);
    }

    #[test]
    fn covariance_small_cases() {
        let v = Array3::from_shape_fn((2, 3, 1), |(m, k, _)| {
            Complex64::new(m as f64 + 1.0, k as f64)
        });
        let opts = CovarianceOptions {
            decimation: 1,
            smoothing: None,
        };
        let c = covariance(v.view(), &opts).unwrap();
        let flat: Vec<Complex64> = v.iter().cloned().collect();
        for i in 0..6 {
            for j in 0..6 {
                assert!((c.matrix[(i, j)] - flat[i] * flat[j].conj()).norm() < 1e-12);
            }
        }
        assert_eq!(c.matrix, c.matrix.adjoint());
        let eig = hermitian_eigen(&c.matrix).unwrap();
        assert!(eig.values[1].abs() < 1e-9 * eig.values[0]);

        // two orthogonal unit snapshots
        let mut two = Array3::<Complex64>::zeros((1, 4, 2));
        two[[0, 0, 0]] = Complex64::new(1.0, 0.0);
        two[[0, 1, 1]] = Complex64::new(0.0, 1.0);
        let c = covariance(two.view(), &opts).unwrap();
        let eig = hermitian_eigen(&c.matrix).unwrap();
        assert!((eig.values[0] - 0.5).abs() < 1e-12 && (eig.values[1] - 0.5).abs() < 1e-12);
        assert!(eig.values[2].abs() < 1e-12);
    }

    #[test]
    fn smoothing_dimensions() {
        let h = Array3::<Complex64>::zeros((4, 1024, 2));
        let c = covariance(h.view(), &CovarianceOptions::default()).unwrap();
        assert_eq!(c.matrix.nrows(), 128);
        assert_eq!(c.snapshots, 33 * 2);
        let c = covariance(
            h.view(),
            &CovarianceOptions {
                decimation: 16,
                smoothing: None,
            },
        )
        .unwrap();
        assert_eq!(c.matrix.nrows(), 256);
    }

    #[test]
    fn music_single_source_on_grid() {
        let r = radio(1024, 1);
        let ula = UlaDescriptor {
            count: 4,
            spacing_wavelengths: 0.5,
        };
        let config = MusicConfig {
            signal_subspace_dim: Some(1),
            covariance: CovarianceOptions {
                decimation: 16,
                smoothing: None,
            },
            ..MusicConfig::default()
        };
        let (d0, az0) = (21.5, 30f64.to_radians());
        let a = angular_steering(&ula, az0);
        let b = range_steering(d0, 64, 16, &r);
        let v = DMatrix::from_fn(256, 1, |i, _| a[i / 64] * b[i % 64]);
        let cov = Covariance {
            matrix: &v * v.adjoint(),
            num_antennas: 4,
            subcarriers: 64,
            stride: 16,
            snapshots: 1,
        };
        let img = music_spectrum(&cov, &config, &r, &ula).unwrap();
        let (i, j) = img.argmax();
        assert_eq!(img.range_axis[i], 21.5);
        assert!((img.second_axis.values()[j] - az0).abs() < 1e-9);

        // a probe inside the noise subspace scores 1 / |v|^2 = minimum
        let eig = hermitian_eigen(&cov.matrix).unwrap();
        let un = eig.vectors.column(5);
        let captured = (eig.vectors.column(0).adjoint() * un)[(0, 0)].norm_sqr();
        assert!(captured < 1e-20);
    }

    #[test]
    fn q_out_of_range() {
        let r = radio(64, 1);
        let ula = UlaDescriptor {
            count: 1,
            spacing_wavelengths: 0.5,
        };
        let cov = Covariance {
            matrix: DMatrix::identity(4, 4),
            num_antennas: 1,
            subcarriers: 4,
            stride: 1,
            snapshots: 1,
        };
        let mut config = MusicConfig::default();
        config.signal_subspace_dim = Some(4);
        assert_eq!(
            music_spectrum(&cov, &config, &r, &ula),
            Err(SensingError::QOutOfRange { q: 4, dim: 4 })
        );
        // identity has no eigenvalue above 10x the median
        config.signal_subspace_dim = None;
        assert!(matches!(
            music_spectrum(&cov, &config, &r, &ula),
            Err(SensingError::QOutOfRange { q: 0, .. })
        ));
    }

    #[test]
    fn image_blob_round_trip() {
        let img = RadarImage {
            values: Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64),
            range_axis: vec![0.0, 1.0, 2.0],
            second_axis: SecondAxis::Azimuth(vec![-0.1, 0.1]),
            source: ImageSource::Music,
        };
        let back = RadarImage::from_bytes(&img.to_bytes()).unwrap();
        assert_eq!(back, img);
        assert!(RadarImage::from_bytes(&img.to_bytes()[..30]).is_err());
        let mut pgm = Vec::new();
        img.write_pgm(&mut pgm, 40.0).unwrap();
        assert!(String::from_utf8(pgm)
            .unwrap()
            .starts_with("P2\n2 3\n255\n"));
        assert_eq!(img.cell_of(1.1, 0.09), Some((1, 1)));
        assert_eq!(img.cell_of(5.0, 0.0), None);
    }
}
