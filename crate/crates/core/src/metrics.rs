//! Peak detection and detection-quality scores on radar images.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensing::RadarImage;

/// Detection threshold relative to the image mean.
pub const PEAK_THRESHOLD: f64 = 1.1;

const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no iterations")]
    EmptyInput,
    #[error("truth ({range}, {second}) lies outside the image")]
    TruthOutOfBounds { range: f64, second: f64 },
    #[error("cell ({0}, {1}) is not a local maximum")]
    PeakNotMaximum(usize, usize),
    #[error("target peak is not in the list")]
    TargetNotInList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub row: usize,
    pub col: usize,
    /// Meters.
    pub range: f64,
    /// Second-axis value: radians for azimuth images, Hz for Doppler images.
    pub azimuth: f64,
    pub power: f64,
    /// `P_signal / P_c`.
    pub prominence: f64,
    /// `1 - P_c / P_signal`.
    pub normalized_prominence: f64,
    pub is_target: bool,
}

fn neighbours(
    rows: usize,
    cols: usize,
    i: usize,
    j: usize,
) -> impl Iterator<Item = (usize, usize)> {
    NEIGHBOURS.iter().filter_map(move |&(di, dj)| {
        let (ni, nj) = (i as isize + di, j as isize + dj);
        (ni >= 0 && nj >= 0 && (ni as usize) < rows && (nj as usize) < cols)
            .then_some((ni as usize, nj as usize))
    })
}

fn is_local_max(image: &RadarImage, i: usize, j: usize) -> bool {
    let (rows, cols) = image.shape();
    let v = image.values[[i, j]];
    neighbours(rows, cols, i, j).all(|(a, b)| image.values[[a, b]] <= v)
}

/// Cells not below any 8-neighbour with power at least `1.1 x` the image
/// mean, strongest first.
pub fn detect_peaks(image: &RadarImage) -> Vec<Peak> {
    let threshold = PEAK_THRESHOLD * image.mean();
    let (rows, cols) = image.shape();
    let second = image.second_axis.values();
    let mut peaks = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let v = image.values[[i, j]];
            if v > 0.0 && v >= threshold && is_local_max(image, i, j) {
                let prom = radial_prominence(image, i, j);
                peaks.push(Peak {
                    row: i,
                    col: j,
                    range: image.range_axis[i],
                    azimuth: second[j],
                    power: v,
                    prominence: prom.ratio,
                    normalized_prominence: prom.normalized,
                    is_target: false,
                });
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.power
            .total_cmp(&a.power)
            .then((a.row, a.col).cmp(&(b.row, b.col)))
    });
    peaks
}

/// Fraction of detected iterations, percent.
pub fn probability_of_detection(detected: &[bool]) -> Result<f64, MetricError> {
    if detected.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(100.0 * detected.iter().filter(|&&d| d).count() as f64 / detected.len() as f64)
}

fn cartesian(range: f64, second: f64, image: &RadarImage) -> (f64, f64) {
    match image.second_axis {
        crate::sensing::SecondAxis::Azimuth(_) => (range * second.cos(), range * second.sin()),
        crate::sensing::SecondAxis::Doppler(_) => (range, second),
    }
}

/// Power at the cell nearest the truth over the summed power of all cells
/// farther than `gate` meters from it; `+inf` when that sum is zero.
pub fn sinr_metric(image: &RadarImage, truth: (f64, f64), gate: f64) -> Result<f64, MetricError> {
    let (ti, tj) = image
        .cell_of(truth.0, truth.1)
        .ok_or(MetricError::TruthOutOfBounds {
            range: truth.0,
            second: truth.1,
        })?;
    let signal = image.values[[ti, tj]];
    let (tx, ty) = cartesian(truth.0, truth.1, image);
    let mut outside = 0.0;
    for ((i, j), &v) in image.values.indexed_iter() {
        let (x, y) = image.cartesian(i, j);
        if ((x - tx).powi(2) + (y - ty).powi(2)).sqrt() > gate {
            outside += v;
        }
    }
    Ok(if outside > 0.0 {
        signal / outside
    } else {
        f64::INFINITY
    })
}

/// Peak-to-col ratio and its normalized form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prominence {
    pub ratio: f64,
    pub normalized: f64,
    /// Power of the highest valley floor found.
    pub col: f64,
}

/// Walk away from the peak in the 8 compass directions while the power does
/// not rise; the col is the highest of the valley floors. Directions that
/// leave the image on the first step carry no floor.
fn radial_prominence(image: &RadarImage, i: usize, j: usize) -> Prominence {
    let (rows, cols) = image.shape();
    let peak = image.values[[i, j]];
    let mut col = 0.0f64;
    for (di, dj) in NEIGHBOURS {
        let (mut ci, mut cj) = (i as isize, j as isize);
        let (fi, fj) = (ci + di, cj + dj);
        if fi < 0 || fj < 0 || fi as usize >= rows || fj as usize >= cols {
            continue;
        }
        let mut floor = peak;
        loop {
            let (ni, nj) = (ci + di, cj + dj);
            if ni < 0 || nj < 0 || ni as usize >= rows || nj as usize >= cols {
                break;
            }
            let v = image.values[[ni as usize, nj as usize]];
            if v > floor {
                break;
            }
            floor = v;
            ci = ni;
            cj = nj;
        }
        col = col.max(floor);
    }
    let ratio = if col > 0.0 { peak / col } else { f64::INFINITY };
    let normalized = if peak > 0.0 { 1.0 - col / peak } else { 0.0 };
    Prominence {
        ratio,
        normalized,
        col,
    }
}

pub fn prominence_metric(image: &RadarImage, peak: &Peak) -> Result<Prominence, MetricError> {
    let (rows, cols) = image.shape();
    if peak.row >= rows || peak.col >= cols || !is_local_max(image, peak.row, peak.col) {
        return Err(MetricError::PeakNotMaximum(peak.row, peak.col));
    }
    Ok(radial_prominence(image, peak.row, peak.col))
}

/// Squared Cartesian distance to the nearest other peak; `+inf` when the
/// target is alone.
pub fn isolation_metric(
    peaks: &[Peak],
    target: &Peak,
    image: &RadarImage,
) -> Result<f64, MetricError> {
    if !peaks
        .iter()
        .any(|p| p.row == target.row && p.col == target.col)
    {
        return Err(MetricError::TargetNotInList);
    }
    let (tx, ty) = image.cartesian(target.row, target.col);
    Ok(peaks
        .iter()
        .filter(|p| !(p.row == target.row && p.col == target.col))
        .map(|p| {
            let (x, y) = image.cartesian(p.row, p.col);
            (x - tx).powi(2) + (y - ty).powi(2)
        })
        .fold(f64::INFINITY, f64::min))
}

/// Acceptance window around the truth for counting a detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionGate {
    /// Meters.
    pub range: f64,
    /// Second-axis units (radians for azimuth images).
    pub second: f64,
}

impl DetectionGate {
    /// `max(lambda, one range cell)` in range and two cells in azimuth.
    pub fn for_image(image: &RadarImage, wavelength: f64) -> Self {
        DetectionGate {
            range: wavelength.max(image.range_step()),
            second: 2.0 * image.second_step(),
        }
    }

    pub fn contains(&self, peak: &Peak, truth: (f64, f64)) -> bool {
        (peak.range - truth.0).abs() <= self.range + 1e-12
            && (peak.azimuth - truth.1).abs() <= self.second + 1e-12
    }
}

/// Scores of one image against one ground-truth position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub detected: bool,
    /// 100 when detected, 0 otherwise; aggregate with [`probability_of_detection`].
    pub p_detection: f64,
    pub sinr: f64,
    pub sinr_db: f64,
    /// Ratio of the target peak, 1 when no target peak was found.
    pub prominence: f64,
    /// Normalized prominence of the target peak, 0 when none was found.
    pub normalized_prominence: f64,
    /// Squared meters; 0 when no target peak was found.
    pub isolation: f64,
    pub ground_truth_used: (f64, f64),
    pub gate_radius: f64,
    pub num_peaks: usize,
}

/// Detect peaks, mark the strongest peak inside the gate as the target and
/// score the image.
pub fn evaluate(
    image: &RadarImage,
    truth: (f64, f64),
    gate: DetectionGate,
) -> Result<(MetricReport, Vec<Peak>), MetricError> {
    let mut peaks = detect_peaks(image);
    let target = peaks.iter().position(|p| gate.contains(p, truth));
    if let Some(t) = target {
        peaks[t].is_target = true;
    }
    let sinr = sinr_metric(image, truth, gate.range)?;
    let (prominence, normalized, isolation) = match target {
        Some(t) => (
            peaks[t].prominence,
            peaks[t].normalized_prominence,
            isolation_metric(&peaks, &peaks[t], image)?,
        ),
        None => (1.0, 0.0, 0.0),
    };
    let report = MetricReport {
        detected: target.is_some(),
        p_detection: if target.is_some() { 100.0 } else { 0.0 },
        sinr,
        sinr_db: 10.0 * sinr.log10(),
        prominence,
        normalized_prominence: normalized,
        isolation,
        ground_truth_used: truth,
        gate_radius: gate.range,
        num_peaks: peaks.len(),
    };
    Ok((report, peaks))
}
