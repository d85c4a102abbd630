//! Clutter removal on `[antenna][subcarrier][symbol]` tensors.

use ndarray::{Array3, ArrayView3, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consts::SUBCARRIER_PHASE_SIGN;

#[derive(Debug, Error, PartialEq)]
pub enum ClutterError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("need at least two symbols, got {0}")]
    DimensionTooSmall(usize),
    #[error("epsilon fraction must lie in (0, 1], got {0}")]
    InvalidEpsilon(f64),
    #[error("reference method needs a reference tensor")]
    MissingReference,
}

fn default_epsilon() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClutterMethod {
    None,
    /// Subtract a tensor recorded without the target.
    Reference,
    /// Zero delay taps whose first and last symbol differ by at most
    /// `epsilon * max |tap|` of the first symbol.
    Dynamic {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

impl ClutterMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ClutterMethod::None => "none",
            ClutterMethod::Reference => "reference",
            ClutterMethod::Dynamic { .. } => "dynamic",
        }
    }
}

/// `H - H_ref`.
pub fn remove_reference(
    h: ArrayView3<Complex64>,
    h_ref: ArrayView3<Complex64>,
) -> Result<Array3<Complex64>, ClutterError> {
    if h.dim() != h_ref.dim() {
        return Err(ClutterError::DimensionMismatch(h.dim(), h_ref.dim()));
    }
    Ok(&h - &h_ref)
}

/// Keep only the delay taps that change between the first and last symbol.
///
/// Per antenna, the delay profiles of symbol 0 and of the last symbol are
/// compared; taps with `|dh| <= epsilon * max |h0|` are zeroed on every
/// symbol and the result is transformed back to subcarriers. `epsilon = 1`
/// zeroes the whole tensor.
pub fn remove_dynamic(
    h: ArrayView3<Complex64>,
    epsilon: f64,
) -> Result<Array3<Complex64>, ClutterError> {
    let (n_ant, n_sub, n_sym) = h.dim();
    if n_sym < 2 {
        return Err(ClutterError::DimensionTooSmall(n_sym));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(ClutterError::InvalidEpsilon(epsilon));
    }
    let mut out = Array3::<Complex64>::zeros((n_ant, n_sub, n_sym));
    if epsilon == 1.0 || n_sub == 0 {
        return Ok(out);
    }
    let mut planner = FftPlanner::new();
    let (to_delay, to_freq) = if SUBCARRIER_PHASE_SIGN < 0.0 {
        (
            planner.plan_fft_inverse(n_sub),
            planner.plan_fft_forward(n_sub),
        )
    } else {
        (
            planner.plan_fft_forward(n_sub),
            planner.plan_fft_inverse(n_sub),
        )
    };
    let scale = 1.0 / n_sub as f64;
    for m in 0..n_ant {
        let ant = h.index_axis(Axis(0), m);
        let profile = |n: usize| {
            let mut buf = ant.column(n).to_vec();
            to_delay.process(&mut buf);
            buf
        };
        let first = profile(0);
        let last = profile(n_sym - 1);
        let peak = first.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let threshold = epsilon * peak;
        let keep: Vec<bool> = first
            .iter()
            .zip(&last)
            .map(|(a, b)| (a - b).norm() > threshold)
            .collect();
        if !keep.iter().any(|&k| k) {
            continue;
        }
        let mut dst = out.index_axis_mut(Axis(0), m);
        for n in 0..n_sym {
            let mut buf = profile(n);
            for (v, &k) in buf.iter_mut().zip(&keep) {
                if !k {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
            to_freq.process(&mut buf);
            for (k, v) in buf.into_iter().enumerate() {
                dst[[k, n]] = v * scale;
            }
        }
    }
    Ok(out)
}

/// Apply a method; `reference` is required for [`ClutterMethod::Reference`].
pub fn apply(
    method: &ClutterMethod,
    h: ArrayView3<Complex64>,
    reference: Option<ArrayView3<Complex64>>,
) -> Result<Array3<Complex64>, ClutterError> {
    match method {
        ClutterMethod::None => Ok(h.to_owned()),
        ClutterMethod::Reference => {
            remove_reference(h, reference.ok_or(ClutterError::MissingReference)?)
        }
        ClutterMethod::Dynamic { epsilon } => remove_dynamic(h, *epsilon),
    }
}
