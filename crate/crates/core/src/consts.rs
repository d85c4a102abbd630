//! Physical constants and the shared DSP sign convention.

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Sign of the per-subcarrier phase term of a delayed path.
///
/// A path with delay `tau` contributes `exp(SUBCARRIER_PHASE_SIGN * j*2*pi*k*df*tau)`
/// on subcarrier `k`. The channel synthesizer and every sensing transform
/// (delay profile, periodogram, range steering vector) derive their exponent
/// signs from this constant, so a delay always maps to a positive tap index.
pub const SUBCARRIER_PHASE_SIGN: f64 = -1.0;

/// Offset applied along a ray before searching for the next surface, meters.
pub const SELF_INTERSECTION_EPS: f64 = 1e-6;

/// Smallest triangle area accepted in a mesh, m^2.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;
