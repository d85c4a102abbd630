use std::f64::consts::{FRAC_PI_2, PI};

const TOLERANCE: f64 = 1e-9;
const MAX_DEPTH: u32 = 48;
/// Above this argument the asymptotic expansion is accurate to ~1e-10.
const ASYMPTOTIC_FROM: f64 = 40.0;

fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
        + adaptive(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(&f, a, fa, b, fb);
    adaptive(&f, a, fa, b, fb, m, fm, whole, tol, MAX_DEPTH)
}

/// Fresnel integrals `C(v) = int_0^v cos(pi t^2 / 2) dt` and
/// `S(v) = int_0^v sin(pi t^2 / 2) dt`; odd in `v`.
pub fn fresnel_integrals(v: f64) -> (f64, f64) {
    let x = v.abs();
    let (c, s) = if x >= ASYMPTOTIC_FROM {
        let arg = FRAC_PI_2 * x * x;
        let px = PI * x;
        let u = 1.0 / (PI * x * x).powi(2);
        let f = (1.0 - 3.0 * u + 105.0 * u * u) / px;
        let g = (1.0 - 15.0 * u) / (PI * px * x * x);
        (
            0.5 + f * arg.sin() - g * arg.cos(),
            0.5 - f * arg.cos() - g * arg.sin(),
        )
    } else {
        // split into unit pieces so the oscillating tail stays well resolved
        let pieces = x.ceil().max(1.0) as usize;
        let step = x / pieces as f64;
        let tol = TOLERANCE / pieces as f64;
        let mut c = 0.0;
        let mut s = 0.0;
        for i in 0..pieces {
            let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
            c += integrate(|t| (FRAC_PI_2 * t * t).cos(), a, b, tol);
            s += integrate(|t| (FRAC_PI_2 * t * t).sin(), a, b, tol);
        }
        (c, s)
    };
    (c.copysign(v), s.copysign(v))
}
