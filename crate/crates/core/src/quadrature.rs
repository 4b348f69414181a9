//! Gauss–Legendre and adaptive Simpson quadrature on finite intervals.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

/// Shared 64-point Gauss–Legendre rule.
fn rule64() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(64).expect("nonzero")))
}

const MAX_DEPTH: u32 = 24;

/// Adaptive 64-point Gauss–Legendre: the whole-interval estimate is
/// compared with the two-half estimate and halves are refined until the
/// two agree to `tol`.
pub fn adaptive_gauss<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let rule = rule64();
    let whole = rule.integrate(a, b, &mut f);
    gauss_refine(rule, &mut f, a, b, whole, tol.max(1e-15), 0)
}

fn gauss_refine<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    f: &mut F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = rule.integrate(a, mid, &mut *f);
    let right = rule.integrate(mid, b, &mut *f);
    if (left + right - whole).abs() <= tol || depth >= MAX_DEPTH {
        return left + right;
    }
    gauss_refine(rule, f, a, mid, left, 0.5 * tol, depth + 1)
        + gauss_refine(rule, f, mid, b, right, 0.5 * tol, depth + 1)
}

/// Adaptive composite Simpson with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_refine(&f, a, b, fa, fm, fb, whole, tol, 0)
}

#[allow(clippy::too_many_arguments)]
fn simpson_refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // Force a few levels so that a lucky coarse agreement is not accepted.
    if depth >= 4 && (delta.abs() <= 15.0 * tol || depth >= 40) {
        return left + right + delta / 15.0;
    }
    simpson_refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
        + simpson_refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)
}
