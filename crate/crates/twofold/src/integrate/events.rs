//! Bracketed event localization on a dense-output interpolant.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventError {
    #[error("no sign change of the event function on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
}

/// Refine a sign change of `g` on `[lo, hi]` by bisection until the bracket
/// is narrower than `width`; returns the endpoint with the smaller `|g|`.
pub fn locate_event<G: Fn(f64) -> f64>(g: G, lo: f64, hi: f64, width: f64) -> Result<f64, EventError> {
    let (mut a, mut b) = (lo, hi);
    let (mut ga, mut gb) = (g(a), g(b));
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    if ga.signum() == gb.signum() {
        return Err(EventError::NoSignChange { lo, hi });
    }
    while (b - a).abs() > width {
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return Ok(m);
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
            gb = gm;
        }
    }
    Ok(if ga.abs() <= gb.abs() { a } else { b })
}

/// Minimum of `g` on `[lo, hi]` by golden-section search; `Some(t)` when the
/// minimum dips to `tol` or below (a grazing contact).
pub fn locate_grazing<G: Fn(f64) -> f64>(g: G, lo: f64, hi: f64, tol: f64, width: f64) -> Option<f64> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    while (b - a) > width {
        if gc < gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    let (t, v) = if gc < gd { (c, gc) } else { (d, gd) };
    (v <= tol).then_some(t)
}

/// Last-good/first-bad transition of a predicate, `good(lo)` assumed.
pub(crate) fn bisect_transition<P: Fn(f64) -> bool>(good: P, lo: f64, hi: f64, width: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    while b - a > width {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if good(m) {
            a = m;
        } else {
            b = m;
        }
    }
    b
}
