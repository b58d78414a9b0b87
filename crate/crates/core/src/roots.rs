//! Safeguarded Newton iteration on a bracket.

use crate::error::{Error, Result};

pub const MAX_ITER: usize = 200;

/// Finds `x ∈ [lo, hi]` with `f(x) = 0` for an increasing `f`, given
/// `f(lo) ≤ 0 ≤ f(hi)`.
///
/// `f` returns the value and the derivative. Newton steps that leave the
/// current bracket, or fail to halve it, are replaced by bisection.
/// Converges when the bracket is narrower than `tol · max(|x|, scale)`.
pub fn newton_bisect<F>(
    op: &'static str,
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    guess: Option<f64>,
    tol: f64,
    scale: f64,
) -> Result<f64>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (flo, _) = f(lo);
    if flo >= 0.0 {
        return Ok(lo);
    }
    let (fhi, _) = f(hi);
    if fhi <= 0.0 {
        return Ok(hi);
    }
    let mut x = match guess {
        Some(g) if g > lo && g < hi => g,
        _ => 0.5 * (lo + hi),
    };
    let mut last_width = hi - lo;
    for _ in 0..MAX_ITER {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let width = hi - lo;
        if width <= tol * x.abs().max(scale) {
            return Ok(0.5 * (lo + hi));
        }
        let newton = x - fx / dfx;
        let stalled = width > 0.5 * last_width;
        last_width = width;
        x = if dfx > 0.0 && newton > lo && newton < hi && !stalled {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if x <= lo || x >= hi {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::NoConvergence {
        op,
        iterations: MAX_ITER,
    })
}

/// Plain bisection for an increasing `f` with `f(lo) < target ≤ f(hi)`;
/// returns the bracket once it cannot be split further.
pub fn bisect_increasing<F>(mut f: F, mut lo: f64, mut hi: f64, target: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    for _ in 0..2100 {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}
