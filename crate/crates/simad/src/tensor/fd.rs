//! Finite-difference utilities for checking analytic gradients.
//!
//! These helpers evaluate closures numerically and never touch the tape's
//! backward pass, so they stay independent of the code they are used to
//! check.

use super::Elem;

/// Central-difference derivative of `f` at `x0` with step `h`.
pub fn central_diff(mut f: impl FnMut(Elem) -> f64, x0: Elem, h: f64) -> f64 {
    let fp = f((x0 as f64 + h) as Elem);
    let fm = f((x0 as f64 - h) as Elem);
    (fp - fm) / (2.0 * h)
}

/// Relative error between an analytic value and a reference, with an absolute
/// floor so near-zero pairs are compared absolutely instead of blowing up.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
