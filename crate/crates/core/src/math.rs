//! Float helpers routed through `libm` so results are identical with and
//! without `std`.

pub(crate) use libm::{cos, erf, exp, sin, sqrt};

pub(crate) const TAU: f64 = core::f64::consts::TAU;

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Value of `x` modulo 1 in `[0, 1)`.
#[inline]
pub(crate) fn wrap_unit(x: f64) -> f64 {
    let r = x - libm::floor(x);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}
