//! Unit-circle example with the finite-dimensional feature
//! `(cos 2πx, sin 2πx)` and unit noise.

use crate::math::{cos, sin, TAU};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TorusMap;

impl TorusMap {
    pub(super) fn eval_into(&self, x: f64, value: &mut [f64], jac: Option<&mut [f64]>) {
        let (c, s) = (cos(TAU * x), sin(TAU * x));
        value[0] = c;
        value[1] = s;
        if let Some(j) = jac {
            j[0] = -TAU * s;
            j[1] = TAU * c;
        }
    }
}
