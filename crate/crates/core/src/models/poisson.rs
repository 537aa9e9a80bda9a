//! One-dimensional Poisson problem `-u'' = f` on `(0, 1)` with homogeneous
//! Dirichlet conditions, observed pointwise.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sqrt;

use super::ParameterGrid;

/// Dirichlet Green's function of `-d^2/dx^2` on `(0, 1)`.
pub fn green_function(x: f64, z: f64) -> f64 {
    if x <= z {
        x * (1.0 - z)
    } else {
        z * (1.0 - x)
    }
}

/// `dG/dx`, taking the left limit at `x = z`.
pub fn green_function_dx(x: f64, z: f64) -> f64 {
    if x <= z {
        1.0 - z
    } else {
        -z
    }
}

/// How the source field is represented between grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoissonSource {
    /// Piecewise-linear hat functions. The observation of each hat is a
    /// `C^2` function of the sensor location.
    #[default]
    Hat,
    /// Point masses at the nodes, i.e. quadrature `w_m G(x, z_m)`. The
    /// feature has kinks at the nodes.
    Nodal,
}

#[derive(Debug, Clone)]
struct HatRamps {
    points: [f64; 3],
    coeffs: [f64; 3],
    at_one: f64,
}

/// Poisson observation map.
#[derive(Debug, Clone)]
pub struct PoissonMap {
    grid: ParameterGrid,
    noise_std: f64,
    source: PoissonSource,
    scale: Vec<f64>,
    ramps: Vec<HatRamps>,
}

/// `int_0^x (x - t) (t - p)_+ dt`.
#[inline]
fn ramp2(x: f64, p: f64) -> f64 {
    if p >= 0.0 {
        let d = (x - p).max(0.0);
        d * d * d / 6.0
    } else {
        x * x * x / 6.0 - p * x * x / 2.0
    }
}

#[inline]
fn ramp2_dx(x: f64, p: f64) -> f64 {
    if p >= 0.0 {
        let d = (x - p).max(0.0);
        d * d / 2.0
    } else {
        x * x / 2.0 - p * x
    }
}

impl HatRamps {
    fn psi2(&self, x: f64) -> f64 {
        (0..3).map(|k| self.coeffs[k] * ramp2(x, self.points[k])).sum()
    }

    fn psi2_dx(&self, x: f64) -> f64 {
        (0..3).map(|k| self.coeffs[k] * ramp2_dx(x, self.points[k])).sum()
    }
}

impl PoissonMap {
    pub fn new(grid: ParameterGrid, noise_std: f64, source: PoissonSource) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::invalid("grid", "the Poisson model needs a 1D grid"));
        }
        if !(noise_std > 0.0) || !noise_std.is_finite() {
            return Err(Error::invalid("noise_std", format!("must be positive, got {noise_std}")));
        }
        let nodes = &grid.axes()[0].nodes;
        let m = nodes.len();
        let ramps = (0..m)
            .map(|i| {
                let hr = if i + 1 < m { nodes[i + 1] - nodes[i] } else { nodes[i] - nodes[i - 1] };
                let hl = if i > 0 { nodes[i] - nodes[i - 1] } else { hr };
                let z = nodes[i];
                let mut r = HatRamps {
                    points: [z - hl, z, z + hr],
                    coeffs: [1.0 / hl, -(1.0 / hl + 1.0 / hr), 1.0 / hr],
                    at_one: 0.0,
                };
                r.at_one = r.psi2(1.0);
                r
            })
            .collect();
        let scale = grid
            .weights()
            .iter()
            .map(|w| match source {
                PoissonSource::Hat => 1.0 / (noise_std * sqrt(*w)),
                PoissonSource::Nodal => sqrt(*w) / noise_std,
            })
            .collect();
        Ok(PoissonMap { grid, noise_std, source, scale, ramps })
    }

    pub fn grid(&self) -> &ParameterGrid {
        &self.grid
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn source(&self) -> PoissonSource {
        self.source
    }

    pub(super) fn eval_into(&self, x: f64, value: &mut [f64], jac: Option<&mut [f64]>) {
        let nodes = &self.grid.axes()[0].nodes;
        match self.source {
            PoissonSource::Hat => {
                for ((v, r), s) in value.iter_mut().zip(&self.ramps).zip(&self.scale) {
                    *v = s * (x * r.at_one - r.psi2(x));
                }
                if let Some(j) = jac {
                    for ((d, r), s) in j.iter_mut().zip(&self.ramps).zip(&self.scale) {
                        *d = s * (r.at_one - r.psi2_dx(x));
                    }
                }
            }
            PoissonSource::Nodal => {
                for ((v, z), s) in value.iter_mut().zip(nodes).zip(&self.scale) {
                    *v = s * green_function(x, *z);
                }
                if let Some(j) = jac {
                    for ((d, z), s) in j.iter_mut().zip(nodes).zip(&self.scale) {
                        *d = s * green_function_dx(x, *z);
                    }
                }
            }
        }
    }
}
