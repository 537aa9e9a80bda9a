//! Observation maps.
//!
//! Each forward problem supplies the whitened feature `g0(x) = A* k_x / sigma`
//! on its parameter grid together with the spatial Jacobian. Grid quadrature
//! weights enter through an L2-consistent scaling: coordinate `m` carries
//! `w_m^{-1/2}` times the integral of the observation kernel against the
//! `m`-th basis function, so Euclidean inner products of grid vectors
//! approximate L2 inner products of functions and the discrete utility is
//! stable under grid refinement.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::math::wrap_unit;

mod poisson;
mod schrodinger;
mod torus;

pub use poisson::{green_function, green_function_dx, PoissonMap, PoissonSource};
pub use schrodinger::{PotentialShape, SchrodingerMap, SchrodingerParams};
pub use torus::TorusMap;

/// Axis-aligned design domain, either a closed box or the periodic unit
/// interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    periodic: bool,
}

impl Domain {
    /// The closed unit cube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Domain { lower: vec![0.0; dim], upper: vec![1.0; dim], periodic: false }
    }

    /// The unit circle `R / Z`, parameterized by `[0, 1)`.
    pub fn torus() -> Self {
        Domain { lower: vec![0.0], upper: vec![1.0], periodic: true }
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() || lower.iter().zip(&upper).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::invalid("domain", "bounds must be finite with lower < upper"));
        }
        Ok(Domain { lower, upper, periodic: false })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && if self.periodic {
                x.iter().all(|v| v.is_finite())
            } else {
                x.iter().zip(&self.lower).zip(&self.upper).all(|((v, a), b)| *v >= *a && *v <= *b)
            }
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain(format!("{x:?}")))
        }
    }

    /// Clamps each coordinate into the box, or wraps it for the torus.
    pub fn project(&self, x: &mut [f64]) {
        if self.periodic {
            for v in x.iter_mut() {
                *v = wrap_unit(*v);
            }
        } else {
            for ((v, a), b) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
                *v = v.clamp(*a, *b);
            }
        }
    }
}

/// One axis of a tensor-product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GridAxis {
    /// `m` equispaced nodes on `[0, 1]` including both ends, trapezoid weights.
    pub fn closed(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid("grid_points", format!("need at least 2 nodes, got {m}")));
        }
        let h = 1.0 / (m - 1) as f64;
        let nodes = (0..m).map(|i| if i == m - 1 { 1.0 } else { i as f64 * h }).collect();
        let mut weights = vec![h; m];
        weights[0] = 0.5 * h;
        weights[m - 1] = 0.5 * h;
        Ok(GridAxis { nodes, weights })
    }

    /// The `n` interior nodes `i / (n + 1)` with Voronoi cell weights on `[0, 1]`.
    pub fn interior(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("grid_points", format!("need at least 2 interior nodes, got {n}")));
        }
        let h = 1.0 / (n + 1) as f64;
        let nodes = (1..=n).map(|i| i as f64 * h).collect();
        let mut weights = vec![h; n];
        weights[0] = 1.5 * h;
        weights[n - 1] = 1.5 * h;
        Ok(GridAxis { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Tensor-product parameter grid on the unit box. Node `m` of a 2D grid
/// with axis sizes `(n0, n1)` is `(axis0[m / n1], axis1[m % n1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGrid {
    axes: Vec<GridAxis>,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl ParameterGrid {
    pub fn from_axes(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::invalid("grid", format!("dimension must be 1 or 2, got {}", axes.len())));
        }
        for a in &axes {
            check_dim(a.nodes.len(), a.weights.len())?;
            if a.nodes.iter().any(|z| !(0.0..=1.0).contains(z)) || a.weights.iter().any(|w| !(*w > 0.0)) {
                return Err(Error::invalid("grid", "nodes must lie in [0, 1] with positive weights"));
            }
        }
        let dim = axes.len();
        let total: usize = axes.iter().map(GridAxis::len).product();
        let mut points = Vec::with_capacity(total * dim);
        let mut weights = Vec::with_capacity(total);
        if dim == 1 {
            points.extend_from_slice(&axes[0].nodes);
            weights.extend_from_slice(&axes[0].weights);
        } else {
            for (x, wx) in axes[0].nodes.iter().zip(&axes[0].weights) {
                for (y, wy) in axes[1].nodes.iter().zip(&axes[1].weights) {
                    points.push(*x);
                    points.push(*y);
                    weights.push(wx * wy);
                }
            }
        }
        Ok(ParameterGrid { axes, points, weights })
    }

    /// `m` equispaced nodes on `[0, 1]` with trapezoid weights.
    pub fn uniform_1d(m: usize) -> Result<Self> {
        Self::from_axes(vec![GridAxis::closed(m)?])
    }

    /// The `n x n` interior nodes of the unit square with spacing `1 / (n + 1)`.
    pub fn interior_2d(n: usize) -> Result<Self> {
        let a = GridAxis::interior(n)?;
        Self::from_axes(vec![a.clone(), a])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    pub fn point(&self, m: usize) -> &[f64] {
        let d = self.dim();
        &self.points[m * d..(m + 1) * d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> Domain {
        Domain::unit(self.dim())
    }
}

/// Test map with `g0(x) = offset + slope * x` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    offset: Vec<f64>,
    slope: Vec<f64>,
}

/// The closed set of forward models.
#[derive(Debug, Clone)]
pub enum ObservationMap {
    Poisson(PoissonMap),
    Schrodinger(SchrodingerMap),
    Torus(TorusMap),
    /// Affine feature in one variable; with zero slope, a constant feature.
    Affine(AffineMap),
}

impl ObservationMap {
    pub fn poisson(grid: ParameterGrid, noise_std: f64) -> Result<Self> {
        Ok(ObservationMap::Poisson(PoissonMap::new(grid, noise_std, PoissonSource::Hat)?))
    }

    pub fn schrodinger(params: SchrodingerParams) -> Result<Self> {
        Ok(ObservationMap::Schrodinger(SchrodingerMap::new(params)?))
    }

    pub fn torus() -> Self {
        ObservationMap::Torus(TorusMap)
    }

    pub fn affine(offset: Vec<f64>, slope: Vec<f64>) -> Result<Self> {
        check_dim(offset.len(), slope.len())?;
        if offset.is_empty() || offset.iter().chain(&slope).any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature", "must be a nonempty finite vector"));
        }
        Ok(ObservationMap::Affine(AffineMap { offset, slope }))
    }

    /// Constant feature `g0(x) = value` on `[0, 1]`.
    pub fn constant(value: Vec<f64>) -> Result<Self> {
        let slope = vec![0.0; value.len()];
        Self::affine(value, slope)
    }

    /// Length `M` of the feature vector.
    pub fn feature_len(&self) -> usize {
        match self {
            ObservationMap::Poisson(p) => p.grid().len(),
            ObservationMap::Schrodinger(s) => s.grid().len(),
            ObservationMap::Torus(_) => 2,
            ObservationMap::Affine(a) => a.offset.len(),
        }
    }

    /// Spatial dimension of the design domain.
    pub fn dim(&self) -> usize {
        match self {
            ObservationMap::Schrodinger(_) => 2,
            _ => 1,
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            ObservationMap::Torus(_) => Domain::torus(),
            _ => Domain::unit(self.dim()),
        }
    }

    pub fn grid(&self) -> Option<&ParameterGrid> {
        match self {
            ObservationMap::Poisson(p) => Some(p.grid()),
            ObservationMap::Schrodinger(s) => Some(s.grid()),
            _ => None,
        }
    }

    pub fn noise_std(&self) -> f64 {
        match self {
            ObservationMap::Poisson(p) => p.noise_std(),
            ObservationMap::Schrodinger(s) => s.params().noise_std,
            _ => 1.0,
        }
    }

    /// Writes `g0(x)` into `value` and, if requested, the Jacobian into `jac`
    /// stored column-major (`M x dim`). The point is not range-checked.
    pub fn eval_into(&self, x: &[f64], value: &mut [f64], jac: Option<&mut [f64]>) -> Result<()> {
        match self {
            ObservationMap::Poisson(p) => {
                p.eval_into(x[0], value, jac);
                Ok(())
            }
            ObservationMap::Schrodinger(s) => s.eval_into(x, value, jac),
            ObservationMap::Torus(t) => {
                t.eval_into(x[0], value, jac);
                Ok(())
            }
            ObservationMap::Affine(a) => {
                for ((v, o), s) in value.iter_mut().zip(&a.offset).zip(&a.slope) {
                    *v = o + s * x[0];
                }
                if let Some(j) = jac {
                    j.copy_from_slice(&a.slope);
                }
                Ok(())
            }
        }
    }

    fn checked(&self, x: &[f64]) -> Result<()> {
        self.domain().check(x)
    }

    pub fn feature(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.checked(x)?;
        let mut v = DVector::zeros(self.feature_len());
        self.eval_into(x, v.as_mut_slice(), None)?;
        Ok(v)
    }

    pub fn feature_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.feature_and_jacobian(x)?.1)
    }

    pub fn feature_and_jacobian(&self, x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.checked(x)?;
        let m = self.feature_len();
        let mut v = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, self.dim());
        self.eval_into(x, v.as_mut_slice(), Some(j.as_mut_slice()))?;
        Ok((v, j))
    }
}
