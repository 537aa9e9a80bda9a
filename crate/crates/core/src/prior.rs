//! Prior covariance on the parameter grid and its symmetric square root.
//!
//! The covariance matrix is `W^{1/2} K W^{1/2}` with `K` the kernel Gram
//! matrix and `W` the quadrature weights, the discrete counterpart of the
//! covariance operator under the L2-consistent scaling used by the models.
//! Stationary squared-exponential priors on tensor grids factor as a
//! Kronecker product and are stored by their one-dimensional factors.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;
use crate::math::sqrt;
use crate::models::{GridAxis, ParameterGrid};

#[derive(Debug, Clone)]
struct Factor {
    cov: DMatrix<f64>,
    sqrt: DMatrix<f64>,
}

#[derive(Debug, Clone)]
enum Repr {
    Dense(Factor),
    /// `A ⊗ B` acting on row-major `n0 x n1` arrays.
    Kronecker(Factor, Factor),
}

/// Prior covariance `C_f` with symmetric square root `C_f^{1/2}`.
#[derive(Debug, Clone)]
pub struct PriorModel {
    repr: Repr,
    eigen_floor: f64,
    min_eigenvalue: f64,
}

fn symmetric_sqrt(cov: DMatrix<f64>, floor: f64) -> Result<(Factor, f64, f64)> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("covariance has non-finite entries".into()));
    }
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let (min, max) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let roots = eig.eigenvalues.map(|l| if l > floor { sqrt(l) } else { sqrt(floor.max(0.0)) });
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= roots[j];
    }
    let sqrt = &scaled * q.transpose();
    let sqrt = (&sqrt + sqrt.transpose()) * 0.5;
    let cov = if floor > 0.0 { &sqrt * &sqrt } else { sym };
    Ok((Factor { cov, sqrt }, min, max))
}

fn axis_covariance(kernel: &KernelSpec, axis: &GridAxis) -> DMatrix<f64> {
    let n = axis.len();
    let sw: Vec<f64> = axis.weights.iter().map(|w| sqrt(*w)).collect();
    DMatrix::from_fn(n, n, |i, j| sw[i] * kernel.eval_unchecked(&[axis.nodes[i]], &[axis.nodes[j]]) * sw[j])
}

impl PriorModel {
    /// Assembles the weighted Gram matrix of `kernel` on `grid`. Eigenvalues
    /// of the covariance below `eigen_floor` are raised to it.
    pub fn assemble(kernel: &KernelSpec, grid: &ParameterGrid, eigen_floor: f64) -> Result<Self> {
        kernel.validate()?;
        if !kernel.is_covariance() {
            return Err(Error::invalid("prior.kernel.family", "the interaction kernel is not a prior covariance"));
        }
        if !(eigen_floor >= 0.0) || !eigen_floor.is_finite() {
            return Err(Error::invalid("prior.eigen_floor", format!("must be finite and >= 0, got {eigen_floor}")));
        }
        match (kernel, grid.axes()) {
            (KernelSpec::TorusCosine, _) => {
                Err(Error::invalid("prior.kernel.family", "the torus kernel is not defined on a parameter grid"))
            }
            (KernelSpec::SquaredExponential { .. }, [a0, a1]) => {
                // the floor applies to each factor so the product spectrum stays >= floor^2
                let (f0, lo0, hi0) = symmetric_sqrt(axis_covariance(kernel, a0), eigen_floor)?;
                let (f1, lo1, hi1) = symmetric_sqrt(axis_covariance(kernel, a1), eigen_floor)?;
                let min = [lo0 * lo1, lo0 * hi1, hi0 * lo1].into_iter().fold(f64::INFINITY, f64::min);
                Ok(PriorModel { repr: Repr::Kronecker(f0, f1), eigen_floor, min_eigenvalue: min })
            }
            _ => {
                let m = grid.len();
                let d = grid.dim();
                let sw: Vec<f64> = grid.weights().iter().map(|w| sqrt(*w)).collect();
                let cov = DMatrix::from_fn(m, m, |i, j| {
                    sw[i] * kernel.eval_unchecked(&grid.point(i)[..d], &grid.point(j)[..d]) * sw[j]
                });
                Self::from_covariance(cov, eigen_floor)
            }
        }
    }

    /// Wraps an explicit covariance matrix.
    pub fn from_covariance(cov: DMatrix<f64>, eigen_floor: f64) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::DimensionMismatch { expected: cov.nrows(), found: cov.ncols() });
        }
        let (f, min, _) = symmetric_sqrt(cov, eigen_floor)?;
        Ok(PriorModel { repr: Repr::Dense(f), eigen_floor, min_eigenvalue: min })
    }

    pub fn identity(m: usize) -> Self {
        Self::scaled_identity(m, 1.0)
    }

    /// `variance * I_m`.
    pub fn scaled_identity(m: usize, variance: f64) -> Self {
        let cov = DMatrix::identity(m, m) * variance;
        let sqrt = DMatrix::identity(m, m) * sqrt(variance.max(0.0));
        PriorModel { repr: Repr::Dense(Factor { cov, sqrt }), eigen_floor: 0.0, min_eigenvalue: variance }
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        if variances.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("variances", "must be nonnegative"));
        }
        let d = DVector::from_column_slice(variances);
        let cov = DMatrix::from_diagonal(&d);
        let sqrt = DMatrix::from_diagonal(&d.map(sqrt));
        let min = variances.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(PriorModel { repr: Repr::Dense(Factor { cov, sqrt }), eigen_floor: 0.0, min_eigenvalue: min })
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            Repr::Dense(f) => f.cov.nrows(),
            Repr::Kronecker(a, b) => a.cov.nrows() * b.cov.nrows(),
        }
    }

    pub fn eigen_floor(&self) -> f64 {
        self.eigen_floor
    }

    /// Smallest eigenvalue of the covariance before flooring.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn is_kronecker(&self) -> bool {
        matches!(self.repr, Repr::Kronecker(..))
    }

    pub fn trace(&self) -> f64 {
        match &self.repr {
            Repr::Dense(f) => f.cov.trace(),
            Repr::Kronecker(a, b) => a.cov.trace() * b.cov.trace(),
        }
    }

    fn apply(&self, x: &DMatrix<f64>, sqrt: bool) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x.nrows())?;
        fn pick(f: &Factor, sqrt: bool) -> &DMatrix<f64> {
            if sqrt {
                &f.sqrt
            } else {
                &f.cov
            }
        }
        Ok(match &self.repr {
            Repr::Dense(f) => pick(f, sqrt) * x,
            Repr::Kronecker(a, b) => {
                let (a, b) = (pick(a, sqrt), pick(b, sqrt));
                let (n0, n1) = (a.nrows(), b.nrows());
                let mut out = DMatrix::zeros(x.nrows(), x.ncols());
                // a column holds a row-major n0 x n1 array, i.e. a column-major n1 x n0 one
                for (c, col) in x.column_iter().enumerate() {
                    let v = DMatrix::from_column_slice(n1, n0, col.as_slice());
                    let r = b * v * a.transpose();
                    out.column_mut(c).copy_from_slice(r.as_slice());
                }
                out
            }
        })
    }

    /// `C_f^{1/2} X` for a block of column vectors.
    pub fn apply_sqrt(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.apply(x, true)
    }

    /// `C_f X` for a block of column vectors.
    pub fn apply_cov(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.apply(x, false)
    }

    pub fn apply_sqrt_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.apply(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()), true)?;
        Ok(m.column(0).into_owned())
    }

    /// Dense covariance matrix.
    pub fn cov(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(f) => f.cov.clone(),
            Repr::Kronecker(a, b) => a.cov.kronecker(&b.cov),
        }
    }

    /// Dense symmetric square root.
    pub fn sqrt_cov(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(f) => f.sqrt.clone(),
            Repr::Kronecker(a, b) => a.sqrt.kronecker(&b.sqrt),
        }
    }

    /// Kronecker factors `(C_0, C_1)` when the prior is separable.
    pub fn kronecker_factors(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        match &self.repr {
            Repr::Kronecker(a, b) => Some((&a.cov, &b.cov)),
            Repr::Dense(_) => None,
        }
    }
}

/// Torus prior `sigma^2 I_2`.
pub fn torus_prior(sigma: f64) -> Result<PriorModel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma_prior", format!("must be positive, got {sigma}")));
    }
    Ok(PriorModel::scaled_identity(2, sigma * sigma))
}
