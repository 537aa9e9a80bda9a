//! Scalar kernels with analytic spatial gradients.
//!
//! Two covariance families build priors on the parameter grid, the Gaussian
//! interaction kernel drives inter-ensemble repulsion, and the torus cosine
//! kernel backs the analytic torus example. Points are coordinate slices;
//! the torus kernel is one-dimensional.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math::{cos, exp, sin, sq_dist, wrap_unit, TAU};

/// Amplitude of the quadratic prefactor `1 + a |x - 1/2|^2` used by the
/// Poisson prior.
pub const DEFAULT_NONSTATIONARY_AMPLITUDE: f64 = 50.0;

/// Closed set of kernel families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `exp(-|x - z|^2 / (2 l^2))`.
    SquaredExponential { lengthscale: f64 },
    /// `(1 + a|x - c|^2)(1 + a|z - c|^2) exp(-|x - z|^2 / (2 l^2))` with `c`
    /// the domain center `(1/2, ..., 1/2)`.
    NonstationaryProduct { lengthscale: f64, amplitude: f64 },
    /// Peak-one Gaussian `exp(-|x - z|^2 / (2 s^2))` used for repulsion.
    GaussianInteraction { sigma: f64 },
    /// `cos(2 pi (x - z))` on the unit torus; arguments are wrapped mod 1.
    TorusCosine,
}

impl KernelSpec {
    pub fn squared_exponential(lengthscale: f64) -> Result<Self> {
        let k = KernelSpec::SquaredExponential { lengthscale };
        k.validate()?;
        Ok(k)
    }

    pub fn nonstationary(lengthscale: f64) -> Result<Self> {
        let k = KernelSpec::NonstationaryProduct { lengthscale, amplitude: DEFAULT_NONSTATIONARY_AMPLITUDE };
        k.validate()?;
        Ok(k)
    }

    pub fn gaussian_interaction(sigma: f64) -> Result<Self> {
        let k = KernelSpec::GaussianInteraction { sigma };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be a positive finite number, got {v}")))
            }
        };
        match *self {
            KernelSpec::SquaredExponential { lengthscale } => positive("lengthscale", lengthscale),
            KernelSpec::NonstationaryProduct { lengthscale, amplitude } => {
                positive("lengthscale", lengthscale)?;
                if !amplitude.is_finite() || amplitude < 0.0 {
                    return Err(Error::invalid("amplitude", format!("must be finite and >= 0, got {amplitude}")));
                }
                Ok(())
            }
            KernelSpec::GaussianInteraction { sigma } => positive("sigma_q", sigma),
            KernelSpec::TorusCosine => Ok(()),
        }
    }

    /// Whether the family is meant as a prior covariance.
    pub fn is_covariance(&self) -> bool {
        !matches!(self, KernelSpec::GaussianInteraction { .. })
    }

    /// Whether `k(x, z)` depends only on `x - z`.
    pub fn is_stationary(&self) -> bool {
        !matches!(self, KernelSpec::NonstationaryProduct { .. })
    }

    /// Evaluates `k(x, z)`.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.check_args(x, z)?;
        Ok(self.eval_unchecked(x, z))
    }

    /// Evaluates `grad_x k(x, z)`.
    pub fn grad_x(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_args(x, z)?;
        let mut out = vec![0.0; x.len()];
        self.grad_x_into(x, z, &mut out);
        Ok(out)
    }

    fn check_args(&self, x: &[f64], z: &[f64]) -> Result<()> {
        check_dim(x.len(), z.len())?;
        if x.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        if matches!(self, KernelSpec::TorusCosine) {
            check_dim(1, x.len())?;
        }
        Ok(())
    }

    /// `k(x, z)` without argument checks. Slices must have equal, nonzero length.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            KernelSpec::SquaredExponential { lengthscale } => exp(-sq_dist(x, z) / (2.0 * lengthscale * lengthscale)),
            KernelSpec::NonstationaryProduct { lengthscale, amplitude } => {
                let base = exp(-sq_dist(x, z) / (2.0 * lengthscale * lengthscale));
                prefactor(amplitude, x) * prefactor(amplitude, z) * base
            }
            KernelSpec::GaussianInteraction { sigma } => exp(-sq_dist(x, z) / (2.0 * sigma * sigma)),
            KernelSpec::TorusCosine => cos(TAU * (wrap_unit(x[0]) - wrap_unit(z[0]))),
        }
    }

    /// Writes `grad_x k(x, z)` into `out`.
    #[inline]
    pub fn grad_x_into(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        match *self {
            KernelSpec::SquaredExponential { lengthscale: s } | KernelSpec::GaussianInteraction { sigma: s } => {
                let inv = 1.0 / (s * s);
                let k = exp(-0.5 * sq_dist(x, z) * inv);
                for ((o, xi), zi) in out.iter_mut().zip(x).zip(z) {
                    *o = -(xi - zi) * inv * k;
                }
            }
            KernelSpec::NonstationaryProduct { lengthscale, amplitude } => {
                let inv = 1.0 / (lengthscale * lengthscale);
                let base = exp(-0.5 * sq_dist(x, z) * inv);
                let ax = prefactor(amplitude, x);
                let az = prefactor(amplitude, z);
                for ((o, xi), zi) in out.iter_mut().zip(x).zip(z) {
                    let dax = 2.0 * amplitude * (xi - 0.5);
                    *o = az * base * (dax - ax * (xi - zi) * inv);
                }
            }
            KernelSpec::TorusCosine => {
                out[0] = -TAU * sin(TAU * (wrap_unit(x[0]) - wrap_unit(z[0])));
            }
        }
    }
}

#[inline]
fn prefactor(amplitude: f64, x: &[f64]) -> f64 {
    1.0 + amplitude * x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>()
}
