//! Variance and repulsion regularizers on ensemble products.
//!
//! ```text
//! R_v = Σ_b E_{μ_b} |x - E_{μ_b} x|^2
//! R_r = Σ_{b ≠ b'} (1/N^2) Σ_{i, i'} q(x_{i,b}, x_{i',b'})
//! ```
//!
//! The gradients are those of the first variations at the particle, so a
//! particle coordinate derivative of `R_v` or `R_r` equals the returned
//! gradient divided by `N`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::design::EnsembleProduct;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// Weights `alpha` (variance) and `beta` (repulsion) and the interaction
/// kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kernel: KernelSpec,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig { alpha: 0.0, beta: 0.0, kernel: KernelSpec::GaussianInteraction { sigma: 0.009 } }
    }
}

impl RegularizerConfig {
    pub fn new(alpha: f64, beta: f64, sigma_q: f64) -> Result<Self> {
        let c = RegularizerConfig { alpha, beta, kernel: KernelSpec::GaussianInteraction { sigma: sigma_q } };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("alpha", format!("must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta", format!("must be finite and >= 0, got {}", self.beta)));
        }
        self.kernel.validate()
    }

    pub fn is_off(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

/// `R_v`: sum of the per-ensemble population variances.
pub fn variance_value(ens: &EnsembleProduct) -> f64 {
    (0..ens.batch()).map(|b| ens.ensemble_variance(b).unwrap_or(0.0)).sum()
}

/// `2 (x_{i,b} - mean_b)`.
pub fn variance_gradient(ens: &EnsembleProduct, b: usize, i: usize) -> Result<Vec<f64>> {
    let x = ens.particle(b, i)?;
    let mean = ens.ensemble_mean(b)?;
    Ok(x.iter().zip(&mean).map(|(x, m)| 2.0 * (x - m)).collect())
}

/// `R_r` over ordered pairs of distinct ensembles.
pub fn repulsion_value(ens: &EnsembleProduct, kernel: &KernelSpec) -> f64 {
    let (nb, n) = (ens.batch(), ens.per_ensemble());
    let mut total = 0.0;
    for b in 0..nb {
        for c in 0..nb {
            if b == c {
                continue;
            }
            for i in 0..n {
                let x = ens.particle_unchecked(b, i);
                for j in 0..n {
                    total += kernel.eval_unchecked(x, ens.particle_unchecked(c, j));
                }
            }
        }
    }
    total / (n * n) as f64
}

/// `2 Σ_{b' ≠ b} (1/N) Σ_{i'} ∇_x q(x_{i,b}, x_{i',b'})`.
pub fn repulsion_gradient(ens: &EnsembleProduct, kernel: &KernelSpec, b: usize, i: usize) -> Result<Vec<f64>> {
    ens.particle(b, i)?;
    let mut out = vec![0.0; ens.dim()];
    repulsion_gradient_into(ens, kernel, b, i, &mut out);
    Ok(out)
}

pub(crate) fn repulsion_gradient_into(ens: &EnsembleProduct, kernel: &KernelSpec, b: usize, i: usize, out: &mut [f64]) {
    let d = ens.dim();
    let x = ens.particle_unchecked(b, i);
    let mut tmp = vec![0.0; d];
    out.fill(0.0);
    for c in (0..ens.batch()).filter(|&c| c != b) {
        for j in 0..ens.per_ensemble() {
            kernel.grad_x_into(x, ens.particle_unchecked(c, j), &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += t;
            }
        }
    }
    let s = 2.0 / ens.per_ensemble() as f64;
    for o in out.iter_mut() {
        *o *= s;
    }
}
