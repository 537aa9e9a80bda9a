//! Expected utility of a design measure, its first variation and the
//! posterior covariance.
//!
//! For a measure `ν = Σ w_i δ_{x_i}` and preconditioned features
//! `g(x) = C_f^{1/2} g0(x)`,
//!
//! ```text
//! S_ν    = Σ w_i g(x_i) g(x_i)^T
//! U(ν)   = -Tr[(S_ν + I)^{-1} C_f]
//! C_post = C_f^{1/2} (S_ν + I)^{-1} C_f^{1/2}
//! ```
//!
//! and, writing `ν = B μ` with `μ` a probability measure, the first
//! variation of `V_B(μ) = U(B μ)` is `φ(x) = B |C_f^{1/2} (S_ν + I)^{-1} g(x)|^2`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::design::{DesignMeasure, EnsembleProduct};
use crate::error::{check_dim, Error, Result};
use crate::math::sqrt;
use crate::models::ObservationMap;
use crate::par;
use crate::prior::PriorModel;

/// Points per block in batched feature evaluation. Fixed so that results do
/// not depend on the thread count.
const BLOCK: usize = 32;

/// How `(S_ν + I)` is factored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverMode {
    /// Woodbury when the number of atoms is below a quarter of the grid size.
    #[default]
    Auto,
    /// Cholesky factorization of the `M x M` operator.
    Dense,
    /// Cholesky factorization of the `n x n` capacitance matrix `I + G^T G`.
    Woodbury,
}

#[derive(Debug, Clone)]
enum Factorization {
    Identity,
    Dense { op: DMatrix<f64>, chol: Cholesky<f64, Dyn> },
    Woodbury { g: DMatrix<f64>, chol: Cholesky<f64, Dyn> },
}

/// Factorization of `(S_ν + I)` for a fixed measure `ν`, with the utility
/// `U(ν)` evaluated at assembly.
#[derive(Debug, Clone)]
pub struct ResolventState {
    factor: Factorization,
    m: usize,
    mass: f64,
    utility: f64,
}

impl ResolventState {
    /// Total mass of the measure the state was assembled for.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// `U(ν)`.
    pub fn utility(&self) -> f64 {
        self.utility
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn is_woodbury(&self) -> bool {
        matches!(self.factor, Factorization::Woodbury { .. })
    }

    /// `(S_ν + I)^{-1} X`.
    pub fn apply_inverse(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.m, x.nrows())?;
        Ok(match &self.factor {
            Factorization::Identity => x.clone(),
            Factorization::Dense { chol, .. } => chol.solve(x),
            Factorization::Woodbury { g, chol } => {
                let inner = chol.solve(&(g.transpose() * x));
                x - g * inner
            }
        })
    }

    /// `(S_ν + I) X`.
    pub fn apply_operator(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.m, x.nrows())?;
        Ok(match &self.factor {
            Factorization::Identity => x.clone(),
            Factorization::Dense { op, .. } => op * x,
            Factorization::Woodbury { g, .. } => x + g * (g.transpose() * x),
        })
    }
}

/// Utility evaluator for one forward model, prior and batch size.
#[derive(Debug, Clone)]
pub struct UtilityEngine {
    map: ObservationMap,
    prior: PriorModel,
    batch: f64,
    mode: SolverMode,
}

/// Values and spatial gradients of the first variation at a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstVariationField {
    pub dim: usize,
    pub values: Vec<f64>,
    /// Row-major `n x dim`.
    pub gradients: Vec<f64>,
}

impl FirstVariationField {
    pub fn gradient(&self, j: usize) -> &[f64] {
        &self.gradients[j * self.dim..(j + 1) * self.dim]
    }
}

impl UtilityEngine {
    pub fn new(map: ObservationMap, prior: PriorModel, batch: f64) -> Result<Self> {
        check_dim(map.feature_len(), prior.dim())?;
        if !(batch > 0.0) || !batch.is_finite() {
            return Err(Error::invalid("batch_size", format!("must be positive, got {batch}")));
        }
        Ok(UtilityEngine { map, prior, batch, mode: SolverMode::Auto })
    }

    pub fn with_solver(mut self, mode: SolverMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn map(&self) -> &ObservationMap {
        &self.map
    }

    pub fn prior(&self) -> &PriorModel {
        &self.prior
    }

    pub fn batch(&self) -> f64 {
        self.batch
    }

    pub fn solver_mode(&self) -> SolverMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    /// `g(x) = C_f^{1/2} g0(x)`.
    pub fn preconditioned_feature(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.prior.apply_sqrt_vec(&self.map.feature(x)?)
    }

    /// Jacobian of `g`, `M x dim`.
    pub fn preconditioned_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.prior.apply_sqrt(&self.map.feature_jacobian(x)?)
    }

    /// Raw features of `n` points, with Jacobian columns appended per
    /// dimension when requested: `[g0(x_j) | d_0 g0(x_j) | d_1 g0(x_j)]`.
    fn feature_block(&self, points: &[f64], with_jac: bool) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let n = points.len() / d;
        let m = self.map.feature_len();
        let domain = self.map.domain();
        let cols = par::try_map_indices(n, |j| {
            let x = &points[j * d..(j + 1) * d];
            domain.check(x)?;
            let mut v = vec![0.0; m];
            let mut jac = if with_jac { vec![0.0; m * d] } else { Vec::new() };
            self.map.eval_into(x, &mut v, if with_jac { Some(&mut jac) } else { None })?;
            Ok::<_, Error>((v, jac))
        })?;
        let width = if with_jac { n * (1 + d) } else { n };
        let mut out = DMatrix::zeros(m, width);
        for (j, (v, jac)) in cols.iter().enumerate() {
            out.column_mut(j).copy_from_slice(v);
            if with_jac {
                for k in 0..d {
                    out.column_mut(n * (1 + k) + j).copy_from_slice(&jac[k * m..(k + 1) * m]);
                }
            }
        }
        Ok(out)
    }

    fn use_woodbury(&self, atoms: usize) -> bool {
        match self.mode {
            SolverMode::Dense => false,
            SolverMode::Woodbury => true,
            SolverMode::Auto => 4 * atoms < self.prior.dim(),
        }
    }

    /// Factors `(S_ν + I)` for `ν = measure`, weights taken as given.
    /// Signed weights always take the dense path.
    pub fn assemble_resolvent(&self, measure: &DesignMeasure) -> Result<ResolventState> {
        check_dim(self.dim(), measure.dim())?;
        let m = self.prior.dim();
        let mass = measure.total_mass();
        let signed = measure.has_signed_weights();
        let active: Vec<usize> = (0..measure.len()).filter(|&i| measure.weights()[i] != 0.0).collect();
        if active.is_empty() {
            return Ok(ResolventState { factor: Factorization::Identity, m, mass, utility: -self.prior.trace() });
        }
        let d = self.dim();
        let mut pts = Vec::with_capacity(active.len() * d);
        for &i in &active {
            pts.extend_from_slice(measure.point(i));
        }
        let mut g = self.prior.apply_sqrt(&self.feature_block(&pts, false)?)?;
        if signed {
            // S = G diag(w) G^T has no square-root factorization; use the dense path
            let mut gw = g.clone();
            for (c, &i) in active.iter().enumerate() {
                gw.column_mut(c).scale_mut(measure.weights()[i]);
            }
            let op = &gw * g.transpose() + DMatrix::identity(m, m);
            return self.dense_state(op, mass);
        }
        for (c, &i) in active.iter().enumerate() {
            g.column_mut(c).scale_mut(sqrt(measure.weights()[i]));
        }
        let n = active.len();
        let numeric = |what: &str| Error::Numeric(format!("{what} is not positive definite; inputs may be non-finite"));
        if self.use_woodbury(n) {
            let k = DMatrix::identity(n, n) + g.transpose() * &g;
            let chol = Cholesky::new(k).ok_or_else(|| numeric("capacitance matrix"))?;
            let h = self.prior.apply_sqrt(&g)?;
            let y =
                chol.l_dirty().solve_lower_triangular(&h.transpose()).ok_or_else(|| numeric("capacitance factor"))?;
            let utility = -(self.prior.trace() - y.norm_squared());
            Ok(ResolventState { factor: Factorization::Woodbury { g, chol }, m, mass, utility })
        } else {
            self.dense_state(&g * g.transpose() + DMatrix::identity(m, m), mass)
        }
    }

    fn dense_state(&self, op: DMatrix<f64>, mass: f64) -> Result<ResolventState> {
        let numeric = |what: &str| Error::Numeric(format!("{what} is not positive definite; inputs may be non-finite"));
        let m = op.nrows();
        let chol = Cholesky::new(op.clone()).ok_or_else(|| numeric("resolvent operator"))?;
        let y =
            chol.l_dirty().solve_lower_triangular(&self.prior.sqrt_cov()).ok_or_else(|| numeric("resolvent factor"))?;
        let utility = -y.norm_squared();
        Ok(ResolventState { factor: Factorization::Dense { op, chol }, m, mass, utility })
    }

    /// Resolvent for `B μ` with `B` the engine's batch size.
    pub fn resolvent_for_probability(&self, prob: &DesignMeasure) -> Result<ResolventState> {
        self.assemble_resolvent(&prob.scaled(self.batch / prob.total_mass()))
    }

    /// Resolvent for the flattened product, a measure of mass `B`.
    pub fn resolvent_for_ensemble(&self, ens: &EnsembleProduct) -> Result<ResolventState> {
        self.assemble_resolvent(&ens.flatten())
    }

    /// `U(ν) = -Tr[(S_ν + I)^{-1} C_f]` for a measure of any mass.
    pub fn expected_utility(&self, measure: &DesignMeasure) -> Result<f64> {
        Ok(self.assemble_resolvent(measure)?.utility)
    }

    /// `V_B(μ) = U(B μ)`; `prob` is normalized to unit mass first.
    pub fn normalized_utility(&self, prob: &DesignMeasure) -> Result<f64> {
        Ok(self.resolvent_for_probability(prob)?.utility)
    }

    /// `C_f^{1/2} (S_ν + I)^{-1} C_f^{1/2}`.
    pub fn posterior_covariance(&self, measure: &DesignMeasure) -> Result<DMatrix<f64>> {
        let state = self.assemble_resolvent(measure)?;
        let post = match &state.factor {
            Factorization::Woodbury { g, chol } => {
                let h = self.prior.apply_sqrt(g)?;
                self.prior.cov() - &h * chol.solve(&h.transpose())
            }
            _ => {
                let s = self.prior.sqrt_cov();
                let x = state.apply_inverse(&s)?;
                &s * x
            }
        };
        Ok((&post + post.transpose()) * 0.5)
    }

    /// `φ` and `∇φ` at `n` points (row-major in `points`) for the measure
    /// behind `state`, evaluated in blocks.
    pub fn first_variation_field(
        &self,
        state: &ResolventState,
        points: &[f64],
        with_gradient: bool,
    ) -> Result<FirstVariationField> {
        let d = self.dim();
        if !points.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch { expected: d, found: points.len() % d });
        }
        check_dim(self.prior.dim(), state.m)?;
        let n = points.len() / d;
        let mut values = Vec::with_capacity(n);
        let mut gradients = Vec::with_capacity(if with_gradient { n * d } else { 0 });
        for start in (0..n).step_by(BLOCK) {
            let end = (start + BLOCK).min(n);
            let k = end - start;
            let f = self.feature_block(&points[start * d..end * d], with_gradient)?;
            let g = self.prior.apply_sqrt(&f)?;
            let p = self.prior.apply_sqrt(&state.apply_inverse(&g)?)?;
            for j in 0..k {
                values.push(state.mass * p.column(j).norm_squared());
            }
            if with_gradient {
                for j in 0..k {
                    for c in 0..d {
                        gradients.push(2.0 * state.mass * p.column(j).dot(&p.column(k * (1 + c) + j)));
                    }
                }
            }
        }
        Ok(FirstVariationField { dim: d, values, gradients })
    }

    /// `φ(x)` for the measure behind `state`.
    pub fn first_variation(&self, state: &ResolventState, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.first_variation_field(state, x, false)?.values[0])
    }

    /// `∇φ(x)` for the measure behind `state`.
    pub fn first_variation_gradient(&self, state: &ResolventState, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.first_variation_field(state, x, true)?.gradients)
    }

    /// Ascent direction of the tensorized utility for particle `i` of
    /// ensemble `b`: `∇φ` at that particle for the flattened product.
    pub fn tensor_utility_gradient(&self, ens: &EnsembleProduct, b: usize, i: usize) -> Result<Vec<f64>> {
        let x = ens.particle(b, i)?;
        let state = self.resolvent_for_ensemble(ens)?;
        self.first_variation_gradient(&state, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::models::ParameterGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(gamma: f64, c: f64, batch: f64) -> UtilityEngine {
        UtilityEngine::new(ObservationMap::constant(vec![gamma]).unwrap(), PriorModel::scaled_identity(1, c), batch)
            .unwrap()
    }

    fn poisson(m: usize) -> UtilityEngine {
        let grid = ParameterGrid::uniform_1d(m).unwrap();
        let prior = PriorModel::assemble(&KernelSpec::nonstationary(0.01).unwrap(), &grid, 0.0).unwrap();
        UtilityEngine::new(ObservationMap::poisson(grid, 0.1).unwrap(), prior, 2.0).unwrap()
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, mass: f64) -> DesignMeasure {
        let pos: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.1).collect();
        let s: f64 = w.iter().sum();
        DesignMeasure::new(1, pos, w.iter().map(|v| v * mass / s).collect()).unwrap()
    }

    #[test]
    fn scalar_closed_forms() {
        let (gamma, c, b) = (0.7, 2.0, 3.0);
        let e = scalar(gamma, c, b);
        let nu = DesignMeasure::dirac(&[0.4], b).unwrap();
        let g2 = c * gamma * gamma;
        // g = sqrt(c) gamma, so S = B c gamma^2
        assert!((e.expected_utility(&nu).unwrap() + c / (b * g2 + 1.0)).abs() < 1e-14);
        let post = e.posterior_covariance(&nu).unwrap();
        assert!((post[(0, 0)] - c / (1.0 + c * gamma * gamma * b)).abs() < 1e-14);
        let state = e.assemble_resolvent(&nu).unwrap();
        let phi = e.first_variation(&state, &[0.9]).unwrap();
        let expect = b * c * g2 / ((b * g2 + 1.0) * (b * g2 + 1.0));
        assert!((phi - expect).abs() < 1e-14, "{phi} {expect}");
    }

    #[test]
    fn zero_operator() {
        let e = UtilityEngine::new(
            ObservationMap::constant(vec![0.0; 3]).unwrap(),
            PriorModel::diagonal(&[1.0, 2.0, 3.0]).unwrap(),
            1.0,
        )
        .unwrap();
        let nu = DesignMeasure::uniform(1, vec![0.1, 0.5], 1.0).unwrap();
        assert_eq!(e.expected_utility(&nu).unwrap(), -6.0);
        let state = e.assemble_resolvent(&nu).unwrap();
        assert_eq!(e.first_variation(&state, &[0.3]).unwrap(), 0.0);
        assert_eq!(e.first_variation_gradient(&state, &[0.3]).unwrap(), vec![0.0]);
        assert!((e.posterior_covariance(&nu).unwrap() - e.prior().cov()).amax() < 1e-14);
        let empty = DesignMeasure::new(1, vec![0.2], vec![0.0]).unwrap();
        let s = e.assemble_resolvent(&empty).unwrap();
        let x = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        assert_eq!(s.apply_inverse(&x).unwrap(), x);
    }

    #[test]
    fn preconditioned_feature_basics() {
        let e = poisson(50);
        assert!(e.preconditioned_feature(&[0.0]).unwrap().amax() < 1e-15);
        let grid = ParameterGrid::uniform_1d(20).unwrap();
        let map = ObservationMap::poisson(grid, 0.1).unwrap();
        let e2 = UtilityEngine::new(map.clone(), PriorModel::identity(20), 1.0).unwrap();
        assert_eq!(e2.preconditioned_feature(&[0.3]).unwrap(), map.feature(&[0.3]).unwrap());
    }

    #[test]
    fn resolvent_round_trip_and_paths() {
        let e = poisson(100);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nu = random_measure(&mut rng, 120, 2.0);
        let dense = e.clone().with_solver(SolverMode::Dense).assemble_resolvent(&nu).unwrap();
        let wood = e.clone().with_solver(SolverMode::Woodbury).assemble_resolvent(&nu).unwrap();
        assert!(!dense.is_woodbury() && wood.is_woodbury());
        let x = DMatrix::from_fn(100, 20, |_, _| rng.random::<f64>() - 0.5);
        for s in [&dense, &wood] {
            let y = s.apply_operator(&s.apply_inverse(&x).unwrap()).unwrap();
            assert!((&y - &x).norm() / x.norm() < 1e-10);
        }
        let a = dense.apply_inverse(&x).unwrap();
        let b = wood.apply_inverse(&x).unwrap();
        assert!((&a - &b).norm() / a.norm() < 1e-10);
        assert!((dense.utility() - wood.utility()).abs() / dense.utility().abs() < 1e-9);
    }

    #[test]
    fn trace_identity_and_monotone_mass() {
        let e = poisson(60);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let mu = random_measure(&mut rng, 7, 1.0);
            let u = e.expected_utility(&mu.scaled(2.0)).unwrap();
            let post = e.posterior_covariance(&mu.scaled(2.0)).unwrap();
            assert!((post.trace() + u).abs() < 1e-10);
            let mut prev = f64::NEG_INFINITY;
            for b in [1.0, 2.0, 4.0, 8.0] {
                let v = e.expected_utility(&mu.scaled(b)).unwrap();
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn first_variation_is_directional_derivative() {
        let e = poisson(60);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mu = random_measure(&mut rng, 5, 1.0);
            let x = rng.random::<f64>();
            let state = e.resolvent_for_probability(&mu).unwrap();
            let phi_x = e.first_variation(&state, &[x]).unwrap();
            let mean: f64 =
                (0..mu.len()).map(|i| mu.weights()[i] * e.first_variation(&state, mu.point(i)).unwrap()).sum();
            let dirac = DesignMeasure::dirac(&[x], 1.0).unwrap();
            let t = 1e-5;
            let v = |t: f64| e.normalized_utility(&mu.mix(&dirac, t).unwrap()).unwrap();
            let fd = (v(t) - v(-t)) / (2.0 * t);
            let an = phi_x - mean;
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} {an}");
        }
    }

    #[test]
    fn torus_optimum() {
        let e = UtilityEngine::new(ObservationMap::torus(), crate::prior::torus_prior(1.0).unwrap(), 1.0).unwrap();
        let four = DesignMeasure::uniform(1, vec![0.0, 0.25, 0.5, 0.75], 1.0).unwrap();
        assert!((e.normalized_utility(&four).unwrap() + 4.0 / 3.0).abs() < 1e-12);
        for k in 0..20 {
            let d = DesignMeasure::dirac(&[k as f64 / 20.0], 1.0).unwrap();
            assert!((e.normalized_utility(&d).unwrap() + 1.5).abs() < 1e-12);
        }
        let state = e.resolvent_for_probability(&four).unwrap();
        for k in 0..10 {
            let g = e.first_variation_gradient(&state, &[k as f64 * 0.0937]).unwrap();
            assert!(g[0].abs() < 1e-10);
        }
    }

    #[test]
    fn tensor_gradient_reduces_to_measure_gradient() {
        let e = poisson(40);
        let ens = EnsembleProduct::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.6, 0.7, 0.8]).unwrap();
        let swapped = EnsembleProduct::new(1, 2, 3, vec![0.6, 0.7, 0.8, 0.1, 0.2, 0.3]).unwrap();
        let a = e.tensor_utility_gradient(&ens, 0, 1).unwrap();
        let b = e.tensor_utility_gradient(&swapped, 1, 1).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-12 * a[0].abs().max(1.0));
        let state = e.assemble_resolvent(&ens.flatten()).unwrap();
        assert_eq!(a, e.first_variation_gradient(&state, &[0.2]).unwrap());
        assert!(e.tensor_utility_gradient(&ens, 2, 0).is_err());
    }
}
