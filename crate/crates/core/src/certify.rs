//! Diagnostics: first-order optimality certificate, concavity probe,
//! monotonicity audit, the analytic torus optimum and finite-difference
//! validation suites.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::{cluster_points, DesignMeasure, EnsembleProduct};
use crate::error::{Error, Result};
use crate::flow::FlowRecord;
use crate::math::{cos, sin, sqrt, TAU};
use crate::models::{Domain, ObservationMap};
use crate::regularize;
use crate::utility::{FirstVariationField, UtilityEngine};

/// Default merge radius for support detection.
pub const DEFAULT_MERGE_RADIUS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Certified,
    Violated,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Certified => "certified",
            Verdict::Violated => "violated",
        }
    }
}

/// First-order optimality report for a candidate design: with
/// `c = ∫ φ dμ`, an optimum has `φ <= c` everywhere and `φ = c` on its
/// support.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    pub c: f64,
    /// `max (φ - c)` over the audit grid and the support.
    pub max_violation: f64,
    /// `max |φ - c|` over support points.
    pub support_residual: f64,
    /// `max |∇φ|` over support points.
    pub grad_sup_on_support: f64,
    pub tol: f64,
    pub verdict: Verdict,
    /// Cluster centers taken as the support, row-major.
    pub support: Vec<f64>,
    /// Audit grid, row-major, and `φ` on it.
    pub audit_points: Vec<f64>,
    pub field: FirstVariationField,
}

/// Regular audit grid over the domain box: `n` points in 1D, `n x n` in 2D
/// (row-major, first coordinate slowest). Periodic domains omit the right
/// end point.
pub fn audit_grid(domain: &Domain, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let axis = |k: usize| -> Vec<f64> {
        let (a, b) = (domain.lower()[k], domain.upper()[k]);
        if domain.is_periodic() {
            (0..n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
        } else {
            (0..n).map(|i| if i == n - 1 { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
        }
    };
    match domain.dim() {
        1 => axis(0),
        _ => {
            let (xs, ys) = (axis(0), axis(1));
            let mut out = Vec::with_capacity(2 * n * n);
            for x in &xs {
                for y in &ys {
                    out.push(*x);
                    out.push(*y);
                }
            }
            out
        }
    }
}

/// Default audit resolution: 2000 points in 1D, 200 x 200 in 2D.
pub fn default_audit_resolution(dim: usize) -> usize {
    if dim == 1 {
        2000
    } else {
        200
    }
}

/// Checks the first-order optimality conditions for the design measure
/// `design` (of mass `B`) on `audit_points`.
pub fn optimality_certificate(
    engine: &UtilityEngine,
    design: &DesignMeasure,
    audit_points: &[f64],
    tol: f64,
    merge_radius: f64,
) -> Result<OptimalityReport> {
    if !(tol >= 0.0) {
        return Err(Error::invalid("tol", "must be nonnegative"));
    }
    let d = engine.dim();
    let state = engine.assemble_resolvent(design)?;
    let mass = design.total_mass();
    let on_atoms = engine.first_variation_field(&state, design.positions(), false)?;
    let c: f64 = on_atoms.values.iter().zip(design.weights()).map(|(p, w)| p * w / mass).sum();

    let active: Vec<f64> =
        (0..design.len()).filter(|&i| design.weights()[i] > 0.0).flat_map(|i| design.point(i).to_vec()).collect();
    let support: Vec<f64> = cluster_points(&active, d, merge_radius)?.into_iter().flat_map(|c| c.center).collect();
    let on_support = engine.first_variation_field(&state, &support, true)?;
    let support_residual = on_support.values.iter().map(|p| (p - c).abs()).fold(0.0, f64::max);
    let grad_sup_on_support = (0..on_support.values.len())
        .map(|j| on_support.gradient(j).iter().map(|g| g * g).sum::<f64>())
        .map(sqrt)
        .fold(0.0, f64::max);

    let field = engine.first_variation_field(&state, audit_points, false)?;
    let max_violation = field.values.iter().chain(&on_support.values).map(|p| p - c).fold(f64::NEG_INFINITY, f64::max);
    let verdict = if max_violation <= tol && support_residual <= tol { Verdict::Certified } else { Verdict::Violated };
    Ok(OptimalityReport {
        c,
        max_violation,
        support_residual,
        grad_sup_on_support,
        tol,
        verdict,
        support,
        audit_points: audit_points.to_vec(),
        field,
    })
}

fn random_probability(rng: &mut ChaCha8Rng, domain: &Domain, atoms: usize) -> Result<DesignMeasure> {
    let d = domain.dim();
    let pos: Vec<f64> = (0..atoms * d)
        .map(|k| {
            let j = k % d;
            domain.lower()[j] + (domain.upper()[j] - domain.lower()[j]) * rng.random::<f64>()
        })
        .collect();
    let w: Vec<f64> = (0..atoms).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    DesignMeasure::new(d, pos, w.into_iter().map(|v| v / s).collect())
}

/// Worst value of `V_B((1-t) μ0 + t μ1) - [(1-t) V_B(μ0) + t V_B(μ1)]` over
/// random probability measures with `atoms` atoms each. Concavity makes it
/// nonnegative.
pub fn concavity_probe(
    engine: &UtilityEngine,
    num_pairs: usize,
    t_grid: &[f64],
    atoms: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = engine.map().domain();
    let mut worst = f64::INFINITY;
    for _ in 0..num_pairs {
        let m0 = random_probability(&mut rng, &domain, atoms)?;
        let m1 = random_probability(&mut rng, &domain, atoms)?;
        let v0 = engine.normalized_utility(&m0)?;
        let v1 = engine.normalized_utility(&m1)?;
        for &t in t_grid {
            let vt = engine.normalized_utility(&m0.mix(&m1, t)?)?;
            worst = worst.min(vt - ((1.0 - t) * v0 + t * v1));
        }
    }
    Ok(if worst.is_finite() { worst } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityAudit {
    /// Most negative single-step change of the utility (zero if none).
    pub worst_decrease: f64,
    /// Steps whose change is below `-tol`.
    pub violations: usize,
}

pub fn monotonicity_audit(record: &FlowRecord, tol: f64) -> MonotonicityAudit {
    let mut a = MonotonicityAudit { worst_decrease: 0.0, violations: 0 };
    for w in record.utility.windows(2) {
        let diff = w[1] - w[0];
        a.worst_decrease = a.worst_decrease.min(diff);
        if diff < -tol {
            a.violations += 1;
        }
    }
    a
}

/// Optimal utility `-2 (σ^{-2} + 1/2)^{-1}` of the torus example with prior
/// `σ^2 I_2` and unit mass.
pub fn torus_optimal_value(sigma: f64) -> f64 {
    -2.0 / (1.0 / (sigma * sigma) + 0.5)
}

/// `(∫ cos 4πx dμ, ∫ sin 4πx dμ)` for `μ` normalized to unit mass. Both
/// vanish exactly at the torus optima.
pub fn torus_moment_residuals(measure: &DesignMeasure) -> (f64, f64) {
    let mass = measure.total_mass();
    let mut c = 0.0;
    let mut s = 0.0;
    for i in 0..measure.len() {
        let x = measure.point(i)[0];
        let w = measure.weights()[i] / mass;
        c += w * cos(2.0 * TAU * x);
        s += w * sin(2.0 * TAU * x);
    }
    (c, s)
}

/// Outcome of one finite-difference suite.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub name: String,
    pub worst_rel_error: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.worst_rel_error <= self.tolerance
    }
}

/// Relative errors of analytic vectors against finite differences. Each
/// error is measured in the max norm and divided by the analytic norm,
/// floored at `1e-3` of the largest analytic norm in the suite so that
/// near-stationary samples do not dominate.
fn worst_relative(pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let scale = pairs.iter().map(|(a, _)| inf(a)).fold(0.0, f64::max);
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    pairs
        .iter()
        .map(|(an, fd)| {
            let diff: Vec<f64> = an.iter().zip(fd).map(|(a, b)| a - b).collect();
            inf(&diff) / inf(an).max(floor)
        })
        .fold(0.0, f64::max)
}

fn interior_points(rng: &mut ChaCha8Rng, domain: &Domain, n: usize, margin: f64) -> Vec<f64> {
    let d = domain.dim();
    (0..n * d)
        .map(|k| {
            let j = k % d;
            let (a, b) = (domain.lower()[j] + margin, domain.upper()[j] - margin);
            a + (b - a) * rng.random::<f64>()
        })
        .collect()
}

/// Finite-difference step of the gradient suites. The Schrödinger feature
/// is only C1 across grid cells, so the step must stay well below the cell
/// size for central differences to resolve the derivative.
pub const FD_STEP: f64 = 1e-6;

/// Feature Jacobian against central differences of the feature.
pub fn gradcheck_feature(map: &ObservationMap, points: &[f64], h: f64) -> Result<f64> {
    let d = map.dim();
    let mut pairs = Vec::new();
    for x in points.chunks(d) {
        let jac = map.feature_jacobian(x)?;
        for k in 0..d {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[k] += h;
            xm[k] -= h;
            let fd = (map.feature(&xp)? - map.feature(&xm)?) / (2.0 * h);
            pairs.push((jac.column(k).iter().copied().collect(), fd.iter().copied().collect()));
        }
    }
    Ok(worst_relative(&pairs))
}

/// `∇φ` against central differences of `φ` for random probability
/// measures with `atoms` atoms, one evaluation point per measure.
pub fn gradcheck_first_variation(
    engine: &UtilityEngine,
    samples: usize,
    atoms: usize,
    h: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = engine.map().domain();
    let d = engine.dim();
    let mut pairs = Vec::new();
    for _ in 0..samples {
        let mu = random_probability(&mut rng, &domain, atoms)?;
        let x = interior_points(&mut rng, &domain, 1, 0.01);
        let state = engine.resolvent_for_probability(&mu)?;
        let an = engine.first_variation_gradient(&state, &x)?;
        let mut stencil = Vec::with_capacity(2 * d * d);
        for k in 0..d {
            for s in [h, -h] {
                let mut y = x.clone();
                y[k] += s;
                stencil.extend_from_slice(&y);
            }
        }
        let v = engine.first_variation_field(&state, &stencil, false)?.values;
        let fd: Vec<f64> = (0..d).map(|k| (v[2 * k] - v[2 * k + 1]) / (2.0 * h)).collect();
        pairs.push((an, fd));
    }
    Ok(worst_relative(&pairs))
}

/// `d/dt V_B(μ + t(δ_x - μ))` at `t = 0` against `φ(x) - ∫ φ dμ`. The
/// derivative is taken by a second-order one-sided difference so that all
/// weights stay nonnegative.
pub fn gradcheck_directional(engine: &UtilityEngine, samples: usize, atoms: usize, t: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = engine.map().domain();
    let mut pairs = Vec::new();
    for _ in 0..samples {
        let mu = random_probability(&mut rng, &domain, atoms)?;
        let x = interior_points(&mut rng, &domain, 1, 0.01);
        let state = engine.resolvent_for_probability(&mu)?;
        let phi_atoms = engine.first_variation_field(&state, mu.positions(), false)?.values;
        let mean: f64 = phi_atoms.iter().zip(mu.weights()).map(|(p, w)| p * w).sum();
        let an = engine.first_variation(&state, &x)? - mean;
        let dirac = DesignMeasure::dirac(&x, 1.0)?;
        let v0 = state.utility();
        let v1 = engine.normalized_utility(&mu.mix(&dirac, t)?)?;
        let v2 = engine.normalized_utility(&mu.mix(&dirac, 2.0 * t)?)?;
        pairs.push((vec![an], vec![(4.0 * v1 - 3.0 * v0 - v2) / (2.0 * t)]));
    }
    Ok(worst_relative(&pairs))
}

/// Tensor ascent direction against `N B` times central differences of the
/// utility in one particle coordinate.
pub fn gradcheck_tensor(
    engine: &UtilityEngine,
    batch: usize,
    per: usize,
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = engine.map().domain();
    let d = engine.dim();
    let mut pairs = Vec::new();
    for _ in 0..samples {
        let data = interior_points(&mut rng, &domain, batch * per, 0.01);
        let ens = EnsembleProduct::new(d, batch, per, data.clone())?;
        let (b, i) = (rng.random_range(0..batch), rng.random_range(0..per));
        let an = engine.tensor_utility_gradient(&ens, b, i)?;
        let mut fd = vec![0.0; d];
        for (k, f) in fd.iter_mut().enumerate() {
            let idx = (b * per + i) * d + k;
            let mut up = data.clone();
            let mut dn = data.clone();
            up[idx] += h;
            dn[idx] -= h;
            let u = engine.expected_utility(&EnsembleProduct::new(d, batch, per, up)?.flatten())?;
            let l = engine.expected_utility(&EnsembleProduct::new(d, batch, per, dn)?.flatten())?;
            *f = (per * batch) as f64 * (u - l) / (2.0 * h);
        }
        pairs.push((an, fd));
    }
    Ok(worst_relative(&pairs))
}

/// Repulsion gradient against `N` times central differences of `R_r`.
pub fn gradcheck_repulsion(dim: usize, sigma_q: f64, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = crate::kernels::KernelSpec::gaussian_interaction(sigma_q)?;
    let (nb, per, h) = (3, 4, 1e-6);
    let mut pairs = Vec::new();
    for _ in 0..samples {
        let data: Vec<f64> = (0..nb * per * dim).map(|_| rng.random()).collect();
        let ens = EnsembleProduct::new(dim, nb, per, data.clone())?;
        let (b, i) = (rng.random_range(0..nb), rng.random_range(0..per));
        let an = regularize::repulsion_gradient(&ens, &kernel, b, i)?;
        let mut fd = vec![0.0; dim];
        for (k, f) in fd.iter_mut().enumerate() {
            let idx = (b * per + i) * dim + k;
            let mut up = data.clone();
            let mut dn = data.clone();
            up[idx] += h;
            dn[idx] -= h;
            let u = regularize::repulsion_value(&EnsembleProduct::new(dim, nb, per, up)?, &kernel);
            let l = regularize::repulsion_value(&EnsembleProduct::new(dim, nb, per, dn)?, &kernel);
            *f = per as f64 * (u - l) / (2.0 * h);
        }
        pairs.push((an, fd));
    }
    Ok(worst_relative(&pairs))
}

/// Runs every suite for `engine` with the tolerances used by the test
/// suite: `1e-4` for the Schrödinger model and `1e-5` otherwise.
pub fn run_gradcheck_suites(engine: &UtilityEngine, seed: u64) -> Result<Vec<GradcheckReport>> {
    let map = engine.map();
    let h = FD_STEP;
    let tol = if matches!(map, ObservationMap::Schrodinger(_)) { 1e-4 } else { 1e-5 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = interior_points(&mut rng, &map.domain(), 50, 0.01);
    let report = |name: &str, worst: f64, tolerance: f64, samples: usize| GradcheckReport {
        name: String::from(name),
        worst_rel_error: worst,
        tolerance,
        samples,
    };
    Ok(vec![
        report("feature_jacobian", gradcheck_feature(map, &pts, h)?, tol, 50),
        report("first_variation_gradient", gradcheck_first_variation(engine, 50, 5, h, seed)?, tol, 50),
        report("directional_derivative", gradcheck_directional(engine, 30, 5, 1e-5, seed)?, 1e-5, 30),
        report("tensor_utility_gradient", gradcheck_tensor(engine, 2, 3, 10, h, seed)?, tol, 10),
        report("repulsion_gradient", gradcheck_repulsion(engine.dim(), 0.1, 20, seed)?, 1e-6, 20),
    ])
}

/// Formats a report line, e.g. for CLI output.
pub fn describe(report: &GradcheckReport) -> String {
    format!(
        "{:<26} worst rel. error {:.3e} (tol {:.0e}, {} samples) {}",
        report.name,
        report.worst_rel_error,
        report.tolerance,
        report.samples,
        if report.passed() { "ok" } else { "FAILED" }
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{torus_prior, PriorModel};

    fn torus(sigma: f64) -> UtilityEngine {
        UtilityEngine::new(ObservationMap::torus(), torus_prior(sigma).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn torus_certificate() {
        let e = torus(1.0);
        let four = DesignMeasure::uniform(1, vec![0.0, 0.25, 0.5, 0.75], 1.0).unwrap();
        let grid = audit_grid(&e.map().domain(), 2000);
        let r = optimality_certificate(&e, &four, &grid, 1e-8, DEFAULT_MERGE_RADIUS).unwrap();
        assert_eq!(r.verdict, Verdict::Certified);
        assert!(r.max_violation.abs() < 1e-12);
        assert!(r.grad_sup_on_support < 1e-10);
        let bad = DesignMeasure::uniform(1, vec![0.05, 0.25, 0.5, 0.75], 1.0).unwrap();
        let r = optimality_certificate(&e, &bad, &grid, 1e-3, DEFAULT_MERGE_RADIUS).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
    }

    #[test]
    fn torus_moments() {
        assert_eq!(torus_optimal_value(1.0), -4.0 / 3.0);
        let d = DesignMeasure::dirac(&[0.0], 1.0).unwrap();
        assert_eq!(torus_moment_residuals(&d), (1.0, 0.0));
        let four = DesignMeasure::uniform(1, vec![0.0, 0.25, 0.5, 0.75], 1.0).unwrap();
        let (c, s) = torus_moment_residuals(&four);
        assert!(c.abs() < 1e-15 && s.abs() < 1e-15);
    }

    #[test]
    fn concavity_scalar_and_identical() {
        let e = UtilityEngine::new(ObservationMap::affine(vec![0.2], vec![1.5]).unwrap(), PriorModel::identity(1), 2.0)
            .unwrap();
        assert!(concavity_probe(&e, 20, &[0.1, 0.5, 0.9], 3, 1).unwrap() >= -1e-12);
        let m = DesignMeasure::uniform(1, vec![0.3, 0.6], 1.0).unwrap();
        let v = e.normalized_utility(&m).unwrap();
        let vt = e.normalized_utility(&m.mix(&m, 0.4).unwrap()).unwrap();
        assert!((vt - v).abs() < 1e-15);
    }

    #[test]
    fn torus_suites_pass() {
        for r in run_gradcheck_suites(&torus(1.0), 7).unwrap() {
            assert!(r.worst_rel_error <= 1e-6, "{}", describe(&r));
        }
    }

    #[test]
    fn audit_grid_shapes() {
        assert_eq!(audit_grid(&Domain::unit(1), 5), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(audit_grid(&Domain::torus(), 4), vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(audit_grid(&Domain::unit(2), 3).len(), 18);
    }
}
