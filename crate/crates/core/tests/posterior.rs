use nalgebra::{DMatrix, DVector};
use oedflow_core::design::DesignMeasure;
use oedflow_core::kernels::KernelSpec;
use oedflow_core::models::{ObservationMap, ParameterGrid};
use oedflow_core::prior::PriorModel;
use oedflow_core::utility::{SolverMode, UtilityEngine};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn poisson_engine(m: usize, batch: f64, mode: SolverMode) -> UtilityEngine {
    let grid = ParameterGrid::uniform_1d(m).unwrap();
    let prior = PriorModel::assemble(&KernelSpec::nonstationary(0.05).unwrap(), &grid, 0.0).unwrap();
    let map = ObservationMap::poisson(grid, 0.1).unwrap();
    UtilityEngine::new(map, prior, batch).unwrap().with_solver(mode)
}

/// Gaussian update for `B` observations `y_j = h_j^T f + sqrt(B) e_j` in
/// gain form, which never factors or inverts the prior.
fn kalman_posterior(prior: &DMatrix<f64>, rows: &[DVector<f64>], noise_var: f64) -> DMatrix<f64> {
    let m = prior.nrows();
    let mut h = DMatrix::zeros(rows.len(), m);
    for (j, r) in rows.iter().enumerate() {
        h.row_mut(j).copy_from(&r.transpose());
    }
    let ch = prior * h.transpose();
    let innov = &h * &ch + DMatrix::identity(rows.len(), rows.len()) * noise_var;
    let gain = innov.lu().solve(&ch.transpose()).unwrap();
    prior - &ch * gain
}

#[test]
fn empirical_design_matches_inflated_noise_update() {
    for (batch, mode) in [(1usize, SolverMode::Dense), (2, SolverMode::Woodbury), (5, SolverMode::Auto)] {
        let e = poisson_engine(20, batch as f64, mode);
        let pts: Vec<f64> = (0..batch).map(|j| (j as f64 + 0.37) / (batch as f64 + 0.5)).collect();
        let design = DesignMeasure::uniform(1, pts.clone(), 1.0).unwrap();
        let ours = e.posterior_covariance(&design).unwrap();
        let rows: Vec<_> = pts.iter().map(|x| e.map().feature(&[*x]).unwrap()).collect();
        let oracle = kalman_posterior(&e.prior().cov(), &rows, batch as f64);
        let rel = (&ours - &oracle).norm() / oracle.norm();
        assert!(rel <= 1e-10, "B={batch} rel={rel:e}");
        let trace = -ours.trace();
        assert!((trace - e.expected_utility(&design).unwrap()).abs() <= 1e-10 * trace.abs());
    }
}

#[test]
fn woodbury_and_dense_agree_on_random_designs() {
    let dense = poisson_engine(100, 3.0, SolverMode::Dense);
    let wood = poisson_engine(100, 3.0, SolverMode::Woodbury);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.random_range(1..=12);
        let pos: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let m = DesignMeasure::new(1, pos, w).unwrap();
        let (a, b) = (dense.expected_utility(&m).unwrap(), wood.expected_utility(&m).unwrap());
        assert!((a - b).abs() <= 1e-9 * a.abs(), "{a} {b}");
        let (sa, sb) = (dense.assemble_resolvent(&m).unwrap(), wood.assemble_resolvent(&m).unwrap());
        assert!(sb.is_woodbury() && !sa.is_woodbury());
        let pts: Vec<f64> = (0..7).map(|k| k as f64 / 6.0).collect();
        let fa = dense.first_variation_field(&sa, &pts, true).unwrap();
        let fb = wood.first_variation_field(&sb, &pts, true).unwrap();
        for (x, y) in fa.values.iter().zip(&fb.values).chain(fa.gradients.iter().zip(&fb.gradients)) {
            assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()), "{x} {y}");
        }
    }
}

#[test]
fn resolvent_inverse_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for mode in [SolverMode::Dense, SolverMode::Woodbury] {
        let e = poisson_engine(60, 2.0, mode);
        let m = DesignMeasure::uniform(1, vec![0.2, 0.45, 0.8], 2.0).unwrap();
        let state = e.assemble_resolvent(&m).unwrap();
        for _ in 0..20 {
            let v = DMatrix::from_fn(60, 1, |_, _| rng.random::<f64>() - 0.5);
            let back = state.apply_operator(&state.apply_inverse(&v).unwrap()).unwrap();
            assert!((&back - &v).norm() <= 1e-10 * v.norm());
        }
    }
}

#[test]
fn utility_is_concave_along_segments() {
    let e = poisson_engine(100, 2.0, SolverMode::Auto);
    let worst = oedflow_core::certify::concavity_probe(&e, 100, &[0.1, 0.25, 0.5, 0.75, 0.9], 4, 3).unwrap();
    assert!(worst >= -1e-10, "{worst:e}");
}

#[test]
fn more_mass_lowers_posterior_trace() {
    let e = poisson_engine(50, 1.0, SolverMode::Auto);
    let pts = vec![0.1, 0.5, 0.7];
    let mut last = e.expected_utility(&DesignMeasure::uniform(1, pts.clone(), 1e-9).unwrap()).unwrap();
    assert!((last + e.prior().trace()).abs() < 1e-6 * e.prior().trace());
    for mass in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let u = e.expected_utility(&DesignMeasure::uniform(1, pts.clone(), mass).unwrap()).unwrap();
        assert!(u > last);
        assert!(u < 0.0);
        last = u;
    }
}
