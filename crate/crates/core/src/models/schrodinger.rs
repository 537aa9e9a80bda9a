//! Time-harmonic Schrödinger problem `-Δu + V u - ω² u = f` on the unit
//! square with homogeneous Dirichlet conditions, discretized by the 5-point
//! stencil on an interior grid and observed through C1 cubic interpolation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::BandedCholesky;
use crate::math::{erf, sqrt};

use super::{GridAxis, ParameterGrid};

/// Support of the potential before mollification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PotentialShape {
    /// Union of a horizontal and a vertical band through the center.
    #[default]
    Cross,
    /// Square centered in the domain.
    Square,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchrodingerParams {
    /// Interior nodes per axis.
    pub grid_points: usize,
    pub omega: f64,
    pub magnitude: f64,
    pub halfwidth: f64,
    /// Standard deviation of the Gaussian mollifier.
    pub mollifier_eps: f64,
    pub shape: PotentialShape,
    pub noise_std: f64,
}

impl Default for SchrodingerParams {
    fn default() -> Self {
        SchrodingerParams {
            grid_points: 60,
            omega: 1.0,
            magnitude: 200.0,
            halfwidth: 0.08,
            mollifier_eps: 0.02,
            shape: PotentialShape::Cross,
            noise_std: 0.1,
        }
    }
}

/// Mollified indicator of `|t - 1/2| <= a` in one variable.
fn band(t: f64, a: f64, eps: f64) -> f64 {
    if eps == 0.0 {
        return if (t - 0.5).abs() <= a { 1.0 } else { 0.0 };
    }
    let s = core::f64::consts::SQRT_2 * eps;
    0.5 * (erf((t - 0.5 + a) / s) - erf((t - 0.5 - a) / s))
}

impl SchrodingerParams {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 3 {
            return Err(Error::invalid(
                "grid_points",
                format!("need at least 3 nodes per axis, got {}", self.grid_points),
            ));
        }
        let bound = 2.0 * core::f64::consts::PI * core::f64::consts::PI;
        if !self.omega.is_finite() || self.omega * self.omega >= bound {
            return Err(Error::invalid(
                "omega",
                format!("well-posedness bound violated: omega^2 = {} must be below 2 pi^2", self.omega * self.omega),
            ));
        }
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() {
            return Err(Error::invalid("noise_std", format!("must be positive, got {}", self.noise_std)));
        }
        if !(self.magnitude >= 0.0) || !self.magnitude.is_finite() {
            return Err(Error::invalid("potential.magnitude", "must be finite and >= 0"));
        }
        if !(self.halfwidth >= 0.0) || !self.halfwidth.is_finite() {
            return Err(Error::invalid("potential.halfwidth", "must be finite and >= 0"));
        }
        if !(self.mollifier_eps >= 0.0) || !self.mollifier_eps.is_finite() {
            return Err(Error::invalid("potential.mollifier_eps", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// The potential `V(x, y)`.
    pub fn potential(&self, x: f64, y: f64) -> f64 {
        let bx = band(x, self.halfwidth, self.mollifier_eps);
        let by = band(y, self.halfwidth, self.mollifier_eps);
        let ind = match self.shape {
            PotentialShape::Cross => bx + by - bx * by,
            PotentialShape::Square => bx * by,
        };
        self.magnitude * ind
    }
}

/// Schrödinger observation map. The operator is factored once at
/// construction.
#[derive(Debug, Clone)]
pub struct SchrodingerMap {
    params: SchrodingerParams,
    grid: ParameterGrid,
    potential: Vec<f64>,
    chol: BandedCholesky,
    scale: Vec<f64>,
}

/// Cubic Hermite interpolation on the nodes `k h`, `k = 0..=n+1`, whose end
/// values are zero. Returns `(interior index, weight, d weight / dx)` for the
/// interior nodes that contribute at `x`.
fn hermite_weights(x: f64, n: usize, h: f64) -> Vec<(usize, f64, f64)> {
    let last = n + 1;
    let s = x / h;
    let i = (libm::floor(s) as usize).min(n);
    let t = s - i as f64;
    let (t2, t3) = (t * t, t * t * t);
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let d00 = 6.0 * t2 - 6.0 * t;
    let d10 = 3.0 * t2 - 4.0 * t + 1.0;
    let d01 = -6.0 * t2 + 6.0 * t;
    let d11 = 3.0 * t2 - 2.0 * t;

    // slope at node k, times h, as (node, coefficient) pairs
    let slope = |k: usize| -> [(usize, f64); 3] {
        if k == 0 {
            [(0, -1.5), (1, 2.0), (2, -0.5)]
        } else if k == last {
            [(last, 1.5), (last - 1, -2.0), (last - 2, 0.5)]
        } else {
            [(k + 1, 0.5), (k - 1, -0.5), (k, 0.0)]
        }
    };

    let mut acc: [(usize, f64, f64); 8] = [(usize::MAX, 0.0, 0.0); 8];
    let mut used = 0;
    let mut add = |k: usize, w: f64, d: f64| {
        if let Some(e) = acc[..used].iter_mut().find(|e| e.0 == k) {
            e.1 += w;
            e.2 += d;
        } else {
            acc[used] = (k, w, d);
            used += 1;
        }
    };
    add(i, h00, d00 / h);
    add(i + 1, h01, d01 / h);
    for (k, c) in slope(i) {
        add(k, h10 * c, d10 * c / h);
    }
    for (k, c) in slope(i + 1) {
        add(k, h11 * c, d11 * c / h);
    }
    acc[..used].iter().filter(|e| e.0 != 0 && e.0 != last).map(|&(k, w, d)| (k - 1, w, d)).collect()
}

impl SchrodingerMap {
    pub fn new(params: SchrodingerParams) -> Result<Self> {
        params.validate()?;
        let n = params.grid_points;
        let axis = GridAxis::interior(n)?;
        let h = 1.0 / (n + 1) as f64;
        let grid = ParameterGrid::from_axes(vec![axis.clone(), axis])?;
        let potential: Vec<f64> = (0..grid.len())
            .map(|m| {
                let p = grid.point(m);
                params.potential(p[0], p[1])
            })
            .collect();
        let inv_h2 = 1.0 / (h * h);
        let shift = params.omega * params.omega;
        let chol = BandedCholesky::factor(n * n, n, |p, q| {
            if p == q {
                4.0 * inv_h2 + potential[p] - shift
            } else if (p - q == 1 && p % n != 0) || p - q == n {
                -inv_h2
            } else {
                0.0
            }
        })
        .map_err(|e| Error::Model(format!("Schrödinger operator is not positive definite: {e}")))?;
        let scale = grid.weights().iter().map(|w| 1.0 / (params.noise_std * sqrt(*w))).collect();
        Ok(SchrodingerMap { params, grid, potential, chol, scale })
    }

    pub fn params(&self) -> &SchrodingerParams {
        &self.params
    }

    pub fn grid(&self) -> &ParameterGrid {
        &self.grid
    }

    /// Potential sampled at the grid nodes.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// Entry `(p, q)` of the assembled operator.
    pub fn operator_entry(&self, p: usize, q: usize) -> f64 {
        let n = self.params.grid_points;
        let h = 1.0 / (n + 1) as f64;
        let (i, j) = (p / n, p % n);
        let (k, l) = (q / n, q % n);
        if p == q {
            4.0 / (h * h) + self.potential[p] - self.params.omega * self.params.omega
        } else if (i == k && j.abs_diff(l) == 1) || (j == l && i.abs_diff(k) == 1) {
            -1.0 / (h * h)
        } else {
            0.0
        }
    }

    /// Solves the discrete problem for a source sampled at the grid nodes.
    pub fn solve(&self, source: &[f64]) -> Result<Vec<f64>> {
        self.chol.solve(source)
    }

    pub(super) fn eval_into(&self, x: &[f64], value: &mut [f64], jac: Option<&mut [f64]>) -> Result<()> {
        let n = self.params.grid_points;
        let h = 1.0 / (n + 1) as f64;
        let wx = hermite_weights(x[0], n, h);
        let wy = hermite_weights(x[1], n, h);
        value.fill(0.0);
        for &(i, a, _) in &wx {
            for &(j, b, _) in &wy {
                value[i * n + j] += a * b;
            }
        }
        self.chol.solve_in_place(value)?;
        for (v, s) in value.iter_mut().zip(&self.scale) {
            *v *= s;
        }
        if let Some(jac) = jac {
            let m = n * n;
            let (jx, jy) = jac.split_at_mut(m);
            jx.fill(0.0);
            jy.fill(0.0);
            for &(i, a, da) in &wx {
                for &(j, b, db) in &wy {
                    jx[i * n + j] += da * b;
                    jy[i * n + j] += a * db;
                }
            }
            for col in [jx, jy] {
                self.chol.solve_in_place(col)?;
                for (v, s) in col.iter_mut().zip(&self.scale) {
                    *v *= s;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::ObservationMap;
    use super::*;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(n: usize) -> SchrodingerParams {
        SchrodingerParams { grid_points: n, ..SchrodingerParams::default() }
    }

    #[test]
    fn hermite_cardinality_and_derivative() {
        let n = 10;
        let h = 1.0 / 11.0;
        // cardinal at the nodes
        for k in 1..=n {
            let w = hermite_weights(k as f64 * h, n, h);
            for (i, v, _) in w {
                let expect = if i + 1 == k { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12);
            }
        }
        // derivative weights match differences of the value weights
        let e = 1e-7;
        for x in [0.03, 0.2, 0.51, 0.97] {
            let dense = |x: f64| {
                let mut v = vec![(0.0, 0.0); n];
                for (i, a, d) in hermite_weights(x, n, h) {
                    v[i] = (a, d);
                }
                v
            };
            let (p, m, c) = (dense(x + e), dense(x - e), dense(x));
            for i in 0..n {
                let fd = (p[i].0 - m[i].0) / (2.0 * e);
                assert!((fd - c[i].1).abs() < 1e-6, "{x} {i}");
            }
        }
    }

    #[test]
    fn well_posedness_bound() {
        let p = SchrodingerParams { omega: 4.5, ..small(8) };
        let e = SchrodingerMap::new(p).unwrap_err();
        assert!(e.is_config_error());
        let p = SchrodingerParams { omega: 1.0, magnitude: -1.0, ..small(8) };
        assert!(SchrodingerMap::new(p).is_err());
    }

    #[test]
    fn operator_symmetric_and_positive() {
        let map = SchrodingerMap::new(small(12)).unwrap();
        let m = 144;
        for p in 0..m {
            for q in 0..m {
                assert_eq!(map.operator_entry(p, q), map.operator_entry(q, p));
            }
        }
        // with V >= 0 the spectrum lies above the discrete Dirichlet ground state
        let n = 60;
        let h = 1.0 / 61.0;
        let lam = 8.0 * (PI * h / 2.0).sin().powi(2) / (h * h) - 1.0;
        assert!(lam > 0.0);
        let preset = SchrodingerMap::new(SchrodingerParams::default()).unwrap();
        assert!(preset.potential().iter().all(|v| *v >= 0.0));
        assert_eq!(preset.grid().len(), n * n);
    }

    #[test]
    fn node_evaluation_is_cardinal() {
        let map = ObservationMap::schrodinger(small(15)).unwrap();
        let h = 1.0 / 16.0;
        let (i, j) = (4usize, 9usize);
        let f = map.feature(&[(i + 1) as f64 * h, (j + 1) as f64 * h]).unwrap();
        let mut e = vec![0.0; 225];
        e[i * 15 + j] = 1.0;
        let ObservationMap::Schrodinger(s) = &map else { unreachable!() };
        let row = s.solve(&e).unwrap();
        let w = s.grid().weights();
        for m in 0..225 {
            let expect = row[m] / (0.1 * w[m].sqrt());
            assert!((f[m] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn swap_symmetry() {
        let map = ObservationMap::schrodinger(small(20)).unwrap();
        let n = 20;
        let a = map.feature(&[0.31, 0.67]).unwrap();
        let b = map.feature(&[0.67, 0.31]).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((a[i * n + j] - b[j * n + i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn torsion_convergence() {
        // -Δu = 1 on the unit square; series solution at the center
        let mut exact = 0.0;
        for k in (1..400).step_by(2) {
            for l in (1..400).step_by(2) {
                let (kf, lf) = (k as f64, l as f64);
                let s = ((kf * PI / 2.0).sin()) * ((lf * PI / 2.0).sin());
                exact += 16.0 * s / (PI.powi(4) * kf * lf * (kf * kf + lf * lf));
            }
        }
        let err = |n: usize| {
            let p = SchrodingerParams { grid_points: n, omega: 0.0, magnitude: 0.0, ..SchrodingerParams::default() };
            let map = ObservationMap::schrodinger(p).unwrap();
            let f = map.feature(&[0.5, 0.5]).unwrap();
            let w = map.grid().unwrap().weights();
            let u: f64 = f.iter().zip(w).map(|(v, w)| 0.1 * v * w.sqrt()).sum();
            (u - exact).abs()
        };
        let (e1, e2) = (err(15), err(31));
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "{e1} {e2} {ratio}");
    }

    #[test]
    fn jacobian_matches_differences() {
        let map = ObservationMap::schrodinger(small(20)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-6;
        for _ in 0..10 {
            let x = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
            let j = map.feature_jacobian(&x).unwrap();
            for d in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[d] += h;
                xm[d] -= h;
                let fd = (map.feature(&xp).unwrap() - map.feature(&xm).unwrap()) / (2.0 * h);
                let err = (&fd - j.column(d)).amax() / j.column(d).amax();
                assert!(err < 1e-5, "{x:?} {d} {err}");
            }
        }
    }
}
