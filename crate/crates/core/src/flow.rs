//! Interacting-particle gradient flows.
//!
//! Both drivers use forward Euler with a fixed step. Every iteration
//! factors the resolvent of the previous iterate once, evaluates all
//! particle directions against that frozen state, then moves every
//! particle and projects it back onto the domain.
//!
//! * [`run_algorithm1`]: `N` particles form one empirical measure `μ`; the
//!   design is `B μ`.
//! * [`run_algorithm2`]: `B` ensembles of `N / B` particles; particle
//!   `(b, i)` follows `∇φ - α ∇δR_v - β ∇δR_r`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::{DesignMeasure, EnsembleProduct};
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::models::Domain;
use crate::par;
use crate::regularize::{self, RegularizerConfig};
use crate::utility::UtilityEngine;

/// Initial particle placement.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    /// Independent uniform draws over the domain.
    #[default]
    Uniform,
    /// Ensemble `b` is uniform on the `b`-th of `B` equal slabs of the first
    /// coordinate; other coordinates are uniform over the domain.
    UniformPartitioned,
    /// Explicit positions, row-major `[b][i][d]`.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Total number of particles over all ensembles.
    pub num_particles: usize,
    pub num_iterations: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub reg: RegularizerConfig,
    pub init: Init,
    pub seed: u64,
    /// Keep every `k`-th snapshot; `None` picks 1 for up to 1000 iterations
    /// and `ceil(T / 1000)` beyond.
    pub snapshot_every: Option<usize>,
    /// When false the utility term is dropped from the particle update.
    pub utility_enabled: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            num_particles: 100,
            num_iterations: 100,
            step_size: 1e-3,
            batch_size: 1,
            reg: RegularizerConfig::default(),
            init: Init::Uniform,
            seed: 0,
            snapshot_every: None,
            utility_enabled: true,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_particles == 0 {
            return Err(Error::invalid("num_particles", "must be at least 1"));
        }
        if self.num_iterations == 0 {
            return Err(Error::invalid("num_iterations", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid("step_size", format!("must be positive, got {}", self.step_size)));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::invalid("snapshot_every", "must be at least 1"));
        }
        self.reg.validate()
    }

    pub fn snapshot_stride(&self) -> usize {
        self.snapshot_every.unwrap_or_else(|| self.num_iterations.div_ceil(1000).max(1))
    }
}

/// Particle positions at one recorded iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub particles: EnsembleProduct,
}

/// Per-iteration trace of a flow, including the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    /// Utility `U` of the design measure (mass `B`) at each iterate.
    pub utility: Vec<f64>,
    pub r_v: Vec<f64>,
    pub r_r: Vec<f64>,
    /// Largest particle displacement into each iterate; zero for the first.
    pub max_disp: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// Final particles; one ensemble for Algorithm 1.
    pub final_particles: EnsembleProduct,
    /// Total mass `B` of the design.
    pub mass: f64,
}

impl FlowRecord {
    /// The design measure `B μ` at the final iterate.
    pub fn final_design(&self) -> DesignMeasure {
        let e = &self.final_particles;
        DesignMeasure::uniform(e.dim(), e.particles().to_vec(), self.mass).expect("record holds at least one particle")
    }

    /// Largest single-step utility decrease, as a nonpositive number.
    pub fn dt_safety(&self) -> f64 {
        self.utility.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::min)
    }

    pub fn len(&self) -> usize {
        self.utility.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utility.is_empty()
    }
}

/// Clamps into a box or wraps on the torus.
pub fn project_to_domain(x: &mut [f64], domain: &Domain) {
    domain.project(x);
}

fn initial_particles(cfg: &FlowConfig, domain: &Domain, groups: usize, per: usize) -> Result<Vec<f64>> {
    let d = domain.dim();
    let total = groups * per * d;
    match &cfg.init {
        Init::Explicit(p) => {
            if p.len() != total {
                return Err(Error::invalid("init", format!("expected {total} coordinates, got {}", p.len())));
            }
            for x in p.chunks(d) {
                domain.check(x)?;
            }
            Ok(p.clone())
        }
        Init::Uniform | Init::UniformPartitioned => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let partitioned = matches!(cfg.init, Init::UniformPartitioned);
            let (lo, hi) = (domain.lower(), domain.upper());
            let mut out = Vec::with_capacity(total);
            for b in 0..groups {
                for _ in 0..per {
                    for k in 0..d {
                        let u: f64 = rng.random();
                        let v = if partitioned && k == 0 {
                            let w = (hi[0] - lo[0]) / groups as f64;
                            lo[0] + w * (b as f64 + u)
                        } else {
                            lo[k] + (hi[k] - lo[k]) * u
                        };
                        out.push(v);
                    }
                }
            }
            Ok(out)
        }
    }
}

fn drive(engine: &UtilityEngine, cfg: &FlowConfig, groups: usize, regularized: bool) -> Result<FlowRecord> {
    cfg.validate()?;
    let total = cfg.num_particles;
    if !total.is_multiple_of(groups) {
        return Err(Error::invalid(
            "num_particles",
            format!("{total} particles cannot be split into {groups} equal ensembles"),
        ));
    }
    let per = total / groups;
    let domain = engine.map().domain();
    let d = domain.dim();
    let mass = cfg.batch_size as f64;
    let weight = mass / total as f64;
    let reg = if regularized { cfg.reg } else { RegularizerConfig { alpha: 0.0, beta: 0.0, ..cfg.reg } };
    let stride = cfg.snapshot_stride();
    let t_max = cfg.num_iterations;

    let mut ens = EnsembleProduct::new(d, groups, per, initial_particles(cfg, &domain, groups, per)?)?;
    let mut rec = FlowRecord {
        utility: Vec::with_capacity(t_max + 1),
        r_v: Vec::with_capacity(t_max + 1),
        r_r: Vec::with_capacity(t_max + 1),
        max_disp: Vec::with_capacity(t_max + 1),
        snapshots: Vec::new(),
        final_particles: ens.clone(),
        mass,
    };
    let mut disp = 0.0;
    for t in 0..=t_max {
        let measure = DesignMeasure::new(d, ens.particles().to_vec(), vec![weight; total])?;
        let state = engine.assemble_resolvent(&measure)?;
        rec.utility.push(state.utility());
        rec.r_v.push(regularize::variance_value(&ens));
        rec.r_r.push(if groups > 1 { regularize::repulsion_value(&ens, &reg.kernel) } else { 0.0 });
        rec.max_disp.push(disp);
        if t % stride == 0 || t == t_max {
            rec.snapshots.push(Snapshot { iteration: t, particles: ens.clone() });
        }
        if t == t_max {
            break;
        }

        let mut step = if cfg.utility_enabled {
            engine.first_variation_field(&state, ens.particles(), true)?.gradients
        } else {
            vec![0.0; total * d]
        };
        if reg.alpha > 0.0 || reg.beta > 0.0 {
            let means = ens.ensemble_means();
            let snapshot = &ens;
            let extra = par::map_indices(total, |p| {
                let (b, i) = (p / per, p % per);
                let x = snapshot.particle_unchecked(b, i);
                let mut r = vec![0.0; d];
                if reg.beta > 0.0 && groups > 1 {
                    regularize::repulsion_gradient_into(snapshot, &reg.kernel, b, i, &mut r);
                }
                (0..d).map(|k| reg.alpha * 2.0 * (x[k] - means[b][k]) + reg.beta * r[k]).collect::<Vec<f64>>()
            });
            for (p, e) in extra.iter().enumerate() {
                for k in 0..d {
                    step[p * d + k] -= e[k];
                }
            }
        }

        disp = 0.0;
        let dt = cfg.step_size;
        for (x, s) in ens.particles_mut().chunks_mut(d).zip(step.chunks(d)) {
            let old: Vec<f64> = x.to_vec();
            for k in 0..d {
                x[k] += dt * s[k];
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { iteration: t + 1 });
            }
            domain.project(x);
            let moved = sqrt(old.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
            disp = f64::max(disp, moved);
        }
    }
    rec.final_particles = ens;
    Ok(rec)
}

/// Plain particle flow on one empirical measure of `num_particles` atoms.
/// Regularization weights in `cfg` are ignored.
pub fn run_algorithm1(engine: &UtilityEngine, cfg: &FlowConfig) -> Result<FlowRecord> {
    drive(engine, cfg, 1, false)
}

/// Regularized flow on `batch_size` ensembles.
pub fn run_algorithm2(engine: &UtilityEngine, cfg: &FlowConfig) -> Result<FlowRecord> {
    drive(engine, cfg, cfg.batch_size, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ObservationMap;
    use crate::prior::PriorModel;

    fn affine_engine(a: f64, b: f64, c: f64, mass: f64) -> UtilityEngine {
        UtilityEngine::new(ObservationMap::affine(vec![a], vec![b]).unwrap(), PriorModel::scaled_identity(1, c), mass)
            .unwrap()
    }

    #[test]
    fn zero_operator_particles_stay() {
        let e = UtilityEngine::new(ObservationMap::constant(vec![0.0, 0.0]).unwrap(), PriorModel::identity(2), 2.0)
            .unwrap();
        let cfg =
            FlowConfig { num_particles: 6, num_iterations: 20, step_size: 0.1, batch_size: 2, ..Default::default() };
        let rec = run_algorithm1(&e, &cfg).unwrap();
        assert_eq!(rec.snapshots[0].particles, rec.final_particles);
        assert!(rec.max_disp.iter().all(|d| *d == 0.0));
        assert_eq!(rec.len(), 21);
    }

    #[test]
    fn scalar_recursion() {
        let (a, b, c, mass) = (0.3, 1.2, 0.8, 2.0);
        let e = affine_engine(a, b, c, mass);
        let dt = 0.05;
        let cfg = FlowConfig {
            num_particles: 1,
            num_iterations: 40,
            step_size: dt,
            batch_size: 2,
            init: Init::Explicit(vec![0.1]),
            ..Default::default()
        };
        let rec = run_algorithm1(&e, &cfg).unwrap();
        // g = sqrt(c) (a + b x), S = mass c (a + b x)^2, so
        // d/dx phi = 2 mass c^2 b (a + b x) / (1 + mass c (a + b x)^2)^2
        let mut x: f64 = 0.1;
        for snap in &rec.snapshots {
            let got = snap.particles.particles()[0];
            assert!((got - x).abs() < 1e-13, "{} {got} {x}", snap.iteration);
            let y = a + b * x;
            let r = 1.0 + mass * c * y * y;
            x = (x + dt * 2.0 * mass * c * c * b * y / (r * r)).clamp(0.0, 1.0);
        }
    }

    #[test]
    fn algorithm2_reduces_to_algorithm1() {
        let e = affine_engine(0.1, 1.0, 1.0, 1.0);
        let cfg = FlowConfig {
            num_particles: 5,
            num_iterations: 30,
            step_size: 0.02,
            batch_size: 1,
            seed: 3,
            ..Default::default()
        };
        let r1 = run_algorithm1(&e, &cfg).unwrap();
        let r2 = run_algorithm2(&e, &cfg).unwrap();
        assert_eq!(r1.final_particles, r2.final_particles);
        assert_eq!(r1.utility, r2.utility);
    }

    #[test]
    fn pure_variance_decay() {
        let e = affine_engine(0.1, 1.0, 1.0, 2.0);
        let (alpha, dt) = (2.0, 0.01);
        let cfg = FlowConfig {
            num_particles: 8,
            num_iterations: 50,
            step_size: dt,
            batch_size: 2,
            reg: RegularizerConfig::new(alpha, 0.0, 0.1).unwrap(),
            init: Init::UniformPartitioned,
            utility_enabled: false,
            ..Default::default()
        };
        let rec = run_algorithm2(&e, &cfg).unwrap();
        let f = (1.0 - 2.0 * alpha * dt) * (1.0 - 2.0 * alpha * dt);
        for t in 1..rec.r_v.len() {
            assert!((rec.r_v[t] - f * rec.r_v[t - 1]).abs() < 1e-12 * rec.r_v[0]);
        }
    }

    #[test]
    fn coincident_ensembles_and_separation() {
        let e = affine_engine(0.1, 1.0, 1.0, 2.0);
        let reg = RegularizerConfig::new(0.0, 1e-2, 0.05).unwrap();
        let base = FlowConfig {
            num_particles: 2,
            num_iterations: 40,
            step_size: 0.01,
            batch_size: 2,
            reg,
            utility_enabled: false,
            ..Default::default()
        };
        let still = run_algorithm2(&e, &FlowConfig { init: Init::Explicit(vec![0.5, 0.5]), ..base.clone() }).unwrap();
        assert_eq!(still.final_particles.particles(), &[0.5, 0.5]);
        let moving = run_algorithm2(&e, &FlowConfig { init: Init::Explicit(vec![0.5, 0.5 + 1e-6]), ..base }).unwrap();
        let gaps: Vec<f64> =
            moving.snapshots.iter().map(|s| s.particles.particles()[1] - s.particles.particles()[0]).collect();
        assert!(gaps.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn config_errors() {
        let e = affine_engine(0.1, 1.0, 1.0, 2.0);
        let bad = FlowConfig { num_particles: 5, batch_size: 2, ..Default::default() };
        assert!(run_algorithm2(&e, &bad).unwrap_err().is_config_error());
        let bad = FlowConfig { step_size: 0.0, ..Default::default() };
        assert!(run_algorithm1(&e, &bad).is_err());
        let bad = FlowConfig { num_particles: 2, init: Init::Explicit(vec![0.1]), ..Default::default() };
        assert!(run_algorithm1(&e, &bad).is_err());
    }

    #[test]
    fn snapshot_thinning() {
        let cfg = FlowConfig { num_iterations: 1000, ..Default::default() };
        assert_eq!(cfg.snapshot_stride(), 1);
        let cfg = FlowConfig { num_iterations: 2500, ..Default::default() };
        assert_eq!(cfg.snapshot_stride(), 3);
    }

    #[test]
    fn partitioned_init_slabs() {
        let e = UtilityEngine::new(ObservationMap::constant(vec![0.0]).unwrap(), PriorModel::identity(1), 3.0).unwrap();
        let cfg = FlowConfig {
            num_particles: 30,
            num_iterations: 1,
            batch_size: 3,
            init: Init::UniformPartitioned,
            ..Default::default()
        };
        let rec = run_algorithm2(&e, &cfg).unwrap();
        let p = &rec.snapshots[0].particles;
        for b in 0..3 {
            for x in p.ensemble(b).unwrap() {
                assert!(*x >= b as f64 / 3.0 && *x <= (b + 1) as f64 / 3.0);
            }
        }
    }
}
