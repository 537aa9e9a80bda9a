//! Turns an [`ExperimentConfig`] into core objects.

use oedflow_core::flow::{self, FlowConfig, FlowRecord, Init};
use oedflow_core::kernels::KernelSpec;
use oedflow_core::models::{
    ObservationMap, ParameterGrid, PoissonMap, PoissonSource, PotentialShape, SchrodingerParams,
};
use oedflow_core::prior::{self, PriorModel};
use oedflow_core::regularize::RegularizerConfig;
use oedflow_core::utility::{SolverMode, UtilityEngine};

use crate::config::{
    ExperimentConfig, InitKind, KernelFamily, ModelKind, PotentialKind, Solver, SourceBasis, SweepParameter,
};
use crate::{CliError, Result};

pub fn observation_map(cfg: &ExperimentConfig) -> Result<ObservationMap> {
    let m = &cfg.model;
    match m.kind {
        ModelKind::Poisson => {
            let grid = ParameterGrid::uniform_1d(m.grid_points).map_err(CliError::core("model.grid_points"))?;
            let source = match m.source {
                SourceBasis::Hat => PoissonSource::Hat,
                SourceBasis::Nodal => PoissonSource::Nodal,
            };
            let map = PoissonMap::new(grid, m.noise_std, source).map_err(CliError::core("Poisson model"))?;
            Ok(ObservationMap::Poisson(map))
        }
        ModelKind::Schrodinger => {
            let params = SchrodingerParams {
                grid_points: m.grid_points,
                omega: m.omega,
                magnitude: m.potential.magnitude,
                halfwidth: m.potential.halfwidth,
                mollifier_eps: m.potential.mollifier_eps,
                shape: match m.potential.shape {
                    PotentialKind::Cross => PotentialShape::Cross,
                    PotentialKind::Square => PotentialShape::Square,
                },
                noise_std: m.noise_std,
            };
            ObservationMap::schrodinger(params).map_err(CliError::core("Schrödinger model"))
        }
        ModelKind::Torus => Ok(ObservationMap::torus()),
    }
}

pub fn prior_model(cfg: &ExperimentConfig, map: &ObservationMap) -> Result<PriorModel> {
    let p = &cfg.prior;
    let Some(grid) = map.grid() else {
        return prior::torus_prior(p.sigma).map_err(CliError::core("prior.sigma"));
    };
    let kernel = match p.kernel.family {
        KernelFamily::SquaredExponential => KernelSpec::SquaredExponential { lengthscale: p.kernel.sigma0 },
        KernelFamily::NonstationaryProduct => {
            KernelSpec::NonstationaryProduct { lengthscale: p.kernel.sigma0, amplitude: p.kernel.amplitude }
        }
        KernelFamily::GaussianInteraction | KernelFamily::TorusCosine => {
            return Err(crate::ConfigError::invalid("prior.kernel.family", "not a prior covariance family").into())
        }
    };
    PriorModel::assemble(&kernel, grid, p.eigen_floor).map_err(CliError::core("prior covariance"))
}

/// Engine for the configured model with batch size `flow.batch_size`.
pub fn engine(cfg: &ExperimentConfig) -> Result<UtilityEngine> {
    let map = observation_map(cfg)?;
    let prior = prior_model(cfg, &map)?;
    let mode = match cfg.flow.solver {
        Solver::Auto => SolverMode::Auto,
        Solver::Dense => SolverMode::Dense,
        Solver::Woodbury => SolverMode::Woodbury,
    };
    Ok(UtilityEngine::new(map, prior, cfg.flow.batch_size as f64)
        .map_err(CliError::core("utility engine"))?
        .with_solver(mode))
}

pub fn flow_config(cfg: &ExperimentConfig) -> Result<FlowConfig> {
    let f = &cfg.flow;
    let r = &cfg.regularization;
    let reg = RegularizerConfig::new(r.alpha, r.beta, r.sigma_q).map_err(CliError::core("regularization"))?;
    Ok(FlowConfig {
        num_particles: f.num_particles,
        num_iterations: f.num_iterations,
        step_size: f.step_size,
        batch_size: f.batch_size,
        reg,
        init: match f.init {
            InitKind::Uniform => Init::Uniform,
            InitKind::UniformPartitioned => Init::UniformPartitioned,
            InitKind::Explicit => Init::Explicit(f.positions.clone()),
        },
        seed: f.seed,
        snapshot_every: (cfg.outputs.snapshot_every > 0).then_some(cfg.outputs.snapshot_every),
        utility_enabled: true,
    })
}

pub fn run_flow(engine: &UtilityEngine, cfg: &ExperimentConfig) -> Result<FlowRecord> {
    let fc = flow_config(cfg)?;
    let rec =
        if cfg.flow.algorithm == 1 { flow::run_algorithm1(engine, &fc) } else { flow::run_algorithm2(engine, &fc) };
    rec.map_err(CliError::core("particle flow"))
}

/// The configs of a sweep, labelled by parameter and value; a single
/// unlabelled config when no sweep is set.
pub fn sweep_configs(cfg: &ExperimentConfig) -> Vec<(Option<String>, ExperimentConfig)> {
    let name = match cfg.sweep.parameter {
        SweepParameter::None => return vec![(None, cfg.clone())],
        SweepParameter::Alpha => "alpha",
        SweepParameter::Beta => "beta",
    };
    cfg.sweep
        .values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            match cfg.sweep.parameter {
                SweepParameter::Alpha => c.regularization.alpha = v,
                _ => c.regularization.beta = v,
            }
            c.sweep.parameter = SweepParameter::None;
            c.sweep.values.clear();
            (Some(format!("{name}_{v:e}")), c)
        })
        .collect()
}
