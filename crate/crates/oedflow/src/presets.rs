//! Named parameter sets for the reference experiments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Preset {
    /// Poisson source problem, two observations.
    PoissonB2,
    /// Schrödinger source problem on the unit square, four observations.
    SchrodingerB4,
    /// Variance regularization sweep, three observations.
    SensitivityAlpha,
    /// Repulsion sweep, eight observations.
    SensitivityBeta,
    /// Analytic torus example.
    Torus,
}

const POISSON_B2: &str = r#"
[model]
type = "poisson1d"
grid_points = 100
noise_std = 0.1

[prior.kernel]
family = "nonstationary_product"
sigma0 = 0.01

[flow]
algorithm = 2
num_particles = 120
num_iterations = 500
step_size = 4e-3
batch_size = 2
init = "uniform_partitioned"

[regularization]
alpha = 0.008
beta = 0.0
"#;

const SCHRODINGER_B4: &str = r#"
[model]
type = "schrodinger2d"
grid_points = 60
noise_std = 0.1
omega = 1.0

[model.potential]
shape = "cross"
magnitude = 200.0
halfwidth = 0.08

[prior.kernel]
family = "squared_exponential"
sigma0 = 0.5

[flow]
algorithm = 2
num_particles = 100
num_iterations = 120
step_size = 8e-3
batch_size = 4
init = "uniform_partitioned"

[regularization]
alpha = 5e-4
beta = 0.0

[outputs]
landscape_grid = 61
"#;

const SENSITIVITY_ALPHA: &str = r#"
[model]
type = "poisson1d"
grid_points = 100
noise_std = 0.1

[prior.kernel]
family = "nonstationary_product"
sigma0 = 0.01

[flow]
algorithm = 2
num_particles = 900
num_iterations = 300
step_size = 1e-5
batch_size = 3
init = "uniform_partitioned"

[regularization]
alpha = 0.008
beta = 0.0

[sweep]
parameter = "alpha"
values = [1e-3, 1e-2, 1e-1]
"#;

const SENSITIVITY_BETA: &str = r#"
[model]
type = "poisson1d"
grid_points = 100
noise_std = 0.1

[prior.kernel]
family = "nonstationary_product"
sigma0 = 0.01

[flow]
algorithm = 2
num_particles = 600
num_iterations = 1000
step_size = 4e-3
batch_size = 8
init = "uniform_partitioned"

[regularization]
alpha = 0.05
beta = 1e-4
sigma_q = 0.009

[sweep]
parameter = "beta"
values = [1e-6, 1e-5, 1e-4, 1e-3]
"#;

const TORUS: &str = r#"
[model]
type = "torus"

[prior]
sigma = 1.0

[flow]
algorithm = 1
num_particles = 16
num_iterations = 200
step_size = 0.05
batch_size = 1
init = "uniform"
"#;

impl Preset {
    pub const ALL: [Preset; 5] =
        [Preset::PoissonB2, Preset::SchrodingerB4, Preset::SensitivityAlpha, Preset::SensitivityBeta, Preset::Torus];

    pub fn name(self) -> &'static str {
        match self {
            Preset::PoissonB2 => "poisson_b2",
            Preset::SchrodingerB4 => "schrodinger_b4",
            Preset::SensitivityAlpha => "sensitivity_alpha",
            Preset::SensitivityBeta => "sensitivity_beta",
            Preset::Torus => "torus",
        }
    }

    /// Config keys the preset sets, as a TOML fragment.
    pub fn overrides(self) -> &'static str {
        match self {
            Preset::PoissonB2 => POISSON_B2,
            Preset::SchrodingerB4 => SCHRODINGER_B4,
            Preset::SensitivityAlpha => SENSITIVITY_ALPHA,
            Preset::SensitivityBeta => SENSITIVITY_BETA,
            Preset::Torus => TORUS,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            format!("unknown preset `{s}`; expected one of {}", Preset::ALL.map(Preset::name).join(", "))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, InitKind, KernelFamily, ModelKind};

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("poisson".parse::<Preset>().is_err());
    }

    #[test]
    fn poisson_values() {
        let c = ExperimentConfig::resolve(Some(Preset::PoissonB2), None, &[]).unwrap();
        assert_eq!(c.model.kind, ModelKind::Poisson);
        assert_eq!(c.model.grid_points, 100);
        assert_eq!(c.model.noise_std, 0.1);
        assert_eq!(c.prior.kernel.family, KernelFamily::NonstationaryProduct);
        assert_eq!(c.prior.kernel.sigma0, 0.01);
        assert_eq!((c.flow.num_particles, c.flow.num_iterations, c.flow.batch_size), (120, 500, 2));
        assert_eq!(c.flow.step_size, 4e-3);
        assert_eq!((c.regularization.alpha, c.regularization.beta), (0.008, 0.0));
    }

    #[test]
    fn schrodinger_values() {
        let c = ExperimentConfig::resolve(Some(Preset::SchrodingerB4), None, &[]).unwrap();
        assert_eq!(c.model.grid_points * c.model.grid_points, 3600);
        assert_eq!((c.flow.num_particles, c.flow.num_iterations, c.flow.batch_size), (100, 120, 4));
        assert_eq!(c.flow.step_size, 8e-3);
        assert_eq!(c.regularization.alpha, 5e-4);
        assert_eq!(c.prior.kernel.sigma0, 0.5);
    }

    #[test]
    fn sensitivity_values() {
        let a = ExperimentConfig::resolve(Some(Preset::SensitivityAlpha), None, &[]).unwrap();
        assert_eq!((a.flow.num_particles, a.flow.num_iterations, a.flow.batch_size), (900, 300, 3));
        assert_eq!(a.flow.step_size, 1e-5);
        assert_eq!(a.flow.init, InitKind::UniformPartitioned);
        let b = ExperimentConfig::resolve(Some(Preset::SensitivityBeta), None, &[]).unwrap();
        assert_eq!((b.flow.num_particles, b.flow.num_iterations, b.flow.batch_size), (600, 1000, 8));
        assert_eq!((b.regularization.alpha, b.regularization.sigma_q), (0.05, 0.009));
        assert_eq!(b.sweep.values, vec![1e-6, 1e-5, 1e-4, 1e-3]);
    }
}
