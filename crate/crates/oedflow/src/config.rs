//! Experiment configuration: a TOML document with dotted section keys,
//! layered as defaults, then a preset, then a file, then command-line
//! assignments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::presets::Preset;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// A key is missing, unknown, mistyped or out of range.
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("config syntax: {0}")]
    Syntax(String),
}

impl ConfigError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { path: path.into(), message: message.into() }
    }

    /// Key path of the offending entry, when known.
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { path, .. } => Some(path),
            ConfigError::Syntax(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "poisson1d")]
    Poisson,
    #[serde(rename = "schrodinger2d")]
    Schrodinger,
    #[serde(rename = "torus")]
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceBasis {
    Hat,
    Nodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Cross,
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "type")]
    pub kind: ModelKind,
    /// Grid size: nodes on [0, 1] for Poisson, interior nodes per axis for
    /// the Schrödinger model. Unused for the torus.
    pub grid_points: usize,
    pub noise_std: f64,
    pub source: SourceBasis,
    pub omega: f64,
    pub potential: PotentialConfig,
}

/// Potential of the Schrödinger model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialConfig {
    pub shape: PotentialKind,
    pub magnitude: f64,
    pub halfwidth: f64,
    pub mollifier_eps: f64,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig { shape: PotentialKind::Cross, magnitude: 200.0, halfwidth: 0.08, mollifier_eps: 0.02 }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Poisson,
            grid_points: 100,
            noise_std: 0.1,
            source: SourceBasis::Hat,
            omega: 1.0,
            potential: PotentialConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    NonstationaryProduct,
    GaussianInteraction,
    TorusCosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub sigma0: f64,
    pub amplitude: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            family: KernelFamily::NonstationaryProduct,
            sigma0: 0.01,
            amplitude: oedflow_core::kernels::DEFAULT_NONSTATIONARY_AMPLITUDE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub kernel: KernelConfig,
    /// Eigenvalues of the prior covariance are clipped at this floor.
    pub eigen_floor: f64,
    /// Prior standard deviation of the torus model.
    pub sigma: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { kernel: KernelConfig::default(), eigen_floor: 0.0, sigma: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Uniform,
    UniformPartitioned,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Auto,
    Dense,
    Woodbury,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    /// 1 for the plain flow, 2 for the regularized ensemble flow.
    pub algorithm: u8,
    /// Total particle count; split evenly over the ensembles of algorithm 2.
    pub num_particles: usize,
    pub num_iterations: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub init: InitKind,
    /// Row-major coordinates for `init = "explicit"`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub positions: Vec<f64>,
    pub solver: Solver,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            algorithm: 1,
            num_particles: 100,
            num_iterations: 100,
            step_size: 1e-3,
            batch_size: 1,
            seed: 0,
            init: InitKind::Uniform,
            positions: Vec::new(),
            solver: Solver::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationConfig {
    pub alpha: f64,
    pub beta: f64,
    pub sigma_q: f64,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        RegularizationConfig { alpha: 0.0, beta: 0.0, sigma_q: 0.009 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    None,
    Alpha,
    Beta,
}

/// Repeats `run` once per value of one regularization weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { parameter: SweepParameter::None, values: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub tol: f64,
    pub merge_radius: f64,
    /// Audit points per axis; 0 picks 2000 in 1D and 200 per axis in 2D.
    pub audit_resolution: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig { tol: 1e-3, merge_radius: oedflow_core::certify::DEFAULT_MERGE_RADIUS, audit_resolution: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    /// Keep every k-th particle snapshot; 0 picks 1 up to 1000 iterations
    /// and `ceil(T / 1000)` beyond.
    pub snapshot_every: usize,
    /// Points per axis of the landscape grids.
    pub landscape_grid: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: String::from("out"), snapshot_every: 0, landscape_grid: 101 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub flow: FlowSection,
    pub regularization: RegularizationConfig,
    pub sweep: SweepConfig,
    pub certify: CertifyConfig,
    pub outputs: OutputConfig,
}

/// A `key=value` assignment from the command line. The value is read as a
/// TOML value and falls back to a bare string.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub key: String,
    pub value: Value,
}

impl FromStr for Assignment {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (key, raw) =
            s.split_once('=').ok_or_else(|| ConfigError::Syntax(format!("expected key=value, got `{s}`")))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(ConfigError::Syntax(format!("malformed key `{key}`")));
        }
        let raw = raw.trim();
        let value = toml::from_str::<Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        Ok(Assignment { key: key.to_string(), value })
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.key, self.value)
    }
}

fn parse_table(text: &str) -> Result<Table, ConfigError> {
    toml::from_str::<Table>(text).map_err(|e| ConfigError::Syntax(e.message().to_string()))
}

/// Accepts `repulsion.sigma_q` as an alias of `regularization.sigma_q`.
fn normalize(mut t: Table) -> Result<Table, ConfigError> {
    let Some(rep) = t.remove("repulsion") else { return Ok(t) };
    let Value::Table(mut rep) = rep else {
        return Err(ConfigError::invalid("repulsion", "expected a table"));
    };
    if let Some(sq) = rep.remove("sigma_q") {
        let reg = t.entry("regularization").or_insert_with(|| Value::Table(Table::new()));
        let Value::Table(reg) = reg else {
            return Err(ConfigError::invalid("regularization", "expected a table"));
        };
        if let Some(prev) = reg.get("sigma_q") {
            if prev != &sq {
                return Err(ConfigError::invalid("repulsion.sigma_q", "conflicts with regularization.sigma_q"));
            }
        }
        reg.insert("sigma_q".into(), sq);
    }
    if let Some(k) = rep.keys().next() {
        return Err(ConfigError::invalid(format!("repulsion.{k}"), "unknown key"));
    }
    Ok(t)
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn assign(t: &mut Table, a: &Assignment) -> Result<(), ConfigError> {
    let parts: Vec<&str> = a.key.split('.').collect();
    let mut cur = t;
    for (depth, p) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(inner) => inner,
            _ => return Err(ConfigError::invalid(parts[..=depth].join("."), "is not a table")),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), a.value.clone());
    Ok(())
}

fn preset_of(t: &Table, path: &str) -> Result<Option<Preset>, ConfigError> {
    match t.get("preset") {
        None => Ok(None),
        Some(Value::String(s)) => s.parse().map(Some).map_err(|e: String| ConfigError::invalid(path, e)),
        Some(_) => Err(ConfigError::invalid(path, "expected a preset name")),
    }
}

fn decode(table: Table) -> Result<ExperimentConfig, ConfigError> {
    let text = toml::to_string(&table).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let de = toml::Deserializer::parse(&text).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::invalid(if path == "." { String::from("(root)") } else { path }, inner.message().to_string())
    })
}

impl ExperimentConfig {
    /// Builds a config from its layers. The preset is taken from the
    /// highest layer that names one: assignments, then the `preset` flag,
    /// then the file.
    pub fn resolve(preset: Option<Preset>, file: Option<&str>, sets: &[Assignment]) -> Result<Self, ConfigError> {
        let file = match file {
            Some(text) => normalize(parse_table(text)?)?,
            None => Table::new(),
        };
        let mut set_table = Table::new();
        for a in sets {
            assign(&mut set_table, a)?;
        }
        let set_table = normalize(set_table)?;
        let chosen = match preset_of(&set_table, "preset")? {
            Some(p) => Some(p),
            None => match preset {
                Some(p) => Some(p),
                None => preset_of(&file, "preset")?,
            },
        };

        let mut merged =
            Table::try_from(ExperimentConfig::default()).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        if let Some(p) = chosen {
            merge(&mut merged, parse_table(p.overrides())?);
        }
        merge(&mut merged, file);
        merge(&mut merged, set_table);
        match chosen {
            Some(p) => merged.insert("preset".into(), Value::String(p.name().into())),
            None => merged.remove("preset"),
        };
        let cfg = decode(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a complete config document without preset expansion.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::resolve(None, Some(text), &[])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the expanded config text, hex encoded. The output
    /// directory is left out, so a run reproduced elsewhere keeps its digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.outputs.directory = String::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |path: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(path, format!("must be a positive number, got {v}")))
            }
        };
        let nonneg = |path: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(path, format!("must be a nonnegative number, got {v}")))
            }
        };
        let at_least = |path: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(ConfigError::invalid(path, format!("must be at least {min}, got {v}")))
            }
        };

        let m = &self.model;
        positive("model.noise_std", m.noise_std)?;
        match m.kind {
            ModelKind::Poisson => at_least("model.grid_points", m.grid_points, 2)?,
            ModelKind::Schrodinger => {
                at_least("model.grid_points", m.grid_points, 2)?;
                if !m.omega.is_finite() || m.omega * m.omega >= 2.0 * std::f64::consts::PI.powi(2) {
                    return Err(ConfigError::invalid(
                        "model.omega",
                        format!("well-posedness bound violated: omega^2 must be below 2 pi^2, got omega = {}", m.omega),
                    ));
                }
                nonneg("model.potential.magnitude", m.potential.magnitude)?;
                positive("model.potential.halfwidth", m.potential.halfwidth)?;
                positive("model.potential.mollifier_eps", m.potential.mollifier_eps)?;
            }
            ModelKind::Torus => {}
        }

        let p = &self.prior;
        nonneg("prior.eigen_floor", p.eigen_floor)?;
        if m.kind == ModelKind::Torus {
            positive("prior.sigma", p.sigma)?;
        } else {
            positive("prior.kernel.sigma0", p.kernel.sigma0)?;
            nonneg("prior.kernel.amplitude", p.kernel.amplitude)?;
            if !matches!(p.kernel.family, KernelFamily::SquaredExponential | KernelFamily::NonstationaryProduct) {
                return Err(ConfigError::invalid(
                    "prior.kernel.family",
                    "prior covariance must be squared_exponential or nonstationary_product",
                ));
            }
        }

        let f = &self.flow;
        if !matches!(f.algorithm, 1 | 2) {
            return Err(ConfigError::invalid("flow.algorithm", format!("must be 1 or 2, got {}", f.algorithm)));
        }
        at_least("flow.num_particles", f.num_particles, 1)?;
        at_least("flow.num_iterations", f.num_iterations, 1)?;
        at_least("flow.batch_size", f.batch_size, 1)?;
        positive("flow.step_size", f.step_size)?;
        if f.algorithm == 2 && !f.num_particles.is_multiple_of(f.batch_size) {
            return Err(ConfigError::invalid(
                "flow.num_particles",
                format!("{} particles cannot be split into {} equal ensembles", f.num_particles, f.batch_size),
            ));
        }
        let dim = if m.kind == ModelKind::Schrodinger { 2 } else { 1 };
        match f.init {
            InitKind::Explicit if f.positions.len() != f.num_particles * dim => {
                return Err(ConfigError::invalid(
                    "flow.positions",
                    format!("expected {} coordinates, got {}", f.num_particles * dim, f.positions.len()),
                ));
            }
            InitKind::Explicit => {}
            _ if !f.positions.is_empty() => {
                return Err(ConfigError::invalid("flow.positions", "only used with init = \"explicit\""));
            }
            _ => {}
        }

        let r = &self.regularization;
        nonneg("regularization.alpha", r.alpha)?;
        nonneg("regularization.beta", r.beta)?;
        positive("regularization.sigma_q", r.sigma_q)?;

        let s = &self.sweep;
        if s.parameter != SweepParameter::None && s.values.is_empty() {
            return Err(ConfigError::invalid("sweep.values", "a sweep needs at least one value"));
        }
        for v in &s.values {
            nonneg("sweep.values", *v)?;
        }

        nonneg("certify.tol", self.certify.tol)?;
        positive("certify.merge_radius", self.certify.merge_radius)?;
        at_least("outputs.landscape_grid", self.outputs.landscape_grid, 2)?;
        if self.outputs.directory.is_empty() {
            return Err(ConfigError::invalid("outputs.directory", "must not be empty"));
        }
        Ok(())
    }

    /// Design-space dimension of the configured model.
    pub fn design_dim(&self) -> usize {
        if self.model.kind == ModelKind::Schrodinger {
            2
        } else {
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(s: &str) -> Assignment {
        s.parse().unwrap()
    }

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn assignment_values() {
        assert_eq!(set("flow.seed=7").value, Value::Integer(7));
        assert_eq!(set("flow.step_size = 1e-3").value, Value::Float(1e-3));
        assert_eq!(set("outputs.directory=runs/a").value, Value::String("runs/a".into()));
        assert!("flow.seed".parse::<Assignment>().is_err());
        assert!("flow..seed=1".parse::<Assignment>().is_err());
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = ExperimentConfig::parse("[flow]\nnum_particle = 3\n").unwrap_err();
        assert_eq!(err.path(), Some("flow.num_particle"));
        assert!(err.to_string().contains("num_particle"));
    }

    #[test]
    fn type_error_reports_path() {
        let err = ExperimentConfig::parse("[flow]\nstep_size = \"big\"\n").unwrap_err();
        assert_eq!(err.path(), Some("flow.step_size"));
    }

    #[test]
    fn range_error_reports_path() {
        let err = ExperimentConfig::parse("[regularization]\nalpha = -1.0\n").unwrap_err();
        assert_eq!(err.path(), Some("regularization.alpha"));
        let err = ExperimentConfig::parse("[model]\ntype = \"schrodinger2d\"\nomega = 5.0\n").unwrap_err();
        assert_eq!(err.path(), Some("model.omega"));
    }

    #[test]
    fn precedence() {
        let file = "preset = \"poisson_b2\"\n[flow]\nnum_iterations = 10\nseed = 3\n";
        let cfg = ExperimentConfig::resolve(None, Some(file), &[set("flow.seed=5")]).unwrap();
        assert_eq!(cfg.flow.num_iterations, 10);
        assert_eq!(cfg.flow.seed, 5);
        assert_eq!(cfg.flow.num_particles, 120);
        assert_eq!(cfg.regularization.alpha, 0.008);

        let cfg = ExperimentConfig::resolve(Some(Preset::Torus), Some(file), &[]).unwrap();
        assert_eq!(cfg.preset, Some(Preset::Torus));
        assert_eq!(cfg.model.kind, ModelKind::Torus);
        assert_eq!(cfg.flow.num_iterations, 10);
    }

    #[test]
    fn repulsion_alias() {
        let cfg = ExperimentConfig::parse("[repulsion]\nsigma_q = 0.02\n").unwrap();
        assert_eq!(cfg.regularization.sigma_q, 0.02);
        let err =
            ExperimentConfig::parse("[repulsion]\nsigma_q = 0.02\n[regularization]\nsigma_q = 0.03\n").unwrap_err();
        assert_eq!(err.path(), Some("repulsion.sigma_q"));
    }

    #[test]
    fn round_trip_every_preset() {
        for p in Preset::ALL {
            let cfg = ExperimentConfig::resolve(Some(p), None, &[]).unwrap();
            let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
            assert_eq!(cfg, again, "{}", p.name());
            assert_eq!(cfg.digest(), again.digest());
        }
    }

    #[test]
    fn explicit_init_length_checked() {
        let err =
            ExperimentConfig::parse("[flow]\nnum_particles = 2\ninit = \"explicit\"\npositions = [0.1]\n").unwrap_err();
        assert_eq!(err.path(), Some("flow.positions"));
    }
}
