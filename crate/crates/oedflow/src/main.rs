use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oedflow::config::Assignment;
use oedflow::{commands, exit, CliError, ConfigError, ExperimentConfig, Preset};

/// Relaxed batch A-optimal experimental design with particle gradient flows.
#[derive(Debug, Parser)]
#[command(name = "oedflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Named parameter set applied beneath the config file.
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// TOML config file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set flow.seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Output directory (`outputs.directory`).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Random seed (`flow.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the expanded config and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the particle flow and write trajectory, metrics and design files.
    Run(#[command(flatten)] Common),
    /// Write utility landscapes for one and two observations.
    Landscape(#[command(flatten)] Common),
    /// Check first-order optimality of a stored design.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Design JSON written by `run`.
        #[arg(long)]
        design: PathBuf,
        /// Exit with status 4 if the certificate is violated.
        #[arg(long)]
        strict: bool,
        /// Certificate tolerance (`certify.tol`).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Validate analytic gradients against finite differences.
    Gradcheck(#[command(flatten)] Common),
    /// Posterior covariance of a stored design.
    Posterior {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        design: PathBuf,
    },
}

fn load(common: &Common, extra: &[Assignment]) -> Result<ExperimentConfig, CliError> {
    let text = match &common.config {
        Some(p) => Some(
            std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(ConfigError::Syntax(format!("cannot read {}: {e}", p.display()))))?,
        ),
        None => None,
    };
    let mut sets = common.sets.iter().map(|s| s.parse()).collect::<Result<Vec<Assignment>, _>>()?;
    if let Some(dir) = &common.output {
        sets.push(Assignment { key: "outputs.directory".into(), value: toml::Value::String(path_string(dir)) });
    }
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).map_err(|_| ConfigError::invalid("flow.seed", "too large"))?;
        sets.push(Assignment { key: "flow.seed".into(), value: toml::Value::Integer(seed) });
    }
    sets.extend_from_slice(extra);
    Ok(ExperimentConfig::resolve(common.preset, text.as_deref(), &sets)?)
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let (common, extra) = match &cli.command {
        Command::Certify { common, tol: Some(t), .. } => {
            (common, vec![Assignment { key: "certify.tol".into(), value: toml::Value::Float(*t) }])
        }
        Command::Run(c) | Command::Landscape(c) | Command::Gradcheck(c) => (c, Vec::new()),
        Command::Certify { common, .. } | Command::Posterior { common, .. } => (common, Vec::new()),
    };
    let cfg = load(common, &extra)?;
    if common.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match &cli.command {
        Command::Run(_) => commands::run(&cfg).map(drop),
        Command::Landscape(_) => commands::landscape(&cfg).map(drop),
        Command::Certify { design, strict, .. } => commands::certify(&cfg, design, *strict).map(drop),
        Command::Gradcheck(_) => commands::gradcheck(&cfg).map(drop),
        Command::Posterior { design, .. } => commands::posterior(&cfg, design).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
