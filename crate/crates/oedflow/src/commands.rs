//! Subcommand implementations. Each returns the files it wrote and prints
//! a short summary to stdout.

use std::path::{Path, PathBuf};

use oedflow_core::certify::{self, OptimalityReport, Verdict};
use oedflow_core::design::{cluster_points, DesignMeasure};
use oedflow_core::flow::FlowRecord;
use oedflow_core::utility::UtilityEngine;

use crate::config::ExperimentConfig;
use crate::experiment;
use crate::output::{self, CertificateFile, CsvSink, DesignFile};
use crate::{CliError, Result};

/// Largest grid for which `posterior` writes the full covariance.
pub const FULL_COVARIANCE_LIMIT: usize = 200;

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.outputs.directory);
    output::create_dir(&dir)?;
    Ok(dir)
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(CliError::io(&path))
}

/// Result of one flow run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: Option<String>,
    pub directory: PathBuf,
    pub record: FlowRecord,
    pub design: DesignFile,
}

/// Runs the configured flow, once per sweep value when a sweep is set.
/// Writes `trajectory.csv`, `metrics.csv`, `ensembles.csv`,
/// `mean_distances.csv`, `design.json` and the expanded `config.toml`.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    let root = out_dir(cfg)?;
    let engine = experiment::engine(cfg)?;
    let mut outcomes = Vec::new();
    for (label, c) in experiment::sweep_configs(cfg) {
        let dir = match &label {
            Some(l) => root.join(l),
            None => root.clone(),
        };
        output::create_dir(&dir)?;
        let digest = c.digest();
        let started = std::time::Instant::now();
        let record = experiment::run_flow(&engine, &c)?;
        let elapsed = started.elapsed();

        write_config(&dir, &c)?;
        output::write_trajectory(&dir.join("trajectory.csv"), &digest, &record)?;
        output::write_metrics(&dir.join("metrics.csv"), &digest, &record)?;
        output::write_ensembles(&dir.join("ensembles.csv"), &digest, &record)?;
        output::write_mean_distances(&dir.join("mean_distances.csv"), &digest, &record)?;

        let measure = record.final_design();
        let mut design = DesignFile::from_measure(&measure, c.certify.merge_radius)?;
        let per = record.final_particles.per_ensemble();
        design.ensemble = (0..measure.len()).map(|i| i / per).collect();
        design.utility = record.utility.last().copied();
        design.config_sha256 = Some(digest);
        output::write_json(&dir.join("design.json"), &design)?;

        let means = record.final_particles.ensemble_means();
        let flat: Vec<f64> = means.iter().flatten().copied().collect();
        let mean_clusters = cluster_points(&flat, record.final_particles.dim(), c.certify.merge_radius)
            .map_err(CliError::core("clustering"))?;
        println!(
            "{}utility {:.10} after {} iterations ({:.1?}); {} atom clusters, {} distinct ensemble means; output in {}",
            label.as_deref().map(|l| format!("[{l}] ")).unwrap_or_default(),
            design.utility.unwrap_or(f64::NAN),
            c.flow.num_iterations,
            elapsed,
            design.clusters.len(),
            mean_clusters.len(),
            dir.display()
        );
        outcomes.push(RunOutcome { label, directory: dir, record, design });
    }
    Ok(outcomes)
}

fn grid_1d(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Utility of designs on a regular grid. Writes `landscape_single.csv`
/// (one observation at `x`) and, for one-dimensional models,
/// `landscape_pair.csv` (two observations at `x1`, `x2`).
pub fn landscape(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = out_dir(cfg)?;
    let digest = cfg.digest();
    let engine = experiment::engine(cfg)?;
    let domain = engine.map().domain();
    let dim = engine.dim();
    let n = cfg.outputs.landscape_grid;
    let axes: Vec<Vec<f64>> = (0..dim).map(|k| grid_1d(n, domain.lower()[k], domain.upper()[k])).collect();
    let mut written = Vec::new();

    let path = dir.join("landscape_single.csv");
    let mut cols = output::coord_columns(dim);
    cols.push("utility".into());
    let mut out = CsvSink::create(&path, &digest, &cols)?;
    let points: Vec<Vec<f64>> = if dim == 1 {
        axes[0].iter().map(|x| vec![*x]).collect()
    } else {
        axes[0].iter().flat_map(|a| axes[1].iter().map(move |b| vec![*a, *b])).collect()
    };
    for x in &points {
        let u = engine
            .expected_utility(&DesignMeasure::dirac(x, 1.0).map_err(CliError::core("landscape"))?)
            .map_err(CliError::core("landscape"))?;
        let mut row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
        row.push(format!("{u:e}"));
        out.row(row)?;
    }
    out.finish()?;
    written.push(path);

    if dim == 1 {
        let path = dir.join("landscape_pair.csv");
        let surface = pair_surface(&engine, &axes[0])?;
        let mut out = CsvSink::create(&path, &digest, &["x1", "x2", "utility"].map(String::from))?;
        for (i, a) in axes[0].iter().enumerate() {
            for (j, b) in axes[0].iter().enumerate() {
                out.row([format!("{a:e}"), format!("{b:e}"), format!("{:e}", surface[i * n + j])])?;
            }
        }
        out.finish()?;
        written.push(path);
    }
    println!("landscape on {n} points per axis written to {}", dir.display());
    Ok(written)
}

/// `U(δ_a + δ_b)` on `xs × xs`, row-major. Only the upper triangle is
/// computed; the lower one is mirrored.
pub fn pair_surface(engine: &UtilityEngine, xs: &[f64]) -> Result<Vec<f64>> {
    let n = xs.len();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let m = DesignMeasure::new(1, vec![xs[i], xs[j]], vec![1.0, 1.0]).map_err(CliError::core("landscape"))?;
            let u = engine.expected_utility(&m).map_err(CliError::core("landscape"))?;
            s[i * n + j] = u;
            s[j * n + i] = u;
        }
    }
    Ok(s)
}

fn load_design(path: &Path, engine: &UtilityEngine) -> Result<DesignMeasure> {
    let file = DesignFile::read(path)?;
    let measure = file.measure().map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    if measure.dim() != engine.dim() {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            message: format!("design has dimension {}, the model {}", measure.dim(), engine.dim()),
        });
    }
    measure.check_domain(&engine.map().domain()).map_err(CliError::core("design"))?;
    Ok(measure)
}

/// Optimality certificate of a stored design. Writes `certificate.json`
/// and the first variation on the audit grid to `phi.csv`; with `strict`
/// a violated certificate is an error.
pub fn certify(cfg: &ExperimentConfig, design: &Path, strict: bool) -> Result<OptimalityReport> {
    let engine = experiment::engine(cfg)?;
    let measure = load_design(design, &engine)?;
    let report = certificate(&engine, cfg, &measure)?;
    let dir = out_dir(cfg)?;
    let digest = cfg.digest();
    output::write_json(&dir.join("certificate.json"), &CertificateFile::new(&report, engine.dim(), &digest))?;
    output::write_phi(&dir.join("phi.csv"), &digest, &report)?;
    println!(
        "c = {:.10}, max violation {:.3e}, support residual {:.3e}, max |grad phi| on support {:.3e}: {} at tol {:.0e}",
        report.c,
        report.max_violation,
        report.support_residual,
        report.grad_sup_on_support,
        report.verdict.as_str(),
        report.tol
    );
    if strict && report.verdict == Verdict::Violated {
        return Err(CliError::CheckFailed(format!("certificate violated at tol {:e}", report.tol)));
    }
    Ok(report)
}

/// Certificate with the audit grid and tolerances from `cfg`.
pub fn certificate(engine: &UtilityEngine, cfg: &ExperimentConfig, design: &DesignMeasure) -> Result<OptimalityReport> {
    let domain = engine.map().domain();
    let res = match cfg.certify.audit_resolution {
        0 => certify::default_audit_resolution(domain.dim()),
        n => n,
    };
    let grid = certify::audit_grid(&domain, res);
    certify::optimality_certificate(engine, design, &grid, cfg.certify.tol, cfg.certify.merge_radius)
        .map_err(CliError::core("certificate"))
}

/// Runs every finite-difference suite; any failure is an error.
pub fn gradcheck(cfg: &ExperimentConfig) -> Result<Vec<certify::GradcheckReport>> {
    let engine = experiment::engine(cfg)?;
    let reports = certify::run_gradcheck_suites(&engine, cfg.flow.seed).map_err(CliError::core("gradcheck"))?;
    for r in &reports {
        println!("{}", certify::describe(r));
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::CheckFailed(format!("gradient checks failed: {}", failed.join(", "))));
    }
    Ok(reports)
}

/// Posterior summary for a stored design: `posterior.json` with prior and
/// posterior traces, `posterior_variance.csv` with pointwise variances
/// and, for grids of at most [`FULL_COVARIANCE_LIMIT`] nodes,
/// `posterior_covariance.csv` in long format.
pub fn posterior(cfg: &ExperimentConfig, design: &Path) -> Result<PosteriorSummary> {
    let engine = experiment::engine(cfg)?;
    let measure = load_design(design, &engine)?;
    let post = engine.posterior_covariance(&measure).map_err(CliError::core("posterior"))?;
    let prior = engine.prior().cov();
    let summary = PosteriorSummary {
        trace_prior: prior.trace(),
        trace_posterior: post.trace(),
        utility: engine.expected_utility(&measure).map_err(CliError::core("posterior"))?,
        grid_size: post.nrows(),
        config_sha256: cfg.digest(),
    };
    let dir = out_dir(cfg)?;
    let digest = &summary.config_sha256;
    output::write_json(&dir.join("posterior.json"), &summary)?;

    let grid = engine.map().grid();
    let dim = grid.map_or(0, |g| g.dim());
    let mut cols = vec![String::from("node")];
    cols.extend(output::coord_columns(dim));
    cols.extend(["prior_var", "posterior_var"].map(String::from));
    let mut out = CsvSink::create(&dir.join("posterior_variance.csv"), digest, &cols)?;
    for m in 0..post.nrows() {
        let mut row = vec![m.to_string()];
        if let Some(g) = grid {
            row.extend(g.point(m).iter().map(|v| format!("{v:e}")));
        }
        row.push(format!("{:e}", prior[(m, m)]));
        row.push(format!("{:e}", post[(m, m)]));
        out.row(row)?;
    }
    out.finish()?;

    if post.nrows() <= FULL_COVARIANCE_LIMIT {
        let mut out =
            CsvSink::create(&dir.join("posterior_covariance.csv"), digest, &["row", "col", "value"].map(String::from))?;
        for i in 0..post.nrows() {
            for j in 0..post.ncols() {
                out.row([i.to_string(), j.to_string(), format!("{:e}", post[(i, j)])])?;
            }
        }
        out.finish()?;
    }
    println!(
        "trace prior {:.10}, trace posterior {:.10}, utility {:.10}",
        summary.trace_prior, summary.trace_posterior, summary.utility
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PosteriorSummary {
    pub trace_prior: f64,
    pub trace_posterior: f64,
    pub utility: f64,
    pub grid_size: usize,
    pub config_sha256: String,
}
