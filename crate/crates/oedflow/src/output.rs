//! File formats. Every CSV starts with a `# config-sha256: <hex>` line
//! followed by a header row; JSON documents carry the same digest under
//! `config_sha256`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use oedflow_core::certify::OptimalityReport;
use oedflow_core::design::{cluster_points, DesignMeasure};
use oedflow_core::flow::FlowRecord;

use crate::{CliError, Result};

pub const DIGEST_PREFIX: &str = "# config-sha256: ";

pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path, digest: &str, header: &[String]) -> Result<Self> {
        let file = File::create(path).map_err(CliError::io(path))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "{DIGEST_PREFIX}{digest}").map_err(CliError::io(path))?;
        let mut writer = csv::Writer::from_writer(buf);
        writer.write_record(header).map_err(|e| csv_error(path, e))?;
        Ok(CsvSink { path: path.to_path_buf(), writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| csv_error(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(CliError::io(&self.path))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Format { path: path.to_path_buf(), message: e.to_string() }
}

/// `x0`, `x1`, ... for a `dim`-dimensional point.
pub fn coord_columns(dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("x{k}")).collect()
}

fn header(lead: &[&str], dim: usize, tail: &[&str]) -> Vec<String> {
    lead.iter().map(|s| s.to_string()).chain(coord_columns(dim)).chain(tail.iter().map(|s| s.to_string())).collect()
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// `iter, ensemble, particle, x0[, x1]` over the stored snapshots.
pub fn write_trajectory(path: &Path, digest: &str, rec: &FlowRecord) -> Result<()> {
    let dim = rec.final_particles.dim();
    let mut out = CsvSink::create(path, digest, &header(&["iter", "ensemble", "particle"], dim, &[]))?;
    for s in &rec.snapshots {
        let e = &s.particles;
        for b in 0..e.batch() {
            for i in 0..e.per_ensemble() {
                let x = e.particle(b, i).expect("index in range");
                let mut row = vec![s.iteration.to_string(), b.to_string(), i.to_string()];
                row.extend(x.iter().map(|v| num(*v)));
                out.row(row)?;
            }
        }
    }
    out.finish()
}

/// `iter, utility, r_v, r_r, max_disp` for every iteration.
pub fn write_metrics(path: &Path, digest: &str, rec: &FlowRecord) -> Result<()> {
    let cols = ["iter", "utility", "r_v", "r_r", "max_disp"].map(String::from);
    let mut out = CsvSink::create(path, digest, &cols)?;
    for t in 0..rec.len() {
        out.row([t.to_string(), num(rec.utility[t]), num(rec.r_v[t]), num(rec.r_r[t]), num(rec.max_disp[t])])?;
    }
    out.finish()
}

/// Per-ensemble `variance` and mean over the stored snapshots.
pub fn write_ensembles(path: &Path, digest: &str, rec: &FlowRecord) -> Result<()> {
    let dim = rec.final_particles.dim();
    let cols: Vec<String> = ["iter", "ensemble", "variance"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..dim).map(|k| format!("mean_x{k}")))
        .collect();
    let mut out = CsvSink::create(path, digest, &cols)?;
    for s in &rec.snapshots {
        let e = &s.particles;
        for b in 0..e.batch() {
            let mut row =
                vec![s.iteration.to_string(), b.to_string(), num(e.ensemble_variance(b).expect("index in range"))];
            row.extend(e.ensemble_mean(b).expect("index in range").iter().map(|v| num(*v)));
            out.row(row)?;
        }
    }
    out.finish()
}

/// Squared distances between ensemble means, `iter, a, b, sq_dist` for
/// `a < b`, over the stored snapshots.
pub fn write_mean_distances(path: &Path, digest: &str, rec: &FlowRecord) -> Result<()> {
    let cols = ["iter", "a", "b", "sq_dist"].map(String::from);
    let mut out = CsvSink::create(path, digest, &cols)?;
    for s in &rec.snapshots {
        let d = s.particles.pairwise_mean_distances();
        for a in 0..d.nrows() {
            for b in a + 1..d.ncols() {
                out.row([s.iteration.to_string(), a.to_string(), b.to_string(), num(d[(a, b)])])?;
            }
        }
    }
    out.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEntry {
    pub center: Vec<f64>,
    pub mass: f64,
    pub atoms: usize,
}

/// Stored design measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub dim: usize,
    pub mass: f64,
    /// One row per atom.
    pub positions: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Ensemble index per atom, when the design came from a flow.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ensemble: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clusters: Vec<ClusterEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
}

impl DesignFile {
    pub fn from_measure(measure: &DesignMeasure, merge_radius: f64) -> Result<Self> {
        let d = measure.dim();
        let clusters = cluster_points(measure.positions(), d, merge_radius)
            .map_err(CliError::core("clustering"))?
            .into_iter()
            .map(|c| ClusterEntry {
                mass: c.members.iter().map(|&i| measure.weights()[i]).sum(),
                atoms: c.members.len(),
                center: c.center,
            })
            .collect();
        Ok(DesignFile {
            dim: d,
            mass: measure.total_mass(),
            positions: (0..measure.len()).map(|i| measure.point(i).to_vec()).collect(),
            weights: measure.weights().to_vec(),
            ensemble: Vec::new(),
            utility: None,
            clusters,
            config_sha256: None,
        })
    }

    pub fn measure(&self) -> oedflow_core::Result<DesignMeasure> {
        let mut flat = Vec::with_capacity(self.positions.len() * self.dim);
        for p in &self.positions {
            if p.len() != self.dim {
                return Err(oedflow_core::Error::DimensionMismatch { expected: self.dim, found: p.len() });
            }
            flat.extend_from_slice(p);
        }
        DesignMeasure::new(self.dim, flat, self.weights.clone())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Format { path: path.to_path_buf(), message: e.to_string() })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub c: f64,
    pub max_violation: f64,
    pub support_residual: f64,
    pub grad_sup_on_support: f64,
    pub verdict: String,
    pub tol: f64,
    pub support: Vec<Vec<f64>>,
    pub config_sha256: String,
}

impl CertificateFile {
    pub fn new(r: &OptimalityReport, dim: usize, digest: &str) -> Self {
        CertificateFile {
            c: r.c,
            max_violation: r.max_violation,
            support_residual: r.support_residual,
            grad_sup_on_support: r.grad_sup_on_support,
            verdict: r.verdict.as_str().to_string(),
            tol: r.tol,
            support: r.support.chunks(dim).map(<[f64]>::to_vec).collect(),
            config_sha256: digest.to_string(),
        }
    }
}

/// `x0[, x1], phi, phi_minus_c` on the audit points.
pub fn write_phi(path: &Path, digest: &str, r: &OptimalityReport) -> Result<()> {
    let dim = r.field.dim;
    let mut out = CsvSink::create(path, digest, &header(&[], dim, &["phi", "phi_minus_c"]))?;
    for (x, phi) in r.audit_points.chunks(dim).zip(&r.field.values) {
        let mut row: Vec<String> = x.iter().map(|v| num(*v)).collect();
        row.push(num(*phi));
        row.push(num(phi - r.c));
        out.row(row)?;
    }
    out.finish()
}

/// Reads the digest line of a CSV written by [`CsvSink`].
pub fn read_digest(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    text.lines()
        .next()
        .and_then(|l| l.strip_prefix(DIGEST_PREFIX))
        .map(str::to_string)
        .ok_or_else(|| CliError::Format { path: path.to_path_buf(), message: "missing digest line".into() })
}
