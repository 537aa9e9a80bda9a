use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn oedflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oedflow")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_torus(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--preset", "torus", "-o", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    oedflow(&args)
}

#[test]
fn run_writes_stamped_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_torus(tmp.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let design: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("design.json")).unwrap()).unwrap();
    let digest = design["config_sha256"].as_str().unwrap().to_owned();
    assert_eq!(digest.len(), 64);
    let headers = [
        ("trajectory.csv", "iter,ensemble,particle,x0"),
        ("metrics.csv", "iter,utility,r_v,r_r,max_disp"),
        ("ensembles.csv", "iter,ensemble,variance,mean_x0"),
        ("mean_distances.csv", "iter,a,b,sq_dist"),
    ];
    for (file, header) in headers {
        let text = fs::read_to_string(tmp.path().join(file)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), format!("# config-sha256: {digest}"), "{file}");
        assert_eq!(lines.next().unwrap(), header, "{file}");
        // one ensemble, so no mean distances
        assert_eq!(lines.next().is_some(), file != "mean_distances.csv", "{file}");
    }
    let metrics = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    let last = metrics.lines().last().unwrap();
    let u: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((u + 4.0 / 3.0).abs() < 1e-6, "{u}");
}

#[test]
fn seeded_runs_are_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(code(&run_torus(a.path(), &["--seed", "5"])), 0);
    assert_eq!(code(&run_torus(b.path(), &["--seed", "5"])), 0);
    for f in ["trajectory.csv", "metrics.csv", "design.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_round_trips_through_print_config() {
    let tmp = tempfile::tempdir().unwrap();
    let first = oedflow(&["run", "--preset", "poisson_b2", "--set", "flow.seed=9", "--print-config"]);
    assert_eq!(code(&first), 0);
    let path = tmp.path().join("expanded.toml");
    fs::write(&path, &first.stdout).unwrap();
    let second = oedflow(&["run", "--config", path.to_str().unwrap(), "--print-config"]);
    assert_eq!(code(&second), 0, "{}", stderr(&second));
    assert_eq!(first.stdout, second.stdout);
    assert!(String::from_utf8_lossy(&first.stdout).contains("seed = 9"));
}

#[test]
fn config_errors_exit_2_with_key_path() {
    let out = oedflow(&["run", "--preset", "torus", "--set", "flow.step_size=-1.0", "--print-config"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("flow.step_size"), "{}", stderr(&out));

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[flow]\nnum_partcles = 10\n").unwrap();
    let out = oedflow(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("flow"), "{}", stderr(&out));

    let out = oedflow(&["run", "--preset", "poisson_b2", "--set", "flow.num_particles=121"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn missing_design_file_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = oedflow(&[
        "certify",
        "--preset",
        "torus",
        "--design",
        missing.to_str().unwrap(),
        "-o",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn strict_certification_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_torus(tmp.path(), &[])), 0);
    let design_path = tmp.path().join("design.json");
    let dir = tmp.path().to_str().unwrap();
    let good =
        oedflow(&["certify", "--preset", "torus", "--design", design_path.to_str().unwrap(), "--strict", "-o", dir]);
    assert_eq!(code(&good), 0, "{}", stderr(&good));
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["verdict"], "certified");
    assert!(tmp.path().join("phi.csv").exists());

    let mut design: serde_json::Value = serde_json::from_str(&fs::read_to_string(&design_path).unwrap()).unwrap();
    let positions = design["positions"].as_array_mut().unwrap();
    positions[0][0] = serde_json::json!(positions[0][0].as_f64().unwrap() + 0.05);
    positions[1][0] = serde_json::json!(positions[1][0].as_f64().unwrap() + 0.05);
    let bad_path = tmp.path().join("perturbed.json");
    fs::write(&bad_path, serde_json::to_string(&design).unwrap()).unwrap();
    let bad = oedflow(&["certify", "--preset", "torus", "--design", bad_path.to_str().unwrap(), "--strict", "-o", dir]);
    assert_eq!(code(&bad), 4, "{}", stderr(&bad));
    let lenient = oedflow(&["certify", "--preset", "torus", "--design", bad_path.to_str().unwrap(), "-o", dir]);
    assert_eq!(code(&lenient), 0);
}

#[test]
fn gradcheck_passes_on_torus() {
    let out = oedflow(&["gradcheck", "--preset", "torus"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.ends_with(" ok")).count(), 5, "{text}");
}

#[test]
fn landscape_pair_surface_is_symmetric() {
    let tmp = tempfile::tempdir().unwrap();
    let out = oedflow(&[
        "landscape",
        "--preset",
        "poisson_b2",
        "--set",
        "model.grid_points=40",
        "--set",
        "outputs.landscape_grid=21",
        "-o",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut reader =
        csv::ReaderBuilder::new().comment(Some(b'#')).from_path(tmp.path().join("landscape_pair.csv")).unwrap();
    let mut values: HashMap<(String, String), f64> = HashMap::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        values.insert((rec[0].to_owned(), rec[1].to_owned()), rec[2].parse().unwrap());
    }
    assert_eq!(values.len(), 21 * 21);
    for ((a, b), u) in &values {
        let v = values[&(b.clone(), a.clone())];
        assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
    }
    assert!(tmp.path().join("landscape_single.csv").exists());
}

#[test]
fn posterior_summary_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let sets = ["--set", "model.grid_points=30", "--set", "flow.num_iterations=20"];
    let mut args = vec!["run", "--preset", "poisson_b2", "-o", dir];
    args.extend_from_slice(&sets);
    assert_eq!(code(&oedflow(&args)), 0);
    let design = tmp.path().join("design.json");
    let mut args = vec!["posterior", "--preset", "poisson_b2", "--design", design.to_str().unwrap(), "-o", dir];
    args.extend_from_slice(&sets);
    let out = oedflow(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("posterior.json")).unwrap()).unwrap();
    let (prior, post) = (summary["trace_prior"].as_f64().unwrap(), summary["trace_posterior"].as_f64().unwrap());
    assert!(post < prior && post > 0.0);
    assert!((summary["utility"].as_f64().unwrap() + post).abs() < 1e-9 * post);
    assert!(tmp.path().join("posterior_covariance.csv").exists());
}
