use std::path::Path;
use std::process::{Command, Output};

const FREE: &str = r#"
seed = 5

[cross_section]
channels = 1
components = [{ kind = "circle", radius = 1.0, resolution = 32 }]

[discretization]
x_max = 6.0
nodes = 120

[smatrix]
lambda_min = 1.0
lambda_max = 3.0
points = 5
cross_check = true

[lap]
lambda = 0.5
nodes = 80

[mourre]
lambda = 1.0
delta = 0.2
nodes = 600

[timedelay]
lambda_bar = 2.0
half_width = 0.8
radii = [5.0, 7.0, 10.0, 14.0]
"#;

const SLOW_DECAY: &str = r#"
[cross_section]
channels = 1
components = [{ kind = "circle", radius = 1.0, resolution = 32 }]

[perturbation.short_range]
mu = 0.5
terms = [{ target = "potential", row = 0, col = 0, amplitude = 0.5, kind = "power-tail", center = 0.0, power = 0.5 }]

[discretization]
x_max = 6.0
nodes = 120
"#;

fn cylscat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cylscat")).current_dir(dir).args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn scenario(dir: &Path, name: &str, body: &str) -> String {
    std::fs::write(dir.join(name), body).unwrap();
    name.to_string()
}

#[test]
fn free_run_passes_with_identity_smatrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "free.toml", FREE);
    let o = cylscat(dir.path(), &["run", "--config", &cfg, "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/smatrix.csv")).unwrap();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(csv.as_bytes());
    let mut n = 0;
    for row in r.records() {
        let row = row.unwrap();
        let (re, im): (f64, f64) = (row[5].parse().unwrap(), row[6].parse().unwrap());
        let diagonal = row[1] != row[3] && row[2] == row[4];
        let want = if diagonal { 1.0 } else { 0.0 };
        assert!((re - want).abs() <= 1e-8 && im.abs() <= 1e-8, "{row:?}");
        n += 1;
    }
    assert_eq!(n, 2 * 5 * 4);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    let hash = manifest["scenario_hash"].as_str().unwrap();
    for f in manifest["files"].as_array().unwrap() {
        let body = std::fs::read_to_string(dir.path().join("out").join(f.as_str().unwrap())).unwrap();
        assert!(body.contains(hash), "{f} lacks the scenario hash");
    }
    assert!(manifest["stages"].as_array().unwrap().iter().all(|s| s["status"] == "pass"));

    let o = cylscat(dir.path(), &["report", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let report = std::fs::read_to_string(dir.path().join("out/report.md")).unwrap();
    assert!(!report.contains("Missing"), "{report}");
    for svg in ["unitarity.svg", "lap_norms.svg", "mourre.svg", "propagate.svg", "timedelay.svg"] {
        assert!(dir.path().join("out").join(svg).exists(), "{svg}");
    }
}

#[test]
fn reruns_are_bit_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "free.toml", FREE);
    let a = cylscat(dir.path(), &["run", "--stages", "spectrum,smatrix,lap", "--config", &cfg, "--out", "a"]);
    let b = cylscat(dir.path(), &["run", "--stages", "spectrum,smatrix,lap", "--config", &cfg, "--out", "b", "--jobs", "1"]);
    assert_eq!(a.status.code(), Some(0), "{}", text(&a));
    assert_eq!(b.status.code(), Some(0), "{}", text(&b));
    for f in ["spectrum.csv", "critical.csv", "smatrix.csv", "crosscheck.csv", "lap.csv", "lap_cauchy.csv"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn slowly_decaying_scenarios_are_refused_a_time_delay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "slow.toml", SLOW_DECAY);
    let o = cylscat(dir.path(), &["timedelay", "--config", &cfg, "--out", "out"]);
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
    assert!(text(&o).contains("mu > 4"), "{}", text(&o));
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("refused"));
}

#[test]
fn time_delay_needs_the_smatrix_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "free.toml", FREE);
    let o = cylscat(dir.path(), &["timedelay", "--config", &cfg, "--out", "out"]);
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
    assert!(text(&o).contains("smatrix"), "{}", text(&o));
    // A grid computed for another scenario does not count.
    let other = scenario(dir.path(), "other.toml", &FREE.replace("seed = 5", "seed = 6"));
    assert_eq!(cylscat(dir.path(), &["smatrix", "--config", &other, "--out", "out"]).status.code(), Some(0));
    let o = cylscat(dir.path(), &["timedelay", "--config", &cfg, "--out", "out"]);
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
}

#[test]
fn schema_errors_exit_with_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "bad.toml", &FREE.replace("nodes = 120", "nodes = \"many\""));
    let o = cylscat(dir.path(), &["spectrum", "--config", &cfg, "--out", "out"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("discretization.nodes"), "{}", text(&o));
    let o = cylscat(dir.path(), &["spectrum", "--out", "out"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}

#[test]
fn energies_on_a_threshold_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let body = FREE.replace("channels = 1", "channels = 2").replace("points = 5", "points = 3");
    let cfg = scenario(dir.path(), "edge.toml", &body);
    let o = cylscat(dir.path(), &["smatrix", "--config", &cfg, "--out", "out"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}

#[test]
fn report_flags_missing_stages() {
    let dir = tempfile::tempdir().unwrap();
    let o = cylscat(dir.path(), &["report", "--out", "."]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let report = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.matches("**Missing:**").count() >= 6, "{report}");
}
