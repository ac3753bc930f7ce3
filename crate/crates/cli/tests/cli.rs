use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npv-replica")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn figure1_defaults_and_determinism() {
    let a = run(&["figure1"]);
    assert!(a.status.success());
    let text = stdout(&a);
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 30);
    let first: Vec<f64> = rows[0].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first[0], 1.0);
    assert!((first[2] - 13.0 / 70.0).abs() < 1e-9);
    for row in &rows {
        let v: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[1] > v[2], "{row}");
    }
    let b = run(&["figure1", "--workers", "1"]);
    assert_eq!(a.stdout, b.stdout, "output must not depend on worker count");
}

#[test]
fn converge_is_byte_identical_across_worker_counts() {
    let args = ["converge", "--n-list", "50,500", "--seeds", "6", "--noise", "uniform"];
    let a = run(&[&args[..], &["--workers", "1"]].concat());
    let b = run(&[&args[..], &["--workers", "4"]].concat());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("# noise = \"uniform\""));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fig.toml");
    std::fs::write(&cfg, "t-max = 5\ntau-norm = 2.0\n").unwrap();
    let out_path = dir.path().join("fig.csv");
    let out = run(&["figure1", "--config", cfg.to_str().unwrap(), "--t-max", "3", "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(data_rows(&text).len(), 3);
    assert!(text.contains("# tau-norm = 2.0"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "t-max = 5\nunknown-key = 1\n").unwrap();
    assert_eq!(run(&["figure1", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["region", "--r-step", "0"]).status.code(), Some(2));
    assert_eq!(run(&["converge", "--noise", "cauchy"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_root_exits_with_three() {
    let out = run(&["figure1", "--alpha", "0.01", "--gamma", "0.01"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("T=1"));
}

#[test]
fn region_matches_figure1_roots() {
    let roots = stdout(&run(&["figure1", "--t-max", "2"]));
    let roots: Vec<Vec<f64>> =
        data_rows(&roots).iter().map(|r| r.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    let grid = stdout(&run(&["region", "--t-max", "2", "--r-step", "0.01"]));
    for row in data_rows(&grid) {
        let parts: Vec<&str> = row.split(',').collect();
        let t: usize = parts[0].parse().unwrap();
        let r: f64 = parts[1].parse().unwrap();
        let (r_c, r_c_or) = (roots[t - 1][1], roots[t - 1][2]);
        let expected = if r < r_c_or { "a" } else if r < r_c { "b" } else { "c" };
        assert_eq!(parts[2], expected, "{row}");
    }
}

fn footer(text: &str, key: &str) -> f64 {
    let prefix = format!("# {key} = ");
    text.lines().find_map(|l| l.strip_prefix(prefix.as_str())).unwrap().parse().unwrap()
}

#[test]
fn allocate_from_ensemble_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ens.csv");
    std::fs::write(&path, "c,lambda,v\n0.1,0.5,1\n0.4,1.2,0.5\n0.25,0.0,2\n0.3,0.9,1\n").unwrap();
    let out = run(&["allocate", "--ensemble", path.to_str().unwrap(), "--verify", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(data_rows(&text).len(), 4);
    let w: f64 = data_rows(&text).iter().map(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((w - 4.0).abs() < 1e-9);
    assert!(footer(&text, "budget_residual") < 1e-9);
    assert!(footer(&text, "concentration_residual").abs() < 1e-9);
    assert!(footer(&text, "oracle_gap") < 1e-8);
}

#[test]
fn allocate_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.csv");
    std::fs::write(&path, "c,lambda,v\n0.1,0.5,1\n0.4,x,0.5\n").unwrap();
    let out = run(&["allocate", "--ensemble", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert_eq!(run(&["allocate", "--ensemble", Path::new("/no/such/file.csv").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn allocate_identical_projects_get_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    std::fs::write(&path, "c,lambda,v\n0.2,0.8,0\n0.2,0.8,0\n").unwrap();
    let text = stdout(&run(&["allocate", "--ensemble", path.to_str().unwrap(), "--m", "2.5"]));
    for row in data_rows(&text) {
        assert_eq!(row.rsplit(',').next().unwrap(), "2.5");
    }
}
