use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = r#"
model = "sloc"
active_param = "b"
init = [0.35, -12.0]
[params]
b = 0.55
[domain]
x_min = -1.0
x_max = 1.0
n_nodes = 5
[path]
t_end = 40.0
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocpde")).args(args).output().unwrap()
}

fn config(dir: &Path, extra: &str) -> String {
    let f = dir.join("run.toml");
    fs::write(&f, format!("{BASE}{extra}")).unwrap();
    f.display().to_string()
}

fn rows(csv: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

/// Continue the flat branch to a user point at `b = 0.65`; returns its file.
fn user_point(dir: &Path) -> String {
    let cfg = config(dir, "[continuation]\nds_init = 0.1\nds_max = 0.3\nmax_steps = 40\nusrlam = [0.65]\nlam_max = 0.66\n");
    let out = dir.join("branch");
    let o = run(&["css-cont", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&out.join("branch.csv"));
    let user = r.iter().find(|r| r[1] == "user").expect("user point");
    out.join(&user[7]).display().to_string()
}

#[test]
fn one_step_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[continuation]\nmax_steps = 1\nds_init = 0.01\n");
    let out = dir.path().join("b");
    let o = run(&["css-cont", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let r = rows(&out.join("branch.csv"));
    assert_eq!(r.len(), 2);
    for rec in &r {
        assert!(out.join(&rec[7]).exists());
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("MaxSteps"));
}

#[test]
fn window_excluding_start() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[continuation]\nlam_max = 0.5\n");
    let out = dir.path().join("b");
    let o = run(&["css-cont", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(rows(&out.join("branch.csv")).len(), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ParameterWindow"));
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["css-cont", "--config", dir.path().join("none.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = config(dir.path(), "[continuation]\nds_min = -1.0\n");
    let o = run(&["css-cont", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "model = \"sloc\"\ncolour = 3\n").unwrap();
    let o = run(&["css-cont", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn branch_switch_needs_a_bifurcation_point() {
    let dir = tempfile::tempdir().unwrap();
    let pt = user_point(dir.path());
    let o = run(&["branch-switch", "--bif", &pt, "--ds", "0.05", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not a bifurcation point"));
}

#[test]
fn value_spectral_and_paths() {
    let dir = tempfile::tempdir().unwrap();
    let pt = user_point(dir.path());

    let o = run(&["value", "--point", &pt]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    let get = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line.split('=').nth(1).unwrap().trim().parse().unwrap()
    };
    let (jca, jdisc) = (get("j_ca"), get("j_disc"));
    assert!((jdisc - jca / 0.03).abs() < 1e-9 * jdisc.abs());

    let spec = dir.path().join("spec");
    let o = run(&["spectral", "--point", &pt, "--out", spec.to_str().unwrap()]);
    assert!(o.status.success());
    let summary = fs::read_to_string(spec.join("spectrum.txt")).unwrap();
    assert!(summary.contains("defect = 0\n"));
    assert!(summary.contains("spp = true\n"));
    assert_eq!(rows(&spec.join("spectrum.csv")).len(), 10);

    let isc = dir.path().join("isc");
    let o = run(&["isc-nat", "--config", dir.path().join("run.toml").to_str().unwrap(), "--from", &pt, "--to", &pt, "--out", isc.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&isc.join("alpha_value.csv"));
    assert_eq!(r.len(), 6);
    let last: f64 = r[5][2].parse().unwrap();
    let o = run(&["value", "--path", isc.join("path_last").to_str().unwrap()]);
    let shown: f64 = String::from_utf8_lossy(&o.stdout).trim().trim_start_matches("value = ").parse().unwrap();
    assert_eq!(shown, last);
    // the trivial path's value is the steady-state value over [0, T]
    assert!((last - jca * -(-0.03f64 * 40.0).exp_m1() / 0.03).abs() < 1e-8 * last.abs());
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[continuation]\nmax_steps = 8\nusrlam = [0.6]\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["css-cont", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 2);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}
