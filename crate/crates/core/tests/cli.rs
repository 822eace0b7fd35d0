use std::fs;
use std::path::Path;
use std::process::Command;

fn bepo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bepo"))
}

const SMALL: &str = r#"
[grid]
ni = 9
nj = 9
nk = 9
lambda = 0.01
[sim]
t_end = 20.0
batches = 10
[sweep]
levels = [0.5, 1.0]
"#;

fn run(dir: &Path, experiment: &str, config: &Path, extra: &[&str]) -> std::process::Output {
    bepo()
        .arg(experiment)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(dir)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn rerunning_the_resolved_config_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    let first = tmp.path().join("first");
    let out = run(&first, "serviceability-sweep", &cfg, &["--seed", "11"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "serviceability-sweep");
    assert_eq!(manifest["config"]["sim"]["seed"], 11);
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);

    let second = tmp.path().join("second");
    let out = run(
        &second,
        "serviceability-sweep",
        &first.join("resolved_config.toml"),
        &[],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = fs::read(first.join("serviceability_sweep.csv")).unwrap();
    let b = fs::read(second.join("serviceability_sweep.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("a2,P_pde,P_mc,P_mc_se,spread,residual\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        format!("{SMALL}\n[cross_validate]\na1 = [0.0]\na2 = [1.0]\n"),
    )
    .unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let dir = tmp.path().join(threads);
        let mut c = fs::read_to_string(&cfg).unwrap();
        c = c.replace("t_end = 20.0", "t_end = 20.0\nn_paths = 4");
        let cfg_n = tmp.path().join(format!("c{threads}.toml"));
        fs::write(&cfg_n, c).unwrap();
        let out = run(&dir, "cross-validate", &cfg_n, &["--threads", threads]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push((
            fs::read(dir.join("cross_validate_crossing.csv")).unwrap(),
            fs::read(dir.join("cross_validate_serviceability.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn solve_writes_field_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        format!("{SMALL}\n[observable]\nkind = \"constant\"\nvalue = 2.0\n"),
    )
    .unwrap();
    let out = run(tmp.path(), "solve", &cfg, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(tmp.path().join("solution.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("i,j,k,x,y,z,v"));
    assert_eq!(csv.lines().count(), 1 + 9 * 9 * 9);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap())
            .unwrap();
    assert!((summary["statistic"].as_f64().unwrap() - 2.0).abs() < 1e-8);
    for key in ["spread", "residual", "iterations"] {
        assert!(summary.get(key).is_some(), "{key}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[model]\nalpha = 1.5\n").unwrap();
    let out = run(&tmp.path().join("o"), "solve", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));

    fs::write(&cfg, "[grid]\nsize = 3\n").unwrap();
    let out = run(&tmp.path().join("o"), "solve", &cfg, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("size"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn output_directory_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        SMALL.replace("t_end = 20.0", "t_end = 5.0\ntrajectory_stride = 100"),
    )
    .unwrap();
    let dir = tmp.path().join("env-out");
    let out = bepo()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .env("BEPO_OUTPUT_DIR", &dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let traj = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("t,x,y,z,phase"));
    assert!(dir.join("manifest.json").exists());
}
