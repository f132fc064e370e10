use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dissim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dissim")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn presets_lists_every_builtin() {
    let o = dissim(&["presets"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for p in dissim_core::builtin_presets() {
        assert!(text.contains(p.name), "{}", p.name);
    }
}

#[test]
fn unknown_preset_and_flag_exit_one_with_usage() {
    let o = dissim(&["run", "--preset", "no-such-preset"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"));
    let o = dissim(&["run", "--frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(code(&dissim(&[])), 1);
}

#[test]
fn validate_names_the_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[dissemination]\ninitial_providers = 0\n").unwrap();
    let o = dissim(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("initial_providers"), "{}", stderr(&o));
}

#[test]
fn validate_accepts_policy_override() {
    let o = dissim(&["validate", "--preset", "paper-sec5-uniform-static", "--set", "policy=RWD"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = dissim_core::Scenario::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(s.dissemination.policy, dissim_core::dissemination::Policy::RandomWalk);
}

#[test]
fn invalid_override_never_writes_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = dissim(&["run", "--set", "network.radio_range=900", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("radio_range"));
    assert!(!out.exists());
    let o = dissim(&["run", "--set", "network.antenna=3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
}

#[test]
fn qpdf_table_integrates_to_one() {
    let o = dissim(&["qpdf", "--bins", "200"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,q"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (x, q) = l.split_once(',').unwrap();
            (x.parse().unwrap(), q.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 200);
    let h = std::f64::consts::SQRT_2 / 200.0;
    for (i, (x, _)) in rows.iter().enumerate() {
        assert!((x - (i as f64 + 0.5) * h).abs() < 1e-12);
    }
    let integral: f64 = rows.iter().map(|r| r.1 * h).sum();
    assert!((integral - 1.0).abs() < 1e-4, "{integral}");
}

#[test]
fn qpdf_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.csv");
    assert_eq!(code(&dissim(&["qpdf", "--bins", "10", "--out", path.to_str().unwrap()])), 0);
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 11);
}

fn assert_run_files(dir: &Path) {
    for f in ["chi2.csv", "providers.csv", "provider_time.csv", "served.csv", "access_dist.csv"] {
        assert!(dir.join(f).is_file(), "{}", dir.join(f).display());
    }
}

#[test]
fn run_writes_resolved_scenario_and_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r1");
    let o = dissim(&[
        "run", "--preset", "paper-sec5-uniform-static", "--seed", "7", "--set", "sim_time=100",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_run_files(&out);
    let s = dissim_core::Scenario::load(&out.join("scenario.resolved")).unwrap();
    assert_eq!(s.seed, 7);
    assert_eq!(s.sim_time, 100.0);
}

#[test]
fn batch_is_identical_across_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, par) in [(&a, "1"), (&b, "3")] {
        let o = dissim(&[
            "batch", "--preset", "paper-sec5-rwp-mobile", "--runs", "3", "--parallel", par,
            "--set", "sim_time=60", "--set", "n_nodes=500", "--set", "network.area_side=250",
            "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for run in ["run-000", "run-001", "run-002"] {
        assert_run_files(&a.join(run));
    }
    for rel in ["run-002/chi2.csv", "aggregate/providers.csv", "aggregate/access_dist.csv", "scenario.resolved"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn runtime_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = dissim(&["run", "--set", "sim_time=10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
