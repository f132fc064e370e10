use dissim_core::output::{write_batch, write_q_table, write_run};
use dissim_core::{builtin_presets, run, run_batch, validate_scenario, Scenario};
use std::fs;
use std::path::Path;

fn small() -> Scenario {
    let mut s = Scenario::default();
    s.network.n_nodes = 300;
    s.network.area_side = 200.0;
    s.dissemination.initial_providers = 20;
    s.sim_time = 80.0;
    s.metrics.trace = true;
    s
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn run_files_have_expected_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&small(), 0).unwrap();
    write_run(dir.path(), &out).unwrap();
    let p = dir.path();
    assert_eq!(header(&p.join("chi2.csv")), "t,index,nodal_index,count_index");
    assert_eq!(header(&p.join("providers.csv")), "t,C_t,ideal_C");
    assert_eq!(header(&p.join("provider_time.csv")), "node,tau_hat");
    assert_eq!(header(&p.join("served.csv")), "node,count");
    assert_eq!(header(&p.join("access_dist.csv")), "t,node,meters");
    assert_eq!(header(&p.join("trace.csv")), "time,copy_id,event,node_id,x,y");
    let rows = fs::read_to_string(p.join("providers.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + out.providers.samples.len());
    let tau: Vec<f64> = fs::read_to_string(p.join("provider_time.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(tau.len(), 300);
    let tau0 = out.cache_time;
    assert!(tau.iter().all(|&x| x >= 0.0 && (x / tau0).fract() == 0.0));
    let total: f64 = tau.iter().sum();
    assert_eq!(total, tau0 * out.counters.expiries as f64);
}

#[test]
fn batch_layout_and_bytes_are_stable() {
    let s = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_batch(a.path(), &run_batch(&s, 2, 1).unwrap()).unwrap();
    write_batch(b.path(), &run_batch(&s, 2, 2).unwrap()).unwrap();
    for rel in ["run-000/chi2.csv", "run-001/trace.csv", "aggregate/providers.csv", "aggregate/summary.csv"] {
        let x = fs::read(a.path().join(rel)).unwrap();
        assert!(!x.is_empty(), "{rel}");
        assert_eq!(x, fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
    assert_eq!(header(&a.path().join("aggregate/chi2.csv")), "t,mean,lo,hi,runs");
    assert_eq!(header(&a.path().join("aggregate/providers.csv")), "t,mean,lo,hi,runs,ideal_C");
}

#[test]
fn q_table_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.csv");
    write_q_table(&path, &dissim_core::analytics::q_table(50)).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("x,q"));
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn scenarios_round_trip_through_toml() {
    for preset in builtin_presets() {
        let s = validate_scenario(preset.scenario.clone()).unwrap();
        let back = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(validate_scenario(back).unwrap(), s, "{}", preset.name);
    }
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(Scenario::from_toml("seed = 1\nbogus = 2\n").is_err());
    assert!(Scenario::from_toml("[network]\nn_nodes = 10\nradius = 3\n").is_err());
    let s = Scenario::from_toml("[network]\nn_nodes = 500\n").unwrap();
    assert_eq!(s.network.n_nodes, 500);
    assert_eq!(s.network.area_side, Scenario::default().network.area_side);
}
