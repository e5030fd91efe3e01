use std::path::Path;
use std::process::{Command, Output};

use mmreid::config::PipelineConfig;
use mmreid::dataset::CONFIG_FILE;

fn mmreid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmreid"))
        .args(args)
        .env_remove("MMREID_CONFIG")
        .env_remove("MMREID_SEED")
        .env_remove("MMREID_ADAPTER")
        .env_remove("MMREID_REID")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, users: &str, seconds: &str) {
    let o = mmreid(&["--seed", "5", "simulate", "--users", users, "--duration", seconds, "--out", s(dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn run_and_eval_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    simulate(&data, "2", "3");
    let o = mmreid(&["run", "--data", s(&data), "--out", s(&out), "--dump-signatures"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["association.jsonl", "exposure.jsonl", "pm_heatmap.csv", "report.json", "metrics.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let dumps = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".rdhm"))
        .count();
    assert!(dumps >= 2);

    let scored = tmp.path().join("scored");
    std::fs::create_dir_all(&scored).unwrap();
    let o = mmreid(&["eval", "--data", s(&data), "--predictions", s(&out), "--out", s(&scored)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(scored.join("metrics.csv").exists());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&mmreid(&["--reid", "psychic", "bench"])), 1);
    assert_eq!(code(&mmreid(&["frobnicate"])), 1);
    assert_eq!(code(&mmreid(&["--help"])), 0);
}

#[test]
fn missing_dataset_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mmreid(&["run", "--data", s(&tmp.path().join("nope")), "--out", s(tmp.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unreachable_bridge_without_fallback_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "2", "2");
    let mut cfg = PipelineConfig::load(&data.join(CONFIG_FILE)).unwrap();
    cfg.adapter.fallback_to_analytic = false;
    let cfg_path = tmp.path().join("strict.toml");
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let adapter = format!("bridge:127.0.0.1:{port}");
    let out = tmp.path().join("out");

    let strict = mmreid(&["--config", s(&cfg_path), "--adapter", &adapter, "run", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&strict), 3, "{}", String::from_utf8_lossy(&strict.stderr));

    let lenient = mmreid(&["--adapter", &adapter, "run", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&lenient), 0, "{}", String::from_utf8_lossy(&lenient.stderr));
}

#[test]
fn exec_bridge_serves_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    simulate(&data, "2", "2");
    let adapter = format!("bridge:exec:{} adapter-echo", env!("CARGO_BIN_EXE_mmreid"));
    let o = mmreid(&["--adapter", &adapter, "run", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["adapter"], "bridge");
}

#[test]
fn environment_matches_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let flag = mmreid(&["--seed", "11", "simulate", "--users", "2", "--duration", "1", "--out", s(&a)]);
    assert_eq!(code(&flag), 0);
    let env = Command::new(env!("CARGO_BIN_EXE_mmreid"))
        .args(["simulate", "--users", "2", "--duration", "1", "--out", s(&b)])
        .env("MMREID_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(code(&env), 0);
    for f in [CONFIG_FILE, "pm.csv", "ground_truth.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
