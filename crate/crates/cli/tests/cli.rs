use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use eviprompt::metrics::write_synthetic_dataset;
use eviprompt::synthetic::FixtureParams;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_eviprompt"));
    c.env_remove("EVIPROMPT_BRIDGE_URL");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    dir: tempfile::TempDir,
    config: PathBuf,
}

fn fixture(n: usize, extra: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_dataset(&dir.path().join("data"), 42, n, &FixtureParams::default()).unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(
        &config,
        format!("schema_version = 1\nbackend = \"mock\"\n{extra}\n[io]\nmanifest = \"data/manifest.json\"\noutput_dir = \"out\"\n"),
    )
    .unwrap();
    Fixture { dir, config }
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

#[test]
fn bad_config_key_exits_1_naming_the_key() {
    let f = fixture(1, "[pipeline]\npatch_sise = 4");
    let o = run(&["run", "--config", f.config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("patch_sise"), "{}", stderr(&o));

    let o = run(&["run", "--config", f.dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unreachable_bridge_exits_2_within_connect_timeout() {
    let f = fixture(1, "[bridge]\nconnect_timeout_secs = 1.0");
    let t = Instant::now();
    let o = run(&["eval", "--config", f.config.to_str().unwrap(), "--backend", "http://127.0.0.1:9"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(t.elapsed() < Duration::from_secs(5));

    let o = bin()
        .env("EVIPROMPT_BRIDGE_URL", "http://127.0.0.1:9")
        .args(["run", "--config", f.config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_sweep_axis_exits_1() {
    let f = fixture(1, "");
    let o = run(&["ablate", "--config", f.config.to_str().unwrap(), "--sweep", "learning_rate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown sweep axis"));
}

#[test]
fn run_writes_masks_and_sidecars_deterministically() {
    let f = fixture(3, "");
    let cfg = f.config.to_str().unwrap();
    let out_a = f.dir.path().join("a");
    let out_b = f.dir.path().join("b");
    let o = run(&["run", "--config", cfg, "--out", out_a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["run", "--config", cfg, "--out", out_b.to_str().unwrap(), "--jobs", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let (a, b) = (files(&out_a), files(&out_b));
    assert_eq!(a.keys().filter(|k| k.ends_with("_mask.png")).count(), 3);
    assert_eq!(a.keys().filter(|k| k.starts_with("target_") && k.ends_with(".json")).count(), 3);
    let strip = |m: &BTreeMap<String, Vec<u8>>, from: &Path| {
        m.iter()
            .map(|(k, v)| (k.clone(), String::from_utf8_lossy(v).replace(from.to_str().unwrap(), "OUT").into_bytes()))
            .collect::<BTreeMap<_, _>>()
    };
    assert_eq!(strip(&a, &out_a), strip(&b, &out_b));

    let sidecar: serde_json::Value = serde_json::from_slice(&a["target_000.json"]).unwrap();
    assert_eq!(sidecar["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(sidecar["points"].as_array().unwrap().len(), 3);
    assert_eq!(sidecar["boxes"].as_array().unwrap().len(), 1);
    let u = &sidecar["uncertainty"];
    assert!(u["min"].as_f64().unwrap() <= u["mean"].as_f64().unwrap());
    let summary: serde_json::Value = serde_json::from_slice(&a["run_summary.json"]).unwrap();
    assert_eq!(summary["config_hash"], sidecar["config_hash"]);
}

#[test]
fn run_over_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_synthetic_dataset(&data, 3, 2, &FixtureParams::default()).unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(
        &config,
        "schema_version = 1\n[io]\ninput_dir = \"data\"\nreference_image = \"data/reference.png\"\nreference_mask = \"data/reference_mask.png\"\nclass_id = 255\noutput_dir = \"masks\"\n",
    )
    .unwrap();
    let o = run(&["run", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = files(&dir.path().join("masks"));
    let masks: Vec<&String> = out.keys().filter(|k| k.ends_with("_mask.png")).collect();
    assert_eq!(masks, ["target_000_mask.png", "target_001_mask.png"]);
}

#[test]
fn per_image_failures_exit_3_and_keep_partial_results() {
    let f = fixture(2, "");
    std::fs::write(f.dir.path().join("data/target_001.png"), b"not a png").unwrap();
    let o = run(&["run", "--config", f.config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let out = files(&f.dir.path().join("out"));
    assert!(out.contains_key("target_000_mask.png"));
    assert!(!out.contains_key("target_001_mask.png"));
    let summary: serde_json::Value = serde_json::from_slice(&out["run_summary.json"]).unwrap();
    assert!(summary["entries"][1]["error"].is_string());
}

#[test]
fn eval_reports_carry_config_hash() {
    let f = fixture(2, "");
    let cfg = f.config.to_str().unwrap();
    let ours = run(&["eval", "--config", cfg]);
    assert!(ours.status.success(), "{}", stderr(&ours));
    let oracle_cfg = f.dir.path().join("oracle.toml");
    let text = std::fs::read_to_string(&f.config).unwrap().replace("backend = \"mock\"", "backend = \"mock\"\nmethod = \"oracle\"\n[pipeline]\nn_points = 1");
    std::fs::write(&oracle_cfg, text).unwrap();
    let oracle = run(&["eval", "--config", oracle_cfg.to_str().unwrap()]);
    assert!(oracle.status.success(), "{}", stderr(&oracle));

    let out = files(&f.dir.path().join("out"));
    for method in ["eviprompt", "oracle"] {
        let report: serde_json::Value = serde_json::from_slice(&out[&format!("eval_{method}.json")]).unwrap();
        let hash = report["config_hash"].as_str().unwrap().to_owned();
        assert_eq!(hash.len(), 64);
        let table = String::from_utf8(out[&format!("eval_{method}.txt")].clone()).unwrap();
        assert!(table.contains("DSC (%)") && table.contains("NSD@2 (%)"));
        assert!(table.contains(&hash));
        assert!(table.lines().nth(1).unwrap().starts_with(method));
        assert_eq!(report["images"].as_array().unwrap().len(), 2);
    }
    assert!(String::from_utf8_lossy(&ours.stdout).contains("eviprompt"));
}

#[test]
fn ablation_sweeps_have_one_row_per_setting() {
    let f = fixture(1, "");
    let cfg = f.config.to_str().unwrap();
    for (axis, rows) in [("patch_size", 6), ("anchors", 5), ("component", 4)] {
        let o = run(&["ablate", "--config", cfg, "--sweep", axis]);
        assert!(o.status.success(), "{axis}: {}", stderr(&o));
        let csv = std::fs::read_to_string(f.dir.path().join(format!("out/ablate_{axis}.csv"))).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), rows + 1, "{csv}");
        assert!(lines[0].starts_with("axis,setting,"));
        assert!(lines[1..].iter().all(|l| l.starts_with(axis)));
    }
    let o = run(&["ablate", "--config", cfg, "--sweep", "anchors", "--values", "2x3,4x4"]);
    assert!(o.status.success());
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.contains(",2x3,") && csv.contains(",4x4,"));
    let o = run(&["ablate", "--config", cfg, "--sweep", "component", "--values", "no_magic"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synth_writes_a_ready_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--out", dir.path().to_str().unwrap(), "--n", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["eval", "--config", dir.path().join("config.toml").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}
