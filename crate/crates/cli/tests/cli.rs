use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn fixit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fixit"))
        .args(args)
        .env_remove("FIXIT_CONFIG")
        .output()
        .expect("run fixit")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("fixit-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

/// One fridge and one box scenario, generated once.
fn dataset() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = scratch("data");
        let o = fixit(&[
            "generate",
            "--out",
            d.to_str().unwrap(),
            "--seed",
            "5",
            "--per-category",
            "1",
            "--categories",
            "fridge,box",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        d
    })
}

fn scenario_file() -> String {
    dataset().join("fridge_0000.json").to_string_lossy().into_owned()
}

#[test]
fn generate_writes_manifest_and_scenarios() {
    let d = dataset();
    assert!(d.join("manifest.json").exists());
    assert!(d.join("fridge_0000.json").exists());
    assert!(d.join("box_0000.json").exists());
}

#[test]
fn oracle_evaluation_is_perfect() {
    let out = scratch("oracle");
    let o = fixit(&[
        "evaluate",
        "--data",
        dataset().to_str().unwrap(),
        "--policy",
        "oracle",
        "--split",
        "train",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let acc = std::fs::read_to_string(out.join("accuracy.csv")).unwrap();
    let mut lines = acc.lines();
    assert_eq!(lines.next().unwrap(), "Method,Refrigerator,Bucket,USB,Kettle,Cart,KitchenPot,Box,All");
    assert_eq!(lines.next().unwrap(), "oracle,100.0,,,,,,100.0,100.0");
    let scores = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 3);
}

#[test]
fn pipeline_files_chain_together() {
    let dir = scratch("chain");
    let s = scenario_file();
    let flows = dir.join("flows");
    let o = fixit(&["flow", "--video", &s, "--out", flows.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read_to_string(flows.join("flow_00.csv")).unwrap();
    assert_eq!(first.lines().next().unwrap(), "idx,dx,dy,dz,match_idx");
    assert!(flows.join("flow_08.csv").exists());

    let labels = dir.join("labels.csv");
    let o = fixit(&[
        "segment",
        "--video",
        &s,
        "--flows",
        flows.to_str().unwrap(),
        "--out",
        labels.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&labels).unwrap();
    assert_eq!(text.lines().next().unwrap(), "idx,label");
    assert_eq!(text.lines().count(), 513);

    let pair = dir.join("pair.csv");
    let o = fixit(&[
        "flow",
        "--src",
        &format!("{s}:frame_00"),
        "--dst",
        &format!("{s}:frame_01"),
        "--out",
        pair.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&pair).unwrap(), first);
}

#[test]
fn fix_and_simulate() {
    let dir = scratch("fix");
    let s = scenario_file();
    let scores = dir.join("scores.csv");
    let o = fixit(&["fix", "--scenario", &s, "--mode", "gt_seg", "--out", scores.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&scores).unwrap().lines().count(), 6);

    let roll = dir.join("rollout.csv");
    let o = fixit(&["simulate", "--scenario", &s, "--choice", "0", "--out", roll.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&roll).unwrap();
    assert_eq!(text.lines().next().unwrap(), "frame,idx,x,y,z");
    assert_eq!(text.lines().count(), 1 + 10 * 512);

    let o = fixit(&["simulate", "--scenario", &s, "--choice", "functional", "--out", roll.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_arguments_exit_2() {
    let s = scenario_file();
    let out = scratch("bad");
    let o = fixit(&["evaluate", "--data", "x", "--mode", "bogus", "--out", "y"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fixit(&["fix", "--scenario", &s, "--threshold", "nope=1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fixit(&["simulate", "--scenario", &s, "--choice", "rotate(", "--out", out.join("r.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = fixit(&["simulate", "--scenario", &s, "--choice", "9", "--out", out.join("r.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluation_errors_exit_1() {
    let out = scratch("err");
    let o = fixit(&["evaluate", "--data", out.join("missing").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest.json"));
}

#[test]
fn config_env_fallback() {
    let dir = scratch("env");
    let cfg = dir.join("c.toml");
    std::fs::write(&cfg, "seed = [").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fixit"))
        .args(["metrics", "--data", "nowhere", "--out", dir.to_str().unwrap()])
        .env("FIXIT_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("c.toml"));
}
