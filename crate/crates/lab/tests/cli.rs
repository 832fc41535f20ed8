use std::path::{Path, PathBuf};
use std::process::Command;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("zsp-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn zsp(args: &[&str], config: &str, dir: &Path) -> std::process::Output {
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_zsp"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out.json"))
        .output()
        .unwrap()
}

#[test]
fn identities_success_writes_report_and_sidecar() {
    let dir = scratch("ok");
    let out = zsp(&["identities"], r#"{"identities": {"instances": 5}}"#, &dir);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("out.json")).unwrap()).unwrap();
    assert_eq!(report["all_passed"], true);
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("out.json.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["experiment"], "identities");
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn injected_fault_exits_one() {
    let dir = scratch("fault");
    let out = zsp(&["identities"], r#"{"identities": {"instances": 5, "fault": "msc_dual"}}"#, &dir);
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn invalid_config_exits_two() {
    let dir = scratch("bad");
    for config in [r#"{"replicates": 0}"#, r#"{"no_such_field": 1}"#, "not json"] {
        let out = zsp(&["dependence"], config, &dir);
        assert_eq!(out.status.code(), Some(2), "{config}");
        assert!(!out.stderr.is_empty());
    }
    std::fs::remove_dir_all(dir).unwrap();
}
