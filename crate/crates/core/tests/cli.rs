//! The binary end to end: synth, segment in both window modes, config files.

use std::path::Path;
use std::process::Command;

use segstitch::app::{Manifest, MANIFEST};
use segstitch::io::{decode_label_png, RunLengthLabels, TensorContainer};
use segstitch::metrics::EvalReport;

fn run(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_segstitch")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_slice(&std::fs::read(dir.join(MANIFEST)).unwrap()).unwrap()
}

#[test]
fn synth_then_segment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let again = tmp.path().join("again");
    let d = data.to_str().unwrap();
    run(&["--seed", "21", "synth", "--out", d, "--n-train", "2", "--n-test", "2"]);
    run(&["--seed", "21", "synth", "--out", again.to_str().unwrap(), "--n-train", "2", "--n-test", "2"]);
    let m = manifest(&data);
    assert_eq!(m.checksum, manifest(&again).checksum);
    assert_eq!(m.scenes.len(), 4);
    let pi = TensorContainer::load(data.join("test/00001/truth_pi.mimg")).unwrap();
    assert_eq!(pi.dims[1..], [80, 80]);

    let test = data.join("test");
    let over = tmp.path().join("over");
    let stdout = run(&["--seed", "21", "segment", "--input", test.to_str().unwrap(), "--out", over.to_str().unwrap(), "--sweep", "100,500,1000"]);
    assert!(stdout.contains("100:"), "{stdout}");
    let report: EvalReport = serde_json::from_slice(&std::fs::read(over.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.scenes.len(), 2);
    let png = decode_label_png(&std::fs::read(over.join("00000/labels.png")).unwrap()).unwrap();
    let rle: RunLengthLabels = serde_json::from_slice(&std::fs::read(over.join("00000/labels.json")).unwrap()).unwrap();
    assert_eq!(rle.decode().unwrap(), png);
    let log = std::fs::read_to_string(over.join("run.jsonl")).unwrap();
    let events: Vec<String> = log.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["event"].as_str().unwrap().to_string()).collect();
    assert_eq!(events, ["config", "args", "scene", "scene", "report"]);

    let rerun = tmp.path().join("rerun");
    run(&["--seed", "21", "segment", "--input", test.to_str().unwrap(), "--out", rerun.to_str().unwrap(), "--sweep", "100,500,1000"]);
    assert_eq!(std::fs::read(over.join("00001/labels.png")).unwrap(), std::fs::read(rerun.join("00001/labels.png")).unwrap());

    let disj = tmp.path().join("disj");
    run(&["segment", "--input", test.to_str().unwrap(), "--out", disj.to_str().unwrap(), "--windows", "disjoint"]);
    assert!(disj.join("report.json").is_file());
    let auto = tmp.path().join("auto");
    run(&["segment", "--input", test.join("00000").to_str().unwrap(), "--out", auto.to_str().unwrap(), "--resolution", "auto"]);
    assert!(auto.join("00000/labels.png").is_file());
}

#[test]
fn config_file_and_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "seed = 4\n[synth]\nn_train = 1\nn_test = 0\n").unwrap();
    let data = tmp.path().join("data");
    run(&["--config", cfg.to_str().unwrap(), "synth", "--out", data.to_str().unwrap()]);
    let m = manifest(&data);
    assert_eq!((m.seed, m.scenes.len()), (4, 1));

    std::fs::write(&cfg, "[segment]\ngamma = -2.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_segstitch")).args(["--config", cfg.to_str().unwrap(), "synth", "--out", data.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_segstitch")).args(["segment", "--input", tmp.path().join("missing").to_str().unwrap(), "--out", data.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
}
