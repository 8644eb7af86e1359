use std::path::Path;
use std::process::{Command, Output};

fn dntsc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dntsc"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = dntsc(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const SMALL: [&str; 10] = [
    "--set", "synth_train=2", "--set", "synth_val=1", "--set", "synth_test=1",
    "--set", "synth_height=32", "--set", "synth_width=64",
];

fn args<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(SMALL.iter()).chain(tail.iter()).copied().collect()
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dntsc(dir.path(), &["synth", "--out", "d", "--set", "no_such_key=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "# tiny split\nsynth_train = 3\nsynth_height = 32\nsynth_width = 64\n").unwrap();
    ok(dir.path(), &["synth", "--config", "run.cfg", "--set", "synth_train=2", "--out", "d"]);
    let train: Vec<_> = std::fs::read_dir(dir.path().join("d/train/left")).unwrap().collect();
    assert_eq!(train.len(), 2);
    let manifest = std::fs::read_to_string(dir.path().join("d/manifest.json")).unwrap();
    assert!(manifest.contains("\"synth_train\": \"2\""), "{manifest}");
}

#[test]
fn corrupted_stream_fails_to_decode() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &args(&["synth", "--out", "data"], &[]));
    ok(d, &args(&["train", "--out", "ck"], &["--set", "epochs=1"]));
    for (u, side) in [("1", "left"), ("2", "right")] {
        let input = format!("data/test/{side}/00000.png");
        let output = format!("s{u}.dntc");
        ok(d, &["encode", "--checkpoint", "ck/last.dntx", "--user", u, "--input", &input, "--output", &output]);
    }
    ok(d, &["decode", "--checkpoint", "ck/last.dntx", "--stream1", "s1.dntc", "--stream2", "s2.dntc", "--out", "dec"]);
    assert!(d.join("dec/user1.png").exists() && d.join("dec/user2.png").exists());

    let mut bytes = std::fs::read(d.join("s1.dntc")).unwrap();
    bytes.truncate(bytes.len() - 1);
    std::fs::write(d.join("bad.dntc"), bytes).unwrap();
    let out = dntsc(d, &["decode", "--checkpoint", "ck/last.dntx", "--stream1", "bad.dntc", "--stream2", "s2.dntc", "--out", "x"]);
    assert!(!out.status.success());

    // streams are tagged with their user
    let out = dntsc(d, &["decode", "--checkpoint", "ck/last.dntx", "--stream1", "s2.dntc", "--stream2", "s1.dntc", "--out", "x"]);
    assert!(!out.status.success());
}

#[test]
fn missing_checkpoint_is_reported_by_label() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &args(&["synth", "--out", "data"], &[]));
    let out = dntsc(d, &args(&["eval", "--checkpoint", "lo=nowhere.dntx", "--out", "rd.csv"], &[]));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lo"));
}
