use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depthpose::data::pgm;
use depthpose::flow::read_flow_dump;
use depthpose::image::Image;

const STAMP: &str = "1700000000";

fn depthpose(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthpose"))
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", STAMP)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = depthpose(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = depthpose(dir, args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn small_dataset(dir: &Path) {
    ok(dir, &["synth", "--count", "4", "--set", "sequences=2", "--seed", "2", "--out", "ds"]);
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn config_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(t.path(), &["synth", "--set", "nope=1", "--out", "x"]).0, 2);
    assert_eq!(code(t.path(), &["synth"]).0, 2, "missing --out");
    assert_eq!(code(t.path(), &["synth", "--seed", "minus-one"]).0, 2, "clap usage error");
    assert_eq!(code(t.path(), &["train", "nonsense", "--out", "x"]).0, 2);
    assert_eq!(code(t.path(), &["eval", "--dataset", "missing", "--checkpoints", "ck", "--out", "r"]).0, 2);
    assert_eq!(code(t.path(), &["--use-locnet", "--use-gt-center", "synth", "--out", "x"]).0, 2);
    fs::write(t.path().join("bad.conf"), "seed 3\n").unwrap();
    assert_eq!(code(t.path(), &["synth", "--config", "bad.conf", "--out", "x"]).0, 2);
}

#[test]
fn data_errors_exit_3() {
    let t = tempfile::tempdir().unwrap();
    fs::create_dir(t.path().join("empty")).unwrap();
    let (c, err) = code(t.path(), &["train", "ffd", "--dataset", "empty", "--out", "ck"]);
    assert_eq!(c, 3, "{err}");
    fs::write(t.path().join("a.pgm"), b"P5\n2 2\n255\n").unwrap();
    assert_eq!(code(t.path(), &["flow", "a.pgm", "a.pgm", "f.dump"]).0, 3);
}

#[test]
fn poseidon_without_branches_names_them() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path());
    let (c, err) = code(t.path(), &["train", "poseidon", "--dataset", "ds", "--out", "ck"]);
    assert_eq!(c, 4);
    for name in ["branch-depth.ckpt", "branch-ffd.ckpt", "branch-motion.ckpt"] {
        assert!(err.contains(name), "{err}");
    }
    let (c, err) = code(t.path(), &["train", "branch-ffd", "--dataset", "ds", "--out", "ck"]);
    assert_eq!(c, 4);
    assert!(err.contains("ffd.ckpt"), "{err}");
}

#[test]
fn empty_synth_is_a_valid_dataset() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["synth", "--count", "0", "--out", "ds"]);
    let ds = depthpose::data::load_canonical_dataset(&t.path().join("ds")).unwrap();
    assert!(ds.is_empty());
    let conf = fs::read_to_string(t.path().join("ds/synth.conf")).unwrap();
    assert!(conf.starts_with("# config_hash = "));
    assert!(conf.contains("seed = 0\n"));
}

#[test]
fn overrides_beat_the_config_file() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("run.conf"), "seed = 5\ncount = 2\nsequences = 1\n").unwrap();
    ok(t.path(), &["synth", "--config", "run.conf", "--set", "seed=6", "--seed", "7", "--out", "ds"]);
    let conf = fs::read_to_string(t.path().join("ds/synth.conf")).unwrap();
    assert!(conf.contains("seed = 7\n"), "{conf}");
    assert!(conf.contains("count = 2\n"), "{conf}");
}

#[test]
fn reconstruct_keeps_the_crop_shape() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path());
    ok(t.path(), &["train", "ffd", "--dataset", "ds", "--epochs", "1", "--out", "ck"]);
    let crop = Image::from_fn(64, 64, |r, c| 900.0 + (r + c) as f64);
    pgm::write(&t.path().join("crop.pgm"), &crop, 65535).unwrap();
    ok(t.path(), &["reconstruct", "--checkpoints", "ck", "crop.pgm", "face.pgm"]);
    let (face, maxval) = pgm::read(&t.path().join("face.pgm")).unwrap();
    assert_eq!((face.rows(), face.cols(), maxval), (64, 64, 255));
    let head = fs::read(t.path().join("face.pgm")).unwrap();
    assert!(head.starts_with(b"P5\n# config_hash="));
}

#[test]
fn flow_of_identical_frames_is_zero() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path());
    let frame = "ds/depth/01_01_00000.pgm";
    ok(t.path(), &["flow", frame, frame, "out/zero.dump"]);
    let f = read_flow_dump(&t.path().join("out/zero.dump")).unwrap();
    assert!(f.u.iter().chain(&f.v).all(|x| *x == 0.0));
    assert!(t.path().join("out/zero.dump.conf").exists());
}

#[test]
fn eval_refuses_a_foreign_convention() {
    let t = tempfile::tempdir().unwrap();
    small_dataset(t.path());
    ok(t.path(), &["train", "shoulder", "--dataset", "ds", "--epochs", "1", "--out", "ck"]);
    let meta = t.path().join("ds/dataset.json");
    let text = fs::read_to_string(&meta).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["euler_convention"] = "extrinsic X-Y-Z".into();
    fs::write(&meta, v.to_string()).unwrap();
    let (c, err) = code(t.path(), &["eval", "--dataset", "ds", "--checkpoints", "ck", "--model", "shoulder", "--out", "r"]);
    assert_eq!(c, 4);
    assert!(err.contains("convention"), "{err}");
}

/// Synthesizes, trains every target, evaluates and reconstructs, in a given
/// working directory. Paths are relative so the outputs can be compared.
fn full_run(dir: &Path) {
    ok(dir, &["synth", "--count", "6", "--set", "sequences=2", "--seed", "4", "--out", "ds"]);
    for target in ["ffd", "branch-depth", "branch-ffd", "branch-motion", "poseidon", "shoulder", "locnet"] {
        ok(
            dir,
            &["train", target, "--dataset", "ds", "--epochs", "2", "--set", "minibatch=4", "--seed", "4", "--out", "ck"],
        );
    }
    ok(dir, &["eval", "--dataset", "ds", "--checkpoints", "ck", "--occlusion", "all", "--seed", "4", "--out", "rep"]);
    ok(dir, &["eval", "--dataset", "ds", "--checkpoints", "ck", "--model", "shoulder", "--seed", "4", "--out", "rep"]);
    ok(dir, &["reconstruct", "--checkpoints", "ck", "ds/depth/01_01_00000.pgm", "face.pgm"]);
    ok(dir, &["flow", "ds/depth/01_01_00000.pgm", "ds/depth/01_01_00001.pgm", "flow.dump"]);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    full_run(a.path());
    full_run(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{} differs between reruns", name.display());
    }
    assert!(fa.keys().any(|p| p.extension().is_some_and(|e| e == "ckpt")));
    assert_eq!(fa.keys().filter(|p| p.starts_with("rep") && p.to_string_lossy().ends_with("Z.jsonl")).count(), 2);
}
