use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use sha2::{Digest, Sha256};

fn pointat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointat")).args(args).current_dir(cwd).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = pointat(args, cwd);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str], cwd: &Path) -> Value {
    serde_json::from_str(&ok(args, cwd)).unwrap()
}

/// Hash of every file under `dir`: sorted relative paths, each followed by
/// its bytes.
fn tree_hash(dir: &Path) -> String {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, out);
            } else {
                out.push(p);
            }
        }
    }
    let mut files = Vec::new();
    walk(dir, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&f).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn path(&self, rel: &str) -> String {
        self.dir.path().join(rel).to_string_lossy().into_owned()
    }
}

/// Small dataset plus a one-epoch Siamese checkpoint shared by the tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cwd = dir.path();
        ok(&["gen-data", "--out", "data", "--preset", "small", "--train", "8", "--test", "4", "--seed", "21"], cwd);
        ok(&["train", "--data", "data", "--out", "run", "--preset", "small", "--epochs", "1", "--batch-size", "4"], cwd);
        Fixture { dir }
    })
}

fn validate(schema_file: &str, value: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema").join(schema_file);
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema_file}: {errors:?}\n{value:#}");
}

#[test]
fn usage_errors_exit_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    for args in [
        vec!["gen-data", "--bogus"],
        vec!["gen-data"],
        vec!["gen-data", "--out", "d", "--preset", "huge"],
        vec!["train", "--data", "d", "--out", "r", "--ablation", "no-modulation", "--baseline", "fc"],
        vec!["no-such-command"],
    ] {
        let out = pointat(&args, cwd);
        assert_eq!(code(&out), 1, "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(code(&pointat(&["--help"], cwd)), 0);
    assert_eq!(code(&pointat(&["train", "--help"], cwd)), 0);
    assert_eq!(std::fs::read_dir(cwd).unwrap().count(), 0);
}

#[test]
fn data_errors_exit_with_2() {
    let f = fixture();
    let cwd = f.dir.path();
    let out = pointat(&["train", "--data", "missing", "--out", "r2", "--preset", "small"], cwd);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    let out = pointat(&["train", "--data", "data", "--out", "r3", "--preset", "default"], cwd);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("preset"));

    let out = pointat(&["eval", "--data", "data", "--checkpoint", "nope.ptat"], cwd);
    assert_eq!(code(&out), 2);

    let store = f.path("empty-store.ptat");
    let out = pointat(&["find", "--checkpoint", "run/checkpoint.ptat", "--store", &store, "--name", "cup", "--image", "data/test/000000.search.png"], cwd);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("known objects: []"));
}

#[test]
fn gen_data_is_reproducible_and_guarded() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    let args = |out: &'static str, seed: &'static str| vec!["gen-data", "--out", out, "--preset", "small", "--train", "6", "--test", "3", "--seed", seed, "--json"];
    let a = json(&args("a", "7"), cwd);
    let b = json(&args("b", "7"), cwd);
    json(&args("c", "8"), cwd);
    assert_eq!(tree_hash(&cwd.join("a")), tree_hash(&cwd.join("b")));
    assert_ne!(tree_hash(&cwd.join("a")), tree_hash(&cwd.join("c")));
    assert_eq!(a["digest"], b["digest"]);
    assert_eq!(a["manifest"]["counts"]["train"], 6);

    std::fs::write(cwd.join("c/keep.txt"), "x").unwrap();
    let out = pointat(&args("c", "7"), cwd);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    assert!(cwd.join("c/keep.txt").exists());

    let mut forced = args("c", "7");
    forced.push("--force");
    ok(&forced, cwd);
    std::fs::remove_file(cwd.join("c/keep.txt")).unwrap();
    assert_eq!(tree_hash(&cwd.join("a")), tree_hash(&cwd.join("c")));
}

#[test]
fn interrupted_training_resumes_to_identical_artifacts() {
    let f = fixture();
    let cwd = f.dir.path();
    let base = ["train", "--data", "data", "--preset", "small", "--epochs", "2", "--batch-size", "4", "--seed", "3"];
    let run = |extra: &[&str]| {
        let mut a: Vec<&str> = base.to_vec();
        a.extend_from_slice(extra);
        json(&a, cwd)
    };
    let straight = run(&["--out", "straight", "--json"]);
    validate("train.schema.json", &straight);
    assert_eq!(straight["steps"], 4);
    assert_eq!(straight["completed"], true);

    let partial = run(&["--out", "split", "--max-steps", "3", "--json"]);
    assert_eq!(partial["completed"], false);
    assert_eq!(partial["final_eval"], Value::Null);
    run(&["--out", "split", "--resume", "split/checkpoint.ptat", "--json"]);

    let again = run(&["--out", "again", "--json"]);
    assert_eq!(again["final_eval"], straight["final_eval"]);
    for file in ["checkpoint.ptat", "metrics.csv"] {
        let s = std::fs::read(cwd.join("straight").join(file)).unwrap();
        assert_eq!(s, std::fs::read(cwd.join("split").join(file)).unwrap(), "{file} after resume");
        assert_eq!(s, std::fs::read(cwd.join("again").join(file)).unwrap(), "{file} on rerun");
    }
    let csv = std::fs::read_to_string(cwd.join("straight/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(csv.lines().next(), Some("epoch,train_loss,exemplar_acc,search_acc"));
}

#[test]
fn eval_json_matches_schema_and_lists_each_condition() {
    let f = fixture();
    let cwd = f.dir.path();
    let v = json(&["eval", "--data", "data", "--checkpoint", "run/checkpoint.ptat", "--checkpoint", "run/checkpoint.ptat", "--json"], cwd);
    validate("eval.schema.json", &v);
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(v["rows"][0]["condition"], "proposed");
    assert_eq!(v["rows"][0]["report"]["samples"], 4);
    let table = ok(&["eval", "--data", "data", "--checkpoint", "run/checkpoint.ptat"], cwd);
    assert!(table.starts_with("condition"));
    assert!(table.contains("proposed"));
}

#[test]
fn teach_and_find_round_trip_through_the_store() {
    let f = fixture();
    let cwd = f.dir.path();
    let (s1, s2) = (f.path("s1.ptat"), f.path("s2.ptat"));
    let teach = |store: &str| {
        json(&["teach", "--checkpoint", "run/checkpoint.ptat", "--store", store, "--name", "cup", "--image", "data/test/000001.exemplar.png", "--timestamp", "1700000000", "--json"], cwd)
    };
    let t = teach(&s1);
    validate("teach.schema.json", &t);
    teach(&s2);
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());

    let out = pointat(&["teach", "--checkpoint", "run/checkpoint.ptat", "--store", &s1, "--name", "cup", "--image", "data/test/000001.exemplar.png"], cwd);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--overwrite"));

    let ann = f.path("found.png");
    let v = json(&["find", "--checkpoint", "run/checkpoint.ptat", "--store", &s1, "--name", "cup", "--image", "data/test/000001.search.png", "--annotate", &ann, "--json"], cwd);
    validate("find.schema.json", &v);
    let img = image::open(&ann).unwrap().to_rgb8();
    let (x, y) = (v["p"][0].as_f64().unwrap().round() as u32, v["p"][1].as_f64().unwrap().round() as u32);
    assert_eq!(img.get_pixel(x, y).0, [255, 0, 0], "marker at the predicted center");
    let bbox: Vec<f64> = v["bbox"].as_array().unwrap().iter().map(|b| b.as_f64().unwrap()).collect();
    assert!(bbox[0] <= x as f64 && x as f64 <= bbox[2] && bbox[1] <= y as f64 && y as f64 <= bbox[3]);

    let out = pointat(&["find", "--checkpoint", "run/checkpoint.ptat", "--store", &s1, "--name", "bowl", "--image", "data/test/000001.search.png"], cwd);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("[cup]"));
}

#[test]
fn wrong_image_size_is_rejected_with_a_resize_hint() {
    let f = fixture();
    let cwd = f.dir.path();
    let big = f.path("big.png");
    image::RgbImage::new(120, 80).save(&big).unwrap();
    let out = pointat(&["teach", "--checkpoint", "run/checkpoint.ptat", "--store", &f.path("s3.ptat"), "--name", "x", "--image", &big], cwd);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("resize the image to 94x94"));
}

fn pgm(path: &Path) -> (u32, u32, Vec<u8>) {
    let img = pointat_core::imageio::read_pgm(&std::fs::read(path).unwrap()).unwrap();
    (img.width(), img.height(), img.into_raw())
}

#[test]
fn dump_attention_writes_grid_sized_maps() {
    let f = fixture();
    let cwd = f.dir.path();
    let v = json(&["dump-attention", "--checkpoint", "run/checkpoint.ptat", "--image", "data/test/000002.exemplar.png", "--out", "maps", "--json"], cwd);
    validate("dump-attention.schema.json", &v);
    for name in ["x_o", "x_m", "x_o_star", "pos_dist", "x_hat_o_star"] {
        let (w, h, _) = pgm(&cwd.join(format!("maps/{name}.pgm")));
        assert_eq!((w, h), (14, 14), "{name}");
    }
    let written: Value = serde_json::from_str(&std::fs::read_to_string(cwd.join("maps/attention.json")).unwrap()).unwrap();
    assert_eq!(written, v);
}
