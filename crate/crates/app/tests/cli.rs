use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

use serde_json::Value;
use sketchxai_core::Trajectory;

const BIN: &str = env!("CARGO_BIN_EXE_sketchxai");
const CLASSES: &str = "star,cloud,bed";

fn sketchxai(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SKETCHXAI_DATA_DIR")
        .output()
        .expect("binary runs")
}

/// Runs a command that must succeed and returns its JSON summary.
fn ok(args: &[&str]) -> Value {
    let out = sketchxai(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().expect("summary line")).unwrap()
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error line");
    serde_json::from_str::<Value>(line).unwrap_or_else(|_| panic!("not JSON: {line}"))["error"].clone()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

/// Small corpus, one-epoch checkpoint and an exported sketch, built once.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        ok(&["synth", "--out", &f.s("data"), "--classes", CLASSES, "--per-class", "30", "--seed", "1"]);
        ok(&[
            "train", "--data", &f.s("data"), "--classes", CLASSES, "--train-per-class", "20",
            "--test-per-class", "5", "--epochs", "1", "--seed", "7", "--out", &f.s("model.ckpt"),
        ]);
        ok(&["sample", "--data", &f.s("data"), "--category", "star", "--index", "2", "--out", &f.s("star.json")]);
        f
    })
}

fn small_split(data: &str) -> Vec<String> {
    ["--data", data, "--train-per-class", "20", "--test-per-class", "5"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[test]
fn synth_writes_quickdraw_files_and_train_writes_checkpoint() {
    let f = fixture();
    for c in CLASSES.split(',') {
        let text = std::fs::read_to_string(f.path("data").join(format!("{c}.ndjson"))).unwrap();
        assert_eq!(text.lines().count(), 30);
        let rec: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(rec["word"], c);
    }
    assert!(f.path("model.ckpt").exists());
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(f.path("model.ckpt.json")).unwrap()).unwrap();
    assert_eq!(sidecar["categories"], serde_json::json!(["star", "cloud", "bed"]));
}

#[test]
fn eval_reports_accuracy_from_directory_and_cache() {
    let f = fixture();
    let ckpt = f.s("model.ckpt");
    let data = f.s("data");
    let mut args = vec!["eval".to_string(), "--ckpt".into(), ckpt.clone()];
    args.extend(small_split(&data));
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let from_dir = ok(&argv);
    let acc = from_dir["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(from_dir["samples"], 15);

    let cache = f.s("cache.json");
    let ingested = ok(&["ingest", "--data", &data, "--classes", CLASSES, "--out", &cache]);
    assert_eq!(ingested["samples"], 90);
    let mut args = vec!["eval".to_string(), "--ckpt".into(), ckpt];
    args.extend(small_split(&cache));
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(ok(&argv)["accuracy"], from_dir["accuracy"]);
}

#[test]
fn data_dir_comes_from_the_environment() {
    let f = fixture();
    let out = Command::new(BIN)
        .args(["eval", "--ckpt", &f.s("model.ckpt"), "--train-per-class", "20", "--test-per-class", "5"])
        .env("SKETCHXAI_DATA_DIR", f.path("data"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn run_sli(f: &Fixture, out: &Path) -> Value {
    ok(&[
        "sli", "--ckpt", &f.s("model.ckpt"), "--input", &f.s("star.json"), "--task", "transfer",
        "--target", "cloud", "--steps", "100", "--seed", "3", "--precision", "6", "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn sli_writes_reproducible_trajectories() {
    let f = fixture();
    let a = f.path("traj_a.ndjson");
    let b = f.path("traj_b.ndjson");
    let summary = run_sli(f, &a);
    assert_eq!(summary["frames"], 101);
    assert_eq!(summary["original"], "star");
    assert_eq!(summary["target"], "cloud");
    run_sli(f, &b);
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let traj = Trajectory::read_ndjson(std::str::from_utf8(&ta).unwrap()).unwrap();
    assert_eq!(traj.frames.len(), 101);
    // fixed precision: every value has at most six decimals
    for fr in &traj.frames {
        for v in fr.locations.iter().flatten().chain([&fr.p_target, &fr.p_orig]) {
            assert_eq!((v * 1e6).round() / 1e6, *v);
        }
    }
}

#[test]
fn render_sketch_and_trajectory() {
    let f = fixture();
    let svg = f.path("star.svg");
    ok(&["render", "--input", &f.s("star.json"), "--out", svg.to_str().unwrap()]);
    let doc = std::fs::read_to_string(&svg).unwrap();
    let sketch: Value = serde_json::from_str(&std::fs::read_to_string(f.path("star.json")).unwrap()).unwrap();
    assert_eq!(doc.matches("<polyline").count(), sketch["strokes"].as_array().unwrap().len());

    let traj = f.path("traj_render.ndjson");
    run_sli(f, &traj);
    let frames = f.path("frames");
    let r = ok(&["render", "--input", traj.to_str().unwrap(), "--out", frames.to_str().unwrap(), "--stride", "100"]);
    assert_eq!(r["files"], 2);
    assert!(frames.join("frame_0000.svg").exists() && frames.join("frame_0100.svg").exists());

    let gif = f.path("gif");
    ok(&["render", "--input", traj.to_str().unwrap(), "--out", gif.to_str().unwrap(), "--format", "gif", "--stride", "10"]);
    let bytes = std::fs::read(gif.join("trajectory.gif")).unwrap();
    assert_eq!(&bytes[..6], b"GIF89a");

    let empty = f.path("empty.json");
    std::fs::write(&empty, r#"{"strokes":[]}"#).unwrap();
    let out = f.path("empty.svg");
    ok(&["render", "--input", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(std::fs::read_to_string(out).unwrap().contains("</svg>"));
}

#[test]
fn analyze_subcommands_write_their_artifacts() {
    let f = fixture();
    let ckpt = f.s("model.ckpt");
    let data = f.s("data");

    let map = f.path("map.csv");
    let mut args: Vec<String> = ["analyze", "transfer-map", "--ckpt", &ckpt, "--classes", "2", "--per-class", "2", "--steps", "5", "--out"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    args.push(map.to_string_lossy().into_owned());
    args.extend(small_split(&data));
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&argv);
    let csv = std::fs::read_to_string(&map).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "target\\source,star,cloud");
    assert_eq!(csv.lines().count(), 3);
    assert!(f.path("map.csv.json").exists());

    let book = f.path("book.json");
    let mut args: Vec<String> = ["analyze", "primitives", "--ckpt", &ckpt, "--k", "4", "--sketches-per-class", "5", "--evaluate", "--out"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    args.push(book.to_string_lossy().into_owned());
    args.extend(small_split(&data));
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let prim = ok(&argv);
    assert_eq!(prim["k"], 4);
    assert!((0.0..=1.0).contains(&prim["replacement_accuracy"].as_f64().unwrap()));

    let inv = f.path("inv.json");
    let r = ok(&[
        "analyze", "shape-inversion", "--ckpt", &ckpt, "--codebook", book.to_str().unwrap(), "--input",
        &f.s("star.json"), "--target", "bed", "--steps", "5", "--out", inv.to_str().unwrap(),
    ]);
    assert!(r["p_target_final"].is_number());
    let inv: Value = serde_json::from_str(&std::fs::read_to_string(inv).unwrap()).unwrap();
    assert_eq!(inv["steps"].as_array().unwrap().len(), 6);

    let order = f.path("order.csv");
    ok(&["analyze", "order-sim", "--ckpt", &ckpt, "--m", "8", "--out", order.to_str().unwrap()]);
    let text = std::fs::read_to_string(order).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.lines().nth(1).unwrap().starts_with("0,1.000000"));

    let att = f.path("att.json");
    ok(&["analyze", "attention", "--ckpt", &ckpt, "--input", &f.s("star.json"), "--per-head", "--out", att.to_str().unwrap()]);
    let att: Value = serde_json::from_str(&std::fs::read_to_string(att).unwrap()).unwrap();
    assert_eq!(att["tokens"][0], "cls");
    for row in att["layers"][0].as_array().unwrap() {
        let s: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}

#[test]
fn failures_print_a_json_error_line() {
    let f = fixture();
    let out = sketchxai(&[
        "sli", "--ckpt", &f.s("model.ckpt"), "--input", &f.s("star.json"), "--task", "transfer",
        "--target", "zebra", "--out", &f.s("never.ndjson"),
    ]);
    assert_eq!(error_of(&out)["kind"], "not_found");

    let out = sketchxai(&["sli", "--ckpt", &f.s("missing.ckpt"), "--input", "x", "--out", "y"]);
    assert_eq!(error_of(&out)["kind"], "io");

    let bad = f.path("bad.json");
    std::fs::write(&bad, r#"{"strokes":[[]]}"#).unwrap();
    let out = sketchxai(&["sli", "--ckpt", &f.s("model.ckpt"), "--input", bad.to_str().unwrap(), "--out", "y"]);
    let err = error_of(&out);
    assert_eq!(err["kind"], "invalid");
    assert_eq!(err["path"], "sketch.strokes[0]");

    let out = sketchxai(&["train", "--classes", CLASSES, "--data", &f.s("data"), "--out", "x", "--train-per-class", "100"]);
    assert_eq!(error_of(&out)["kind"], "insufficient_data");

    let out = sketchxai(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["kind"], "usage");
}

#[test]
fn serve_answers_http_requests() {
    let f = fixture();
    let mut child = Command::new(BIN)
        .args(["serve", "--ckpt", &f.s("model.ckpt"), "--port", "0"])
        .env("RUST_LOG", "warn")
        .env_remove("SKETCHXAI_DATA_DIR")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let info: Value = serde_json::from_str(&line).unwrap();
    let addr = info["listening"].as_str().unwrap().to_owned();

    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /categories HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    let _ = child.wait();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    let body = &resp[resp.find("\r\n\r\n").unwrap() + 4..];
    let v: Value = serde_json::from_str(body).unwrap();
    assert_eq!(v["categories"], serde_json::json!(["star", "cloud", "bed"]));
    assert_eq!(v["checkpoint_id"], info["checkpoint_id"]);
}
