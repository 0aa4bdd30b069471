use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlpipe")).args(args).env("RUST_LOG", "off").output().unwrap()
}

fn summary(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stdout));
    let s = summary(&out);
    assert_eq!(s["ok"], true);
    s
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn layout_grids() {
    assert_eq!(ok(&["layout", "--width", "616", "--height", "616"])["grid"], "2x2");
    assert_eq!(ok(&["layout", "--width", "336", "--height", "336"])["grid"], "1x1");
    let cfg = fixture("layout.toml");
    assert_eq!(ok(&["layout", "--width", "1000", "--height", "700", "--config", s(&cfg)])["grid"], "3x2");
}

#[test]
fn layout_writes_token_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("layout.json");
    ok(&["layout", "--width", "616", "--height", "616", "--out", s(&out)]);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["crop_layout"].is_object());
    assert!(v["token_layout"].is_object());
}

#[test]
fn error_exit_codes() {
    let bad = run(&["layout", "--width", "616", "--height", "616", "--overlap", "3"]);
    assert_eq!(bad.status.code(), Some(1));
    let s = summary(&bad);
    assert_eq!(s["ok"], false);
    assert_eq!(s["exit_code"], 1);

    assert_eq!(run(&["layout", "--width", "616"]).status.code(), Some(2));
    assert_eq!(run(&["mix"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["caphint", "--chars=-5"]).status.code(), Some(1));
}

#[test]
fn eval_point_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scores.csv");
    let gt = fixture("gt.jsonl");
    let v = ok(&["eval-point", "--gt", s(&gt), "--pred", s(&fixture("pred_perfect.jsonl")), "--out", s(&csv)]);
    assert_eq!((v["precision"].as_f64(), v["recall"].as_f64(), v["f1"].as_f64()), (Some(1.0), Some(1.0), Some(1.0)));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 3 + 1);

    let v = ok(&["eval-point", "--gt", s(&gt), "--pred", s(&fixture("pred.jsonl"))]);
    assert!((v["precision"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-12);
    assert!((v["recall"].as_f64().unwrap() - 8.0 / 9.0).abs() < 1e-12);

    // Predictions for ids the ground truth lacks.
    let out = run(&["eval-point", "--gt", s(&gt), "--pred", s(&fixture("responses.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
}

fn write_log(dir: &Path, rows: &[(&str, &str, &str, usize)]) -> PathBuf {
    let mut text = String::from("model_a,model_b,verdict\n");
    for (a, b, v, n) in rows {
        for _ in 0..*n {
            text.push_str(&format!("{a},{b},{v}\n"));
        }
    }
    let p = dir.join(format!("log{}.csv", rows.len()));
    std::fs::write(&p, text).unwrap();
    p
}

fn rating(v: &Value, model: &str) -> f64 {
    v["ratings"].as_array().unwrap().iter().find(|r| r["model"] == model).unwrap()["rating"].as_f64().unwrap()
}

#[test]
fn elo_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let even = write_log(dir.path(), &[("x", "y", "a", 50), ("x", "y", "b", 50)]);
    let v = ok(&["elo", "--log", s(&even)]);
    assert!((rating(&v, "x") - rating(&v, "y")).abs() < 0.01);

    let lop = write_log(dir.path(), &[("x", "y", "a", 75), ("y", "x", "a", 25), ("x", "y", "tie_good", 0)]);
    let v = ok(&["elo", "--log", s(&lop)]);
    assert!((rating(&v, "x") - rating(&v, "y") - 400.0 * 3f64.log10()).abs() < 0.1);

    let sweep = write_log(dir.path(), &[("x", "y", "a", 10)]);
    assert_eq!(run(&["elo", "--log", s(&sweep)]).status.code(), Some(1));
}

#[test]
fn elo_fixture_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ratings.csv");
    let v = ok(&["elo", "--log", s(&fixture("prefs.csv")), "--out", s(&out), "--win-rates"]);
    let order: Vec<&str> = v["ratings"].as_array().unwrap().iter().map(|r| r["model"].as_str().unwrap()).collect();
    assert_eq!(order, ["alpha", "beta", "gamma"]);
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("rank,model,rating\n1,alpha,"));
}

#[test]
fn caphint_and_mix() {
    let v = ok(&["caphint", "--chars", "975", "--sigma", "0"]);
    assert_eq!(v["hint"], 65);
    assert_eq!(v["prompt"], "long_caption_65:");

    let v = ok(&["mix", "--sizes", "100,400"]);
    let rates: Vec<f64> = v["rates"].as_array().unwrap().iter().map(|r| r["rate"].as_f64().unwrap()).collect();
    assert!((rates[0] - 1.0 / 3.0).abs() < 1e-12 && (rates[1] - 2.0 / 3.0).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("draws.txt");
    ok(&["mix", "--spec", s(&fixture("mixture.toml")), "--samples", "200", "--seed", "3", "--out", s(&out)]);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 200);
}

#[test]
fn capf1_sweep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, svg) = (dir.path().join("sweep.csv"), dir.path().join("sweep.svg"));
    ok(&["capf1", "--judgments", s(&fixture("judgments.jsonl")), "--sweep", "--out", s(&csv), "--svg", s(&svg)]);
    let csv = std::fs::read_to_string(&csv).unwrap();
    assert!(csv.starts_with("hint,precision,recall,f1,images\n"));
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(std::fs::read_to_string(&svg).unwrap().matches("<polyline").count(), 3);

    let svg_only = run(&["capf1", "--judgments", s(&fixture("judgments.jsonl")), "--svg", s(&dir.path().join("x.svg"))]);
    assert_eq!(svg_only.status.code(), Some(2));
}

#[test]
fn points_parse_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sets = dir.path().join("sets.json");
    let tags = dir.path().join("tags.txt");
    ok(&["points", "parse", "--input", s(&fixture("response.txt")), "--out", s(&sets)]);
    ok(&["points", "render", "--input", s(&sets), "--out", s(&tags)]);
    let first = std::fs::read_to_string(&tags).unwrap();

    let again = dir.path().join("sets2.json");
    let tags2 = dir.path().join("tags2.txt");
    std::fs::write(dir.path().join("tags.in"), &first).unwrap();
    ok(&["points", "parse", "--input", s(&dir.path().join("tags.in")), "--out", s(&again)]);
    ok(&["points", "render", "--input", s(&again), "--out", s(&tags2)]);
    assert_eq!(first, std::fs::read_to_string(&tags2).unwrap());

    ok(&["points", "render", "--input", s(&fixture("pointsets.json"))]);
    let strict = run(&["points", "parse", "--text", r#"<point x="1.0" y="oops" alt="a">a</point>"#]);
    assert_eq!(strict.status.code(), Some(1));
    ok(&["points", "parse", "--lenient", "--text", r#"<point x="1.0" y="oops" alt="a">a</point>"#]);
}

#[test]
fn pack_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("packed.jsonl");
    let v = ok(&["pack", "--annotations", s(&fixture("annotations.jsonl")), "--image-tokens", "316", "--out", s(&out)]);
    assert_eq!(v["dropped_over_count"], 1);
    assert_eq!(v["stats"]["image_reduction"], 0.6);
    let text = std::fs::read_to_string(&out).unwrap();
    let records: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4);
    for r in &records {
        assert!(r["length"].as_u64().unwrap() <= 2304);
        assert_eq!(r["segments"].as_array().unwrap().len(), r["visibility"].as_array().unwrap().len());
    }
}

#[test]
fn count_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("counts.csv");
    let v = ok(&["count", "--responses", s(&fixture("responses.jsonl")), "--out", s(&out)]);
    assert!((v["accuracy"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("id,predicted,expected\n"));
    assert_eq!(run(&["count", "--responses", s(&fixture("responses.jsonl")), "--strategy", "guess"]).status.code(), Some(2));
}
