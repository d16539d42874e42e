use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_e2ec"));
    c.env_remove("E2EC_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn e2ec")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert_eq!(out.status.code(), Some(0), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json_at(p: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn pt(v: &Value) -> (f64, f64) {
    (v[0].as_f64().unwrap(), v[1].as_f64().unwrap())
}

fn write_square(dir: &Path) {
    let d = json!({
        "version": 1,
        "image_size": [128, 128],
        "instances": [{"id": 0, "polygon": [[40, 40], [88, 40], [88, 88], [40, 88]], "shape_family": "rect"}],
    });
    std::fs::write(dir.join("sq.json"), d.to_string()).unwrap();
}

/// Distance from `p` to the closed polyline, computed from scratch.
fn dist_to_ring(ring: &[(f64, f64)], p: (f64, f64)) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let t = (((p.0 - a.0) * ex + (p.1 - a.1) * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
        let (qx, qy) = (a.0 + t * ex, a.1 + t * ey);
        best = best.min(((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt());
    }
    best
}

#[test]
fn gen_data_is_deterministic_and_counts() {
    let t = tempfile::tempdir().unwrap();
    let s = ok(t.path(), &["gen-data", "--n", "200", "--family", "blob", "--seed", "7", "--out", "a.json"]);
    assert!(s.contains("200"));
    ok(t.path(), &["gen-data", "--n", "200", "--family", "blob", "--seed", "7", "--out", "b.json"]);
    let a = std::fs::read(t.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(t.path().join("b.json")).unwrap());
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["instances"].as_array().unwrap().len(), 200);
    assert_eq!(v["config"]["seed"], 7);
}

#[test]
fn seed_from_environment() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["gen-data", "--n", "5", "--seed", "11", "--out", "a.json"]);
    let out = bin().current_dir(t.path()).env("E2EC_SEED", "11").args(["gen-data", "--n", "5", "--out", "b.json"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(t.path().join("a.json")).unwrap(), std::fs::read(t.path().join("b.json")).unwrap());
}

#[test]
fn usage_and_runtime_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(run(t.path(), &["gen-data", "--family", "hexagon"]).status.code(), Some(1));
    assert_eq!(run(t.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(t.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(run(t.path(), &["eval", "--data", "missing.json"]).status.code(), Some(2));
    write_square(t.path());
    assert_eq!(run(t.path(), &["render", "--data", "sq.json", "--stages", "bogus"]).status.code(), Some(1));
    assert_eq!(run(t.path(), &["sample-labels", "--data", "sq.json", "--n", "8", "--m", "3"]).status.code(), Some(1));
    // coordinates outside the image are rejected
    let d = json!({"version": 1, "image_size": [32, 32], "instances": [{"id": 0, "polygon": [[0, 0], [40, 0], [0, 10]], "shape_family": "rect"}]});
    std::fs::write(t.path().join("bad.json"), d.to_string()).unwrap();
    assert_eq!(run(t.path(), &["sample-labels", "--data", "bad.json"]).status.code(), Some(2));
}

#[test]
fn square_fixed_vertices_at_ray_hits() {
    let t = tempfile::tempdir().unwrap();
    write_square(t.path());
    ok(t.path(), &["sample-labels", "--data", "sq.json", "--n", "8", "--m", "4", "--out", "l.json"]);
    let v = json_at(t.path().join("l.json"));
    let inst = &v["instances"][0];
    assert_eq!(inst["fixed_indices"], json!([0, 2, 4, 6]));
    assert_eq!(pt(&inst["center"]), (64.0, 64.0));
    let c: Vec<(f64, f64)> = inst["gt_contour"].as_array().unwrap().iter().map(pt).collect();
    let hits = [(88.0, 64.0), (64.0, 88.0), (40.0, 64.0), (64.0, 40.0)];
    for (k, h) in [0, 2, 4, 6].iter().zip(hits) {
        assert!((c[*k].0 - h.0).abs() < 1e-9 && (c[*k].1 - h.1).abs() < 1e-9, "{:?} vs {h:?}", c[*k]);
    }
    assert_eq!(v["config"]["m_aligned"], 4);
}

#[test]
fn degenerate_alignment_modes() {
    let t = tempfile::tempdir().unwrap();
    write_square(t.path());
    ok(t.path(), &["sample-labels", "--data", "sq.json", "--n", "8", "--m", "0", "--out", "m0.json"]);
    ok(t.path(), &["sample-labels", "--data", "sq.json", "--n", "8", "--m", "8", "--out", "m8.json"]);
    let get = |f: &str| -> Vec<(f64, f64)> {
        json_at(t.path().join(f))["instances"][0]["gt_contour"].as_array().unwrap().iter().map(pt).collect()
    };
    let (u, p) = (get("m0.json"), get("m8.json"));
    assert_ne!(u, p);
    // both start on the ray at angle 0
    assert_eq!(u[0], p[0]);
    // uniform: every step walks 24 px of boundary (perimeter 192 / 8); on an
    // axis-aligned square that is the L1 distance
    for i in 0..8 {
        let (a, b) = (u[i], u[(i + 1) % 8]);
        assert!(((a.0 - b.0).abs() + (a.1 - b.1).abs() - 24.0).abs() < 1e-9);
    }
    // polar: vertex i lies at angle i * 45 degrees from the center
    for (i, q) in p.iter().enumerate() {
        let ang = (q.1 - 64.0).atan2(q.0 - 64.0).rem_euclid(std::f64::consts::TAU);
        let want = i as f64 * std::f64::consts::FRAC_PI_4;
        assert!((ang - want).abs() < 1e-9, "{i}: {ang} vs {want}");
    }
}

#[test]
fn dumped_vertices_pass_independent_boundary_check() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["gen-data", "--n", "40", "--family", "star", "--seed", "5", "--out", "d.json"]);
    ok(t.path(), &["sample-labels", "--data", "d.json", "--n", "32", "--m", "4", "--out", "l.json", "--svg", "l.svg"]);
    let d = json_at(t.path().join("d.json"));
    let l = json_at(t.path().join("l.json"));
    let insts = l["instances"].as_array().unwrap();
    assert_eq!(insts.len(), 40);
    for (raw, lab) in d["instances"].as_array().unwrap().iter().zip(insts) {
        let ring: Vec<(f64, f64)> = raw["polygon"].as_array().unwrap().iter().map(pt).collect();
        for q in lab["gt_contour"].as_array().unwrap() {
            assert!(dist_to_ring(&ring, pt(q)) < 1e-6);
        }
        for k in lab["gt_keys"].as_array().unwrap() {
            let k = pt(k);
            assert!(ring.contains(&k), "key {k:?} is not a raw vertex");
        }
    }
    let svg = std::fs::read_to_string(t.path().join("l.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let panels: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("panel")).collect();
    let ids: Vec<_> = panels.iter().map(|n| n.attribute("id").unwrap()).collect();
    assert_eq!(ids, ["m1", "m2", "m4", "m8"]);
    for (p, m) in panels.iter().zip([1, 2, 4, 8]) {
        let fixed = p.children().find(|n| n.attribute("class") == Some("fixed")).unwrap();
        assert_eq!(fixed.children().filter(|n| n.has_tag_name("circle")).count(), m);
    }
    let meta = doc.descendants().find(|n| n.has_tag_name("metadata")).unwrap().text().unwrap();
    let meta: Value = serde_json::from_str(meta).unwrap();
    assert_eq!(meta["config"]["n_vertices"], 32);
}

#[test]
fn grad_check_passes() {
    let t = tempfile::tempdir().unwrap();
    let s = ok(t.path(), &["grad-check", "--seed", "3", "--n", "16", "--c", "4", "--out", "gc.json"]);
    assert!(s.contains("all checks passed"));
    let v = json_at(t.path().join("gc.json"));
    assert_eq!(v["passed"], true);
    assert_eq!(v["config"]["seed"], 3);
}

#[test]
fn untrained_eval_is_near_zero() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["gen-data", "--n", "10", "--seed", "1", "--out", "d.json"]);
    ok(t.path(), &["eval", "--data", "d.json", "--out", "r.json"]);
    let v = json_at(t.path().join("r.json"));
    for s in ["initial", "coarse", "final"] {
        let iou = v["report"][s]["mask_iou"].as_f64().unwrap();
        assert!(iou < 0.01, "{s}: {iou}");
    }
    assert_eq!(v["config"]["model"]["n_vertices"], 32);
    assert!(v["report"]["throughput"].is_null());
}

#[test]
fn config_file_then_flags() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["gen-data", "--n", "4", "--seed", "2", "--out", "d.json"]);
    std::fs::write(t.path().join("c.json"), json!({"epochs": 3, "learning_rate": 5e-4, "batch_size": 2}).to_string()).unwrap();
    ok(t.path(), &["train", "--data", "d.json", "--config", "c.json", "--epochs", "2", "--out", "m.ckpt", "--history", "h.csv"]);
    let h = std::fs::read_to_string(t.path().join("h.csv")).unwrap();
    let mut lines = h.lines();
    let cfg: Value = serde_json::from_str(lines.next().unwrap().strip_prefix("# ").unwrap()).unwrap();
    assert_eq!(cfg["train_config"]["epochs"], 2);
    assert_eq!(cfg["train_config"]["learning_rate"], 5e-4);
    assert_eq!(cfg["train_config"]["batch_size"], 2);
    assert!(lines.next().unwrap().starts_with("epoch,l_init"));
    assert_eq!(lines.count(), 2);
    // eval picks the architecture up from the checkpoint
    ok(t.path(), &["eval", "--data", "d.json", "--checkpoint", "m.ckpt", "--out", "r.json"]);
    assert_eq!(json_at(t.path().join("r.json"))["config"]["epochs"], 2);
    // changing the architecture against a checkpoint is refused
    assert_eq!(run(t.path(), &["eval", "--data", "d.json", "--checkpoint", "m.ckpt", "--c", "4"]).status.code(), Some(1));
}

#[test]
fn training_is_reproducible_from_the_cli() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["gen-data", "--n", "6", "--seed", "4", "--out", "d.json"]);
    for name in ["a", "b"] {
        ok(t.path(), &["train", "--data", "d.json", "--epochs", "2", "--seed", "9", "--out", &format!("{name}.ckpt"), "--history", &format!("{name}.csv")]);
    }
    let r = |f: &str| std::fs::read(t.path().join(f)).unwrap();
    assert_eq!(r("a.ckpt"), r("b.ckpt"));
    assert_eq!(r("a.csv"), r("b.csv"));
}

#[test]
fn divergence_exits_with_runtime_error() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["gen-data", "--n", "4", "--seed", "2", "--out", "d.json"]);
    let out = run(t.path(), &["train", "--data", "d.json", "--epochs", "20", "--lr", "1e6", "--optimizer", "sgd"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverge"));
}

fn groups<'a>(doc: &'a roxmltree::Document, class: &str) -> Vec<roxmltree::Node<'a, 'a>> {
    doc.descendants().filter(|n| n.has_tag_name("g") && n.attribute("class") == Some(class)).collect()
}

#[test]
fn render_structure() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["gen-data", "--n", "4", "--seed", "2", "--out", "d.json"]);
    ok(t.path(), &["train", "--data", "d.json", "--epochs", "3", "--out", "m.ckpt", "--history", "h.csv"]);

    ok(t.path(), &["render", "--data", "d.json", "--checkpoint", "m.ckpt", "--stages", "final", "--out", "f.svg"]);
    let s = std::fs::read_to_string(t.path().join("f.svg")).unwrap();
    let doc = roxmltree::Document::parse(&s).unwrap();
    assert_eq!(groups(&doc, "gt").len(), 1);
    let st = groups(&doc, "stage");
    assert_eq!(st.len(), 1);
    assert_eq!(st[0].attribute("id"), Some("stage-final"));
    assert!(groups(&doc, "deformation").is_empty());

    ok(t.path(), &["render", "--data", "d.json", "--checkpoint", "m.ckpt", "--paths", "--colors", "red,green,blue,black", "--out", "all.svg"]);
    let s = std::fs::read_to_string(t.path().join("all.svg")).unwrap();
    let doc = roxmltree::Document::parse(&s).unwrap();
    let ids: Vec<_> = groups(&doc, "stage").iter().map(|g| g.attribute("id").unwrap()).collect();
    assert_eq!(ids, ["stage-initial", "stage-coarse", "stage-iter1", "stage-final"]);
    let paths = groups(&doc, "deformation");
    assert_eq!(paths.len(), 3);
    assert!(paths.iter().all(|g| g.children().filter(|n| n.has_tag_name("line")).count() <= 32));
    assert!(paths[0].children().any(|n| n.has_tag_name("line")));
    for g in groups(&doc, "stage") {
        let path = g.children().find(|n| n.has_tag_name("path")).unwrap();
        assert!(path.attribute("d").unwrap().ends_with('Z'));
    }
    let meta: Value = serde_json::from_str(doc.descendants().find(|n| n.has_tag_name("metadata")).unwrap().text().unwrap()).unwrap();
    assert_eq!(meta["colors"], json!(["red", "green", "blue", "black"]));
    assert_eq!(meta["config"]["model"]["n_vertices"], 32);
}

#[test]
fn identical_stages_draw_no_segments() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["gen-data", "--n", "2", "--seed", "2", "--out", "d.json"]);
    ok(t.path(), &["render", "--data", "d.json", "--stages", "coarse,final,final", "--paths", "--out", "p.svg"]);
    let s = std::fs::read_to_string(t.path().join("p.svg")).unwrap();
    let doc = roxmltree::Document::parse(&s).unwrap();
    let paths = groups(&doc, "deformation");
    assert_eq!(paths.len(), 2);
    assert!(paths.iter().all(|g| !g.children().any(|n| n.has_tag_name("line"))));
}

#[test]
fn bench_writes_a_table() {
    let t = tempfile::tempdir().unwrap();
    let s = ok(t.path(), &["bench", "--n-instances", "20", "--repeats", "2", "--out", "b.json"]);
    assert!(s.contains("instances/s"));
    let v = json_at(t.path().join("b.json"));
    for k in ["initial", "coarse", "final"] {
        assert!(v["throughput"][k].as_f64().unwrap() > 0.0);
    }
    assert_eq!(v["n_instances"], 20);
    assert!(v["config"].is_object());
}
