use skph_core::gs::ply::load_ply;
use skph_core::pipeline::{EncodeReport, EvalResult};
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn skph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skph")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = skph(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_scene(dir: &Path, seed: &str) {
    ok(&[
        "synth", "--out", p(dir), "--splats-per-edge", "40", "--filler", "300", "--width", "24", "--height", "24",
        "--seed", seed,
    ]);
}

#[test]
fn synth_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_scene(&a, "3");
    small_scene(&b, "3");
    for f in ["scene.ply", "lines.txt", "cameras.json", "labels.json", "images/view_000.png", "images/view_003.png"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn encode_decode_accounting() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene, "0");
    let skph_file = tmp.path().join("out.skph");
    let report_file = tmp.path().join("report.json");
    ok(&[
        "encode", "--ply", p(&scene.join("scene.ply")), "--lines", p(&scene.join("lines.txt")), "--prune", "3",
        "--out", p(&skph_file), "--report", p(&report_file),
    ]);
    let report: EncodeReport = serde_json::from_slice(&std::fs::read(&report_file).unwrap()).unwrap();
    let len = std::fs::metadata(&skph_file).unwrap().len() as usize;
    assert_eq!(report.total_bytes, len);
    assert_eq!(report.header_bytes + report.sketch_bytes + report.patch_bytes + 8, len);
    assert_eq!(report.patch_splats, report.patch_before_prune.div_ceil(3));
    assert!(report.sketch_splats > 0);

    let ply_out = tmp.path().join("decoded.ply");
    ok(&["decode", p(&skph_file), "--out", p(&ply_out)]);
    let cloud = load_ply(&std::fs::read(&ply_out).unwrap()).unwrap();
    assert_eq!(cloud.len(), report.sketch_splats + report.patch_splats);
}

#[test]
fn no_lines_is_pure_patch() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene, "1");
    let out = ok(&["encode", "--ply", p(&scene.join("scene.ply")), "--out", p(&tmp.path().join("x.skph"))]);
    let report: EncodeReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.sketch_splats, 0);
    assert_eq!(report.patch_splats, report.input_splats);
}

#[test]
fn empty_model_decodes_to_empty_ply() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.ply");
    std::fs::write(&empty, skph_core::gs::ply::save_ply(&skph_core::GaussianCloud::new(3))).unwrap();
    let model = tmp.path().join("empty.skph");
    ok(&["encode", "--ply", p(&empty), "--out", p(&model)]);
    let back = tmp.path().join("back.ply");
    ok(&["decode", p(&model), "--out", p(&back)]);
    assert!(load_ply(&std::fs::read(&back).unwrap()).unwrap().is_empty());
}

#[test]
fn eval_self_render_hits_the_cap() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene, "2");
    let csv_path = tmp.path().join("eval.csv");
    ok(&[
        "eval", "--ply", p(&scene.join("scene.ply")), "--cameras", p(&scene.join("cameras.json")), "--images",
        p(&scene.join("images")), "--out", p(&csv_path),
    ]);
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let res = EvalResult::from_csv(&text).unwrap();
    assert_eq!(res.views.len(), 4);
    for v in &res.views {
        assert_eq!(v.psnr, 100.0);
        assert!((v.ssim - 1.0).abs() < 1e-12);
    }
    assert_eq!(res.to_csv(), text);
}

#[test]
fn sweep_writes_csv_and_reports() {
    let tmp = TempDir::new().unwrap();
    let scene = tmp.path().join("scene");
    small_scene(&scene, "4");
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep", "--ply", p(&scene.join("scene.ply")), "--lines", p(&scene.join("lines.txt")), "--cameras",
        p(&scene.join("cameras.json")), "--images", p(&scene.join("images")), "--factors", "2,4", "--out", p(&out),
    ]);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("factor,line_fraction,sketch_bytes,patch_bytes,total_bytes,psnr,ssim"));
    let totals: Vec<usize> = rows.map(|r| r.split(',').nth(4).unwrap().parse().unwrap()).collect();
    assert_eq!(totals.len(), 2);
    assert!(totals[1] < totals[0]);
    assert!(out.join("point_f2_l1.json").exists());
    assert!(out.join("point_f4_l1.json").exists());
}

#[test]
fn errors_name_their_stage() {
    let tmp = TempDir::new().unwrap();
    let missing = skph(&["encode", "--ply", "/nonexistent.ply", "--out", p(&tmp.path().join("x.skph"))]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("skph: input:"));

    let junk = tmp.path().join("junk.skph");
    std::fs::write(&junk, b"SKPH\x01\x00garbage").unwrap();
    let bad = skph(&["decode", p(&junk), "--out", p(&tmp.path().join("y.ply"))]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("skph: container:"));

    let scene = tmp.path().join("scene");
    small_scene(&scene, "5");
    let no_views = skph(&[
        "encode", "--ply", p(&scene.join("scene.ply")), "--retrain", "--out", p(&tmp.path().join("z.skph")),
    ]);
    assert!(!no_views.status.success());
    assert!(String::from_utf8_lossy(&no_views.stderr).starts_with("skph: retrain:"));
}
