use std::path::Path;
use std::process::{Command, Output};

fn gsedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsedit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_flag_exits_with_usage() {
    let out = gsedit(&["metrics", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_file_is_an_error() {
    let out = gsedit(&["render", "--scene", "/nonexistent.ply", "--camera", "/nonexistent.json", "--out", "/tmp/x.png"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn gen_toy_is_reproducible_and_renders() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = gsedit(&["--seed", "3", "gen-toy", "--kind", "bend-arm", "--gaussians", "30", "--size", "32", "--out", p(d)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["scene.ply", "camera.json", "reference.png", "oracle.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let oracle: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("oracle.json")).unwrap()).unwrap();
    assert_eq!(oracle["transform_kind"], "bend-arm");
    assert_eq!(oracle["per_gaussian_targets"].as_array().unwrap().len(), 30);

    let img = dir.path().join("r.png");
    let out = gsedit(&["render", "--scene", p(&a.join("target.ply")), "--camera", p(&a.join("camera.json")), "--out", p(&img)]);
    assert!(out.status.success());
    let out = gsedit(&["metrics", "--a", p(&img), "--b", p(&a.join("reference.png"))]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("psnr") && text.contains("ssim"), "{text}");
}

#[test]
fn edit_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy");
    let out = gsedit(&["gen-toy", "--kind", "translate-cluster", "--gaussians", "30", "--size", "32", "--out", p(&toy)]);
    assert!(out.status.success());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"anchors": {"n_anchors": 8}, "transport": {"tile": 8}, "coarse": {"iterations": 4}, "fine": {"iterations": 3}}"#,
    )
    .unwrap();
    let res = dir.path().join("res");
    let out = gsedit(&[
        "--deterministic",
        "--config",
        p(&cfg),
        "edit",
        "--scene",
        p(&toy.join("scene.ply")),
        "--camera",
        p(&toy.join("camera.json")),
        "--reference",
        p(&toy.join("reference.png")),
        "--novel-camera",
        p(&toy.join("novel_camera.json")),
        "--novel-reference",
        p(&toy.join("novel_reference.png")),
        "--out",
        p(&res),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "scene.ply",
        "coarse_scene.ply",
        "anchors.json",
        "log.jsonl",
        "report.json",
        "edges_coarse.csv",
        "edges_fine.csv",
        "render.png",
        "mask_overlay.png",
    ] {
        assert!(res.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(res.join("log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0]["stage"], "coarse");
    assert_eq!(lines[6]["stage"], "fine");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(res.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["coarse_iterations"], 4);
    assert_eq!(report["novel"].as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(res.join("edges_coarse.csv")).unwrap();
    assert!(csv.starts_with("i,j,kappa,arap,rotation,distance"));
}

#[test]
fn track_processes_frames_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy");
    let out = gsedit(&["gen-toy", "--kind", "translate-cluster", "--gaussians", "20", "--size", "32", "--frames", "3", "--out", p(&toy)]);
    assert!(out.status.success());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"anchors": {"n_anchors": 6}, "transport": {"tile": 8}, "coarse": {"iterations": 2}}"#).unwrap();
    let res = dir.path().join("res");
    let out = gsedit(&[
        "--config",
        p(&cfg),
        "track",
        "--scene",
        p(&toy.join("scene.ply")),
        "--camera",
        p(&toy.join("camera.json")),
        "--frames",
        p(&toy.join("frames")),
        "--out",
        p(&res),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(res.join("report.json")).unwrap()).unwrap();
    let frames = report.as_array().unwrap();
    assert_eq!(frames.len(), 3);
    assert_eq!(frames[0]["frame"], "frame_000.png");
    assert!(res.join("anchors_002.json").exists());
}

#[test]
fn grad_check_passes() {
    let out = gsedit(&["grad-check", "--seed", "7"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.contains("PASS")).count(), 5, "{text}");
}
