use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = include_str!("tiny.toml");

fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    (dir, cfg)
}

fn meshstyle(cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshstyle"))
        .arg("--config")
        .arg(cfg)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn manifests(run: &Path) -> Vec<(String, Vec<u8>)> {
    ["plan", "distill", "stylize", "sky", "bake", "eval"]
        .iter()
        .map(|s| (s.to_string(), std::fs::read(run.join(s).join("manifest.json")).unwrap()))
        .collect()
}

fn error_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    lines[0].to_string()
}

#[test]
fn all_produces_artifacts_and_reproducible_manifests() {
    let (dir, cfg) = workspace();
    ok(&meshstyle(&cfg, &["all"]));
    let run = dir.path().join("run");
    for f in [
        "bake/texture.png",
        "bake/stylized.obj",
        "sky/sky.png",
        "eval/metrics.json",
        "plan/plan.json",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let sky = image::open(run.join("sky/sky.png")).unwrap();
    assert_eq!((sky.width(), sky.height()), (128, 64));
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["view_count"], 2);
    assert!(metrics["edge_operator"].as_str().is_some());

    let first = manifests(&run);
    ok(&meshstyle(&cfg, &["all"]));
    assert_eq!(manifests(&run), first);
}

#[test]
fn bake_passes_size_through() {
    let (dir, cfg) = workspace();
    for stage in ["plan-views", "distill", "stylize"] {
        ok(&meshstyle(&cfg, &[stage]));
    }
    ok(&meshstyle(&cfg, &["bake", "--width", "96", "--height", "40"]));
    let tex = image::open(dir.path().join("run/bake/texture.png")).unwrap();
    assert_eq!((tex.width(), tex.height()), (96, 40));
}

#[test]
fn artistic_mode_runs_without_distillation() {
    let (dir, cfg) = workspace();
    ok(&meshstyle(&cfg, &["plan-views"]));
    ok(&meshstyle(&cfg, &["stylize", "--mode", "artistic"]));
    let run = dir.path().join("run");
    assert!(!run.join("distill").exists());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.join("stylize/report.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "artistic");
    let manifest = String::from_utf8(std::fs::read(run.join("stylize/manifest.json")).unwrap()).unwrap();
    assert!(!manifest.contains("distill.field"));
}

#[test]
fn edit_propagate_writes_its_own_run() {
    let (dir, cfg) = workspace();
    ok(&meshstyle(&cfg, &["plan-views"]));
    ok(&meshstyle(&cfg, &["distill"]));
    let edited = dir.path().join("edited.png");
    image::RgbImage::from_fn(48, 48, |x, _| image::Rgb([(x * 5) as u8, 90, 200]))
        .save(&edited)
        .unwrap();
    ok(&meshstyle(
        &cfg,
        &["edit-propagate", "--image", edited.to_str().unwrap(), "--pivot", "1"],
    ));
    assert!(dir.path().join("run/edit/checkpoints/last.ckpt").is_file());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/edit/report.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "edit_propagation");
}

#[test]
fn config_errors_exit_with_code_two() {
    let (dir, _) = workspace();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[stylize]\nepochz = 3\n").unwrap();
    let out = meshstyle(&bad, &["plan-views"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error[config]:"));

    std::fs::write(&bad, "[sky]\nwindows = 27\n").unwrap();
    assert_eq!(meshstyle(&bad, &["sky"]).status.code(), Some(2));

    let out = meshstyle(&bad, &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    error_line(&out);
}

#[test]
fn missing_prerequisites_exit_with_code_three() {
    let (_dir, cfg) = workspace();
    let out = meshstyle(&cfg, &["bake"]);
    assert_eq!(out.status.code(), Some(3));
    let line = error_line(&out);
    assert!(
        line.starts_with("error[runtime]:") && line.contains("stylize"),
        "{line}"
    );
    let out = meshstyle(&cfg, &["stylize"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).contains("plan-views"));
}

#[test]
fn unknown_sky_backend_is_a_runtime_error() {
    let (dir, _) = workspace();
    let cfg = dir.path().join("sky.toml");
    std::fs::write(
        &cfg,
        format!("{TINY}\n[models]\ndiffusion = \"${{MESHSTYLE_TEST_BACKEND:-nope}}\"\n"),
    )
    .unwrap();
    let out = meshstyle(&cfg, &["sky"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).contains("nope"));
}
