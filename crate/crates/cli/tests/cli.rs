use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "[synth]\nframes = 5\ntemplate_vertices = 320\n\n[bake]\nresolution = 32\n";

fn foldkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foldkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = foldkit(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
    manifest: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("config.toml");
    std::fs::write(&config, SMALL).unwrap();
    let data = root.join("data");
    ok(&["synth", "--config", s(&config), "--out", s(&data), "--seed", "3"]);
    let manifest = data.join("manifest.json");
    Workspace {
        _dir: dir,
        root,
        config,
        data,
        manifest,
    }
}

fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn error_line(out: &Output) -> String {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "single-line error: {text}");
    text.trim().to_string()
}

#[test]
fn full_pipeline_writes_every_report() {
    let ws = workspace();
    let work = ws.root.join("work");
    let (c, m, w) = (s(&ws.config), s(&ws.manifest), s(&work));
    ok(&["register", "--config", c, "--manifest", m, "--out", w]);
    ok(&["fit-subspace", "--config", c, "--manifest", m, "--out", w]);
    ok(&["regress", "--config", c, "--manifest", m, "--out", w]);
    ok(&["bake", "--config", c, "--manifest", m, "--out", w]);
    ok(&["eval-temporal", "--config", c, "--out", w]);
    for name in [
        "register_report",
        "fit_subspace_report",
        "regress_report",
        "bake_report",
        "eval_temporal_report",
    ] {
        for ext in ["txt", "json"] {
            assert!(work.join(format!("{name}.{ext}")).is_file(), "{name}.{ext}");
        }
    }
    assert!(ws.data.join("synth_report.txt").is_file());
    for t in 0..5 {
        for sub in ["registered", "subspace/reconstructed", "regression/predicted"] {
            assert!(work.join(format!("{sub}/frame_{t:04}.obj")).is_file());
        }
        for sub in ["lr", "hr", "lr_tangent", "hr_tangent"] {
            assert!(work.join(format!("bake/{sub}/frame_{t:04}.png")).is_file());
            assert!(work.join(format!("bake/{sub}/frame_{t:04}.mask.png")).is_file());
        }
    }
    let pairs: serde_json::Value =
        serde_json::from_slice(&std::fs::read(work.join("bake/pairs.json")).unwrap()).unwrap();
    assert_eq!(pairs["pairs"].as_array().unwrap().len(), 5);
    assert!(pairs["pairs"][0]["previous_hr"].is_null());
    assert_eq!(pairs["pairs"][1]["previous_hr"], "hr/frame_0000.png");

    let offsets = ws.root.join("offsets.txt");
    std::fs::write(&offsets, "0.0 0.0 0.01\n".repeat(320)).unwrap();
    let out = ok(&["retarget", "--offsets", s(&offsets), "--out", w]);
    assert!(out.contains("320 vertices"));
    assert!(work.join("retarget/model.bin").is_file());
}

#[test]
fn register_is_deterministic_and_independent_of_jobs() {
    let ws = workspace();
    let (c, m) = (s(&ws.config), s(&ws.manifest));
    let runs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| ws.root.join(n)).collect();
    ok(&["register", "--config", c, "--manifest", m, "--out", s(&runs[0])]);
    ok(&["register", "--config", c, "--manifest", m, "--out", s(&runs[1])]);
    ok(&[
        "register",
        "--config",
        c,
        "--manifest",
        m,
        "--out",
        s(&runs[2]),
        "--jobs",
        "3",
    ]);
    let a = file_bytes(&runs[0].join("registered"));
    assert_eq!(a.len(), 5);
    assert_eq!(a, file_bytes(&runs[1].join("registered")));
    assert_eq!(a, file_bytes(&runs[2].join("registered")));
}

#[test]
fn eval_temporal_on_duplicated_frames_has_zero_temporal_loss() {
    let ws = workspace();
    let work = ws.root.join("work");
    let (c, m, w) = (s(&ws.config), s(&ws.manifest), s(&work));
    ok(&["register", "--config", c, "--manifest", m, "--out", w]);
    ok(&["fit-subspace", "--config", c, "--manifest", m, "--out", w]);
    ok(&["bake", "--config", c, "--manifest", m, "--out", w]);
    let dup = ws.root.join("dup");
    std::fs::create_dir_all(&dup).unwrap();
    for t in 0..4 {
        for suffix in ["png", "mask.png"] {
            std::fs::copy(
                work.join(format!("bake/hr/frame_0002.{suffix}")),
                dup.join(format!("frame_{t:04}.{suffix}")),
            )
            .unwrap();
        }
    }
    ok(&[
        "eval-temporal",
        "--generated",
        s(&dup),
        "--ground-truth",
        s(&dup),
        "--out",
        w,
    ]);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(work.join("eval_temporal_report.json")).unwrap()).unwrap();
    let frames = report["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 4);
    for f in &frames[1..] {
        assert_eq!(f["l_temp"].as_f64(), Some(0.0));
        assert_eq!(f["l_data"].as_f64(), Some(0.0));
    }
}

#[test]
fn failures_exit_with_category_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let out = foldkit(&["register", "--manifest", "m.json", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error[config]:"));

    let bad = root.join("bad.toml");
    std::fs::write(&bad, "[registration]\nrigid_weight = -1.0\n").unwrap();
    let out = foldkit(&["synth", "--config", s(&bad), "--out", s(root)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error[config]:"));

    let out = foldkit(&[
        "register",
        "--manifest",
        s(&root.join("missing.json")),
        "--out",
        s(root),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).starts_with("error[data]:"));
}

#[test]
fn singular_pose_is_a_numerical_failure() {
    let ws = workspace();
    let work = ws.root.join("work");
    let (c, m, w) = (s(&ws.config), s(&ws.manifest), s(&work));
    ok(&["register", "--config", c, "--manifest", m, "--out", w]);
    // Half shoulder, half elbow with the elbow turned half a revolution:
    // the blended transform of vertex 0 has rank 1 in frame 1.
    let weights_path = ws.data.join("skin_weights.json");
    let mut weights: serde_json::Value = serde_json::from_slice(&std::fs::read(&weights_path).unwrap()).unwrap();
    weights["vertices"][0] = serde_json::json!([[0, 0.5], [1, 0.5]]);
    std::fs::write(&weights_path, serde_json::to_vec(&weights).unwrap()).unwrap();
    let poses_path = ws.data.join("poses.json");
    let mut poses: serde_json::Value = serde_json::from_slice(&std::fs::read(&poses_path).unwrap()).unwrap();
    poses["frames"][1]["rotations"][1] = serde_json::json!([0.0, 0.0, 1.0, 0.0]);
    std::fs::write(&poses_path, serde_json::to_vec(&poses).unwrap()).unwrap();
    let out = foldkit(&["fit-subspace", "--config", c, "--manifest", m, "--out", w]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(error_line(&out).starts_with("error[numerical]:"));
}

#[test]
fn help_documents_every_flag() {
    let top = ok(&["--help"]);
    for flag in ["--config", "--jobs", "--seed", "--out"] {
        assert!(top.contains(flag), "{flag}");
    }
    for sub in [
        "synth",
        "register",
        "fit-subspace",
        "regress",
        "bake",
        "eval-temporal",
        "retarget",
    ] {
        assert!(top.contains(sub), "{sub}");
    }
    let regress = ok(&["regress", "--help"]);
    for flag in ["--fit", "--predict", "--eval", "--poses", "--manifest"] {
        assert!(regress.contains(flag), "{flag}");
    }
}
