use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = "width = 160\nheight = 120\nframes = 10\njitter = 2\namplitude = 5,4\nseed = 3\n";
const CONFIG: &str = "grid_rows = 8\ngrid_cols = 8\nseed = 1\n";

fn stab(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stab"))
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .expect("stab runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stab failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn synth_into(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let spec = root.join("spec.txt");
    let config = root.join("config.txt");
    std::fs::write(&spec, SPEC).unwrap();
    std::fs::write(&config, CONFIG).unwrap();
    let frames = root.join("shaky");
    ok(&stab(&[&"synth", &"--spec", &spec, &"--output", &frames]));
    (frames, config)
}

#[test]
fn synth_writes_frames_and_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, _) = synth_into(dir.path());
    for i in 0..10 {
        assert!(frames.join(format!("{i:06}.png")).is_file());
    }
    assert!(!frames.join("000010.png").exists());
    let gt = std::fs::read_to_string(frames.join("ground_truth.csv")).unwrap();
    let mut lines = gt.lines();
    assert_eq!(lines.next(), Some("frame,row,col,tx,ty,sx,sy"));
    // 10 frames of a 17 x 17 vertex grid
    assert_eq!(lines.count(), 10 * 17 * 17);
}

#[test]
fn run_then_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, config) = synth_into(dir.path());
    let out = dir.path().join("stable");
    ok(&stab(&[&"run", &"--input", &frames, &"--output", &out, &"--config", &config]));

    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("frame,row,col,tx,ty,sx,sy"));
    assert_eq!(csv.lines().count(), 1 + 10 * 9 * 9);

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let mut keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["cropping", "distance_mean", "distortion", "per_frame", "stability"]);
    assert_eq!(report["per_frame"].as_array().unwrap().len(), 10);
    assert!(report["stability"].is_number());

    let m = stab(&[&"metrics", &"--before", &frames, &"--after", &out, &"--config", &config]);
    ok(&m);
    let printed: serde_json::Value = serde_json::from_slice(&m.stdout).unwrap();
    let c = printed["cropping"].as_f64().unwrap();
    assert!(c > 0.0 && c <= 1.0);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, config) = synth_into(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&stab(&[&"run", &"--input", &frames, &"--output", &a, &"--config", &config, &"--seed", &"1"]));
    ok(&stab(&[&"run", &"--input", &frames, &"--output", &b, &"--config", &config]));
    assert_eq!(
        std::fs::read(a.join("report.json")).unwrap(),
        std::fs::read(b.join("report.json")).unwrap()
    );
}

#[test]
fn sweep_over_empty_corpus_writes_header() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    let csv = dir.path().join("sweep.csv");
    ok(&stab(&[&"sweep", &"--kind", &"iterations", &"--values", &"5,15", &"--corpus", &corpus, &"--out", &csv]));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.trim_end(), "sequence,kind,value,stability,distortion,cropping,distance_mean,ts_objective");
}

#[test]
fn sweep_rejects_unknown_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = stab(&[&"sweep", &"--kind", &"gamma", &"--values", &"1", &"--corpus", &dir.path(), &"--out", &dir.path().join("x.csv")]);
    assert!(!out.status.success());
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, _) = synth_into(dir.path());
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "grid_rows = 8\nsmoothness = 3\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = stab(&[&"run", &"--input", &frames, &"--output", &out_dir, &"--config", &bad]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("smoothness"));
    assert!(!out_dir.exists());
}

#[test]
fn corrupt_frame_is_named_and_nothing_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, config) = synth_into(dir.path());
    std::fs::write(frames.join("000004.png"), b"not a png").unwrap();
    let out_dir = dir.path().join("out");
    let out = stab(&[&"run", &"--input", &frames, &"--output", &out_dir, &"--config", &config]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("frame 4"), "stderr: {err}");
    assert!(!out_dir.join("report.json").exists());
    assert!(!out_dir.join("trajectory.csv").exists());
}

#[test]
fn shipped_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.conf");
    let cfg = meshstab::pipeline::PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg, meshstab::pipeline::PipelineConfig::default());
}
